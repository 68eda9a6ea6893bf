//! Criterion benchmarks for the tape kernels, the metric engine and a training step; see `benches/`.
