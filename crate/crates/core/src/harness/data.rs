use crate::metrics::LabelMask;
use crate::model::ModelInput;
use crate::numcore::Tensor;
use crate::synthdata::{preprocess, Dataset, MultimodalSample};

/// Preprocesses the selected records to the model resolution.
pub fn prepare_samples(dataset: &Dataset, indices: &[usize], size: usize) -> Vec<MultimodalSample> {
    let range = dataset.manifest.intensity_range;
    indices.iter().map(|&i| preprocess(&dataset.samples[i], size, range)).collect()
}

/// Stacks samples of equal shape into a model batch plus their masks.
pub fn make_batch(samples: &[&MultimodalSample]) -> (ModelInput, Vec<LabelMask>) {
    let first = samples[0];
    let b = samples.len();
    let stack = |get: fn(&MultimodalSample) -> &Tensor<f32>| {
        let shape = get(first).shape();
        let mut full = vec![b];
        full.extend_from_slice(shape);
        let data: Vec<f32> = samples.iter().flat_map(|s| get(s).data().iter().copied()).collect();
        Tensor::new(&full, data).expect("homogeneous batch")
    };
    let images = stack(|s| &s.image);
    let audio = stack(|s| &s.audio);
    let phono = stack(|s| &s.phono);
    let masks = samples.iter().map(|s| s.mask.clone()).collect();
    (
        ModelInput {
            images,
            audio: Some(audio),
            phono: Some(phono),
        },
        masks,
    )
}
