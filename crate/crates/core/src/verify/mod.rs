//! Oracle suites: finite-difference gradient checks, brute-force metric
//! comparisons and analytic loss anchors. Shared by the test suites and the
//! `verify` command.

mod gradcheck;
mod losses;
mod primitives;
mod surface_oracle;

pub use gradcheck::{check_gradients, check_gradients_at, rel_err, GradCheck, FD_STEP};
pub use losses::{composite_gradient_check, loss_anchors, toy_batch, toy_config, Anchor};
pub use primitives::{primitive_cases, weighted_sum, PrimitiveCase};
pub use surface_oracle::{brute_force_assd, brute_force_hd95, metric_oracle, random_label_mask, MetricOracleReport};
