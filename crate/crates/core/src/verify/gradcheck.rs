//! Central finite-difference gradient checking in 64-bit precision.

use crate::numcore::{NumError, Tape, Tensor, Var};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Largest discrepancy found by [`check_gradients`].
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
        self.max_abs_err = self.max_abs_err.max((analytic - numeric).abs());
        self.checked += 1;
    }
}

/// Relative error with a floor on the denominator so that gradients near zero
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares the tape gradient of `f` against central differences for every
/// element of every input.
///
/// `f` receives a fresh tape and one leaf per input and must return a
/// single-element loss.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheck, NumError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumError>,
{
    let selection: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_gradients_at(f, inputs, &selection, h)
}

/// Like [`check_gradients`] but only perturbs the listed `(input, element)`
/// coordinates.
pub fn check_gradients_at<F>(f: F, inputs: &[Tensor<f64>], coords: &[(usize, usize)], h: f64) -> Result<GradCheck, NumError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let x0 = work[i].data()[j];
        work[i].data_mut()[j] = x0 + h;
        let up = eval(&work)?;
        work[i].data_mut()[j] = x0 - h;
        let down = eval(&work)?;
        work[i].data_mut()[j] = x0;
        let numeric = (up - down) / (2.0 * h);
        report.record(analytic[i][j], numeric);
    }
    Ok(report)
}
