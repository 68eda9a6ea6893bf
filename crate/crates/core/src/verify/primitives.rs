//! Finite-difference checks for every tape primitive.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, GradCheck, FD_STEP};
use crate::numcore::{NumError, Tape, Tensor, Var};

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumError>;

/// Reduces `v` to a scalar through fixed pseudo-random weights so that every
/// output element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var) -> Result<Var, NumError> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0) - 0.4).collect();
    let w = tape.constant(Tensor::new(&shape, w)?);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = randn(shape, seed);
    let data = t.data().iter().map(|v| 0.5 + v.abs()).collect();
    Tensor::new(shape, data).expect("same shape")
}

/// Values bounded away from zero so that relu is checked off its kink.
fn off_kink(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = randn(shape, seed);
    let data = t.data().iter().map(|v| v.signum() * (0.2 + v.abs())).collect();
    Tensor::new(shape, data).expect("same shape")
}

/// One named primitive check: builder plus inputs.
pub struct PrimitiveCase {
    pub name: &'static str,
    build: Build,
    inputs: Vec<Tensor<f64>>,
}

impl PrimitiveCase {
    pub fn run(&self) -> Result<GradCheck, NumError> {
        check_gradients(self.build, &self.inputs, FD_STEP)
    }
}

/// The catalogue of primitive gradient checks.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    let case = |name, build: Build, inputs| PrimitiveCase { name, build, inputs };
    vec![
        case(
            "matmul",
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[5, 7], 1), randn(&[7, 3], 2)],
        ),
        case(
            "bmm",
            |t, v| {
                let y = t.bmm(v[0], v[1], false)?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 4, 5], 3), randn(&[3, 5, 2], 4)],
        ),
        case(
            "bmm_trans_b",
            |t, v| {
                let y = t.bmm(v[0], v[1], true)?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 4, 5], 5), randn(&[2, 3, 5], 6)],
        ),
        case(
            "add_broadcast",
            |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 3, 4], 7), randn(&[4], 8)],
        ),
        case(
            "add_general_broadcast",
            |t, v| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 3, 4], 9), randn(&[2, 1, 4], 10)],
        ),
        case(
            "sub",
            |t, v| {
                let y = t.sub(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 4], 11), randn(&[3, 1], 12)],
        ),
        case(
            "mul",
            |t, v| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 4], 13), randn(&[3, 4], 14)],
        ),
        case(
            "div",
            |t, v| {
                let y = t.div(v[0], v[1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 4], 15), positive(&[4], 16)],
        ),
        case(
            "affine",
            |t, v| {
                let y = t.affine(v[0], -1.7, 0.3)?;
                weighted_sum(t, y)
            },
            vec![randn(&[6], 17)],
        ),
        case(
            "gelu",
            |t, v| {
                let y = t.gelu(v[0])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 5], 18)],
        ),
        case(
            "relu",
            |t, v| {
                let y = t.relu(v[0])?;
                weighted_sum(t, y)
            },
            vec![off_kink(&[3, 5], 19)],
        ),
        case(
            "sigmoid",
            |t, v| {
                let y = t.sigmoid(v[0])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 5], 20)],
        ),
        case(
            "exp",
            |t, v| {
                let y = t.exp(v[0])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 5], 21)],
        ),
        case(
            "log",
            |t, v| {
                let y = t.log(v[0])?;
                weighted_sum(t, y)
            },
            vec![positive(&[3, 5], 22)],
        ),
        case(
            "powf",
            |t, v| {
                let y = t.powf(v[0], -0.5)?;
                weighted_sum(t, y)
            },
            vec![positive(&[3, 5], 23)],
        ),
        case(
            "sum",
            |t, v| {
                let y = t.exp(v[0])?;
                t.sum(y)
            },
            vec![randn(&[2, 3], 24)],
        ),
        case(
            "mean",
            |t, v| {
                let y = t.exp(v[0])?;
                t.mean(y)
            },
            vec![randn(&[2, 3], 25)],
        ),
        case(
            "sum_axis",
            |t, v| {
                let y = t.sum_axis(v[0], 1)?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 3, 4], 26)],
        ),
        case(
            "concat",
            |t, v| {
                let y = t.concat(&[v[0], v[1]], 1)?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 3, 2], 27), randn(&[2, 1, 2], 28)],
        ),
        case(
            "slice",
            |t, v| {
                let y = t.slice(v[0], 1, 1, 2)?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 4, 3], 29)],
        ),
        case(
            "reshape",
            |t, v| {
                let y = t.reshape(v[0], &[3, 4])?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 6], 30)],
        ),
        case(
            "permute",
            |t, v| {
                let y = t.permute(v[0], &[2, 0, 1])?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 3, 4], 31)],
        ),
        case(
            "transpose",
            |t, v| {
                let y = t.transpose(v[0])?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 5], 32)],
        ),
        case(
            "embedding",
            |t, v| {
                let y = t.embedding(v[0], &[2, 0, 2, 3])?;
                weighted_sum(t, y)
            },
            vec![randn(&[4, 3], 33)],
        ),
        case(
            "bilinear_resize",
            |t, v| {
                let y = t.bilinear_resize(v[0], 9, 4)?;
                weighted_sum(t, y)
            },
            vec![randn(&[1, 6, 6], 34)],
        ),
        case(
            "nearest_resize",
            |t, v| {
                let y = t.nearest_resize(v[0], 5, 3)?;
                weighted_sum(t, y)
            },
            vec![randn(&[2, 4, 4], 35)],
        ),
        case(
            "softmax_last",
            |t, v| {
                let y = t.softmax(v[0], 1)?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 5], 36)],
        ),
        case(
            "softmax_leading",
            |t, v| {
                let y = t.softmax(v[0], 0)?;
                weighted_sum(t, y)
            },
            vec![randn(&[4, 2, 3], 37)],
        ),
        case(
            "log_softmax",
            |t, v| {
                let y = t.log_softmax(v[0], 0)?;
                weighted_sum(t, y)
            },
            vec![randn(&[4, 2, 3], 38)],
        ),
        case(
            "layernorm",
            |t, v| {
                let y = t.layernorm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y)
            },
            vec![randn(&[3, 6], 39), randn(&[6], 40), randn(&[6], 41)],
        ),
    ]
}
