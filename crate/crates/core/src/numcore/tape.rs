//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one node holding its output value and the handles
//! of its operands, so the node list is topologically ordered by
//! construction. [`Tape::backward`] walks it in reverse once.
//!
//! Leaf gradients accumulate across `backward` calls until
//! [`Tape::zero_grad`] is called; intermediate gradients are scratch buffers
//! owned by a single traversal.

use super::tensor::{axis_split, Element, Tensor};
use super::NumError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Gelu { x: Var, tanh: Vec<T> },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Embedding { table: Var, indices: Vec<usize> },
    Bilinear(Var),
    Nearest(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Matmul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, or zeros when no backward pass reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        self.grad(v)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::ZERO; self.nodes[v.0].value.numel()])
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ----- elementwise binary (numpy broadcasting) -----

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Broadcast), NumError> {
        let plan = Broadcast::new(name, self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::ZERO; plan.numel()];
        plan.walk(|i, ia, ib| out[i] = f(av[ia], bv[ib]));
        Ok((Tensor::new(&plan.out_shape, out)?, plan))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, _) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, _) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, _) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, &[a, b], Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, _) = self.binary("div", a, b, |x, y| x / y)?;
        self.push("div", t, &[a, b], Op::Div(a, b))
    }

    // ----- elementwise unary -----

    fn unary(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        Tensor::new(v.shape(), data).expect("shape preserved")
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, NumError> {
        let (s, c) = (T::from_f64(scale), T::from_f64(shift));
        let t = self.unary(x, |e| s * e + c);
        self.push("affine", t, &[x], Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NumError> {
        self.affine(x, s, 0.0)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumError> {
        let (c, a, half) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5));
        let v = self.value(x);
        let tanh: Vec<T> = v.data().iter().map(|&e| (c * (e + a * e * e * e)).tanh()).collect();
        let data = v.data().iter().zip(&tanh).map(|(&e, &t)| half * e * (T::ONE + t)).collect();
        let t = Tensor::new(v.shape(), data)?;
        self.push("gelu", t, &[x], Op::Gelu { x, tanh })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.unary(x, |e| if e > T::ZERO { e } else { T::ZERO });
        self.push("relu", t, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.unary(x, |e| T::ONE / (T::ONE + (-e).exp()));
        self.push("sigmoid", t, &[x], Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumError> {
        let t = self.unary(x, |e| e.exp());
        self.push("exp", t, &[x], Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, NumError> {
        if self.value(x).data().iter().any(|&e| !(e > T::ZERO)) {
            return Err(NumError::LogDomain);
        }
        let t = self.unary(x, |e| e.ln());
        self.push("log", t, &[x], Op::Log(x))
    }

    /// `x^p` for strictly positive `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var, NumError> {
        if self.value(x).data().iter().any(|&e| !(e > T::ZERO)) {
            return Err(NumError::PowDomain);
        }
        let pt = T::from_f64(p);
        let t = self.unary(x, |e| e.powf(pt));
        self.push("powf", t, &[x], Op::Powf(x, p))
    }

    // ----- reductions -----

    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        let s = self.value(x).data().iter().fold(T::ZERO, |acc, &e| acc + e);
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumError> {
        let v = self.value(x);
        let s = v.data().iter().fold(T::ZERO, |acc, &e| acc + e) / T::from_f64(v.numel() as f64);
        self.push("mean", Tensor::scalar(s), &[x], Op::Mean(x))
    }

    /// Sums out one axis. A rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, &e) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += e;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let t = Tensor::new(&out_shape, out)?;
        self.push("sum_axis", t, &[x], Op::SumAxis(x, axis))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, NumError> {
        check_axis(self.shape(x), axis)?;
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n)
    }

    // ----- structural -----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, NumError> {
        let first = self.shape(*xs.first().ok_or(NumError::EmptyConcat)?).to_vec();
        check_axis(&first, axis)?;
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NumError::ShapeMismatch {
                    op: "concat",
                    a: first.clone(),
                    b: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        self.push("concat", t, xs, Op::Concat(xs.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(NumError::IndexOutOfRange {
                index: start + len,
                bound: shape[axis],
            });
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, out)?;
        self.push("slice", t, &[x], Op::Slice { x, axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", t, &[x], Op::Reshape(x))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(NumError::BadPermutation(perm.to_vec()));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = Tensor::<T>::strides(&shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        walk_strided(&out_shape, &src_strides, |j| out.push(src[j]));
        let t = Tensor::new(&out_shape, out)?;
        self.push("permute", t, &[x], Op::Permute(x, perm.to_vec()))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NumError> {
        if self.shape(x).len() != 2 {
            return Err(NumError::RankMismatch {
                op: "transpose",
                expected: 2,
                got: self.shape(x).len(),
            });
        }
        self.permute(x, &[1, 0])
    }

    /// Gathers rows of a `[vocab × d]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(NumError::RankMismatch {
                op: "embedding",
                expected: 2,
                got: shape.len(),
            });
        }
        if indices.is_empty() {
            return Err(NumError::EmptyConcat);
        }
        let (vocab, d) = (shape[0], shape[1]);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= vocab {
                return Err(NumError::IndexOutOfRange { index: i, bound: vocab });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(&[indices.len(), d], out)?;
        self.push(
            "embedding",
            t,
            &[table],
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Resizes the two trailing axes with half-pixel-centred bilinear
    /// interpolation.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, NumError> {
        let (lead, h, w) = spatial_dims(self.shape(x))?;
        let (rows, cols) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; lead * out_h * out_w];
        for l in 0..lead {
            let plane = &src[l * h * w..(l + 1) * h * w];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let (fy, fx) = (T::from_f64(fy), T::from_f64(fx));
                    let (gy, gx) = (T::ONE - fy, T::ONE - fx);
                    out[(l * out_h + oy) * out_w + ox] = gy * (gx * plane[y0 * w + x0] + fx * plane[y0 * w + x1])
                        + fy * (gx * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        let t = Tensor::new(&shape, out)?;
        self.push("bilinear_resize", t, &[x], Op::Bilinear(x))
    }

    /// Resizes the two trailing axes by nearest-neighbour sampling.
    pub fn nearest_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, NumError> {
        let (lead, h, w) = spatial_dims(self.shape(x))?;
        let (rows, cols) = (nearest_taps(h, out_h), nearest_taps(w, out_w));
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(lead * out_h * out_w);
        for l in 0..lead {
            for &sy in &rows {
                for &sx in &cols {
                    out.push(src[(l * h + sy) * w + sx]);
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        let t = Tensor::new(&shape, out)?;
        self.push("nearest_resize", t, &[x], Op::Nearest(x))
    }

    // ----- normalisation -----

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        let mut out = self.value(x).data().to_vec();
        for_each_lane(&shape, axis, |idx| {
            let m = idx.clone().map(|i| out[i]).fold(out[idx.start()], T::max);
            let mut z = T::ZERO;
            for i in idx.clone() {
                out[i] = (out[i] - m).exp();
                z += out[i];
            }
            for i in idx {
                out[i] = out[i] / z;
            }
        });
        let t = Tensor::new(&shape, out)?;
        self.push("softmax", t, &[x], Op::Softmax(x, axis))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        let mut out = self.value(x).data().to_vec();
        for_each_lane(&shape, axis, |idx| {
            let m = idx.clone().map(|i| out[i]).fold(out[idx.start()], T::max);
            let z = idx.clone().fold(T::ZERO, |acc, i| acc + (out[i] - m).exp());
            let lse = m + z.ln();
            for i in idx {
                out[i] = out[i] - lse;
            }
        });
        let t = Tensor::new(&shape, out)?;
        self.push("log_softmax", t, &[x], Op::LogSoftmax(x, axis))
    }

    /// Normalises each row over the last axis, then applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or(NumError::EmptyExtent(shape.clone()))?;
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(NumError::ShapeMismatch {
                    op: "layernorm",
                    a: shape.clone(),
                    b: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = src.len() / n;
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(eps);
        let mut xhat = vec![T::ZERO; src.len()];
        let mut rstd = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().fold(T::ZERO, |a, &e| a + e) / nf;
            let var = row.iter().fold(T::ZERO, |a, &e| a + (e - mean) * (e - mean)) / nf;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let xh = (row[j] - mean) * rs;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push(
            "layernorm",
            t,
            &[x, gain, bias],
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    // ----- products -----

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::ShapeMismatch { op: "matmul", a: sa, b: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::ZERO; m * n];
        T::gemm(
            m,
            k,
            n,
            T::ONE,
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::ZERO,
            &mut out,
            n as isize,
            1,
        );
        let t = Tensor::new(&[m, n], out)?;
        self.push("matmul", t, &[a, b], Op::Matmul(a, b))
    }

    /// Batched product `[g×m×k] · [g×k×n]`, or `[g×m×k] · [g×n×k]ᵀ` when
    /// `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == if trans_b { sb[2] } else { sb[1] };
        if !ok {
            return Err(NumError::ShapeMismatch { op: "bmm", a: sa, b: sb });
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![T::ZERO; g * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..g {
            T::gemm(
                m,
                k,
                n,
                T::ONE,
                &av[i * m * k..],
                k as isize,
                1,
                &bv[i * k * n..],
                rsb,
                csb,
                T::ZERO,
                &mut out[i * m * n..],
                n as isize,
                1,
            );
        }
        let t = Tensor::new(&[g, m, n], out)?;
        self.push("bmm", t, &[a, b], Op::Bmm { a, b, trans_b })
    }

    // ----- backward -----

    /// Back-propagates from a single-element `loss`, accumulating into the
    /// gradients of every reachable leaf with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        if self.value(loss).numel() != 1 {
            return Err(NumError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::ZERO; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::ONE } else { T::ONE };
                let plan = Broadcast::new("add", self.shape(a), self.shape(b)).expect("checked in forward");
                acc(a, &mut |ga| plan.walk(|i, ia, _| ga[ia] += g[i]));
                acc(b, &mut |gb| plan.walk(|i, _, ib| gb[ib] += sign * g[i]));
            }
            &Op::Mul(a, b) => {
                let plan = Broadcast::new("mul", self.shape(a), self.shape(b)).expect("checked in forward");
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| plan.walk(|i, ia, ib| ga[ia] += g[i] * bv[ib]));
                acc(b, &mut |gb| plan.walk(|i, ia, ib| gb[ib] += g[i] * av[ia]));
            }
            &Op::Div(a, b) => {
                let plan = Broadcast::new("div", self.shape(a), self.shape(b)).expect("checked in forward");
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| plan.walk(|i, ia, ib| ga[ia] += g[i] / bv[ib]));
                acc(b, &mut |gb| plan.walk(|i, ia, ib| gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib])));
            }
            &Op::Affine(x, s) => {
                let s = T::from_f64(s);
                acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, &e)| *d += s * e));
            }
            Op::Gelu { x, tanh } => {
                let (c, a3, half) = (T::from_f64(GELU_C), T::from_f64(3.0 * GELU_A), T::from_f64(0.5));
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        let (e, t) = (xv[i], tanh[i]);
                        let d = half * (T::ONE + t) + half * e * (T::ONE - t * t) * c * (T::ONE + a3 * e * e);
                        gx[i] += g[i] * d;
                    }
                });
            }
            &Op::Relu(x) => {
                let xv = val(x);
                acc(x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > T::ZERO {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            &Op::Sigmoid(x) => acc(x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * y[i] * (T::ONE - y[i]);
                }
            }),
            &Op::Exp(x) => acc(x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * y[i];
                }
            }),
            &Op::Log(x) => {
                let xv = val(x);
                acc(x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] / xv[i];
                    }
                });
            }
            &Op::Powf(x, p) => {
                let xv = val(x);
                let p = T::from_f64(p);
                acc(x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * p * y[i] / xv[i];
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |gx| gx.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean(x) => {
                let s = g[0] / T::from_f64(val(x).len() as f64);
                acc(x, &mut |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            &Op::SumAxis(x, axis) => {
                let (outer, n, inner) = axis_split(self.shape(x), axis);
                acc(x, &mut |gx| {
                    for o in 0..outer {
                        for k in 0..n {
                            let dst = &mut gx[(o * n + k) * inner..(o * n + k + 1) * inner];
                            dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(d, &e)| *d += e);
                        }
                    }
                });
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    acc(x, &mut |gx| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                            gx[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src).for_each(|(d, &e)| *d += e);
                        }
                    });
                    offset += n;
                }
            }
            &Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(x), axis);
                let len = node.value.shape()[axis];
                acc(x, &mut |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]).for_each(|(d, &e)| *d += e);
                    }
                });
            }
            &Op::Reshape(x) => acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(d, &e)| *d += e)),
            Op::Permute(x, perm) => {
                let in_strides = Tensor::<T>::strides(self.shape(*x));
                let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let out_shape = node.value.shape();
                acc(*x, &mut |gx| {
                    let mut i = 0;
                    walk_strided(out_shape, &src_strides, |j| {
                        gx[j] += g[i];
                        i += 1;
                    });
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, &e)| *a += e);
                    }
                });
            }
            &Op::Bilinear(x) => {
                let (lead, h, w) = spatial_dims(self.shape(x)).expect("checked in forward");
                let os = node.value.shape();
                let (out_h, out_w) = (os[os.len() - 2], os[os.len() - 1]);
                let (rows, cols) = (bilinear_taps(h, out_h), bilinear_taps(w, out_w));
                acc(x, &mut |gx| {
                    for l in 0..lead {
                        let plane = &mut gx[l * h * w..(l + 1) * h * w];
                        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                                let e = g[(l * out_h + oy) * out_w + ox];
                                let (fy, fx) = (T::from_f64(fy), T::from_f64(fx));
                                let (gy, gxw) = (T::ONE - fy, T::ONE - fx);
                                plane[y0 * w + x0] += e * gy * gxw;
                                plane[y0 * w + x1] += e * gy * fx;
                                plane[y1 * w + x0] += e * fy * gxw;
                                plane[y1 * w + x1] += e * fy * fx;
                            }
                        }
                    }
                });
            }
            &Op::Nearest(x) => {
                let (lead, h, w) = spatial_dims(self.shape(x)).expect("checked in forward");
                let os = node.value.shape();
                let (out_h, out_w) = (os[os.len() - 2], os[os.len() - 1]);
                let (rows, cols) = (nearest_taps(h, out_h), nearest_taps(w, out_w));
                acc(x, &mut |gx| {
                    let mut i = 0;
                    for l in 0..lead {
                        for &sy in &rows {
                            for &sx in &cols {
                                gx[(l * h + sy) * w + sx] += g[i];
                                i += 1;
                            }
                        }
                    }
                });
            }
            &Op::Softmax(x, axis) => {
                let shape = node.value.shape();
                acc(x, &mut |gx| {
                    for_each_lane(shape, axis, |idx| {
                        let dot = idx.clone().fold(T::ZERO, |a, i| a + g[i] * y[i]);
                        for i in idx {
                            gx[i] += y[i] * (g[i] - dot);
                        }
                    });
                });
            }
            &Op::LogSoftmax(x, axis) => {
                let shape = node.value.shape();
                acc(x, &mut |gx| {
                    for_each_lane(shape, axis, |idx| {
                        let gs = idx.clone().fold(T::ZERO, |a, i| a + g[i]);
                        for i in idx {
                            gx[i] += g[i] - y[i].exp() * gs;
                        }
                    });
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.shape(*gain)[0];
                let rows = rstd.len();
                let gv = val(*gain);
                if needs(*x) {
                    let nf = T::from_f64(n as f64);
                    acc(*x, &mut |gx| {
                        for r in 0..rows {
                            let (mut m1, mut m2) = (T::ZERO, T::ZERO);
                            for j in 0..n {
                                let gh = g[r * n + j] * gv[j];
                                m1 += gh;
                                m2 += gh * xhat[r * n + j];
                            }
                            m1 = m1 / nf;
                            m2 = m2 / nf;
                            for j in 0..n {
                                let gh = g[r * n + j] * gv[j];
                                gx[r * n + j] += rstd[r] * (gh - m1 - xhat[r * n + j] * m2);
                            }
                        }
                    });
                }
                acc(*gain, &mut |gg| {
                    for r in 0..rows {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for r in 0..rows {
                        for j in 0..n {
                            gb[j] += g[r * n + j];
                        }
                    }
                });
            }
            &Op::Matmul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let (av, bv) = (val(a), val(b));
                // ga = g · bᵀ
                acc(a, &mut |ga| {
                    T::gemm(m, n, k, T::ONE, g, n as isize, 1, bv, 1, n as isize, T::ONE, ga, k as isize, 1)
                });
                // gb = aᵀ · g
                acc(b, &mut |gb| {
                    T::gemm(k, m, n, T::ONE, av, 1, k as isize, g, n as isize, 1, T::ONE, gb, n as isize, 1)
                });
            }
            &Op::Bmm { a, b, trans_b } => {
                let (groups, m, k) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let n = node.value.shape()[2];
                let (av, bv) = (val(a), val(b));
                let (mk, kn, mn) = (m * k, k * n, m * n);
                acc(a, &mut |ga| {
                    // ga = g · bᵀ, where b is [k×n] (or stored [n×k] when transposed)
                    let (rsb, csb) = if trans_b { (k as isize, 1) } else { (1, n as isize) };
                    for i in 0..groups {
                        T::gemm(
                            m,
                            n,
                            k,
                            T::ONE,
                            &g[i * mn..],
                            n as isize,
                            1,
                            &bv[i * kn..],
                            rsb,
                            csb,
                            T::ONE,
                            &mut ga[i * mk..],
                            k as isize,
                            1,
                        );
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..groups {
                        if trans_b {
                            // gb [n×k] = gᵀ · a
                            T::gemm(
                                n,
                                m,
                                k,
                                T::ONE,
                                &g[i * mn..],
                                1,
                                n as isize,
                                &av[i * mk..],
                                k as isize,
                                1,
                                T::ONE,
                                &mut gb[i * kn..],
                                k as isize,
                                1,
                            );
                        } else {
                            // gb [k×n] = aᵀ · g
                            T::gemm(
                                k,
                                m,
                                n,
                                T::ONE,
                                &av[i * mk..],
                                1,
                                k as isize,
                                &g[i * mn..],
                                n as isize,
                                1,
                                T::ONE,
                                &mut gb[i * kn..],
                                n as isize,
                                1,
                            );
                        }
                    }
                });
            }
        }
    }
}

fn check_axis(shape: &[usize], axis: usize) -> Result<(), NumError> {
    if axis >= shape.len() {
        return Err(NumError::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize), NumError> {
    if shape.len() < 2 {
        return Err(NumError::RankMismatch {
            op: "resize",
            expected: 2,
            got: shape.len(),
        });
    }
    let r = shape.len();
    Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
}

/// Source taps `(lo, hi, frac)` for each output coordinate.
fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn nearest_taps(n_in: usize, n_out: usize) -> Vec<usize> {
    (0..n_out)
        .map(|o| (((o as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1))
        .collect()
}

/// Visits every lane along `axis` as a strided index range.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(Lane)) {
    let (outer, n, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            f(Lane {
                next: o * n * inner + i,
                step: inner,
                left: n,
            });
        }
    }
}

#[derive(Clone)]
struct Lane {
    next: usize,
    step: usize,
    left: usize,
}

impl Lane {
    fn start(&self) -> usize {
        self.next
    }
}

impl Iterator for Lane {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.left == 0 {
            return None;
        }
        let i = self.next;
        self.next += self.step;
        self.left -= 1;
        Some(i)
    }
}

/// Visits `shape` in row-major order, yielding the offset under `strides`.
fn walk_strided(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let rank = shape.len();
    if rank == 0 {
        f(0);
        return;
    }
    let total: usize = shape.iter().product();
    let last = rank - 1;
    let (n_last, s_last) = (shape[last], strides[last]);
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    let mut done = 0;
    while done < total {
        for k in 0..n_last {
            f(base + k * s_last);
        }
        done += n_last;
        // advance the odometer over the leading axes
        let mut ax = last;
        while ax > 0 {
            ax -= 1;
            counter[ax] += 1;
            base += strides[ax];
            if counter[ax] < shape[ax] {
                break;
            }
            base -= strides[ax] * shape[ax];
            counter[ax] = 0;
        }
    }
}

/// True when `b`, stripped of leading unit axes, equals the trailing axes of
/// `out`.
fn is_suffix(b: &[usize], out: &[usize]) -> bool {
    let core: Vec<usize> = b.iter().copied().skip_while(|&d| d == 1).collect();
    out.ends_with(&core)
}

/// Index mapping for numpy-style broadcasting of two operands.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    kind: BroadcastKind,
}

enum BroadcastKind {
    Same,
    /// `b` repeats with period `n` (it matches the trailing axes of `a`).
    SuffixB(usize),
    General,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self, NumError> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(NumError::ShapeMismatch {
                    op,
                    a: a.to_vec(),
                    b: b.to_vec(),
                });
            }
            out_shape.push(x.max(y));
        }
        let bstrides = |p: &[usize]| {
            let s = Tensor::<f32>::strides(p);
            p.iter()
                .zip(&out_shape)
                .zip(s)
                .map(|((&d, &o), st)| if d == o { st } else { 0 })
                .collect::<Vec<_>>()
        };
        let (a_strides, b_strides) = (bstrides(&pa), bstrides(&pb));
        let nb: usize = b.iter().product();
        let kind = if pa == pb {
            BroadcastKind::Same
        } else if pa == out_shape && is_suffix(&pb, &out_shape) {
            BroadcastKind::SuffixB(nb)
        } else {
            BroadcastKind::General
        };
        Ok(Self {
            out_shape,
            a_strides,
            b_strides,
            kind,
        })
    }

    fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn walk(&self, mut f: impl FnMut(usize, usize, usize)) {
        match self.kind {
            BroadcastKind::Same => (0..self.numel()).for_each(|i| f(i, i, i)),
            BroadcastKind::SuffixB(nb) => {
                for start in (0..self.numel()).step_by(nb.max(1)) {
                    (0..nb).for_each(|j| f(start + j, start + j, j));
                }
            }
            BroadcastKind::General => {
                let mut ia = Vec::with_capacity(self.numel());
                walk_strided(&self.out_shape, &self.a_strides, |j| ia.push(j));
                let mut i = 0;
                walk_strided(&self.out_shape, &self.b_strides, |jb| {
                    f(i, ia[i], jb);
                    i += 1;
                });
            }
        }
    }
}
