//! The closed set of differentiable primitives.
//!
//! Every primitive has exactly one forward kernel and one vector-Jacobian
//! product here. Both the recording [`Tape`](super::Tape) and the
//! non-recording [`Eval`](super::Eval) call the same [`forward`], so a value
//! computed with or without gradient tracking is bit-identical.

use super::{GradError, Tensor};

/// Denominator guard added to each norm in [`Prim::Cosine`].
pub const COSINE_EPS: f64 = 1e-8;

thread_local! {
    static TANH_SIGN_BUG: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Test hook: while enabled, the tanh derivative computed on the current
/// thread has the wrong sign. Used to show that gradient checks catch it.
#[doc(hidden)]
pub fn inject_tanh_sign_bug(enabled: bool) {
    TANH_SIGN_BUG.with(|b| b.set(enabled));
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prim {
    /// `[n,k]·[k] -> [n]`, `[k]·[k,p] -> [p]`, `[n,k]·[k,p] -> [n,p]`.
    MatMul,
    Add,
    Sub,
    Mul,
    /// Multiply by a constant.
    Scale(f64),
    /// Softmax of a vector.
    Softmax,
    /// Log-softmax of a vector.
    LogSoftmax,
    Sigmoid,
    Tanh,
    /// Cosine similarity of a key `[d]` against every row of `[m,d]`.
    Cosine,
    /// Concatenation of vectors.
    Concat,
    /// Stack equal-length vectors as the rows of a matrix.
    Stack,
    /// One row of a matrix, as a vector.
    Row(usize),
    /// Contiguous range of a vector.
    Slice {
        start: usize,
        len: usize,
    },
    /// Sum of all entries, as a scalar.
    SumAll,
    /// Sum over rows of a matrix: `[m,d] -> [d]`.
    SumRows,
    /// Outer product `[m] x [d] -> [m,d]`.
    Outer,
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Scale(_) => "scale",
            Prim::Softmax => "softmax",
            Prim::LogSoftmax => "log_softmax",
            Prim::Sigmoid => "sigmoid",
            Prim::Tanh => "tanh",
            Prim::Cosine => "cosine",
            Prim::Concat => "concat",
            Prim::Stack => "stack",
            Prim::Row(_) => "row",
            Prim::Slice { .. } => "slice",
            Prim::SumAll => "sum",
            Prim::SumRows => "sum_rows",
            Prim::Outer => "outer",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Prim::MatMul | Prim::Add | Prim::Sub | Prim::Mul | Prim::Cosine | Prim::Outer => {
                Some(2)
            }
            Prim::Concat | Prim::Stack => None,
            _ => Some(1),
        }
    }
}

fn mismatch(op: Prim, inputs: &[&Tensor]) -> GradError {
    GradError::ShapeMismatch {
        op: op.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn is_vec(t: &Tensor) -> bool {
    t.shape().len() == 1
}

fn is_mat(t: &Tensor) -> bool {
    t.shape().len() == 2
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y = A x` for row-major `A` of shape `[n,k]`.
fn mat_vec(a: &[f64], n: usize, k: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|i| dot(&a[i * k..(i + 1) * k], x)).collect()
}

/// `y = xᵀ B` for row-major `B` of shape `[k,p]`.
fn vec_mat(x: &[f64], b: &[f64], k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for i in 0..k {
        let xi = x[i];
        let row = &b[i * p..(i + 1) * p];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += xi * v;
        }
    }
    out
}

fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for &ui in u {
        out.extend(v.iter().map(|&vj| ui * vj));
    }
    out
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + total.ln();
    x.iter().map(|&v| v - log_z).collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Evaluates one primitive.
pub fn forward(op: Prim, inputs: &[&Tensor]) -> Result<Tensor, GradError> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(GradError::Arity {
                op: op.name(),
                expected: n,
                got: inputs.len(),
            });
        }
    } else if inputs.is_empty() {
        return Err(GradError::Arity {
            op: op.name(),
            expected: 1,
            got: 0,
        });
    }
    let out = match op {
        Prim::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            match (a.shape(), b.shape()) {
                (&[n, k], &[k2]) if k == k2 => {
                    Tensor::from_parts(vec![n], mat_vec(a.data(), n, k, b.data()))
                }
                (&[k], &[k2, p]) if k == k2 => {
                    Tensor::from_parts(vec![p], vec_mat(a.data(), b.data(), k, p))
                }
                (&[n, k], &[k2, p]) if k == k2 => {
                    let mut out = Vec::with_capacity(n * p);
                    for i in 0..n {
                        out.extend(vec_mat(&a.data()[i * k..(i + 1) * k], b.data(), k, p));
                    }
                    Tensor::from_parts(vec![n, p], out)
                }
                _ => return Err(mismatch(op, inputs)),
            }
        }
        Prim::Add | Prim::Sub | Prim::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if !a.same_shape(b) {
                return Err(mismatch(op, inputs));
            }
            match op {
                Prim::Add => zip(a, b, |x, y| x + y),
                Prim::Sub => zip(a, b, |x, y| x - y),
                _ => zip(a, b, |x, y| x * y),
            }
        }
        Prim::Scale(c) => map(inputs[0], |v| c * v),
        Prim::Softmax | Prim::LogSoftmax => {
            let x = inputs[0];
            if !is_vec(x) {
                return Err(mismatch(op, inputs));
            }
            let y = if op == Prim::Softmax {
                softmax(x.data())
            } else {
                log_softmax(x.data())
            };
            Tensor::from_parts(x.shape().to_vec(), y)
        }
        Prim::Sigmoid => map(inputs[0], sigmoid),
        Prim::Tanh => map(inputs[0], f64::tanh),
        Prim::Cosine => {
            let (k, m) = (inputs[0], inputs[1]);
            if !is_vec(k) || !is_mat(m) || m.shape()[1] != k.len() {
                return Err(mismatch(op, inputs));
            }
            let kn = norm(k.data()) + COSINE_EPS;
            let sims = (0..m.rows())
                .map(|i| {
                    let row = m.row(i);
                    dot(k.data(), row) / (kn * (norm(row) + COSINE_EPS))
                })
                .collect();
            Tensor::from_parts(vec![m.rows()], sims)
        }
        Prim::Concat => {
            if !inputs.iter().all(|t| is_vec(t)) {
                return Err(mismatch(op, inputs));
            }
            let mut out = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
            for t in inputs {
                out.extend_from_slice(t.data());
            }
            Tensor::vector(out)
        }
        Prim::Stack => {
            let w = inputs[0].len();
            if !inputs.iter().all(|t| is_vec(t) && t.len() == w) {
                return Err(mismatch(op, inputs));
            }
            let mut out = Vec::with_capacity(inputs.len() * w);
            for t in inputs {
                out.extend_from_slice(t.data());
            }
            Tensor::from_parts(vec![inputs.len(), w], out)
        }
        Prim::Row(i) => {
            let m = inputs[0];
            if !is_mat(m) {
                return Err(mismatch(op, inputs));
            }
            if i >= m.rows() {
                return Err(GradError::IndexOutOfRange {
                    op: op.name(),
                    index: i,
                    len: m.rows(),
                });
            }
            Tensor::vector(m.row(i).to_vec())
        }
        Prim::Slice { start, len } => {
            let v = inputs[0];
            if !is_vec(v) || len == 0 {
                return Err(mismatch(op, inputs));
            }
            if start + len > v.len() {
                return Err(GradError::IndexOutOfRange {
                    op: op.name(),
                    index: start + len - 1,
                    len: v.len(),
                });
            }
            Tensor::vector(v.data()[start..start + len].to_vec())
        }
        Prim::SumAll => Tensor::scalar(inputs[0].sum()),
        Prim::SumRows => {
            let m = inputs[0];
            if !is_mat(m) {
                return Err(mismatch(op, inputs));
            }
            let mut out = vec![0.0; m.cols()];
            for i in 0..m.rows() {
                for (o, &v) in out.iter_mut().zip(m.row(i)) {
                    *o += v;
                }
            }
            Tensor::vector(out)
        }
        Prim::Outer => {
            let (u, v) = (inputs[0], inputs[1]);
            if !is_vec(u) || !is_vec(v) {
                return Err(mismatch(op, inputs));
            }
            Tensor::from_parts(vec![u.len(), v.len()], outer(u.data(), v.data()))
        }
    };
    if !out.is_finite() {
        return Err(GradError::NonFinite { op: op.name() });
    }
    Ok(out)
}

/// Vector-Jacobian product: given the gradient of the loss with respect to
/// `output`, returns the gradient with respect to each input.
pub fn backward(op: Prim, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
    match op {
        Prim::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            match (a.shape(), b.shape()) {
                (&[n, k], &[_]) => {
                    let da = Tensor::from_parts(vec![n, k], outer(grad.data(), b.data()));
                    let db = Tensor::from_parts(vec![k], vec_mat(grad.data(), a.data(), n, k));
                    vec![da, db]
                }
                (&[k], &[_, p]) => {
                    let da = Tensor::from_parts(vec![k], mat_vec(b.data(), k, p, grad.data()));
                    let db = Tensor::from_parts(vec![k, p], outer(a.data(), grad.data()));
                    vec![da, db]
                }
                (&[n, k], &[_, p]) => {
                    // dA = G Bᵀ, dB = Aᵀ G
                    let mut da = Vec::with_capacity(n * k);
                    for i in 0..n {
                        da.extend(mat_vec(b.data(), k, p, &grad.data()[i * p..(i + 1) * p]));
                    }
                    let mut db = vec![0.0; k * p];
                    for i in 0..n {
                        let g_row = &grad.data()[i * p..(i + 1) * p];
                        for r in 0..k {
                            let av = a.data()[i * k + r];
                            for (d, &g) in db[r * p..(r + 1) * p].iter_mut().zip(g_row) {
                                *d += av * g;
                            }
                        }
                    }
                    vec![
                        Tensor::from_parts(vec![n, k], da),
                        Tensor::from_parts(vec![k, p], db),
                    ]
                }
                _ => unreachable!("matmul shapes validated in forward"),
            }
        }
        Prim::Add => vec![grad.clone(), grad.clone()],
        Prim::Sub => vec![grad.clone(), map(grad, |g| -g)],
        Prim::Mul => vec![
            zip(grad, inputs[1], |g, b| g * b),
            zip(grad, inputs[0], |g, a| g * a),
        ],
        Prim::Scale(c) => vec![map(grad, |g| c * g)],
        Prim::Softmax => {
            let s = dot(grad.data(), output.data());
            vec![zip(grad, output, |g, y| y * (g - s))]
        }
        Prim::LogSoftmax => {
            let total = grad.sum();
            vec![zip(grad, output, |g, ly| g - ly.exp() * total)]
        }
        Prim::Sigmoid => vec![zip(grad, output, |g, y| g * y * (1.0 - y))],
        Prim::Tanh => {
            let sign = if TANH_SIGN_BUG.with(|b| b.get()) {
                -1.0
            } else {
                1.0
            };
            vec![zip(grad, output, |g, y| sign * g * (1.0 - y * y))]
        }
        Prim::Cosine => {
            let (k, m) = (inputs[0], inputs[1]);
            let d = k.len();
            let kn = norm(k.data());
            let kd = kn + COSINE_EPS;
            let mut dk = vec![0.0; d];
            let mut dm = vec![0.0; m.len()];
            for i in 0..m.rows() {
                let row = m.row(i);
                let rn = norm(row);
                let rd = rn + COSINE_EPS;
                let denom = kd * rd;
                let s = output.data()[i];
                let g = grad.data()[i];
                // s = k·r / ((|k|+ε)(|r|+ε)); the norm derivative is taken as 0 at the origin.
                let k_norm_term = if kn > 0.0 { s / (kn * kd) } else { 0.0 };
                let r_norm_term = if rn > 0.0 { s / (rn * rd) } else { 0.0 };
                for j in 0..d {
                    dk[j] += g * (row[j] / denom - k_norm_term * k.data()[j]);
                    dm[i * d + j] = g * (k.data()[j] / denom - r_norm_term * row[j]);
                }
            }
            vec![
                Tensor::from_parts(vec![d], dk),
                Tensor::from_parts(m.shape().to_vec(), dm),
            ]
        }
        Prim::Concat | Prim::Stack => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let part = grad.data()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    Tensor::from_parts(t.shape().to_vec(), part)
                })
                .collect()
        }
        Prim::Row(i) => {
            let mut d = Tensor::zeros(inputs[0].shape());
            d.row_mut(i).copy_from_slice(grad.data());
            vec![d]
        }
        Prim::Slice { start, len } => {
            let mut d = Tensor::zeros(inputs[0].shape());
            d.data_mut()[start..start + len].copy_from_slice(grad.data());
            vec![d]
        }
        Prim::SumAll => vec![Tensor::filled(inputs[0].shape(), grad.item())],
        Prim::SumRows => {
            let m = inputs[0];
            let mut d = Vec::with_capacity(m.len());
            for _ in 0..m.rows() {
                d.extend_from_slice(grad.data());
            }
            vec![Tensor::from_parts(m.shape().to_vec(), d)]
        }
        Prim::Outer => {
            let (u, v) = (inputs[0], inputs[1]);
            let (mu, dv) = (u.len(), v.len());
            let du = mat_vec(grad.data(), mu, dv, v.data());
            let dvv = vec_mat(u.data(), grad.data(), mu, dv);
            vec![
                Tensor::from_parts(vec![mu], du),
                Tensor::from_parts(vec![dv], dvv),
            ]
        }
    }
}
