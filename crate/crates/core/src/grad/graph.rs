use std::borrow::Cow;

use super::prim::{self, Prim};
use super::{GradError, ParamId, ParamStore, Tensor};

/// Builder interface shared by the recording tape and plain evaluation.
///
/// Model code is written once against this trait; running it on a
/// [`Tape`](super::Tape) records a differentiable trace, running it on an
/// [`Eval`] just computes values. Both dispatch to [`prim::forward`].
pub trait Graph {
    type Var: Clone;

    fn params(&self) -> &ParamStore;
    fn constant(&mut self, value: Tensor) -> Self::Var;
    fn param(&mut self, id: ParamId) -> Self::Var;
    /// A single row of a matrix parameter (embedding lookup).
    fn param_row(&mut self, id: ParamId, row: usize) -> Result<Self::Var, GradError>;
    fn apply(&mut self, op: Prim, inputs: &[&Self::Var]) -> Result<Self::Var, GradError>;
    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::MatMul, &[a, b])
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Mul, &[a, b])
    }
    fn scale(&mut self, a: &Self::Var, c: f64) -> Result<Self::Var, GradError> {
        self.apply(Prim::Scale(c), &[a])
    }
    fn softmax(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Softmax, &[a])
    }
    fn log_softmax(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::LogSoftmax, &[a])
    }
    fn sigmoid(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Sigmoid, &[a])
    }
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Tanh, &[a])
    }
    fn cosine(&mut self, key: &Self::Var, rows: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Cosine, &[key, rows])
    }
    fn concat(&mut self, parts: &[&Self::Var]) -> Result<Self::Var, GradError> {
        self.apply(Prim::Concat, parts)
    }
    fn stack(&mut self, rows: &[&Self::Var]) -> Result<Self::Var, GradError> {
        self.apply(Prim::Stack, rows)
    }
    fn row(&mut self, m: &Self::Var, i: usize) -> Result<Self::Var, GradError> {
        self.apply(Prim::Row(i), &[m])
    }
    fn slice(&mut self, v: &Self::Var, start: usize, len: usize) -> Result<Self::Var, GradError> {
        self.apply(Prim::Slice { start, len }, &[v])
    }
    fn sum(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::SumAll, &[a])
    }
    fn sum_rows(&mut self, a: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::SumRows, &[a])
    }
    fn outer(&mut self, u: &Self::Var, v: &Self::Var) -> Result<Self::Var, GradError> {
        self.apply(Prim::Outer, &[u, v])
    }
    /// `W x + b`.
    fn affine(
        &mut self,
        w: &Self::Var,
        x: &Self::Var,
        b: &Self::Var,
    ) -> Result<Self::Var, GradError> {
        let wx = self.matmul(w, x)?;
        self.add(&wx, b)
    }
}

/// Forward-only evaluation. Parameters are borrowed, never copied.
pub struct Eval<'p> {
    params: &'p ParamStore,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Eval { params }
    }
}

impl<'p> Graph for Eval<'p> {
    type Var = Cow<'p, Tensor>;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn constant(&mut self, value: Tensor) -> Self::Var {
        Cow::Owned(value)
    }

    fn param(&mut self, id: ParamId) -> Self::Var {
        Cow::Borrowed(self.params.get(id))
    }

    fn param_row(&mut self, id: ParamId, row: usize) -> Result<Self::Var, GradError> {
        let table = self.params.get(id);
        prim::forward(Prim::Row(row), &[table]).map(Cow::Owned)
    }

    fn apply(&mut self, op: Prim, inputs: &[&Self::Var]) -> Result<Self::Var, GradError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| v.as_ref()).collect();
        prim::forward(op, &values).map(Cow::Owned)
    }

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor {
        var.as_ref()
    }
}
