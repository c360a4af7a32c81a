use super::{HyperParams, ModelError};
use crate::grad::Tensor;

/// Fixed-size interest representation of one user.
///
/// This is everything the serving side persists per user; its size does not
/// depend on how many behaviors have been folded into it.
#[derive(Clone, Debug, PartialEq)]
pub struct UserInterestState {
    /// NTM memory, `m x d`.
    pub memory: Tensor,
    /// Induction-unit memory, `m x h`.
    pub induction: Tensor,
    /// Accumulated write weights per slot, length `m`.
    pub usage: Tensor,
    /// Number of behaviors folded in.
    pub events: u64,
    /// Parameter version that produced the latest update.
    pub version: u64,
}

impl UserInterestState {
    pub fn check_shape(&self, hyper: &HyperParams) -> Result<(), ModelError> {
        let expect = |t: &Tensor, shape: &[usize], what: &'static str| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(ModelError::StateShape {
                    what,
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                })
            }
        };
        expect(&self.memory, &[hyper.slots, hyper.dim], "memory")?;
        expect(
            &self.induction,
            &[hyper.slots, hyper.miu_hidden],
            "induction",
        )?;
        expect(&self.usage, &[hyper.slots], "usage")
    }

    /// Size of the serialized numeric payload in bytes.
    pub fn payload_bytes(&self) -> usize {
        8 * (self.memory.len() + self.induction.len() + self.usage.len()) + 16
    }

    /// Population variance of the usage vector across slots.
    pub fn usage_variance(&self) -> f64 {
        variance(self.usage.data())
    }
}

pub(crate) fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}
