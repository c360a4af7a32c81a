use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, UserInterestState};
use crate::grad::Tensor;

/// Initial contents of the memory matrices for a user with no history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryInit {
    Zeros,
    /// Entries drawn once from `U(-scale, scale)` under `seed`. Every user
    /// starts from the same matrices, so cold-start state stays canonical.
    Uniform {
        scale: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Memory slots `m`, shared by the NTM memory and the induction unit.
    pub slots: usize,
    /// Embedding and slot width `d`.
    pub dim: usize,
    /// Induction-unit GRU hidden width `h`.
    pub miu_hidden: usize,
    /// Induction channels updated per event.
    pub k_top: usize,
    /// Utilization regularization coefficient.
    pub lambda: f64,
    /// Prediction head widths; the last must be 2.
    pub mlp_widths: Vec<usize>,
    /// Width of the opaque profile-feature vector (0 for none).
    pub profile_dim: usize,
    pub memory_init: MemoryInit,
    /// Re-balanced write weights plus the utilization penalty.
    pub mur: bool,
    /// Memory induction unit.
    pub miu: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            slots: 4,
            dim: 16,
            miu_hidden: 32,
            k_top: 2,
            lambda: 0.1,
            mlp_widths: vec![200, 80, 2],
            profile_dim: 0,
            memory_init: MemoryInit::Zeros,
            mur: true,
            miu: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidHyper(msg));
        if self.slots == 0 || self.dim == 0 || self.miu_hidden == 0 {
            return bad("slots, dim and miu_hidden must be positive".into());
        }
        if self.k_top == 0 || self.k_top > self.slots {
            return bad(format!(
                "k_top must be in 1..={} (got {})",
                self.slots, self.k_top
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.mlp_widths.is_empty() || self.mlp_widths.contains(&0) {
            return bad(format!(
                "mlp widths must be positive: {:?}",
                self.mlp_widths
            ));
        }
        if self.mlp_widths.last() != Some(&2) {
            return bad("the prediction head must end in width 2".into());
        }
        if let MemoryInit::Uniform { scale, .. } = self.memory_init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return bad(format!(
                    "memory init scale must be nonnegative, got {scale}"
                ));
            }
        }
        Ok(())
    }

    /// Effective regularization weight: zero when MUR is disabled.
    pub fn effective_lambda(&self) -> f64 {
        if self.mur {
            self.lambda
        } else {
            0.0
        }
    }

    /// Width of the feature vector fed to the prediction head.
    pub fn head_input_width(&self) -> usize {
        self.dim + self.miu_hidden + 2 * self.dim + self.profile_dim
    }

    /// The canonical state of a user with no behaviors.
    pub fn init_state(&self) -> UserInterestState {
        let (m, d, h) = (self.slots, self.dim, self.miu_hidden);
        let (memory, induction) = match self.memory_init {
            MemoryInit::Zeros => (Tensor::zeros(&[m, d]), Tensor::zeros(&[m, h])),
            MemoryInit::Uniform { scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n)
                        .map(|_| {
                            if scale > 0.0 {
                                rng.random_range(-scale..scale)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                };
                let mem = draw(m * d);
                let ind = draw(m * h);
                (
                    Tensor::matrix(m, d, mem).expect("shape"),
                    Tensor::matrix(m, h, ind).expect("shape"),
                )
            }
        };
        UserInterestState {
            memory,
            induction,
            usage: Tensor::zeros(&[m]),
            events: 0,
            version: 0,
        }
    }
}
