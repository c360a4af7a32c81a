use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synth::uniform_sequence;
use crate::data::Sample;
use crate::grad::{
    check_gradients, GradCheckReport, GradError, Graph, Objective, ParamStore, Tensor,
};
use crate::model::{BatchObjective, HyperParams, ItemKey, MemoryInit, MimnParams, ModelError};

/// Shape of the random problem used for a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSetup {
    pub hyper: HyperParams,
    pub batch: usize,
    pub seq_len: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub seed: u64,
    pub step: f64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        GradcheckSetup {
            hyper: HyperParams {
                memory_init: MemoryInit::Uniform {
                    scale: 0.1,
                    seed: 5,
                },
                ..HyperParams::default()
            },
            batch: 4,
            seq_len: 10,
            n_items: 12,
            n_categories: 5,
            seed: 1,
            step: 1e-4,
        }
    }
}

/// Compares tape gradients of the full training loss of a randomly
/// initialized memory network with central differences. The transfer
/// matrix is randomized too, so every parameter receives gradient.
pub fn gradcheck_mimn(setup: &GradcheckSetup) -> Result<GradCheckReport, ModelError> {
    let mut p = MimnParams::new(
        setup.hyper.clone(),
        setup.n_items,
        setup.n_categories,
        setup.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed.wrapping_add(1));
    let t = p.transfer_id();
    for v in p.store.get_mut(t).data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let batch: Vec<Sample> = (0..setup.batch)
        .map(|i| Sample {
            user: format!("g{i}"),
            history: uniform_sequence(
                setup.seq_len,
                setup.n_items,
                setup.n_categories,
                setup.seed.wrapping_mul(31).wrapping_add(i as u64),
            ),
            target: ItemKey::new(
                rng.random_range(1..setup.n_items as u32),
                rng.random_range(1..setup.n_categories as u32),
            ),
            label: (i % 2) as u8,
        })
        .collect();
    let obj = BatchObjective {
        model: &p,
        batch: &batch,
    };
    check_gradients(&obj, &p.store, setup.step)
}

struct Quadratic {
    target: Tensor,
}

impl Objective for Quadratic {
    type Error = GradError;

    fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var, GradError> {
        let id = g.params().id("x").expect("registered");
        let x = g.param(id);
        let t = g.constant(self.target.clone());
        let d = g.sub(&x, &t)?;
        let sq = g.mul(&d, &d)?;
        let s = g.sum(&sq)?;
        g.scale(&s, 0.5)
    }
}

/// `½‖x − t‖²` on a random vector.
pub fn gradcheck_quadratic(n: usize, seed: u64, step: f64) -> Result<GradCheckReport, GradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n| Tensor::vector((0..n).map(|_| rng.random_range(-2.0..2.0)).collect());
    let mut store = ParamStore::new();
    store.add("x", draw(n));
    let obj = Quadratic { target: draw(n) };
    check_gradients(&obj, &store, step)
}
