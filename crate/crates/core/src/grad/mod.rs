//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Model code builds against the [`Graph`] trait. A [`Tape`] records each
//! primitive as it is evaluated and walks the record backwards to produce a
//! [`GradientSet`]; [`Eval`] runs the same arithmetic without recording.

mod check;
mod graph;
mod params;
pub mod prim;
mod tape;
mod tensor;

pub use check::{
    check_gradients, check_gradients_where, relative_error, GradCheckReport, Objective,
};
pub use graph::{Eval, Graph};
pub use params::{GradientSet, ParamId, ParamStore};
pub use prim::Prim;
pub use tape::{evaluate, NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs a different number of values than {count}")]
    ValueCount { shape: Vec<usize>, count: usize },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// `Σ w ⊙ op(inputs)` with fixed random weights `w`.
    struct WeightedPrim {
        op: Prim,
        inputs: Vec<ParamId>,
        weights: Tensor,
    }

    impl Objective for WeightedPrim {
        type Error = GradError;
        fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var, GradError> {
            let vars: Vec<G::Var> = self.inputs.iter().map(|&id| g.param(id)).collect();
            let refs: Vec<&G::Var> = vars.iter().collect();
            let out = g.apply(self.op, &refs)?;
            let w = g.constant(self.weights.clone());
            let prod = g.mul(&out, &w)?;
            g.sum(&prod)
        }
    }

    fn check_prim(op: Prim, shapes: &[&[usize]], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let inputs: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| store.add(format!("x{i}"), random(&mut rng, s)))
            .collect();
        let out_shape = {
            let args: Vec<&Tensor> = inputs.iter().map(|&id| store.get(id)).collect();
            prim::forward(op, &args).unwrap().shape().to_vec()
        };
        let objective = WeightedPrim {
            op,
            inputs,
            weights: random(&mut rng, &out_shape),
        };
        check_gradients(&objective, &store, 1e-6)
            .unwrap()
            .max_relative_error
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        let cases: Vec<(Prim, Vec<&[usize]>)> = vec![
            (Prim::MatMul, vec![&[3, 4], &[4]]),
            (Prim::MatMul, vec![&[4], &[4, 3]]),
            (Prim::MatMul, vec![&[2, 4], &[4, 3]]),
            (Prim::Add, vec![&[5], &[5]]),
            (Prim::Sub, vec![&[2, 3], &[2, 3]]),
            (Prim::Mul, vec![&[5], &[5]]),
            (Prim::Scale(-1.7), vec![&[4]]),
            (Prim::Softmax, vec![&[6]]),
            (Prim::LogSoftmax, vec![&[3]]),
            (Prim::Sigmoid, vec![&[5]]),
            (Prim::Tanh, vec![&[5]]),
            (Prim::Cosine, vec![&[4], &[3, 4]]),
            (Prim::Concat, vec![&[2], &[3], &[1]]),
            (Prim::Stack, vec![&[3], &[3]]),
            (Prim::Row(1), vec![&[3, 2]]),
            (Prim::Slice { start: 1, len: 2 }, vec![&[4]]),
            (Prim::SumAll, vec![&[2, 3]]),
            (Prim::SumRows, vec![&[3, 4]]),
            (Prim::Outer, vec![&[3], &[2]]),
        ];
        for (op, shapes) in cases {
            for seed in 0..5 {
                let err = check_prim(op, &shapes, seed);
                assert!(
                    err < 1e-5,
                    "{} seed {seed}: relative error {err}",
                    op.name()
                );
            }
        }
    }

    #[test]
    fn forward_examples() {
        let store = ParamStore::new();
        let mut g = Eval::new(&store);
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = g.sum(&x).unwrap();
        assert_eq!(g.value(&s).item(), 6.0);

        let z = g.constant(Tensor::zeros(&[4]));
        let p = g.softmax(&z).unwrap();
        assert_eq!(g.value(&p).data(), &[0.25; 4]);

        let k = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let rows = Tensor::matrix(1, 3, k.data().to_vec()).unwrap();
        let cos = prim::forward(Prim::Cosine, &[&k, &rows]).unwrap();
        // The norm guard shifts self-similarity below 1 by about 2e-8/|k|.
        assert!((cos.item() - 1.0).abs() < 1e-7);
    }

    struct HalfSquaredNorm(ParamId);
    impl Objective for HalfSquaredNorm {
        type Error = GradError;
        fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var, GradError> {
            let x = g.param(self.0);
            let sq = g.mul(&x, &x)?;
            let s = g.sum(&sq)?;
            g.scale(&s, 0.5)
        }
    }

    #[test]
    fn backward_examples() {
        let mut store = ParamStore::new();
        let id = store.add(
            "x",
            Tensor::matrix(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap(),
        );

        let (_, tape) = evaluate(&store, |t| {
            let x = t.param(id);
            t.sum(&x)
        })
        .unwrap();
        let grads = tape.backward(tape.last().unwrap()).unwrap();
        assert_eq!(grads.get(id).data(), &[1.0; 4]);

        let (_, tape) = evaluate(&store, |t| HalfSquaredNorm(id).build(t)).unwrap();
        let grads = tape.backward(tape.last().unwrap()).unwrap();
        assert_eq!(grads.get(id), store.get(id));

        let report = check_gradients(&HalfSquaredNorm(id), &store, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let y = tape.tanh(&x).unwrap();
        assert!(matches!(
            tape.backward(y),
            Err(GradError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let store = ParamStore::new();
        let mut g = Eval::new(&store);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.matmul(&a, &b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_cross_entropy_gradients() {
        struct Xent {
            w: ParamId,
            x: Tensor,
            label: usize,
        }
        impl Objective for Xent {
            type Error = GradError;
            fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var, GradError> {
                let w = g.param(self.w);
                let x = g.constant(self.x.clone());
                let logits = g.matmul(&w, &x)?;
                let lp = g.log_softmax(&logits)?;
                let pick = g.slice(&lp, self.label, 1)?;
                g.scale(&pick, -1.0)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let w = store.add("w", random(&mut rng, &[3, 5]));
        let obj = Xent {
            w,
            x: random(&mut rng, &[5]),
            label: 2,
        };
        let report = check_gradients(&obj, &store, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let m = store.add("m", random(&mut rng, &[4, 3]));
        let k = store.add("k", random(&mut rng, &[3]));
        let (_, tape) = evaluate(&store, |t| {
            let m = t.param(m);
            let k = t.param(k);
            let c = t.cosine(&k, &m)?;
            let w = t.softmax(&c)?;
            let r = t.matmul(&w, &m)?;
            let o = t.outer(&w, &r)?;
            let s = t.sum_rows(&o)?;
            t.sum(&s)
        })
        .unwrap();
        let first = tape.replay().unwrap();
        let second = tape.replay().unwrap();
        assert_eq!(first, second);
        let recorded: Vec<Tensor> = tape.recorded_values().cloned().collect();
        assert_eq!(first, recorded);
        assert_eq!(tape.op_count(), 6);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(xs in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let y = prim::forward(Prim::Softmax, &[&Tensor::vector(xs)]).unwrap();
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
            prop_assert!((y.sum() - 1.0).abs() < 1e-12);
        }
    }
}
