use super::{Eval, GradError, Graph, ParamId, ParamStore, Tape};

/// A scalar function of a parameter set, buildable on any [`Graph`].
pub trait Objective {
    type Error: From<GradError>;

    fn build<G: Graph>(&self, graph: &mut G) -> Result<G::Var, Self::Error>;
}

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name, flat index, analytic value, finite-difference value.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<O: Objective>(objective: &O, params: &ParamStore) -> Result<f64, O::Error> {
    let mut g = Eval::new(params);
    let out = objective.build(&mut g)?;
    let v = g.value(&out);
    if !v.is_scalar() {
        return Err(GradError::NonScalarLoss {
            shape: v.shape().to_vec(),
        }
        .into());
    }
    Ok(v.item())
}

/// Compares tape gradients of `objective` with central differences over
/// every scalar entry of every parameter.
pub fn check_gradients<O: Objective>(
    objective: &O,
    params: &ParamStore,
    step: f64,
) -> Result<GradCheckReport, O::Error> {
    check_gradients_where(objective, params, step, |_, _| true)
}

/// As [`check_gradients`], restricted to entries accepted by `include`.
pub fn check_gradients_where<O: Objective>(
    objective: &O,
    params: &ParamStore,
    step: f64,
    include: impl Fn(ParamId, usize) -> bool,
) -> Result<GradCheckReport, O::Error> {
    assert!(
        step > 0.0 && step <= 1e-3,
        "finite-difference step must be in (0, 1e-3]"
    );
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = objective.build(&mut tape)?;
        tape.backward(loss)?
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            if !include(id, i) {
                continue;
            }
            let original = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = original + step;
            let plus = eval_scalar(objective, &work)?;
            work.get_mut(id).data_mut()[i] = original - step;
            let minus = eval_scalar(objective, &work)?;
            work.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).data()[i];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
