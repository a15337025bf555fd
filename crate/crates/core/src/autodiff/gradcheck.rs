//! Central finite-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Which scalars of each trainable parameter get perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    /// Every trainable scalar.
    All,
    /// At most `per_param` scalars of each parameter tensor, chosen with `seed`.
    Sampled { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Finite-difference and tape gradients at the worst scalar.
    pub worst_numeric: f64,
    pub worst_analytic: f64,
    pub checked: usize,
    pub step: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error `|a−b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares tape gradients of `loss_fn` with central differences
/// `(L(θ+h) − L(θ−h)) / 2h` for each selected trainable scalar.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    mut loss_fn: F,
    step: f64,
    tol: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step {step} outside [1e-7, 1e-4]"
        )));
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Option<Vec<f64>>> = store
        .iter()
        .map(|(_, p)| (!p.frozen).then(|| p.grad_or_zeros().into_data()))
        .collect();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = match coverage {
        Coverage::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Coverage::All => None,
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_numeric: 0.0,
        worst_analytic: 0.0,
        checked: 0,
        step,
        tol,
        passed: true,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, grad) in ids.into_iter().zip(analytic) {
        let Some(grad) = grad else { continue };
        let n = grad.len();
        let positions: Vec<usize> = match (coverage, rng.as_mut()) {
            (Coverage::Sampled { per_param, .. }, Some(rng)) if per_param < n => {
                let mut v = index::sample(rng, n, per_param).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in positions {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let err = relative_error(numeric, grad[i]);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.worst_numeric = numeric;
                report.worst_analytic = grad[i];
            }
            if err >= tol {
                log::debug!(
                    "{}[{i}]: numeric {numeric:e} analytic {:e}",
                    store.get(id).name,
                    grad[i]
                );
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    store.zero_grad();
    Ok(report)
}
