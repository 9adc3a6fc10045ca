//! Central finite-difference check of tape gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator. Central differences at
    /// step 1e-5 on an O(1) loss carry roundoff near 1e-11, so gradients
    /// below this floor are judged on absolute error `tolerance * floor`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Tape and finite-difference gradients at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares the tape gradient of the scalar `f` against
/// `(f(θ + h) - f(θ - h)) / 2h` for every scalar in `store`.
pub fn grad_check<F>(store: &ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        Ok(tape.value(out).as_slice()[0])
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        worst_pair: (0.0, 0.0),
        checked: 0,
        tolerance: opts.tolerance,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for j in 0..store.value(id).len() {
            let original = store.value(id).as_slice()[j];
            probe.value_mut(id).as_mut_slice()[j] = original + opts.step;
            let plus = eval(&probe)?;
            probe.value_mut(id).as_mut_slice()[j] = original - opts.step;
            let minus = eval(&probe)?;
            probe.value_mut(id).as_mut_slice()[j] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let exact = analytic.get(id).as_slice()[j];
            let abs = (numeric - exact).abs();
            let rel = abs / numeric.abs().max(exact.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.param(id).name.clone(), j));
                report.worst_pair = (exact, numeric);
            }
        }
    }
    Ok(report)
}
