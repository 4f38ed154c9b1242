//! Central-difference gradient checker.

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |a − n| / max(1, |a|, |n|)
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares the tape gradient of `f` at `params` against central differences
/// with step `eps`. `f` receives one leaf per parameter tensor, in order.
pub fn grad_check<F>(f: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Invalid(format!("grad_check: eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.tensors().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(TensorError::NonFinite { param: 0, coord: 0 });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<_> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (pi, a) in analytic.iter().enumerate() {
        for ci in 0..a.numel() {
            let orig = probe.get(pi).data()[ci];
            probe.get_mut(pi).data_mut()[ci] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(pi).data_mut()[ci] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(pi).data_mut()[ci] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(TensorError::NonFinite { param: pi, coord: ci });
            }
            let numeric = (up - down) / (2.0 * eps);
            let an = a.data()[ci];
            let err = (an - numeric).abs() / 1f64.max(an.abs()).max(numeric.abs());
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = err;
                report.worst = (pi, ci);
                report.analytic = an;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
