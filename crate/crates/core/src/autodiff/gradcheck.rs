//! Central finite-difference verification of tape gradients.

use super::graph::Var;
use super::params::{Group, ParameterSet};
use super::session::Session;
use crate::error::Result;

/// Below this, both gradients are finite-difference roundoff (a bias feeding
/// batch norm, say) and a ratio of two noise terms means nothing.
pub const ZERO_GRADIENT_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|)` over checked elements.
    /// Tensors whose gradient scale is below [`ZERO_GRADIENT_SCALE`] report the absolute error.
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&ParamError> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error > self.tolerance)
            .collect()
    }

    pub fn worst(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Elements checked per tensor; larger tensors are sampled at an even stride.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_elements: 48,
            seed: 0,
        }
    }
}

/// Compares backward gradients of every parameter in `groups` with central differences.
///
/// `forward` must be deterministic; sessions are created with dropout disabled
/// and a fixed seed.
pub fn grad_check<F>(
    params: &mut ParameterSet,
    groups: &[Group],
    tolerance: f64,
    opts: GradCheckOptions,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>) -> Result<Var>,
{
    let analytic = {
        let mut s = Session::new(params, groups, opts.seed).without_dropout();
        let loss = forward(&mut s)?;
        s.finish(loss)?.grads
    };
    let eval = |ps: &ParameterSet| -> Result<f64> {
        let mut s = Session::new(ps, &[], opts.seed).without_dropout();
        let loss = forward(&mut s)?;
        Ok(s.graph.value(loss).item())
    };

    let mut report = Vec::new();
    for &g in groups {
        for name in params.group(g).to_vec() {
            let Some(a) = analytic.get(&name) else { continue };
            let n = a.len();
            let stride = n.div_ceil(opts.max_elements).max(1);
            let mut max_diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            let mut checked = 0;
            for i in (0..n).step_by(stride) {
                let orig = params.get(&name)?.data()[i];
                params.get_mut(&name)?.data_mut()[i] = orig + opts.step;
                let up = eval(params)?;
                params.get_mut(&name)?.data_mut()[i] = orig - opts.step;
                let down = eval(params)?;
                params.get_mut(&name)?.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * opts.step);
                max_diff = max_diff.max((a[i] - numeric).abs());
                scale = scale.max(a[i].abs()).max(numeric.abs());
                checked += 1;
            }
            let rel = if scale > ZERO_GRADIENT_SCALE { max_diff / scale } else { max_diff };
            report.push(ParamError {
                name,
                max_rel_error: rel,
                checked,
            });
        }
    }
    Ok(GradCheckReport {
        tolerance,
        params: report,
    })
}
