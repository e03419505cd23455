use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Group, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First-order optimizer with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: BTreeMap<String, Moments>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            moments: BTreeMap::new(),
            steps: 0,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    /// Total number of applied steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every parameter of `groups` from its gradient and clears those gradients.
    /// Parameters outside `groups` are not touched.
    pub fn step(&mut self, params: &mut ParameterSet, groups: &[Group]) -> Result<()> {
        let mut names = Vec::new();
        for &g in groups {
            if params.is_frozen(g) {
                return Err(Error::FrozenGroup(g.id().into()));
            }
            if params.group(g).is_empty() {
                return Err(Error::InvalidArgument(format!("group {g} is empty")));
            }
            for name in params.group(g) {
                if params.get(name)?.grad().is_none() {
                    return Err(Error::MissingGradient(name.clone()));
                }
                names.push(name.clone());
            }
        }
        self.steps += 1;
        for name in names {
            let t = params.get_mut(&name)?;
            let g = t.grad().unwrap().to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in t.data_mut().iter_mut().zip(&g) {
                        *w -= self.learning_rate * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                        m: vec![0.0; g.len()],
                        v: vec![0.0; g.len()],
                        t: 0,
                    });
                    st.t += 1;
                    let bc1 = 1.0 - self.beta1.powi(st.t as i32);
                    let bc2 = 1.0 - self.beta2.powi(st.t as i32);
                    for (i, w) in t.data_mut().iter_mut().enumerate() {
                        st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g[i];
                        st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mhat = st.m[i] / bc1;
                        let vhat = st.v[i] / bc2;
                        *w -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            t.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn params() -> ParameterSet {
        let mut ps = ParameterSet::new();
        for (i, g) in Group::ALL.into_iter().enumerate() {
            ps.insert(format!("w{i}"), g, Tensor::full(&[1], 1.0)).unwrap();
        }
        ps
    }

    #[test]
    fn sgd_hand_arithmetic() {
        let mut ps = params();
        ps.get_mut("w4").unwrap().accumulate_grad(&[2.0]).unwrap();
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        opt.step(&mut ps, &[Group::ThetaS]).unwrap();
        assert!((ps.get("w4").unwrap().item() - 0.8).abs() < 1e-15);
        assert!(ps.get("w4").unwrap().grad().is_none());
    }

    #[test]
    fn step_only_touches_named_groups() {
        let mut ps = params();
        for i in 0..6 {
            ps.get_mut(&format!("w{i}")).unwrap().accumulate_grad(&[0.5]).unwrap();
        }
        let before = ps.clone();
        let mut opt = OptimizerState::adam(1e-3).unwrap();
        opt.step(&mut ps, &[Group::ThetaS]).unwrap();
        let changed = ps.changed_groups(&before);
        assert_eq!(changed.into_iter().collect::<Vec<_>>(), vec![Group::ThetaS]);
    }

    #[test]
    fn adam_first_step_matches_formula() {
        let mut ps = params();
        let g = 0.37;
        ps.get_mut("w2").unwrap().accumulate_grad(&[g]).unwrap();
        let mut opt = OptimizerState::adam(1e-3).unwrap();
        opt.step(&mut ps, &[Group::PhiS]).unwrap();
        // m = 0.1 g, v = 0.001 g², mhat = g, vhat = g²
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.999) * g * g;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.999);
        let expected = 1.0 - 1e-3 * mhat / (vhat.sqrt() + 1e-8);
        assert!((ps.get("w2").unwrap().item() - expected).abs() <= 1e-12);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn missing_gradient_and_frozen_errors() {
        let mut ps = params();
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        assert!(matches!(opt.step(&mut ps, &[Group::PhiT]), Err(Error::MissingGradient(_))));
        ps.freeze(Group::EpsS);
        assert!(matches!(opt.step(&mut ps, &[Group::EpsS]), Err(Error::FrozenGroup(_))));
        assert_eq!(opt.steps(), 0);
        assert!(OptimizerState::sgd(0.0).is_err());
    }
}
