use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{BnUpdate, Group, ParameterSet};
use crate::error::Result;

/// One forward (and optional backward) pass over a borrowed [`ParameterSet`].
///
/// Parameters bind lazily as leaves; only those in `trainable` groups that are
/// not frozen receive gradients. Frozen and non-trainable parameters bind as
/// constants so no tape path reaches them.
pub struct Session<'a> {
    pub graph: Graph,
    params: &'a ParameterSet,
    trainable: BTreeSet<Group>,
    bound: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dropout: bool,
    bn_updates: Vec<BnUpdate>,
}

/// Gradients and running-statistic updates produced by [`Session::finish`].
#[derive(Debug, Clone, Default)]
pub struct Update {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ParameterSet, trainable: &[Group], seed: u64) -> Self {
        Session {
            graph: Graph::new(),
            params,
            trainable: trainable.iter().copied().collect(),
            bound: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dropout: true,
            bn_updates: Vec::new(),
        }
    }

    /// Forward-only session: nothing trainable.
    pub fn inference(params: &'a ParameterSet) -> Self {
        Session::new(params, &[], 0)
    }

    /// Disables dropout for train-mode modules (finite-difference checks need determinism).
    pub fn without_dropout(mut self) -> Self {
        self.dropout = false;
        self
    }

    pub fn dropout_enabled(&self) -> bool {
        self.dropout
    }

    pub fn params(&self) -> &ParameterSet {
        self.params
    }

    pub fn is_trainable(&self, g: Group) -> bool {
        self.trainable.contains(&g) && !self.params.is_frozen(g)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let group = self.params.group_of(name)?;
        let trainable = self.is_trainable(group);
        let t = self.params.get(name)?.clone().with_requires_grad(trainable);
        let v = self.graph.leaf(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn buffer(&self, name: &str) -> Result<&'a [f64]> {
        Ok(self.params.buffer(name)?.data())
    }

    /// Bernoulli keep-mask for inverted dropout.
    pub fn dropout_mask(&mut self, len: usize, p: f64) -> Vec<bool> {
        (0..len).map(|_| self.rng.gen::<f64>() >= p).collect()
    }

    pub fn record_bn(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    /// Names bound during this session, in name order.
    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// Runs backward from `loss` and collects gradients of every bound trainable parameter.
    /// Parameters on the tape that the loss does not reach get zero gradients.
    pub fn finish(mut self, loss: Var) -> Result<Update> {
        self.graph.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (name, &v) in &self.bound {
            if !self.graph.requires_grad(v) {
                continue;
            }
            let g = match self.graph.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.graph.value(v).len()],
            };
            grads.insert(name.clone(), g);
        }
        Ok(Update {
            loss: self.graph.value(loss).item(),
            grads,
            bn_updates: self.bn_updates,
        })
    }

    /// Ends a forward-only pass, keeping only running-statistic updates.
    pub fn into_bn_updates(self) -> Vec<BnUpdate> {
        self.bn_updates
    }
}

impl ParameterSet {
    /// Writes an [`Update`] into gradient slots and running statistics.
    pub fn apply(&mut self, update: &Update) -> Result<()> {
        self.accumulate_grads(&update.grads)?;
        self.apply_bn_updates(&update.bn_updates)
    }
}
