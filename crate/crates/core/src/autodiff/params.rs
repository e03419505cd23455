use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::BatchMoments;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// The six trainable partitions: extractors (`eps`), adaptation blocks (`phi`),
/// classifiers (`theta`), one of each per domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    EpsS,
    EpsT,
    PhiS,
    PhiT,
    ThetaS,
    ThetaT,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::EpsS,
        Group::EpsT,
        Group::PhiS,
        Group::PhiT,
        Group::ThetaS,
        Group::ThetaT,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Group::EpsS => "eps_s",
            Group::EpsT => "eps_t",
            Group::PhiS => "phi_s",
            Group::PhiT => "phi_t",
            Group::ThetaS => "theta_s",
            Group::ThetaT => "theta_t",
        }
    }

    pub fn code(self) -> u8 {
        Group::ALL.iter().position(|&g| g == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Group> {
        Group::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown group `{s}`")))
    }
}

/// Running-statistic update requested by a train-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    /// Layer prefix; buffers live at `{prefix}.running_mean` / `{prefix}.running_var`.
    pub prefix: String,
    pub moments: BatchMoments,
    pub momentum: f64,
}

/// Named trainable tensors partitioned into [`Group`]s, plus non-trainable
/// buffers (batch-norm running statistics) tagged with the group of their layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
    owner: BTreeMap<String, Group>,
    groups: BTreeMap<Group, Vec<String>>,
    buffers: BTreeMap<String, (Group, Tensor)>,
    frozen: BTreeSet<Group>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet {
            groups: Group::ALL.iter().map(|&g| (g, Vec::new())).collect(),
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        let frozen = self.frozen.contains(&group);
        self.entries
            .insert(name.clone(), tensor.with_requires_grad(!frozen));
        self.owner.insert(name.clone(), group);
        let names = self.groups.entry(group).or_default();
        let at = names.binary_search(&name).unwrap_err();
        names.insert(at, name);
        Ok(())
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, group: Group, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) || self.buffers.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.buffers.insert(name, (group, tensor.with_requires_grad(false)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn group_of(&self, name: &str) -> Result<Group> {
        self.owner
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Group, &Tensor)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.as_str(), self.owner[n], t))
    }

    pub fn iter_buffers(&self) -> impl Iterator<Item = (&str, Group, &Tensor)> {
        self.buffers.iter().map(|(n, (g, t))| (n.as_str(), *g, t))
    }

    /// Names in `g`, sorted.
    pub fn group(&self, g: Group) -> &[String] {
        self.groups.get(&g).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn group_ids(&self) -> Vec<Group> {
        self.groups.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Freezes a group structurally: its tensors lose their gradient slots and
    /// bind as constants in every later session.
    pub fn freeze(&mut self, g: Group) {
        self.frozen.insert(g);
        for name in self.groups.get(&g).into_iter().flatten() {
            if let Some(t) = self.entries.get_mut(name) {
                t.set_requires_grad(false);
            }
        }
    }

    pub fn is_frozen(&self, g: Group) -> bool {
        self.frozen.contains(&g)
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = Group> + '_ {
        self.frozen.iter().copied()
    }

    pub fn trainable_groups(&self) -> Vec<Group> {
        Group::ALL
            .into_iter()
            .filter(|g| !self.frozen.contains(g))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.entries.values_mut().for_each(Tensor::zero_grad);
    }

    /// Every parameter belongs to exactly one of the six groups.
    pub fn validate_partition(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for names in self.groups.values() {
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::DuplicateName(n.clone()));
                }
            }
        }
        if seen.len() != self.entries.len() || self.groups.len() != Group::ALL.len() {
            return Err(Error::InvalidArgument("group map does not cover every parameter".into()));
        }
        Ok(())
    }

    pub fn accumulate_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in grads {
            self.get_mut(name)?.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            let m = u.momentum;
            let mean = self.buffer_mut(&format!("{}.running_mean", u.prefix))?;
            for (r, b) in mean.data_mut().iter_mut().zip(&u.moments.mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            let var = self.buffer_mut(&format!("{}.running_var", u.prefix))?;
            for (r, b) in var.data_mut().iter_mut().zip(&u.moments.var) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
        Ok(())
    }

    /// Raw bytes of every tensor and buffer owned by `g`, in name order.
    pub fn group_bytes(&self, g: Group) -> Vec<u8> {
        let mut out = Vec::new();
        for name in self.group(g) {
            out.extend(name.as_bytes());
            for v in self.entries[name].data() {
                out.extend(v.to_le_bytes());
            }
        }
        for (name, (bg, t)) in &self.buffers {
            if *bg == g {
                out.extend(name.as_bytes());
                for v in t.data() {
                    out.extend(v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Groups whose bytes differ between two parameter sets of identical layout.
    pub fn changed_groups(&self, other: &ParameterSet) -> BTreeSet<Group> {
        Group::ALL
            .into_iter()
            .filter(|&g| self.group_bytes(g) != other.group_bytes(g))
            .collect()
    }

    /// Copies all tensors and buffers of `groups` from `src`.
    pub fn copy_groups_from(&mut self, src: &ParameterSet, groups: &[Group]) -> Result<()> {
        for &g in groups {
            for name in src.group(g) {
                let t = src.get(name)?.data().to_vec();
                let dst = self.get_mut(name)?;
                if dst.len() != t.len() {
                    return Err(Error::dim("copy_groups_from", format!("size of `{name}`")));
                }
                dst.data_mut().copy_from_slice(&t);
            }
            for (name, bg, t) in src.iter_buffers() {
                if bg == g {
                    self.buffer_mut(name)?.data_mut().copy_from_slice(t.data());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut ps = ParameterSet::new();
        for (i, g) in Group::ALL.into_iter().enumerate() {
            ps.insert(format!("p{i}.weight"), g, Tensor::full(&[2], i as f64))
                .unwrap();
        }
        ps
    }

    #[test]
    fn six_groups_partition() {
        let ps = sample();
        assert_eq!(ps.group_ids().len(), 6);
        ps.validate_partition().unwrap();
        let total: usize = Group::ALL.iter().map(|&g| ps.group(g).len()).sum();
        assert_eq!(total, ps.len());
    }

    #[test]
    fn duplicate_rejected() {
        let mut ps = sample();
        let err = ps.insert("p0.weight", Group::PhiS, Tensor::zeros(&[1]));
        assert!(matches!(err, Err(Error::DuplicateName(_))));
    }

    #[test]
    fn freezing_extractors_leaves_four_groups() {
        let mut ps = sample();
        ps.freeze(Group::EpsS);
        ps.freeze(Group::EpsT);
        assert_eq!(ps.trainable_groups().len(), 4);
        assert!(!ps.get("p0.weight").unwrap().requires_grad());
        assert!(ps.get("p2.weight").unwrap().requires_grad());
    }

    #[test]
    fn group_ids_round_trip() {
        for g in Group::ALL {
            assert_eq!(g.id().parse::<Group>().unwrap(), g);
            assert_eq!(Group::from_code(g.code()), Some(g));
        }
    }
}
