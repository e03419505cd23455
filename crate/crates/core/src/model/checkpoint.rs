//! Versioned binary checkpoint of an [`Irdan`] network.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes   "IRDNCKPT"
//! version          u32       1
//! config_hash      u32 len + UTF-8
//! epoch            u32
//! reward           f64
//! model_config     u32 len + UTF-8 JSON
//! frozen_groups    u8        bit i set when group code i is frozen
//! pretrained       u8        bit 0: G_s, bit 1: G_t
//! entry_count      u32
//! entries          sorted by name; parameters first, then buffers
//!   kind           u8        0 parameter, 1 buffer
//!   group          u8        group code (eps_s=0 … theta_t=5)
//!   name           u32 len + UTF-8
//!   ndim           u32
//!   dims           ndim × u32
//!   values         product(dims) × f64
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::network::Irdan;
use crate::autodiff::{Group, ParameterSet, Tensor};
use crate::error::{Error, Result};
use crate::io::{Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IRDNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub epoch: u32,
    pub reward: f64,
    pub model_config: ModelConfig,
    pub params: ParameterSet,
    pub pretrained: [bool; 2],
}

impl Checkpoint {
    pub fn capture(model: &Irdan, config_hash: &str, epoch: u32, reward: f64) -> Self {
        Checkpoint {
            config_hash: config_hash.to_string(),
            epoch,
            reward,
            model_config: model.config.clone(),
            params: model.params.clone(),
            pretrained: [model.gs.pretrained, model.gt.pretrained],
        }
    }

    /// Rebuilds the network, restoring every tensor, buffer and freeze flag.
    pub fn restore(&self) -> Result<Irdan> {
        let mut model = Irdan::new(self.model_config.clone(), 0)?;
        for (name, group, t) in self.params.iter() {
            let fits_group = model.params.group_of(name)? == group;
            let dst = model.params.get_mut(name)?;
            if dst.shape() != t.shape() || !fits_group {
                return Err(Error::Format(format!("checkpoint entry `{name}` does not fit the model")));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        for (name, _, t) in self.params.iter_buffers() {
            let dst = model.params.buffer_mut(name)?;
            if dst.shape() != t.shape() {
                return Err(Error::Format(format!("checkpoint buffer `{name}` does not fit the model")));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        if model.params.len() != self.params.len() {
            return Err(Error::Format("checkpoint is missing parameters".into()));
        }
        for g in self.params.frozen_groups() {
            model.params.freeze(g);
        }
        model.gs.pretrained = self.pretrained[0];
        model.gt.pretrained = self.pretrained[1];
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.config_hash);
        w.u32(self.epoch);
        w.f64(self.reward);
        let cfg = serde_json::to_string(&self.model_config)
            .map_err(|e| Error::Format(e.to_string()))?;
        w.str(&cfg);
        let frozen = self
            .params
            .frozen_groups()
            .fold(0u8, |acc, g| acc | (1 << g.code()));
        w.u8(frozen);
        w.u8(self.pretrained[0] as u8 | (self.pretrained[1] as u8) << 1);
        let count = self.params.len() + self.params.buffer_names().count();
        w.u32(count as u32);
        for (name, group, t) in self.params.iter() {
            write_entry(&mut w, 0, group, name, t);
        }
        for (name, group, t) in self.params.iter_buffers() {
            write_entry(&mut w, 1, group, name, t);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config_hash = r.str()?;
        let epoch = r.u32()?;
        let reward = r.f64()?;
        let model_config: ModelConfig =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Format(e.to_string()))?;
        let frozen = r.u8()?;
        let pre = r.u8()?;
        let count = r.u32()?;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let kind = r.u8()?;
            let group = Group::from_code(r.u8()?)
                .ok_or_else(|| Error::Format("unknown group code".into()))?;
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(&dims, data)?;
            match kind {
                0 => params.insert(name, group, t)?,
                1 => params.insert_buffer(name, group, t)?,
                k => return Err(Error::Format(format!("unknown entry kind {k}"))),
            }
        }
        r.expect_end()?;
        for g in Group::ALL {
            if frozen & (1 << g.code()) != 0 {
                params.freeze(g);
            }
        }
        Ok(Checkpoint {
            config_hash,
            epoch,
            reward,
            model_config,
            params,
            pretrained: [pre & 1 != 0, pre & 2 != 0],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_entry(w: &mut Writer, kind: u8, group: Group, name: &str, t: &Tensor) {
    w.u8(kind);
    w.u8(group.code());
    w.str(name);
    w.u32(t.ndim() as u32);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    for &v in t.data() {
        w.f64(v);
    }
}
