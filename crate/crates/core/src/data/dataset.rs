//! Labeled/unlabeled sample containers and their binary file format.
//!
//! ```text
//! magic        8 bytes  "IRDNDATA"
//! version      u32      1
//! task_hash    u32 len + UTF-8
//! domain       u8       0 source, 1 target
//! ndim         u32
//! dims         ndim × u32   (dims[0] = sample count)
//! values       product(dims) × f64, row-major
//! has_labels   u8       0 or 1
//! labels       when has_labels: u32 count, then count × u32
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{Reader, Writer};
use crate::model::Domain;

pub const DATASET_MAGIC: &[u8; 8] = b"IRDNDATA";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    /// Hash of the task configuration this data was generated from.
    pub task_hash: String,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Option<Vec<usize>>, domain: Domain, task_hash: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::dim(
                    "dataset",
                    format!("{} labels for {} samples", l.len(), inputs.rows()),
                ));
            }
        }
        Ok(Dataset {
            inputs,
            labels,
            domain,
            task_hash: task_hash.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Same samples with labels stripped.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no labels".into()))
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Option<Vec<usize>>)> {
        let x = self.inputs.select_rows(idx)?;
        let y = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        Ok((x, y))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.str(&self.task_hash);
        w.u8(self.domain.code());
        w.u32(self.inputs.ndim() as u32);
        for &d in self.inputs.shape() {
            w.u32(d as u32);
        }
        for &v in self.inputs.data() {
            w.f64(v);
        }
        match &self.labels {
            Some(l) => {
                w.u8(1);
                w.u32(l.len() as u32);
                for &y in l {
                    w.u32(y as u32);
                }
            }
            None => w.u8(0),
        }
        w.finish()
    }

    /// Parses a whole container; nothing is returned unless every field validates.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let task_hash = r.str()?;
        let domain = Domain::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown domain tag".into()))?;
        let ndim = r.u32()? as usize;
        if ndim == 0 {
            return Err(Error::Format("zero-dimensional input block".into()));
        }
        let dims = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let inputs = Tensor::new(&dims, values)?;
        let labels = match r.u8()? {
            0 => None,
            1 => {
                let count = r.u32()? as usize;
                Some(
                    (0..count)
                        .map(|_| r.u32().map(|y| y as usize))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            f => return Err(Error::Format(format!("bad label flag {f}"))),
        };
        r.expect_end()?;
        Dataset::new(inputs, labels, domain, task_hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(labels: bool) -> Dataset {
        let x = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 3.25, 1e-300, -0.0]).unwrap();
        let y = labels.then(|| vec![0, 2, 1]);
        Dataset::new(x, y, Domain::Target, "deadbeef").unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for labels in [true, false] {
            let d = sample(labels);
            let bytes = d.to_bytes();
            let back = Dataset::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert!(back.inputs.bit_eq(&d.inputs));
            assert_eq!(back.labels, d.labels);
        }
    }

    #[test]
    fn unlabeled_view_has_no_labels_after_load() {
        let d = sample(true).unlabeled();
        let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
        assert!(back.labels.is_none());
        assert!(back.labels().is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = sample(true).to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Dataset::from_bytes(&bytes),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample(true).to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Dataset::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Dataset::from_bytes(&magic).is_err());
    }

    #[test]
    fn label_count_must_match() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(Dataset::new(x, Some(vec![0]), Domain::Source, "").is_err());
    }
}
