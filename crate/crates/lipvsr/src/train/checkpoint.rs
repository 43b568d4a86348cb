//! Checkpoint persistence and weight averaging.
//!
//! LCKP layout, little-endian: magic "LCKP", u32 version (1), u64 config
//! digest, u32 stage, u32 epoch, u64 seed, u32 note length + UTF-8 note,
//! u32 parameter count, then per parameter: u32 name length + UTF-8 name,
//! u32 rank, u32 extents..., raw f64 values.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::NamedParams;

const MAGIC: &[u8; 4] = b"LCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub stage: u32,
    pub epoch: u32,
    pub seed: u64,
    pub config_digest: u64,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// (name, shape, values), in model parameter order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    /// Snapshot of a model's named parameters.
    pub fn capture(params: &NamedParams, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            meta,
            params: params
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data_vec()))
                .collect(),
        }
    }

    /// Loads values into a model's parameters; every name and shape must
    /// match, and the error names the first offender.
    pub fn restore(&self, params: &NamedParams) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, shape, values), (model_name, tensor)) in self.params.iter().zip(params) {
            if name != model_name {
                return Err(Error::contract(format!(
                    "checkpoint parameter {name} does not match model parameter {model_name}"
                )));
            }
            if shape != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint_restore",
                    lhs: shape.clone(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            tensor.with_data_mut(|d| d.copy_from_slice(values));
        }
        Ok(())
    }

    fn value_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, _, values) in &self.params {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    // ── File format ────────────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.meta.config_digest.to_le_bytes());
        buf.extend_from_slice(&self.meta.stage.to_le_bytes());
        buf.extend_from_slice(&self.meta.epoch.to_le_bytes());
        buf.extend_from_slice(&self.meta.seed.to_le_bytes());
        let note = self.meta.note.as_bytes();
        buf.extend_from_slice(&(note.len() as u32).to_le_bytes());
        buf.extend_from_slice(note);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.params {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::format(format!("truncated checkpoint {}", path.display())));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::format(format!("{} is not an LCKP file", path.display())));
        }
        let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let u64_of = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        if u32_of(take(&mut pos, 4)?) != VERSION {
            return Err(Error::format("unsupported checkpoint version"));
        }
        let config_digest = u64_of(take(&mut pos, 8)?);
        let stage = u32_of(take(&mut pos, 4)?);
        let epoch = u32_of(take(&mut pos, 4)?);
        let seed = u64_of(take(&mut pos, 8)?);
        let note_len = u32_of(take(&mut pos, 4)?) as usize;
        let note = String::from_utf8(take(&mut pos, note_len)?.to_vec())
            .map_err(|_| Error::format("checkpoint note is not UTF-8"))?;
        let count = u32_of(take(&mut pos, 4)?) as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_of(take(&mut pos, 4)?) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::format("parameter name is not UTF-8"))?;
            let rank = u32_of(take(&mut pos, 4)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_of(take(&mut pos, 4)?) as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut pos, numel * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push((name, shape, values));
        }
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes in checkpoint"));
        }
        Ok(Checkpoint {
            meta: CheckpointMeta {
                stage,
                epoch,
                seed,
                config_digest,
                note,
            },
            params,
        })
    }
}

/// Element-wise arithmetic mean of architecturally identical checkpoints.
///
/// The inputs are summed in a canonical order (sorted by value bytes then
/// metadata) so any permutation of the argument list yields bit-identical
/// output; elements that agree across all inputs are passed through
/// unchanged so averaging n copies of a checkpoint is exact.
pub fn average_checkpoints(checkpoints: &[&Checkpoint]) -> Result<Checkpoint> {
    let Some(first) = checkpoints.first() else {
        return Err(Error::contract("cannot average zero checkpoints"));
    };
    for c in checkpoints {
        if c.params.len() != first.params.len() {
            return Err(Error::contract(format!(
                "checkpoint has {} parameters, expected {}",
                c.params.len(),
                first.params.len()
            )));
        }
        for ((n_a, s_a, _), (n_b, s_b, _)) in c.params.iter().zip(&first.params) {
            if n_a != n_b {
                return Err(Error::contract(format!(
                    "parameter name mismatch: {n_a} vs {n_b}"
                )));
            }
            if s_a != s_b {
                return Err(Error::contract(format!(
                    "parameter {n_a} has shape {s_a:?}, expected {s_b:?}"
                )));
            }
        }
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = checkpoints[a];
        let cb = checkpoints[b];
        ca.value_bytes()
            .cmp(&cb.value_bytes())
            .then_with(|| ca.meta.stage.cmp(&cb.meta.stage))
            .then_with(|| ca.meta.epoch.cmp(&cb.meta.epoch))
            .then_with(|| ca.meta.note.cmp(&cb.meta.note))
    });

    let n = checkpoints.len() as f64;
    let mut params = Vec::with_capacity(first.params.len());
    for pi in 0..first.params.len() {
        let (name, shape, _) = &first.params[pi];
        let len = first.params[pi].2.len();
        let mut values = vec![0.0; len];
        for j in 0..len {
            let v0 = checkpoints[order[0]].params[pi].2[j];
            if checkpoints
                .iter()
                .all(|c| c.params[pi].2[j].to_bits() == v0.to_bits())
            {
                values[j] = v0;
            } else {
                let sum: f64 = order
                    .iter()
                    .map(|&ci| checkpoints[ci].params[pi].2[j])
                    .sum();
                values[j] = sum / n;
            }
        }
        params.push((name.clone(), shape.clone(), values));
    }
    let epochs: Vec<String> = {
        let mut sorted: Vec<&&Checkpoint> = checkpoints.iter().collect();
        sorted.sort_by_key(|c| (c.meta.stage, c.meta.epoch));
        sorted
            .iter()
            .map(|c| format!("s{}e{}", c.meta.stage, c.meta.epoch))
            .collect()
    };
    Ok(Checkpoint {
        meta: CheckpointMeta {
            stage: first.meta.stage,
            epoch: checkpoints.iter().map(|c| c.meta.epoch).max().unwrap(),
            seed: first.meta.seed,
            config_digest: first.meta.config_digest,
            note: format!("average of {}", epochs.join(",")),
        },
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(values: Vec<f64>, epoch: u32) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                stage: 1,
                epoch,
                seed: 7,
                config_digest: 42,
                note: String::new(),
            },
            params: vec![("w".into(), vec![values.len()], values)],
        }
    }

    #[test]
    fn singleton_average_is_identity() {
        let c = ckpt(vec![0.1, -2.5, 7.25], 3);
        let avg = average_checkpoints(&[&c]).unwrap();
        for (a, b) in avg.params[0].2.iter().zip(&c.params[0].2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn two_value_mean() {
        let a = ckpt(vec![1.0], 1);
        let b = ckpt(vec![3.0], 2);
        let avg = average_checkpoints(&[&a, &b]).unwrap();
        assert_eq!(avg.params[0].2[0].to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn order_invariance_is_bit_exact() {
        let a = ckpt(vec![0.1, 0.7, -0.3], 1);
        let b = ckpt(vec![0.2, -0.9, 0.5], 2);
        let c = ckpt(vec![0.3, 0.11, 0.17], 3);
        let x = average_checkpoints(&[&a, &b, &c]).unwrap();
        let y = average_checkpoints(&[&c, &a, &b]).unwrap();
        let z = average_checkpoints(&[&b, &c, &a]).unwrap();
        for ((vx, vy), vz) in x.params[0]
            .2
            .iter()
            .zip(&y.params[0].2)
            .zip(&z.params[0].2)
        {
            assert_eq!(vx.to_bits(), vy.to_bits());
            assert_eq!(vx.to_bits(), vz.to_bits());
        }
    }

    #[test]
    fn n_copies_average_to_the_same_checkpoint() {
        let a = ckpt(vec![0.1, 0.2, 0.3], 1);
        let avg = average_checkpoints(&[&a, &a, &a]).unwrap();
        for (x, y) in avg.params[0].2.iter().zip(&a.params[0].2) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn mismatched_shapes_name_the_parameter() {
        let a = ckpt(vec![1.0, 2.0], 1);
        let b = ckpt(vec![1.0], 2);
        let err = average_checkpoints(&[&a, &b]).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.lckp");
        let c = Checkpoint {
            meta: CheckpointMeta {
                stage: 2,
                epoch: 5,
                seed: 99,
                config_digest: 0xdeadbeef,
                note: "average of s2e4,s2e5".into(),
            },
            params: vec![
                ("a.weight".into(), vec![2, 3], vec![0.1, -0.2, 0.3, 1.5e-7, -4.0, 5.0]),
                ("a.bias".into(), vec![3], vec![0.0, -0.0, 1.0]),
            ],
        };
        c.save(&p).unwrap();
        let r = Checkpoint::load(&p).unwrap();
        assert_eq!(r.meta, c.meta);
        assert_eq!(r.params.len(), c.params.len());
        for ((na, sa, va), (nb, sb, vb)) in r.params.iter().zip(&c.params) {
            assert_eq!(na, nb);
            assert_eq!(sa, sb);
            for (x, y) in va.iter().zip(vb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Saving the loaded checkpoint reproduces the file byte for byte.
        let p2 = dir.path().join("model2.lckp");
        r.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn restore_rejects_mismatched_names() {
        use crate::tensor::Tensor;
        let c = ckpt(vec![1.0, 2.0], 1);
        let params = vec![(
            "other".to_string(),
            Tensor::param(&[2], vec![0.0, 0.0]).unwrap(),
        )];
        let err = c.restore(&params).unwrap_err();
        assert!(err.to_string().contains("other"), "{err}");
    }
}
