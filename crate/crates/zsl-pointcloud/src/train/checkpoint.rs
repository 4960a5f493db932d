//! Binary checkpoint container: a versioned JSON header followed by named
//! parameter records in single precision.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, HeadSpec, ParameterSet};

use super::{TrainConfig, TrainError};

const MAGIC: [u8; 4] = *b"ZCK1";
const VERSION: u32 = 1;

/// Everything describing a trained model apart from the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub head: HeadSpec,
    pub train: TrainConfig,
    /// Seen-class vocabulary the model was trained on, in table row order.
    pub classes: Vec<String>,
    /// Checksum of the semantic table used in training; `None` for the
    /// basic head.
    pub semantic_checksum: Option<u64>,
    pub epoch: usize,
    pub final_loss: f64,
    /// Effective run configuration echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterSet<f32>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let io_err = |source| TrainError::CheckpointIo { path: path.display().to_string(), source };
        let header = serde_json::to_vec(&self.meta)
            .map_err(|e| TrainError::CheckpointFormat { reason: e.to_string() })?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let records: Vec<(&str, &ArrayD<f32>, bool)> = self.params.iter().collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, tensor, learnable) in records {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(u8::from(learnable));
            let shape = tensor.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut file = std::fs::File::create(&tmp).map_err(io_err)?;
            file.write_all(&out).map_err(io_err)?;
        }
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let io_err = |source| TrainError::CheckpointIo { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        let bad = |reason: &str| TrainError::CheckpointFormat { reason: reason.to_string() };

        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8], TrainError> {
            if *pos + len > bytes.len() {
                return Err(TrainError::CheckpointFormat { reason: "truncated checkpoint".into() });
            }
            let out = &bytes[*pos..*pos + len];
            *pos += len;
            Ok(out)
        };

        if take(&mut pos, 4)? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, header_len)?)
            .map_err(|e| bad(&format!("bad header: {e}")))?;
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut params = ParameterSet::empty();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| bad("parameter name not utf-8"))?;
            let learnable = take(&mut pos, 1)?[0] != 0;
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
            }
            let tensor = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
                .map_err(|_| bad("bad tensor shape"))?;
            params.insert(name, tensor, learnable);
        }
        Ok(Checkpoint { meta, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_parameters;
    use crate::train::SemanticMode;

    fn sample_checkpoint() -> Checkpoint {
        let encoder = EncoderConfig {
            pointnet_widths: vec![4, 4],
            projection_hidden: (6, 5),
            basic_hidden: (6, 5),
            ..EncoderConfig::pointnet_max()
        };
        let head = HeadSpec::Basic { classes: 3 };
        let params = init_parameters::<f32>(&encoder, &head, 7);
        Checkpoint {
            meta: CheckpointMeta {
                encoder,
                head,
                train: TrainConfig { epochs: 2, ..TrainConfig::new(SemanticMode::Basic, 1) },
                classes: vec!["a".into(), "b".into(), "c".into()],
                semantic_checksum: None,
                epoch: 2,
                final_loss: 0.25,
                config_echo: None,
            },
            params,
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta.classes, ckpt.meta.classes);
        assert_eq!(back.meta.epoch, 2);
        for ((na, ta, la), (nb, tb, lb)) in back.params.iter().zip(ckpt.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(la, lb);
            assert_eq!(ta.shape(), tb.shape());
            for (a, b) in ta.iter().zip(tb.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(TrainError::CheckpointFormat { .. })));
    }
}
