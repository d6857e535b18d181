//! Binary checkpoints storing only the surviving weights of each layer.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic     8 bytes "SSPCKPT\0"
//! version   u32     1
//! meta_len  u32
//! meta      meta_len bytes of JSON (CheckpointMeta)
//! layers    u32
//! per layer:
//!   id_len u32, id bytes (UTF-8)
//!   kind   u8     0 = dense, 1 = conv
//!   rows   u32, cols u32
//!   row_keep  rows bytes (0 or 1)
//!   col_keep  cols bytes (0 or 1)
//!   weights   kept_rows * kept_cols f32, row-major over kept rows and columns
//!   biases    rows f32
//! ```
//!
//! Values are stored as 32-bit floats, so a loaded model equals the saved
//! one rounded to `f32`, and save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data_io::Reader;
use crate::model::{ActShape, LayerSpec, Model, Params};
use crate::pipeline::{apply_mask, LayerMask, SparsityMask};
use crate::tensor::{Matrix, WeightCollection};

pub const CKPT_MAGIC: &[u8; 8] = b"SSPCKPT\0";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `baseline`, `pruned` or `direct`.
    pub stage: String,
    pub seed: u64,
    /// Training epochs behind the stored weights in the last stage.
    pub epoch: usize,
    pub config_hash: String,
    pub base_hash: String,
    pub input: String,
    pub layers: Vec<String>,
    pub masked: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

impl Checkpoint {
    /// Fills the model-shape fields of `meta` from `model`.
    pub fn new(mut meta: CheckpointMeta, model: Model) -> Self {
        meta.input = model.input_shape().to_string();
        meta.layers = model.specs().iter().map(ToString::to_string).collect();
        meta.masked = model.mask().is_some();
        Checkpoint { meta, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let weights = self.model.weights();
        let mask = match self.model.mask() {
            Some(m) => m.clone(),
            None => SparsityMask::all_keep(weights),
        };
        let len32 = |n: usize| {
            u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))
        };
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&len32(meta.len())?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len32(weights.len())?.to_le_bytes());
        let kinds = self.model.prunable_inputs();
        for (i, l) in mask.layers.iter().enumerate() {
            let m = weights.matrix(i);
            out.extend_from_slice(&len32(l.id.len())?.to_le_bytes());
            out.extend_from_slice(l.id.as_bytes());
            out.push(u8::from(matches!(kinds[i].0, LayerSpec::Conv2d { .. })));
            out.extend_from_slice(&len32(m.rows())?.to_le_bytes());
            out.extend_from_slice(&len32(m.cols())?.to_le_bytes());
            out.extend(l.row_keep.iter().map(|&k| u8::from(k)));
            out.extend(l.col_keep.iter().map(|&k| u8::from(k)));
            for p in (0..m.rows()).filter(|&p| l.row_keep[p]) {
                for q in (0..m.cols()).filter(|&q| l.col_keep[q]) {
                    out.extend_from_slice(&(m.get(p, q) as f32).to_le_bytes());
                }
            }
            for &b in &self.model.params().biases[i] {
                out.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let input: ActShape = meta
            .input
            .parse()
            .map_err(|e| Error::Format(format!("checkpoint input shape: {e}")))?;
        let specs = meta
            .layers
            .iter()
            .map(|s| s.parse::<LayerSpec>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Format(format!("checkpoint layer list: {e}")))?;
        let skeleton = Model::new(input, &specs, 0).map_err(|e| Error::Format(e.to_string()))?;
        let expected = skeleton.prunable_inputs();

        let n = r.u32()? as usize;
        if n != expected.len() {
            return Err(Error::Format(format!(
                "{n} layer records for {} prunable layers",
                expected.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for (i, (spec, _)) in expected.iter().enumerate() {
            let id_len = r.u32()? as usize;
            let id = String::from_utf8(r.take(id_len)?.to_vec())
                .map_err(|_| Error::Format("layer id is not UTF-8".into()))?;
            let kind = r.u8()?;
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let want_kind = u8::from(matches!(spec, LayerSpec::Conv2d { .. }));
            if id != skeleton.weights().id(i) || kind != want_kind || Some((rows, cols)) != spec.weight_shape() {
                return Err(Error::Format(format!(
                    "layer record {i} (`{id}`, kind {kind}, {rows}x{cols}) does not match the declared layers"
                )));
            }
            let flags = |bytes: &[u8]| {
                bytes
                    .iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(Error::Format(format!("keep flag {b} in `{id}`"))),
                    })
                    .collect::<Result<Vec<bool>>>()
            };
            let row_keep = flags(r.take(rows)?)?;
            let col_keep = flags(r.take(cols)?)?;
            let mut m = Matrix::zeros(rows, cols);
            for p in (0..rows).filter(|&p| row_keep[p]) {
                for q in (0..cols).filter(|&q| col_keep[q]) {
                    let v = f64::from(r.f32()?);
                    if !v.is_finite() {
                        return Err(Error::Format(format!("non-finite weight in `{id}`")));
                    }
                    m.set(p, q, v);
                }
            }
            let b = (0..rows).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            masks.push(LayerMask { id: id.clone(), row_keep, col_keep });
            layers.push((id, m));
            biases.push(b);
        }
        r.finish()?;
        let params = Params::new(WeightCollection::new(layers)?, biases)?;
        let mut model = skeleton.with_params(params)?;
        if meta.masked {
            model = apply_mask(&model, &SparsityMask { layers: masks })
                .map_err(|e| Error::Format(format!("stored mask: {e}")))?;
        } else if masks.iter().any(|l| l.row_keep.iter().chain(&l.col_keep).any(|&k| !k)) {
            return Err(Error::Format("unmasked checkpoint with dropped groups".into()));
        }
        Ok(Checkpoint { meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// The model exactly as a save/load cycle would return it.
    pub fn rounded(model: &Model) -> Model {
        let mut m = model.clone();
        for s in m.params_mut().slices_mut() {
            s.iter_mut().for_each(|v| *v = round_f32(*v));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            stage: "baseline".into(),
            seed: 5,
            epoch: 3,
            config_hash: "abc".into(),
            base_hash: "def".into(),
            input: String::new(),
            layers: Vec::new(),
            masked: false,
        }
    }

    fn cnn() -> Model {
        Model::new(
            ActShape::Spatial { channels: 1, height: 6, width: 6 },
            &[
                LayerSpec::Conv2d { in_channels: 1, out_channels: 3, kernel_h: 3, kernel_w: 3, stride: 1, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 48, outputs: 2 },
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = cnn();
        let c = Checkpoint::new(meta(), model.clone());
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model, Checkpoint::rounded(&model));
        // the loss layer is implicit in the spec list but stored
        assert_eq!(back.meta.layers.len(), 5);
    }

    #[test]
    fn masked_checkpoint_stores_kept_entries_only() {
        let model = cnn();
        let mut mask = SparsityMask::all_keep(model.weights());
        mask.layers[0].row_keep[1] = false;
        mask.layers[0].col_keep[4] = false;
        mask.layers[1].col_keep[..16].fill(false);
        let pruned = apply_mask(&model, &mask).unwrap();
        let dense_len = Checkpoint::new(meta(), model).to_bytes().unwrap().len();
        let c = Checkpoint::new(meta(), pruned.clone());
        let bytes = c.to_bytes().unwrap();
        // 9 + 2 conv weights, 32 dense weights and one byte of `false` vs `true`
        assert_eq!(dense_len - bytes.len(), 4 * (9 + 2 + 32) + 1);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.mask(), Some(&mask));
        assert_eq!(back.model, Checkpoint::rounded(&pruned));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let bytes = Checkpoint::new(meta(), cnn()).to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]), Err(Error::Format(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format(_))));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
