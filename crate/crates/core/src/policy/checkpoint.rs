use std::fs;
use std::path::Path;

use super::vocab::VOCAB_SIZE;
use super::{ModelConfig, PolicyError, PolicyParams};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UARP";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Rank-1 tensor carrying the model config as floats; precedes the weights.
const CONFIG_TENSOR: &str = "config";

fn config_values(c: &ModelConfig) -> Vec<f32> {
    [
        c.image_height,
        c.image_width,
        c.patch,
        c.d_model,
        c.n_blocks,
        c.ffn_hidden,
        c.max_len,
    ]
    .iter()
    .map(|&v| v as f32)
    .collect()
}

/// Little-endian layout: magic, version, vocab size, tensor count, then per
/// tensor its name length, name, rank, dims and raw f32 values.
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let cfg = config_values(params.config());
    let mut out = Vec::with_capacity(params.num_parameters() * 4 + 1024);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(VOCAB_SIZE as u32).to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32 + 1).to_le_bytes());
    let mut put = |name: &str, shape: &[usize], data: &[f32]| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(CONFIG_TENSOR, &[cfg.len()], &cfg);
    for (name, t) in params.named() {
        put(&name, t.shape(), t.data());
    }
    fs::write(path, out).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], PolicyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PolicyError::Truncated {
                path: self.path.to_path_buf(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. The model shape comes
/// from the embedded config; every tensor is checked against it using this
/// build's vocabulary.
pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, PolicyError> {
    let bytes = fs::read(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 4 {
        return Err(PolicyError::Truncated {
            path: path.to_path_buf(),
        });
    }
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(PolicyError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let _vocab = r.u32()?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(PolicyError::Truncated {
                path: path.to_path_buf(),
            })?;
        let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        named.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(PolicyError::UnexpectedTensor(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let cfg_pos = named
        .iter()
        .position(|(n, _)| n == CONFIG_TENSOR)
        .ok_or_else(|| PolicyError::MissingTensor(CONFIG_TENSOR.into()))?;
    let (_, cfg) = named.remove(cfg_pos);
    let v: Vec<usize> = cfg.data().iter().map(|&x| x as usize).collect();
    if v.len() != 7 {
        return Err(PolicyError::ShapeMismatch {
            tensor: CONFIG_TENSOR.into(),
            expected: vec![7],
            found: cfg.shape().to_vec(),
        });
    }
    let config = ModelConfig {
        image_height: v[0],
        image_width: v[1],
        patch: v[2],
        d_model: v[3],
        n_blocks: v[4],
        ffn_hidden: v[5],
        max_len: v[6],
    };
    PolicyParams::from_tensors(&config, named)
}
