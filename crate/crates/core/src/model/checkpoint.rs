//! Versioned parameter checkpoints.
//!
//! Layout: magic `G3CK`, u32 LE format version, u32 LE header length, a UTF-8
//! JSON header, then every tensor listed in the header (in header order) as
//! f32 LE values, row-major. Values use the `.geb` encoding, so checkpoints
//! hold parameters at 32-bit precision.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, G3Params, ModelDims, ModelOptions};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"G3CK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub alpha: f64,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: G3Params,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: ModelDims,
    options: ModelOptions,
    #[serde(flatten)]
    meta: CheckpointMeta,
    bn_eps: f64,
    bn_momentum: f64,
    tensors: Vec<TensorInfo>,
}

fn tensors(p: &G3Params) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
    let v1 = |a: &Array1<f64>| (vec![a.len()], a.to_vec());
    let v2 = |a: &Array2<f64>| (vec![a.nrows(), a.ncols()], a.iter().copied().collect());
    let mut out = Vec::new();
    let mut push = |name, (shape, data): (Vec<usize>, Vec<f64>)| out.push((name, shape, data));
    push("attn_weight", v2(&p.attn_weight));
    push("attn_bias", v1(&p.attn_bias));
    push("bn_attn.gamma", v1(&p.bn_attn.gamma));
    push("bn_attn.beta", v1(&p.bn_attn.beta));
    push("bn_attn.running_mean", v1(&p.bn_attn.running_mean));
    push("bn_attn.running_var", v1(&p.bn_attn.running_var));
    push("cls_weight", v2(&p.cls_weight));
    push("cls_bias", v1(&p.cls_bias));
    push("bn_cls.gamma", v1(&p.bn_cls.gamma));
    push("bn_cls.beta", v1(&p.bn_cls.beta));
    push("bn_cls.running_mean", v1(&p.bn_cls.running_mean));
    push("bn_cls.running_var", v1(&p.bn_cls.running_var));
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let p = &ck.params;
    let ts = tensors(p);
    let header = Header {
        version: CHECKPOINT_VERSION,
        dims: p.dims,
        options: p.options,
        meta: ck.meta.clone(),
        bn_eps: p.bn_cls.eps,
        bn_momentum: p.bn_cls.momentum,
        tensors: ts
            .iter()
            .map(|(n, s, _)| TensorInfo {
                name: n.to_string(),
                shape: s.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("serializable");
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, _, data) in ts {
        for v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::Truncated {
            expected: 12 + hlen,
            found: bytes.len(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[12..12 + hlen]).map_err(|e| Error::json("checkpoint header", e))?;

    let mut params = G3Params::zeros(header.dims, header.options);
    for bn in [&mut params.bn_attn, &mut params.bn_cls] {
        bn.eps = header.bn_eps;
        bn.momentum = header.bn_momentum;
    }
    let expected: usize = 12 + hlen + 4 * tensors(&params).iter().map(|(_, _, d)| d.len()).sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let reference = tensors(&params);
    if header.tensors.len() != reference.len()
        || header
            .tensors
            .iter()
            .zip(&reference)
            .any(|(h, (n, s, _))| h.name != *n || h.shape != *s)
    {
        return Err(Error::Data("checkpoint tensor table does not match its dims".into()));
    }
    let mut values = bytes[12 + hlen..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let mut fill = |dst: &mut [f64]| {
        for d in dst.iter_mut() {
            *d = values.next().expect("length checked");
        }
    };
    fill(params.attn_weight.as_slice_mut().unwrap());
    fill(params.attn_bias.as_slice_mut().unwrap());
    fill_bn(&mut params.bn_attn, &mut fill);
    fill(params.cls_weight.as_slice_mut().unwrap());
    fill(params.cls_bias.as_slice_mut().unwrap());
    fill_bn(&mut params.bn_cls, &mut fill);
    params.check_finite()?;
    Ok(Checkpoint {
        meta: header.meta,
        params,
    })
}

fn fill_bn(bn: &mut BatchNorm, fill: &mut impl FnMut(&mut [f64])) {
    fill(bn.gamma.as_slice_mut().unwrap());
    fill(bn.beta.as_slice_mut().unwrap());
    fill(bn.running_mean.as_slice_mut().unwrap());
    fill(bn.running_var.as_slice_mut().unwrap());
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
