//! ECNN1 model files.
//!
//! ```text
//! "ECNN1"            5-byte magic
//! u32 LE             format version (1)
//! u64 LE             header length
//! JSON header        layers, input shape, head size, seed, history, parameter shapes
//! u64 LE             parameter count
//! f32 LE × count     parameters, layer by layer, row-major
//! [u8; 32]           SHA-256 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::layers::LayerSpec;
use crate::model::ModelGraph;
use crate::tensor::Tensor;
use crate::train::History;
use crate::{NnError, Result};

pub const MAGIC: &[u8; 5] = b"ECNN1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    n_classes: usize,
    seed: u64,
    param_shapes: Vec<Vec<Vec<usize>>>,
    history: History,
}

pub fn to_bytes(model: &ModelGraph) -> Vec<u8> {
    let header = Header {
        layers: model.layers().to_vec(),
        input_shape: model.input_shape().to_vec(),
        n_classes: model.n_classes(),
        seed: model.seed(),
        param_shapes: model.params().iter().map(|l| l.iter().map(|p| p.shape().to_vec()).collect()).collect(),
        history: model.history().clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 4 * model.n_params() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.n_params() as u64).to_le_bytes());
    for v in model.params().iter().flatten().flat_map(|p| p.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(NnError::Checksum);
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn read_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8)?.try_into().unwrap()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::Format("missing ECNN1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NnError::Version { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 9 + DIGEST_LEN {
        return Err(NnError::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(NnError::Checksum);
    }
    let mut buf = &body[9..];
    let header_len = read_u64(&mut buf)? as usize;
    let header: Header =
        serde_json::from_slice(take(&mut buf, header_len)?).map_err(|e| NnError::Format(e.to_string()))?;
    let count = read_u64(&mut buf)? as usize;
    let expected: usize = header.param_shapes.iter().flatten().map(|s| s.iter().product::<usize>()).sum();
    if count != expected || buf.len() != 4 * count {
        return Err(NnError::Format(format!(
            "parameter block holds {} bytes, header declares {expected} values",
            buf.len()
        )));
    }
    let mut values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let params = header
        .param_shapes
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|shape| {
                    let n = shape.iter().product();
                    Tensor::new(shape.clone(), values.by_ref().take(n).collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if params.len() != header.layers.len() {
        return Err(NnError::Format("one parameter list per layer required".into()));
    }
    ModelGraph::from_parts(header.layers, header.input_shape, params, header.n_classes, header.seed, header.history)
}

pub fn save_model(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|source| NnError::Io { path: path.into(), source })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| NnError::Io { path: path.into(), source })?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of the model's file representation.
pub fn content_hash(model: &ModelGraph) -> String {
    hex::encode(Sha256::digest(to_bytes(model)))
}
