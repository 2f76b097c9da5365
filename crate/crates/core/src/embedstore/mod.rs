//! Dense embedding matrices and their `.geb` on-disk form.
//!
//! Layout: the 4 magic bytes `GEB1`, `n_rows` as u32 LE, `dim` as u32 LE, then
//! `n_rows * dim` f32 LE values in row-major order. Row ids live in a JSON
//! sidecar `<path>.ids.json` holding an array of strings.

mod synth;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

pub use synth::{synth_generate, SyntheticStores, SyntheticWorldConfig};

pub const MAGIC: [u8; 4] = *b"GEB1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate embedding id {id:?}")));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(EmbeddingMatrix { ids, dim, data })
    }

    /// Rounds an f64 matrix to f32 storage.
    pub fn from_array(ids: Vec<String>, values: &Array2<f64>) -> Result<Self> {
        let dim = values.ncols();
        if values.nrows() != ids.len() {
            return Err(Error::IdCountMismatch {
                n_ids: ids.len(),
                n_rows: values.nrows(),
            });
        }
        let data = values.iter().map(|&v| v as f32).collect();
        EmbeddingMatrix::new(ids, dim, data)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_rows(), self.dim), |(i, j)| {
            f64::from(self.data[i * self.dim + j])
        })
    }

    /// Rows in the order of `ids`; fails on any unknown id.
    pub fn select(&self, ids: &[String]) -> Result<Array2<f64>> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut out = Array2::zeros((ids.len(), self.dim));
        for (r, id) in ids.iter().enumerate() {
            let src = *index
                .get(id.as_str())
                .ok_or_else(|| Error::Data(format!("id {id:?} missing from embedding store")))?;
            for (dst, &v) in out.row_mut(r).iter_mut().zip(self.row(src)) {
                *dst = f64::from(v);
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&(self.n_rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Decodes the binary payload; `ids` come from the sidecar.
    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        let (n_rows, dim, values) = decode_values(bytes)?;
        if ids.len() != n_rows {
            return Err(Error::IdCountMismatch {
                n_ids: ids.len(),
                n_rows,
            });
        }
        EmbeddingMatrix::new(ids, dim, values)
    }
}

/// Parses a `.geb` payload into `(n_rows, dim, values)`.
pub fn decode_values(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n_rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + 4 * n_rows * dim;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n_rows, dim, values))
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.json");
    PathBuf::from(s)
}

pub fn write_store(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))?;
    let ids_file = ids_path(path);
    let ids = serde_json::to_string(&matrix.ids).expect("serializable");
    std::fs::write(&ids_file, ids + "\n").map_err(|e| Error::io(&ids_file, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ids_file = ids_path(path);
    let ids_text = std::fs::read_to_string(&ids_file).map_err(|e| Error::io(&ids_file, e))?;
    let ids: Vec<String> =
        serde_json::from_str(&ids_text).map_err(|e| Error::json(ids_file.display().to_string(), e))?;
    EmbeddingMatrix::from_bytes(&bytes, ids)
}

/// A clue store must hold exactly one row per clue, in clue-id order.
pub fn check_clue_alignment(store: &EmbeddingMatrix, n_clues: usize) -> Result<()> {
    if store.n_rows() != n_clues {
        return Err(Error::Data(format!(
            "clue store has {} rows but corpus has {n_clues} clues",
            store.n_rows()
        )));
    }
    for (i, id) in store.ids().iter().enumerate() {
        if *id != i.to_string() {
            return Err(Error::Data(format!(
                "clue store row {i} has id {id:?}; rows must follow clue ids"
            )));
        }
    }
    Ok(())
}
