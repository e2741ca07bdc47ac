//! On-disk tensor format.
//!
//! A tensor file is a JSON object `{"shape": [...], "data": [...]}` with the
//! elements flattened in row-major order. Values survive a round trip
//! bit-exactly (the writer emits shortest round-tripping decimals), which
//! also means non-finite values cannot be represented: both directions
//! reject them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct TensorFile {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct TensorFileRef<'a> {
    shape: &'a [usize],
    data: &'a [f64],
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Domain(format!(
            "cannot serialize non-finite tensor to {}",
            path.display()
        )));
    }
    let body = serde_json::to_string(&TensorFileRef {
        shape: t.shape(),
        data: t.data(),
    })
    .map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, body)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })?;
    let parsed: TensorFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let t = Tensor::new(parsed.shape, parsed.data).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if !t.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "tensor contains a non-finite value".into(),
        });
    }
    Ok(t)
}
