//! Data files: row-major little-endian `f64` with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataHeader {
    pub n: usize,
    pub p: usize,
    pub design_hash: String,
    pub dtype: String,
}

/// `data.bin` -> `data.bin.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_data(path: &Path, y: &Matrix, design_hash: &str) -> Result<DataHeader> {
    let mut bytes = Vec::with_capacity(8 * y.rows() * y.cols());
    for x in y.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = DataHeader { n: y.rows(), p: y.cols(), design_hash: design_hash.to_string(), dtype: "f64le".into() };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn read_data(path: &Path) -> Result<(Matrix, DataHeader)> {
    let header: DataHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.dtype != "f64le" {
        return Err(Error::invalid(format!("unsupported data type {:?}", header.dtype)));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * header.n * header.p {
        return Err(Error::shape(format!("{} bytes for a {} x {} f64 matrix", bytes.len(), header.n, header.p)));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Matrix::from_vec(header.n, header.p, data)?, header))
}

pub fn matrix_to_csv(y: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..y.rows() {
        out.push_str(&y.row(i).iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.bin");
        let y = Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) - 1e-300);
        write_data(&path, &y, "abc").unwrap();
        let (z, h) = read_data(&path).unwrap();
        assert_eq!(z, y);
        assert_eq!((h.n, h.p, h.design_hash.as_str()), (3, 2, "abc"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.bin");
        write_data(&path, &Matrix::zeros(2, 2), "h").unwrap();
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(read_data(&path), Err(Error::Shape(_))));
    }
}
