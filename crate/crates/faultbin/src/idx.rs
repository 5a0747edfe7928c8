//! IDX (MNIST) reader. Files may be gzip-compressed.

use std::io::Read;
use std::path::{Path, PathBuf};

use faultbin_core::learn::{Dataset, Shape};
use flate2::read::GzDecoder;

use crate::error::{CliError, Result};

/// Environment variable naming the dataset root.
pub const DATA_ENV: &str = "FAULTBIN_DATA";

pub fn data_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| CliError::parse(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize
}

/// Unsigned-byte IDX tensor: dimensions and payload.
pub fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let b = read_maybe_gz(path)?;
    if b.len() < 4 || b[0] != 0 || b[1] != 0 {
        return Err(CliError::parse(path, "not an IDX file"));
    }
    if b[2] != 0x08 {
        return Err(CliError::parse(path, format!("element type {:#x} is not unsigned byte", b[2])));
    }
    let nd = b[3] as usize;
    let head = 4 + 4 * nd;
    if b.len() < head {
        return Err(CliError::parse(path, "truncated header"));
    }
    let dims: Vec<usize> = (0..nd).map(|i| be32(&b, 4 + 4 * i)).collect();
    let n: usize = dims.iter().product();
    if b.len() != head + n {
        return Err(CliError::parse(path, format!("expected {n} data bytes, found {}", b.len() - head)));
    }
    Ok((dims, b[head..].to_vec()))
}

fn find(root: &Path, stem: &str) -> Result<PathBuf> {
    let alt = stem.replacen("-idx", ".idx", 1);
    for name in [stem.to_string(), format!("{stem}.gz"), alt.clone(), format!("{alt}.gz")] {
        let p = root.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(CliError::Io(format!("{}: no {stem}[.gz] (set {DATA_ENV} or --data)", root.display())))
}

/// `split` is `train` or `t10k`.
pub fn load_mnist(root: &Path, split: &str) -> Result<Dataset> {
    let ip = find(root, &format!("{split}-images-idx3-ubyte"))?;
    let lp = find(root, &format!("{split}-labels-idx1-ubyte"))?;
    let (idims, pixels) = read_idx(&ip)?;
    let (ldims, labels) = read_idx(&lp)?;
    if idims.len() != 3 || ldims.len() != 1 || idims[0] != ldims[0] {
        return Err(CliError::parse(&ip, format!("image dims {idims:?} vs label dims {ldims:?}")));
    }
    let shape = Shape {
        c: 1,
        h: idims[1],
        w: idims[2],
    };
    Ok(Dataset::new(shape, 10, pixels, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use std::io::Write;

    fn idx(dims: &[u32], data: &[u8]) -> Vec<u8> {
        let mut v = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            v.extend(d.to_be_bytes());
        }
        v.extend(data);
        v
    }

    #[test]
    fn plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let img = idx(&[2, 2, 2], &[0, 1, 2, 3, 4, 5, 6, 7]);
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), &img).unwrap();
        let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&idx(&[2], &[3, 9])).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte.gz"), gz.finish().unwrap()).unwrap();
        let d = load_mnist(dir.path(), "train").unwrap();
        assert_eq!((d.len(), d.shape.h, d.image(1)), (2, 2, &[4u8, 5, 6, 7][..]));
        assert_eq!(d.labels, vec![3, 9]);
    }

    #[test]
    fn corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, idx(&[4], &[1, 2])).unwrap();
        assert!(matches!(read_idx(&p), Err(CliError::Parse(_))));
        std::fs::write(&p, b"junk").unwrap();
        assert!(matches!(read_idx(&p), Err(CliError::Parse(_))));
        assert!(matches!(load_mnist(dir.path(), "t10k"), Err(CliError::Io(_))));
    }
}
