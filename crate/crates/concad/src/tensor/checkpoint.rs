//! Parameter checkpoint file.
//!
//! Self-describing binary container: a JSON metadata blob plus an ordered
//! list of named tensors. All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CCKP"
//! 4       4     format version, u32 (currently 1)
//! 8       4     metadata length M, u32
//! 12      M     metadata, UTF-8 JSON
//! 12+M    4     tensor count N, u32
//! then, per tensor, in order:
//!         4     name length L, u32
//!         L     name, UTF-8
//!         4     rank R, u32
//!         8*R   dims, u64 each
//!         8*n   values, f64 each, n = product(dims)
//! ```

use super::Tensor;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    meta_json: &str,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    let meta = meta_json.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(meta).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(nb).map_err(io)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes()).map_err(io)?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    fn read_exact(path: &Path, r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
        r.read_exact(buf).map_err(|e| {
            Error::Data(format!("truncated checkpoint {}: {e}", path.display()))
        })
    }
    fn read_u32(path: &Path, r: &mut impl Read) -> Result<u32> {
        let mut b = [0u8; 4];
        read_exact(path, r, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn read_u64(path: &Path, r: &mut impl Read) -> Result<u64> {
        let mut b = [0u8; 8];
        read_exact(path, r, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    let mut magic = [0u8; 4];
    read_exact(path, &mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(path, &mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {version} in {}",
            path.display()
        )));
    }
    let meta_len = read_u32(path, &mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    read_exact(path, &mut r, &mut meta)?;
    let meta = String::from_utf8(meta)
        .map_err(|_| Error::Data(format!("non-UTF-8 metadata in {}", path.display())))?;

    let count = read_u32(path, &mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(path, &mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(path, &mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data(format!("non-UTF-8 tensor name in {}", path.display())))?;
        let rank = read_u32(path, &mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(path, &mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            read_exact(path, &mut r, &mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok((meta, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn roundtrip_preserves_order_names_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = RngStream::new(88);
        let a = Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.normal()).collect()).unwrap();
        let b = Tensor::from_vec(&[4], (0..4).map(|_| rng.normal()).collect()).unwrap();
        let s = Tensor::scalar(-0.25);
        save_checkpoint(
            &path,
            r#"{"seed":1}"#,
            &[
                ("w".to_string(), &a),
                ("bias".to_string(), &b),
                ("scalar".to_string(), &s),
            ],
        )
        .unwrap();
        let (meta, tensors) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, r#"{"seed":1}"#);
        assert_eq!(tensors.len(), 3);
        assert_eq!(tensors[0].0, "w");
        assert_eq!(tensors[0].1, a);
        assert_eq!(tensors[1].0, "bias");
        assert_eq!(tensors[1].1, b);
        assert_eq!(tensors[2].0, "scalar");
        assert_eq!(tensors[2].1, s);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, b"NOPE....").unwrap();
        assert!(load_checkpoint(&bad).is_err());

        let path = dir.path().join("trunc.ckpt");
        let t = Tensor::from_vec(&[8], vec![1.0; 8]).unwrap();
        save_checkpoint(&path, "{}", &[("t".to_string(), &t)]).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 9]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
