//! Sparse-matrix persistence.
//!
//! Matrices are written as a little-endian triplet stream: a header
//! `(rows: u32, cols: u32, nnz: u64)` followed by `nnz` records of
//! `(row: u32, col: u32, value: f64)` in row-major order. Values are stored
//! bit-for-bit, so a reload is bitwise identical to what was written.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};
pub use sprs::CsMat;
use sprs::TriMat;

use crate::error::{Error, Result};

pub fn write_triplets<W: Write>(mut out: W, mat: &CsMat<f64>) -> std::io::Result<()> {
    let csr;
    let mat = if mat.is_csr() {
        mat
    } else {
        csr = mat.to_csr();
        &csr
    };
    out.write_u32::<LittleEndian>(mat.rows() as u32)?;
    out.write_u32::<LittleEndian>(mat.cols() as u32)?;
    out.write_u64::<LittleEndian>(mat.nnz() as u64)?;
    for (row, vec) in mat.outer_iterator().enumerate() {
        for (col, &value) in vec.iter() {
            out.write_u32::<LittleEndian>(row as u32)?;
            out.write_u32::<LittleEndian>(col as u32)?;
            out.write_f64::<LittleEndian>(value)?;
        }
    }
    Ok(())
}

pub fn read_triplets<R: Read>(mut input: R) -> Result<CsMat<f64>> {
    let codec = |e: std::io::Error| Error::Codec(format!("truncated triplet stream: {e}"));
    let rows = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
    let cols = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
    let nnz = input.read_u64::<LittleEndian>().map_err(codec)? as usize;
    let mut tri = TriMat::with_capacity((rows, cols), nnz);
    for _ in 0..nnz {
        let r = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
        let c = input.read_u32::<LittleEndian>().map_err(codec)? as usize;
        let v = input.read_f64::<LittleEndian>().map_err(codec)?;
        if r >= rows || c >= cols {
            return Err(Error::Codec(format!(
                "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        tri.add_triplet(r, c, v);
    }
    Ok(tri.to_csr())
}

pub fn save_matrix(path: &Path, mat: &CsMat<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // write-then-rename so a crashed run never leaves a half-written cache entry
    let tmp = path.with_extension("bin.partial");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        write_triplets(&mut out, mat).map_err(|e| Error::io(&tmp, e))?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<CsMat<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_triplets(BufReader::new(file))
}

/// Content hash over everything that determines a cached matrix.
#[derive(Clone, Default)]
pub struct CacheKey {
    hasher: Sha256,
}

impl CacheKey {
    pub fn new(kind: &str) -> Self {
        let mut key = CacheKey::default();
        key.hasher.update(kind.as_bytes());
        key
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        self.bytes(&v.to_bits().to_le_bytes())
    }

    pub fn usize(self, v: usize) -> Self {
        self.bytes(&(v as u64).to_le_bytes())
    }

    pub fn finish(self) -> String {
        hex::encode(&self.hasher.finalize()[..16])
    }
}

/// Directory of triplet files named `<kind>-<key>.bin`.
#[derive(Debug, Clone)]
pub struct MatrixCache {
    dir: PathBuf,
}

impl MatrixCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MatrixCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{kind}-{key}.bin"))
    }

    pub fn load(&self, kind: &str, key: &str) -> Result<Option<CsMat<f64>>> {
        let path = self.path_for(kind, key);
        if !path.exists() {
            return Ok(None);
        }
        match load_matrix(&path) {
            Ok(m) => Ok(Some(m)),
            Err(Error::Codec(msg)) => {
                log::warn!("ignoring unreadable cache entry {}: {msg}", path.display());
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn store(&self, kind: &str, key: &str, mat: &CsMat<f64>) -> Result<()> {
        save_matrix(&self.path_for(kind, key), mat)
    }

    /// Returns the cached matrix, or builds, stores and returns it. The flag
    /// reports whether the cache was hit.
    pub fn get_or_build<F>(&self, kind: &str, key: &str, build: F) -> Result<(CsMat<f64>, bool)>
    where
        F: FnOnce() -> Result<CsMat<f64>>,
    {
        if let Some(m) = self.load(kind, key)? {
            return Ok((m, true));
        }
        let m = build()?;
        self.store(kind, key, &m)?;
        Ok((m, false))
    }
}

/// SHA-256 of the matrix in triplet encoding, hex.
pub fn matrix_digest(mat: &CsMat<f64>) -> String {
    let mut bytes = Vec::new();
    write_triplets(&mut bytes, mat).expect("writing to memory");
    hex::encode(Sha256::digest(&bytes))
}

/// Bitwise equality of shape, sparsity pattern and values.
pub fn bitwise_eq(a: &CsMat<f64>, b: &CsMat<f64>) -> bool {
    a.shape() == b.shape()
        && a.is_csr() == b.is_csr()
        && a.indptr().raw_storage() == b.indptr().raw_storage()
        && a.indices() == b.indices()
        && a.data().len() == b.data().len()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsMat<f64> {
        let mut tri = TriMat::new((3, 4));
        tri.add_triplet(0, 1, 0.5);
        tri.add_triplet(2, 0, 1.0 / 3.0);
        tri.add_triplet(2, 3, 7.25);
        tri.to_csr()
    }

    #[test]
    fn triplet_layout_is_little_endian_records() {
        let mut buf = Vec::new();
        write_triplets(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), 16 + 3 * 16);
        assert_eq!(&buf[0..4], &3u32.to_le_bytes());
        assert_eq!(&buf[4..8], &4u32.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        // first record: (0, 1, 0.5)
        assert_eq!(&buf[16..20], &0u32.to_le_bytes());
        assert_eq!(&buf[20..24], &1u32.to_le_bytes());
        assert_eq!(&buf[24..32], &0.5f64.to_le_bytes());
    }

    #[test]
    fn reload_is_bitwise_identical() {
        let m = sample();
        let mut buf = Vec::new();
        write_triplets(&mut buf, &m).unwrap();
        let back = read_triplets(&buf[..]).unwrap();
        assert!(bitwise_eq(&m, &back));
    }

    #[test]
    fn truncated_stream_is_a_codec_error() {
        let mut buf = Vec::new();
        write_triplets(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_triplets(&buf[..]), Err(Error::Codec(_))));
    }

    #[test]
    fn cache_round_trip_and_hit_flag() {
        let dir = tempfile::tempdir().unwrap();
        let cache = MatrixCache::new(dir.path());
        let key = CacheKey::new("ms").f64(0.1).usize(500).finish();
        let (cold, hit) = cache.get_or_build("ms", &key, || Ok(sample())).unwrap();
        assert!(!hit);
        let (warm, hit) = cache
            .get_or_build("ms", &key, || panic!("must not rebuild"))
            .unwrap();
        assert!(hit);
        assert!(bitwise_eq(&cold, &warm));
    }

    #[test]
    fn cache_keys_differ_by_every_part() {
        let base = CacheKey::new("ms").f64(0.1).usize(500).finish();
        assert_ne!(base, CacheKey::new("mh").f64(0.1).usize(500).finish());
        assert_ne!(base, CacheKey::new("ms").f64(0.2).usize(500).finish());
        assert_ne!(base, CacheKey::new("ms").f64(0.1).usize(501).finish());
    }
}
