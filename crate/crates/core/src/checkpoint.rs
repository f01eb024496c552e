//! Training checkpoint container.
//!
//! Byte layout (all integers little-endian), stable across versions:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"EGOCKPT1"
//! 8       8     u64 iteration counter
//! 16      32    dropout RNG seed (ChaCha8 key)
//! 48      8     u64 dropout RNG stream id
//! 56      16    u128 dropout RNG word position
//! 72      4     u32 entry count N
//! ----    per entry, N times:
//!         4     u32 name length L
//!         L     name (UTF-8)
//!         4     u32 dimension count D
//!         8*D   u64 extents, outermost first
//!         4*n   f32 row-major payload, n = product of extents
//! ```
//!
//! Parameter entries are named `<net>.<layer>.<kind>` (e.g. `bcnn.conv0.w`);
//! momentum state is stored alongside under `v:<name>`. Writes go to a
//! temporary file in the target directory and are renamed into place.

use crate::error::{Error, Result};
use crate::rng::StreamState;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"EGOCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub rng: StreamState,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".into())
        ));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&self.iteration.to_le_bytes())?;
            w.write_all(&self.rng.seed)?;
            w.write_all(&self.rng.stream.to_le_bytes())?;
            w.write_all(&self.rng.word_pos.to_le_bytes())?;
            w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
            for e in &self.entries {
                let expect: usize = e.shape.iter().product();
                if expect != e.data.len() {
                    return Err(Error::dimension(
                        "param",
                        format!("entry `{}` shape/payload mismatch", e.name),
                    ));
                }
                w.write_all(&(e.name.len() as u32).to_le_bytes())?;
                w.write_all(e.name.as_bytes())?;
                w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
                for &d in &e.shape {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for &v in &e.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = Offset {
            inner: BufReader::new(File::open(path)?),
            at: 0,
        };
        let mut magic = [0u8; 8];
        r.read_checked(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:02x?}")));
        }
        let iteration = r.u64()?;
        let mut seed = [0u8; 32];
        r.read_checked(&mut seed)?;
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            if name_len > 4096 {
                return Err(Error::format(r.at, format!("name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            r.read_checked(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format(r.at, "name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::format(r.at, format!("{ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            if n > (1 << 31) {
                return Err(Error::format(r.at, format!("payload of {n} values")));
            }
            let mut bytes = vec![0u8; n * 4];
            r.read_checked(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(CheckpointEntry { name, shape, data });
        }
        Ok(Checkpoint {
            iteration,
            rng: StreamState {
                seed,
                stream,
                word_pos,
            },
            entries,
        })
    }
}

struct Offset<R> {
    inner: R,
    at: u64,
}

impl<R: Read> Offset<R> {
    fn read_checked(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            Error::format(self.at, format!("truncated payload ({e})"))
        })?;
        self.at += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_checked(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_checked(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.read_checked(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            iteration: 1234,
            rng: StreamState {
                seed: [7u8; 32],
                stream: 99,
                word_pos: 1 << 40,
            },
            entries: vec![
                CheckpointEntry {
                    name: "bcnn.conv0.w".into(),
                    shape: vec![2, 1, 3, 3],
                    data: (0..18).map(|i| i as f32 * 0.5).collect(),
                },
                CheckpointEntry {
                    name: "v:bcnn.conv0.w".into(),
                    shape: vec![2, 1, 3, 3],
                    data: vec![0.0; 18],
                },
            ],
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn bad_magic_is_a_format_error_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxxxxxx").unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_the_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        std::fs::write(&path, cut).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Format { offset, .. }) => assert!(offset > 72),
            other => panic!("{other:?}"),
        }
    }
}
