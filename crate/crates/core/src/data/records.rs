//! On-disk pair dataset: a binary record stream plus a JSON sidecar.
//!
//! Stream layout (integers little-endian, floats IEEE-754 LE):
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"EGOPAIR1"
//! 8       1     mode: 0 = egomotion, 1 = slow-feature
//! 9       8     u64 record count
//! ----    per record:
//!         3136  784 f32, first image
//!         3136  784 f32, second image
//!         1     i8 relative tx
//!         1     i8 relative ty
//!         8     f64 relative rotation (degrees)
//!         1     u8 tx bin
//!         1     u8 ty bin
//!         1     u8 rotation bin
//!         1     u8 similar flag (0/1)
//! ```
//!
//! The sidecar records the generator seed, the transform ranges, the bin
//! layout and the similarity thresholds so a stream is self-describing.

use super::pairs::{sfa_similar, EgoPair, SfaPair, TransformBins};
use super::{PlanarTransform, MAX_ROT_DEG, MAX_TRANS};
use crate::data::bins::{
    ROTATION_BINS, ROTATION_BIN_WIDTH_DEG, SFA_MAX_ROT_DEG, SFA_MAX_TRANS, TRANSLATION_BINS,
};
use crate::data::IMG_AREA;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"EGOPAIR1";

/// One stored pair; covers both modes (the similar flag is derived from the
/// relative transform either way).
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub img_a: Vec<f32>,
    pub img_b: Vec<f32>,
    pub rel: PlanarTransform,
    pub bins: TransformBins,
    pub similar: bool,
}

impl From<EgoPair> for PairRecord {
    fn from(p: EgoPair) -> Self {
        let similar = sfa_similar(&p.rel);
        PairRecord {
            img_a: p.img_a,
            img_b: p.img_b,
            rel: p.rel,
            bins: p.bins,
            similar,
        }
    }
}

impl PairRecord {
    pub fn ego_labels(&self) -> TransformBins {
        self.bins
    }

    pub fn to_sfa(&self) -> SfaPair {
        SfaPair {
            img_a: self.img_a.clone(),
            img_b: self.img_b.clone(),
            similar: self.similar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Egomotion,
    Sfa,
}

/// JSON sidecar written next to every record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSidecar {
    pub mode: PairMode,
    pub count: u64,
    pub seed: u64,
    pub translation_range: [i32; 2],
    pub rotation_range_deg: [f64; 2],
    pub translation_bins: usize,
    pub rotation_bins: usize,
    pub rotation_bin_width_deg: f64,
    pub sfa_max_translation: i32,
    pub sfa_max_rotation_deg: f64,
}

impl PairSidecar {
    pub fn new(mode: PairMode, count: u64, seed: u64) -> Self {
        PairSidecar {
            mode,
            count,
            seed,
            translation_range: [-MAX_TRANS, MAX_TRANS],
            rotation_range_deg: [-MAX_ROT_DEG, MAX_ROT_DEG],
            translation_bins: TRANSLATION_BINS,
            rotation_bins: ROTATION_BINS,
            rotation_bin_width_deg: ROTATION_BIN_WIDTH_DEG,
            sfa_max_translation: SFA_MAX_TRANS,
            sfa_max_rotation_deg: SFA_MAX_ROT_DEG,
        }
    }
}

/// Writes a record stream and its sidecar (`<path>` and `<path>.json`).
pub fn write_pair_records(
    path: &Path,
    mode: PairMode,
    seed: u64,
    records: impl Iterator<Item = PairRecord>,
) -> Result<PairSidecar> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[match mode {
        PairMode::Egomotion => 0u8,
        PairMode::Sfa => 1u8,
    }])?;
    // count patched after the walk
    w.write_all(&0u64.to_le_bytes())?;
    let mut count = 0u64;
    for r in records {
        debug_assert_eq!(r.img_a.len(), IMG_AREA);
        debug_assert_eq!(r.img_b.len(), IMG_AREA);
        for &v in r.img_a.iter().chain(&r.img_b) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[r.rel.tx as i8 as u8, r.rel.ty as i8 as u8])?;
        w.write_all(&r.rel.theta_deg.to_le_bytes())?;
        w.write_all(&[
            r.bins.tx as u8,
            r.bins.ty as u8,
            r.bins.rot as u8,
            r.similar as u8,
        ])?;
        count += 1;
    }
    w.flush()?;
    drop(w);
    // patch the count in the header
    {
        use std::io::{Seek, SeekFrom};
        let mut f = std::fs::OpenOptions::new().write(true).open(path)?;
        f.seek(SeekFrom::Start(9))?;
        f.write_all(&count.to_le_bytes())?;
    }
    let sidecar = PairSidecar::new(mode, count, seed);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(sidecar)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Streaming reader over a pair record file.
pub struct PairRecordReader {
    inner: BufReader<File>,
    at: u64,
    pub mode: PairMode,
    pub count: u64,
    read: u64,
}

impl PairRecordReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut inner = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        inner
            .read_exact(&mut magic)
            .map_err(|e| Error::format(0, format!("truncated header ({e})")))?;
        if &magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:02x?}")));
        }
        let mut mode_b = [0u8; 1];
        inner
            .read_exact(&mut mode_b)
            .map_err(|e| Error::format(8, format!("truncated header ({e})")))?;
        let mode = match mode_b[0] {
            0 => PairMode::Egomotion,
            1 => PairMode::Sfa,
            m => return Err(Error::format(8, format!("unknown mode {m}"))),
        };
        let mut count_b = [0u8; 8];
        inner
            .read_exact(&mut count_b)
            .map_err(|e| Error::format(9, format!("truncated header ({e})")))?;
        Ok(PairRecordReader {
            inner,
            at: 17,
            mode,
            count: u64::from_le_bytes(count_b),
            read: 0,
        })
    }

    fn read_record(&mut self) -> Result<PairRecord> {
        let mut img = vec![0u8; IMG_AREA * 4 * 2];
        self.inner
            .read_exact(&mut img)
            .map_err(|e| Error::format(self.at, format!("truncated record ({e})")))?;
        self.at += img.len() as u64;
        let floats: Vec<f32> = img
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut tail = [0u8; 2 + 8 + 4];
        self.inner
            .read_exact(&mut tail)
            .map_err(|e| Error::format(self.at, format!("truncated record ({e})")))?;
        self.at += tail.len() as u64;
        let theta = f64::from_le_bytes(tail[2..10].try_into().unwrap());
        Ok(PairRecord {
            img_a: floats[..IMG_AREA].to_vec(),
            img_b: floats[IMG_AREA..].to_vec(),
            rel: PlanarTransform {
                tx: tail[0] as i8 as i32,
                ty: tail[1] as i8 as i32,
                theta_deg: theta,
            },
            bins: TransformBins {
                tx: tail[10] as usize,
                ty: tail[11] as usize,
                rot: tail[12] as usize,
            },
            similar: tail[13] != 0,
        })
    }
}

impl Iterator for PairRecordReader {
    type Item = Result<PairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.count {
            return None;
        }
        self.read += 1;
        Some(self.read_record())
    }
}

/// Loads a whole stream into memory (small datasets and tests).
pub fn read_pair_records(path: &Path) -> Result<(PairMode, Vec<PairRecord>)> {
    let reader = PairRecordReader::open(path)?;
    let mode = reader.mode;
    let records: Result<Vec<_>> = reader.collect();
    Ok((mode, records?))
}
