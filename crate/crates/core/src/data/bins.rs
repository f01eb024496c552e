//! Transform binning rules and frame-pair selection, as pure functions.
//!
//! All bins are half-open `[lo, hi)` intervals indexed by
//! `floor((v - lo)/width)`, clamped into the valid index range, so interior
//! edge values land in the bin that starts at them and the top endpoint
//! clamps into the last bin.

use super::Transform6DoF;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Translation bins for in-plane digit pairs: the 7 integers -3..=3.
pub const TRANSLATION_BINS: usize = 7;
/// Rotation bins for in-plane digit pairs: 20 bins of 3 degrees over [-30,30).
pub const ROTATION_BINS: usize = 20;
pub const ROTATION_BIN_WIDTH_DEG: f64 = 3.0;

/// In-plane similarity thresholds for the slow-feature pairs.
pub const SFA_MAX_TRANS: i32 = 1;
pub const SFA_MAX_ROT_DEG: f64 = 3.0;

/// Bin count per dimension of the 3-dimension driving-sequence scheme.
pub const KITTI_BINS: usize = 20;
/// 6-DoF scheme: interior rotation bins between the +/-30 degree limits,
/// plus one overflow bin on each side.
pub const SF_INTERIOR_BINS: usize = 10;
pub const SF_ROTATION_LIMIT_DEG: f64 = 30.0;
pub const SF_TRANSLATION_BINS: usize = 10;

/// tx in [-3,3] maps to bins 0..=6 by a shift.
pub fn translation_bin(t: i32) -> usize {
    debug_assert!(t.abs() <= 3, "translation {t} outside [-3,3]");
    (t + 3) as usize
}

/// theta in degrees maps to 20 half-open 3-degree bins over [-30,30); +30
/// clamps into bin 19.
pub fn rotation_bin(theta_deg: f64) -> usize {
    let raw = ((theta_deg + 30.0) / ROTATION_BIN_WIDTH_DEG).floor();
    (raw.max(0.0) as usize).min(ROTATION_BINS - 1)
}

/// Uniformly spaced half-open bins over [lo, hi), out-of-range values
/// clamping into the end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinEdges {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || bins == 0 {
            return Err(Error::Config(format!(
                "invalid bin edges [{lo}, {hi}) x {bins}"
            )));
        }
        Ok(BinEdges { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn index_of(&self, v: f64) -> Result<usize> {
        if !v.is_finite() {
            return Err(Error::Value(format!("non-finite value {v} in binning")));
        }
        let raw = ((v - self.lo) / self.width()).floor();
        Ok((raw.max(0.0) as usize).min(self.bins - 1))
    }
}

/// Edge configuration for the 3-dimension scheme. Computed offline from the
/// dataset's transform statistics and supplied through config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KittiBinEdges {
    pub trans_z: BinEdges,
    pub trans_x: BinEdges,
    pub rot_y: BinEdges,
}

/// Translation edges for the 6-DoF scheme (rotation edges are fixed at
/// +/-30 degrees by the method).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfBinEdges {
    pub trans: [BinEdges; 3],
}

/// 3-dimension binning: only forward translation (Z), lateral translation
/// (X) and yaw (rotation about Y) carry signal in driving sequences; each is
/// binned into 20 uniform bins.
pub fn bin_kitti(t: &Transform6DoF, edges: &KittiBinEdges) -> Result<[usize; 3]> {
    if !t.is_finite() {
        return Err(Error::Value("non-finite transform".into()));
    }
    Ok([
        edges.trans_z.index_of(t.trans[2])?,
        edges.trans_x.index_of(t.trans[0])?,
        edges.rot_y.index_of(t.euler_deg[1])?,
    ])
}

/// Rotation binning for the 6-DoF scheme: 10 uniform bins over
/// [-30, 30] degrees with bin 0 reserved for angles below -30 and bin 11 for
/// angles above +30.
pub fn sf_rotation_bin(deg: f64) -> usize {
    if deg < -SF_ROTATION_LIMIT_DEG {
        return 0;
    }
    if deg > SF_ROTATION_LIMIT_DEG {
        return SF_INTERIOR_BINS + 1;
    }
    let width = 2.0 * SF_ROTATION_LIMIT_DEG / SF_INTERIOR_BINS as f64;
    let raw = ((deg + SF_ROTATION_LIMIT_DEG) / width).floor() as usize;
    1 + raw.min(SF_INTERIOR_BINS - 1)
}

/// 6-DoF binning: indices ordered [rot_x, rot_y, rot_z, trans_x, trans_y,
/// trans_z]. Rotations use the fixed 10+2 scheme, translations 10 uniform
/// bins from the supplied edges.
pub fn bin_sf(t: &Transform6DoF, edges: &SfBinEdges) -> Result<[usize; 6]> {
    if !t.is_finite() {
        return Err(Error::Value("non-finite transform".into()));
    }
    Ok([
        sf_rotation_bin(t.euler_deg[0]),
        sf_rotation_bin(t.euler_deg[1]),
        sf_rotation_bin(t.euler_deg[2]),
        edges.trans[0].index_of(t.trans[0])?,
        edges.trans[1].index_of(t.trans[1])?,
        edges.trans[2].index_of(t.trans[2])?,
    ])
}

/// All ordered frame pairs (i, j) with `1 <= j - i <= max_gap`. Doubles as
/// the closeness rule for slow-feature labeling on sequences.
pub fn select_frame_pairs(n_frames: usize, max_gap: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n_frames {
        for j in i + 1..n_frames.min(i + max_gap + 1) {
            out.push((i, j));
        }
    }
    out
}
