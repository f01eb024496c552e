//! Dataset ingestion and synthetic pair generation.
//!
//! Digit images are warped with random planar transforms to emulate a camera
//! moving over the canvas; the relative transform between the two views of a
//! pair is binned into classification targets. The binning rules for the
//! driving-sequence setups (3-dimension / 20-bin and 6-DoF / 10+2-bin) and
//! the frame-pair selection rule live here as pure functions.

mod bins;
mod idx;
mod pairs;
mod poses;
mod records;
mod warp;

pub use bins::{
    bin_kitti, bin_sf, rotation_bin, select_frame_pairs, sf_rotation_bin, translation_bin,
    BinEdges, KittiBinEdges, SfBinEdges, KITTI_BINS, ROTATION_BINS, ROTATION_BIN_WIDTH_DEG,
    SFA_MAX_ROT_DEG, SFA_MAX_TRANS, SF_INTERIOR_BINS, SF_ROTATION_LIMIT_DEG,
    SF_TRANSLATION_BINS, TRANSLATION_BINS,
};
pub use idx::{load_idx, Digits, IMG_AREA, IMG_SIDE};
pub use pairs::{make_ego_pair, make_sfa_pair, EgoPair, PairStream, SfaPair, TransformBins};
pub use poses::parse_pose_log;
pub use records::{
    read_pair_records, sidecar_path, write_pair_records, PairMode, PairRecord,
    PairRecordReader, PairSidecar,
};
pub use warp::warp;

use serde::{Deserialize, Serialize};

/// One grayscale digit: 28x28 pixels in [0,1] plus its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitImage {
    pub pixels: Vec<f32>,
    pub label: u8,
}

/// An in-plane camera transform: integer pixel translations in [-3,3] and a
/// rotation in degrees within [-30,30]. Sampled transforms always satisfy
/// those ranges; the warp itself is total and accepts anything (geometry
/// tests use larger rotations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub tx: i32,
    pub ty: i32,
    pub theta_deg: f64,
}

pub const MAX_TRANS: i32 = 3;
pub const MAX_ROT_DEG: f64 = 30.0;

impl PlanarTransform {
    pub const IDENTITY: PlanarTransform = PlanarTransform {
        tx: 0,
        ty: 0,
        theta_deg: 0.0,
    };

    pub fn in_range(&self) -> bool {
        self.tx.abs() <= MAX_TRANS
            && self.ty.abs() <= MAX_TRANS
            && self.theta_deg.abs() <= MAX_ROT_DEG
            && self.theta_deg.is_finite()
    }

    /// Uniform draw: translations over the 7 integers, rotation over
    /// [-30, 30) degrees.
    pub fn sample(stream: &mut crate::rng::Stream) -> PlanarTransform {
        PlanarTransform {
            tx: stream.next_i32_in(-MAX_TRANS, MAX_TRANS),
            ty: stream.next_i32_in(-MAX_TRANS, MAX_TRANS),
            theta_deg: stream.next_f64_in(-MAX_ROT_DEG, MAX_ROT_DEG),
        }
    }

    /// Component-wise difference `other - self`.
    pub fn relative_to(&self, other: &PlanarTransform) -> PlanarTransform {
        PlanarTransform {
            tx: other.tx - self.tx,
            ty: other.ty - self.ty,
            theta_deg: other.theta_deg - self.theta_deg,
        }
    }
}

/// A 6-DoF rigid transform: Euler angles in degrees about the X (horizontal,
/// image plane), Y (vertical, image plane) and Z (optical) axes, plus
/// translations along the same axes in dataset units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform6DoF {
    pub euler_deg: [f64; 3],
    pub trans: [f64; 3],
}

impl Transform6DoF {
    pub fn is_finite(&self) -> bool {
        self.euler_deg.iter().chain(&self.trans).all(|v| v.is_finite())
    }
}
