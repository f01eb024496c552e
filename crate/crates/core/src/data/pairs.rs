//! Synthetic egomotion pairs: one digit, two random planar transforms.
//!
//! The relative transform of a pair is the component-wise difference of the
//! two absolute transforms. Pairs whose difference falls outside the declared
//! ranges are rejected and resampled, so the binned labels always fit.

use super::bins::{rotation_bin, translation_bin, SFA_MAX_ROT_DEG, SFA_MAX_TRANS};
use super::idx::{Digits, IMG_SIDE};
use super::warp::warp;
use super::PlanarTransform;
use crate::rng::{Stream, StreamKind};

/// Classification targets of one pair: translation bins 0..=6 each, rotation
/// bin 0..=19.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformBins {
    pub tx: usize,
    pub ty: usize,
    pub rot: usize,
}

/// Two views of one digit plus the transform of the second relative to the
/// first and its binned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoPair {
    pub img_a: Vec<f32>,
    pub img_b: Vec<f32>,
    pub rel: PlanarTransform,
    pub bins: TransformBins,
}

/// Two views plus the similar/dissimilar flag for the slow-feature loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SfaPair {
    pub img_a: Vec<f32>,
    pub img_b: Vec<f32>,
    pub similar: bool,
}

fn sample_pair_transforms(stream: &mut Stream) -> (PlanarTransform, PlanarTransform) {
    loop {
        let a = PlanarTransform::sample(stream);
        let b = PlanarTransform::sample(stream);
        if a.relative_to(&b).in_range() {
            return (a, b);
        }
    }
}

fn bins_of(rel: &PlanarTransform) -> TransformBins {
    TransformBins {
        tx: translation_bin(rel.tx),
        ty: translation_bin(rel.ty),
        rot: rotation_bin(rel.theta_deg),
    }
}

/// Whether a relative transform counts as temporally close for the
/// slow-feature loss.
pub(crate) fn sfa_similar(rel: &PlanarTransform) -> bool {
    rel.tx.abs() <= SFA_MAX_TRANS
        && rel.ty.abs() <= SFA_MAX_TRANS
        && rel.theta_deg.abs() <= SFA_MAX_ROT_DEG
}

/// Builds one egomotion pair from a digit image.
pub fn make_ego_pair(digit: &[f32], stream: &mut Stream) -> EgoPair {
    let (ta, tb) = sample_pair_transforms(stream);
    let rel = ta.relative_to(&tb);
    EgoPair {
        img_a: warp(digit, IMG_SIDE, &ta),
        img_b: warp(digit, IMG_SIDE, &tb),
        bins: bins_of(&rel),
        rel,
    }
}

/// Builds one slow-feature pair from a digit image.
pub fn make_sfa_pair(digit: &[f32], stream: &mut Stream) -> SfaPair {
    let (ta, tb) = sample_pair_transforms(stream);
    let rel = ta.relative_to(&tb);
    SfaPair {
        img_a: warp(digit, IMG_SIDE, &ta),
        img_b: warp(digit, IMG_SIDE, &tb),
        similar: sfa_similar(&rel),
    }
}

/// Streaming pair generator: pair `i` is a pure function of `(seed, i)`, so
/// any count can be walked without materializing the dataset and shards can
/// be produced independently.
pub struct PairStream<'a> {
    digits: &'a Digits,
    seed: u64,
    next: u64,
    count: u64,
}

impl<'a> PairStream<'a> {
    pub fn new(digits: &'a Digits, seed: u64, count: u64) -> Self {
        assert!(!digits.is_empty(), "pair stream needs a non-empty dataset");
        PairStream {
            digits,
            seed,
            next: 0,
            count,
        }
    }

    /// The egomotion pair at a given index.
    pub fn ego_at(&self, index: u64) -> EgoPair {
        let mut s = Stream::indexed(self.seed, StreamKind::Pairs, index);
        let digit = self.digits.image(self.pick_digit(&mut s));
        make_ego_pair(digit, &mut s)
    }

    /// The slow-feature pair at a given index.
    pub fn sfa_at(&self, index: u64) -> SfaPair {
        let mut s = Stream::indexed(self.seed, StreamKind::Pairs, index);
        let digit = self.digits.image(self.pick_digit(&mut s));
        make_sfa_pair(digit, &mut s)
    }

    fn pick_digit(&self, s: &mut Stream) -> usize {
        s.next_i32_in(0, self.digits.len() as i32 - 1) as usize
    }

    pub fn remaining(&self) -> u64 {
        self.count - self.next
    }
}

impl<'a> Iterator for PairStream<'a> {
    type Item = EgoPair;

    fn next(&mut self) -> Option<EgoPair> {
        if self.next >= self.count {
            return None;
        }
        let pair = self.ego_at(self.next);
        self.next += 1;
        Some(pair)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining() as usize;
        (n, Some(n))
    }
}
