//! Self-supervised visual feature learning from camera-motion supervision.
//!
//! The pipeline: synthesize transformed digit pairs ([`data`]), pretrain a
//! weight-shared two-stream convolutional network to classify the binned
//! relative transform — or a slow-feature contrastive baseline —
//! ([`siamese`]), finetune a classifier head on a few labeled examples and
//! report error rates ([`finetune`]), and score intra-class keypoint
//! matching with receptive-field geometry ([`keypoint`]).
//!
//! The numeric substrate is a small dense-tensor layer set with reverse-mode
//! gradients ([`ops`]), an SGD trainer with step decay ([`optim`]), and a
//! finite-difference checker ([`gradcheck`]).

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod keypoint;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod siamese;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
