pub mod eval;
pub mod finetune_cmd;
pub mod keypoint_cmd;
pub mod pretrain;
pub mod report;
pub mod synth;
