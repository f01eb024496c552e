//! SGD with momentum and a step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};

/// Step-decay schedule: the effective learning rate at iteration `t` is
/// `base_lr * decay_factor^floor(t / decay_every)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl SgdSchedule {
    /// Pretraining defaults: lr 0.01 halved every 10K iterations, 40K
    /// iterations of 125-pair batches, momentum 0.9.
    pub fn pretrain_default() -> Self {
        Self {
            base_lr: 0.01,
            decay_factor: 0.5,
            decay_every: 10_000,
            total_iters: 40_000,
            batch_size: 125,
            momentum: 0.9,
        }
    }

    /// Finetuning defaults: constant lr 0.01 for 4K iterations of
    /// 125-example batches.
    pub fn finetune_default() -> Self {
        Self {
            base_lr: 0.01,
            decay_factor: 1.0,
            decay_every: u64::MAX,
            total_iters: 4_000,
            batch_size: 125,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "decay_every and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.base_lr * self.decay_factor.powi((iteration / self.decay_every) as i32)
    }
}

/// One momentum-SGD update on a single parameter tensor:
/// `v <- momentum*v + g; p <- p - lr(t)*v`.
///
/// A non-finite gradient aborts with the iteration index.
pub fn sgd_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    schedule: &SgdSchedule,
    iteration: u64,
) -> Result<()> {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), velocity.len());
    if iteration >= schedule.total_iters {
        return Err(Error::Config(format!(
            "iteration {iteration} outside schedule of {} iterations",
            schedule.total_iters
        )));
    }
    let lr = T::from_f64(schedule.lr_at(iteration));
    let momentum = T::from_f64(schedule.momentum);
    let mut checksum = T::zero();
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        checksum = checksum + g;
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
    if !checksum.is_finite() {
        return Err(Error::TrainingAbort {
            iteration,
            msg: "non-finite gradient".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_halves_every_10k() {
        let s = SgdSchedule {
            base_lr: 0.01,
            decay_factor: 0.5,
            decay_every: 10_000,
            total_iters: 40_000,
            batch_size: 125,
            momentum: 0.9,
        };
        assert_eq!(s.lr_at(0), 0.01);
        assert_eq!(s.lr_at(9_999), 0.01);
        assert_eq!(s.lr_at(10_000), 0.005);
        assert_eq!(s.lr_at(39_999), 0.00125);
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let s = SgdSchedule {
            momentum: 0.0,
            ..SgdSchedule::finetune_default()
        };
        let mut p = [1.0f64, -2.0];
        let g = [0.5, 0.25];
        let mut v = [0.0, 0.0];
        sgd_step(&mut p, &g, &mut v, &s, 0).unwrap();
        assert_eq!(p, [1.0 - 0.01 * 0.5, -2.0 - 0.01 * 0.25]);
    }

    #[test]
    fn momentum_three_steps_match_hand_unrolled_recurrence() {
        let s = SgdSchedule {
            base_lr: 0.1,
            decay_factor: 1.0,
            decay_every: u64::MAX,
            total_iters: 10,
            batch_size: 1,
            momentum: 0.9,
        };
        let grads = [1.0f64, -0.5, 2.0];
        let mut p = [3.0f64];
        let mut v = [0.0f64];
        for (i, g) in grads.iter().enumerate() {
            sgd_step(&mut p, &[*g], &mut v, &s, i as u64).unwrap();
        }
        // hand unroll: v1 = 1.0, p1 = 3 - .1*1
        //              v2 = .9*1 - .5 = .4, p2 = p1 - .1*.4
        //              v3 = .9*.4 + 2 = 2.36, p3 = p2 - .1*2.36
        let want = 3.0 - 0.1 * 1.0 - 0.1 * 0.4 - 0.1 * 2.36;
        assert!((p[0] - want).abs() < 1e-15, "{} vs {want}", p[0]);
    }

    #[test]
    fn non_finite_gradient_aborts_with_iteration() {
        let s = SgdSchedule::finetune_default();
        let mut p = [1.0f64];
        let mut v = [0.0f64];
        match sgd_step(&mut p, &[f64::NAN], &mut v, &s, 7) {
            Err(Error::TrainingAbort { iteration: 7, .. }) => {}
            other => panic!("expected abort at iteration 7, got {other:?}"),
        }
    }

    #[test]
    fn iteration_outside_schedule_is_rejected() {
        let s = SgdSchedule::finetune_default();
        let mut p = [1.0f64];
        let mut v = [0.0f64];
        assert!(sgd_step(&mut p, &[0.0], &mut v, &s, 4_000).is_err());
    }
}
