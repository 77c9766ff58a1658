//! Milestone learning-rate schedule and the Adam optimizer.
//!
//! The schedule multiplies the learning rate by `gamma` after each listed
//! milestone epoch (epochs are 1-based): with milestones `[5, 45]` and
//! `gamma = 0.1`, epochs 1-5 run at the initial rate, 6-45 at one decay,
//! 46 onward at two.
//!
//! # Decimal-exact decay
//!
//! Learning-rate schedules are stated in decimal (`1e-5` decayed by `0.1`
//! is universally read as `1e-6`), but no binary-float product chain
//! reproduces that: `1e-5 * 0.1` rounds to `1.0000000000000002e-6`, one ulp
//! away from the `1e-6` literal. [`MilestoneSchedule::lr_at`] therefore
//! computes the decayed rate in exact decimal arithmetic — the initial rate
//! and gamma are taken as the shortest decimal strings that round-trip
//! their `f64` values, multiplied as integer mantissas, and converted back
//! to `f64` once (correctly rounded). Plain float products are the fallback
//! only if the exact mantissa product would overflow 128 bits, which cannot
//! happen for schedules with few milestones and round decimal constants.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math;

/// Errors from schedule construction and queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    /// Initial learning rate must be finite and positive.
    InvalidInitialLr,
    /// Gamma must be finite and positive.
    InvalidGamma,
    /// Milestones must be strictly increasing and at least 1.
    InvalidMilestones,
    /// Epochs are 1-based; epoch 0 has no learning rate.
    EpochZero,
}

impl core::fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ScheduleError::InvalidInitialLr => write!(f, "initial learning rate must be finite and > 0"),
            ScheduleError::InvalidGamma => write!(f, "schedule gamma must be finite and > 0"),
            ScheduleError::InvalidMilestones => {
                write!(f, "milestones must be strictly increasing and at least 1")
            }
            ScheduleError::EpochZero => write!(f, "epochs are 1-based; epoch 0 has no learning rate"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ScheduleError {}

/// Step-decay learning-rate schedule over 1-based epochs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MilestoneSchedule {
    initial_lr: f64,
    milestones: Vec<u32>,
    gamma: f64,
}

impl MilestoneSchedule {
    /// Validate and construct a schedule.
    pub fn new(initial_lr: f64, milestones: Vec<u32>, gamma: f64) -> Result<Self, ScheduleError> {
        if !(initial_lr.is_finite() && initial_lr > 0.0) {
            return Err(ScheduleError::InvalidInitialLr);
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(ScheduleError::InvalidGamma);
        }
        let increasing = milestones.windows(2).all(|w| w[0] < w[1]);
        if !increasing || milestones.first().is_some_and(|&m| m == 0) {
            return Err(ScheduleError::InvalidMilestones);
        }
        Ok(MilestoneSchedule { initial_lr, milestones, gamma })
    }

    /// The rate before any decay.
    pub fn initial_lr(&self) -> f64 {
        self.initial_lr
    }

    /// Milestone epochs (decay applies to epochs after each).
    pub fn milestones(&self) -> &[u32] {
        &self.milestones
    }

    /// Multiplicative decay factor.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn lr_at(&self, epoch: u32) -> Result<f64, ScheduleError> {
        if epoch == 0 {
            return Err(ScheduleError::EpochZero);
        }
        let decays = self.milestones.iter().filter(|&&m| epoch > m).count() as u32;
        Ok(decayed_rate(self.initial_lr, self.gamma, decays))
    }
}

/// `initial * gamma^decays` computed with decimal semantics (see module docs).
fn decayed_rate(initial: f64, gamma: f64, decays: u32) -> f64 {
    if decays == 0 {
        return initial;
    }
    if let (Some((mi, ei)), Some((mg, eg))) = (decimal_parts(initial), decimal_parts(gamma)) {
        let mut mantissa = Some(mi);
        for _ in 0..decays {
            mantissa = mantissa.and_then(|m| m.checked_mul(mg));
        }
        if let Some(m) = mantissa {
            let exp = ei as i64 + eg as i64 * decays as i64;
            if let Ok(v) = format!("{m}e{exp}").parse::<f64>() {
                if v.is_finite() {
                    return v;
                }
            }
        }
    }
    // Fallback: plain float products (mantissa overflow or degenerate parse).
    let mut lr = initial;
    for _ in 0..decays {
        lr *= gamma;
    }
    lr
}

/// Shortest-round-trip decimal decomposition of a positive float:
/// `x = mantissa * 10^exp` exactly.
fn decimal_parts(x: f64) -> Option<(u128, i32)> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    // `{:e}` prints the shortest decimal that round-trips, e.g. "8.75e-4".
    let s = format!("{x:e}");
    let (mant_str, exp_str) = s.split_once('e')?;
    let exp: i32 = exp_str.parse().ok()?;
    let (int_part, frac_part) = match mant_str.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mant_str, ""),
    };
    let digits: String = int_part.chars().chain(frac_part.chars()).collect();
    let mantissa: u128 = digits.parse().ok()?;
    Some((mantissa, exp - frac_part.len() as i32))
}

/// Adam optimizer state over a flat parameter store.
///
/// Only indices inside the `trainable` ranges passed to [`Adam::step`] are
/// touched: frozen regions keep their parameter values *and* their moment
/// estimates bit-identical. Ranges must be disjoint.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    beta1_power: f64,
    beta2_power: f64,
}

impl Adam {
    /// Fresh state with the standard hyperparameters
    /// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8).
    pub fn new(len: usize) -> Self {
        Adam::with_hyperparams(len, 0.9, 0.999, 1e-8)
    }

    /// Fresh state with explicit hyperparameters.
    pub fn with_hyperparams(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            steps: 0,
            beta1_power: 1.0,
            beta2_power: 1.0,
        }
    }

    /// Rebuild state from checkpointed moments, step count and the running
    /// `beta^t` products (stored rather than recomputed so a resumed run is
    /// bit-identical to an uninterrupted one).
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        m: Vec<f64>,
        v: Vec<f64>,
        steps: u64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        beta1_power: f64,
        beta2_power: f64,
    ) -> Self {
        assert_eq!(m.len(), v.len(), "moment vectors must have equal length");
        Adam { beta1, beta2, epsilon, m, v, steps, beta1_power, beta2_power }
    }

    /// Number of parameters covered.
    pub fn len(&self) -> usize {
        self.m.len()
    }

    /// True when covering zero parameters.
    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Update steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// First-moment estimates.
    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    /// Second-moment estimates.
    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    /// `(beta1, beta2, epsilon)`.
    pub fn hyperparams(&self) -> (f64, f64, f64) {
        (self.beta1, self.beta2, self.epsilon)
    }

    /// Running `(beta1^t, beta2^t)` products (checkpointed for exact resume).
    pub fn beta_powers(&self) -> (f64, f64) {
        (self.beta1_power, self.beta2_power)
    }

    /// One bias-corrected update of the trainable ranges.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, trainable: &[Range<usize>]) {
        assert_eq!(theta.len(), self.m.len(), "parameter vector length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient vector length changed");
        self.steps += 1;
        self.beta1_power *= self.beta1;
        self.beta2_power *= self.beta2;
        let m_corr = 1.0 / (1.0 - self.beta1_power);
        let v_corr = 1.0 / (1.0 - self.beta2_power);
        for range in trainable {
            for i in range.clone() {
                let g = grad[i];
                let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let m_hat = m * m_corr;
                let v_hat = v * v_corr;
                theta[i] -= lr * m_hat / (math::sqrt(v_hat) + self.epsilon);
            }
        }
    }
}
