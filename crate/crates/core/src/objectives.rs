//! Loss algebra for the two-branch objective.
//!
//! * main loss: cross-entropy of the global-branch logits against ground truth;
//! * teacher label: per-row argmax of the global logits (a constant target);
//! * distillation loss: focal loss of the local-branch logits against the
//!   teacher label when the training set has at most `n_min` images per class,
//!   cross-entropy otherwise;
//! * total: `0.5 * main + alpha * 0.5 * dist`.
//!
//! All losses are batch means. Each loss has a `*_with_grad` twin returning
//! `d(loss)/d(logits)` for the backward pass.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;

pub const MAIN_WEIGHT: f64 = 0.5;
pub const DIST_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub n_min: usize,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            n_min: 20,
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.n_min < 1 {
            return Err(Error::Config("n_min must be >= 1".into()));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistVariant {
    Focal,
    CrossEntropy,
}

impl fmt::Display for DistVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistVariant::Focal => "focal",
            DistVariant::CrossEntropy => "cross_entropy",
        })
    }
}

impl FromStr for DistVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "focal" => Ok(DistVariant::Focal),
            "cross_entropy" => Ok(DistVariant::CrossEntropy),
            _ => Err(Error::Validation(format!("unknown distillation variant {s:?}"))),
        }
    }
}

/// One training step's losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub l_main: f64,
    pub l_dist: f64,
    pub total: f64,
    /// `None` when the step had no distillation term (vanilla training).
    pub dist_variant: Option<DistVariant>,
    pub n_im_per_class: usize,
}

fn check_batch<T: Real>(logits: &ArrayView2<T>, labels: &[usize]) -> Result<()> {
    let (n, c) = logits.dim();
    if n == 0 || c == 0 {
        return Err(Error::Validation("empty logits".into()));
    }
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    Ok(())
}

/// `(log_softmax(row), softmax(row))`, stabilized by max subtraction.
fn log_softmax_row<T: Real>(row: ArrayView1<T>) -> (Vec<T>, Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    let logp: Vec<T> = row.iter().map(|&z| z - lse).collect();
    let p = logp.iter().map(|&l| l.exp()).collect();
    (logp, p)
}

pub fn cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> Result<T> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

pub fn cross_entropy_with_grad<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    focal_loss_with_grad(logits, labels, T::zero())
}

pub fn focal_loss<T: Real>(logits: ArrayView2<T>, labels: &[usize], gamma: T) -> Result<T> {
    focal_loss_with_grad(logits, labels, gamma).map(|(l, _)| l)
}

/// Mean of `-(1 - p_t)^gamma * ln(p_t)`; `gamma = 0` is cross-entropy.
pub fn focal_loss_with_grad<T: Real>(
    logits: ArrayView2<T>,
    labels: &[usize],
    gamma: T,
) -> Result<(T, Array2<T>)> {
    check_batch(&logits, labels)?;
    let (n, c) = logits.dim();
    let inv_n = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    let mut grad = Array2::<T>::zeros((n, c));
    for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        let (logp, p) = log_softmax_row(row);
        let lp = logp[y];
        // 1 - p_t without cancellation
        let q = -lp.exp_m1();
        let weight = if gamma == T::zero() { T::one() } else { q.powf(gamma) };
        total += -weight * lp;
        // d/dz_j = [gamma q^(gamma-1) p_t ln p_t - q^gamma] (delta_jy - p_j)
        let first = if gamma == T::zero() || q == T::zero() {
            T::zero()
        } else {
            gamma * q.powf(gamma - T::one()) * p[y] * lp
        };
        let coef = (first - weight) * inv_n;
        for j in 0..c {
            let delta = if j == y { T::one() } else { T::zero() };
            grad[[i, j]] = coef * (delta - p[j]);
        }
    }
    Ok((total * inv_n, grad))
}

/// Per-row argmax; ties go to the lowest class id. The result is a constant
/// target: nothing downstream differentiates through it.
pub fn teacher_hard_label<T: Real>(teacher_logits: ArrayView2<T>) -> Vec<usize> {
    teacher_logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Which distillation loss applies for `n_im_per_class` training images per
/// class: focal at or below `n_min`.
pub fn select_variant(n_im_per_class: usize, cfg: &LossConfig) -> DistVariant {
    if n_im_per_class <= cfg.n_min {
        DistVariant::Focal
    } else {
        DistVariant::CrossEntropy
    }
}

pub fn distillation_loss<T: Real>(
    student_logits: ArrayView2<T>,
    teacher_labels: &[usize],
    n_im_per_class: usize,
    cfg: &LossConfig,
) -> Result<(T, DistVariant)> {
    distillation_loss_with_grad(student_logits, teacher_labels, n_im_per_class, cfg).map(|(l, v, _)| (l, v))
}

pub fn distillation_loss_with_grad<T: Real>(
    student_logits: ArrayView2<T>,
    teacher_labels: &[usize],
    n_im_per_class: usize,
    cfg: &LossConfig,
) -> Result<(T, DistVariant, Array2<T>)> {
    if n_im_per_class < 1 {
        return Err(Error::Validation("n_im_per_class must be >= 1".into()));
    }
    let variant = select_variant(n_im_per_class, cfg);
    let (loss, grad) = match variant {
        DistVariant::Focal => focal_loss_with_grad(student_logits, teacher_labels, T::lit(cfg.focal_gamma))?,
        DistVariant::CrossEntropy => cross_entropy_with_grad(student_logits, teacher_labels)?,
    };
    Ok((loss, variant, grad))
}

/// `0.5 * l_main + alpha * 0.5 * l_dist`.
pub fn total_loss<T: Real>(l_main: T, l_dist: T, cfg: &LossConfig) -> T {
    T::lit(MAIN_WEIGHT) * l_main + T::lit(cfg.alpha * DIST_WEIGHT) * l_dist
}
