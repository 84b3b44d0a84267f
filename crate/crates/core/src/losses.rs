//! Loss terms of the constrained cycle-consistent objective.
//!
//! All terms take NCHW batches of single-channel frames. Values are
//! accumulated in f64 whatever the tensor precision. Each term has a
//! companion that returns its gradient with respect to the generated
//! argument, for the training step's backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

/// Weights of the cycle, identical and correlation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 5.0,
            lambda3: 5.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Plain CycleGAN: adversarial plus cycle terms only.
    pub fn is_vanilla(&self) -> bool {
        self.lambda2 == 0.0 && self.lambda3 == 0.0
    }
}

/// Per-step scalars. `adv_g` and `adv_d` are summed over both translation
/// directions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g: f64,
    pub adv_d: f64,
    pub cyc: f64,
    pub idt: f64,
    pub cc: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.adv_g, self.adv_d, self.cyc, self.idt, self.cc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `adv_g + λ₁·cyc + λ₂·idt + λ₃·cc`.
pub fn total_generator_objective(parts: &LossReport, w: &LossWeights) -> f64 {
    parts.adv_g + w.lambda1 * parts.cyc + w.lambda2 * parts.idt + w.lambda3 * parts.cc
}

fn check_finite<T: Real>(xs: &[T], what: &str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

fn mean_sq_offset<T: Real>(xs: &[T], target: f64) -> f64 {
    xs.iter().map(|v| (v.f64() - target).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Least-squares adversarial terms for one discriminator:
/// `(mean((d_fake − 1)²), mean((d_real − 1)²) + mean(d_fake²))`, i.e.
/// `(generator_term, discriminator_term)`. Means run over every patch score.
pub fn adversarial_losses<T: Real>(d_real: &[T], d_fake: &[T]) -> Result<(f64, f64)> {
    check_finite(d_real, "discriminator scores on real frames")?;
    check_finite(d_fake, "discriminator scores on generated frames")?;
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::InvalidInput("empty score map".into()));
    }
    let g = mean_sq_offset(d_fake, 1.0);
    let d = mean_sq_offset(d_real, 1.0) + mean_sq_offset(d_fake, 0.0);
    Ok((g, d))
}

/// Gradient of `mean((d − target)²)` with respect to `d`.
pub fn lsgan_grad<T: Real>(scores: &Tensor<T>, target: f64) -> Tensor<T> {
    let k = T::of(2.0 / scores.data().len() as f64);
    let t = T::of(target);
    scores.map(|v| k * (v - t))
}

/// `mean |x − y|`.
pub fn mean_abs_diff<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check_same_shape(x, y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a.f64() - b.f64()).abs())
        .sum::<f64>()
        / x.data().len() as f64)
}

/// Gradient of `mean |x − y|` with respect to `x`, scaled by `weight`.
/// The subgradient at `x == y` is taken as 0.
pub fn mean_abs_diff_grad<T: Real>(x: &Tensor<T>, y: &Tensor<T>, weight: f64) -> Tensor<T> {
    let k = T::of(weight / x.data().len() as f64);
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            if a > b {
                k
            } else if a < b {
                -k
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Cycle-consistency: `mean|rec_a − a| + mean|rec_b − b|`.
pub fn cycle_loss<T: Real>(a: &Tensor<T>, rec_a: &Tensor<T>, b: &Tensor<T>, rec_b: &Tensor<T>) -> Result<f64> {
    Ok(mean_abs_diff(rec_a, a)? + mean_abs_diff(rec_b, b)?)
}

/// Identical loss: `mean|G_A(B) − B| + mean|G_B(A) − A|`.
pub fn identical_loss<T: Real>(b: &Tensor<T>, g_a_of_b: &Tensor<T>, a: &Tensor<T>, g_b_of_a: &Tensor<T>) -> Result<f64> {
    Ok(mean_abs_diff(g_a_of_b, b)? + mean_abs_diff(g_b_of_a, a)?)
}

struct Moments {
    xc: Vec<f64>,
    yc: Vec<f64>,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn centered_moments<T: Real>(x: &[T], y: &[T]) -> Result<Moments> {
    let n = x.len() as f64;
    let mx = x.iter().map(|v| v.f64()).sum::<f64>() / n;
    let my = y.iter().map(|v| v.f64()).sum::<f64>() / n;
    let xc: Vec<f64> = x.iter().map(|v| v.f64() - mx).collect();
    let yc: Vec<f64> = y.iter().map(|v| v.f64() - my).collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    let syy: f64 = yc.iter().map(|v| v * v).sum();
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::ConstantFrame);
    }
    Ok(Moments { xc, yc, sxx, syy, sxy })
}

/// Pearson correlation coefficient `Cov(x, y) / (σ_x σ_y)`.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    let m = centered_moments(x, y)?;
    Ok((m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0))
}

/// `mean over frames of (1 − cc(fake_i, real_i))` and its gradient with
/// respect to `fake`.
pub fn correlation_term<T: Real>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_same_shape(real, fake)?;
    let n = real.n();
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(fake.data().len());
    for i in 0..n {
        let m = centered_moments(fake.sample(i), real.sample(i))?;
        let norm = (m.sxx * m.syy).sqrt();
        let cc = m.sxy / norm;
        value += 1.0 - cc;
        let ratio = m.sxy / m.sxx;
        // d(1 − cc)/dx_j = −(yc_j − (sxy/sxx)·xc_j) / (√(sxx·syy) · N)
        grad.extend(
            m.xc
                .iter()
                .zip(&m.yc)
                .map(|(&xc, &yc)| T::of(-(yc - ratio * xc) / (norm * n as f64))),
        );
    }
    Ok((value / n as f64, Tensor::from_vec(fake.shape(), grad)?))
}

/// Correlation-coefficient loss `(1 − cc(G(A), A)) + (1 − cc(G(B), B))`,
/// each averaged over the frames of its batch. Minimizing it maximizes the
/// speckle correlation between a frame and its translation.
pub fn correlation_loss<T: Real>(a: &Tensor<T>, g_of_a: &Tensor<T>, b: &Tensor<T>, g_of_b: &Tensor<T>) -> Result<f64> {
    Ok(correlation_term(a, g_of_a)?.0 + correlation_term(b, g_of_b)?.0)
}
