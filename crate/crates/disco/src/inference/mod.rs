//! Likelihood-free posterior estimation over simulator parameters.
//!
//! Trajectories are compressed to fixed-length summary statistics; a mixture
//! density network trained on simulated (parameter, statistic) pairs maps the
//! statistics of an observed trajectory to a Gaussian-mixture posterior.

mod dataset;
mod mdn;

pub use dataset::{generate_training_set, DataPolicy, TrainingSet};
pub use mdn::{train_mdn, MdnArchitecture, MdnModel, TrainConfig, TrainingReport};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::EnvKind;
use crate::error::{Error, Result};
use crate::harness::EpisodeLog;
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Weighted sum of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    /// Diagonal covariances, one variance vector per component.
    pub variances: Vec<Vec<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, variances: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::invalid("mixture component count mismatch"));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) || variances.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("mixture dimension mismatch"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-9) {
            return Err(Error::invalid("mixture weights must sum to one"));
        }
        if variances.iter().flatten().any(|v| !(*v > T::zero())) {
            return Err(Error::invalid("mixture variances must be strictly positive"));
        }
        Ok(GaussianMixture { weights, means, variances })
    }

    /// Single Gaussian as a one-component mixture.
    pub fn single(mean: Vec<T>, variance: Vec<T>) -> Result<Self> {
        GaussianMixture::new(vec![T::one()], vec![mean], vec![variance])
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Index and weight of the heaviest component.
    pub fn dominant(&self) -> (usize, T) {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = i;
            }
        }
        (best, self.weights[best])
    }

    /// Full mixture mean.
    pub fn mean(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, &x) in out.iter_mut().zip(m) {
                *o += *w * x;
            }
        }
        out
    }

    /// Mean and covariance: the dominant component's own moments when its
    /// weight reaches `dominance_threshold`, otherwise the moments of the
    /// whole mixture.
    pub fn moments(&self, dominance_threshold: T) -> (Vec<T>, Mat<T>) {
        let (idx, w) = self.dominant();
        if w >= dominance_threshold {
            return (self.means[idx].clone(), Mat::diagonal(&self.variances[idx]));
        }
        let dim = self.dim();
        let mean = self.mean();
        let mut cov = Mat::zeros(dim, dim);
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for i in 0..dim {
                cov[(i, i)] += *w * v[i];
                let di = m[i] - mean[i];
                for j in 0..dim {
                    cov[(i, j)] += *w * di * (m[j] - mean[j]);
                }
            }
        }
        (mean, cov)
    }

    /// Draw one vector from the mixture.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let u = T::uniform_01(rng);
        let mut acc = T::zero();
        let mut idx = self.n_components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += *w;
            if u < acc {
                idx = i;
                break;
            }
        }
        self.means[idx]
            .iter()
            .zip(&self.variances[idx])
            .map(|(&m, &v)| m + v.sqrt() * T::standard_normal(rng))
            .collect()
    }
}

/// Independent uniform prior over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior<T> {
    pub low: Vec<T>,
    pub high: Vec<T>,
}

impl<T: Scalar> UniformPrior<T> {
    pub fn new(low: Vec<T>, high: Vec<T>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::config("prior bounds must be non-empty and equal length"));
        }
        if low.iter().zip(&high).any(|(a, b)| !a.is_finite() || !b.is_finite() || a >= b) {
            return Err(Error::config("prior requires finite low < high per dimension"));
        }
        Ok(UniformPrior { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, theta: &[T]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(&a, &b)| a + (b - a) * T::uniform_01(rng))
            .collect()
    }
}

/// Fixed-length trajectory features used as the inference conditioning input.
pub type SummaryStats<T> = Vec<T>;

/// Compress an episode into the environment's summary-statistic vector.
///
/// Skid-steer: `(mean x, mean y, mean step dx, mean step dy)`. Pendulum: the
/// 9-vector of means and standard deviations of angle and velocity, the mean
/// absolute torque, and circular cross-correlations of angle/velocity against
/// torque at lags 0 and 1.
pub fn summary_statistics<T: Scalar>(
    log: &EpisodeLog<T>,
    env: &EnvKind<T>,
) -> Result<SummaryStats<T>> {
    if log.records.is_empty() {
        return Err(Error::invalid("cannot summarise an empty episode log"));
    }
    let stats = match env {
        EnvKind::SkidSteer(_) => {
            let xs: Vec<T> = log.records.iter().map(|r| r.state[0]).collect();
            let ys: Vec<T> = log.records.iter().map(|r| r.state[1]).collect();
            vec![mean(&xs), mean(&ys), mean_step(&xs), mean_step(&ys)]
        }
        EnvKind::Pendulum(_) => {
            let th: Vec<T> = log.records.iter().map(|r| r.state[0]).collect();
            let om: Vec<T> = log.records.iter().map(|r| r.state[1]).collect();
            let u: Vec<T> = log.records.iter().map(|r| r.control[0]).collect();
            let abs_u: Vec<T> = u.iter().map(|x| x.abs()).collect();
            vec![
                mean(&th),
                std_dev(&th),
                mean(&om),
                std_dev(&om),
                mean(&abs_u),
                circular_correlation(&th, &u, 0),
                circular_correlation(&th, &u, 1),
                circular_correlation(&om, &u, 0),
                circular_correlation(&om, &u, 1),
            ]
        }
    };
    if stats.iter().any(|s| !s.is_finite()) {
        return Err(Error::numeric("non-finite summary statistic"));
    }
    Ok(stats)
}

/// Dimension of the summary vector an environment produces.
pub fn summary_dim<T: Scalar>(env: &EnvKind<T>) -> usize {
    match env {
        EnvKind::Pendulum(_) => 9,
        EnvKind::SkidSteer(_) => 4,
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::of_usize(xs.len())
}

fn std_dev<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::of_usize(xs.len());
    var.sqrt()
}

fn mean_step<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let total: T = xs.windows(2).map(|w| w[1] - w[0]).sum();
    total / T::of_usize(xs.len() - 1)
}

/// Pearson correlation between `a` rotated by `lag` and `u`, with circular
/// wrap-around so the statistic is invariant under repetition of a full
/// cycle. Zero when either signal is constant.
fn circular_correlation<T: Scalar>(a: &[T], u: &[T], lag: usize) -> T {
    let n = a.len();
    let (ma, mu) = (mean(a), mean(u));
    let (sa, su) = (std_dev(a), std_dev(u));
    let tiny = T::of(1e-12);
    if sa < tiny || su < tiny {
        return T::zero();
    }
    let mut acc = T::zero();
    for t in 0..n {
        acc += (a[(t + lag) % n] - ma) * (u[t] - mu);
    }
    acc / (T::of_usize(n) * sa * su)
}

/// Posterior over parameters given observed summary statistics.
///
/// The network output is corrected by the prior/proposal density ratio. This
/// toolkit trains with the proposal equal to the prior, making the ratio one;
/// the correction then reduces to truncating the mixture to the prior's
/// support. Components whose means fall outside the box lose their weight to
/// the remaining ones, proportionally.
pub fn posterior<T: Scalar>(
    model: &MdnModel<T>,
    x_real: &[T],
    prior: &UniformPrior<T>,
    proposal: &UniformPrior<T>,
) -> Result<GaussianMixture<T>> {
    if prior != proposal {
        return Err(Error::Inference(
            "proposal prior must equal the prior (single-round inference)".into(),
        ));
    }
    let mix = model.forward(x_real)?;
    if mix.dim() != prior.dim() {
        return Err(Error::Inference("prior dimension does not match model output".into()));
    }
    let kept: Vec<T> = mix
        .weights
        .iter()
        .zip(&mix.means)
        .map(|(&w, m)| if prior.contains(m) { w } else { T::zero() })
        .collect();
    let total: T = kept.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::Inference("posterior has zero mass inside the prior support".into()));
    }
    let weights: Vec<T> = kept.iter().map(|&w| w / total).collect();
    GaussianMixture::new(weights, mix.means, mix.variances)
}
