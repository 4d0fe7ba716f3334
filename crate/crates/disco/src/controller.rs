//! Information-theoretic sampling MPC with parameter uncertainty.
//!
//! Each control step samples K perturbed action sequences, rolls every
//! sequence out under L parameter instances (sigma points, Monte-Carlo draws,
//! or a single point estimate), softmax-weights the aggregated trajectory
//! costs and moves the nominal plan towards the low-cost perturbations. Only
//! the first action is actuated; the plan is then shifted one step.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clip_control, Env, SimParams};
use crate::error::{Error, Result};
use crate::inference::GaussianMixture;
use crate::linalg::{dot, Mat};
use crate::scalar::Scalar;
use crate::unscented::{sigma_points, SigmaSet, UtConfig};

/// How parameter uncertainty is pushed through the rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// Sigma points of the belief's first two moments.
    Ut,
    /// Independent draws from the belief, redrawn every control step.
    MonteCarlo,
    /// A single parameter vector, no uncertainty.
    PointEstimate,
}

/// Controller hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig<T> {
    /// Number of sampled action sequences per step (K).
    pub samples: usize,
    /// Control horizon in steps (T).
    pub horizon: usize,
    /// Inverse temperature of the cost softmax.
    pub lambda: T,
    /// Control noise covariance (m x m).
    pub sigma: Mat<T>,
    /// Affine control-cost offset; zero in every shipped configuration.
    pub beta: Vec<T>,
    pub propagation: Propagation,
    /// Number of parameter draws in Monte-Carlo mode (L).
    pub param_samples: usize,
    /// Sigma-point scaling used in UT mode.
    pub ut: UtConfig<T>,
    /// Plan tail filled in when the horizon shifts.
    pub rest_control: Vec<T>,
    /// Mixture beliefs collapse to their dominant component above this
    /// weight, otherwise to full mixture moments.
    pub dominance_threshold: T,
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn new(samples: usize, horizon: usize, lambda: T, sigma: Mat<T>) -> Self {
        let m = sigma.rows();
        ControllerConfig {
            samples,
            horizon,
            lambda,
            sigma,
            beta: vec![T::zero(); m],
            propagation: Propagation::PointEstimate,
            param_samples: 1,
            ut: UtConfig::default(),
            rest_control: vec![T::zero(); m],
            dominance_threshold: T::of(0.9),
        }
    }

    pub fn control_dim(&self) -> usize {
        self.sigma.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("need at least one sampled action sequence"));
        }
        if self.horizon == 0 {
            return Err(Error::config("control horizon must be at least one step"));
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::config("inverse temperature lambda must be positive"));
        }
        if self.param_samples == 0 {
            return Err(Error::config("need at least one parameter sample"));
        }
        let m = self.control_dim();
        if !self.sigma.is_square() || m == 0 {
            return Err(Error::config("control noise covariance must be square and non-empty"));
        }
        if self.beta.len() != m || self.rest_control.len() != m {
            return Err(Error::config("beta/rest control dimension mismatch"));
        }
        Ok(())
    }
}

/// What the controller believes about the simulator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamBelief<T> {
    /// A single vector, no uncertainty.
    Point(Vec<T>),
    /// Gaussian with full covariance.
    Gaussian { mean: Vec<T>, cov: Mat<T> },
    /// Mixture of diagonal Gaussians, e.g. an inferred posterior.
    Mixture(GaussianMixture<T>),
    /// Axis-aligned uniform box prior.
    UniformBox { low: Vec<T>, high: Vec<T> },
}

impl<T: Scalar> ParamBelief<T> {
    pub fn dim(&self) -> usize {
        match self {
            ParamBelief::Point(v) => v.len(),
            ParamBelief::Gaussian { mean, .. } => mean.len(),
            ParamBelief::Mixture(m) => m.dim(),
            ParamBelief::UniformBox { low, .. } => low.len(),
        }
    }

    /// First two moments of the belief. Mixtures collapse to the dominant
    /// component when its weight reaches `dominance_threshold`.
    pub fn moments(&self, dominance_threshold: T) -> (Vec<T>, Mat<T>) {
        match self {
            ParamBelief::Point(v) => (v.clone(), Mat::zeros(v.len(), v.len())),
            ParamBelief::Gaussian { mean, cov } => (mean.clone(), cov.clone()),
            ParamBelief::Mixture(m) => m.moments(dominance_threshold),
            ParamBelief::UniformBox { low, high } => {
                let half = T::of(0.5);
                let twelfth = T::one() / T::of(12.0);
                let mean = low.iter().zip(high).map(|(&a, &b)| half * (a + b)).collect();
                let var: Vec<T> =
                    low.iter().zip(high).map(|(&a, &b)| (b - a) * (b - a) * twelfth).collect();
                (mean, Mat::diagonal(&var))
            }
        }
    }

    /// Point summary used by the point-estimate propagation mode.
    pub fn point_estimate(&self, dominance_threshold: T) -> Vec<T> {
        self.moments(dominance_threshold).0
    }

    /// Draw one parameter vector.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        match self {
            ParamBelief::Point(v) => Ok(v.clone()),
            ParamBelief::Gaussian { mean, cov } => {
                let l = cov.cholesky_lower().ok_or_else(|| {
                    Error::numeric("belief covariance is not positive semi-definite")
                })?;
                let n = mean.len();
                let z: Vec<T> = (0..n).map(|_| T::standard_normal(rng)).collect();
                Ok((0..n)
                    .map(|i| {
                        mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<T>()
                    })
                    .collect())
            }
            ParamBelief::Mixture(m) => Ok(m.sample(rng)),
            ParamBelief::UniformBox { low, high } => Ok(low
                .iter()
                .zip(high)
                .map(|(&a, &b)| a + (b - a) * T::uniform_01(rng))
                .collect()),
        }
    }
}

/// Running and terminal cost of a trajectory. The instant cost sees the
/// transition `(previous state, new state, dt)` so costs that need a
/// finite-difference speed estimate stay expressible.
#[derive(Clone)]
pub struct CostModel<T> {
    pub instant: Arc<dyn Fn(&[T], &[T], T) -> T + Send + Sync>,
    pub terminal: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
}

impl<T: Scalar> CostModel<T> {
    pub fn new(
        instant: impl Fn(&[T], &[T], T) -> T + Send + Sync + 'static,
        terminal: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        CostModel { instant: Arc::new(instant), terminal: Arc::new(terminal) }
    }

    /// Instant cost of the new state only, zero terminal cost.
    pub fn state_only(f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        CostModel { instant: Arc::new(move |_prev, next, _dt| f(next)), terminal: Arc::new(|_| T::zero()) }
    }
}

/// K x horizon x m tensor of sampled control perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTensor<T> {
    samples: usize,
    horizon: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> PerturbationTensor<T> {
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Flat `horizon * m` perturbation sequence of sample `k`.
    pub fn sample(&self, k: usize) -> &[T] {
        let len = self.horizon * self.dim;
        &self.data[k * len..(k + 1) * len]
    }
}

/// Draw `samples` i.i.d. perturbation sequences with per-step noise
/// `N(0, sigma)`. Requires a positive-definite `sigma`.
pub fn sample_perturbations<T: Scalar>(
    rng: &mut ChaCha8Rng,
    samples: usize,
    horizon: usize,
    sigma: &Mat<T>,
) -> Result<PerturbationTensor<T>> {
    let chol = sigma_cholesky(sigma)?;
    let m = sigma.rows();
    let mut data = Vec::with_capacity(samples * horizon * m);
    let mut z = vec![T::zero(); m];
    for _ in 0..samples * horizon {
        for zi in z.iter_mut() {
            *zi = T::standard_normal(rng);
        }
        for i in 0..m {
            data.push((0..=i).map(|j| chol[(i, j)] * z[j]).sum());
        }
    }
    Ok(PerturbationTensor { samples, horizon, dim: m, data })
}

fn sigma_cholesky<T: Scalar>(sigma: &Mat<T>) -> Result<Mat<T>> {
    let chol = sigma
        .cholesky_lower()
        .filter(|l| (0..sigma.rows()).all(|i| l[(i, i)] > T::zero()))
        .ok_or_else(|| Error::config("control noise covariance must be positive definite"))?;
    Ok(chol)
}

/// Cost of rolling the nominal plan plus one perturbation sequence under one
/// parameter vector.
///
/// The applied control is clipped to the actuator bounds before driving the
/// dynamics, while the coupling term `lambda * u_t' * sigma^-1 * eps_t` uses
/// the raw perturbation so the importance-sampling correction matches the
/// sampling distribution. Instant cost accrues on each newly reached state,
/// terminal cost on the final one.
pub fn trajectory_cost<T: Scalar, E: Env<T>>(
    env: &E,
    x0: &[T],
    nominal: &[T],
    perturbation: &[T],
    params: &SimParams<T>,
    cost: &CostModel<T>,
    lambda: T,
    sigma_inv: &Mat<T>,
) -> Result<T> {
    let mut scratch = RolloutScratch::new(env.state_dim(), env.control_dim());
    trajectory_cost_scratch(
        env,
        x0,
        nominal,
        perturbation,
        params,
        cost,
        lambda,
        sigma_inv,
        &mut scratch,
    )
}

struct RolloutScratch<T> {
    state: Vec<T>,
    next: Vec<T>,
    control: Vec<T>,
}

impl<T: Scalar> RolloutScratch<T> {
    fn new(state_dim: usize, control_dim: usize) -> Self {
        RolloutScratch {
            state: vec![T::zero(); state_dim],
            next: vec![T::zero(); state_dim],
            control: vec![T::zero(); control_dim],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn trajectory_cost_scratch<T: Scalar, E: Env<T>>(
    env: &E,
    x0: &[T],
    nominal: &[T],
    perturbation: &[T],
    params: &SimParams<T>,
    cost: &CostModel<T>,
    lambda: T,
    sigma_inv: &Mat<T>,
    scratch: &mut RolloutScratch<T>,
) -> Result<T> {
    let m = env.control_dim();
    debug_assert_eq!(nominal.len(), perturbation.len());
    debug_assert_eq!(nominal.len() % m, 0);
    let horizon = nominal.len() / m;
    let bounds = env.control_bounds();
    let dt = env.dt();

    scratch.state.copy_from_slice(x0);
    let mut total = T::zero();
    for t in 0..horizon {
        let u = &nominal[t * m..(t + 1) * m];
        let eps = &perturbation[t * m..(t + 1) * m];
        for i in 0..m {
            scratch.control[i] = u[i] + eps[i];
        }
        clip_control(&mut scratch.control, bounds);
        env.step_into(&scratch.state, &scratch.control, params, &mut scratch.next)
            .map_err(|e| Error::Dynamics { step: t, message: e.to_string() })?;

        let mut coupling = T::zero();
        for i in 0..m {
            let row = sigma_inv.row(i);
            let a: T = (0..m).map(|j| row[j] * u[j]).sum();
            coupling += a * eps[i];
        }
        total += (cost.instant)(&scratch.state, &scratch.next, dt) + lambda * coupling;
        std::mem::swap(&mut scratch.state, &mut scratch.next);
    }
    total += (cost.terminal)(&scratch.state);
    Ok(total)
}

/// Per-sample costs under every parameter instance: row k, column i holds the
/// cost of perturbation sequence k rolled out under parameter instance i. The
/// same perturbation tensor is shared by all instances.
#[allow(clippy::too_many_arguments)]
pub fn parameter_cost_matrix<T: Scalar, E: Env<T>>(
    env: &E,
    x0: &[T],
    nominal: &[T],
    perturbations: &PerturbationTensor<T>,
    params: &[SimParams<T>],
    cost: &CostModel<T>,
    lambda: T,
    sigma_inv: &Mat<T>,
) -> Result<Vec<Vec<T>>> {
    let rows: Vec<Result<Vec<T>>> = (0..perturbations.samples())
        .into_par_iter()
        .map_init(
            || RolloutScratch::new(env.state_dim(), env.control_dim()),
            |scratch, k| {
                params
                    .iter()
                    .map(|p| {
                        trajectory_cost_scratch(
                            env,
                            x0,
                            nominal,
                            perturbations.sample(k),
                            p,
                            cost,
                            lambda,
                            sigma_inv,
                            scratch,
                        )
                    })
                    .collect()
            },
        )
        .collect();
    rows.into_iter().collect()
}

/// Weighted aggregation of per-parameter costs into a single sample cost.
pub fn aggregate_parameter_costs<T: Scalar>(per_param_costs: &[T], weights: &[T]) -> Result<T> {
    if per_param_costs.len() != weights.len() {
        return Err(Error::invalid("cost/weight length mismatch"));
    }
    // Weights sum to one, so coincident parameter instances (e.g. sigma
    // points of a zero covariance) stay exact.
    if per_param_costs.windows(2).all(|w| w[0] == w[1]) {
        return Ok(per_param_costs[0]);
    }
    Ok(dot(per_param_costs, weights))
}

/// Softmax weights of the sampled costs with the numerically stabilising
/// minimum-cost shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights<T> {
    pub weights: Vec<T>,
    /// Minimum sampled cost (the stabilising baseline).
    pub rho: T,
    /// Unnormalised softmax mass.
    pub eta: T,
}

impl<T: Scalar> ImportanceWeights<T> {
    /// Effective sample size `1 / sum(w^2)`.
    pub fn effective_sample_size(&self) -> T {
        let sq: T = self.weights.iter().map(|&w| w * w).sum();
        T::one() / sq
    }
}

/// `w_k = exp(-(S_k - rho) / lambda) / eta` with `rho = min_k S_k`.
pub fn importance_weights<T: Scalar>(costs: &[T], lambda: T) -> Result<ImportanceWeights<T>> {
    if costs.is_empty() {
        return Err(Error::invalid("cannot weight an empty cost vector"));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite trajectory cost"));
    }
    if !(lambda > T::zero()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let rho = costs.iter().copied().fold(T::infinity(), T::min);
    let mut weights: Vec<T> = costs.iter().map(|&c| (-(c - rho) / lambda).exp()).collect();
    let eta: T = weights.iter().copied().sum();
    for w in weights.iter_mut() {
        *w = *w / eta;
    }
    Ok(ImportanceWeights { weights, rho, eta })
}

/// `u_t += sum_k w_k eps_t^k` for every step of the plan.
pub fn update_nominal<T: Scalar>(
    nominal: &mut [T],
    weights: &[T],
    perturbations: &PerturbationTensor<T>,
) {
    debug_assert_eq!(weights.len(), perturbations.samples());
    debug_assert_eq!(nominal.len(), perturbations.horizon * perturbations.dim);
    for (idx, u) in nominal.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (k, &w) in weights.iter().enumerate() {
            acc += w * perturbations.sample(k)[idx];
        }
        *u += acc;
    }
}

/// Shift the plan one step: `u_t <- u_{t+1}`, with the tail filled from
/// `rest`.
pub fn roll_plan<T: Scalar>(nominal: &mut [T], rest: &[T]) {
    let m = rest.len();
    if nominal.is_empty() {
        return;
    }
    nominal.copy_within(m.., 0);
    let tail = nominal.len() - m;
    nominal[tail..].copy_from_slice(rest);
}

/// Diagnostics emitted by every control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics<T> {
    pub rho: T,
    pub eta: T,
    pub effective_sample_size: T,
}

/// Receding-horizon controller state: the nominal plan plus cached sigma
/// points.
pub struct Controller<T: Scalar> {
    config: ControllerConfig<T>,
    cost: CostModel<T>,
    nominal: Vec<T>,
    sigma_inv: Mat<T>,
    cached_sigma: Option<(Vec<T>, Mat<T>, SigmaSet<T>)>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(config: ControllerConfig<T>, cost: CostModel<T>) -> Result<Self> {
        config.validate()?;
        sigma_cholesky(&config.sigma)?;
        let sigma_inv = config.sigma.spd_inverse()?;
        let nominal = vec![T::zero(); config.horizon * config.control_dim()];
        Ok(Controller { config, cost, nominal, sigma_inv, cached_sigma: None })
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.config
    }

    /// Current nominal plan, flat `horizon * m`.
    pub fn nominal(&self) -> &[T] {
        &self.nominal
    }

    pub fn set_nominal(&mut self, plan: &[T]) -> Result<()> {
        if plan.len() != self.nominal.len() {
            return Err(Error::invalid("plan length mismatch"));
        }
        self.nominal.copy_from_slice(plan);
        Ok(())
    }

    /// Parameter instances and aggregation weights for one control step.
    fn parameter_instances<E: Env<T>>(
        &mut self,
        env: &E,
        belief: &ParamBelief<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<SimParams<T>>, Vec<T>)> {
        if belief.dim() != env.param_dim() {
            return Err(Error::invalid(format!(
                "belief dimension {} does not match {} parameter dimension {}",
                belief.dim(),
                env.name(),
                env.param_dim()
            )));
        }
        let labels = env.param_labels();
        match self.config.propagation {
            Propagation::PointEstimate => {
                let v = belief.point_estimate(self.config.dominance_threshold);
                Ok((vec![SimParams::new(v, labels)?], vec![T::one()]))
            }
            Propagation::MonteCarlo => {
                let l = self.config.param_samples;
                let mut out = Vec::with_capacity(l);
                for _ in 0..l {
                    out.push(SimParams::new(belief.sample(rng)?, labels)?);
                }
                Ok((out, vec![T::one() / T::of_usize(l); l]))
            }
            Propagation::Ut => {
                let (mean, cov) = belief.moments(self.config.dominance_threshold);
                let cached = match &self.cached_sigma {
                    Some((m, c, set)) if *m == mean && *c == cov => set.clone(),
                    _ => {
                        let set = sigma_points(&mean, &cov, &self.config.ut)?;
                        self.cached_sigma = Some((mean, cov, set.clone()));
                        set
                    }
                };
                let params = cached
                    .points
                    .iter()
                    .map(|p| SimParams::new(p.clone(), labels))
                    .collect::<Result<Vec<_>>>()?;
                Ok((params, cached.mean_weights))
            }
        }
    }

    /// One receding-horizon update: sample perturbations, evaluate all
    /// rollouts, reweight, update the plan, emit the first action and shift.
    ///
    /// The perturbation tensor is drawn once and shared by every parameter
    /// instance, so UT and Monte-Carlo propagation with equal K and L spend
    /// identical dynamics-step budgets.
    pub fn control_step<E: Env<T>>(
        &mut self,
        env: &E,
        x0: &[T],
        belief: &ParamBelief<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<T>, StepDiagnostics<T>)> {
        if x0.len() != env.state_dim() {
            return Err(Error::invalid("state dimension mismatch"));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite state estimate"));
        }
        let m = env.control_dim();
        if m != self.config.control_dim() {
            return Err(Error::config("controller noise dimension does not match environment"));
        }

        let perturbations = sample_perturbations(
            rng,
            self.config.samples,
            self.config.horizon,
            &self.config.sigma,
        )?;
        let (params, agg_weights) = self.parameter_instances(env, belief, rng)?;

        let cost_rows = parameter_cost_matrix(
            env,
            x0,
            &self.nominal,
            &perturbations,
            &params,
            &self.cost,
            self.config.lambda,
            &self.sigma_inv,
        )?;
        let costs: Vec<T> = cost_rows
            .iter()
            .map(|row| aggregate_parameter_costs(row, &agg_weights))
            .collect::<Result<_>>()?;

        let iw = importance_weights(&costs, self.config.lambda)?;
        update_nominal(&mut self.nominal, &iw.weights, &perturbations);

        let action = self.nominal[..m].to_vec();
        let diagnostics = StepDiagnostics {
            rho: iw.rho,
            eta: iw.eta,
            effective_sample_size: iw.effective_sample_size(),
        };
        roll_plan(&mut self.nominal, &self.config.rest_control);
        Ok((action, diagnostics))
    }
}
