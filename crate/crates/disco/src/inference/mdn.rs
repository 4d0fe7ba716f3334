//! Mixture density network: a small tanh MLP whose output heads parameterise
//! the mixing weights, means and log-variances of a diagonal Gaussian
//! mixture. Trained by minimising the negative mean log-likelihood with an
//! exact hand-derived gradient.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::GaussianMixture;
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Variances are floored here so near-deterministic training pairs cannot
/// blow the likelihood up.
pub const VARIANCE_FLOOR: f64 = 1e-6;
const FLOOR_LOG: f64 = -13.815510557964274; // ln(1e-6)
const LOG_2PI: f64 = 1.8378770664093453;

const MAGIC: &[u8; 8] = b"DISCOMDN";
const FORMAT_VERSION: u32 = 1;

/// Network shape: `input -> hidden... -> {logits, means, log-variances}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub components: usize,
    pub theta_dim: usize,
}

impl MdnArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, components: usize, theta_dim: usize) -> Self {
        MdnArchitecture { input_dim, hidden, components, theta_dim }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.theta_dim == 0
            || self.components == 0
            || self.hidden.iter().any(|&h| h == 0)
        {
            return Err(Error::config("all network dimensions must be positive"));
        }
        Ok(())
    }

    /// Linear layers as `(input, output)` pairs: hidden chain then the three
    /// heads off the last hidden layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        let k = self.components;
        let kd = k * self.theta_dim;
        dims.push((prev, k)); // mixing logits
        dims.push((prev, kd)); // means
        dims.push((prev, kd)); // log-variances
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Start offset of each layer's `(weights, bias)` block.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        for (i, o) in self.layers() {
            out.push((pos, pos + o * i));
            pos += o * i + o;
        }
        out
    }
}

/// Network weights plus their shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel<T> {
    pub arch: MdnArchitecture,
    pub params: Vec<T>,
}

impl<T: Scalar> MdnModel<T> {
    /// Xavier-uniform weight init, zero biases, seeded.
    pub fn init(arch: MdnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream_rng(seed, &[0x6d64_6e69]);
        let mut params = vec![T::zero(); arch.param_count()];
        for ((w_start, b_start), (fan_in, fan_out)) in arch.offsets().iter().zip(arch.layers()) {
            let bound = T::of((6.0 / (fan_in + fan_out) as f64).sqrt());
            for p in params[*w_start..*b_start].iter_mut() {
                *p = (T::of(2.0) * T::uniform_01(&mut rng) - T::one()) * bound;
            }
        }
        Ok(MdnModel { arch, params })
    }

    pub fn zeroed(arch: MdnArchitecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(MdnModel { arch, params: vec![T::zero(); n] })
    }

    fn layer_apply(&self, layer: usize, input: &[T], out: &mut [T]) {
        let (w_start, b_start) = self.arch.offsets()[layer];
        let (fan_in, fan_out) = self.arch.layers()[layer];
        debug_assert_eq!(input.len(), fan_in);
        debug_assert_eq!(out.len(), fan_out);
        for o in 0..fan_out {
            let row = &self.params[w_start + o * fan_in..w_start + (o + 1) * fan_in];
            let mut acc = self.params[b_start + o];
            for (w, x) in row.iter().zip(input) {
                acc += *w * *x;
            }
            out[o] = acc;
        }
    }

    /// Raw head outputs `(logits, means, log_variances)` with hidden
    /// activations cached for backpropagation.
    fn forward_raw(&self, x: &[T]) -> ForwardPass<T> {
        let n_hidden = self.arch.hidden.len();
        let mut activations = Vec::with_capacity(n_hidden + 1);
        activations.push(x.to_vec());
        for (layer, &h) in self.arch.hidden.iter().enumerate() {
            let mut a = vec![T::zero(); h];
            self.layer_apply(layer, activations.last().unwrap(), &mut a);
            for v in a.iter_mut() {
                *v = v.tanh();
            }
            activations.push(a);
        }
        let k = self.arch.components;
        let kd = k * self.arch.theta_dim;
        let mut logits = vec![T::zero(); k];
        let mut means = vec![T::zero(); kd];
        let mut log_vars = vec![T::zero(); kd];
        let last = activations.last().unwrap().clone();
        self.layer_apply(n_hidden, &last, &mut logits);
        self.layer_apply(n_hidden + 1, &last, &mut means);
        self.layer_apply(n_hidden + 2, &last, &mut log_vars);
        ForwardPass { activations, logits, means, log_vars }
    }

    /// Evaluate the conditional mixture at summary statistics `x`.
    pub fn forward(&self, x: &[T]) -> Result<GaussianMixture<T>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::invalid(format!(
                "expected {} summary statistics, got {}",
                self.arch.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite summary statistics"));
        }
        let pass = self.forward_raw(x);
        if pass.logits.iter().any(|v| !v.is_finite())
            || pass.means.iter().any(|v| !v.is_finite())
            || pass.log_vars.iter().any(|v| !v.is_finite())
        {
            return Err(Error::numeric("non-finite network activations"));
        }
        let k = self.arch.components;
        let d = self.arch.theta_dim;
        let weights = softmax(&pass.logits);
        let floor = T::of(VARIANCE_FLOOR);
        let means: Vec<Vec<T>> = (0..k).map(|i| pass.means[i * d..(i + 1) * d].to_vec()).collect();
        let variances: Vec<Vec<T>> = (0..k)
            .map(|i| pass.log_vars[i * d..(i + 1) * d].iter().map(|s| s.exp().max(floor)).collect())
            .collect();
        GaussianMixture::new(weights, means, variances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let dims = [
            self.arch.input_dim,
            self.arch.theta_dim,
            self.arch.components,
            self.arch.hidden.len(),
        ];
        for d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &h in &self.arch.hidden {
            buf.extend_from_slice(&(h as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&p.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::invalid("truncated model file"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != MAGIC {
            return Err(Error::invalid("not a model file (bad magic)"));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model format version {version}")));
        }
        let mut read_u32 =
            |pos: &mut usize| -> Result<usize> {
                Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize)
            };
        let input_dim = read_u32(&mut pos)?;
        let theta_dim = read_u32(&mut pos)?;
        let components = read_u32(&mut pos)?;
        let n_hidden = read_u32(&mut pos)?;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(read_u32(&mut pos)?);
        }
        let arch = MdnArchitecture { input_dim, hidden, components, theta_dim };
        arch.validate()?;
        let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        if count != arch.param_count() {
            return Err(Error::invalid("model parameter count does not match architecture"));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            params.push(T::of(v));
        }
        Ok(MdnModel { arch, params })
    }
}

struct ForwardPass<T> {
    /// Layer inputs: `activations[0]` is the input, then each tanh output.
    activations: Vec<Vec<T>>,
    logits: Vec<T>,
    means: Vec<T>,
    log_vars: Vec<T>,
}

fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - mx).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.iter().map(|&e| e / total).collect()
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let mx = z.iter().copied().fold(T::neg_infinity(), T::max);
    mx + z.iter().map(|&v| (v - mx).exp()).sum::<T>().ln()
}

/// Negative mean log-likelihood of `(theta, x)` pairs under the model.
pub fn mdn_loss<T: Scalar>(model: &MdnModel<T>, batch: &[(Vec<T>, Vec<T>)]) -> Result<T> {
    let (loss, _) = loss_and_gradient(model, batch, false)?;
    Ok(loss)
}

/// Exact gradient of [`mdn_loss`] with respect to every network parameter.
pub fn mdn_loss_gradient<T: Scalar>(
    model: &MdnModel<T>,
    batch: &[(Vec<T>, Vec<T>)],
) -> Result<Vec<T>> {
    let (_, grad) = loss_and_gradient(model, batch, true)?;
    Ok(grad.unwrap())
}

fn loss_and_gradient<T: Scalar>(
    model: &MdnModel<T>,
    batch: &[(Vec<T>, Vec<T>)],
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let arch = &model.arch;
    let k = arch.components;
    let d = arch.theta_dim;
    let offsets = arch.offsets();
    let layers = arch.layers();
    let n_hidden = arch.hidden.len();
    let floor_log = T::of(FLOOR_LOG);
    let log_2pi = T::of(LOG_2PI);
    let half = T::of(0.5);

    let mut grad = if want_grad { Some(vec![T::zero(); model.params.len()]) } else { None };
    let mut total_ll = T::zero();

    for (theta, x) in batch {
        if theta.len() != d || x.len() != arch.input_dim {
            return Err(Error::invalid("batch pair dimensions do not match the architecture"));
        }
        let pass = model.forward_raw(x);

        // Per-component joint log densities.
        let log_alpha: Vec<T> = {
            let lse = log_sum_exp(&pass.logits);
            pass.logits.iter().map(|&z| z - lse).collect()
        };
        let mut joint = vec![T::zero(); k];
        for i in 0..k {
            let mut ln = T::zero();
            for j in 0..d {
                let s = pass.log_vars[i * d + j].max(floor_log);
                let diff = theta[j] - pass.means[i * d + j];
                ln -= half * (log_2pi + s + diff * diff * (-s).exp());
            }
            joint[i] = log_alpha[i] + ln;
        }
        let ll = log_sum_exp(&joint);
        total_ll += ll;

        let Some(grad) = grad.as_mut() else { continue };

        // Responsibilities and head sensitivities of the log-likelihood.
        let alpha = softmax(&pass.logits);
        let resp: Vec<T> = joint.iter().map(|&g| (g - ll).exp()).collect();
        let mut d_logits = vec![T::zero(); k];
        let mut d_means = vec![T::zero(); k * d];
        let mut d_logvars = vec![T::zero(); k * d];
        for i in 0..k {
            d_logits[i] = resp[i] - alpha[i];
            for j in 0..d {
                let s_raw = pass.log_vars[i * d + j];
                let s = s_raw.max(floor_log);
                let inv_var = (-s).exp();
                let diff = theta[j] - pass.means[i * d + j];
                d_means[i * d + j] = resp[i] * diff * inv_var;
                if s_raw > floor_log {
                    d_logvars[i * d + j] = resp[i] * half * (diff * diff * inv_var - T::one());
                }
            }
        }

        // Heads share the last hidden activation.
        let last = &pass.activations[n_hidden];
        let mut d_hidden = vec![T::zero(); last.len()];
        for (head, delta) in
            [(n_hidden, &d_logits), (n_hidden + 1, &d_means), (n_hidden + 2, &d_logvars)]
        {
            let (w_start, b_start) = offsets[head];
            let (fan_in, fan_out) = layers[head];
            for o in 0..fan_out {
                let w_row = w_start + o * fan_in;
                let dv = delta[o];
                for i in 0..fan_in {
                    grad[w_row + i] += dv * last[i];
                    d_hidden[i] += model.params[w_row + i] * dv;
                }
                grad[b_start + o] += dv;
            }
        }

        // Back through the tanh chain.
        let mut delta = d_hidden;
        for layer in (0..n_hidden).rev() {
            let output = &pass.activations[layer + 1];
            let input = &pass.activations[layer];
            for (dv, &h) in delta.iter_mut().zip(output) {
                *dv = *dv * (T::one() - h * h);
            }
            let (w_start, b_start) = offsets[layer];
            let (fan_in, fan_out) = layers[layer];
            let mut d_input = vec![T::zero(); fan_in];
            for o in 0..fan_out {
                let w_row = w_start + o * fan_in;
                let dv = delta[o];
                for i in 0..fan_in {
                    grad[w_row + i] += dv * input[i];
                    d_input[i] += model.params[w_row + i] * dv;
                }
                grad[b_start + o] += dv;
            }
            delta = d_input;
        }
    }

    let scale = -T::one() / T::of_usize(batch.len());
    if let Some(grad) = grad.as_mut() {
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    Ok((scale * total_ll, grad))
}

/// Training protocol for [`train_mdn`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub components: usize,
    pub validation_split: T,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: T::of(1e-3),
            seed: 0,
            hidden: vec![32, 32],
            components: 5,
            validation_split: T::of(0.1),
        }
    }
}

/// Per-epoch losses and the checkpoint that was kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport<T> {
    pub train_loss: Vec<T>,
    pub validation_loss: Vec<T>,
    pub best_epoch: usize,
    pub best_validation_loss: T,
}

/// Train an MDN on `(theta, stats)` pairs by Adam on the negative mean
/// log-likelihood, with a held-out split and best-validation checkpointing.
/// Fully seeded: identical inputs give bit-identical models.
pub fn train_mdn<T: Scalar>(
    dataset: &[(Vec<T>, Vec<T>)],
    cfg: &TrainConfig<T>,
) -> Result<(MdnModel<T>, TrainingReport<T>)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::config("empty training set"));
    }
    if cfg.batch_size == 0 || n < cfg.batch_size {
        return Err(Error::config(format!(
            "dataset size {n} is below the batch size {}",
            cfg.batch_size
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("need at least one epoch"));
    }
    let theta_dim = dataset[0].0.len();
    let input_dim = dataset[0].1.len();
    let arch = MdnArchitecture::new(input_dim, cfg.hidden.clone(), cfg.components, theta_dim);
    let mut model = MdnModel::<T>::init(arch, cfg.seed)?;

    // Deterministic validation split.
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = stream_rng(cfg.seed, &[0x73706c69]);
    shuffle(&mut order, &mut split_rng);
    let n_val = ((T::of_usize(n) * cfg.validation_split).to_usize().unwrap_or(0)).min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<(Vec<T>, Vec<T>)> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut report = TrainingReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        validation_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_validation_loss: T::infinity(),
    };
    let mut best_params = model.params.clone();

    let mut batch_buf: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut epoch_rng = stream_rng(cfg.seed, &[0x65706f63, epoch as u64]);
        shuffle(&mut train, &mut epoch_rng);
        let mut loss_sum = T::zero();
        let mut seen = 0usize;
        for chunk in train.chunks(cfg.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (loss, grad) = loss_and_gradient(&model, &batch_buf, true)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    message: "non-finite training loss".into(),
                });
            }
            adam.step(&mut model.params, &grad.unwrap());
            loss_sum += loss * T::of_usize(chunk.len());
            seen += chunk.len();
        }
        let train_loss = loss_sum / T::of_usize(seen);
        let val_loss = if val.is_empty() { train_loss } else { mdn_loss(&model, &val)? };
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                message: "non-finite validation loss".into(),
            });
        }
        if val_loss < report.best_validation_loss {
            report.best_validation_loss = val_loss;
            report.best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
        }
        report.train_loss.push(train_loss);
        report.validation_loss.push(val_loss);
    }
    model.params = best_params;
    Ok((model, report))
}

fn shuffle<R: Rng>(xs: &mut [usize], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize, lr: T) -> Self {
        Adam {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            t: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let b1c = T::one() - self.beta1.powi(self.t);
        let b2c = T::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1c;
            let v_hat = self.v[i] / b2c;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn tiny_arch() -> MdnArchitecture {
        MdnArchitecture::new(3, vec![4, 4], 2, 2)
    }

    #[test]
    fn parameter_layout_accounts_for_everything() {
        let arch = tiny_arch();
        // 4*3+4 + 4*4+4 + (2*4+2) + (8*4+8) + (8*4+8)
        assert_eq!(arch.param_count(), 16 + 20 + 10 + 40 + 40);
    }

    #[test]
    fn single_component_weight_is_exactly_one() {
        let arch = MdnArchitecture::new(2, vec![4], 1, 1);
        let model = MdnModel::<f64>::init(arch, 3).unwrap();
        let mix = model.forward(&[0.2, -0.4]).unwrap();
        assert_eq!(mix.weights, vec![1.0]);
    }

    #[test]
    fn mixing_weights_always_normalise() {
        let model = MdnModel::<f64>::init(tiny_arch(), 11).unwrap();
        let mut rng = crate::rng::stream_rng(4, &[0]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mix = model.forward(&x).unwrap();
            let total: f64 = mix.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert!(mix.variances.iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
        }
    }

    #[test]
    fn zeroed_heads_give_uniform_mixing_weights() {
        let model = MdnModel::<f64>::zeroed(tiny_arch()).unwrap();
        let mix = model.forward(&[1.0, 2.0, 3.0]).unwrap();
        for w in &mix.weights {
            assert_abs_diff_eq!(*w, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn loss_at_component_mean_with_unit_variance() {
        // Single component, theta at the mean, identity covariance:
        // loss = (theta_dim / 2) ln(2 pi) per point.
        let arch = MdnArchitecture::new(1, vec![], 1, 3);
        let model = MdnModel::<f64>::zeroed(arch).unwrap();
        let batch = vec![(vec![0.0, 0.0, 0.0], vec![0.7])];
        let loss = mdn_loss(&model, &batch).unwrap();
        assert_abs_diff_eq!(loss, 1.5 * LOG_2PI, epsilon = 1e-12);
    }

    #[test]
    fn duplicating_the_batch_keeps_loss_and_gradient() {
        let model = MdnModel::<f64>::init(tiny_arch(), 5).unwrap();
        let mut rng = crate::rng::stream_rng(6, &[0]);
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..7)
            .map(|_| {
                (
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let mut doubled = batch.clone();
        doubled.extend(batch.clone());
        let a = mdn_loss(&model, &batch).unwrap();
        let b = mdn_loss(&model, &doubled).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        let ga = mdn_loss_gradient(&model, &batch).unwrap();
        let gb = mdn_loss_gradient(&model, &doubled).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    fn finite_difference_gradient(
        model: &MdnModel<f64>,
        batch: &[(Vec<f64>, Vec<f64>)],
        h: f64,
    ) -> Vec<f64> {
        let mut fd = vec![0.0; model.params.len()];
        let mut probe = model.clone();
        for i in 0..model.params.len() {
            probe.params[i] = model.params[i] + h;
            let up = mdn_loss(&probe, batch).unwrap();
            probe.params[i] = model.params[i] - h;
            let down = mdn_loss(&probe, batch).unwrap();
            probe.params[i] = model.params[i];
            fd[i] = (up - down) / (2.0 * h);
        }
        fd
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(8, &[1]);
        for trial in 0..10 {
            let model = MdnModel::<f64>::init(tiny_arch(), 100 + trial).unwrap();
            let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
                .map(|_| {
                    (
                        (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                        (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                    )
                })
                .collect();
            let grad = mdn_loss_gradient(&model, &batch).unwrap();
            let fd = finite_difference_gradient(&model, &batch, 1e-5);
            let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den < 1e-4, "relative gradient error {} in trial {trial}", num / den);
        }
    }

    #[test]
    fn gradient_vanishes_at_a_fitted_point() {
        // One 1-parameter component trained to a single pair sits at a local
        // minimum; drive it there with Adam and check the gradient shrinks.
        let arch = MdnArchitecture::new(1, vec![], 1, 1);
        let mut model = MdnModel::<f64>::init(arch, 2).unwrap();
        let batch = vec![(vec![0.3], vec![1.0])];
        let mut adam = Adam::new(model.params.len(), 0.05);
        for _ in 0..2000 {
            let g = mdn_loss_gradient(&model, &batch).unwrap();
            adam.step(&mut model.params, &g);
        }
        let g = mdn_loss_gradient(&model, &batch).unwrap();
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "gradient norm {norm} at converged point");
    }

    #[test]
    fn training_is_reproducible_and_loss_decreases() {
        // Linear-Gaussian toy: x = theta + noise.
        let mut rng = crate::rng::stream_rng(99, &[0]);
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..256)
            .map(|_| {
                let theta = rng.gen_range(0.0..1.0);
                let x = theta + 0.1 * rng.gen_range(-1.0..1.0);
                (vec![theta], vec![x])
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 7,
            hidden: vec![16],
            components: 2,
            validation_split: 0.1,
        };
        let (model_a, report_a) = train_mdn(&data, &cfg).unwrap();
        let (model_b, report_b) = train_mdn(&data, &cfg).unwrap();
        assert_eq!(model_a.params, model_b.params);
        assert_eq!(report_a.best_validation_loss, report_b.best_validation_loss);

        let head: f64 = report_a.train_loss[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = report_a.train_loss[report_a.train_loss.len() - 5..].iter().sum::<f64>()
            / 5.0;
        assert!(tail < head, "training loss did not decrease ({head} -> {tail})");
    }

    #[test]
    fn tiny_dataset_is_a_config_error() {
        let cfg = TrainConfig::<f64>::default();
        let data = vec![(vec![0.1], vec![0.2]); 8];
        assert!(matches!(train_mdn(&data, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = MdnModel::<f64>::init(tiny_arch(), 21).unwrap();
        model.save(&path).unwrap();
        let back = MdnModel::<f64>::load(&path).unwrap();
        assert_eq!(model, back);

        // Same seed, same bytes.
        let again = MdnModel::<f64>::init(tiny_arch(), 21).unwrap();
        let path2 = dir.path().join("model2.bin");
        again.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
