//! Complex-spectrogram MSE training with Adam and per-epoch exponential decay.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::model::{save_weights, Features, LsZoneModel};
use crate::nn::{Grads, Params};
use crate::scalar::Real;
use crate::sim::dataset::{load_clip, read_manifest, MANIFEST_FILE};
use crate::sim::split_seed;

pub mod adam;

pub use adam::Adam;

pub const LOSS_CURVE_FILE: &str = "loss_curve.jsonl";
pub const FINAL_WEIGHTS_FILE: &str = "model.lszw";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub clip_seconds: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.99,
            clip_seconds: 3.0,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(Error::Config("clip_seconds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam hyperparameters out of range".into()));
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

/// `0.001 · 0.99^epoch`
pub fn lr_schedule(epoch: usize) -> f64 {
    TrainConfig::default().lr(epoch)
}

fn check_shapes<T: Real>(est: &ComplexSpectrogram<T>, target: &ComplexSpectrogram<T>) -> Result<()> {
    let a = (est.channels(), est.bins(), est.frames());
    let b = (target.channels(), target.bins(), target.frames());
    if a != b {
        return Err(Error::shape(format!("estimate {a:?} vs target {b:?}")));
    }
    Ok(())
}

/// Mean of squared real and imaginary differences: `Σ|Ŝ − S|² / (2·Z·F·T)`.
pub fn loss_mse_complex<T: Real>(est: &ComplexSpectrogram<T>, target: &ComplexSpectrogram<T>) -> Result<T> {
    check_shapes(est, target)?;
    let n = est.as_slice().len();
    if n == 0 {
        return Ok(T::zero());
    }
    let sum: T = est.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (*a - *b).norm_sqr()).sum();
    Ok(sum / T::cst(2.0 * n as f64))
}

/// Loss and `∂L/∂Ŝ = (Ŝ − S) / (Z·F·T)`, both parts.
pub fn loss_mse_complex_grad<T: Real>(
    est: &ComplexSpectrogram<T>,
    target: &ComplexSpectrogram<T>,
) -> Result<(T, ComplexSpectrogram<T>)> {
    let loss = loss_mse_complex(est, target)?;
    let mut g = ComplexSpectrogram::zeros(est.channels(), est.bins(), est.frames());
    let n = est.as_slice().len().max(1);
    let k = T::one() / T::cst(n as f64);
    for z in 0..est.channels() {
        for t in 0..est.frames() {
            let (e, s) = (est.frame(z, t), target.frame(z, t));
            for ((o, a), b) in g.frame_mut(z, t).iter_mut().zip(e).zip(s) {
                *o = (*a - *b) * k;
            }
        }
    }
    Ok((loss, g))
}

/// One training pair: mixture features and the target spectrogram.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub id: String,
    pub features: Features<T>,
    pub target: ComplexSpectrogram<T>,
}

pub fn prepare_example<T: Real>(
    model: &LsZoneModel<T>,
    id: impl Into<String>,
    mixture: &[Vec<T>],
    target: &[Vec<T>],
) -> Result<Example<T>> {
    let spec = model.stft().analyze(mixture)?;
    let target = model.stft().analyze(target)?;
    check_shapes(&spec, &target)?;
    Ok(Example {
        id: id.into(),
        features: model.features(spec)?,
        target,
    })
}

/// Loss of one example under parameters `p`.
pub fn example_loss<T: Real>(model: &LsZoneModel<T>, p: &Params<T>, ex: &Example<T>) -> Result<T> {
    let xhat = model.network(p, &ex.features, &mut model.new_state())?;
    loss_mse_complex(&model.reconstruct_spec(&xhat, &ex.features.spec)?, &ex.target)
}

/// Adds `scale · ∂L/∂θ` of one example into `grads` and returns its loss.
pub fn accumulate_grad<T: Real>(
    model: &LsZoneModel<T>,
    p: &Params<T>,
    grads: &mut Grads<T>,
    ex: &Example<T>,
    scale: T,
) -> Result<T> {
    let (xhat, trace) = model.forward_traced(p, &ex.features)?;
    let est = model.reconstruct_spec(&xhat, &ex.features.spec)?;
    let (loss, mut g) = loss_mse_complex_grad(&est, &ex.target)?;
    if scale != T::one() {
        for z in 0..g.channels() {
            for t in 0..g.frames() {
                g.frame_mut(z, t).iter_mut().for_each(|v| *v = *v * scale);
            }
        }
    }
    let gx = model.reconstruct_spec_backward(&xhat, &ex.features.spec, &g);
    model.backward(p, grads, &ex.features, &trace, &gx)?;
    Ok(loss)
}

/// One Adam step on the mean loss of `batch`; returns that mean loss.
pub fn train_step<T: Real>(
    model: &mut LsZoneModel<T>,
    opt: &mut Adam<T>,
    batch: &[&Example<T>],
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = T::one() / T::cst(batch.len() as f64);
    let mut grads = model.store().new_grads();
    let mut total = 0.0;
    for ex in batch {
        total += accumulate_grad(model, model.params(), &mut grads, ex, scale)?.as_f64();
    }
    opt.step(model.store_mut().params_mut(), &grads, lr);
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Mixture/target pairs of a built dataset, already transformed.
pub fn load_examples<T: Real>(model: &LsZoneModel<T>, dir: &Path, clip_seconds: f64) -> Result<Vec<Example<T>>> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    if manifest.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    let len = (clip_seconds * model.stft_config().sample_rate as f64).round() as usize;
    let cast = |ch: Vec<Vec<f32>>| -> Vec<Vec<T>> {
        ch.into_iter()
            .map(|c| {
                let mut v: Vec<T> = c.into_iter().map(|x| T::cst(x as f64)).collect();
                v.resize(len, T::zero());
                v
            })
            .collect()
    };
    manifest
        .iter()
        .map(|m| {
            let (mix, target) = load_clip(dir, &m.clip_id)?;
            prepare_example(model, m.clip_id.clone(), &cast(mix), &cast(target))
        })
        .collect()
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("checkpoint_{epoch:04}.lszw"))
}

/// Seeded shuffled mini-batches, one Adam step per batch, a loss-curve record
/// and checkpoint per epoch. Reduction order is fixed, so reruns are
/// bit-identical.
pub fn train<T: Real>(
    model: &mut LsZoneModel<T>,
    dataset: &Path,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let examples = load_examples(model, dataset, cfg.clip_seconds)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let curve_path = out.join(LOSS_CURVE_FILE);
    let mut curve_file = std::fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    let mut opt = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, epoch as u64)));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<T>> = chunk.iter().map(|&i| &examples[i]).collect();
            sum += train_step(model, &mut opt, &batch, lr)? * batch.len() as f64;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            mean_loss: sum / examples.len() as f64,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(curve_file, "{line}").map_err(|e| Error::io(&curve_path, e))?;
        save_weights(model, &checkpoint_path(out, epoch))?;
        curve.push(rec);
    }
    save_weights(model, &out.join(FINAL_WEIGHTS_FILE))?;
    Ok(curve)
}
