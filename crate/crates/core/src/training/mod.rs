//! Optimization: binary cross-entropy objective, Adam, seeded batch
//! sampling, run directories and resumable checkpoints.

mod adam;
mod run;

use ndarray::{s, Array2, Array3, IxDyn, Zip};
use oaf_autograd::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::dataio::N_PITCHES;
use crate::error::{config, validation, Error, Result};
use crate::model::Model;

pub use adam::Adam;
pub use run::{train_run, RunOutcome};

/// Clamp applied to probabilities inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Frames per training crop; recordings shorter than this are padded.
    pub sequence_length: usize,
    pub seed: u64,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Steps between validation passes; 0 disables them.
    pub validate_every: usize,
    pub onset_loss: bool,
    pub frame_loss: bool,
    /// Global gradient-norm limit, off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 6e-5,
            batch_size: 16,
            max_steps: 160_000,
            sequence_length: crate::dataio::WINDOW_FRAMES,
            seed: 0,
            checkpoint_every: 5000,
            validate_every: 500,
            onset_loss: true,
            frame_loss: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// CPU-scale schedule used by the experiment runners.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            max_steps: 2000,
            sequence_length: 128,
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    /// The linear and convolutional probes have few parameters and stall at
    /// the full model's step size.
    pub fn desk_probe() -> Self {
        Self {
            learning_rate: 1e-2,
            max_steps: 4000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.sequence_length == 0 {
            return Err(config("batch_size and sequence_length must be positive"));
        }
        if !self.onset_loss && !self.frame_loss {
            return Err(config("at least one loss term must be enabled"));
        }
        if self.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(config("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Loss of one step. `total = onset + frame`; disabled terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub onset: f64,
    pub frame: f64,
}

/// Mean elementwise binary cross entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(pred: &Array2<f64>, target: &Array2<u8>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(validation(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len().max(1) as f64;
    let mut total = 0.0;
    Zip::from(pred).and(target).for_each(|&p, &y| {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= if y != 0 { p.ln() } else { (1.0 - p).ln() };
    });
    Ok(total / n)
}

/// A sampled batch of crops.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, L, F]`
    pub input: Array3<f64>,
    /// `[B*L, 88]`
    pub onset: Tensor,
    pub frame: Tensor,
    /// Example index of each item.
    pub sources: Vec<usize>,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Draw the batch for `step`: examples uniformly with replacement, each
/// cropped at a uniform offset. Depends only on `(seed, step)`.
pub fn sample_batch(examples: &[Example], cfg: &TrainConfig, step: usize) -> Result<Batch> {
    if examples.is_empty() {
        return Err(config("the training split is empty"));
    }
    let mut rng = step_rng(cfg.seed, step);
    let (b, l) = (cfg.batch_size, cfg.sequence_length);
    let bins = examples[0].spec.n_bins();
    let mut input = Array3::<f64>::zeros((b, l, bins));
    let mut onset = Array2::<f64>::zeros((b * l, N_PITCHES));
    let mut frame = Array2::<f64>::zeros((b * l, N_PITCHES));
    let mut sources = Vec::with_capacity(b);
    for i in 0..b {
        let k = rng.gen_range(0..examples.len());
        let ex = &examples[k];
        let t = ex.n_frames();
        let start = if t > l { rng.gen_range(0..=t - l) } else { 0 };
        let n = (t - start).min(l);
        input
            .slice_mut(s![i, ..n, ..])
            .assign(&ex.spec.values.slice(s![start..start + n, ..]));
        let rows = s![i * l..i * l + n, ..];
        onset
            .slice_mut(rows)
            .assign(&ex.labels.onset.slice(s![start..start + n, ..]).mapv(f64::from));
        frame
            .slice_mut(rows)
            .assign(&ex.labels.frame.slice(s![start..start + n, ..]).mapv(f64::from));
        sources.push(k);
    }
    Ok(Batch {
        input,
        onset: onset.into_dyn(),
        frame: frame.into_dyn(),
        sources,
    })
}

/// Forward, backward and one Adam update. The returned loss is the one
/// computed before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &Batch, cfg: &TrainConfig, step: usize) -> Result<LossValue> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &batch.input, true)?;
    let frame_term = cfg.frame_loss.then(|| g.bce_mean(out.frame, &batch.frame, BCE_EPS));
    let onset_term = match out.onset {
        Some(o) if cfg.onset_loss => Some(g.bce_mean(o, &batch.onset, BCE_EPS)),
        _ => None,
    };
    let value = |v: Option<oaf_autograd::Var>| v.map_or(0.0, |v| g.value(v)[[]]);
    let loss = LossValue {
        onset: value(onset_term),
        frame: value(frame_term),
        total: value(onset_term) + value(frame_term),
    };
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            batch: batch.sources.clone(),
        });
    }
    let root = match (onset_term, frame_term) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(config("no loss term applies to this model variant"));
        }
    };
    let mut grads = g.backward(root);
    let mut grads: Vec<Option<Tensor>> = out.params.iter().map(|&v| grads.take(v)).collect();
    if let Some(limit) = cfg.grad_clip {
        let norm = grads
            .iter()
            .flatten()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > limit {
            let f = limit / norm;
            grads.iter_mut().flatten().for_each(|t| t.mapv_inplace(|x| x * f));
        }
    }
    adam.step(model.params_mut().values_mut(), &grads, cfg.learning_rate);
    model.update_running_stats(&out.bn_stats);
    if !model.params().all_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            batch: batch.sources.clone(),
        });
    }
    Ok(loss)
}

/// Mean loss over whole recordings in inference mode.
pub fn evaluate_loss(model: &Model, examples: &[Example], cfg: &TrainConfig) -> Result<LossValue> {
    let mut acc = LossValue { total: 0.0, onset: 0.0, frame: 0.0 };
    if examples.is_empty() {
        return Ok(acc);
    }
    for ex in examples {
        let out = model.infer(&ex.spec)?;
        let frame = if cfg.frame_loss { bce_loss(&out.frame, &ex.labels.frame)? } else { 0.0 };
        let onset = match &out.onset {
            Some(o) if cfg.onset_loss => bce_loss(o, &ex.labels.onset)?,
            _ => 0.0,
        };
        acc.onset += onset;
        acc.frame += frame;
        acc.total += onset + frame;
    }
    let n = examples.len() as f64;
    Ok(LossValue {
        total: acc.total / n,
        onset: acc.onset / n,
        frame: acc.frame / n,
    })
}

pub(crate) fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::zeros(IxDyn(t.shape()))
}
