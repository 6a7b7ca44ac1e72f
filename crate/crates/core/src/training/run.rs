use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{evaluate_loss, sample_batch, train_step, Adam, LossValue, TrainConfig};
use crate::corpus::Corpus;
use crate::error::{config, Error, Result};
use crate::model::{Checkpoint, Model, ModelConfig, ParamSet, TensorKind};

/// What a finished (or resumed-and-finished) run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    /// Loss of every step executed by this call, in order.
    pub losses: Vec<LossValue>,
    /// `(step, loss)` of each validation pass.
    pub validation: Vec<(usize, LossValue)>,
    /// First step executed by this call.
    pub start_step: usize,
    pub final_checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct Metrics {
    steps: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    final_validation: Option<f64>,
    parameters: usize,
    config_hash: String,
    seconds: f64,
}

fn checkpoint_of(model: &Model, adam: &Adam, cfg: &TrainConfig, step: usize) -> Checkpoint {
    let mut ck = Checkpoint::from_model(model, serde_json::to_value(cfg).expect("config serializes"), step as u64);
    for (kind, moments) in [(TensorKind::AdamM, &adam.m), (TensorKind::AdamV, &adam.v)] {
        for (name, t) in model.params().names().iter().zip(moments) {
            ck.tensors.push((name.clone(), kind, t.clone()));
        }
    }
    ck.adam_t = adam.t;
    ck
}

/// Restore model and optimizer; the optimizer state must cover every
/// parameter.
fn restore(ck: &Checkpoint) -> Result<(Model, Adam)> {
    let model = ck.to_model()?;
    let mut adam = Adam::new(model.params());
    let (m, v): (ParamSet, ParamSet) = (ck.tensors_of(TensorKind::AdamM), ck.tensors_of(TensorKind::AdamV));
    if !m.same_layout(model.params()) || !v.same_layout(model.params()) {
        return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
    }
    adam.m = m.values().to_vec();
    adam.v = v.values().to_vec();
    adam.t = ck.adam_t;
    Ok((model, adam))
}

fn write_rows(path: &Path, rows: &[(usize, LossValue)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "total", "onset", "frame"])?;
    for (step, l) in rows {
        w.write_record(&[step.to_string(), l.total.to_string(), l.onset.to_string(), l.frame.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of an existing loss log with `step < before`.
fn read_rows(path: &Path, before: usize) -> Result<Vec<(usize, LossValue)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
        let step = num(0) as usize;
        if step < before {
            rows.push((step, LossValue { total: num(1), onset: num(2), frame: num(3) }));
        }
    }
    Ok(rows)
}

/// Train from scratch, or from `resume` when given, until
/// `train_cfg.max_steps`. With a run directory, writes `config.toml`,
/// `loss.csv` (one row per step), `validation.csv`, periodic checkpoints
/// under `checkpoints/`, `final.ckpt` and `metrics.json`.
pub fn train_run(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    run_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<RunOutcome> {
    train_cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(config("the training split is empty"));
    }
    let started = Instant::now();
    let (mut model, mut adam, start) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if &ck.model != model_cfg {
                return Err(config(format!("{} was trained with a different model configuration", path.display())));
            }
            let (m, a) = restore(&ck)?;
            (m, a, ck.step as usize)
        }
        None => {
            let m = Model::new(model_cfg.clone())?;
            let a = Adam::new(m.params());
            (m, a, 0)
        }
    };

    let mut loss_rows = Vec::new();
    let mut valid_rows = Vec::new();
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let snap = toml::to_string(&Snapshot { model: model_cfg, train: train_cfg })
            .map_err(|e| config(format!("cannot serialize config: {e}")))?;
        std::fs::write(dir.join("config.toml"), snap).map_err(|e| Error::io(dir, e))?;
        if start > 0 {
            loss_rows = read_rows(&dir.join("loss.csv"), start)?;
            valid_rows = read_rows(&dir.join("validation.csv"), start)?;
        }
    }

    let mut losses = Vec::new();
    let mut validation = Vec::new();
    for step in start..train_cfg.max_steps {
        let batch = sample_batch(&corpus.train, train_cfg, step)?;
        let loss = match train_step(&mut model, &mut adam, &batch, train_cfg, step) {
            Ok(l) => l,
            Err(Error::NonFiniteLoss { step, batch: sources }) => {
                if let Some(dir) = run_dir {
                    let ids: Vec<&str> = sources.iter().map(|&i| corpus.train[i].id.as_str()).collect();
                    let dump = serde_json::json!({ "step": step, "examples": sources, "ids": ids });
                    let p = dir.join("nan_batch.json");
                    std::fs::write(&p, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&p, e))?;
                    write_rows(&dir.join("loss.csv"), &loss_rows)?;
                }
                log::error!("non-finite loss at step {step}; aborting run");
                return Err(Error::NonFiniteLoss { step, batch: sources });
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        loss_rows.push((step, loss));
        if step % 100 == 0 {
            log::info!("step {step}: loss {:.5} (onset {:.5}, frame {:.5})", loss.total, loss.onset, loss.frame);
        }
        let done = step + 1;
        if train_cfg.validate_every > 0 && done % train_cfg.validate_every == 0 && !corpus.validation.is_empty() {
            let v = evaluate_loss(&model, &corpus.validation, train_cfg)?;
            log::info!("step {done}: validation loss {:.5}", v.total);
            validation.push((done, v));
            valid_rows.push((done, v));
        }
        if let Some(dir) = run_dir {
            if train_cfg.checkpoint_every > 0 && done % train_cfg.checkpoint_every == 0 {
                checkpoint_of(&model, &adam, train_cfg, done).save(dir.join("checkpoints").join(format!("step_{done:07}.ckpt")))?;
                write_rows(&dir.join("loss.csv"), &loss_rows)?;
            }
        }
    }

    let mut final_checkpoint = None;
    if let Some(dir) = run_dir {
        write_rows(&dir.join("loss.csv"), &loss_rows)?;
        write_rows(&dir.join("validation.csv"), &valid_rows)?;
        let ck = checkpoint_of(&model, &adam, train_cfg, train_cfg.max_steps.max(start));
        let path = dir.join("final.ckpt");
        ck.save(&path)?;
        let metrics = Metrics {
            steps: loss_rows.len(),
            first_loss: loss_rows.first().map(|r| r.1.total),
            final_loss: loss_rows.last().map(|r| r.1.total),
            final_validation: valid_rows.last().map(|r| r.1.total),
            parameters: model.param_count(),
            config_hash: ck.config_hash.clone(),
            seconds: started.elapsed().as_secs_f64(),
        };
        let p = dir.join("metrics.json");
        std::fs::write(&p, serde_json::to_string_pretty(&metrics)?).map_err(|e| Error::io(&p, e))?;
        final_checkpoint = Some(path);
    }
    Ok(RunOutcome {
        model,
        losses,
        validation,
        start_step: start,
        final_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SyntheticCorpus;
    use crate::dataio::SynthParams;

    fn setup() -> (Corpus, ModelConfig, TrainConfig) {
        let corpus = Corpus::synthetic(&SyntheticCorpus {
            seed: 2,
            n_train: 2,
            n_validation: 1,
            n_test: 0,
            params: SynthParams { duration: (1.0, 1.2), ..SynthParams::default() },
        })
        .unwrap();
        let m = ModelConfig {
            conv_channels: vec![2, 2, 2],
            fc_width: 8,
            n_feat: 8,
            ..ModelConfig::default()
        };
        let t = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 2,
            sequence_length: 8,
            max_steps: 6,
            checkpoint_every: 3,
            validate_every: 3,
            ..TrainConfig::desk()
        };
        (corpus, m, t)
    }

    #[test]
    fn run_directory_layout_and_resume_equivalence() {
        let (corpus, m, t) = setup();
        let dir = tempfile::tempdir().unwrap();
        let full = train_run(&corpus, &m, &t, Some(dir.path()), None).unwrap();
        assert_eq!(full.losses.len(), 6);
        for f in ["config.toml", "loss.csv", "validation.csv", "final.ckpt", "metrics.json", "checkpoints/step_0000003.ckpt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let rows = read_rows(&dir.path().join("loss.csv"), usize::MAX).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(full.validation.len(), 2);

        let resumed = train_run(&corpus, &m, &t, Some(dir.path()), Some(&dir.path().join("checkpoints/step_0000003.ckpt"))).unwrap();
        assert_eq!(resumed.start_step, 3);
        assert_eq!(resumed.losses, full.losses[3..]);
        assert_eq!(resumed.model.params(), full.model.params());
        assert_eq!(read_rows(&dir.path().join("loss.csv"), usize::MAX).unwrap().len(), 6);
    }

    #[test]
    fn same_seed_same_curve() {
        let (corpus, m, t) = setup();
        let a = train_run(&corpus, &m, &t, None, None).unwrap();
        let b = train_run(&corpus, &m, &t, None, None).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn empty_training_split_is_a_config_error() {
        let (mut corpus, m, t) = setup();
        corpus.train.clear();
        assert!(matches!(train_run(&corpus, &m, &t, None, None), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_input_aborts_with_a_dump() {
        let (mut corpus, m, t) = setup();
        corpus.train[0].spec.values.fill(f64::NAN);
        corpus.train[1].spec.values.fill(f64::NAN);
        let dir = tempfile::tempdir().unwrap();
        let err = train_run(&corpus, &m, &t, Some(dir.path()), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }));
        assert!(dir.path().join("nan_batch.json").exists());
    }
}
