//! Train the full model on a small synthetic corpus, then transcribe a
//! held-out piece with and without rule-based inference.
//!
//!     cargo run --release --example train_transcribe -- 300
//!
//! The argument is the number of training steps. Checkpoints, loss curves
//! and the MIDI output land in `runs/train_transcribe/`.

use std::path::Path;

use oaf_core::corpus::{Corpus, SyntheticCorpus};
use oaf_core::dataio::SynthParams;
use oaf_core::evaluation::{note_metrics, Tolerance};
use oaf_core::inference::{notes_to_midi, transcribe, InferenceConfig};
use oaf_core::model::ModelConfig;
use oaf_core::training::{train_run, TrainConfig};

fn main() -> oaf_core::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let dir = Path::new("runs/train_transcribe");
    let corpus = Corpus::synthetic(&SyntheticCorpus {
        n_train: 12,
        n_validation: 1,
        n_test: 2,
        params: SynthParams { duration: (3.0, 5.0), ..SynthParams::default() },
        ..SyntheticCorpus::default()
    })?;
    let train = TrainConfig {
        max_steps: steps,
        validate_every: 100,
        checkpoint_every: 0,
        ..TrainConfig::desk()
    };
    let run = train_run(&corpus, &ModelConfig::desk(), &train, Some(&dir.join("run")), None)?;
    if let (Some(first), Some(last)) = (run.losses.first(), run.losses.last()) {
        println!("loss {:.4} -> {:.4} over {} steps", first.total, last.total, run.losses.len());
    }

    let ex = &corpus.test[0];
    let cfg = InferenceConfig::default();
    for use_inference in [false, true] {
        let t = transcribe(&run.model, &ex.spec, &cfg, use_inference, None)?;
        let m = note_metrics(&t.notes, &ex.notes, &Tolerance::default());
        let label = if use_inference { "with inference" } else { "frame runs" };
        println!("{label:<15} {:>3} notes (truth {}), note F1 {:.1}", t.notes.len(), ex.notes.len(), 100.0 * m.f1);
        let midi = dir.join(format!("{}_{}.mid", ex.id, if use_inference { "infer" } else { "frames" }));
        notes_to_midi(&t.notes, &midi)?;
    }
    Ok(())
}
