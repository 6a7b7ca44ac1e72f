//! Train a linear probe that attends over the spectrogram and export its
//! attention weights next to the reference onsets.
//!
//!     cargo run --release --example attention_maps -- 5
//!
//! The argument is the window half-width D. Writes `<piece>.attention.npz`
//! and `<piece>.attention.png` under `runs/attention_maps/`.

use oaf_core::corpus::{Corpus, SyntheticCorpus};
use oaf_core::dataio::{SynthParams, HOP_SECONDS};
use oaf_core::evaluation::{export_attention_maps, onset_alignment, onset_frames};
use oaf_core::model::{AttentionTarget, ModelConfig, Variant};
use oaf_core::training::{train_run, TrainConfig};

fn main() -> oaf_core::Result<()> {
    let d = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let corpus = Corpus::synthetic(&SyntheticCorpus {
        n_train: 12,
        n_validation: 0,
        n_test: 2,
        // Sparse, isolated notes make the onsets easy to see.
        params: SynthParams { duration: (4.0, 6.0), density: (0.5, 1.0), ..SynthParams::default() },
        ..SyntheticCorpus::default()
    })?;
    let model_cfg = ModelConfig::desk()
        .with_variant(Variant::LinearProbe)
        .with_attention(AttentionTarget::Spec, d);
    let train = TrainConfig { max_steps: 400, validate_every: 0, checkpoint_every: 0, ..TrainConfig::desk() };
    let run = train_run(&corpus, &model_cfg, &train, None, None)?;

    for ex in &corpus.test {
        let out = run.model.infer(&ex.spec)?;
        let exported = export_attention_maps(
            out.attention.as_ref(),
            &ex.id,
            Some(&ex.notes),
            HOP_SECONDS,
            "runs/attention_maps",
        )?;
        let onsets = onset_frames(&ex.notes, HOP_SECONDS);
        let aligned = out.attention.as_ref().and_then(|m| onset_alignment(m, &onsets, 2));
        println!(
            "{}: {} -> {}  peak near an onset for {}",
            ex.id,
            exported.array.display(),
            exported.image.display(),
            aligned.map_or("n/a".into(), |a| format!("{:.0}% of frames", 100.0 * a))
        );
    }
    Ok(())
}
