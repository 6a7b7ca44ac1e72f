//! Render a synthetic piano corpus: WAV, MIDI and a manifest that the
//! loader (and `oaf --set data.manifest=...`) accepts.
//!
//!     cargo run --release --example synth_corpus -- /tmp/oaf-data

use oaf_core::corpus::{write_synthetic_corpus, Corpus, SyntheticCorpus};

fn main() -> oaf_core::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synthetic-corpus".into());
    let spec = SyntheticCorpus {
        n_train: 6,
        n_validation: 0,
        n_test: 2,
        ..SyntheticCorpus::default()
    };
    let manifest = write_synthetic_corpus(&spec, &dir)?;
    println!("wrote {}", manifest.display());

    // Reading it back goes through the same decoding path as real data.
    let corpus = Corpus::from_manifest(&manifest)?;
    for ex in corpus.train.iter().chain(&corpus.test) {
        let onsets = ex.labels.onset.iter().filter(|&&v| v == 1).count();
        println!(
            "{:<12} {:>4} frames {:>3} notes {:>4} onset cells",
            ex.id,
            ex.n_frames(),
            ex.notes.len(),
            onsets
        );
    }
    Ok(())
}
