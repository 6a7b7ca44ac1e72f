//! Full model without attention and with attention over the spectrogram,
//! the onset activations and the feature-stack output, compared pairwise.
//!
//!     cargo run --release --example attention_compare
//!
//! Writes `compare.csv`, `pairwise.csv` and per-target attention maps
//! under `runs/attention_compare/compare/`.

use oaf_core::experiment::{run_attention_comparison, smoke_spec};

fn main() -> oaf_core::Result<()> {
    let mut spec = smoke_spec("runs/attention_compare");
    spec.export_attention = true;
    let corpus = spec.data.load()?;
    let res = run_attention_comparison(&spec, &corpus)?;

    for row in &res.table.rows {
        match row.summary() {
            Some(s) => println!("{:<24} note F1 {}", row.id, s.note.f1),
            None => println!("{:<24} {:?}", row.id, row.status),
        }
    }
    for t in res.pairwise.iter().filter(|t| t.p_value.is_some()) {
        println!("{} vs {} ({}): p = {:.3}", t.a, t.b, t.family.name(), t.p_value.unwrap_or(1.0));
    }
    for (target, dir) in &res.attention_dirs {
        println!("{target} maps in {}", dir.display());
    }
    Ok(())
}
