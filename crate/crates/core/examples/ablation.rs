//! Ablation table: every cell scored with and without rule-based
//! inference, plus Wilcoxon p-values against the baseline cell.
//!
//!     cargo run --release --example ablation            # seconds, tiny models
//!     cargo run --release --example ablation -- desk    # desk-scale cells
//!
//! Results go to `runs/ablation_example/ablation/table.{csv,json}`.

use oaf_core::evaluation::Family;
use oaf_core::experiment::{run_ablation, smoke_spec, ExperimentSpec};

fn main() -> oaf_core::Result<()> {
    let out = "runs/ablation_example";
    let spec = match std::env::args().nth(1).as_deref() {
        Some("desk") => ExperimentSpec { out: out.into(), ..ExperimentSpec::desk() },
        _ => smoke_spec(out),
    };
    let corpus = spec.data.load()?;
    let table = run_ablation(&spec, &corpus)?;

    println!("{:<20} {:>8} {:>8} {:>10}  p(note)", "row", "frame", "note", "note+off");
    for row in &table.rows {
        let f1 = |fam| row.f1(fam).map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let p = row.p_values[1].map_or("-".to_string(), |p| format!("{p:.3}"));
        println!(
            "{:<20} {:>8} {:>8} {:>10}  {p}",
            row.id,
            f1(Family::Frame),
            f1(Family::Note),
            f1(Family::NoteWithOffset)
        );
    }
    Ok(())
}
