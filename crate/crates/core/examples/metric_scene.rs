//! Three ways of scoring the same transcription.
//!
//! A fragmented prediction that paints most of the right pixels wins on
//! frame F1, while a prediction with the right onsets and wrong lengths wins
//! on note F1. Neither survives the offset check.
//!
//!     cargo run --example metric_scene

use oaf_core::evaluation::{frame_metrics, note_metrics, note_with_offset_metrics, scenario, MetricTriple, Tolerance};

fn show(name: &str, m: MetricTriple) {
    println!(
        "  {name:<17} P {:>6.2}  R {:>6.2}  F1 {:>6.2}",
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1
    );
}

fn main() -> oaf_core::Result<()> {
    let s = scenario();
    let tol = Tolerance::default();
    let truth_roll = s.roll(&s.truth)?;
    println!("reference: {} notes over {} frames", s.truth.len(), s.n_frames);
    for (name, pred) in [("fragmented", &s.fragmented), ("aligned", &s.aligned)] {
        println!("{name} ({} notes)", pred.len());
        show("frame", frame_metrics(&s.roll(pred)?, &truth_roll)?);
        show("note", note_metrics(pred, &s.truth, &tol));
        show("note+offset", note_with_offset_metrics(pred, &s.truth, &tol));
    }
    Ok(())
}
