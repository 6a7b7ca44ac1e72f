//! Frame, note and note-with-offset scores, report aggregation, paired
//! significance tests and attention-map export.

mod attention_export;
mod matching;
mod scenario;
mod wilcoxon;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataio::NoteSequence;
use crate::error::{validation, Error, Result};
use crate::inference::BinaryRoll;

pub use attention_export::{export_attention_maps, onset_alignment, onset_frames, render_heatmap, ExportedMap};
pub use matching::{match_notes, max_matching, MatchMode};
pub use scenario::{scenario, Scenario};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricTriple {
    /// Scores from a hit count. No predictions gives precision 0; no
    /// predictions and no references gives a perfect score.
    pub fn from_counts(hits: usize, n_pred: usize, n_truth: usize) -> Self {
        if n_pred == 0 && n_truth == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if n_pred > 0 { hits as f64 / n_pred as f64 } else { 0.0 };
        let recall = if n_truth > 0 { hits as f64 / n_truth as f64 } else { 0.0 };
        Self::from_pr(precision, recall)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// Matching tolerances in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerance {
    pub onset: f64,
    pub offset_abs: f64,
    /// Offset tolerance as a fraction of the reference duration; the larger
    /// of the two offset tolerances applies.
    pub offset_ratio: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            onset: 0.05,
            offset_abs: 0.05,
            offset_ratio: 0.2,
        }
    }
}

/// Pixel-wise scores between two rolls of equal shape.
pub fn frame_metrics(pred: &Array2<u8>, truth: &Array2<u8>) -> Result<MetricTriple> {
    if pred.dim() != truth.dim() {
        return Err(validation(format!(
            "predicted roll {:?} and reference roll {:?} differ in shape",
            pred.dim(),
            truth.dim()
        )));
    }
    let (mut tp, mut np, mut nt) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let (p, t) = (p != 0, t != 0);
        tp += usize::from(p && t);
        np += usize::from(p);
        nt += usize::from(t);
    }
    Ok(MetricTriple::from_counts(tp, np, nt))
}

/// Notes match when pitches are equal and onsets lie within the onset
/// tolerance; each note matches at most once.
pub fn note_metrics(pred: &NoteSequence, truth: &NoteSequence, tol: &Tolerance) -> MetricTriple {
    let m = match_notes(pred, truth, tol, MatchMode::Onset);
    MetricTriple::from_counts(m.len(), pred.len(), truth.len())
}

/// As [`note_metrics`], additionally requiring offsets to agree within
/// `max(offset_abs, offset_ratio × reference duration)`.
pub fn note_with_offset_metrics(pred: &NoteSequence, truth: &NoteSequence, tol: &Tolerance) -> MetricTriple {
    let m = match_notes(pred, truth, tol, MatchMode::OnsetOffset);
    MetricTriple::from_counts(m.len(), pred.len(), truth.len())
}

/// Scores of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub frame: MetricTriple,
    pub note: MetricTriple,
    pub note_with_offset: MetricTriple,
}

/// Score one recording. `pred_roll` should be the roll rebuilt from the
/// final notes when rule-based inference produced them, or the thresholded
/// frame posteriorgram otherwise.
pub fn evaluate_recording(
    id: &str,
    pred_notes: Option<&NoteSequence>,
    pred_roll: Option<&BinaryRoll>,
    truth_notes: &NoteSequence,
    truth_roll: &Array2<u8>,
    tol: &Tolerance,
) -> Result<EvalRow> {
    let notes = pred_notes.ok_or_else(|| validation(format!("{id}: predicted notes missing")))?;
    let roll = pred_roll.ok_or_else(|| validation(format!("{id}: predicted roll missing")))?;
    Ok(EvalRow {
        id: id.to_string(),
        frame: frame_metrics(&roll.values, truth_roll)?,
        note: note_metrics(notes, truth_notes, tol),
        note_with_offset: note_with_offset_metrics(notes, truth_notes, tol),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TripleSummary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub frame: TripleSummary,
    pub note: TripleSummary,
    pub note_with_offset: TripleSummary,
}

/// Metric family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Frame,
    Note,
    NoteWithOffset,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Frame, Family::Note, Family::NoteWithOffset];

    pub fn name(self) -> &'static str {
        match self {
            Family::Frame => "frame",
            Family::Note => "note",
            Family::NoteWithOffset => "note_with_offset",
        }
    }

    pub fn of(self, row: &EvalRow) -> MetricTriple {
        match self {
            Family::Frame => row.frame,
            Family::Note => row.note,
            Family::NoteWithOffset => row.note_with_offset,
        }
    }
}

/// Per-recording rows plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Summary,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        let triple = |fam: Family| {
            let get = |f: fn(&MetricTriple) -> f64| MeanStd::of(&rows.iter().map(|r| f(&fam.of(r))).collect::<Vec<_>>());
            TripleSummary {
                precision: get(|m| m.precision),
                recall: get(|m| m.recall),
                f1: get(|m| m.f1),
            }
        };
        let summary = Summary {
            frame: triple(Family::Frame),
            note: triple(Family::Note),
            note_with_offset: triple(Family::NoteWithOffset),
        };
        Self { rows, summary }
    }

    pub fn family(&self, fam: Family) -> &TripleSummary {
        match fam {
            Family::Frame => &self.summary.frame,
            Family::Note => &self.summary.note,
            Family::NoteWithOffset => &self.summary.note_with_offset,
        }
    }

    /// Per-recording F1 of one family, in row order.
    pub fn f1s(&self, fam: Family) -> Vec<f64> {
        self.rows.iter().map(|r| fam.of(r).f1).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One row per recording, then `mean` and `std` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        for fam in Family::ALL {
            for m in ["precision", "recall", "f1"] {
                header.push(format!("{}_{m}", fam.name()));
            }
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            for fam in Family::ALL {
                let t = fam.of(r);
                rec.extend([t.precision, t.recall, t.f1].map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let mut rec = vec![label.to_string()];
            for fam in Family::ALL {
                let s = self.family(fam);
                for ms in [s.precision, s.recall, s.f1] {
                    rec.push(if pick == 0 { ms.mean } else { ms.std }.to_string());
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NoteEvent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_conventions_and_oracle() {
        let truth = Array2::from_shape_fn((10, 88), |(i, j)| u8::from((i + j) % 5 == 0));
        let m = frame_metrics(&truth, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = frame_metrics(&Array2::zeros((10, 88)), &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = frame_metrics(&Array2::zeros((2, 88)), &Array2::zeros((2, 88))).unwrap();
        assert_eq!(m.f1, 1.0);
        assert!(frame_metrics(&Array2::zeros((2, 88)), &truth).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = Array2::from_shape_fn((10, 88), |_| rng.gen_range(0..2u8));
            let t = Array2::from_shape_fn((10, 88), |_| rng.gen_range(0..2u8));
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for i in 0..10 {
                for j in 0..88 {
                    match (p[[i, j]], t[[i, j]]) {
                        (1, 1) => tp += 1.0,
                        (1, 0) => fp += 1.0,
                        (0, 1) => fn_ += 1.0,
                        _ => {}
                    }
                }
            }
            let m = frame_metrics(&p, &t).unwrap();
            assert_eq!(m.precision, tp / (tp + fp));
            assert_eq!(m.recall, tp / (tp + fn_));
        }
    }

    #[test]
    fn offset_rule_uses_the_larger_tolerance() {
        let truth = NoteSequence::new(vec![NoteEvent::new(60, 1.0, 2.0)], 3.0);
        let tol = Tolerance::default();
        let within = NoteSequence::new(vec![NoteEvent::new(60, 1.0, 2.19)], 3.0);
        let beyond = NoteSequence::new(vec![NoteEvent::new(60, 1.0, 2.21)], 3.0);
        assert_eq!(note_with_offset_metrics(&within, &truth, &tol).f1, 1.0);
        assert_eq!(note_with_offset_metrics(&beyond, &truth, &tol).f1, 0.0);
        assert_eq!(note_metrics(&beyond, &truth, &tol).f1, 1.0);
    }

    #[test]
    fn identical_sequences_score_perfectly() {
        let s = NoteSequence::new(
            vec![NoteEvent::new(60, 0.0, 0.5), NoteEvent::new(64, 0.0, 0.5), NoteEvent::new(60, 1.0, 1.2)],
            2.0,
        );
        for m in [note_metrics(&s, &s, &Tolerance::default()), note_with_offset_metrics(&s, &s, &Tolerance::default())] {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
    }

    fn random_notes(rng: &mut ChaCha8Rng, n: usize) -> NoteSequence {
        let notes = (0..n)
            .map(|_| {
                let on = rng.gen_range(0.0..1.0);
                NoteEvent::new(rng.gen_range(60..63), on, on + rng.gen_range(0.05..0.5))
            })
            .collect();
        NoteSequence::new(notes, 2.0)
    }

    #[test]
    fn swapping_sides_swaps_precision_and_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tol = Tolerance::default();
        // The ratio term follows the reference duration, so offset scores
        // are only swap-symmetric with a purely absolute tolerance.
        let abs_tol = Tolerance { offset_ratio: 0.0, ..tol };
        for _ in 0..200 {
            let na = rng.gen_range(0..8);
            let a = random_notes(&mut rng, na);
            let nb = rng.gen_range(0..8);
            let b = random_notes(&mut rng, nb);
            for (f, g) in [
                (note_metrics(&a, &b, &tol), note_metrics(&b, &a, &tol)),
                (note_with_offset_metrics(&a, &b, &abs_tol), note_with_offset_metrics(&b, &a, &abs_tol)),
            ] {
                assert_eq!(f.precision, g.recall);
                assert_eq!(f.recall, g.precision);
                assert!((0.0..=1.0).contains(&f.f1));
            }
            // Offset matching never finds more pairs than onset matching.
            let with = match_notes(&a, &b, &tol, MatchMode::OnsetOffset).len();
            let without = match_notes(&a, &b, &tol, MatchMode::Onset).len();
            assert!(with <= without);
        }
    }

    #[test]
    fn report_aggregates_and_files() {
        let row = |id: &str, f: f64| EvalRow {
            id: id.into(),
            frame: MetricTriple::from_pr(f, f),
            note: MetricTriple::from_pr(f / 2.0, f),
            note_with_offset: MetricTriple::from_pr(0.0, 0.0),
        };
        let rep = EvalReport::new(vec![row("a", 0.2), row("b", 0.6), row("c", 0.7)]);
        let mean = (0.2 + 0.6 + 0.7) / 3.0;
        assert!((rep.summary.frame.f1.mean - mean).abs() < 1e-12);
        let var = [0.2f64, 0.6, 0.7].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!((rep.summary.frame.f1.std - var.sqrt()).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        rep.write_json(dir.path().join("r.json")).unwrap();
        assert_eq!(EvalReport::read_json(dir.path().join("r.json")).unwrap(), rep);
        rep.write_csv(dir.path().join("r.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 2);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 10);
    }

    #[test]
    fn missing_representation_is_an_error() {
        let s = NoteSequence::default();
        let roll = Array2::zeros((3, 88));
        assert!(evaluate_recording("x", None, None, &s, &roll, &Tolerance::default()).is_err());
    }
}
