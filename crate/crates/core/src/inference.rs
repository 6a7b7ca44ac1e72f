//! Posteriorgrams to binary rolls and note events.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataio::{notes_to_rolls_with, write_midi, NoteEvent, NoteSequence, RollOptions, HOP_SECONDS, MIN_PITCH, N_PITCHES};
use crate::error::{config, validation, Result};
use crate::frontend::Spectrogram;
use crate::model::Model;

/// A `T × 88` matrix of zeros and ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRoll {
    pub values: Array2<u8>,
    pub hop_seconds: f64,
}

impl BinaryRoll {
    pub fn new(values: Array2<u8>, hop_seconds: f64) -> Result<Self> {
        if values.ncols() != N_PITCHES {
            return Err(validation(format!("a roll needs {N_PITCHES} columns, got {}", values.ncols())));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(validation("roll entries must be 0 or 1"));
        }
        Ok(Self { values, hop_seconds })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    /// Frame roll covered by `notes`, `n_frames` long.
    pub fn from_notes(notes: &NoteSequence, n_frames: usize, hop_seconds: f64) -> Result<Self> {
        let rolls = notes_to_rolls_with(notes, n_frames.max(1), RollOptions { onset_frames: 1, hop_seconds })?;
        let mut values = rolls.frame;
        if n_frames == 0 {
            values = Array2::zeros((0, N_PITCHES));
        }
        Ok(Self { values, hop_seconds })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrphanOnsets {
    /// Emit a `min_note_frames` note for an onset with no frame activity.
    MinLength,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub onset_threshold: f64,
    pub frame_threshold: f64,
    pub min_note_frames: usize,
    pub orphan_onsets: OrphanOnsets,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            onset_threshold: 0.5,
            frame_threshold: 0.5,
            min_note_frames: 1,
            orphan_onsets: OrphanOnsets::MinLength,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("onset_threshold", self.onset_threshold), ("frame_threshold", self.frame_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(config(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        if self.min_note_frames == 0 {
            return Err(config("min_note_frames must be at least 1"));
        }
        Ok(())
    }
}

/// `1` where the posteriorgram is at least `tau`.
pub fn threshold(posteriorgram: &Array2<f64>, tau: f64) -> Result<BinaryRoll> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(config(format!("threshold must lie in (0, 1), got {tau}")));
    }
    BinaryRoll::new(posteriorgram.mapv(|p| u8::from(p >= tau)), HOP_SECONDS)
}

fn note_at(key: usize, start: usize, end: usize, hop: f64) -> NoteEvent {
    NoteEvent::new(MIN_PITCH + key as u8, start as f64 * hop, end as f64 * hop)
}

/// Notes start only where an onset is detected.
///
/// Per pitch, each run of consecutive onset activations may open one note:
/// at its first frame whose frame activation is also on. A new onset run
/// closes a note still sounding from an earlier run. A note extends while
/// the frame roll stays on and closes at the first off frame. An onset run
/// that never meets frame activity is an orphan, handled by
/// [`OrphanOnsets`]. Notes shorter than `min_note_frames` are dropped.
pub fn rule_based_inference(onset: &BinaryRoll, frame: &BinaryRoll, cfg: &InferenceConfig) -> Result<NoteSequence> {
    if onset.values.dim() != frame.values.dim() {
        return Err(validation(format!(
            "onset roll {:?} and frame roll {:?} differ in shape",
            onset.values.dim(),
            frame.values.dim()
        )));
    }
    if (onset.hop_seconds - frame.hop_seconds).abs() > 1e-12 {
        return Err(validation("onset and frame rolls use different hops"));
    }
    let hop = frame.hop_seconds;
    let t_len = frame.n_frames();
    let min = cfg.min_note_frames.max(1);
    let mut notes = Vec::new();
    for key in 0..N_PITCHES {
        let on = onset.values.column(key);
        let fr = frame.values.column(key);
        let mut open: Option<usize> = None;
        // Start of the current onset run and whether it opened a note.
        let mut run: Option<(usize, bool)> = None;
        let emit = |s: usize, e: usize, notes: &mut Vec<NoteEvent>| {
            if e - s >= min {
                notes.push(note_at(key, s, e, hop));
            }
        };
        for t in 0..t_len {
            let onset_now = on[t] == 1;
            if onset_now && run.is_none() {
                run = Some((t, false));
            }
            if !onset_now {
                if let Some((s, false)) = run {
                    if cfg.orphan_onsets == OrphanOnsets::MinLength {
                        emit(s, (s + min).min(t_len.max(s + 1)), &mut notes);
                    }
                }
                run = None;
            }
            if fr[t] == 0 {
                if let Some(s) = open.take() {
                    emit(s, t, &mut notes);
                }
                continue;
            }
            if let Some((s, used)) = run {
                if !used {
                    if let Some(prev) = open.take() {
                        emit(prev, t, &mut notes);
                    }
                    open = Some(t);
                    run = Some((s, true));
                }
            }
        }
        if let Some(s) = open {
            emit(s, t_len, &mut notes);
        }
        if let Some((s, false)) = run {
            if cfg.orphan_onsets == OrphanOnsets::MinLength {
                emit(s, (s + min).min(t_len.max(s + 1)), &mut notes);
            }
        }
    }
    Ok(NoteSequence::new(notes, t_len as f64 * hop))
}

/// Every maximal run of ones per pitch becomes one note.
pub fn roll_to_notes(roll: &BinaryRoll) -> NoteSequence {
    let hop = roll.hop_seconds;
    let t_len = roll.n_frames();
    let mut notes = Vec::new();
    for key in 0..N_PITCHES {
        let col = roll.values.column(key);
        let mut start = None;
        for t in 0..=t_len {
            let on = t < t_len && col[t] == 1;
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    notes.push(note_at(key, s, t, hop));
                    start = None;
                }
                _ => {}
            }
        }
    }
    NoteSequence::new(notes, t_len as f64 * hop)
}

pub fn notes_to_midi(notes: &NoteSequence, path: impl AsRef<Path>) -> Result<()> {
    write_midi(notes, path)
}

/// Output of [`transcribe`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub notes: NoteSequence,
    /// Frame roll scored by frame metrics: rebuilt from the notes when
    /// rule-based inference ran, the thresholded frame posteriorgram
    /// otherwise.
    pub roll: BinaryRoll,
    pub onset_probs: Option<Array2<f64>>,
    pub frame_probs: Array2<f64>,
    pub used_inference: bool,
}

/// Decode posteriorgrams. With `use_inference` the onset posteriorgram is
/// required and notes come from [`rule_based_inference`]; otherwise they
/// are the runs of the thresholded frame posteriorgram.
pub fn decode(
    onset_probs: Option<&Array2<f64>>,
    frame_probs: &Array2<f64>,
    cfg: &InferenceConfig,
    use_inference: bool,
) -> Result<Transcription> {
    cfg.validate()?;
    let frame_roll = threshold(frame_probs, cfg.frame_threshold)?;
    if use_inference {
        let onset_probs = onset_probs.ok_or_else(|| {
            validation("rule-based inference needs onset activations; supply external onsets for this variant")
        })?;
        let onset_roll = threshold(onset_probs, cfg.onset_threshold)?;
        let notes = rule_based_inference(&onset_roll, &frame_roll, cfg)?;
        let roll = BinaryRoll::from_notes(&notes, frame_roll.n_frames(), frame_roll.hop_seconds)?;
        Ok(Transcription {
            notes,
            roll,
            onset_probs: Some(onset_probs.clone()),
            frame_probs: frame_probs.clone(),
            used_inference: true,
        })
    } else {
        Ok(Transcription {
            notes: roll_to_notes(&frame_roll),
            roll: frame_roll,
            onset_probs: onset_probs.cloned(),
            frame_probs: frame_probs.clone(),
            used_inference: false,
        })
    }
}

/// Run a model on one recording and decode it. `external_onsets` replaces
/// the model's own onset activations, e.g. those of a separately trained
/// onset stack.
pub fn transcribe(
    model: &Model,
    spec: &Spectrogram,
    cfg: &InferenceConfig,
    use_inference: bool,
    external_onsets: Option<&Array2<f64>>,
) -> Result<Transcription> {
    let out = model.infer(spec)?;
    if let Some(ext) = external_onsets {
        if ext.dim() != out.frame.dim() {
            return Err(validation(format!(
                "external onsets {:?} do not match the frame posteriorgram {:?}",
                ext.dim(),
                out.frame.dim()
            )));
        }
    }
    let onsets = external_onsets.or(out.onset.as_ref());
    decode(onsets, &out.frame, cfg, use_inference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::notes_to_rolls;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roll(t: usize) -> BinaryRoll {
        BinaryRoll::new(Array2::zeros((t, 88)), 0.032).unwrap()
    }

    const P60: usize = 60 - 21;

    #[test]
    fn threshold_boundary_and_range() {
        let half = Array2::from_elem((3, 88), 0.5);
        assert!(threshold(&half, 0.5).unwrap().values.iter().all(|&v| v == 1));
        assert!(threshold(&half, 0.999).unwrap().values.iter().all(|&v| v == 0));
        assert!(threshold(&half, 0.0).is_err());
        assert!(threshold(&half, 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Array2::from_shape_fn((20, 88), |_| rng.gen_range(0.0..1.0));
        let r = threshold(&p, 0.3).unwrap();
        for i in 0..20 {
            for j in 0..88 {
                assert_eq!(r.values[[i, j]] == 1, p[[i, j]] >= 0.3);
            }
        }
    }

    #[test]
    fn frames_without_onsets_give_nothing() {
        let mut f = roll(30);
        for t in 5..=20 {
            f.values[[t, P60]] = 1;
        }
        let notes = rule_based_inference(&roll(30), &f, &InferenceConfig::default()).unwrap();
        assert!(notes.is_empty());
    }

    #[test]
    fn note_closes_at_first_inactive_frame() {
        let (mut o, mut f) = (roll(20), roll(20));
        o.values[[5, P60]] = 1;
        for t in 5..=9 {
            f.values[[t, P60]] = 1;
        }
        let notes = rule_based_inference(&o, &f, &InferenceConfig::default()).unwrap();
        assert_eq!(notes.len(), 1);
        let n = notes.notes[0];
        assert_eq!(n.pitch, 60);
        assert!((n.onset - 0.160).abs() < 1e-12 && (n.offset - 0.320).abs() < 1e-12);
    }

    #[test]
    fn orphan_onset_policies() {
        let (mut o, f) = (roll(20), roll(20));
        o.values[[5, P60]] = 1;
        let cfg = InferenceConfig { min_note_frames: 2, ..InferenceConfig::default() };
        let notes = rule_based_inference(&o, &f, &cfg).unwrap();
        assert_eq!(notes.len(), 1);
        assert!((notes.notes[0].duration() - 2.0 * 0.032).abs() < 1e-12);
        let discard = InferenceConfig { orphan_onsets: OrphanOnsets::Discard, ..cfg };
        assert!(rule_based_inference(&o, &f, &discard).unwrap().is_empty());
    }

    #[test]
    fn new_onset_retriggers_a_sounding_note() {
        let (mut o, mut f) = (roll(20), roll(20));
        for t in 2..12 {
            f.values[[t, P60]] = 1;
        }
        o.values[[2, P60]] = 1;
        o.values[[3, P60]] = 1;
        o.values[[7, P60]] = 1;
        let notes = rule_based_inference(&o, &f, &InferenceConfig::default()).unwrap();
        let spans: Vec<(f64, f64)> = notes.notes.iter().map(|n| (n.onset / 0.032, n.offset / 0.032)).collect();
        assert_eq!(spans.len(), 2);
        assert!((spans[0].0 - 2.0).abs() < 1e-9 && (spans[0].1 - 7.0).abs() < 1e-9);
        assert!((spans[1].0 - 7.0).abs() < 1e-9 && (spans[1].1 - 12.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_rolls_are_rejected() {
        assert!(rule_based_inference(&roll(3), &roll(4), &InferenceConfig::default()).is_err());
    }

    #[test]
    fn runs_become_notes() {
        assert!(roll_to_notes(&roll(10)).is_empty());
        let mut r = roll(10);
        for t in [2, 3, 4, 7] {
            r.values[[t, 0]] = 1;
        }
        assert_eq!(roll_to_notes(&r).len(), 2);
    }

    fn run_starts(r: &BinaryRoll) -> usize {
        let mut n = 0;
        for k in 0..88 {
            for t in 0..r.n_frames() {
                if r.values[[t, k]] == 1 && (t == 0 || r.values[[t - 1, k]] == 0) {
                    n += 1;
                }
            }
        }
        n
    }

    fn arb_roll(t: usize, density: f64) -> impl Strategy<Value = BinaryRoll> {
        prop::collection::vec(prop::bool::weighted(density), t * 88).prop_map(move |v| {
            let values = Array2::from_shape_vec((t, 88), v.into_iter().map(u8::from).collect()).unwrap();
            BinaryRoll::new(values, 0.032).unwrap()
        })
    }

    proptest! {
        #[test]
        fn run_count_matches_note_count(r in arb_roll(40, 0.3)) {
            prop_assert_eq!(roll_to_notes(&r).len(), run_starts(&r));
        }

        #[test]
        fn inference_properties(o in arb_roll(30, 0.05), f in arb_roll(30, 0.4), noise in arb_roll(30, 0.2)) {
            let cfg = InferenceConfig::default();
            let notes = rule_based_inference(&o, &f, &cfg).unwrap();
            prop_assert!(notes.len() <= run_starts(&o));
            for n in &notes.notes {
                let t = (n.onset / 0.032 + 1e-9).floor() as usize;
                prop_assert_eq!(o.values[[t, n.key_index()]], 1);
            }
            let noisy = BinaryRoll::new(&f.values | &noise.values, 0.032).unwrap();
            prop_assert!(rule_based_inference(&o, &noisy, &cfg).unwrap().len() <= notes.len());
        }

        #[test]
        fn rolls_round_trip_note_counts(starts in prop::collection::btree_set(0usize..20, 0..8), key in 0usize..88) {
            // Non-overlapping, non-touching notes of one pitch.
            let notes: Vec<NoteEvent> = starts.iter().map(|&s| note_at(key, 3 * s, 3 * s + 2, 0.032)).collect();
            let seq = NoteSequence::new(notes, 2.0);
            let rolls = notes_to_rolls(&seq, 64).unwrap();
            let back = roll_to_notes(&BinaryRoll::new(rolls.frame, 0.032).unwrap());
            prop_assert_eq!(back.len(), seq.len());
        }
    }

    #[test]
    fn midi_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mid");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Same-pitch notes are at least 1 s apart, so pairing is unambiguous.
        let notes: Vec<NoteEvent> = (0..100usize)
            .map(|i| {
                let on = (i / 88) as f64 * 3.0 + rng.gen_range(0.0..1.0);
                NoteEvent::new(21 + (i % 88) as u8, on, on + rng.gen_range(0.01..2.0))
            })
            .collect();
        let seq = NoteSequence::new(notes, 0.0);
        notes_to_midi(&seq, &p).unwrap();
        let back = crate::dataio::parse_notes(&p).unwrap();
        assert_eq!(back.len(), seq.len());
        for (x, y) in seq.notes.iter().zip(&back.notes) {
            assert_eq!(x.pitch, y.pitch);
            assert!((x.onset - y.onset).abs() <= 1e-3 && (x.offset - y.offset).abs() <= 1e-3);
        }
    }
}
