use std::path::Path;

use ndarray::{s, Array2};

use super::{NoteSequence, HOP_SECONDS, N_PITCHES, WINDOW_FRAMES};
use crate::arrays::{self, NamedArray};
use crate::error::{validation, Result};
use crate::frontend::Spectrogram;

/// Paired onset and frame targets, `T × 88`, entries 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRolls {
    pub onset: Array2<u8>,
    pub frame: Array2<u8>,
    pub hop_seconds: f64,
    /// Notes (or parts of notes) that fell beyond the last frame.
    pub truncated: usize,
}

impl LabelRolls {
    pub fn zeros(n_frames: usize) -> Self {
        Self {
            onset: Array2::zeros((n_frames, N_PITCHES)),
            frame: Array2::zeros((n_frames, N_PITCHES)),
            hop_seconds: HOP_SECONDS,
            truncated: 0,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frame.nrows()
    }

    /// True when every onset cell is also a frame cell.
    pub fn onsets_within_frames(&self) -> bool {
        self.onset
            .iter()
            .zip(self.frame.iter())
            .all(|(&o, &f)| o == 0 || f == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollOptions {
    /// Frames marked in the onset roll starting at the onset frame.
    pub onset_frames: usize,
    pub hop_seconds: f64,
}

impl Default for RollOptions {
    fn default() -> Self {
        Self {
            onset_frames: 2,
            hop_seconds: HOP_SECONDS,
        }
    }
}

/// Guards frame quantization against representation error in `t / hop`.
const QUANT_EPS: f64 = 1e-9;

/// Frame span `[start, end)` covered by a note before clipping to the roll.
pub(crate) fn note_frame_span(onset: f64, offset: f64, hop: f64) -> (usize, usize) {
    let start = (onset / hop + QUANT_EPS).floor().max(0.0) as usize;
    let end = ((offset / hop - QUANT_EPS).ceil().max(0.0) as usize).max(start + 1);
    (start, end)
}

pub fn notes_to_rolls(notes: &NoteSequence, n_frames: usize) -> Result<LabelRolls> {
    notes_to_rolls_with(notes, n_frames, RollOptions::default())
}

/// Rasterize notes onto `n_frames` frames. A note covers frames
/// `floor(onset/hop)` up to (excluding) `ceil(offset/hop)`; its onset marks
/// the first `onset_frames` of those.
pub fn notes_to_rolls_with(notes: &NoteSequence, n_frames: usize, opts: RollOptions) -> Result<LabelRolls> {
    if n_frames == 0 {
        return Err(validation("label rolls need at least one frame"));
    }
    if opts.onset_frames == 0 {
        return Err(validation("onset extent must be at least one frame"));
    }
    let mut rolls = LabelRolls::zeros(n_frames);
    rolls.hop_seconds = opts.hop_seconds;
    for n in &notes.notes {
        if !n.is_valid() {
            return Err(validation(format!("invalid note {n:?}")));
        }
        let (start, end) = note_frame_span(n.onset, n.offset, opts.hop_seconds);
        if start >= n_frames {
            rolls.truncated += 1;
            continue;
        }
        if end > n_frames {
            rolls.truncated += 1;
        }
        let end = end.min(n_frames);
        let p = n.key_index();
        rolls.frame.slice_mut(s![start..end, p]).fill(1);
        let onset_end = (start + opts.onset_frames).min(end);
        rolls.onset.slice_mut(s![start..onset_end, p]).fill(1);
    }
    if rolls.truncated > 0 {
        log::warn!("{} notes extend past frame {n_frames}", rolls.truncated);
    }
    Ok(rolls)
}

/// Persist rolls as a compressed `.npz` with a header array
/// `[T, 88, hop_seconds]`.
pub fn save_rolls(rolls: &LabelRolls, path: impl AsRef<Path>) -> Result<()> {
    let header = ndarray::arr1(&[rolls.n_frames() as f64, N_PITCHES as f64, rolls.hop_seconds]);
    arrays::write_npz(
        path,
        &[
            ("header", NamedArray::F64(header.into_dyn())),
            ("onset_roll", NamedArray::U8(rolls.onset.clone().into_dyn())),
            ("frame_roll", NamedArray::U8(rolls.frame.clone().into_dyn())),
        ],
    )
}

pub fn load_rolls(path: impl AsRef<Path>) -> Result<LabelRolls> {
    let path = path.as_ref();
    let header = arrays::read_f64(path, "header")?;
    let onset = arrays::read_u8_2d(path, "onset_roll")?;
    let frame = arrays::read_u8_2d(path, "frame_roll")?;
    if header.len() != 3 || header[0] as usize != frame.nrows() || onset.dim() != frame.dim() {
        return Err(validation(format!("{}: inconsistent roll header", path.display())));
    }
    Ok(LabelRolls {
        onset,
        frame,
        hop_seconds: header[2],
        truncated: 0,
    })
}

/// One fixed-length training example.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    /// `WINDOW_FRAMES × n_bins`
    pub spec: Array2<f64>,
    pub onset: Array2<u8>,
    pub frame: Array2<u8>,
    /// Frames taken from the source; the rest is zero padding.
    pub valid_frames: usize,
    /// First source frame of this window.
    pub start_frame: usize,
}

/// Cut a recording into `⌈T/640⌉` windows, zero-padding the last one.
pub fn segment_windows(spec: &Spectrogram, labels: &LabelRolls) -> Result<Vec<TrainingWindow>> {
    let t = spec.n_frames();
    if t != labels.n_frames() {
        return Err(validation(format!(
            "spectrogram has {t} frames but labels have {}",
            labels.n_frames()
        )));
    }
    let bins = spec.n_bins();
    let mut out = Vec::with_capacity(t.div_ceil(WINDOW_FRAMES));
    for start in (0..t).step_by(WINDOW_FRAMES) {
        let valid = (t - start).min(WINDOW_FRAMES);
        let mut w = TrainingWindow {
            spec: Array2::zeros((WINDOW_FRAMES, bins)),
            onset: Array2::zeros((WINDOW_FRAMES, N_PITCHES)),
            frame: Array2::zeros((WINDOW_FRAMES, N_PITCHES)),
            valid_frames: valid,
            start_frame: start,
        };
        w.spec
            .slice_mut(s![..valid, ..])
            .assign(&spec.values.slice(s![start..start + valid, ..]));
        w.onset
            .slice_mut(s![..valid, ..])
            .assign(&labels.onset.slice(s![start..start + valid, ..]));
        w.frame
            .slice_mut(s![..valid, ..])
            .assign(&labels.frame.slice(s![start..start + valid, ..]));
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NoteEvent;
    use proptest::prelude::*;

    #[test]
    fn empty_notes_give_zero_rolls() {
        let r = notes_to_rolls(&NoteSequence::default(), 10).unwrap();
        assert_eq!(r.frame.sum(), 0);
        assert_eq!(r.onset.sum(), 0);
    }

    #[test]
    fn four_frame_note() {
        let seq = NoteSequence::new(vec![NoteEvent::new(60, 0.0, 0.128)], 1.0);
        let r = notes_to_rolls(&seq, 10).unwrap();
        let col: Vec<u8> = r.frame.column(39).to_vec();
        assert_eq!(col, vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(r.onset[[0, 39]], 1);
        assert_eq!(r.onset[[1, 39]], 1);
        assert_eq!(r.onset[[2, 39]], 0);
        assert_eq!(r.frame.sum(), 4);
    }

    #[test]
    fn simultaneous_notes_superpose() {
        let seq = NoteSequence::new(
            vec![NoteEvent::new(60, 0.0, 0.128), NoteEvent::new(64, 0.0, 0.128)],
            1.0,
        );
        let r = notes_to_rolls(&seq, 8).unwrap();
        assert_eq!(r.frame.column(39), r.frame.column(43));
        assert_eq!(r.frame.sum(), 8);
    }

    #[test]
    fn notes_past_the_end_are_counted() {
        let seq = NoteSequence::new(
            vec![NoteEvent::new(60, 0.0, 1.0), NoteEvent::new(62, 5.0, 6.0)],
            6.0,
        );
        let r = notes_to_rolls(&seq, 10).unwrap();
        assert_eq!(r.truncated, 2);
        assert_eq!(r.frame.column(39).sum(), 10);
    }

    #[test]
    fn segment_counts_and_padding() {
        for (t, expect) in [(640usize, 1usize), (1300, 3), (1, 1)] {
            let spec = Spectrogram::from_values(Array2::from_elem((t, 229), 0.5)).unwrap();
            let labels = LabelRolls::zeros(t);
            let w = segment_windows(&spec, &labels).unwrap();
            assert_eq!(w.len(), expect);
            assert!(w.iter().all(|w| w.spec.nrows() == WINDOW_FRAMES));
            let last = w.last().unwrap();
            let real = t - (expect - 1) * WINDOW_FRAMES;
            assert_eq!(last.valid_frames, real);
            assert!(last.spec.slice(s![real.., ..]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn segment_rejects_mismatch() {
        let spec = Spectrogram::from_values(Array2::zeros((5, 229))).unwrap();
        assert!(segment_windows(&spec, &LabelRolls::zeros(6)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let seq = NoteSequence::new(vec![NoteEvent::new(21, 0.1, 0.5), NoteEvent::new(108, 0.3, 0.9)], 1.0);
        let r = notes_to_rolls(&seq, 40).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.npz");
        save_rolls(&r, &p).unwrap();
        assert_eq!(load_rolls(&p).unwrap(), r);
    }

    fn arb_notes() -> impl Strategy<Value = Vec<NoteEvent>> {
        prop::collection::vec((21u8..=108, 0.0f64..9.0, 0.01f64..2.0), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(p, on, d)| NoteEvent::new(p, on, on + d))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn onsets_imply_frames(notes in arb_notes(), n_frames in 1usize..400) {
            let r = notes_to_rolls(&NoteSequence::new(notes, 0.0), n_frames).unwrap();
            prop_assert!(r.onsets_within_frames());
        }

        #[test]
        fn segmentation_preserves_real_frames(t in 1usize..2000) {
            let values = Array2::from_shape_fn((t, 229), |(i, j)| ((i * 7 + j) % 13) as f64 / 13.0);
            let spec = Spectrogram::from_values(values.clone()).unwrap();
            let w = segment_windows(&spec, &LabelRolls::zeros(t)).unwrap();
            prop_assert_eq!(w.len(), t.div_ceil(WINDOW_FRAMES));
            let total: usize = w.iter().map(|w| w.valid_frames).sum();
            prop_assert_eq!(total, t);
            let rows: Vec<_> = w.iter().flat_map(|w| w.spec.slice(s![..w.valid_frames, ..]).rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>()).collect();
            let orig: Vec<_> = values.rows().into_iter().map(|r| r.to_vec()).collect();
            prop_assert_eq!(rows, orig);
        }
    }
}
