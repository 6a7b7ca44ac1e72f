//! A small hand-built scene where the three metric families disagree.
//!
//! The reference has three successive notes followed by a C major chord.
//! `fragmented` covers the reference pixels well but chops every note into
//! one-frame pieces, so only two of its 35 notes start where a reference
//! note starts. `aligned` gets every onset right and every length wrong.

use ndarray::Array2;

use crate::dataio::{NoteEvent, NoteSequence, HOP_SECONDS};
use crate::error::Result;
use crate::inference::BinaryRoll;

const C4: u8 = 60;
const D4: u8 = 62;
const E4: u8 = 64;
const G4: u8 = 67;

/// Reference and two predictions on a `HOP_SECONDS` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: NoteSequence,
    pub fragmented: NoteSequence,
    pub aligned: NoteSequence,
    pub n_frames: usize,
}

fn note(pitch: u8, start: usize, end: usize) -> NoteEvent {
    NoteEvent::new(pitch, start as f64 * HOP_SECONDS, end as f64 * HOP_SECONDS)
}

fn blips(pitch: u8, frames: impl IntoIterator<Item = usize>) -> impl Iterator<Item = NoteEvent> {
    frames.into_iter().map(move |t| note(pitch, t, t + 1))
}

pub fn scenario() -> Scenario {
    let n_frames = 48;
    let duration = n_frames as f64 * HOP_SECONDS;
    let truth = vec![
        note(C4, 0, 10),
        note(G4, 10, 20),
        note(E4, 20, 25),
        note(C4, 30, 35),
        note(E4, 30, 35),
        note(G4, 30, 35),
    ];
    // One-frame pieces. Frames next to a reference onset are left out
    // (a one-frame shift is inside the 50 ms window) except for E at 20
    // and C at 30, which are the two hits. The D blips are pure noise.
    let fragmented: Vec<NoteEvent> = blips(C4, 2..10)
        .chain(blips(G4, 12..20))
        .chain(blips(E4, [20, 22, 23, 24]))
        .chain(blips(C4, [30, 32, 33, 34]))
        .chain(blips(E4, 32..35))
        .chain(blips(G4, 32..35))
        .chain(blips(D4, 40..45))
        .collect();
    let aligned = truth
        .iter()
        .map(|n| {
            let start = (n.onset / HOP_SECONDS).round() as usize;
            note(n.pitch, start, start + 2)
        })
        .collect();
    Scenario {
        truth: NoteSequence::new(truth, duration),
        fragmented: NoteSequence::new(fragmented, duration),
        aligned: NoteSequence::new(aligned, duration),
        n_frames,
    }
}

impl Scenario {
    /// Frame roll of `notes` on the scene's grid.
    pub fn roll(&self, notes: &NoteSequence) -> Result<Array2<u8>> {
        Ok(BinaryRoll::from_notes(notes, self.n_frames, HOP_SECONDS)?.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{frame_metrics, note_metrics, note_with_offset_metrics, Tolerance};

    #[test]
    fn families_disagree_as_intended() {
        let s = scenario();
        let tol = Tolerance::default();
        assert_eq!((s.truth.len(), s.fragmented.len(), s.aligned.len()), (6, 35, 6));
        let frag = note_metrics(&s.fragmented, &s.truth, &tol);
        assert!((frag.precision - 2.0 / 35.0).abs() < 1e-12);
        assert!((frag.recall - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(note_metrics(&s.aligned, &s.truth, &tol).f1, 1.0);
        for pred in [&s.fragmented, &s.aligned] {
            assert_eq!(note_with_offset_metrics(pred, &s.truth, &tol).f1, 0.0);
        }
        let truth = s.roll(&s.truth).unwrap();
        let f_frag = frame_metrics(&s.roll(&s.fragmented).unwrap(), &truth).unwrap();
        let f_aligned = frame_metrics(&s.roll(&s.aligned).unwrap(), &truth).unwrap();
        assert!(f_frag.f1 > f_aligned.f1);
    }
}
