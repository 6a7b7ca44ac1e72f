//! Audio and annotation ingestion, label rolls, training windows and the
//! synthetic piano dataset.

mod audio;
mod manifest;
pub mod midi;
mod resample;
mod rolls;
mod synth;

use serde::{Deserialize, Serialize};

pub use audio::{load_audio, write_wav};
pub use manifest::{load_manifest, save_manifest, ManifestEntry, Split};
pub use midi::{parse_midi_bytes, parse_notes, parse_notes_with_report, write_midi, MidiReport};
pub use resample::resample;
pub use rolls::{
    load_rolls, notes_to_rolls, notes_to_rolls_with, save_rolls, segment_windows, LabelRolls,
    RollOptions, TrainingWindow,
};
pub(crate) use rolls::note_frame_span;
pub use synth::{make_synthetic_dataset, render_notes, SynthParams, SyntheticPiece};

/// Sample rate every clip is converted to on ingestion.
pub const SAMPLE_RATE: u32 = 16_000;
/// STFT hop in samples.
pub const HOP_LENGTH: usize = 512;
/// Duration of one spectrogram frame in seconds.
pub const HOP_SECONDS: f64 = HOP_LENGTH as f64 / SAMPLE_RATE as f64;
pub const N_PITCHES: usize = 88;
pub const MIN_PITCH: u8 = 21;
pub const MAX_PITCH: u8 = 108;
/// Length of a training window in frames.
pub const WINDOW_FRAMES: usize = 640;

/// Mono audio at a known sample rate, amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A sounding piano key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// MIDI number, 21..=108.
    pub pitch: u8,
    /// Seconds.
    pub onset: f64,
    /// Seconds, strictly after `onset`.
    pub offset: f64,
    #[serde(default = "default_velocity")]
    pub velocity: u8,
}

fn default_velocity() -> u8 {
    64
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: f64, offset: f64) -> Self {
        Self {
            pitch,
            onset,
            offset,
            velocity: default_velocity(),
        }
    }

    /// Column of this note in an 88-key roll.
    pub fn key_index(&self) -> usize {
        (self.pitch - MIN_PITCH) as usize
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn is_valid(&self) -> bool {
        (MIN_PITCH..=MAX_PITCH).contains(&self.pitch)
            && self.onset >= 0.0
            && self.offset > self.onset
            && (1..=127).contains(&self.velocity)
    }
}

/// Notes sorted by `(onset, pitch)` plus the length of the recording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoteSequence {
    pub notes: Vec<NoteEvent>,
    pub duration: f64,
}

impl NoteSequence {
    /// Sorts the notes and extends `duration` to cover the last offset.
    pub fn new(mut notes: Vec<NoteEvent>, duration: f64) -> Self {
        sort_notes(&mut notes);
        let last = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
        Self {
            notes,
            duration: duration.max(last),
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

pub(crate) fn sort_notes(notes: &mut [NoteEvent]) {
    notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.offset.total_cmp(&b.offset))
    });
}
