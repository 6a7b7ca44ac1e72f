//! Recordings paired with their spectrograms and labels, grouped by split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{
    self, load_audio, load_manifest, make_synthetic_dataset, notes_to_rolls, parse_notes, save_manifest,
    write_midi, write_wav, AudioClip, LabelRolls, ManifestEntry, NoteSequence, Split, SynthParams,
};
use crate::error::{validation, Error, Result};
use crate::frontend::{mel_spectrogram, Spectrogram};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub spec: Spectrogram,
    pub labels: LabelRolls,
    pub notes: NoteSequence,
}

impl Example {
    pub fn from_audio(id: impl Into<String>, clip: &AudioClip, notes: NoteSequence) -> Result<Self> {
        let spec = mel_spectrogram(clip)?;
        let labels = notes_to_rolls(&notes, spec.n_frames())?;
        Ok(Self {
            id: id.into(),
            spec,
            labels,
            notes,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.spec.n_frames()
    }
}

/// Sizes of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub params: SynthParams,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 40,
            n_validation: 4,
            n_test: 10,
            params: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Corpus {
    /// Generate pieces in order train, validation, test from one seed.
    pub fn synthetic(spec: &SyntheticCorpus) -> Result<Self> {
        let total = spec.n_train + spec.n_validation + spec.n_test;
        if spec.n_train == 0 {
            return Err(crate::error::config("a synthetic corpus needs at least one training piece"));
        }
        let pieces = make_synthetic_dataset(spec.seed, total, &spec.params);
        let mut corpus = Corpus::default();
        for (i, p) in pieces.into_iter().enumerate() {
            let (bucket, name) = if i < spec.n_train {
                (&mut corpus.train, "train")
            } else if i < spec.n_train + spec.n_validation {
                (&mut corpus.validation, "valid")
            } else {
                (&mut corpus.test, "test")
            };
            bucket.push(Example::from_audio(format!("{name}_{i:04}"), &p.clip, p.notes)?);
        }
        Ok(corpus)
    }

    /// Load every manifest entry. Test entries form the test split; there
    /// is no validation split.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for entry in load_manifest(path)? {
            let clip = load_audio(&entry.audio)?;
            let mut notes = parse_notes(&entry.annotation)?;
            notes.duration = notes.duration.max(clip.duration());
            let id = entry
                .audio
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let ex = Example::from_audio(id, &clip, notes)?;
            match entry.split {
                Split::Train => corpus.train.push(ex),
                Split::Test => corpus.test.push(ex),
            }
        }
        if corpus.train.is_empty() && corpus.test.is_empty() {
            return Err(validation("manifest lists no recordings"));
        }
        Ok(corpus)
    }
}

/// Render a synthetic corpus to WAV and MIDI files plus a `manifest.json`.
/// Validation pieces are written as training entries. Returns the manifest
/// path.
pub fn write_synthetic_corpus(spec: &SyntheticCorpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let total = spec.n_train + spec.n_validation + spec.n_test;
    let mut entries = Vec::with_capacity(total);
    for (i, p) in make_synthetic_dataset(spec.seed, total, &spec.params).into_iter().enumerate() {
        let split = if i < spec.n_train + spec.n_validation { Split::Train } else { Split::Test };
        let stem = format!("piece_{i:04}");
        write_wav(&p.clip, dir.join(format!("{stem}.wav")))?;
        write_midi(&p.notes, dir.join(format!("{stem}.mid")))?;
        entries.push(ManifestEntry {
            audio: format!("{stem}.wav").into(),
            annotation: format!("{stem}.mid").into(),
            split,
        });
    }
    let manifest = dir.join("manifest.json");
    save_manifest(&entries, &manifest)?;
    Ok(manifest)
}

/// Spectrogram of an audio file at the model's sample rate.
pub fn spectrogram_of(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let clip = load_audio(path)?;
    debug_assert_eq!(clip.sample_rate, dataio::SAMPLE_RATE);
    mel_spectrogram(&clip)
}
