use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, AudioClip, SAMPLE_RATE};
use crate::error::{validation, Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Read a PCM (8/16/24/32-bit integer or 32-bit float) WAV file, mix it
/// down to mono and resample to 16 kHz.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample.clamp(1, 32) - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    if interleaved.is_empty() {
        return Err(validation(format!("{} contains no audio", path.display())));
    }

    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    let samples = resample(&mono, spec.sample_rate, SAMPLE_RATE);
    Ok(AudioClip::new(samples, SAMPLE_RATE))
}

/// Write a clip as 32-bit float mono WAV.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        writer.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_int_wav(path: &Path, rate: u32, channels: u16, data: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn stereo_silence_at_44k1_becomes_16k_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_int_wav(&p, 44100, 2, &vec![0; 2 * 44100]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn native_rate_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let data: Vec<i16> = (0..1234).map(|i| ((i * 37) % 2000) as i16 - 1000).collect();
        write_int_wav(&p, 16000, 1, &data);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples.len(), data.len());
        for (a, &b) in clip.samples.iter().zip(&data) {
            assert_eq!(*a, b as f64 / 32768.0);
        }
    }

    #[test]
    fn channels_are_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_int_wav(&p, 16000, 2, &[1000, 3000, -2000, 0]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples, vec![2000.0 / 32768.0, -1000.0 / 32768.0]);
    }

    #[test]
    fn empty_and_corrupt_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        write_int_wav(&p, 16000, 1, &[]);
        assert!(matches!(load_audio(&p), Err(Error::Validation(_))));

        let bad = dir.path().join("bad.wav");
        std::fs::write(&bad, b"RIFF....not a wav").unwrap();
        let err = load_audio(&bad).unwrap_err();
        assert!(err.to_string().contains("bad.wav"), "{err}");

        let missing = dir.path().join("missing.wav");
        assert!(matches!(load_audio(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn float_wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let clip = AudioClip::new(vec![0.25, -0.5, 0.125], 16000);
        write_wav(&clip, &p).unwrap();
        assert_eq!(load_audio(&p).unwrap(), clip);
    }
}
