//! Normalized log-magnitude Mel spectrogram.
//!
//! Hann window of 2048 samples, hop 512, reflection-padded centred frames,
//! 229 HTK-scale triangular filters between 30 Hz and 8 kHz. The log Mel
//! magnitude is mapped to `[0, 1]` by a fixed affine transform: the `log ε`
//! floor goes to 0 and the strongest filter response to a full-scale sine
//! goes to 1.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::arrays::{self, NamedArray};
use crate::dataio::{AudioClip, HOP_LENGTH, SAMPLE_RATE};
use crate::error::{validation, Result};

pub const N_MELS: usize = 229;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub eps: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 2048,
            hop_length: HOP_LENGTH,
            n_mels: N_MELS,
            fmin: 30.0,
            fmax: 8000.0,
            eps: 1e-10,
        }
    }
}

/// `T × n_bins` matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub hop_seconds: f64,
}

impl Spectrogram {
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(validation("spectrogram needs at least one frame"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(validation("spectrogram values must lie in [0, 1]"));
        }
        Ok(Self {
            values,
            hop_seconds: HOP_LENGTH as f64 / SAMPLE_RATE as f64,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        arrays::write_npz(
            path,
            &[
                ("header", NamedArray::F64(ndarray::arr1(&[self.n_frames() as f64, self.n_bins() as f64, self.hop_seconds]).into_dyn())),
                ("spectrogram", NamedArray::F64(self.values.clone().into_dyn())),
            ],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let header = arrays::read_f64(path, "header")?;
        let values = arrays::read_f64_2d(path, "spectrogram")?;
        let mut s = Self::from_values(values)?;
        s.hop_seconds = header.get(2).copied().unwrap_or(s.hop_seconds);
        Ok(s)
    }

    /// Grayscale image, time left to right, low frequencies at the bottom.
    pub fn to_image(&self) -> image::GrayImage {
        let (t, f) = self.values.dim();
        image::GrayImage::from_fn(t as u32, f as u32, |x, y| {
            let v = self.values[[x as usize, f - 1 - y as usize]];
            image::Luma([(v * 255.0).round() as u8])
        })
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub struct MelFrontend {
    config: MelConfig,
    window: Vec<f64>,
    /// `(n_fft/2 + 1) × n_mels`
    filterbank: Array2<f64>,
    centers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    log_floor: f64,
    log_ref: f64,
}

impl MelFrontend {
    pub fn new(config: MelConfig) -> Result<Self> {
        if config.n_fft < 2 || config.hop_length == 0 || config.n_mels == 0 {
            return Err(validation("invalid Mel configuration"));
        }
        let nyquist = config.sample_rate as f64 / 2.0;
        if !(0.0 <= config.fmin && config.fmin < config.fmax && config.fmax <= nyquist) {
            return Err(validation("Mel frequency bounds must satisfy 0 <= fmin < fmax <= Nyquist"));
        }
        let n = config.n_fft;
        // Periodic Hann.
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();

        let n_bins = n / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
        let points: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut filterbank = Array2::<f64>::zeros((n_bins, config.n_mels));
        for m in 0..config.n_mels {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * config.sample_rate as f64 / n as f64;
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                filterbank[[k, m]] = w;
            }
        }
        let centers = points[1..=config.n_mels].to_vec();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut fe = Self {
            log_floor: config.eps.ln(),
            log_ref: 0.0,
            config,
            window,
            filterbank,
            centers,
            fft,
        };
        fe.log_ref = fe.full_scale_reference().ln();
        Ok(fe)
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    /// Center frequency of every Mel filter, in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// Largest Mel response to a unit-amplitude sine placed at any filter
    /// center.
    fn full_scale_reference(&self) -> f64 {
        let sr = self.config.sample_rate as f64;
        let n = self.config.n_fft;
        self.centers
            .iter()
            .map(|&f| {
                let frame: Vec<f64> = (0..n)
                    .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin())
                    .collect();
                let mel = self.mel_frame(&frame);
                mel.iter().fold(0.0f64, |a, &b| a.max(b))
            })
            .fold(0.0f64, f64::max)
    }

    /// Mel magnitudes of one un-windowed frame of `n_fft` samples.
    fn mel_frame(&self, frame: &[f64]) -> Array1<f64> {
        let mut mag = Array1::zeros(self.config.n_fft / 2 + 1);
        self.magnitudes(frame, mag.as_slice_mut().expect("contiguous"));
        mag.dot(&self.filterbank)
    }

    /// Windowed FFT magnitudes of one frame, written to `out`.
    fn magnitudes(&self, frame: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.norm();
        }
    }

    /// Frame count for `n` samples under centred framing.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.config.hop_length
    }

    /// Un-normalized `ln(mel + ε)` for every frame.
    pub fn log_mel(&self, samples: &[f64]) -> Array2<f64> {
        let n = self.config.n_fft;
        let pad = n / 2;
        let t = self.n_frames(samples.len());
        let len = samples.len() as isize;
        let reflect = |i: isize| -> f64 {
            if len == 1 {
                return samples[0];
            }
            let period = 2 * (len - 1);
            let mut j = i.rem_euclid(period);
            if j >= len {
                j = period - j;
            }
            samples[j as usize]
        };
        let mut mags = Array2::<f64>::zeros((t, n / 2 + 1));
        let mut frame = vec![0.0; n];
        for (ti, mut row) in mags.rows_mut().into_iter().enumerate() {
            let start = (ti * self.config.hop_length) as isize - pad as isize;
            for (k, v) in frame.iter_mut().enumerate() {
                *v = reflect(start + k as isize);
            }
            self.magnitudes(&frame, row.as_slice_mut().expect("contiguous"));
        }
        mags.dot(&self.filterbank).mapv(|m| (m + self.config.eps).ln())
    }

    pub fn normalize(&self, log_mel: &Array2<f64>) -> Array2<f64> {
        let span = self.log_ref - self.log_floor;
        log_mel.mapv(|v| ((v - self.log_floor) / span).clamp(0.0, 1.0))
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram> {
        if clip.sample_rate != self.config.sample_rate {
            return Err(validation(format!(
                "expected {} Hz audio, got {} Hz",
                self.config.sample_rate, clip.sample_rate
            )));
        }
        if clip.samples.is_empty() {
            return Err(validation("cannot analyse an empty clip"));
        }
        let values = self.normalize(&self.log_mel(&clip.samples));
        Ok(Spectrogram {
            values,
            hop_seconds: self.config.hop_length as f64 / self.config.sample_rate as f64,
        })
    }
}

/// The shared default frontend.
pub fn default_frontend() -> &'static MelFrontend {
    static FRONTEND: OnceLock<MelFrontend> = OnceLock::new();
    FRONTEND.get_or_init(|| MelFrontend::new(MelConfig::default()).expect("default Mel config"))
}

pub fn mel_spectrogram(clip: &AudioClip) -> Result<Spectrogram> {
    default_frontend().spectrogram(clip)
}
