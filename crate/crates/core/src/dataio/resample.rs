use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 24.0;
/// Fraction of the output Nyquist frequency kept by the anti-alias filter.
const ROLLOFF: f64 = 0.94;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc interpolation from `from` Hz to `to` Hz. Returns the
/// input unchanged when the rates agree.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let n_out = ((x.len() as u64 * to as u64).div_ceil(from as u64)) as usize;
    // Cutoff in cycles per input sample.
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
    let step = from as f64 / to as f64;

    (0..n_out)
        .map(|n| {
            let centre = n as f64 * step;
            let lo = ((centre - half_width).ceil().max(0.0)) as usize;
            let hi = ((centre + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = centre - k as f64;
                let w = 0.5 * (1.0 + (PI * d / half_width).cos());
                acc += xk * 2.0 * cutoff * sinc(2.0 * cutoff * d) * w;
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_rates_match() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(resample(&x, 16000, 16000), x);
    }

    #[test]
    fn silence_stays_silent() {
        let y = resample(&vec![0.0; 44100], 44100, 16000);
        assert_eq!(y.len(), 16000);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_gain_is_close_to_one() {
        let y = resample(&vec![0.5; 48000], 48000, 16000);
        let mid = &y[2000..14000];
        assert!(mid.iter().all(|&v| (v - 0.5).abs() < 5e-3), "{:?}", &mid[..4]);
    }

    #[test]
    fn upsampling_length() {
        let y = resample(&vec![0.0; 8000], 8000, 16000);
        assert_eq!(y.len(), 16000);
    }
}
