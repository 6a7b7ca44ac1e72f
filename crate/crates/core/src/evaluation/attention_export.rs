use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::dataio::{note_frame_span, NoteSequence};
use crate::error::{config, validation, Error, Result};
use crate::model::AttentionMap;

/// Pixel height of one window position in the heatmap.
const CELL_HEIGHT: u32 = 4;
/// Height of the onset marker strip above the heatmap.
const STRIP_HEIGHT: u32 = 6;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedMap {
    pub id: String,
    pub array: PathBuf,
    pub image: PathBuf,
}

/// Frame index of every note onset, sorted and deduplicated.
pub fn onset_frames(notes: &NoteSequence, hop_seconds: f64) -> Vec<usize> {
    let mut frames: Vec<usize> = notes
        .notes
        .iter()
        .map(|n| note_frame_span(n.onset, n.offset, hop_seconds).0)
        .collect();
    frames.sort_unstable();
    frames.dedup();
    frames
}

/// Heatmap with time on x and window offset on y (latest frame on top).
/// Brighter means more weight; cells that attend an onset frame are tinted
/// red and a strip above the map marks the onset frames themselves.
pub fn render_heatmap(map: &AttentionMap, onsets: &[usize]) -> RgbImage {
    let (t, w) = map.weights.dim();
    let is_onset = |f: usize| onsets.binary_search(&f).is_ok();
    let width = t.max(1) as u32;
    let height = STRIP_HEIGHT + CELL_HEIGHT * w as u32;
    RgbImage::from_fn(width, height, |x, y| {
        let frame = x as usize;
        if frame >= t {
            return Rgb([0, 0, 0]);
        }
        if y < STRIP_HEIGHT {
            return if is_onset(frame) { Rgb([220, 30, 30]) } else { Rgb([255, 255, 255]) };
        }
        let k = w - 1 - ((y - STRIP_HEIGHT) / CELL_HEIGHT) as usize;
        let v = (map.weights[[frame, k]].clamp(0.0, 1.0) * 255.0).round() as u8;
        let attended = (frame + k).checked_sub(map.d);
        if attended.is_some_and(is_onset) {
            Rgb([v.max(90), v / 2, v / 2])
        } else {
            Rgb([v, v, v])
        }
    })
}

/// Write `<id>.attention.npz` and `<id>.attention.png` to `out_dir`.
/// `map` is `None` when the model ran without attention.
pub fn export_attention_maps(
    map: Option<&AttentionMap>,
    id: &str,
    truth: Option<&NoteSequence>,
    hop_seconds: f64,
    out_dir: impl AsRef<Path>,
) -> Result<ExportedMap> {
    let map = map.ok_or_else(|| config(format!("{id}: the model has no attention to export")))?;
    let err = map.max_row_error();
    if !(err <= ROW_SUM_TOL) {
        return Err(validation(format!("{id}: attention rows deviate from 1 by {err:e}")));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let array = out_dir.join(format!("{id}.attention.npz"));
    let image = out_dir.join(format!("{id}.attention.png"));
    map.save(&array)?;
    let onsets = truth.map(|n| onset_frames(n, hop_seconds)).unwrap_or_default();
    render_heatmap(map, &onsets).save(&image)?;
    Ok(ExportedMap {
        id: id.to_string(),
        array,
        image,
    })
}

/// Among frames whose window holds an onset, the fraction whose most
/// attended frame lies within `radius` frames of some onset. `None` when no
/// window holds an onset.
pub fn onset_alignment(map: &AttentionMap, onsets: &[usize], radius: usize) -> Option<f64> {
    if onsets.is_empty() {
        return None;
    }
    let near = |f: usize| {
        let i = onsets.partition_point(|&o| o + radius < f);
        onsets.get(i).is_some_and(|&o| o <= f + radius)
    };
    let d = map.d;
    let (mut eligible, mut hits) = (0usize, 0usize);
    for (t, arg) in map.argmax_frames().into_iter().enumerate() {
        let lo = t.saturating_sub(d);
        let i = onsets.partition_point(|&o| o < lo);
        if onsets.get(i).is_some_and(|&o| o <= t + d) {
            eligible += 1;
            hits += usize::from(near(arg));
        }
    }
    (eligible > 0).then(|| hits as f64 / eligible as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::NoteEvent;
    use crate::model::AttentionTarget;
    use ndarray::Array2;

    fn uniform(t: usize, d: usize) -> AttentionMap {
        let w = 2 * d + 1;
        let mut weights = Array2::zeros((t, w));
        for r in 0..t {
            let valid: Vec<usize> = (0..w).filter(|&k| r + k >= d && r + k - d < t).collect();
            for &k in &valid {
                weights[[r, k]] = 1.0 / valid.len() as f64;
            }
        }
        AttentionMap { weights, d, target: AttentionTarget::Spec }
    }

    #[test]
    fn export_round_trips_and_draws() {
        let map = uniform(20, 3);
        let notes = NoteSequence::new(vec![NoteEvent::new(60, 0.032 * 4.0, 0.032 * 9.0)], 1.0);
        let dir = tempfile::tempdir().unwrap();
        let out = export_attention_maps(Some(&map), "piece", Some(&notes), 0.032, dir.path()).unwrap();
        let back = AttentionMap::load(&out.array).unwrap();
        assert_eq!(back, map);
        assert!(back.max_row_error() <= 1e-6);
        let img = image::open(&out.image).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (20, STRIP_HEIGHT + CELL_HEIGHT * 7));
        assert_eq!(img.get_pixel(4, 0), &Rgb([220, 30, 30]));
        assert_eq!(img.get_pixel(5, 0), &Rgb([255, 255, 255]));
    }

    #[test]
    fn missing_attention_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = export_attention_maps(None, "x", None, 0.032, dir.path()).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn alignment_counts_rows_that_see_an_onset() {
        let d = 2;
        let t = 12;
        let mut weights = Array2::zeros((t, 2 * d + 1));
        // Every row looks at its own frame except rows 4..=6, which look at frame 5.
        for r in 0..t {
            let k = if (4..=6).contains(&r) { 5 + d - r } else { d };
            weights[[r, k]] = 1.0;
        }
        let map = AttentionMap { weights, d, target: AttentionTarget::Onset };
        // Onset at 5: rows 3..=7 see it; rows 3 and 7 look at themselves,
        // which is within 2 of the onset, so all five are hits with radius 2.
        assert_eq!(onset_alignment(&map, &[5], 2), Some(1.0));
        // With radius 0 only rows 4..=6 count.
        assert_eq!(onset_alignment(&map, &[5], 0), Some(3.0 / 5.0));
        assert_eq!(onset_alignment(&map, &[], 2), None);
    }
}
