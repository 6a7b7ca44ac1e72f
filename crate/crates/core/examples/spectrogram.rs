//! Log-mel front end on a rendered chord: prints the strongest bins and
//! writes the normalized spectrogram as `.npz` and a grayscale PNG.
//!
//!     cargo run --release --example spectrogram -- /tmp/chord

use oaf_core::dataio::{render_notes, NoteEvent, NoteSequence, SAMPLE_RATE};
use oaf_core::frontend::{default_frontend, mel_spectrogram};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stem = std::env::args().nth(1).unwrap_or_else(|| "chord".into());
    let notes = NoteSequence::new(
        vec![NoteEvent::new(60, 0.1, 1.2), NoteEvent::new(64, 0.1, 1.2), NoteEvent::new(67, 0.6, 1.2)],
        1.5,
    );
    let clip = render_notes(&notes, (1.5 * SAMPLE_RATE as f64) as usize);
    let spec = mel_spectrogram(&clip)?;
    println!("{} frames x {} mel bins", spec.n_frames(), spec.n_bins());

    let centers = default_frontend().center_frequencies();
    let frame = spec.values.row(spec.n_frames() / 2);
    let mut order: Vec<usize> = (0..frame.len()).collect();
    order.sort_by(|&a, &b| frame[b].total_cmp(&frame[a]));
    for &bin in order.iter().take(5) {
        println!("  bin {bin:>3}  {:>7.1} Hz  {:+.2}", centers[bin], frame[bin]);
    }

    spec.save(format!("{stem}.npz"))?;
    spec.to_image().save(format!("{stem}.png"))?;
    println!("wrote {stem}.npz and {stem}.png");
    Ok(())
}
