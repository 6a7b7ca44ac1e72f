use oaf_core::corpus::{write_synthetic_corpus, Corpus};
use oaf_core::dataio::{parse_notes, NoteSequence};
use oaf_core::evaluation::{evaluate_recording, note_metrics, Tolerance};
use oaf_core::experiment::{run_ablation, smoke_spec};
use oaf_core::frontend::N_MELS;
use oaf_core::inference::{notes_to_midi, transcribe, InferenceConfig};
use oaf_core::model::Checkpoint;
use oaf_core::training::train_run;

#[test]
fn corpus_on_disk_matches_corpus_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = smoke_spec(dir.path().join("out"));
    let manifest = write_synthetic_corpus(&spec.data.synthetic, dir.path().join("data")).unwrap();
    let from_disk = Corpus::from_manifest(&manifest).unwrap();
    let in_memory = Corpus::synthetic(&spec.data.synthetic).unwrap();

    assert_eq!(from_disk.train.len(), 4);
    assert_eq!(from_disk.test.len(), 5);
    for (a, b) in from_disk.test.iter().zip(&in_memory.test) {
        assert_eq!(a.spec.n_bins(), N_MELS);
        assert_eq!(a.n_frames(), b.n_frames());
        // The WAV round trip quantizes to 16 bits, so notes must agree
        // exactly while the features only agree closely.
        assert_eq!(a.notes.len(), b.notes.len());
        let tol = Tolerance::default();
        assert_eq!(note_metrics(&a.notes, &b.notes, &tol).f1, 1.0);
    }
}

#[test]
fn train_save_transcribe_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let spec = smoke_spec(dir.path().join("out"));
    let corpus = Corpus::synthetic(&spec.data.synthetic).unwrap();
    let cell = &spec.cells[0];
    let run_dir = dir.path().join("run");
    let run = train_run(&corpus, &cell.model, &cell.train, Some(&run_dir), None).unwrap();
    assert_eq!(run.losses.len(), cell.train.max_steps);
    assert!(run.losses.iter().all(|l| l.total.is_finite()));
    assert!(run_dir.join("loss.csv").exists());

    let ckpt = run.final_checkpoint.expect("a run directory yields a final checkpoint");
    let model = Checkpoint::load(&ckpt).unwrap().to_model().unwrap();
    let ex = &corpus.test[0];
    let cfg = InferenceConfig::default();
    let t = transcribe(&model, &ex.spec, &cfg, false, None).unwrap();
    assert_eq!(t.frame_probs.dim(), (ex.n_frames(), 88));
    assert!(t.frame_probs.iter().all(|p| (0.0..=1.0).contains(p)));

    let midi = dir.path().join("piece.mid");
    notes_to_midi(&t.notes, &midi).unwrap();
    let back: NoteSequence = parse_notes(&midi).unwrap();
    assert_eq!(back.len(), t.notes.len());

    let row = evaluate_recording(&ex.id, Some(&t.notes), Some(&t.roll), &ex.notes, &ex.labels.frame, &spec.tolerance).unwrap();
    for f1 in [row.frame.f1, row.note.f1, row.note_with_offset.f1] {
        assert!((0.0..=1.0).contains(&f1));
    }
}

#[test]
fn smoke_ablation_scores_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let spec = smoke_spec(dir.path().join("out"));
    let corpus = spec.data.load().unwrap();
    let table = run_ablation(&spec, &corpus).unwrap();
    assert!(table.all_ok(), "{:?}", table.rows.iter().map(|r| (&r.id, &r.status)).collect::<Vec<_>>());
    let expected: usize = spec.cells.iter().map(|c| c.modes().len()).sum();
    assert_eq!(table.rows.len(), expected);
    assert!(dir.path().join("out/ablation/table.csv").exists());
}
