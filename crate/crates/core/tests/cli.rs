use std::path::Path;
use std::process::{Command, Output};

use oaf_core::corpus::Corpus;

fn oaf(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_oaf")).args(args).output().expect("spawn oaf");
    assert!(
        out.status.success(),
        "oaf {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set", "data.synthetic.n_train=2",
    "--set", "data.synthetic.n_validation=1",
    "--set", "data.synthetic.n_test=2",
    "--set", "data.synthetic.params.duration=[1.0, 1.5]",
];

#[test]
fn help_lists_every_subcommand() {
    let help = stdout(&oaf(&["--help"]));
    for cmd in ["synth-data", "train", "transcribe", "evaluate", "ablate", "dsweep", "attn-compare", "spectrogram-dump"] {
        assert!(help.contains(cmd), "{cmd} missing from\n{help}");
    }
}

#[test]
fn unknown_override_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_oaf"))
        .args(["--set", "no.such.key=1", "ablate"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn synth_then_dump_then_transcribe() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut args = TINY.to_vec();
    args.extend(["--out", data.to_str().unwrap(), "synth-data"]);
    let manifest = stdout(&oaf(&args)).trim().to_string();
    assert!(Path::new(&manifest).exists());

    let corpus = Corpus::from_manifest(&manifest).unwrap();
    // Manifests only know train and test, so validation pieces train.
    assert_eq!((corpus.train.len(), corpus.validation.len(), corpus.test.len()), (3, 0, 2));
    let wav = find_wav(&data).expect("a rendered wav");

    let npz = dir.path().join("spec.npz");
    let png = dir.path().join("spec.png");
    oaf(&["--out", npz.to_str().unwrap(), "spectrogram-dump", "--audio", wav.to_str().unwrap(), "--png", png.to_str().unwrap()]);
    assert!(npz.exists() && png.exists());

    let manifest_set = format!("data.manifest=\"{manifest}\"");
    let run = dir.path().join("run");
    let train = stdout(&oaf(&[
        "--set", &manifest_set,
        "--set", "defaults.train.max_steps=2",
        "--set", "defaults.train.sequence_length=16",
        "--set", "defaults.model.conv_channels=[2, 2, 2]",
        "--set", "defaults.model.fc_width=8",
        "--out", run.to_str().unwrap(),
        "train",
    ]));
    assert!(train.contains("final loss"), "{train}");
    let ckpt = run.join("final.ckpt");
    assert!(ckpt.exists());

    let mid = dir.path().join("out.mid");
    let said = stdout(&oaf(&[
        "--out", mid.to_str().unwrap(),
        "transcribe", "--checkpoint", ckpt.to_str().unwrap(), "--audio", wav.to_str().unwrap(),
    ]));
    assert!(said.contains("notes ->"), "{said}");
    assert!(mid.exists());
}

fn find_wav(dir: &Path) -> Option<std::path::PathBuf> {
    for e in std::fs::read_dir(dir).ok()?.flatten() {
        let p = e.path();
        if p.is_dir() {
            if let Some(w) = find_wav(&p) {
                return Some(w);
            }
        } else if p.extension().is_some_and(|e| e == "wav") {
            return Some(p);
        }
    }
    None
}
