use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use oaf_core::arrays::{self, NamedArray};
use oaf_core::corpus::{spectrogram_of, write_synthetic_corpus, SyntheticCorpus};
use oaf_core::evaluation::{evaluate_recording, EvalReport, Family};
use oaf_core::experiment::{run_ablation, run_attention_comparison, run_dsweep, ExperimentSpec, Table};
use oaf_core::inference::{notes_to_midi, transcribe, InferenceConfig};
use oaf_core::model::Checkpoint;
use oaf_core::training::train_run;

/// Piano transcription experiments: data synthesis, training, decoding,
/// scoring and the ablation studies.
#[derive(Parser)]
#[command(name = "oaf", version)]
struct Cli {
    /// Experiment TOML; built-in desk defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every cell's initialization and batch sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory or file, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted config override such as `defaults.train.max_steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic piano corpus (WAV + MIDI + manifest).
    SynthData,
    /// Train one cell of the experiment.
    Train {
        /// Cell id; the first cell by default.
        #[arg(long)]
        cell: Option<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Transcribe one recording to MIDI.
    Transcribe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Onset activations from elsewhere: a checkpoint with an onset
        /// stack, or an `.npz` holding an `onset` array.
        #[arg(long)]
        external_onsets: Option<PathBuf>,
        /// Also write the posteriorgrams to this `.npz`.
        #[arg(long)]
        dump_posteriors: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        external_onsets: Option<PathBuf>,
    },
    /// Run every cell, with and without rule-based inference.
    Ablate,
    /// Sweep the attention window of a probe cell.
    Dsweep {
        /// Comma-separated D values.
        #[arg(long, value_delimiter = ',')]
        d: Vec<usize>,
    },
    /// Compare attention targets on the full model.
    AttnCompare,
    /// Write the normalized mel spectrogram of a recording.
    SpectrogramDump {
        #[arg(long)]
        audio: PathBuf,
        /// Also write a grayscale PNG.
        #[arg(long)]
        png: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 0.5)]
    onset_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    frame_threshold: f64,
    /// Skip rule-based inference and decode frame runs.
    #[arg(long)]
    no_inference: bool,
}

impl DecodeArgs {
    fn config(&self) -> InferenceConfig {
        InferenceConfig {
            onset_threshold: self.onset_threshold,
            frame_threshold: self.frame_threshold,
            ..InferenceConfig::default()
        }
    }
}

fn load_spec(cli: &Cli) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p, &cli.overrides)?,
        None => ExperimentSpec::desk().with_overrides(&cli.overrides)?,
    };
    if let Some(seed) = cli.seed {
        spec.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        spec.out = out.clone();
    }
    Ok(spec)
}

fn external_onsets(path: &Path, spec: &oaf_core::frontend::Spectrogram) -> anyhow::Result<ndarray::Array2<f64>> {
    if path.extension().is_some_and(|e| e == "npz") {
        return Ok(arrays::read_f64_2d(path, "onset")?);
    }
    let model = Checkpoint::load(path)?.to_model()?;
    model
        .infer(spec)?
        .onset
        .with_context(|| format!("{} has no onset stack", path.display()))
}

fn report_table(t: &Table) -> bool {
    for r in &t.rows {
        match r.summary() {
            Some(s) => println!(
                "{:<28} frame {:>12}  note {:>12}  note+off {:>12}",
                r.id, s.frame.f1.to_string(), s.note.f1.to_string(), s.note_with_offset.f1.to_string()
            ),
            None => println!("{:<28} {:?}", r.id, r.status),
        }
    }
    t.all_ok()
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::SynthData => {
            let spec = load_spec(cli)?;
            let mut synth: SyntheticCorpus = spec.data.synthetic.clone();
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data/synthetic"));
            let manifest = write_synthetic_corpus(&synth, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train { cell, resume } => {
            let spec = load_spec(cli)?;
            spec.validate()?;
            let c = match cell {
                Some(id) => spec.cell(id).with_context(|| format!("no cell `{id}`"))?,
                None => spec.cells.first().context("the experiment has no cells")?,
            };
            let corpus = spec.data.load()?;
            let dir = cli.out.clone().unwrap_or_else(|| spec.out.join("cells").join(&c.id));
            let run = train_run(&corpus, &c.model, &c.train, Some(&dir), resume.as_deref())?;
            if let Some(last) = run.losses.last() {
                println!("final loss {:.5}", last.total);
            }
            if let Some(p) = run.final_checkpoint {
                println!("{}", p.display());
            }
        }
        Command::Transcribe { checkpoint, audio, decode, external_onsets: ext, dump_posteriors } => {
            let model = Checkpoint::load(checkpoint)?.to_model()?;
            let spec = spectrogram_of(audio)?;
            let ext = ext.as_deref().map(|p| external_onsets(p, &spec)).transpose()?;
            let t = transcribe(&model, &spec, &decode.config(), !decode.no_inference, ext.as_ref())?;
            let out = cli.out.clone().unwrap_or_else(|| audio.with_extension("mid"));
            notes_to_midi(&t.notes, &out)?;
            if let Some(p) = dump_posteriors {
                let mut named = vec![("frame", NamedArray::F64(t.frame_probs.clone().into_dyn()))];
                if let Some(o) = &t.onset_probs {
                    named.push(("onset", NamedArray::F64(o.clone().into_dyn())));
                }
                arrays::write_npz(p, &named)?;
            }
            println!("{} notes -> {}", t.notes.len(), out.display());
        }
        Command::Evaluate { checkpoint, decode, external_onsets: ext } => {
            let spec = load_spec(cli)?;
            let model = Checkpoint::load(checkpoint)?.to_model()?;
            let corpus = spec.data.load()?;
            if corpus.test.is_empty() {
                bail!("the test split is empty");
            }
            let mut rows = Vec::new();
            for ex in &corpus.test {
                let onsets = ext.as_deref().map(|p| external_onsets(p, &ex.spec)).transpose()?;
                let t = transcribe(&model, &ex.spec, &decode.config(), !decode.no_inference, onsets.as_ref())?;
                rows.push(evaluate_recording(&ex.id, Some(&t.notes), Some(&t.roll), &ex.notes, &ex.labels.frame, &spec.tolerance)?);
            }
            let report = EvalReport::new(rows);
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
            std::fs::create_dir_all(&out)?;
            report.write_json(out.join("report.json"))?;
            report.write_csv(out.join("report.csv"))?;
            for fam in Family::ALL {
                let s = report.family(fam);
                println!("{:<17} P {}  R {}  F1 {}", fam.name(), s.precision, s.recall, s.f1);
            }
        }
        Command::Ablate => {
            let spec = load_spec(cli)?;
            let corpus = spec.data.load()?;
            return Ok(report_table(&run_ablation(&spec, &corpus)?));
        }
        Command::Dsweep { d } => {
            let mut spec = load_spec(cli)?;
            if !d.is_empty() {
                spec.sweep.d_values = d.clone();
            }
            let corpus = spec.data.load()?;
            let res = run_dsweep(&spec, &corpus)?;
            if let Some(p) = &res.plot {
                println!("plot: {}", p.display());
            }
            return Ok(report_table(&res.table));
        }
        Command::AttnCompare => {
            let spec = load_spec(cli)?;
            let corpus = spec.data.load()?;
            let res = run_attention_comparison(&spec, &corpus)?;
            return Ok(report_table(&res.table));
        }
        Command::SpectrogramDump { audio, png } => {
            let spec = spectrogram_of(audio)?;
            let out = cli.out.clone().unwrap_or_else(|| audio.with_extension("npz"));
            spec.save(&out)?;
            if let Some(p) = png {
                spec.to_image().save(p)?;
            }
            println!("{} frames x {} bins -> {}", spec.n_frames(), spec.n_bins(), out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some cells failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
