//! Study runners: the ablation matrix, the attention-target comparison and
//! the window-size sweep, each writing self-describing run directories.

mod config;
pub mod plot;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{config, Error, Result};
use crate::evaluation::{
    evaluate_recording, export_attention_maps, wilcoxon_signed_rank, EvalReport, Family, Summary,
};
use crate::inference::decode;
use crate::model::{AttentionTarget, Checkpoint, Model, Variant};
use crate::training::train_run;

pub use config::{apply_override, smoke_spec, CellSpec, CompareSpec, DataSource, ExperimentSpec, SweepSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "message")]
pub enum CellStatus {
    Ok,
    Failed(String),
}

impl CellStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, CellStatus::Ok)
    }
}

/// One cell scored in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// `<cell>` or `<cell>+inference` / `<cell>-inference` when the cell is
    /// scored both ways.
    pub id: String,
    pub cell: String,
    pub inference: bool,
    pub status: CellStatus,
    pub report: Option<EvalReport>,
    /// Paired test against the baseline row per family (frame, note,
    /// note with offset); `None` where no test applies.
    pub p_values: [Option<f64>; 3],
    pub seconds: f64,
}

impl Row {
    pub fn summary(&self) -> Option<&Summary> {
        self.report.as_ref().map(|r| &r.summary)
    }

    /// Mean F1 of one family.
    pub fn f1(&self, fam: Family) -> Option<f64> {
        self.report.as_ref().map(|r| r.family(fam).f1.mean)
    }
}

/// Rows of a study in cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub baseline: Option<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.status.is_ok())
    }

    pub fn row(&self, cell: &str, inference: bool) -> Option<&Row> {
        self.rows.iter().find(|r| r.cell == cell && r.inference == inference)
    }

    fn header() -> Vec<String> {
        let mut h: Vec<String> = ["id", "cell", "inference", "status", "seconds"].map(String::from).to_vec();
        for fam in Family::ALL {
            for m in ["precision", "recall", "f1"] {
                for stat in ["mean", "std"] {
                    h.push(format!("{}_{m}_{stat}", fam.name()));
                }
            }
        }
        for fam in Family::ALL {
            h.push(format!("p_{}", fam.name()));
        }
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::header())?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let status = match &r.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Failed(m) => format!("failed: {m}"),
            };
            let mut rec = vec![r.id.clone(), r.cell.clone(), r.inference.to_string(), status, format!("{:.3}", r.seconds)];
            for fam in Family::ALL {
                let s = r.report.as_ref().map(|rep| *rep.family(fam));
                for ms in [s.map(|t| t.precision), s.map(|t| t.recall), s.map(|t| t.f1)] {
                    rec.push(opt(ms.map(|m| m.mean)));
                    rec.push(opt(ms.map(|m| m.std)));
                }
            }
            for p in r.p_values {
                rec.push(opt(p));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fill `p_values` against the baseline cell's row in the same mode.
    fn attach_tests(&mut self) {
        let Some(base) = self.baseline.clone() else { return };
        let snapshot = self.rows.clone();
        for row in &mut self.rows {
            row.p_values = [None; 3];
            if row.cell == base {
                continue;
            }
            let Some(b) = snapshot.iter().find(|r| r.cell == base && r.inference == row.inference) else {
                continue;
            };
            if let (Some(x), Some(y)) = (&row.report, &b.report) {
                for (k, fam) in Family::ALL.into_iter().enumerate() {
                    row.p_values[k] = paired_p(x, y, fam);
                }
            }
        }
    }
}

fn paired_p(a: &EvalReport, b: &EvalReport, fam: Family) -> Option<f64> {
    if a.rows.iter().map(|r| &r.id).ne(b.rows.iter().map(|r| &r.id)) {
        return None;
    }
    wilcoxon_signed_rank(&a.f1s(fam), &b.f1s(fam)).ok().map(|w| w.p_value)
}

/// What one cell produced before tests are attached.
struct CellOutcome {
    model: Model,
    reports: Vec<(bool, EvalReport)>,
}

fn reusable(path: &Path, cell: &CellSpec) -> Option<Model> {
    let ck = Checkpoint::load(path).ok()?;
    let train = serde_json::to_value(&cell.train).ok()?;
    (ck.model == cell.model && ck.extra == train && ck.step as usize == cell.train.max_steps)
        .then(|| ck.to_model().ok())
        .flatten()
}

fn write_report(dir: &Path, inference: bool, report: &EvalReport) -> Result<()> {
    let stem = if inference { "eval_with_inference" } else { "eval_without_inference" };
    report.write_json(dir.join(format!("{stem}.json")))?;
    report.write_csv(dir.join(format!("{stem}.csv")))
}

/// Train (or reload) one cell and score it on the test split.
fn run_cell(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    cell: &CellSpec,
    dir: &Path,
    sources: &HashMap<String, Model>,
    export_attention: Option<&Path>,
) -> Result<CellOutcome> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let needs_external = cell.with_inference && !cell.model.variant.has_onset_stack();
    let source = match (&cell.onset_source, needs_external) {
        (Some(id), _) => Some(sources.get(id).ok_or_else(|| config(format!("onset source `{id}` is unavailable")))?),
        (None, true) => {
            return Err(config(format!(
                "cell `{}` has no onset stack; set onset_source or disable with_inference",
                cell.id
            )))
        }
        (None, false) => None,
    };

    let reused = if spec.reuse_checkpoints { reusable(&dir.join("final.ckpt"), cell) } else { None };
    let model = match reused {
        Some(m) => {
            log::info!("cell {}: reusing {}", cell.id, dir.join("final.ckpt").display());
            m
        }
        None => {
            log::info!("cell {}: training {} steps", cell.id, cell.train.max_steps);
            train_run(corpus, &cell.model, &cell.train, Some(dir), None)?.model
        }
    };

    let modes = cell.modes();
    let mut rows: Vec<Vec<crate::evaluation::EvalRow>> = vec![Vec::new(); modes.len()];
    for ex in &corpus.test {
        let out = model.infer(&ex.spec)?;
        let external: Option<Array2<f64>> = match source {
            Some(src) => src.infer(&ex.spec)?.onset,
            None => None,
        };
        let onsets = external.as_ref().or(out.onset.as_ref());
        for (k, &mode) in modes.iter().enumerate() {
            let t = decode(onsets, &out.frame, &cell.inference, mode)?;
            rows[k].push(evaluate_recording(
                &ex.id,
                Some(&t.notes),
                Some(&t.roll),
                &ex.notes,
                &ex.labels.frame,
                &spec.tolerance,
            )?);
        }
        if let Some(adir) = export_attention {
            if cell.model.attention_enabled() {
                export_attention_maps(out.attention.as_ref(), &ex.id, Some(&ex.notes), ex.spec.hop_seconds, adir)?;
            }
        }
    }
    let mut reports = Vec::new();
    for (mode, r) in modes.into_iter().zip(rows) {
        let report = EvalReport::new(r);
        write_report(dir, mode, &report)?;
        reports.push((mode, report));
    }
    Ok(CellOutcome { model, reports })
}

/// Run cells in order; failures become failed rows and the rest go on.
fn run_cells(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    cells: &[CellSpec],
    baseline: Option<String>,
    attention_dir: impl Fn(&CellSpec) -> Option<PathBuf>,
) -> Table {
    let needed: std::collections::HashSet<&str> = cells.iter().filter_map(|c| c.onset_source.as_deref()).collect();
    let mut sources: HashMap<String, Model> = HashMap::new();
    let mut rows = Vec::new();
    for cell in cells {
        let started = Instant::now();
        let dir = spec.out.join("cells").join(&cell.id);
        let adir = attention_dir(cell);
        let outcome = run_cell(spec, corpus, cell, &dir, &sources, adir.as_deref());
        let seconds = started.elapsed().as_secs_f64();
        let both = cell.modes().len() > 1;
        let row_id = |mode: bool| match (both, mode) {
            (false, _) => cell.id.clone(),
            (true, true) => format!("{}+inference", cell.id),
            (true, false) => format!("{}-inference", cell.id),
        };
        match outcome {
            Ok(o) => {
                for (mode, report) in o.reports {
                    rows.push(Row {
                        id: row_id(mode),
                        cell: cell.id.clone(),
                        inference: mode,
                        status: CellStatus::Ok,
                        report: Some(report),
                        p_values: [None; 3],
                        seconds,
                    });
                }
                if needed.contains(cell.id.as_str()) {
                    sources.insert(cell.id.clone(), o.model);
                }
            }
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.id);
                for mode in cell.modes() {
                    rows.push(Row {
                        id: row_id(mode),
                        cell: cell.id.clone(),
                        inference: mode,
                        status: CellStatus::Failed(e.to_string()),
                        report: None,
                        p_values: [None; 3],
                        seconds,
                    });
                }
            }
        }
    }
    let mut table = Table { baseline, rows };
    table.attach_tests();
    table
}

fn prepare(spec: &ExperimentSpec, corpus: &Corpus, study: &str) -> Result<PathBuf> {
    if corpus.test.is_empty() {
        return Err(config("the test split is empty"));
    }
    let dir = spec.out.join(study);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let p = dir.join("experiment.toml");
    std::fs::write(&p, spec.to_toml()?).map_err(|e| Error::io(&p, e))?;
    Ok(dir)
}

fn save_table(table: &Table, dir: &Path) -> Result<()> {
    table.write_csv(dir.join("table.csv"))?;
    table.write_json(dir.join("table.json"))
}

/// Every cell of `spec`, each scored in its requested modes, with paired
/// tests against the baseline. Writes `<out>/ablation/table.{csv,json}`.
pub fn run_ablation(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Table> {
    spec.validate()?;
    if spec.cells.is_empty() {
        return Err(config("the experiment has no cells"));
    }
    let dir = prepare(spec, corpus, "ablation")?;
    let attention_root = spec.out.join("attention");
    let table = run_cells(spec, corpus, &spec.cells, spec.baseline.clone(), |c| {
        spec.export_attention.then(|| attention_root.join(&c.id))
    });
    save_table(&table, &dir)?;
    Ok(table)
}

/// Outcome of a window-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub table: Table,
    /// `(D, row id)` in sweep order.
    pub points: Vec<(usize, String)>,
    pub csv: PathBuf,
    pub plot: Option<PathBuf>,
}

impl SweepResult {
    pub fn row(&self, d: usize) -> Option<&Row> {
        let id = &self.points.iter().find(|p| p.0 == d)?.1;
        self.table.rows.iter().find(|r| &r.cell == id)
    }
}

fn write_sweep_csv(path: &Path, table: &Table, points: &[(usize, String)], inference: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["d".to_string(), "status".to_string()];
    for fam in Family::ALL {
        header.push(format!("{}_f1_mean", fam.name()));
        header.push(format!("{}_f1_std", fam.name()));
    }
    w.write_record(&header)?;
    for (d, id) in points {
        let row = table.row(id, inference);
        let mut rec = vec![d.to_string(), if row.is_some_and(|r| r.status.is_ok()) { "ok" } else { "failed" }.to_string()];
        for fam in Family::ALL {
            let s = row.and_then(|r| r.report.as_ref()).map(|rep| rep.family(fam).f1);
            rec.push(s.map(|m| m.mean.to_string()).unwrap_or_default());
            rec.push(s.map(|m| m.std.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Train the base probe once per window half-width in `sweep.d_values`
/// (plus the attention-free base when requested) and plot F1 against D.
/// Writes `<out>/dsweep/{table.csv,table.json,dsweep.csv,dsweep.svg}`.
pub fn run_dsweep(spec: &ExperimentSpec, corpus: &Corpus) -> Result<SweepResult> {
    let sweep = &spec.sweep;
    let base = spec
        .cell(&sweep.base)
        .ok_or_else(|| config(format!("sweep base `{}` is not a cell", sweep.base)))?;
    if !base.model.variant.is_probe() {
        return Err(config(format!("sweep base `{}` must be a linear or conv probe", base.id)));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(d) = sweep.d_values.iter().find(|d| !seen.insert(**d)) {
        return Err(config(format!("D = {d} is listed twice")));
    }
    if sweep.d_values.is_empty() {
        return Err(config("the sweep has no D values"));
    }
    spec.validate()?;

    let mut cells = Vec::new();
    if sweep.inference {
        if let Some(src) = base.onset_source.as_deref().and_then(|s| spec.cell(s)) {
            let mut src = src.clone();
            src.with_inference = true;
            src.without_inference = false;
            cells.push(src);
        }
    }
    let derived = |id: String, target: AttentionTarget, d: usize| CellSpec {
        id,
        model: base.model.clone().with_attention(target, d),
        with_inference: sweep.inference,
        without_inference: !sweep.inference,
        onset_source: if sweep.inference { base.onset_source.clone() } else { None },
        ..base.clone()
    };
    let baseline = sweep.include_baseline.then(|| format!("{}_none", base.id));
    if let Some(id) = &baseline {
        cells.push(derived(id.clone(), AttentionTarget::None, 0));
    }
    let mut points = Vec::new();
    for &d in &sweep.d_values {
        let id = format!("{}_d{d}", base.id);
        cells.push(derived(id.clone(), AttentionTarget::Spec, d));
        points.push((d, id));
    }
    let dir = prepare(spec, corpus, "dsweep")?;
    let table = run_cells(spec, corpus, &cells, baseline, |_| None);
    save_table(&table, &dir)?;
    let csv = dir.join("dsweep.csv");
    write_sweep_csv(&csv, &table, &points, sweep.inference)?;
    let plot = if spec.plots {
        let svg = dir.join("dsweep.svg");
        plot::plot_sweep_csv(&csv, &svg)?;
        Some(svg)
    } else {
        None
    };
    Ok(SweepResult { table, points, csv, plot })
}

/// Paired test between two rows of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub family: Family,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareResult {
    pub table: Table,
    pub pairwise: Vec<PairwiseTest>,
    /// Directory of exported attention maps per target.
    pub attention_dirs: Vec<(AttentionTarget, PathBuf)>,
}

/// The full model without attention and with attention on each of the
/// spectrogram, onset and feature sequences. Writes
/// `<out>/compare/{table.csv,table.json,compare.csv,pairwise.csv}` and
/// attention maps under `<out>/compare/attention/<target>/`.
pub fn run_attention_comparison(spec: &ExperimentSpec, corpus: &Corpus) -> Result<CompareResult> {
    let cmp = &spec.compare;
    let base = spec
        .cell(&cmp.base)
        .ok_or_else(|| config(format!("comparison base `{}` is not a cell", cmp.base)))?;
    if base.model.variant != Variant::Full {
        return Err(config(format!("comparison base `{}` must be the full model", base.id)));
    }
    spec.validate()?;
    let dir = prepare(spec, corpus, "compare")?;
    let targets = [AttentionTarget::None, AttentionTarget::Spec, AttentionTarget::Onset, AttentionTarget::Feat];
    let cells: Vec<CellSpec> = targets
        .iter()
        .map(|&t| CellSpec {
            id: format!("{}_{t}", base.id),
            model: base.model.clone().with_attention(t, if t == AttentionTarget::None { 0 } else { cmp.window_d }),
            with_inference: cmp.inference,
            without_inference: !cmp.inference,
            onset_source: None,
            ..base.clone()
        })
        .collect();
    let attention_root = dir.join("attention");
    let attention_dirs: Vec<(AttentionTarget, PathBuf)> =
        targets[1..].iter().map(|t| (*t, attention_root.join(t.to_string()))).collect();
    let baseline = Some(cells[0].id.clone());
    let table = run_cells(spec, corpus, &cells, baseline, |c| {
        c.model.attention_enabled().then(|| attention_root.join(c.model.attention_target.to_string()))
    });
    save_table(&table, &dir)?;

    let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
    let mut header = vec!["attention".to_string(), "status".to_string()];
    for fam in Family::ALL {
        for m in ["precision", "recall", "f1"] {
            header.push(format!("{}_{m}", fam.name()));
        }
    }
    w.write_record(&header)?;
    for (t, row) in targets.iter().zip(&table.rows) {
        let mut rec = vec![t.to_string(), if row.status.is_ok() { "ok" } else { "failed" }.to_string()];
        for fam in Family::ALL {
            let s = row.report.as_ref().map(|r| *r.family(fam));
            for v in [s.map(|s| s.precision), s.map(|s| s.recall), s.map(|s| s.f1)] {
                rec.push(v.map(|m| m.to_string()).unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(dir.join("compare.csv"), e))?;

    let mut pairwise = Vec::new();
    for i in 0..table.rows.len() {
        for j in i + 1..table.rows.len() {
            let (a, b) = (&table.rows[i], &table.rows[j]);
            for fam in Family::ALL {
                let p = match (&a.report, &b.report) {
                    (Some(x), Some(y)) => paired_p(x, y, fam),
                    _ => None,
                };
                pairwise.push(PairwiseTest { a: a.cell.clone(), b: b.cell.clone(), family: fam, p_value: p });
            }
        }
    }
    let mut w = csv::Writer::from_path(dir.join("pairwise.csv"))?;
    w.write_record(["a", "b", "family", "p_value"])?;
    for t in &pairwise {
        w.write_record([t.a.clone(), t.b.clone(), t.family.name().to_string(), t.p_value.map(|p| p.to_string()).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("pairwise.csv"), e))?;
    Ok(CompareResult { table, pairwise, attention_dirs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(dir: &Path) -> (ExperimentSpec, Corpus) {
        let spec = smoke_spec(dir);
        let corpus = spec.data.load().unwrap();
        (spec, corpus)
    }

    #[test]
    fn ablation_rows_schema_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let (mut spec, corpus) = smoke(dir.path());
        let mut again = spec.cells[2].clone();
        again.id = "linear_d5_again".into();
        spec.cells.push(again);
        let table = run_ablation(&spec, &corpus).unwrap();
        assert!(table.all_ok(), "{:?}", table.rows.iter().map(|r| &r.status).collect::<Vec<_>>());
        assert_eq!(table.rows.len(), 8);
        let a = table.row("linear_d5", true).unwrap();
        let b = table.row("linear_d5_again", true).unwrap();
        assert_eq!(a.report, b.report);
        for r in &table.rows {
            let s = r.summary().unwrap();
            for fam in Family::ALL {
                let t = match fam {
                    Family::Frame => s.frame,
                    Family::Note => s.note,
                    Family::NoteWithOffset => s.note_with_offset,
                };
                assert!(t.f1.mean.is_finite() && t.f1.std.is_finite());
            }
        }
        // Aggregates are recomputable from the stored per-recording rows.
        let back = Table::read_json(dir.path().join("ablation/table.json")).unwrap();
        for r in &back.rows {
            let rep = r.report.as_ref().unwrap();
            let again = EvalReport::new(rep.rows.clone());
            assert!((again.summary.note.f1.mean - rep.summary.note.f1.mean).abs() <= 1e-12);
        }
        let csv = std::fs::read_to_string(dir.path().join("ablation/table.csv")).unwrap();
        assert_eq!(csv.lines().count(), 9);
        assert!(dir.path().join("cells/full/final.ckpt").exists());
        assert!(dir.path().join("cells/linear/eval_with_inference.json").exists());
    }

    #[test]
    fn failed_cells_are_recorded_and_the_run_continues() {
        let dir = tempfile::tempdir().unwrap();
        let (mut spec, corpus) = smoke(dir.path());
        // A probe asked for rule-based inference without an onset source.
        spec.cells[1].onset_source = None;
        spec.cells.truncate(2);
        spec.baseline = None;
        let table = run_ablation(&spec, &corpus).unwrap();
        assert!(!table.all_ok());
        assert!(table.row("full", true).unwrap().status.is_ok());
        assert!(!table.row("linear", true).unwrap().status.is_ok());
    }

    #[test]
    fn sweep_rows_plot_and_duplicate_check() {
        let dir = tempfile::tempdir().unwrap();
        let (mut spec, corpus) = smoke(dir.path());
        spec.sweep.d_values = vec![0, 1, 2];
        let res = run_dsweep(&spec, &corpus).unwrap();
        assert_eq!(res.points.len(), 3);
        assert!(res.table.all_ok());
        let text = std::fs::read_to_string(&res.csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        let svg = std::fs::read(res.plot.as_ref().unwrap()).unwrap();
        plot::plot_sweep_csv(&res.csv, dir.path().join("again.svg")).unwrap();
        assert_eq!(svg, std::fs::read(dir.path().join("again.svg")).unwrap());
        // D = 0 collapses the window onto the current frame.
        let d0 = res.row(0).unwrap().f1(Family::Note).unwrap();
        let none = res.table.row("linear_none", false).unwrap().f1(Family::Note).unwrap();
        assert!((d0 - none).abs() < 1e-9, "{d0} vs {none}");

        spec.sweep.d_values = vec![1, 1];
        assert!(matches!(run_dsweep(&spec, &corpus), Err(Error::Config(_))));
        spec.sweep.d_values = vec![1];
        spec.sweep.base = "full".into();
        assert!(matches!(run_dsweep(&spec, &corpus), Err(Error::Config(_))));
    }

    #[test]
    fn comparison_has_four_rows_and_exports_maps() {
        let dir = tempfile::tempdir().unwrap();
        let (mut spec, corpus) = smoke(dir.path());
        spec.compare.window_d = 2;
        let res = run_attention_comparison(&spec, &corpus).unwrap();
        assert_eq!(res.table.rows.len(), 4);
        assert!(res.table.all_ok());
        assert_eq!(res.pairwise.len(), 6 * 3);
        let compare = std::fs::read_to_string(dir.path().join("compare/compare.csv")).unwrap();
        assert_eq!(compare.lines().count(), 5);
        assert_eq!(compare.lines().next().unwrap().split(',').count(), 2 + 9);
        for (_, adir) in &res.attention_dirs {
            let n = std::fs::read_dir(adir).unwrap().count();
            assert_eq!(n, 2 * corpus.test.len());
        }

        spec.compare.base = "linear".into();
        assert!(run_attention_comparison(&spec, &corpus).is_err());
    }
}
