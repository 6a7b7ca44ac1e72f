use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::corpus::{Corpus, SyntheticCorpus};
use crate::dataio::SynthParams;
use crate::error::{config, Error, Result};
use crate::evaluation::Tolerance;
use crate::inference::InferenceConfig;
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

/// Where recordings come from. A manifest wins over the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticCorpus,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            manifest: None,
            synthetic: SyntheticCorpus {
                n_train: 40,
                n_validation: 4,
                n_test: 10,
                ..SyntheticCorpus::default()
            },
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Corpus> {
        match &self.manifest {
            Some(path) => Corpus::from_manifest(path),
            None => Corpus::synthetic(&self.synthetic),
        }
    }
}

/// One trained model and how it is scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: String,
    #[serde(default = "ModelConfig::desk")]
    pub model: ModelConfig,
    #[serde(default = "TrainConfig::desk")]
    pub train: TrainConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    /// Score with rule-based inference.
    #[serde(default = "yes")]
    pub with_inference: bool,
    /// Score the thresholded frame posteriorgram directly.
    #[serde(default = "yes")]
    pub without_inference: bool,
    /// Earlier cell whose onset activations feed rule-based inference,
    /// for variants without an onset stack of their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_source: Option<String>,
}

fn yes() -> bool {
    true
}

impl CellSpec {
    pub fn new(id: impl Into<String>, model: ModelConfig) -> Self {
        Self {
            id: id.into(),
            model,
            train: TrainConfig::desk(),
            inference: InferenceConfig::default(),
            with_inference: true,
            without_inference: true,
            onset_source: None,
        }
    }

    /// Scoring modes in table order: without inference, then with.
    pub fn modes(&self) -> Vec<bool> {
        let mut m = Vec::new();
        if self.without_inference {
            m.push(false);
        }
        if self.with_inference {
            m.push(true);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Probe cell the window sweep is built from.
    pub base: String,
    pub d_values: Vec<usize>,
    /// Also train the attention-free base for comparison.
    pub include_baseline: bool,
    /// Score sweep rows with rule-based inference.
    pub inference: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: "linear".into(),
            d_values: vec![1, 5, 10, 15, 20, 25, 30],
            include_baseline: true,
            inference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    /// Full-model cell the attention targets are built from.
    pub base: String,
    pub window_d: usize,
    pub inference: bool,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            base: "full".into(),
            window_d: 5,
            inference: true,
        }
    }
}

/// Everything needed to reproduce a study: data, cells and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub out: PathBuf,
    pub data: DataSource,
    pub tolerance: Tolerance,
    /// Cell the significance tests compare against.
    pub baseline: Option<String>,
    /// Load a cell's `final.ckpt` instead of training when its recorded
    /// configuration matches.
    pub reuse_checkpoints: bool,
    /// Write attention maps for every attention-enabled cell.
    pub export_attention: bool,
    /// Render plots; CSVs are always written.
    pub plots: bool,
    pub sweep: SweepSpec,
    pub compare: CompareSpec,
    pub cells: Vec<CellSpec>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/experiment"),
            data: DataSource::default(),
            tolerance: Tolerance::default(),
            baseline: None,
            reuse_checkpoints: false,
            export_attention: false,
            plots: true,
            sweep: SweepSpec::default(),
            compare: CompareSpec::default(),
            cells: Vec::new(),
        }
    }
}

impl ExperimentSpec {
    /// The desk-scale matrix: a full model plus a linear probe with and
    /// without attention (D = 5), the probes borrowing the full model's
    /// onsets for rule-based inference and training with
    /// [`TrainConfig::desk_probe`].
    pub fn desk() -> Self {
        let full = CellSpec::new("full", ModelConfig::desk());
        let probe = ModelConfig::desk().with_variant(Variant::LinearProbe);
        let linear = CellSpec {
            onset_source: Some("full".into()),
            train: TrainConfig::desk_probe(),
            ..CellSpec::new("linear", probe.clone())
        };
        let linear_attn = CellSpec {
            onset_source: Some("full".into()),
            train: TrainConfig::desk_probe(),
            ..CellSpec::new("linear_d5", probe.with_attention(crate::model::AttentionTarget::Spec, 5))
        };
        Self {
            baseline: Some("linear".into()),
            cells: vec![full, linear, linear_attn],
            ..Self::default()
        }
    }

    pub fn cell(&self, id: &str) -> Option<&CellSpec> {
        self.cells.iter().find(|c| c.id == id)
    }

    /// Apply one seed to every cell's initialization and batch sampling.
    pub fn set_seed(&mut self, seed: u64) {
        for c in &mut self.cells {
            c.model.seed = seed;
            c.train.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, c) in self.cells.iter().enumerate() {
            if c.id.is_empty() || c.id.contains(['/', '\\']) {
                return Err(config(format!("cell id {:?} is not a plain name", c.id)));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(config(format!("cell id `{}` appears twice", c.id)));
            }
            c.model.validate()?;
            c.train.validate()?;
            c.inference.validate()?;
            if c.modes().is_empty() {
                return Err(config(format!("cell `{}` is scored in no mode", c.id)));
            }
            if let Some(src) = &c.onset_source {
                let pos = self.cells.iter().position(|o| &o.id == src);
                match pos {
                    Some(p) if p < i && self.cells[p].model.variant.has_onset_stack() => {}
                    Some(p) if p < i => return Err(config(format!("onset source `{src}` has no onset stack"))),
                    _ => return Err(config(format!("onset source `{src}` of `{}` must be an earlier cell", c.id))),
                }
            }
        }
        if let Some(b) = &self.baseline {
            if self.cell(b).is_none() {
                return Err(config(format!("baseline cell `{b}` does not exist")));
            }
        }
        Ok(())
    }

    /// Parse TOML, apply dotted `key=value` overrides, then fold the
    /// optional `[defaults]` table into every cell.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: Table = toml::from_str(text).map_err(|e| config(format!("bad experiment config: {e}")))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let defaults = root.remove("defaults");
        if let Some(defaults) = &defaults {
            if !defaults.is_table() {
                return Err(config("`defaults` must be a table"));
            }
        }
        if let Some(Value::Array(cells)) = root.get_mut("cells") {
            for cell in cells.iter_mut() {
                let mut merged = desk_cell_defaults();
                if let Some(d) = &defaults {
                    deep_merge(&mut merged, d);
                }
                deep_merge(&mut merged, cell);
                *cell = merged;
            }
        }
        Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Apply overrides to an in-memory spec by round-tripping through TOML.
    /// Its cells are fully spelled out, so a `defaults.` override is applied
    /// to each cell instead.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut expanded = Vec::new();
        for o in overrides {
            match o.strip_prefix("defaults.") {
                Some(rest) => expanded.extend((0..self.cells.len()).map(|i| format!("cells.{i}.{rest}"))),
                None => expanded.push(o.clone()),
            }
        }
        Self::from_toml_str(&self.to_toml()?, &expanded)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(format!("cannot serialize experiment: {e}")))
    }
}

fn desk_cell_defaults() -> Value {
    let mut t = Table::new();
    let to_value = |v: std::result::Result<Value, toml::ser::Error>| v.expect("desk defaults serialize");
    t.insert("model".into(), to_value(Value::try_from(ModelConfig::desk())));
    t.insert("train".into(), to_value(Value::try_from(TrainConfig::desk())));
    t.insert("inference".into(), to_value(Value::try_from(InferenceConfig::default())));
    Value::Table(t)
}

/// Recursively overlay `over` onto `base`; tables merge, anything else
/// replaces.
fn deep_merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(existing) => deep_merge(existing, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `a.b.0.c=value`: numeric segments index arrays; the value is read as a
/// TOML literal and falls back to a plain string.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config(format!("override path `{path}` has an empty segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let (last, parents) = keys.split_last().expect("non-empty path");
    let Some((first, rest)) = parents.split_first() else {
        root.insert(last.to_string(), value);
        return Ok(());
    };
    let mut cursor = root.entry(first.to_string()).or_insert_with(|| Value::Table(Table::new()));
    for key in rest {
        cursor = step(cursor, key, path)?;
    }
    match cursor {
        Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| config(format!("`{path}`: `{last}` is not an index")))?;
            let slot = a.get_mut(i).ok_or_else(|| config(format!("`{path}`: index {i} out of range")))?;
            *slot = value;
        }
        _ => return Err(config(format!("`{path}` descends into a scalar"))),
    }
    Ok(())
}

fn step<'a>(v: &'a mut Value, key: &str, path: &str) -> Result<&'a mut Value> {
    match v {
        Value::Table(t) => Ok(t.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()))),
        Value::Array(a) => {
            let i: usize = key.parse().map_err(|_| config(format!("`{path}`: `{key}` is not an index")))?;
            a.get_mut(i).ok_or_else(|| config(format!("`{path}`: index {i} out of range")))
        }
        _ => Err(config(format!("`{path}` descends into a scalar"))),
    }
}

/// Tiny corpus and model sizes for smoke runs of the whole pipeline.
pub fn smoke_spec(out: impl Into<PathBuf>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::desk();
    spec.out = out.into();
    spec.data.synthetic = SyntheticCorpus {
        seed: 3,
        n_train: 3,
        n_validation: 1,
        n_test: 5,
        params: SynthParams { duration: (1.0, 1.5), ..SynthParams::default() },
    };
    for c in &mut spec.cells {
        c.model.conv_channels = vec![2, 2, 2];
        c.model.fc_width = 8;
        c.model.n_feat = 8;
        c.model.attention_dim = 4;
        c.train.max_steps = 3;
        c.train.batch_size = 2;
        c.train.sequence_length = 16;
        c.train.checkpoint_every = 0;
        c.train.validate_every = 0;
    }
    spec
}
