use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub annotation: PathBuf,
    pub split: Split,
}

/// Read a dataset manifest. `.json` files hold an array of entries; any
/// other extension is read as whitespace-separated `audio annotation split`
/// lines, with `#` comments. Relative paths resolve against the manifest's
/// directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries: Vec<ManifestEntry> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        text.lines()
            .enumerate()
            .map(|(i, l)| (i, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| {
                let f: Vec<&str> = l.split_whitespace().collect();
                let split = match f.get(2).copied() {
                    Some("train") => Split::Train,
                    Some("test") => Split::Test,
                    _ => {
                        return Err(validation(format!(
                            "{}:{}: expected `audio annotation train|test`",
                            path.display(),
                            i + 1
                        )))
                    }
                };
                Ok(ManifestEntry {
                    audio: f[0].into(),
                    annotation: f[1].into(),
                    split,
                })
            })
            .collect::<Result<_>>()?
    };
    for e in &mut entries {
        if e.audio.is_relative() {
            e.audio = base.join(&e.audio);
        }
        if e.annotation.is_relative() {
            e.annotation = base.join(&e.annotation);
        }
    }
    Ok(entries)
}

/// Write entries as pretty JSON. Paths are written as given.
pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
