use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use fpq_core::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Option<Label>,
}

impl ManifestEntry {
    /// File stem used as the sample id in derived tables.
    pub fn id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    #[serde(default)]
    label: Option<String>,
}

/// Reads a `path,label` CSV. Labels may be left empty.
pub fn parse_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).with_context(|| format!("opening manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().next() != Some("path") {
        bail!("{}: header must start with `path`", path.display());
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.with_context(|| format!("{} line {line}", path.display()))?;
        let label = match row.label.as_deref() {
            None | Some("") => None,
            Some(token) => Some(
                token
                    .parse::<Label>()
                    .map_err(|_| anyhow!("{} line {line}: unknown label {token:?}", path.display()))?,
            ),
        };
        let resolved = base.join(&row.path);
        if !seen.insert(resolved.clone()) {
            bail!("{} line {line}: duplicate path {}", path.display(), row.path);
        }
        entries.push(ManifestEntry { path: resolved, label });
    }
    Ok(Manifest { entries })
}

/// Writes a manifest with paths relative to `dir`.
pub fn write_manifest(path: &Path, rows: &[(String, Label)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["path", "label"])?;
    for (p, l) in rows {
        w.write_record([p.as_str(), l.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
