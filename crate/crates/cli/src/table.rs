//! CSV tables written and read by the subcommands.

use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use fpq_core::balance::{AcceptanceRecord, Dataset};
use fpq_core::{FeatureVector, Label, LabeledSample};

/// One row of the feature table. The label is empty for unlabelled images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub source_id: String,
    pub mu: f64,
    pub sigma2: f64,
    pub ssrvr: f64,
    pub bdd_avg: f64,
    pub rvr_avg: f64,
    pub theta_avg: f64,
    pub label: Option<Label>,
}

impl FeatureRow {
    pub fn new(source_id: String, f: FeatureVector, label: Option<Label>) -> Self {
        Self {
            source_id,
            mu: f.mu,
            sigma2: f.sigma2,
            ssrvr: f.ssrvr,
            bdd_avg: f.bdd_avg,
            rvr_avg: f.rvr_avg,
            theta_avg: f.theta_avg,
            label,
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector::from_array([self.mu, self.sigma2, self.ssrvr, self.bdd_avg, self.rvr_avg, self.theta_avg])
    }
}

impl From<&LabeledSample> for FeatureRow {
    fn from(s: &LabeledSample) -> Self {
        FeatureRow::new(s.source_id.clone(), s.features, Some(s.label))
    }
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let rows: Vec<FeatureRow> = d.samples().iter().map(FeatureRow::from).collect();
    write_features(path, &rows)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let file = File::open(path).with_context(|| format!("opening feature table {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{} line {}", path.display(), i + 2)))
        .collect()
}

/// Feature table as a dataset; every row must carry a label.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let rows = read_features(path)?;
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r
                .label
                .ok_or_else(|| anyhow!("{} line {}: row {} has no label", path.display(), i + 2, r.source_id))?;
            Ok(LabeledSample {
                features: r.features(),
                label,
                source_id: r.source_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

pub fn write_acceptance_log(path: &Path, log: &[AcceptanceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with image ids as the header row and first column.
pub fn write_matrix(path: &Path, ids: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(std::iter::once("id").chain(ids.iter().map(String::as_str)))?;
    for (id, row) in ids.iter().zip(m) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush()?;
    Ok(())
}
