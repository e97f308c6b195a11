use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use fpq_core::balance::{self, Dataset, Point};
use fpq_core::hfom::{self, PoolEntry};
use fpq_core::imgcore;
use fpq_core::learners::{LearnerKind, Metrics};
use fpq_core::ucflem::{self, CascadeModels, ClassificationOutcome, LearnerId, Resolution, SeedPlan};
use fpq_core::{synth, GrayImage, Label, LabeledSample};

use crate::config::RunConfig;
use crate::manifest::{parse_manifest, write_manifest, Manifest};
use crate::table::{self, FeatureRow};

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Loads an image and brings it to the configured square side.
fn load_cropped(path: &Path, side: usize) -> Result<GrayImage> {
    let img = imgcore::load_image(path).with_context(|| format!("loading {}", path.display()))?;
    imgcore::crop_resize(&img, side).with_context(|| format!("cropping {}", path.display()))
}

fn load_all(manifest: &Manifest, cfg: &RunConfig) -> Result<Vec<GrayImage>> {
    let paths: Vec<&PathBuf> = manifest.entries.iter().map(|e| &e.path).collect();
    cfg.execution()
        .map(&paths, |p| load_cropped(p, cfg.side))
        .into_iter()
        .collect()
}

fn feature_rows(manifest: &Manifest, cfg: &RunConfig) -> Result<Vec<FeatureRow>> {
    let images = load_all(manifest, cfg)?;
    let feats = fpq_core::features::extract_batch(&images, &cfg.features(), cfg.execution());
    manifest
        .entries
        .iter()
        .zip(feats)
        .map(|(e, f)| {
            let f = f.with_context(|| format!("extracting features of {}", e.path.display()))?;
            Ok(FeatureRow::new(e.id(), f, e.label))
        })
        .collect()
}

fn labelled(rows: Vec<FeatureRow>, what: &str) -> Result<Dataset> {
    let samples = rows
        .into_iter()
        .map(|r| {
            let Some(label) = r.label else {
                bail!("{what}: sample {} has no label", r.source_id);
            };
            Ok(LabeledSample {
                features: r.features(),
                label,
                source_id: r.source_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

/// Labelled dataset from either a manifest (features extracted on the fly)
/// or a feature table.
fn dataset_from(manifest: Option<&Path>, features: Option<&Path>, cfg: &RunConfig) -> Result<Dataset> {
    match (manifest, features) {
        (Some(m), None) => labelled(feature_rows(&parse_manifest(m)?, cfg)?, &m.display().to_string()),
        (None, Some(f)) => table::read_dataset(f),
        _ => bail!("give exactly one of --manifest and --features"),
    }
}

pub fn synth(out: &Path, counts: [usize; 3], cfg: &RunConfig) -> Result<()> {
    let images = out.join("images");
    create_dir(&images)?;
    let pool = synth::synth_pool(counts, cfg.side, cfg.seed);
    let mut rows = Vec::with_capacity(pool.len());
    for s in &pool {
        let rel = format!("images/{}.png", s.id);
        imgcore::save_image(&s.image, out.join(&rel))?;
        rows.push((rel, s.label));
    }
    write_manifest(&out.join("manifest.csv"), &rows)?;
    cfg.echo(out)?;
    eprintln!("wrote {} images and {}", rows.len(), out.join("manifest.csv").display());
    Ok(())
}

pub fn features(manifest: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    create_dir(out)?;
    let rows = feature_rows(&parse_manifest(manifest)?, cfg)?;
    table::write_features(&out.join("features.csv"), &rows)?;
    cfg.echo(out)?;
    eprintln!("wrote features of {} images", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct BalanceSummary {
    seed: u64,
    input_counts: [usize; 3],
    output_counts: [usize; 3],
    test_counts: Option<[usize; 3]>,
    attempts: usize,
    accepted: usize,
    padded_classes: Vec<Label>,
    warnings: Vec<String>,
}

/// With `whole` the entire table is balanced; otherwise the training part of
/// the configured split is balanced and the test part written beside it.
pub fn balance(manifest: Option<&Path>, features: Option<&Path>, out: &Path, whole: bool, cfg: &RunConfig) -> Result<()> {
    let d = dataset_from(manifest, features, cfg)?;
    create_dir(out)?;
    let ucfg = ucflem::UcflemConfig {
        balance: true,
        ..cfg.ucflem()
    };
    let seed = SeedPlan::from_master(cfg.seed).balance;
    let (input_counts, outcome, test_counts) = if whole {
        let outcome = balance::balance_dataset(&d, seed, &ucfg.balance_config)?;
        (d.class_counts(), outcome, None)
    } else {
        let prepared = ucflem::prepare_split(&d, &ucfg)?;
        let test = d.subset(&prepared.test_indices);
        table::write_dataset(&out.join("test.csv"), &test)?;
        let outcome = prepared.balance.expect("balancing was requested");
        (d.subset(&prepared.train_indices).class_counts(), outcome, Some(test.class_counts()))
    };
    table::write_dataset(&out.join("balanced.csv"), &outcome.dataset)?;
    table::write_acceptance_log(&out.join("acceptance_log.csv"), &outcome.log)?;
    let summary = BalanceSummary {
        seed,
        input_counts,
        output_counts: outcome.dataset.class_counts(),
        test_counts,
        attempts: outcome.log.len(),
        accepted: outcome.log.iter().filter(|r| r.decision == "accept").count(),
        padded_classes: outcome.padded_classes.clone(),
        warnings: outcome.warnings.clone(),
    };
    write_json(&out.join("balance_report.json"), &summary)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    cfg.echo(out)?;
    eprintln!("balanced {:?} -> {:?}", summary.input_counts, summary.output_counts);
    Ok(())
}

/// Trains the cascade learners on the table as given; no split, no balancing.
pub fn train(features: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let d = table::read_dataset(features)?;
    create_dir(out)?;
    let models = ucflem::train_cascade(&d, &cfg.ucflem())?;
    write_text(&out.join("model.json"), &models.to_json()?)?;
    let phase = |p: &ucflem::PhaseModels| {
        json!({
            "psi1": { "kind": LearnerKind::RandomForest, "validation_accuracy": p.accuracy[0], "trees": p.psi[0].tree_count() },
            "psi2": { "kind": LearnerKind::GradientBoost, "validation_accuracy": p.accuracy[1], "trees": p.psi[1].tree_count() },
        })
    };
    let metrics = json!({
        "train_counts": d.class_counts(),
        "phase1": phase(&models.phase1),
        "phase2": phase(&models.phase2),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    cfg.echo(out)?;
    eprintln!("trained cascade on {} samples", d.len());
    Ok(())
}

fn write_report(out: &Path, result: &ClassificationOutcome, ids: &[String]) -> Result<()> {
    let report = result.report();
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_json(&out.join("report.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    w.write_record(["source_id", "truth", "predicted", "resolution"])?;
    for k in 0..result.test_indices.len() {
        let resolution = match result.resolution[k] {
            Resolution::Phase1 => "phase1",
            Resolution::Phase2 => "phase2",
            Resolution::Fallback(LearnerId::Psi1) => "fallback_psi1",
            Resolution::Fallback(LearnerId::Psi2) => "fallback_psi2",
        };
        w.write_record([ids[k].as_str(), result.truth[k].as_str(), result.predicted[k].as_str(), resolution])?;
    }
    w.flush()?;
    Ok(())
}

/// End-to-end classification, or application of a trained model to a
/// labelled test table when `model` is given.
pub fn classify(
    manifest: Option<&Path>,
    features: Option<&Path>,
    model: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let d = dataset_from(manifest, features, cfg)?;
    create_dir(out)?;
    let ucfg = cfg.ucflem();
    let (result, ids): (_, Vec<String>) = match model {
        None => {
            let r = ucflem::classify_dataset(&d, &ucfg)?;
            let ids = r.test_indices.iter().map(|&i| d.samples()[i].source_id.clone()).collect();
            (r, ids)
        }
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
            let models = CascadeModels::from_json(&text).with_context(|| format!("loading model {}", path.display()))?;
            let test: Vec<(usize, Point)> = d.samples().iter().enumerate().map(|(i, s)| (i, s.features.to_array())).collect();
            let truth = d.samples().iter().map(|s| s.label).collect();
            let train_counts = models_train_counts(path);
            let r = ucflem::classification_outcome(&models, test, truth, &ucfg, train_counts, Vec::new())?;
            let ids = d.samples().iter().map(|s| s.source_id.clone()).collect();
            (r, ids)
        }
    };
    write_report(out, &result, &ids)?;
    cfg.echo(out)?;
    let m: &Metrics = &result.metrics;
    println!("accuracy {:.4}  macro-F1 {:.4}  on {} test samples", m.accuracy, m.f1, result.truth.len());
    Ok(())
}

/// Training counts recorded by `train` next to the model, if present.
fn models_train_counts(model: &Path) -> [usize; 3] {
    let read = || -> Option<[usize; 3]> {
        let text = fs::read_to_string(model.with_file_name("metrics.json")).ok()?;
        let v: serde_json::Value = serde_json::from_str(&text).ok()?;
        serde_json::from_value(v.get("train_counts")?.clone()).ok()
    };
    read().unwrap_or_default()
}

pub fn hfom(manifest: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let manifest = parse_manifest(manifest)?;
    let standard = Manifest {
        entries: manifest.entries.into_iter().filter(|e| e.label == Some(Label::Standard)).collect(),
    };
    if standard.entries.len() < cfg.n {
        bail!(
            "insufficient standard fingerprints: need {}, manifest has {}",
            cfg.n,
            standard.entries.len()
        );
    }
    let images = load_all(&standard, cfg)?;
    let feats = fpq_core::features::extract_batch(&images, &cfg.features(), cfg.execution());
    let pool = standard
        .entries
        .iter()
        .zip(images)
        .zip(feats)
        .map(|((e, image), f)| {
            Ok(PoolEntry {
                id: e.id(),
                features: f.with_context(|| format!("extracting features of {}", e.path.display()))?,
                image,
                label: Label::Standard,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = hfom::hfom_pipeline(&pool, &cfg.hfom())?;
    create_dir(out)?;
    imgcore::save_image(&result.hfom.image, out.join("hfom.png"))?;
    imgcore::save_image(&result.hfom.image, out.join("hfom.pgm"))?;
    write_text(&out.join("stage_report.txt"), &result.report.to_text())?;
    let selected: Vec<&str> = result.selected.iter().map(|&i| pool[i].id.as_str()).collect();
    let provenance: Vec<_> = result
        .hfom
        .provenance
        .iter()
        .map(|q| json!({ "quadrant": q.quadrant, "source": selected[q.source] }))
        .collect();
    let summary = json!({
        "selected": selected,
        "rotations_degrees": result.rotations.iter().map(|r| r.degrees()).collect::<Vec<_>>(),
        "stages": result.report.rows,
        "rotation_climb": result.rotation_climb,
        "block_climb": result.block_climb,
        "provenance": provenance,
    });
    write_json(&out.join("hfom.json"), &summary)?;
    cfg.echo(out)?;
    print!("{}", result.report.to_text());
    Ok(())
}

/// Pairwise shifted SSIM of the manifest images (and optionally extra images).
pub fn ssim(manifest: &Path, extra: &[PathBuf], out: &Path, cfg: &RunConfig) -> Result<()> {
    let manifest = parse_manifest(manifest)?;
    let mut images = load_all(&manifest, cfg)?;
    let mut ids: Vec<String> = manifest.entries.iter().map(|e| e.id()).collect();
    for p in extra {
        images.push(load_cropped(p, cfg.side)?);
        ids.push(p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()));
    }
    if images.is_empty() {
        bail!("no images to compare");
    }
    let m = hfom::ssim_matrix(&images, cfg.execution())?;
    create_dir(out)?;
    table::write_matrix(&out.join("ssim.csv"), &ids, &m)?;
    cfg.echo(out)?;
    eprintln!("wrote {0}x{0} ssim matrix", ids.len());
    Ok(())
}
