//! Dual-phase, dual-layer agreement cascade over a random forest (Ψ1) and a
//! gradient-boosted ensemble (Ψ2).
//!
//! Each phase trains both learners, ranks them on a held-out validation fold
//! and assigns one to each layer. Layer 1 labels the phase input; layer 2
//! relabels each of the three label-groups produced by layer 1. Samples on
//! which both layers agree are resolved (ρ); the rest (τ) move on. Phase 2
//! retrains with fresh seeds and works on phase 1's τ. Whatever is still
//! unresolved after phase 2 is labelled by the learner with the best mean
//! layer accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{self, BalanceConfig, BalanceOutcome, Dataset, Point};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::Label;
use crate::learners::{self, BoostParams, EnsembleModel, ForestParams, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LearnerId {
    /// Random forest.
    Psi1,
    /// Gradient boosting.
    Psi2,
}

impl LearnerId {
    fn slot(self) -> usize {
        match self {
            LearnerId::Psi1 => 0,
            LearnerId::Psi2 => 1,
        }
    }
}

/// Layer models from validation accuracies: layer 1 gets Ψ1 only when it is
/// strictly better, layer 2 gets Ψ1 only when it is strictly worse; a tie
/// puts Ψ2 in both layers.
pub fn assign_layer_models(a1: f64, a2: f64) -> (LearnerId, LearnerId) {
    let layer1 = if a1 > a2 { LearnerId::Psi1 } else { LearnerId::Psi2 };
    let layer2 = if a1 < a2 { LearnerId::Psi1 } else { LearnerId::Psi2 };
    (layer1, layer2)
}

/// Positional agreement split: `rho` holds `(position, agreed label)`,
/// `tau` the positions where the layers disagree.
pub fn split_agreement(l1: &[Label], l2: &[Label]) -> Result<(Vec<(usize, Label)>, Vec<usize>)> {
    if l1.len() != l2.len() {
        return Err(Error::MismatchedSamples(l1.len(), l2.len()));
    }
    let mut rho = Vec::new();
    let mut tau = Vec::new();
    for (i, (a, b)) in l1.iter().zip(l2).enumerate() {
        if a == b {
            rho.push((i, *a));
        } else {
            tau.push(i);
        }
    }
    Ok((rho, tau))
}

/// Stratified random holdout: about `fraction` of every class goes to the
/// second list, and each class keeps at least one member in the first.
pub fn stratified_split(labels: &[Label], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_held = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        held.extend_from_slice(&idx[..n_held]);
        keep.extend_from_slice(&idx[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub forest: ForestParams,
    pub boost: BoostParams,
    /// Oversample the training set before fitting.
    pub balance: Option<BalanceConfig>,
    pub balance_seed: u64,
    pub validation_fraction: f64,
    pub validation_seed: u64,
    /// Retrain both learners on the whole training set after scoring them.
    pub refit: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            boost: BoostParams::default(),
            balance: None,
            balance_seed: 0,
            validation_fraction: 0.2,
            validation_seed: 0,
            refit: true,
        }
    }
}

/// The two learners of a phase with their validation accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModels {
    pub psi: [EnsembleModel; 2],
    pub accuracy: [f64; 2],
}

impl PhaseModels {
    pub fn model(&self, id: LearnerId) -> &EnsembleModel {
        &self.psi[id.slot()]
    }

    pub fn accuracy_of(&self, id: LearnerId) -> f64 {
        self.accuracy[id.slot()]
    }
}

pub fn train_phase_models(train: &Dataset, cfg: &PhaseConfig) -> Result<PhaseModels> {
    let balanced;
    let train = match &cfg.balance {
        Some(bc) => {
            balanced = balance::balance_dataset(train, cfg.balance_seed, bc)?.dataset;
            &balanced
        }
        None => train,
    };
    let labels: Vec<Label> = train.samples().iter().map(|s| s.label).collect();
    let (fit_idx, val_idx) = stratified_split(&labels, cfg.validation_fraction, cfg.validation_seed);
    let fit = train.subset(&fit_idx);
    let val = train.subset(&val_idx);
    let mut rf = learners::train_random_forest(&fit, &cfg.forest)?;
    let mut gb = learners::train_gradient_boost(&fit, &cfg.boost)?;
    let a_rf = learners::evaluate(&rf, &val)?.accuracy;
    let a_gb = learners::evaluate(&gb, &val)?.accuracy;
    if cfg.refit {
        rf = learners::train_random_forest(train, &cfg.forest)?;
        gb = learners::train_gradient_boost(train, &cfg.boost)?;
    }
    rf.validation_accuracy = Some(a_rf);
    gb.validation_accuracy = Some(a_gb);
    Ok(PhaseModels {
        psi: [rf, gb],
        accuracy: [a_rf, a_gb],
    })
}

/// Outcome of one phase. Sample identifiers are whatever the caller passed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub rho: Vec<(usize, Label)>,
    pub tau: Vec<usize>,
    /// Validation accuracies of Ψ1 and Ψ2.
    pub accuracies: [f64; 2],
    /// Models assigned to layer 1 and layer 2.
    pub layer_models: (LearnerId, LearnerId),
    /// Per-sample labels of each layer, aligned with the phase input.
    pub layer1: Vec<Label>,
    pub layer2: Vec<Label>,
}

impl PhaseResult {
    /// Validation accuracy of the model serving each layer.
    pub fn layer_accuracies(&self) -> [f64; 2] {
        [
            self.accuracies[self.layer_models.0.slot()],
            self.accuracies[self.layer_models.1.slot()],
        ]
    }
}

/// Runs both layers of a phase with already trained models.
pub fn apply_phase(models: &PhaseModels, test: &[(usize, Point)], exec: Execution) -> Result<PhaseResult> {
    let (lam1, lam2) = assign_layer_models(models.accuracy[0], models.accuracy[1]);
    let rows: Vec<Point> = test.iter().map(|(_, p)| *p).collect();
    let layer1 = models.model(lam1).predict_batch(&rows, exec);
    let mut layer2 = vec![Label::Dry; rows.len()];
    for label in Label::ALL {
        let group: Vec<usize> = (0..rows.len()).filter(|&i| layer1[i] == label).collect();
        let group_rows: Vec<Point> = group.iter().map(|&i| rows[i]).collect();
        let out = models.model(lam2).predict_batch(&group_rows, exec);
        for (&i, l) in group.iter().zip(out) {
            layer2[i] = l;
        }
    }
    let (rho, tau) = split_agreement(&layer1, &layer2)?;
    Ok(PhaseResult {
        rho: rho.into_iter().map(|(i, l)| (test[i].0, l)).collect(),
        tau: tau.into_iter().map(|i| test[i].0).collect(),
        accuracies: models.accuracy,
        layer_models: (lam1, lam2),
        layer1,
        layer2,
    })
}

pub fn run_phase(train: &Dataset, test: &[(usize, Point)], cfg: &PhaseConfig) -> Result<(PhaseResult, PhaseModels)> {
    let models = train_phase_models(train, cfg)?;
    let result = apply_phase(&models, test, cfg.forest.execution)?;
    Ok((result, models))
}

/// Accuracies of every layer slot each learner served in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub served: [Vec<f64>; 2],
}

impl AccuracyTable {
    pub fn record(&mut self, id: LearnerId, accuracy: f64) {
        self.served[id.slot()].push(accuracy);
    }

    pub fn from_phases<'a>(phases: impl IntoIterator<Item = &'a PhaseResult>) -> Self {
        let mut t = Self::default();
        for p in phases {
            let acc = p.layer_accuracies();
            t.record(p.layer_models.0, acc[0]);
            t.record(p.layer_models.1, acc[1]);
        }
        t
    }

    /// Mean accuracy over the layers a learner served in.
    pub fn mean(&self, id: LearnerId) -> Option<f64> {
        let v = &self.served[id.slot()];
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Learner with the best mean; ties and missing entries favour Ψ2.
    pub fn best(&self) -> LearnerId {
        match (self.mean(LearnerId::Psi1), self.mean(LearnerId::Psi2)) {
            (Some(a), Some(b)) if a > b => LearnerId::Psi1,
            (Some(_), None) => LearnerId::Psi1,
            _ => LearnerId::Psi2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Phase1,
    Phase2,
    Fallback(LearnerId),
}

/// Final labels keyed by sample id, ordered by id.
pub fn defuzzify(
    sample_ids: &[usize],
    rho1: &[(usize, Label)],
    rho2: &[(usize, Label)],
    tau2: &[usize],
    table: &AccuracyTable,
    mut fallback: impl FnMut(LearnerId, usize) -> Label,
) -> Result<Vec<(usize, Label, Resolution)>> {
    let mut ids: Vec<usize> = sample_ids.to_vec();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::NotAPartition("duplicate sample id".into()));
    }
    let mut slot: Vec<Option<(Label, Resolution)>> = vec![None; ids.len()];
    let mut place = |id: usize, value: (Label, Resolution)| -> Result<()> {
        let pos = ids
            .binary_search(&id)
            .map_err(|_| Error::NotAPartition(format!("unknown sample {id}")))?;
        if slot[pos].replace(value).is_some() {
            return Err(Error::NotAPartition(format!("sample {id} assigned twice")));
        }
        Ok(())
    };
    for &(id, l) in rho1 {
        place(id, (l, Resolution::Phase1))?;
    }
    for &(id, l) in rho2 {
        place(id, (l, Resolution::Phase2))?;
    }
    let best = table.best();
    for &id in tau2 {
        place(id, (fallback(best, id), Resolution::Fallback(best)))?;
    }
    ids.iter()
        .zip(slot)
        .map(|(&id, s)| {
            s.map(|(l, r)| (id, l, r))
                .ok_or_else(|| Error::NotAPartition(format!("sample {id} unassigned")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcflemConfig {
    /// Fraction of the dataset used for training.
    pub train_ratio: f64,
    pub seed: u64,
    pub balance: bool,
    pub balance_config: BalanceConfig,
    pub forest: ForestParams,
    pub boost: BoostParams,
    pub validation_fraction: f64,
    pub refit: bool,
}

impl Default for UcflemConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            seed: 42,
            balance: true,
            balance_config: BalanceConfig::default(),
            forest: ForestParams::default(),
            boost: BoostParams::default(),
            validation_fraction: 0.2,
            refit: true,
        }
    }
}

/// Seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub split: u64,
    pub balance: u64,
    pub phase1: u64,
    pub phase2: u64,
}

impl SeedPlan {
    pub fn from_master(seed: u64) -> Self {
        let mix = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self {
            split: seed,
            balance: mix(1),
            phase1: mix(2),
            phase2: mix(3),
        }
    }
}

impl UcflemConfig {
    fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::InvalidParameter(format!("train ratio {} not in (0, 1)", self.train_ratio)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidParameter("validation fraction not in (0, 1)".into()));
        }
        Ok(())
    }

    fn phase(&self, seed: u64) -> PhaseConfig {
        PhaseConfig {
            forest: ForestParams { seed, ..self.forest },
            boost: BoostParams { seed: seed ^ 0x5555, ..self.boost },
            balance: None,
            balance_seed: 0,
            validation_fraction: self.validation_fraction,
            validation_seed: seed.rotate_left(17),
            refit: self.refit,
        }
    }

    /// Train/test indices into the dataset.
    pub fn split(&self, d: &Dataset) -> (Vec<usize>, Vec<usize>) {
        let labels: Vec<Label> = d.samples().iter().map(|s| s.label).collect();
        stratified_split(&labels, 1.0 - self.train_ratio, SeedPlan::from_master(self.seed).split)
    }
}

/// Training part of a split, after optional balancing.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Dataset,
    /// Indices into the input dataset, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub balance: Option<BalanceOutcome>,
}

/// Seeded stratified split, then balancing of the training part when
/// `cfg.balance` is set.
pub fn prepare_split(d: &Dataset, cfg: &UcflemConfig) -> Result<PreparedSplit> {
    cfg.validate()?;
    let (train_indices, test_indices) = cfg.split(d);
    let mut train = d.subset(&train_indices);
    let mut outcome = None;
    if cfg.balance {
        let b = balance::balance_dataset(&train, SeedPlan::from_master(cfg.seed).balance, &cfg.balance_config)?;
        train = b.dataset.clone();
        outcome = Some(b);
    }
    Ok(PreparedSplit {
        train,
        train_indices,
        test_indices,
        balance: outcome,
    })
}

/// Learners of both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModels {
    pub phase1: PhaseModels,
    pub phase2: PhaseModels,
}

#[derive(Serialize, Deserialize)]
struct CascadeFile {
    format: String,
    version: u32,
    models: CascadeModels,
}

const CASCADE_FORMAT: &str = "fpq-cascade";

impl CascadeModels {
    pub fn to_json(&self) -> Result<String> {
        let file = CascadeFile {
            format: CASCADE_FORMAT.into(),
            version: 1,
            models: self.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CascadeFile = serde_json::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != CASCADE_FORMAT || file.version != 1 {
            return Err(Error::ModelFormat(format!(
                "expected {CASCADE_FORMAT} v1, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.models)
    }
}

/// Trains the phase 1 and phase 2 learners on an already prepared training set.
pub fn train_cascade(train: &Dataset, cfg: &UcflemConfig) -> Result<CascadeModels> {
    cfg.validate()?;
    let seeds = SeedPlan::from_master(cfg.seed);
    Ok(CascadeModels {
        phase1: train_phase_models(train, &cfg.phase(seeds.phase1))?,
        phase2: train_phase_models(train, &cfg.phase(seeds.phase2))?,
    })
}

/// Cascade output for a set of identified samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    /// `(id, label, resolution)` ordered by id.
    pub finals: Vec<(usize, Label, Resolution)>,
    pub phase1: PhaseResult,
    pub phase2: PhaseResult,
    pub psi_o: LearnerId,
}

/// Both phases, then defuzzification, on `(id, point)` pairs with unique ids.
pub fn apply_cascade(models: &CascadeModels, test: &[(usize, Point)], exec: Execution) -> Result<CascadeOutcome> {
    let phase1 = apply_phase(&models.phase1, test, exec)?;
    let points: std::collections::HashMap<usize, Point> = test.iter().copied().collect();
    let test2: Vec<(usize, Point)> = phase1.tau.iter().map(|i| (*i, points[i])).collect();
    let phase2 = apply_phase(&models.phase2, &test2, exec)?;
    let table = AccuracyTable::from_phases([&phase1, &phase2]);
    let ids: Vec<usize> = test.iter().map(|(i, _)| *i).collect();
    let finals = defuzzify(&ids, &phase1.rho, &phase2.rho, &phase2.tau, &table, |id, i| {
        models.phase2.model(id).predict_point(&points[&i])
    })?;
    Ok(CascadeOutcome {
        finals,
        phase1,
        phase2,
        psi_o: table.best(),
    })
}

#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    /// Indices into the input dataset of the test samples, ascending.
    pub test_indices: Vec<usize>,
    pub truth: Vec<Label>,
    pub predicted: Vec<Label>,
    pub resolution: Vec<Resolution>,
    pub metrics: Metrics,
    pub phase1: PhaseResult,
    pub phase2: PhaseResult,
    pub psi_o: LearnerId,
    pub seeds: SeedPlan,
    pub train_counts: [usize; 3],
    pub warnings: Vec<String>,
}

/// End-to-end run: seeded stratified split, optional balancing of the
/// training part, both phases, defuzzification and evaluation.
pub fn classify_dataset(d: &Dataset, cfg: &UcflemConfig) -> Result<ClassificationOutcome> {
    let prepared = prepare_split(d, cfg)?;
    let models = train_cascade(&prepared.train, cfg)?;
    let test: Vec<(usize, Point)> = prepared
        .test_indices
        .iter()
        .map(|&i| (i, d.samples()[i].features.to_array()))
        .collect();
    let truth: Vec<Label> = prepared.test_indices.iter().map(|&i| d.samples()[i].label).collect();
    let warnings = prepared.balance.map(|b| b.warnings).unwrap_or_default();
    classification_outcome(&models, test, truth, cfg, prepared.train.class_counts(), warnings)
}

/// Applies trained models to labelled test points and scores the result.
pub fn classification_outcome(
    models: &CascadeModels,
    test: Vec<(usize, Point)>,
    truth: Vec<Label>,
    cfg: &UcflemConfig,
    train_counts: [usize; 3],
    warnings: Vec<String>,
) -> Result<ClassificationOutcome> {
    if test.len() != truth.len() {
        return Err(Error::MismatchedSamples(test.len(), truth.len()));
    }
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&k| test[k].0);
    let test_indices: Vec<usize> = order.iter().map(|&k| test[k].0).collect();
    let truth: Vec<Label> = order.iter().map(|&k| truth[k]).collect();
    let out = apply_cascade(models, &test, cfg.forest.execution)?;
    let predicted: Vec<Label> = out.finals.iter().map(|(_, l, _)| *l).collect();
    let resolution = out.finals.iter().map(|(_, _, r)| *r).collect();
    let metrics = Metrics::from_predictions(&truth, &predicted)?;
    Ok(ClassificationOutcome {
        test_indices,
        truth,
        predicted,
        resolution,
        metrics,
        phase1: out.phase1,
        phase2: out.phase2,
        psi_o: out.psi_o,
        seeds: SeedPlan::from_master(cfg.seed),
        train_counts,
        warnings,
    })
}

/// A single random forest trained on the same (unbalanced) training split
/// and evaluated on the same test split as [`classify_dataset`].
pub fn single_forest_baseline(d: &Dataset, cfg: &UcflemConfig) -> Result<Metrics> {
    cfg.validate()?;
    let (train_idx, test_idx) = cfg.split(d);
    let seeds = SeedPlan::from_master(cfg.seed);
    let model = learners::train_random_forest(
        &d.subset(&train_idx),
        &ForestParams { seed: seeds.phase1, ..cfg.forest },
    )?;
    learners::evaluate(&model, &d.subset(&test_idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub rho: usize,
    pub tau: usize,
    pub layer_models: (LearnerId, LearnerId),
    pub accuracies: [f64; 2],
}

/// Machine-readable classification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub test_size: usize,
    pub confusion: [[usize; 3]; 3],
    pub phase1: PhaseSummary,
    pub phase2: PhaseSummary,
    pub psi_o: LearnerId,
    pub seeds: SeedPlan,
    pub train_counts: [usize; 3],
    pub warnings: Vec<String>,
}

impl ClassificationOutcome {
    pub fn report(&self) -> ClassificationReport {
        let summary = |p: &PhaseResult| PhaseSummary {
            rho: p.rho.len(),
            tau: p.tau.len(),
            layer_models: p.layer_models,
            accuracies: p.accuracies,
        };
        ClassificationReport {
            accuracy: self.metrics.accuracy,
            precision: self.metrics.precision,
            recall: self.metrics.recall,
            f1: self.metrics.f1,
            test_size: self.truth.len(),
            confusion: self.metrics.confusion,
            phase1: summary(&self.phase1),
            phase2: summary(&self.phase2),
            psi_o: self.psi_o,
            seeds: self.seeds,
            train_counts: self.train_counts,
            warnings: self.warnings.clone(),
        }
    }
}

impl ClassificationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("test samples      {}\n", self.test_size));
        s.push_str(&format!("accuracy          {:.4}\n", self.accuracy));
        s.push_str(&format!("macro precision   {:.4}\n", self.precision));
        s.push_str(&format!("macro recall      {:.4}\n", self.recall));
        s.push_str(&format!("macro f1          {:.4}\n", self.f1));
        for (name, p) in [("phase 1", &self.phase1), ("phase 2", &self.phase2)] {
            s.push_str(&format!(
                "{name}           rho={} tau={} layers={:?}/{:?} acc(rf,gb)=({:.4}, {:.4})\n",
                p.rho, p.tau, p.layer_models.0, p.layer_models.1, p.accuracies[0], p.accuracies[1]
            ));
        }
        s.push_str(&format!("fallback model    {:?}\n", self.psi_o));
        s.push_str("confusion (rows=truth dry/standard/wet, cols=predicted)\n");
        for row in &self.confusion {
            s.push_str(&format!("  {:>5} {:>5} {:>5}\n", row[0], row[1], row[2]));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}
