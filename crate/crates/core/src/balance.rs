//! Multiclass oversampling along the dominant eigen-direction of each
//! minority class's medoid neighbourhood.
//!
//! A synthetic sample is accepted only if it duplicates no existing row and
//! leaves the identity of the most divergent class unchanged, where a class's
//! divergence is the KL divergence of its feature histogram from the histogram
//! of the whole dataset.

use nalgebra::{Matrix6, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Label, LabeledSample, FEATURE_COUNT};

pub type Point = [f64; FEATURE_COUNT];

/// Number of histogram bins per feature.
pub const KL_BINS: usize = 16;
/// Additive smoothing applied to every bin count before normalisation.
pub const KL_SMOOTHING: f64 = 1e-6;
/// Rows of the neighbour matrix: five neighbours plus the medoid.
pub const NEIGHBOURHOOD: usize = FEATURE_COUNT;

/// Ordered labelled samples with a running per-class tally.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    counts: [usize; 3],
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Self {
        let mut counts = [0; 3];
        for s in &samples {
            counts[s.label.index()] += 1;
        }
        Self { samples, counts }
    }

    pub fn push(&mut self, sample: LabeledSample) {
        self.counts[sample.label.index()] += 1;
        self.samples.push(sample);
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-label counts indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts[label.index()]
    }

    /// Labels with at least one sample, in label order.
    pub fn classes(&self) -> Vec<Label> {
        Label::ALL.into_iter().filter(|l| self.count(*l) > 0).collect()
    }

    pub fn rows(&self) -> Vec<Point> {
        self.samples.iter().map(|s| s.features.to_array()).collect()
    }

    pub fn class_rows(&self, label: Label) -> Vec<Point> {
        self.samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.features.to_array())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

fn distance_sq(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the member with the smallest total Euclidean distance to all
/// others; ties go to the lowest index.
pub fn class_medoid(points: &[Point]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::Empty("class"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let total: f64 = points.iter().map(|q| distance_sq(p, q).sqrt()).sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    Ok(best.0)
}

/// Six rows: the five members nearest the medoid (closest first, ties by
/// index) followed by the medoid itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborMatrix {
    pub rows: [Point; NEIGHBOURHOOD],
}

impl NeighborMatrix {
    pub fn medoid(&self) -> &Point {
        &self.rows[NEIGHBOURHOOD - 1]
    }

    /// Sample covariance of the six rows (divisor 5).
    pub fn covariance(&self) -> [[f64; FEATURE_COUNT]; FEATURE_COUNT] {
        let n = NEIGHBOURHOOD as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        for row in &self.rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut cov = [[0.0; FEATURE_COUNT]; FEATURE_COUNT];
        for row in &self.rows {
            for i in 0..FEATURE_COUNT {
                for j in 0..FEATURE_COUNT {
                    cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        cov
    }
}

/// Indices of the `k` members nearest to `points[center]`, excluding it.
fn nearest(points: &[Point], center: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != center)
        .map(|(i, p)| (distance_sq(p, &points[center]), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn build_neighbor_matrix(points: &[Point], medoid: usize) -> Result<NeighborMatrix> {
    if points.len() < NEIGHBOURHOOD {
        return Err(Error::ClassTooSmall {
            label: "class".into(),
            count: points.len(),
            needed: NEIGHBOURHOOD,
        });
    }
    Ok(neighbor_matrix_padded(points, medoid).0)
}

/// Like [`build_neighbor_matrix`] but classes with fewer than six members are
/// padded by repeating the medoid. The flag reports whether padding happened.
pub fn neighbor_matrix_padded(points: &[Point], medoid: usize) -> (NeighborMatrix, bool) {
    let near = nearest(points, medoid, NEIGHBOURHOOD - 1);
    let padded = near.len() < NEIGHBOURHOOD - 1;
    let mut rows = [points[medoid]; NEIGHBOURHOOD];
    for (slot, &i) in near.iter().enumerate() {
        rows[slot] = points[i];
    }
    (NeighborMatrix { rows }, padded)
}

/// Unit eigenvector of the largest eigenvalue of a symmetric 6x6 matrix, with
/// its first non-zero entry made positive, and that eigenvalue.
pub fn dominant_eigenpair(cov: &[[f64; FEATURE_COUNT]; FEATURE_COUNT]) -> Result<(Point, f64)> {
    let m = Matrix6::from_fn(|i, j| cov[i][j]);
    let eig = SymmetricEigen::new(m);
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("six eigenvalues");
    if !(lambda > 0.0) {
        return Err(Error::DegenerateClass);
    }
    let col = eig.eigenvectors.column(idx);
    let norm = col.norm();
    let mut dir = [0.0; FEATURE_COUNT];
    for (d, v) in dir.iter_mut().zip(col.iter()) {
        *d = v / norm;
    }
    let tol = 1e-12;
    if let Some(first) = dir.iter().find(|v| v.abs() > tol) {
        if *first < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok((dir, lambda))
}

/// Dominant direction and eigenvalue of the neighbourhood covariance.
pub fn dominant_eigendirection(m: &NeighborMatrix) -> Result<(Point, f64)> {
    let first = m.rows[0];
    if m.rows.iter().all(|r| *r == first) {
        return Err(Error::DegenerateClass);
    }
    dominant_eigenpair(&m.covariance())
}

/// `medoid + step * sqrt(lambda) * direction`, without clamping.
pub fn candidate_point(m: &NeighborMatrix, step: f64) -> Result<Point> {
    let (dir, lambda) = dominant_eigendirection(m)?;
    let scale = step * lambda.sqrt();
    let mut out = *m.medoid();
    for (o, d) in out.iter_mut().zip(dir) {
        *o += scale * d;
    }
    Ok(out)
}

/// Forces a synthetic point back into the feature domain: intensity,
/// variance, ssrvr, bdd and rvr are clamped at 0 and theta to the open
/// half-turn interval.
pub fn clamp_features(p: Point) -> FeatureVector {
    let mut f = FeatureVector::from_array(p);
    for v in [&mut f.mu, &mut f.sigma2, &mut f.ssrvr, &mut f.bdd_avg, &mut f.rvr_avg] {
        *v = v.max(0.0);
    }
    let lim = std::f64::consts::FRAC_PI_2 - 1e-12;
    f.theta_avg = f.theta_avg.clamp(-lim, lim);
    f
}

pub fn generate_candidate(m: &NeighborMatrix, step: f64) -> Result<FeatureVector> {
    candidate_point(m, step).map(clamp_features)
}

/// Per-feature equal-width binning over a min-max range.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub min: Point,
    pub max: Point,
    pub bins: usize,
}

impl Binning {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut min = [f64::INFINITY; FEATURE_COUNT];
        let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
        for r in rows {
            for f in 0..FEATURE_COUNT {
                min[f] = min[f].min(r[f]);
                max[f] = max[f].max(r[f]);
            }
        }
        Self {
            min,
            max,
            bins: KL_BINS,
        }
    }

    pub fn bin(&self, feature: usize, value: f64) -> usize {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if !(hi > lo) {
            return 0;
        }
        let pos = ((value - lo) / (hi - lo) * self.bins as f64).floor();
        (pos.max(0.0) as usize).min(self.bins - 1)
    }

    pub fn histogram<'a>(&self, rows: impl IntoIterator<Item = &'a Point>) -> ClassDistribution {
        let mut counts = vec![0.0; self.bins * FEATURE_COUNT];
        for r in rows {
            for f in 0..FEATURE_COUNT {
                counts[f * self.bins + self.bin(f, r[f])] += 1.0;
            }
        }
        ClassDistribution::from_counts(self.bins, counts)
    }
}

/// Concatenation of smoothed, per-feature normalised histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub bins_per_feature: usize,
    pub values: Vec<f64>,
}

impl ClassDistribution {
    /// `counts` holds consecutive groups of `bins_per_feature` raw counts.
    pub fn from_counts(bins_per_feature: usize, mut counts: Vec<f64>) -> Self {
        for group in counts.chunks_mut(bins_per_feature) {
            group.iter_mut().for_each(|c| *c += KL_SMOOTHING);
            let total: f64 = group.iter().sum();
            group.iter_mut().for_each(|c| *c /= total);
        }
        Self {
            bins_per_feature,
            values: counts,
        }
    }
}

/// `sum p ln(p / q)` over all bins.
pub fn kl_divergence(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    if p.values.len() != q.values.len() || p.bins_per_feature != q.bins_per_feature {
        return Err(Error::MismatchedBinning(p.values.len(), q.values.len()));
    }
    Ok(p
        .values
        .iter()
        .zip(&q.values)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum())
}

/// Per-class divergence from the whole set, in label order (absent classes skipped).
pub fn class_divergences(samples: &[(Point, Label)]) -> Vec<(Label, f64)> {
    let binning = Binning::from_rows(samples.iter().map(|(p, _)| p));
    let all = binning.histogram(samples.iter().map(|(p, _)| p));
    Label::ALL
        .into_iter()
        .filter_map(|label| {
            let members: Vec<&Point> = samples
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                return None;
            }
            let hist = binning.histogram(members);
            Some((label, kl_divergence(&hist, &all).expect("shared binning")))
        })
        .collect()
}

/// Label of the maximally divergent class; ties go to the earlier label.
pub fn most_divergent_class(samples: &[(Point, Label)]) -> Option<Label> {
    let mut best: Option<(Label, f64)> = None;
    for (label, kl) in class_divergences(samples) {
        if best.is_none_or(|(_, b)| kl > b) {
            best = Some((label, kl));
        }
    }
    best.map(|(l, _)| l)
}

fn tagged(d: &Dataset) -> Vec<(Point, Label)> {
    d.samples.iter().map(|s| (s.features.to_array(), s.label)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    ArgmaxShift,
    Duplicate,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::ArgmaxShift => "argmax-shift",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardDecision {
    Accept,
    Reject(RejectReason),
}

/// Acceptance test for synthetic samples against a fixed original dataset.
#[derive(Debug, Clone)]
pub struct KlGuard {
    kappa: Option<Label>,
}

impl KlGuard {
    pub fn new(original: &Dataset) -> Self {
        Self {
            kappa: most_divergent_class(&tagged(original)),
        }
    }

    /// Most divergent class of the original dataset.
    pub fn kappa(&self) -> Option<Label> {
        self.kappa
    }

    pub fn check(&self, candidate: &LabeledSample, original: &Dataset, balanced: &Dataset) -> GuardDecision {
        let cand = candidate.features.to_array();
        let dup = |d: &Dataset| d.samples.iter().any(|s| s.features.to_array() == cand);
        if dup(original) || dup(balanced) {
            return GuardDecision::Reject(RejectReason::Duplicate);
        }
        let mut extended = tagged(balanced);
        extended.push((cand, candidate.label));
        if most_divergent_class(&extended) == self.kappa {
            GuardDecision::Accept
        } else {
            GuardDecision::Reject(RejectReason::ArgmaxShift)
        }
    }
}

pub fn kl_guard(candidate: &LabeledSample, original: &Dataset, balanced: &Dataset) -> GuardDecision {
    KlGuard::new(original).check(candidate, original, balanced)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub max_attempts: usize,
    /// Step multiplier for the first attempt of every new sample.
    pub step: f64,
    /// Range of the multiplicative jitter drawn on retries.
    pub jitter_min: f64,
    pub jitter_max: f64,
    /// Work in per-feature standardised coordinates for distances and covariance.
    pub standardize: bool,
    pub neighbours: NeighbourPool,
}

/// Members eligible as medoid neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighbourPool {
    /// Original and previously accepted synthetic members.
    All,
    #[default]
    Original,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            max_attempts: 50,
            step: 1.0,
            jitter_min: 0.25,
            jitter_max: 1.75,
            standardize: true,
            neighbours: NeighbourPool::default(),
        }
    }
}

/// One line of the acceptance log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub attempt: usize,
    pub class: Label,
    pub step: f64,
    pub decision: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BalanceOutcome {
    pub dataset: Dataset,
    pub log: Vec<AcceptanceRecord>,
    /// Classes whose neighbour matrix had to be padded with medoid repeats.
    pub padded_classes: Vec<Label>,
    pub warnings: Vec<String>,
}

impl BalanceOutcome {
    pub fn is_balanced(&self) -> bool {
        let counts = self.dataset.class_counts();
        let present: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
        present.windows(2).all(|w| w[0] == w[1])
    }
}

/// Per-feature population standard deviation; zero spreads map to 1.
fn feature_scale(rows: &[Point]) -> Point {
    let n = rows.len() as f64;
    let mut scale = [1.0; FEATURE_COUNT];
    for (f, s) in scale.iter_mut().enumerate() {
        let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 && var.is_finite() {
            *s = var.sqrt();
        }
    }
    scale
}

fn precheck(d: &Dataset) -> Result<()> {
    let found = d.classes().len();
    if found < 2 {
        return Err(Error::TooFewClasses { needed: 2, found });
    }
    Ok(())
}

/// Oversamples every minority class up to the majority count.
pub fn balance_dataset(d: &Dataset, seed: u64, cfg: &BalanceConfig) -> Result<BalanceOutcome> {
    precheck(d)?;
    if cfg.max_attempts == 0 || !(cfg.jitter_min <= cfg.jitter_max) {
        return Err(Error::InvalidParameter("balance attempts/jitter".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guard = KlGuard::new(d);
    let scale = if cfg.standardize {
        feature_scale(&d.rows())
    } else {
        [1.0; FEATURE_COUNT]
    };
    let to_scaled = |p: Point| -> Point { std::array::from_fn(|f| p[f] / scale[f]) };
    let to_raw = |p: Point| -> Point { std::array::from_fn(|f| p[f] * scale[f]) };

    let target = d.class_counts().into_iter().max().unwrap_or(0);
    let mut out = d.clone();
    let mut log = Vec::new();
    let mut padded_classes = Vec::new();
    let mut warnings = Vec::new();
    let mut exhausted = [false; 3];
    let mut synthetic = [0usize; 3];
    let mut attempt = 0usize;

    loop {
        let mut progressed = false;
        for label in d.classes() {
            if exhausted[label.index()] || out.count(label) >= target {
                continue;
            }
            let members: Vec<Point> = out.class_rows(label).into_iter().map(to_scaled).collect();
            let medoid = class_medoid(&members)?;
            let (matrix, padded) = match cfg.neighbours {
                NeighbourPool::All => neighbor_matrix_padded(&members, medoid),
                NeighbourPool::Original => {
                    let n_orig = d.count(label);
                    let mut pool = vec![members[medoid]];
                    pool.extend((0..n_orig).filter(|&i| i != medoid).map(|i| members[i]));
                    neighbor_matrix_padded(&pool, 0)
                }
            };
            if padded && !padded_classes.contains(&label) {
                padded_classes.push(label);
                warnings.push(format!(
                    "class {label} has {} members; neighbour matrix padded with medoid",
                    members.len()
                ));
            }
            let (dir, lambda) = match dominant_eigendirection(&matrix) {
                Ok(pair) => pair,
                Err(Error::DegenerateClass) => {
                    exhausted[label.index()] = true;
                    warnings.push(format!("class {label}: degenerate neighbourhood, balancing stopped"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut accepted = false;
            for k in 0..cfg.max_attempts {
                attempt += 1;
                let step = if k == 0 {
                    cfg.step
                } else {
                    cfg.step * rng.random_range(cfg.jitter_min..=cfg.jitter_max)
                };
                let reach = step * lambda.sqrt();
                let point: Point = std::array::from_fn(|f| matrix.medoid()[f] + reach * dir[f]);
                let candidate = LabeledSample {
                    features: clamp_features(to_raw(point)),
                    label,
                    source_id: format!("synthetic-{label}-{}", synthetic[label.index()]),
                };
                let decision = guard.check(&candidate, d, &out);
                let (decision_str, reason) = match decision {
                    GuardDecision::Accept => ("accept", ""),
                    GuardDecision::Reject(r) => ("reject", r.as_str()),
                };
                log.push(AcceptanceRecord {
                    attempt,
                    class: label,
                    step,
                    decision: decision_str.into(),
                    reason: reason.into(),
                });
                if decision == GuardDecision::Accept {
                    synthetic[label.index()] += 1;
                    out.push(candidate);
                    accepted = true;
                    break;
                }
            }
            if accepted {
                progressed = true;
            } else {
                exhausted[label.index()] = true;
                warnings.push(format!(
                    "class {label}: {} attempts exhausted at {} of {target} samples",
                    cfg.max_attempts,
                    out.count(label)
                ));
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(BalanceOutcome {
        dataset: out,
        log,
        padded_classes,
        warnings,
    })
}

/// Re-runs the guard for every appended sample against the prefix that
/// preceded it. Returns the decision for each synthetic row.
pub fn replay_acceptance(original: &Dataset, balanced: &Dataset) -> Result<Vec<GuardDecision>> {
    let n = original.len();
    if balanced.len() < n || balanced.samples[..n] != original.samples[..] {
        return Err(Error::InvalidParameter("balanced dataset does not start with the original".into()));
    }
    let guard = KlGuard::new(original);
    let mut prefix = original.clone();
    let mut decisions = Vec::with_capacity(balanced.len() - n);
    for s in &balanced.samples[n..] {
        decisions.push(guard.check(s, original, &prefix));
        prefix.push(s.clone());
    }
    Ok(decisions)
}

/// Classic SMOTE: interpolate between a random minority sample and one of its
/// `k` nearest class neighbours until every class reaches the majority count.
pub fn smote_baseline(d: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    precheck(d)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = feature_scale(&d.rows());
    let target = d.class_counts().into_iter().max().unwrap_or(0);
    let mut out = d.clone();
    for label in d.classes() {
        let count = d.count(label);
        if count >= target {
            continue;
        }
        if count < k + 1 {
            return Err(Error::ClassTooSmall {
                label: label.to_string(),
                count,
                needed: k + 1,
            });
        }
        let raw = d.class_rows(label);
        let scaled: Vec<Point> = raw
            .iter()
            .map(|p| std::array::from_fn(|f| p[f] / scale[f]))
            .collect();
        let neighbours: Vec<Vec<usize>> = (0..raw.len()).map(|i| nearest(&scaled, i, k)).collect();
        for n in 0..target - count {
            let i = rng.random_range(0..raw.len());
            let j = neighbours[i][rng.random_range(0..k)];
            let gap: f64 = rng.random();
            let p: Point = std::array::from_fn(|f| raw[i][f] + gap * (raw[j][f] - raw[i][f]));
            out.push(LabeledSample {
                features: FeatureVector::from_array(p),
                label,
                source_id: format!("smote-{label}-{n}"),
            });
        }
    }
    Ok(out)
}
