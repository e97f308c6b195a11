//! Random forest and gradient boosting over the six-feature rows, plus the
//! evaluation metrics used in the classification reports.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{Dataset, Point};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{FeatureVector, Label, FEATURE_COUNT};

pub const MODEL_FORMAT: &str = "fpq-ensemble";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class probabilities for classification trees, a single value for regression trees.
    Leaf { value: Vec<f64> },
}

/// Axis-aligned binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(&self, x: &Point) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// First index of the maximum; earlier entries win ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

enum Target<'a> {
    Classes { y: &'a [usize], n_classes: usize },
    Values { y: &'a [f64] },
}

struct TreeBuilder<'a, L: Fn(&[usize]) -> Vec<f64>> {
    x: &'a [Point],
    target: Target<'a>,
    max_depth: usize,
    min_leaf: usize,
    features_per_split: usize,
    leaf_value: L,
    nodes: Vec<Node>,
}

impl<L: Fn(&[usize]) -> Vec<f64>> TreeBuilder<'_, L> {
    fn impurity(&self, idx: &[usize]) -> f64 {
        match &self.target {
            Target::Classes { y, n_classes } => {
                let mut counts = vec![0usize; *n_classes];
                idx.iter().for_each(|&i| counts[y[i]] += 1);
                gini(&counts, idx.len())
            }
            Target::Values { y } => {
                let n = idx.len() as f64;
                let s: f64 = idx.iter().map(|&i| y[i]).sum();
                let q: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
                q - s * s / n
            }
        }
    }

    /// Best `(score, feature, threshold)` where score is the summed child cost.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut scan = SplitScan::new(&self.target, &sorted);
            for k in 0..n - 1 {
                scan.move_left(sorted[k]);
                let (lo, hi) = (self.x[sorted[k]][f], self.x[sorted[k + 1]][f]);
                let left_n = k + 1;
                if lo == hi || left_n < self.min_leaf || n - left_n < self.min_leaf {
                    continue;
                }
                let score = scan.cost(left_n, n - left_n);
                if best.is_none_or(|b| score < b.0 - 1e-12) {
                    best = Some((score, f, lo));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: Vec::new() });
        let parent = self.impurity(idx);
        let can_split = depth < self.max_depth && idx.len() >= 2 * self.min_leaf && parent > 1e-12;
        let mut features: Vec<usize> = (0..FEATURE_COUNT).collect();
        if self.features_per_split < FEATURE_COUNT {
            // features constant within the node do not count towards the draw
            features.shuffle(rng);
            features.retain(|&f| idx.iter().any(|&i| self.x[i][f] != self.x[idx[0]][f]));
            features.truncate(self.features_per_split.max(1));
        }
        let split = if can_split {
            self.best_split(idx, &features)
                .filter(|(score, _, _)| *score < parent - 1e-12)
        } else {
            None
        };
        match split {
            Some((_, feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.build(&l, depth + 1, rng);
                let right = self.build(&r, depth + 1, rng);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                self.nodes[id] = Node::Leaf {
                    value: (self.leaf_value)(idx),
                };
            }
        }
        id
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    n * (1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Incremental left/right statistics while sweeping a sorted index list.
enum SplitScan<'a> {
    Classes {
        y: &'a [usize],
        left: Vec<usize>,
        right: Vec<usize>,
    },
    Values {
        y: &'a [f64],
        left: (f64, f64),
        right: (f64, f64),
    },
}

impl<'a> SplitScan<'a> {
    fn new(target: &Target<'a>, idx: &[usize]) -> Self {
        match target {
            Target::Classes { y, n_classes } => {
                let mut right = vec![0; *n_classes];
                idx.iter().for_each(|&i| right[y[i]] += 1);
                SplitScan::Classes {
                    y,
                    left: vec![0; *n_classes],
                    right,
                }
            }
            Target::Values { y } => {
                let s = idx.iter().map(|&i| y[i]).sum();
                let q = idx.iter().map(|&i| y[i] * y[i]).sum();
                SplitScan::Values {
                    y,
                    left: (0.0, 0.0),
                    right: (s, q),
                }
            }
        }
    }

    fn move_left(&mut self, i: usize) {
        match self {
            SplitScan::Classes { y, left, right } => {
                left[y[i]] += 1;
                right[y[i]] -= 1;
            }
            SplitScan::Values { y, left, right } => {
                let v = y[i];
                left.0 += v;
                left.1 += v * v;
                right.0 -= v;
                right.1 -= v * v;
            }
        }
    }

    fn cost(&self, nl: usize, nr: usize) -> f64 {
        match self {
            SplitScan::Classes { left, right, .. } => gini(left, nl) + gini(right, nr),
            SplitScan::Values { left, right, .. } => {
                (left.1 - left.0 * left.0 / nl as f64) + (right.1 - right.0 * right.0 / nr as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RandomForest,
    GradientBoost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            min_samples_leaf: 1,
            // ceil(sqrt(6))
            features_per_split: 3,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            subsample: 1.0,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "body", rename_all = "snake_case")]
pub enum ModelBody {
    Forest {
        trees: Vec<DecisionTree>,
    },
    Boosted {
        init: Vec<f64>,
        learning_rate: f64,
        /// One tree per class per round.
        rounds: Vec<Vec<DecisionTree>>,
    },
}

/// A trained, immutable tree ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: LearnerKind,
    pub classes: Vec<Label>,
    pub seed: u64,
    pub validation_accuracy: Option<f64>,
    pub body: ModelBody,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: EnsembleModel,
}

impl EnsembleModel {
    pub fn tree_count(&self) -> usize {
        match &self.body {
            ModelBody::Forest { trees } => trees.len(),
            ModelBody::Boosted { rounds, .. } => rounds.iter().map(Vec::len).sum(),
        }
    }

    /// Per-class scores: vote counts for a forest, raw additive scores for boosting.
    pub fn scores(&self, x: &Point) -> Vec<f64> {
        match &self.body {
            ModelBody::Forest { trees } => {
                let mut votes = vec![0.0; self.classes.len()];
                for t in trees {
                    votes[argmax(t.leaf(x))] += 1.0;
                }
                votes
            }
            ModelBody::Boosted {
                init,
                learning_rate,
                rounds,
            } => {
                let mut f = init.clone();
                for round in rounds {
                    for (k, t) in round.iter().enumerate() {
                        f[k] += learning_rate * t.leaf(x)[0];
                    }
                }
                f
            }
        }
    }

    /// Class with the highest score; ties go to the earlier class in `classes`.
    pub fn predict_point(&self, x: &Point) -> Label {
        self.classes[argmax(&self.scores(x))]
    }

    pub fn predict_batch(&self, rows: &[Point], exec: Execution) -> Vec<Label> {
        exec.map(rows, |x| self.predict_point(x))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn predict(model: &EnsembleModel, x: &FeatureVector) -> Label {
    model.predict_point(&x.to_array())
}

fn training_view(d: &Dataset) -> Result<(Vec<Label>, Vec<Point>, Vec<usize>)> {
    let classes = d.classes();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            found: classes.len(),
        });
    }
    if d.len() < 10 {
        return Err(Error::TooFewSamples {
            needed: 10,
            found: d.len(),
        });
    }
    let x = d.rows();
    let y = d
        .samples()
        .iter()
        .map(|s| classes.iter().position(|&c| c == s.label).unwrap())
        .collect();
    Ok((classes, x, y))
}

/// Bootstrap-sampled Gini trees with per-split feature subsampling and hard voting.
pub fn train_random_forest(d: &Dataset, params: &ForestParams) -> Result<EnsembleModel> {
    if params.trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    let (classes, x, y) = training_view(d)?;
    let n_classes = classes.len();
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let tree_seeds: Vec<u64> = (0..params.trees).map(|_| master.random()).collect();
    let trees = params.execution.map(&tree_seeds, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = x.len();
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let y = &y;
        let mut builder = TreeBuilder {
            x: &x,
            target: Target::Classes { y, n_classes },
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf.max(1),
            features_per_split: params.features_per_split,
            leaf_value: |idx: &[usize]| {
                let mut p = vec![0.0; n_classes];
                idx.iter().for_each(|&i| p[y[i]] += 1.0);
                let total = idx.len() as f64;
                p.iter_mut().for_each(|v| *v /= total);
                p
            },
            nodes: Vec::new(),
        };
        builder.build(&sample, 0, &mut rng);
        DecisionTree { nodes: builder.nodes }
    });
    Ok(EnsembleModel {
        kind: LearnerKind::RandomForest,
        classes,
        seed: params.seed,
        validation_accuracy: None,
        body: ModelBody::Forest { trees },
    })
}

fn softmax(f: &[f64]) -> Vec<f64> {
    let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Multiclass gradient boosting on softmax log-loss: each round fits one
/// squared-error regression tree per class to the negative gradient, with
/// Newton-step leaf values.
pub fn train_gradient_boost(d: &Dataset, params: &BoostParams) -> Result<EnsembleModel> {
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::InvalidParameter("subsample must be in (0, 1]".into()));
    }
    let (classes, x, y) = training_view(d)?;
    let k = classes.len();
    let n = x.len();
    let mut prior = vec![0.0; k];
    y.iter().for_each(|&c| prior[c] += 1.0);
    let init: Vec<f64> = prior.iter().map(|c| (c / n as f64).ln()).collect();
    let mut scores: Vec<Vec<f64>> = vec![init.clone(); n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut rounds = Vec::with_capacity(params.rounds);
    let factor = (k as f64 - 1.0) / k as f64;

    for _ in 0..params.rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|f| softmax(f)).collect();
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(((n as f64 * params.subsample).ceil() as usize).max(1));
            all.sort_unstable();
            all
        } else {
            (0..n).collect()
        };
        let round: Vec<DecisionTree> = params.execution.map_range(k, |c| {
            let residual: Vec<f64> = (0..n)
                .map(|i| if y[i] == c { 1.0 } else { 0.0 } - probs[i][c])
                .collect();
            let hess: Vec<f64> = (0..n).map(|i| probs[i][c] * (1.0 - probs[i][c])).collect();
            let mut builder = TreeBuilder {
                x: &x,
                target: Target::Values { y: &residual },
                max_depth: params.max_depth,
                min_leaf: params.min_samples_leaf.max(1),
                features_per_split: FEATURE_COUNT,
                leaf_value: |idx: &[usize]| {
                    let num: f64 = idx.iter().map(|&i| residual[i]).sum();
                    let den: f64 = idx.iter().map(|&i| hess[i]).sum();
                    vec![if den.abs() < 1e-12 { 0.0 } else { factor * num / den }]
                },
                nodes: Vec::new(),
            };
            // regression trees use every feature, so the rng is never consulted
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            builder.build(&rows, 0, &mut unused);
            DecisionTree { nodes: builder.nodes }
        });
        for (i, f) in scores.iter_mut().enumerate() {
            for (c, t) in round.iter().enumerate() {
                f[c] += params.learning_rate * t.leaf(&x[i])[0];
            }
        }
        rounds.push(round);
    }
    Ok(EnsembleModel {
        kind: LearnerKind::GradientBoost,
        classes,
        seed: params.seed,
        validation_accuracy: None,
        body: ModelBody::Boosted {
            init,
            learning_rate: params.learning_rate,
            rounds,
        },
    })
}

/// Accuracy and macro-averaged precision/recall/F1. Rows of `confusion` are
/// true labels, columns predictions, both indexed by [`Label::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: [[usize; 3]; 3],
    /// Labels averaged over: those occurring in the truth or the predictions.
    pub labels: Vec<Label>,
}

impl Metrics {
    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Metrics> {
        if truth.is_empty() {
            return Err(Error::Empty("test set"));
        }
        if truth.len() != predicted.len() {
            return Err(Error::MismatchedSamples(truth.len(), predicted.len()));
        }
        let mut confusion = [[0usize; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: [[usize; 3]; 3]) -> Metrics {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
        let labels: Vec<Label> = Label::ALL
            .into_iter()
            .filter(|l| {
                let i = l.index();
                (0..3).any(|j| confusion[i][j] > 0 || confusion[j][i] > 0)
            })
            .collect();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for l in &labels {
            let i = l.index();
            let tp = confusion[i][i];
            let predicted: usize = (0..3).map(|j| confusion[j][i]).sum();
            let actual: usize = confusion[i].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let m = labels.len().max(1) as f64;
        Metrics {
            accuracy: ratio(correct, total),
            precision: p_sum / m,
            recall: r_sum / m,
            f1: f_sum / m,
            confusion,
            labels,
        }
    }
}

pub fn evaluate(model: &EnsembleModel, test: &Dataset) -> Result<Metrics> {
    let truth: Vec<Label> = test.samples().iter().map(|s| s.label).collect();
    let predicted = model.predict_batch(&test.rows(), Execution::Parallel);
    Metrics::from_predictions(&truth, &predicted)
}
