//! Classifiers and stratified k-fold cross-validation.
//!
//! Four model families share one [`ClassifierSpec`] front end: k-nearest
//! neighbours, multinomial logistic regression, one-vs-rest linear SVM and a
//! random forest of Gini CART trees. Every routine is deterministic given
//! its data and seed; folds and trees run in parallel with per-unit RNG
//! streams, and results are collected in index order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labelled examples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    n_features: usize,
    /// Class index per example, into `classes`.
    pub y: Vec<usize>,
    pub classes: Vec<String>,
    /// Subject id per example, for subject-wise folding.
    pub groups: Option<Vec<String>>,
}

impl Dataset {
    /// `rows` are examples; `classes` names the values used in `y`.
    pub fn new(
        rows: Vec<Vec<f64>>,
        y: Vec<usize>,
        classes: Vec<String>,
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || n_features == 0 {
            return Err(Error::EmptyInput(
                "dataset has no examples or features".into(),
            ));
        }
        if y.len() != rows.len() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} examples",
                y.len(),
                rows.len()
            )));
        }
        if let Some(g) = &groups {
            if g.len() != rows.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} subject ids for {} examples",
                    g.len(),
                    rows.len()
                )));
            }
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes.len()) {
            return Err(Error::InvalidInput(format!(
                "label {bad} has no class name"
            )));
        }
        let mut x = Vec::with_capacity(rows.len() * n_features);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_features {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} features, expected {n_features}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("example {i}")));
            }
            x.extend_from_slice(r);
        }
        Ok(Self {
            x,
            n_features,
            y,
            classes,
            groups,
        })
    }

    /// Builds class indices from string labels; classes are sorted.
    pub fn from_labels(
        rows: Vec<Vec<f64>>,
        labels: &[String],
        groups: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut classes: Vec<String> = labels.to_vec();
        classes.sort();
        classes.dedup();
        let y = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label present"))
            .collect();
        Self::new(rows, y, classes, groups)
    }

    pub fn n_examples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Examples `idx`, in that order, sharing the class list.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut x = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Self {
            x,
            n_features: self.n_features,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes.clone(),
            groups: self
                .groups
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
        }
    }

    fn present_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }
}

/// A fitted model.
pub trait Classifier: Send + Sync {
    fn predict_one(&self, x: &[f64]) -> usize;

    fn predict(&self, ds: &Dataset) -> Vec<usize> {
        (0..ds.n_examples())
            .map(|i| self.predict_one(ds.row(i)))
            .collect()
    }
}

/// Fraction of examples whose prediction matches the label.
pub fn accuracy(model: &dyn Classifier, ds: &Dataset) -> f64 {
    let hits = model
        .predict(ds)
        .iter()
        .zip(&ds.y)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / ds.n_examples() as f64
}

/// Model family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Knn {
        k: usize,
    },
    LogReg {
        l2: f64,
        max_iter: usize,
        tol: f64,
    },
    LinearSvm {
        c: f64,
        max_iter: usize,
    },
    RandomForest {
        n_trees: usize,
        /// Features tried per split; `None` means `⌊√p⌋`.
        max_features: Option<usize>,
        min_leaf: usize,
        bootstrap: bool,
    },
}

impl ClassifierSpec {
    pub fn knn() -> Self {
        Self::Knn { k: 5 }
    }

    pub fn logreg() -> Self {
        Self::LogReg {
            l2: 1.0,
            max_iter: 500,
            tol: 1e-6,
        }
    }

    pub fn linear_svm() -> Self {
        Self::LinearSvm {
            c: 1.0,
            max_iter: 1000,
        }
    }

    pub fn random_forest() -> Self {
        Self::RandomForest {
            n_trees: 100,
            max_features: None,
            min_leaf: 1,
            bootstrap: true,
        }
    }

    /// The four default-parameter models.
    pub fn defaults() -> [Self; 4] {
        [
            Self::knn(),
            Self::logreg(),
            Self::linear_svm(),
            Self::random_forest(),
        ]
    }

    /// Short display name, as used in result tables.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Knn { .. } => "kNN",
            Self::LogReg { .. } => "LR",
            Self::LinearSvm { .. } => "Linear SVM",
            Self::RandomForest { .. } => "RF",
        }
    }

    /// Parses a name accepted on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        match name
            .to_ascii_lowercase()
            .replace(['-', '_', ' '], "")
            .as_str()
        {
            "knn" => Some(Self::knn()),
            "lr" | "logreg" => Some(Self::logreg()),
            "svm" | "linearsvm" => Some(Self::linear_svm()),
            "rf" | "randomforest" => Some(Self::random_forest()),
            _ => None,
        }
    }

    pub fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Classifier>> {
        if train.present_classes() < 2 {
            return Err(Error::TooFewClasses);
        }
        Ok(match *self {
            Self::Knn { k } => Box::new(train_knn(train, k)?),
            Self::LogReg { l2, max_iter, tol } => Box::new(train_logreg(train, l2, max_iter, tol)?),
            Self::LinearSvm { c, max_iter } => Box::new(train_linear_svm(train, c, max_iter)?),
            Self::RandomForest {
                n_trees,
                max_features,
                min_leaf,
                bootstrap,
            } => Box::new(train_random_forest(
                train,
                &ForestParams {
                    n_trees,
                    max_features,
                    min_leaf,
                    bootstrap,
                },
                seed,
            )?),
        })
    }
}

// ---------------------------------------------------------------------------
// k-nearest neighbours

pub struct Knn {
    train: Dataset,
    k: usize,
}

pub fn train_knn(train: &Dataset, k: usize) -> Result<Knn> {
    if k == 0 || k > train.n_examples() {
        return Err(Error::KTooLarge {
            k,
            n_train: train.n_examples(),
        });
    }
    Ok(Knn {
        train: train.clone(),
        k,
    })
}

impl Classifier for Knn {
    /// Majority vote of the `k` nearest training rows; ties go to the class
    /// with the smallest summed distance, then the lowest class index.
    fn predict_one(&self, x: &[f64]) -> usize {
        let mut d: Vec<(f64, usize)> = (0..self.train.n_examples())
            .map(|i| {
                let r = self.train.row(i);
                (
                    r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                    i,
                )
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        d.select_nth_unstable_by(self.k - 1, cmp);
        let nc = self.train.n_classes();
        let mut votes = vec![0usize; nc];
        let mut dist = vec![0.0; nc];
        for &(d2, i) in &d[..self.k] {
            let c = self.train.y[i];
            votes[c] += 1;
            dist[c] += d2.sqrt();
        }
        (0..nc)
            .max_by(|&a, &b| {
                votes[a]
                    .cmp(&votes[b])
                    .then(dist[b].total_cmp(&dist[a]))
                    .then(b.cmp(&a))
            })
            .expect("at least one class")
    }
}

// ---------------------------------------------------------------------------
// Shared standardisation for the linear models

#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(ds: &Dataset) -> Self {
        let p = ds.n_features();
        let n = ds.n_examples() as f64;
        let mut mean = vec![0.0; p];
        for i in 0..ds.n_examples() {
            mean.iter_mut().zip(ds.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for i in 0..ds.n_examples() {
            for ((s, v), m) in var.iter_mut().zip(ds.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn apply_all(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        (0..ds.n_examples())
            .map(|i| self.apply(ds.row(i)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-class linear scores `W x + b` on standardised input.
#[derive(Debug, Clone)]
struct LinearScores {
    std: Standardizer,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl LinearScores {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.std.apply(x);
        self.w
            .iter()
            .zip(&self.b)
            .map(|(w, b)| dot(w, &z) + b)
            .collect()
    }

    fn argmax(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        // first maximum, so ties go to the lowest class
        (0..s.len()).fold(0, |best, c| if s[c] > s[best] { c } else { best })
    }
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression

pub struct LogReg {
    model: LinearScores,
}

impl LogReg {
    /// Class probabilities for one example.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.model.scores(x))
    }
}

impl Classifier for LogReg {
    fn predict_one(&self, x: &[f64]) -> usize {
        self.model.argmax(x)
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Mean cross-entropy plus `l2 / (2n) · ‖W‖²` (the bias is not penalised),
/// and its gradient.
fn logreg_objective(
    z: &[Vec<f64>],
    y: &[usize],
    w: &[Vec<f64>],
    b: &[f64],
    l2: f64,
    grad: Option<(&mut [Vec<f64>], &mut [f64])>,
) -> f64 {
    let n = z.len() as f64;
    let nc = w.len();
    let mut loss = 0.0;
    let mut gw_acc = vec![vec![0.0; z[0].len()]; nc];
    let mut gb_acc = vec![0.0; nc];
    for (zi, &yi) in z.iter().zip(y) {
        let s: Vec<f64> = w.iter().zip(b).map(|(wc, bc)| dot(wc, zi) + bc).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - s[yi];
        if grad.is_some() {
            for c in 0..nc {
                let r = (s[c] - lse).exp() - f64::from(c == yi);
                gb_acc[c] += r;
                gw_acc[c].iter_mut().zip(zi).for_each(|(g, v)| *g += r * v);
            }
        }
    }
    let penalty: f64 = w.iter().flatten().map(|v| v * v).sum::<f64>() * l2 / (2.0 * n);
    if let Some((gw, gb)) = grad {
        for c in 0..nc {
            gb[c] = gb_acc[c] / n;
            for ((g, acc), wv) in gw[c].iter_mut().zip(&gw_acc[c]).zip(&w[c]) {
                *g = acc / n + l2 * wv / n;
            }
        }
    }
    loss / n + penalty
}

/// Softmax regression by gradient descent with backtracking line search on
/// standardised features.
pub fn train_logreg(train: &Dataset, l2: f64, max_iter: usize, tol: f64) -> Result<LogReg> {
    if train.present_classes() < 2 {
        return Err(Error::TooFewClasses);
    }
    if l2.is_nan() || l2 < 0.0 {
        return Err(Error::range("l2", "must be >= 0"));
    }
    let std = Standardizer::fit(train);
    let z = std.apply_all(train);
    let (nc, p) = (train.n_classes(), train.n_features());
    let mut w = vec![vec![0.0; p]; nc];
    let mut b = vec![0.0; nc];
    let mut gw = vec![vec![0.0; p]; nc];
    let mut gb = vec![0.0; nc];
    let mut loss = logreg_objective(&z, &train.y, &w, &b, l2, Some((&mut gw, &mut gb)));
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..max_iter {
        let g2: f64 = gw.iter().flatten().chain(&gb).map(|v| v * v).sum();
        if g2 == 0.0 {
            converged = true;
            break;
        }
        // Armijo backtracking from a slightly enlarged previous step
        step *= 2.0;
        let (nw, nb, nl) = loop {
            let nw: Vec<Vec<f64>> = w
                .iter()
                .zip(&gw)
                .map(|(wc, gc)| wc.iter().zip(gc).map(|(a, g)| a - step * g).collect())
                .collect();
            let nb: Vec<f64> = b.iter().zip(&gb).map(|(a, g)| a - step * g).collect();
            let nl = logreg_objective(&z, &train.y, &nw, &nb, l2, None);
            if nl <= loss - 0.5 * step * g2 || step < 1e-12 {
                break (nw, nb, nl);
            }
            step *= 0.5;
        };
        let change = loss - nl;
        w = nw;
        b = nb;
        loss = logreg_objective(&z, &train.y, &w, &b, l2, Some((&mut gw, &mut gb)));
        if change.abs() < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic regression did not converge in {max_iter} iterations");
    }
    Ok(LogReg {
        model: LinearScores { std, w, b },
    })
}

// ---------------------------------------------------------------------------
// Linear SVM

pub struct LinearSvm {
    model: LinearScores,
}

impl LinearSvm {
    /// One-vs-rest decision values.
    pub fn decision_function(&self, x: &[f64]) -> Vec<f64> {
        self.model.scores(x)
    }
}

impl Classifier for LinearSvm {
    fn predict_one(&self, x: &[f64]) -> usize {
        self.model.argmax(x)
    }
}

/// One-vs-rest hinge-loss models on standardised features.
///
/// Each binary problem minimises `λ/2 ‖w‖² + mean hinge` with
/// `λ = 1 / (C n)` by full-batch subgradient steps `1 / (λ t)` (Pegasos
/// schedule, with projection onto the ball of radius `1/√λ`). The returned
/// weights average the iterates of the second half of the run.
pub fn train_linear_svm(train: &Dataset, c: f64, max_iter: usize) -> Result<LinearSvm> {
    if train.present_classes() < 2 {
        return Err(Error::TooFewClasses);
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::range("c", "must be > 0"));
    }
    let std = Standardizer::fit(train);
    let z = std.apply_all(train);
    let n = z.len();
    let lambda = 1.0 / (c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let max_iter = max_iter.max(2);
    let nc = train.n_classes();
    let fitted: Vec<(Vec<f64>, f64)> = (0..nc)
        .into_par_iter()
        .map(|class| {
            let sign: Vec<f64> = train
                .y
                .iter()
                .map(|&y| if y == class { 1.0 } else { -1.0 })
                .collect();
            // the bias rides along as an extra, lightly shrunk coordinate
            let p = z[0].len();
            let mut w = vec![0.0; p + 1];
            let mut avg = vec![0.0; p + 1];
            let mut n_avg = 0usize;
            let mut g = vec![0.0; p + 1];
            for t in 1..=max_iter {
                g.iter_mut().for_each(|v| *v = 0.0);
                for (zi, &s) in z.iter().zip(&sign) {
                    let margin = s * (dot(&w[..p], zi) + w[p]);
                    if margin < 1.0 {
                        g[..p].iter_mut().zip(zi).for_each(|(gv, v)| *gv -= s * v);
                        g[p] -= s;
                    }
                }
                let eta = 1.0 / (lambda * t as f64);
                let inv_n = 1.0 / n as f64;
                for (wv, gv) in w.iter_mut().zip(&g) {
                    *wv = (1.0 - eta * lambda) * *wv - eta * gv * inv_n;
                }
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > radius {
                    w.iter_mut().for_each(|v| *v *= radius / norm);
                }
                if t > max_iter / 2 {
                    avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
                    n_avg += 1;
                }
            }
            avg.iter_mut().for_each(|a| *a /= n_avg as f64);
            let bias = avg.pop().expect("bias coordinate");
            (avg, bias)
        })
        .collect();
    let (w, b) = fitted.into_iter().unzip();
    Ok(LinearSvm {
        model: LinearScores { std, w, b },
    })
}

// ---------------------------------------------------------------------------
// Random forest

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART tree stored as a flat node list; node 0 is the root.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_one(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

pub struct RandomForest {
    trees: Vec<Tree>,
    n_classes: usize,
}

impl RandomForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

impl Classifier for RandomForest {
    fn predict_one(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_one(x)] += 1;
        }
        majority(&votes)
    }
}

/// Index of the largest count, lowest index on ties.
fn majority(counts: &[usize]) -> usize {
    (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best })
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct TreeBuilder<'a> {
    ds: &'a Dataset,
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let mut counts = vec![0usize; self.ds.n_classes()];
        for &i in idx {
            counts[self.ds.y[i]] += 1;
        }
        self.nodes.push(Node::Leaf(majority(&counts)));
        self.nodes.len() - 1
    }

    /// Best Gini split over a random feature order. At least `mtry` features
    /// are examined, and the search continues past `mtry` until some
    /// feature admits a valid split.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let nc = self.ds.n_classes();
        let n = idx.len();
        let mut features: Vec<usize> = (0..self.ds.n_features()).collect();
        features.shuffle(rng);
        let mut total = vec![0usize; nc];
        for &i in idx {
            total[self.ds.y[i]] += 1;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut vals: Vec<(f64, usize)> = Vec::with_capacity(n);
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.ds.row(i)[f], self.ds.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; nc];
            for k in 0..n - 1 {
                left[vals[k].1] += 1;
                let n_left = k + 1;
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                if n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = n_left as f64 * gini(&left, n_left)
                    + (n - n_left) as f64 * gini(&right, n - n_left);
                if best.is_none_or(|(s, _, _)| score < s - 1e-12) {
                    let mut thr = 0.5 * (vals[k].0 + vals[k + 1].0);
                    // adjacent floats: the midpoint may round up onto the right value
                    if thr >= vals[k + 1].0 {
                        thr = vals[k].0;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
        let first = self.ds.y[idx[0]];
        let pure = idx.iter().all(|&i| self.ds.y[i] == first);
        if pure || idx.len() < 2 * self.min_leaf {
            return self.leaf(idx);
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return self.leaf(idx);
        };
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0));
        let ds = self.ds;
        let mid = partition(idx, |&i| ds.row(i)[feature] <= threshold);
        debug_assert!(mid > 0 && mid < idx.len(), "split leaves a side empty");
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Stable in-place partition; returns the count satisfying `pred`.
fn partition<T: Copy>(v: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let (yes, no): (Vec<T>, Vec<T>) = v.iter().partition(|x| pred(x));
    let k = yes.len();
    v[..k].copy_from_slice(&yes);
    v[k..].copy_from_slice(&no);
    k
}

/// Grows one Gini CART tree on rows `idx` of `ds`.
pub fn grow_tree(
    ds: &Dataset,
    idx: &[usize],
    mtry: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut b = TreeBuilder {
        ds,
        mtry: mtry.max(1),
        min_leaf: min_leaf.max(1),
        nodes: Vec::new(),
    };
    let mut idx = idx.to_vec();
    b.grow(&mut idx, rng);
    Tree { nodes: b.nodes }
}

/// Bagged CART trees. Tree `t` draws from ChaCha stream `t` of `seed`.
pub fn train_random_forest(
    train: &Dataset,
    params: &ForestParams,
    seed: u64,
) -> Result<RandomForest> {
    if params.n_trees == 0 {
        return Err(Error::range("n_trees", "must be >= 1"));
    }
    let n = train.n_examples();
    let p = train.n_features();
    let mtry = params
        .max_features
        .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
        .min(p);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(train, &idx, mtry, params.min_leaf, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        trees,
        n_classes: train.n_classes(),
    })
}

// ---------------------------------------------------------------------------
// Cross-validation

/// How examples are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldMode {
    /// Per-class shuffle, round-robin over folds.
    #[default]
    Stratified,
    /// Whole subjects per fold, subjects stratified by their majority class.
    BySubject,
}

/// Fold index per example.
pub fn assign_folds(ds: &Dataset, n_folds: usize, seed: u64, mode: FoldMode) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::range("n_folds", "must be >= 2"));
    }
    if ds.present_classes() < 2 {
        return Err(Error::TooFewClasses);
    }
    let counts = ds.class_counts();
    if let Some((c, &k)) = counts
        .iter()
        .enumerate()
        .find(|(_, &k)| k > 0 && k < n_folds)
    {
        return Err(Error::TooFewExamples(format!(
            "class {} has {k} examples for {n_folds} folds",
            ds.classes[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; ds.n_examples()];
    match mode {
        FoldMode::Stratified => {
            let mut counter = 0;
            for c in 0..ds.n_classes() {
                let mut members: Vec<usize> =
                    (0..ds.n_examples()).filter(|&i| ds.y[i] == c).collect();
                members.shuffle(&mut rng);
                for i in members {
                    fold[i] = counter % n_folds;
                    counter += 1;
                }
            }
        }
        FoldMode::BySubject => {
            let groups = ds
                .groups
                .as_ref()
                .ok_or_else(|| Error::MissingInput("subject ids for subject-wise folds".into()))?;
            let mut subjects: Vec<&String> = groups.iter().collect();
            subjects.sort();
            subjects.dedup();
            if subjects.len() < n_folds {
                return Err(Error::TooFewExamples(format!(
                    "{} subjects for {n_folds} folds",
                    subjects.len()
                )));
            }
            let subject_class: Vec<usize> = subjects
                .iter()
                .map(|s| {
                    let mut votes = vec![0usize; ds.n_classes()];
                    for (g, &y) in groups.iter().zip(&ds.y) {
                        if g == *s {
                            votes[y] += 1;
                        }
                    }
                    majority(&votes)
                })
                .collect();
            let mut subject_fold = vec![0; subjects.len()];
            let mut counter = 0;
            for c in 0..ds.n_classes() {
                let mut members: Vec<usize> = (0..subjects.len())
                    .filter(|&s| subject_class[s] == c)
                    .collect();
                members.shuffle(&mut rng);
                for s in members {
                    subject_fold[s] = counter % n_folds;
                    counter += 1;
                }
            }
            for (i, g) in groups.iter().enumerate() {
                let s = subjects.binary_search(&g).expect("subject listed");
                fold[i] = subject_fold[s];
            }
        }
    }
    Ok(fold)
}

/// Cross-validated accuracy of one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub stimulus: Option<String>,
    pub rho_th: Option<f64>,
    pub classifier: String,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

impl CVResult {
    /// Table line such as `A → RF 90.75` (accuracy in percent).
    pub fn table_row(&self) -> String {
        format!(
            "{} → {} {:.2}",
            self.stimulus.as_deref().unwrap_or("-"),
            self.classifier,
            100.0 * self.mean_accuracy
        )
    }
}

/// Trains on `k - 1` folds and scores the held-out one, for every fold.
pub fn kfold_cv(
    ds: &Dataset,
    clf: &ClassifierSpec,
    n_folds: usize,
    seed: u64,
    mode: FoldMode,
) -> Result<CVResult> {
    let fold = assign_folds(ds, n_folds, seed, mode)?;
    let fold_accuracies = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..ds.n_examples()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..ds.n_examples()).filter(|&i| fold[i] == f).collect();
            let model = clf.fit(&ds.subset(&train), seed.wrapping_add(1 + f as u64))?;
            Ok(accuracy(model.as_ref(), &ds.subset(&test)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / n_folds as f64;
    Ok(CVResult {
        stimulus: None,
        rho_th: None,
        classifier: clf.name().to_string(),
        fold_accuracies,
        mean_accuracy,
    })
}

/// Cross-validated accuracy as a function of the correlation threshold.
///
/// `build` turns a threshold into a dataset (re-thresholding the graphs and
/// recomputing features).
pub fn threshold_sweep<F>(
    thresholds: &[f64],
    build: F,
    clf: &ClassifierSpec,
    n_folds: usize,
    seed: u64,
    mode: FoldMode,
) -> Result<Vec<CVResult>>
where
    F: Fn(f64) -> Result<Dataset>,
{
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("no thresholds to sweep".into()));
    }
    thresholds
        .iter()
        .map(|&th| {
            let ds = build(th)?;
            let mut r = kfold_cv(&ds, clf, n_folds, seed, mode)?;
            r.rho_th = Some(th);
            Ok(r)
        })
        .collect()
}

/// `lo, lo + step, …` up to and including `hi` (within half a step of
/// rounding).
pub fn sweep_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || hi < lo || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::range("sweep", format!("{lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    // round to the step's decimals so grid values print cleanly
    Ok((0..n)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}
