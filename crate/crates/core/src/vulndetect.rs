//! Vulnerability detection on function embeddings: minority oversampling,
//! a linear SVM, and detection metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::corpus;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng::{self, Rng};

/// Function embeddings with labels; `true` marks a vulnerable function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl LabeledSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: vectors.len(), got: labels.len() });
        }
        if let Some(d) = vectors.first().map(Vec::len) {
            if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
            }
        }
        Ok(LabeledSet { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// `(minority, majority)` counts: vulnerable and benign.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }

    fn minority(&self) -> Vec<&[f64]> {
        self.vectors
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l)
            .map(|(v, _)| v.as_slice())
            .collect()
    }

    fn push(&mut self, v: Vec<f64>, label: bool) {
        self.vectors.push(v);
        self.labels.push(label);
    }

    /// Text format: `label v1 … vd` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (v, &l) in self.vectors.iter().zip(&self.labels) {
            out.push(if l { '1' } else { '0' });
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for line in corpus::content_lines(text) {
            let mut parts = line.split_whitespace();
            labels.push(match parts.next() {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(Error::format("dataset", format!("bad label in `{line}`"))),
            });
            vectors.push(
                parts
                    .map(|p| p.parse::<f64>().map_err(|e| Error::format("dataset", format!("`{p}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        LabeledSet::new(vectors, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OversampleMethod {
    Ros,
    Smote,
}

impl std::str::FromStr for OversampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ros" => Ok(OversampleMethod::Ros),
            "smote" => Ok(OversampleMethod::Smote),
            _ => Err(Error::config("method", format!("expected ros|smote, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OversampleConfig {
    pub method: OversampleMethod,
    pub k_neighbors: usize,
    /// Target minority/majority ratio.
    pub ratio: f64,
    /// Extra copies of each vulnerable function added before oversampling.
    pub duplicates: usize,
    pub seed: u64,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig { method: OversampleMethod::Smote, k_neighbors: 2, ratio: 0.002, duplicates: 3, seed: 1 }
    }
}

impl OversampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::config("ratio", "must lie in (0, 1]"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::config("k_neighbors", "must be positive"));
        }
        Ok(())
    }
}

/// `⌈ratio × majority⌉`, robust to the rounding of products such as
/// `0.002 × 9999`.
pub fn target_minority(majority: usize, ratio: f64) -> usize {
    (ratio * majority as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Appends `copies` extra copies of every vulnerable vector.
pub fn duplicate_minority(set: &LabeledSet, copies: usize) -> LabeledSet {
    let mut out = set.clone();
    let minority: Vec<Vec<f64>> = set.minority().into_iter().map(<[f64]>::to_vec).collect();
    for _ in 0..copies {
        for v in &minority {
            out.push(v.clone(), true);
        }
    }
    out
}

fn shortfall(set: &LabeledSet, cfg: &OversampleConfig) -> Result<usize> {
    cfg.validate()?;
    let (pos, neg) = set.class_counts();
    if pos == 0 {
        return Err(Error::EmptyInput("no vulnerable samples to oversample"));
    }
    Ok(target_minority(neg, cfg.ratio).saturating_sub(pos))
}

/// Random oversampling: draws vulnerable vectors with replacement until the
/// minority reaches `⌈ratio × majority⌉`.
pub fn ros_oversample(set: &LabeledSet, cfg: &OversampleConfig) -> Result<LabeledSet> {
    let need = shortfall(set, cfg)?;
    let mut rng = rng::derive(cfg.seed, "ros");
    let minority: Vec<Vec<f64>> = set.minority().into_iter().map(<[f64]>::to_vec).collect();
    let mut out = set.clone();
    for _ in 0..need {
        out.push(minority[rng.random_range(0..minority.len())].clone(), true);
    }
    Ok(out)
}

/// One SMOTE point with the pair it was interpolated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub point: Vec<f64>,
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `count` synthetic points `x_i + λ(x_nn − x_i)` with `x_nn` drawn from the
/// `k` Euclidean nearest neighbors of a uniformly chosen `x_i`.
pub fn smote_samples(minority: &[&[f64]], k: usize, count: usize, rng: &mut Rng) -> Result<Vec<Synthetic>> {
    if minority.len() <= k {
        return Err(Error::config(
            "k_neighbors",
            format!("minority has {} samples, needs more than {k}; duplicate it first", minority.len()),
        ));
    }
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| (sq_dist(minority[i], minority[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|p| p.1).collect()
        })
        .collect();
    Ok((0..count)
        .map(|_| {
            let base = rng.random_range(0..minority.len());
            let neighbor = neighbors[base][rng.random_range(0..k)];
            let lambda: f64 = rng.random();
            let (x, n) = (minority[base], minority[neighbor]);
            let point = x.iter().zip(n).map(|(a, b)| a + lambda * (b - a)).collect();
            Synthetic { point, base, neighbor, lambda }
        })
        .collect())
}

pub fn smote_oversample(set: &LabeledSet, cfg: &OversampleConfig) -> Result<LabeledSet> {
    let need = shortfall(set, cfg)?;
    let mut out = set.clone();
    if need == 0 {
        return Ok(out);
    }
    let minority = set.minority();
    let synth = smote_samples(&minority, cfg.k_neighbors, need, &mut rng::derive(cfg.seed, "smote"))?;
    for s in synth {
        out.push(s.point, true);
    }
    Ok(out)
}

/// Adds `cfg.duplicates` copies of every vulnerable vector, then tops the
/// minority up with the configured method.
pub fn oversample(set: &LabeledSet, cfg: &OversampleConfig) -> Result<LabeledSet> {
    let set = duplicate_minority(set, cfg.duplicates);
    match cfg.method {
        OversampleMethod::Ros => ros_oversample(&set, cfg),
        OversampleMethod::Smote => smote_oversample(&set, cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    /// `λ‖w‖²/2 + mean hinge loss`, with the bias treated as a weight.
    pub fn objective(&self, set: &LabeledSet) -> f64 {
        let reg = 0.5 * self.lambda * (dot(&self.w, &self.w) + self.b * self.b);
        let hinge: f64 = set
            .vectors
            .iter()
            .zip(&set.labels)
            .map(|(x, &l)| (1.0 - sign(l) * self.decision(x)).max(0.0))
            .sum();
        reg + hinge / set.len().max(1) as f64
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.w.iter().chain([&self.b, &self.lambda]) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_text(&self) -> String {
        let w: Vec<String> = self.w.iter().map(|v| v.to_string()).collect();
        format!("{}\n{}\n{}\n", self.lambda, self.b, w.join(" "))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = corpus::content_lines(text).collect();
        let bad = |m: String| Error::format("linear model", m);
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        match lines.as_slice() {
            [lambda, b, w] => Ok(LinearModel {
                lambda: num(lambda)?,
                b: num(b)?,
                w: w.split_whitespace().map(num).collect::<Result<_>>()?,
            }),
            // A model with zero features has an empty weight line.
            [lambda, b] => Ok(LinearModel { lambda: num(lambda)?, b: num(b)?, w: vec![] }),
            _ => Err(bad(format!("expected 3 lines, got {}", lines.len()))),
        }
    }
}

fn sign(l: bool) -> f64 {
    if l {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: LinearModel,
    /// Objective of the zero model, then after each epoch.
    pub objectives: Vec<f64>,
}

/// Pegasos stochastic subgradient descent on the hinge loss. The bias is an
/// extra constant feature. Returns the iterate with the lowest objective
/// among the starting point and the end of each epoch.
pub fn train_linear_svm(set: &LabeledSet, lambda: f64, epochs: usize, seed: u64) -> Result<SvmFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", "must be positive"));
    }
    let (pos, neg) = set.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::EmptyInput("SVM training needs both classes"));
    }
    let d = set.dim();
    let mut rng = rng::derive(seed, "pegasos");
    // Augmented weights: last entry is the bias.
    let mut w = vec![0.0; d + 1];
    let to_model = |w: &[f64]| LinearModel { w: w[..d].to_vec(), b: w[d], lambda };
    let mut best = to_model(&w);
    let mut objectives = vec![best.objective(set)];
    let mut best_obj = objectives[0];
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &set.vectors[i];
            let y = sign(set.labels[i]);
            let margin = y * (dot(&w[..d], x) + w[d]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                axpy(eta * y, x, &mut w[..d]);
                w[d] += eta * y;
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("SVM weights diverged".into()));
        }
        let m = to_model(&w);
        let obj = m.objective(set);
        objectives.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best = m;
        }
    }
    Ok(SvmFit { model: best, objectives })
}

/// Rates from a confusion matrix. Rates with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        let tpr = ratio(tp, fn_);
        let precision = ratio(tp, fp);
        let f1 = match (precision, tpr) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Metrics { tp, fp, tn, fn_, tpr, fpr: ratio(fp, tn), precision, f1 }
    }
}

pub fn evaluate_detection(model: &LinearModel, test: &LabeledSet) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyInput("detection test set"));
    }
    if test.dim() != model.w.len() {
        return Err(Error::DimensionMismatch { expected: model.w.len(), got: test.dim() });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (x, &l) in test.vectors.iter().zip(&test.labels) {
        match (model.predict(x), l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{x:.4}"))
}

/// Aligned table with TPR, FPR, precision and F1 per row.
pub fn format_metrics_table(rows: &[(String, String, Metrics)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}  {:<8}  {:>7}  {:>7}  {:>9}  {:>7}", "level", "case", "TPR", "FPR", "precision", "F1");
    for (level, case, m) in rows {
        let _ = writeln!(
            out,
            "{level:<8}  {case:<8}  {:>7}  {:>7}  {:>9}  {:>7}",
            cell(m.tpr),
            cell(m.fpr),
            cell(m.precision),
            cell(m.f1)
        );
    }
    out
}
