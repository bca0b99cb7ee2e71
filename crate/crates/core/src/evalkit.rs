//! Translation quality (BLEU) and the function-similarity task.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::asmtext::{ArchId, FunctionRecord};
use crate::corpus;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng;

pub const MAX_N: usize = 4;
/// Stand-in for a zero n-gram match count when smoothing.
pub const SMOOTHING_EPS: f64 = 0.1;

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

fn sorted_ngrams<S: AsRef<str>>(seq: &[S], n: usize) -> Vec<Vec<&str>> {
    let mut grams: Vec<Vec<&str>> = seq.windows(n).map(|w| w.iter().map(AsRef::as_ref).collect()).collect();
    grams.sort_unstable();
    grams
}

/// Clipped matches between two sorted n-gram lists, by a merge walk.
fn clipped_matches(cand: &[Vec<&str>], reference: &[Vec<&str>]) -> usize {
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < cand.len() && j < reference.len() {
        match cand[i].cmp(&reference[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                m += 1;
                i += 1;
                j += 1;
            }
        }
    }
    m
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats { matches: vec![0; max_n], totals: vec![0; max_n], cand_len: 0, ref_len: 0 }
    }

    pub fn add<S: AsRef<str>, T: AsRef<str>>(&mut self, candidate: &[S], reference: &[T]) {
        self.cand_len += candidate.len();
        self.ref_len += reference.len();
        for n in 1..=self.matches.len() {
            if candidate.len() < n {
                break;
            }
            let c = sorted_ngrams(candidate, n);
            self.totals[n - 1] += c.len();
            if reference.len() >= n {
                self.matches[n - 1] += clipped_matches(&c, &sorted_ngrams(reference, n));
            }
        }
    }

    /// Geometric mean of the n-gram precisions times the brevity penalty.
    /// Orders with no candidate n-grams are skipped; with `smooth`, a zero
    /// match count is replaced by [`SMOOTHING_EPS`], otherwise it yields 0.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_p = Vec::with_capacity(self.matches.len());
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            let m = match (m, smooth) {
                (0, false) => return 0.0,
                (0, true) => SMOOTHING_EPS,
                (m, _) => m as f64,
            };
            log_p.push((m / t as f64).ln());
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64).min(0.0).exp();
        bp * (log_p.iter().sum::<f64>() / log_p.len() as f64).exp()
    }
}

fn check_pairing<S, T>(candidate: &[Vec<S>], reference: &[Vec<T>]) -> Result<()> {
    if candidate.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: candidate.len() });
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("BLEU reference"));
    }
    Ok(())
}

/// Corpus BLEU of one function's blocks against its reference blocks,
/// smoothed so short functions still receive a defined score.
pub fn bleu_score<S: AsRef<str>, T: AsRef<str>>(candidate: &[Vec<S>], reference: &[Vec<T>], max_n: usize) -> Result<f64> {
    Ok(bleu_stats(candidate, reference, max_n)?.score(true))
}

pub fn bleu_stats<S: AsRef<str>, T: AsRef<str>>(candidate: &[Vec<S>], reference: &[Vec<T>], max_n: usize) -> Result<BleuStats> {
    check_pairing(candidate, reference)?;
    let mut stats = BleuStats::new(max_n);
    for (c, r) in candidate.iter().zip(reference) {
        stats.add(c, r);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// `(function name, smoothed function BLEU)`.
    pub per_function: Vec<(String, f64)>,
    pub mean: f64,
    /// Unsmoothed corpus BLEU over every block of every function.
    pub corpus: f64,
}

impl BleuReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.per_function.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
        let _ = writeln!(out, "{:<width$}  {:>6}", "function", "BLEU");
        for (name, s) in &self.per_function {
            let _ = writeln!(out, "{name:<width$}  {s:>6.4}");
        }
        let _ = writeln!(out, "{:<width$}  {:>6.4}", "mean", self.mean);
        let _ = writeln!(out, "{:<width$}  {:>6.4}", "corpus", self.corpus);
        out
    }
}

/// Per-function BLEU of translated functions against references, averaged.
pub fn bleu_report(translated: &[FunctionRecord], reference: &[FunctionRecord]) -> Result<BleuReport> {
    if translated.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: translated.len() });
    }
    if translated.is_empty() {
        return Err(Error::EmptyInput("BLEU function set"));
    }
    let mut all = BleuStats::new(MAX_N);
    let mut per_function = Vec::with_capacity(translated.len());
    for (t, r) in translated.iter().zip(reference) {
        let tb: Vec<Vec<String>> = t.blocks.iter().map(|b| b.words()).collect();
        let rb: Vec<Vec<String>> = r.blocks.iter().map(|b| b.words()).collect();
        let s = bleu_stats(&tb, &rb, MAX_N)?;
        for n in 0..MAX_N {
            all.matches[n] += s.matches[n];
            all.totals[n] += s.totals[n];
        }
        all.cand_len += s.cand_len;
        all.ref_len += s.ref_len;
        per_function.push((t.name.clone(), s.score(true)));
    }
    let mean = per_function.iter().map(|p| p.1).sum::<f64>() / per_function.len() as f64;
    Ok(BleuReport { per_function, mean, corpus: all.score(false) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TfWeighting {
    /// Raw occurrence counts.
    #[default]
    Raw,
    /// Counts divided by the function's instruction count.
    LengthNormalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionEmbedding {
    pub vector: Vec<f64>,
    pub function: String,
}

/// TF-weighted sum of the CAIE vectors of the function's instructions.
pub fn function_embedding(f: &FunctionRecord, caie: &EmbeddingMatrix, tf: TfWeighting) -> Result<FunctionEmbedding> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in f.words() {
        *counts.entry(w).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput("function has no instructions"));
    }
    let total: usize = counts.values().sum();
    let mut vector = vec![0.0; caie.dim()];
    for (w, c) in counts {
        let weight = match tf {
            TfWeighting::Raw => c as f64,
            TfWeighting::LengthNormalized => c as f64 / total as f64,
        };
        axpy(weight, &caie.lookup_vector(w), &mut vector);
    }
    Ok(FunctionEmbedding { vector, function: f.name.clone() })
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 {
        return Err(Error::ZeroVector("first operand".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector("second operand".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Two functions, possibly from different architectures, and whether they
/// come from the same source code.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub f1: String,
    pub arch1: ArchId,
    pub f2: String,
    pub arch2: ArchId,
    pub label: bool,
}

/// How the decision threshold on cosine similarity is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Fixed(f64),
    /// Best threshold on the scored set itself.
    Best,
    /// Best threshold on a seeded validation split, applied to the rest.
    Validation { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub threshold: f64,
    pub evaluated: usize,
}

fn accuracy_at(scored: &[(f64, bool)], t: f64) -> f64 {
    scored.iter().filter(|&&(s, l)| (s >= t) == l).count() as f64 / scored.len() as f64
}

/// Threshold maximizing accuracy over midpoints of adjacent distinct scores
/// (plus one below and one above the range). Ties go to the lowest.
pub fn best_threshold(scored: &[(f64, bool)]) -> (f64, f64) {
    let mut s: Vec<f64> = scored.iter().map(|p| p.0).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut candidates = Vec::with_capacity(s.len() + 1);
    if let (Some(&lo), Some(&hi)) = (s.first(), s.last()) {
        candidates.push(lo - 1.0);
        candidates.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        candidates.push(hi + 1.0);
    }
    let mut best = (0.0, f64::NEG_INFINITY);
    for t in candidates {
        let a = accuracy_at(scored, t);
        if a > best.1 {
            best = (t, a);
        }
    }
    best
}

/// Accuracy of `score ≥ threshold` against the labels.
pub fn pair_accuracy(scored: &[(f64, bool)], policy: ThresholdPolicy) -> Result<AccuracyReport> {
    if scored.is_empty() {
        return Err(Error::EmptyInput("similarity pairs"));
    }
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(AccuracyReport { accuracy: accuracy_at(scored, t), threshold: t, evaluated: scored.len() }),
        ThresholdPolicy::Best => {
            let (t, a) = best_threshold(scored);
            Ok(AccuracyReport { accuracy: a, threshold: t, evaluated: scored.len() })
        }
        ThresholdPolicy::Validation { fraction, seed } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::config("validation_fraction", "must lie in (0, 1)"));
            }
            let mut order: Vec<usize> = (0..scored.len()).collect();
            order.shuffle(&mut rng::derive(seed, "validation-split"));
            let n_val = ((scored.len() as f64 * fraction).round() as usize).clamp(1, scored.len().saturating_sub(1).max(1));
            let val: Vec<(f64, bool)> = order[..n_val].iter().map(|&i| scored[i]).collect();
            let test: Vec<(f64, bool)> = order[n_val..].iter().map(|&i| scored[i]).collect();
            if test.is_empty() {
                return Err(Error::EmptyInput("test split"));
            }
            let (t, _) = best_threshold(&val);
            Ok(AccuracyReport { accuracy: accuracy_at(&test, t), threshold: t, evaluated: test.len() })
        }
    }
}

/// Pair file: `f1 arch1 f2 arch2 label`, tab separated.
pub fn write_pairs(pairs: &[SimilarityPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", p.f1, p.arch1, p.f2, p.arch2, u8::from(p.label));
    }
    out
}

pub fn read_pairs(text: &str) -> Result<Vec<SimilarityPair>> {
    corpus::content_lines(text)
        .map(|line| {
            let bad = |m: &str| Error::format("pair file", format!("{m} in `{line}`"));
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let label = match c[4] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            };
            Ok(SimilarityPair {
                f1: c[0].to_string(),
                arch1: c[1].parse()?,
                f2: c[2].to_string(),
                arch2: c[3].parse()?,
                label,
            })
        })
        .collect()
}

/// Aligned accuracy table: one row per setting, percentages with two
/// decimals.
pub fn format_accuracy_table(rows: &[(String, String, AccuracyReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}  {:<10}  {:>9}  {:>9}  {:>6}", "level", "embedding", "accuracy", "threshold", "pairs");
    for (level, mode, r) in rows {
        let _ = writeln!(
            out,
            "{level:<8}  {mode:<10}  {:>8.2}%  {:>9.4}  {:>6}",
            r.accuracy * 100.0,
            r.threshold,
            r.evaluated
        );
    }
    out
}
