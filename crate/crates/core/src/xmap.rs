//! Unsupervised orthogonal mapping of one embedding space into another.
//!
//! Both spaces are normalized, an initial dictionary is induced from the
//! shape of each space's similarity distribution, and then Procrustes fits
//! and CSLS dictionary induction alternate until the mean CSLS of the
//! induced dictionary stops improving.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::asmtext::ArchId;
use crate::corpus::{self, NUM_SPECIALS};
use crate::embed::{EmbeddingMatrix, RowTransform};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct MappingTransform {
    pub w: DMatrix<f64>,
    pub source: ArchId,
    pub target: ArchId,
}

impl MappingTransform {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `‖WᵀW − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim();
        (self.w.transpose() * &self.w - DMatrix::<f64>::identity(d, d)).norm()
    }

    /// Row-major copy of `W`.
    pub fn row_major(&self) -> Vec<f64> {
        self.w.transpose().as_slice().to_vec()
    }

    /// Text format: `d`, then `d` rows of `d` reals.
    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = format!("{d}\n");
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format!("{}", self.w[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str, source: ArchId, target: ArchId) -> Result<Self> {
        let mut lines = corpus::content_lines(text);
        let d: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::format("mapping", "missing dimension header"))?;
        let mut values = Vec::with_capacity(d * d);
        for line in lines {
            for t in line.split_whitespace() {
                values.push(t.parse::<f64>().map_err(|e| Error::format("mapping", format!("`{t}`: {e}")))?);
            }
        }
        if values.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: values.len() });
        }
        Ok(MappingTransform { w: DMatrix::from_row_slice(d, d, &values), source, target })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedDictionary {
    /// `(source row, target row, score)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl SeedDictionary {
    pub fn identity(n: usize) -> Self {
        SeedDictionary { pairs: (0..n).map(|i| (i, i, 1.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelfLearnConfig {
    pub csls_k: usize,
    pub keep_prob: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Number of most frequent rows used by the unsupervised initialization.
    pub init_vocab: usize,
}

impl Default for SelfLearnConfig {
    fn default() -> Self {
        SelfLearnConfig { csls_k: 10, keep_prob: 0.9, max_iter: 200, tol: 1e-6, seed: 1, init_vocab: 4000 }
    }
}

impl SelfLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config("keep_prob", "must lie in (0, 1]"));
        }
        if self.csls_k == 0 {
            return Err(Error::config("csls_k", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if self.init_vocab < 2 {
            return Err(Error::config("init_vocab", "must be at least 2"));
        }
        Ok(())
    }
}

fn unit_rows(m: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    for i in 0..m.nrows() {
        let n = m.row(i).norm();
        if n == 0.0 || !n.is_finite() {
            return Err(i);
        }
        m.row_mut(i).unscale_mut(n);
    }
    Ok(())
}

/// Length-normalize, mean-center, length-normalize. Returns the processed
/// rows and the column mean removed in the middle step.
pub fn preprocess(x: &DMatrix<f64>) -> std::result::Result<(DMatrix<f64>, Vec<f64>), usize> {
    let mut m = x.clone();
    unit_rows(&mut m)?;
    let mean: Vec<f64> = (0..m.ncols()).map(|j| m.column(j).mean()).collect();
    for (j, mu) in mean.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(-mu);
    }
    unit_rows(&mut m)?;
    Ok((m, mean))
}

/// [`preprocess`] over an embedding matrix. The removed mean is recorded in
/// the result's `oov_transform` so vectors composed for unseen words can be
/// brought into the same space.
pub fn preprocess_embeddings(x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let m = to_dmatrix(x);
    let (p, mean) = preprocess(&m).map_err(|i| Error::ZeroVector(x.words()[i].clone()))?;
    let mut out = from_dmatrix(x, &p)?;
    out.oov_transform = Some(RowTransform { mean, rotation: None });
    Ok(out)
}

pub fn to_dmatrix(x: &EmbeddingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.len(), x.dim(), x.data())
}

fn from_dmatrix(like: &EmbeddingMatrix, m: &DMatrix<f64>) -> Result<EmbeddingMatrix> {
    like.with_data(m.transpose().as_slice().to_vec())
}

/// Orthogonal `W` minimizing `‖Xs[src] W − Zt[tgt]‖_F` over the dictionary.
pub fn procrustes_fit(xs: &DMatrix<f64>, zt: &DMatrix<f64>, dict: &SeedDictionary) -> Result<DMatrix<f64>> {
    if dict.is_empty() {
        return Err(Error::EmptyInput("seed dictionary"));
    }
    if xs.ncols() != zt.ncols() {
        return Err(Error::DimensionMismatch { expected: xs.ncols(), got: zt.ncols() });
    }
    let d = xs.ncols();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for &(s, t, _) in &dict.pairs {
        m.ger(1.0, &xs.row(s).transpose(), &zt.row(t).transpose(), 1.0);
    }
    let svd = m.svd(true, true);
    let (u, v_t) = svd.u.zip(svd.v_t).ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    Ok(u * v_t)
}

/// Mean of the `k` largest entries of each row.
fn topk_row_means(sim: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let k = k.min(sim.ncols()).max(1);
    let mut buf = Vec::with_capacity(sim.ncols());
    (0..sim.nrows())
        .map(|i| {
            buf.clear();
            buf.extend(sim.row(i).iter().copied());
            buf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            buf[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Full CSLS matrix `2·cos(x, z) − r_T(x) − r_S(z)` for unit-length rows.
pub fn csls_matrix(xsw: &DMatrix<f64>, zt: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let sim = xsw * zt.transpose();
    let r_t = topk_row_means(&sim, k);
    let r_s = topk_row_means(&sim.transpose(), k);
    DMatrix::from_fn(sim.nrows(), sim.ncols(), |i, j| 2.0 * sim[(i, j)] - r_t[i] - r_s[j])
}

fn argmax_rows(m: &DMatrix<f64>) -> Vec<(usize, f64)> {
    (0..m.nrows())
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for (j, &v) in m.row(i).iter().enumerate() {
                if v > best.1 {
                    best = (j, v);
                }
            }
            best
        })
        .collect()
}

fn induce_with(xsw: &DMatrix<f64>, zt: &DMatrix<f64>, cfg: &SelfLearnConfig, rng: &mut Rng) -> (SeedDictionary, f64) {
    let best = argmax_rows(&csls_matrix(xsw, zt, cfg.csls_k));
    let objective = best.iter().map(|b| b.1).sum::<f64>() / best.len().max(1) as f64;
    let mut pairs: Vec<(usize, usize, f64)> = best
        .iter()
        .enumerate()
        .filter(|_| cfg.keep_prob >= 1.0 || rng.random::<f64>() < cfg.keep_prob)
        .map(|(s, &(t, v))| (s, t, v))
        .collect();
    if pairs.is_empty() {
        pairs = best.iter().enumerate().map(|(s, &(t, v))| (s, t, v)).collect();
    }
    (SeedDictionary { pairs }, objective)
}

/// Forward CSLS retrieval: each source row paired with its best target,
/// each pair kept independently with probability `cfg.keep_prob`.
pub fn induce_dictionary(xsw: &DMatrix<f64>, zt: &DMatrix<f64>, cfg: &SelfLearnConfig) -> SeedDictionary {
    induce_with(xsw, zt, cfg, &mut rng::derive(cfg.seed, "induce")).0
}

/// Square root of the similarity matrix `X Xᵀ`, rows sorted, normalized.
fn sorted_similarity(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let us = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * svd.singular_values[j]);
    let mut sim = us * u.transpose();
    for i in 0..sim.nrows() {
        let mut row: Vec<f64> = sim.row(i).iter().copied().collect();
        row.sort_by(f64::total_cmp);
        for (j, v) in row.into_iter().enumerate() {
            sim[(i, j)] = v;
        }
    }
    preprocess(&sim)
        .map(|(m, _)| m)
        .map_err(|i| Error::Numerical(format!("degenerate similarity row {i}")))
}

/// Unsupervised initial dictionary over the `cfg.init_vocab` first rows.
pub fn initial_dictionary(xs: &DMatrix<f64>, zt: &DMatrix<f64>, cfg: &SelfLearnConfig) -> Result<SeedDictionary> {
    let n = xs.nrows().min(zt.nrows()).min(cfg.init_vocab);
    if n == 0 {
        return Err(Error::EmptyInput("embedding space"));
    }
    let xsim = sorted_similarity(&xs.rows(0, n).into_owned())?;
    let zsim = sorted_similarity(&zt.rows(0, n).into_owned())?;
    let csls = csls_matrix(&xsim, &zsim, cfg.csls_k);
    Ok(SeedDictionary {
        pairs: argmax_rows(&csls).into_iter().enumerate().map(|(s, (t, v))| (s, t, v)).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct SelfLearnOutcome {
    pub w: DMatrix<f64>,
    pub dictionary: SeedDictionary,
    /// Best-so-far mean CSLS after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates Procrustes and CSLS induction from the unsupervised start,
/// returning the `W` with the best mean CSLS. Inputs must be preprocessed.
pub fn self_learn(xs: &DMatrix<f64>, zt: &DMatrix<f64>, cfg: &SelfLearnConfig) -> Result<SelfLearnOutcome> {
    cfg.validate()?;
    if xs.ncols() != zt.ncols() {
        return Err(Error::DimensionMismatch { expected: xs.ncols(), got: zt.ncols() });
    }
    let mut rng = rng::derive(cfg.seed, "self-learn");
    let mut dict = initial_dictionary(xs, zt, cfg)?;
    let mut best = f64::NEG_INFINITY;
    let mut best_w = DMatrix::<f64>::identity(xs.ncols(), xs.ncols());
    let mut best_dict = dict.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let w = procrustes_fit(xs, zt, &dict)?;
        let (next, objective) = induce_with(&(xs * &w), zt, cfg, &mut rng);
        let improved = objective > best + cfg.tol;
        if objective > best {
            best = objective;
            best_w = w;
            best_dict = next.clone();
        }
        history.push(best);
        log::debug!("self-learning iteration {iterations}: mean CSLS {objective:.6}");
        if !improved {
            converged = true;
            break;
        }
        dict = next;
    }
    if !converged {
        log::warn!("self-learning stopped at max_iter={} without converging", cfg.max_iter);
    }
    Ok(SelfLearnOutcome { w: best_w, dictionary: best_dict, history, iterations, converged })
}

/// Rows of `xs` mapped by `W`, with the rotation also recorded for unseen
/// words composed from subwords.
pub fn map_embeddings(xs: &EmbeddingMatrix, t: &MappingTransform) -> Result<EmbeddingMatrix> {
    if xs.dim() != t.dim() || t.w.ncols() != t.dim() {
        return Err(Error::DimensionMismatch { expected: xs.dim(), got: t.dim() });
    }
    let mapped = to_dmatrix(xs) * &t.w;
    let mut out = from_dmatrix(xs, &mapped)?;
    if let Some(tr) = out.oov_transform.as_mut() {
        tr.rotation = Some(t.row_major());
    }
    Ok(out)
}

/// Fraction of gold pairs whose source row retrieves its target as the
/// CSLS nearest neighbor.
pub fn precision_at_1(xsw: &DMatrix<f64>, zt: &DMatrix<f64>, gold: &[(usize, usize)], k: usize) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let best = argmax_rows(&csls_matrix(xsw, zt, k));
    gold.iter().filter(|&&(s, t)| best[s].0 == t).count() as f64 / gold.len() as f64
}

/// Cross-architecture embeddings for a low-resource/high-resource pair.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub source_caie: EmbeddingMatrix,
    pub target_caie: EmbeddingMatrix,
    pub transform: MappingTransform,
    pub outcome: SelfLearnOutcome,
}

/// Preprocesses both MAIE, learns `W` on the regular (non-special) rows, and
/// maps the source side. The target side's CAIE is its preprocessed MAIE.
pub fn align(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    source_arch: ArchId,
    target_arch: ArchId,
    cfg: &SelfLearnConfig,
) -> Result<Alignment> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), got: source.dim() });
    }
    if source.len() <= NUM_SPECIALS || target.len() <= NUM_SPECIALS {
        return Err(Error::EmptyInput("embedding space has no regular words"));
    }
    let xs = preprocess_embeddings(source)?;
    let zt = preprocess_embeddings(target)?;
    let regular = |m: &EmbeddingMatrix| to_dmatrix(m).rows(NUM_SPECIALS, m.len() - NUM_SPECIALS).into_owned();
    let outcome = self_learn(&regular(&xs), &regular(&zt), cfg)?;
    let transform = MappingTransform { w: outcome.w.clone(), source: source_arch, target: target_arch };
    let source_caie = map_embeddings(&xs, &transform)?;
    Ok(Alignment { source_caie, target_caie: zt, transform, outcome })
}
