//! Mono-architecture instruction embeddings: skip-gram with negative
//! sampling over instruction windows inside basic blocks.
//!
//! Two modes share one trainer. In [`EmbedMode::Subword`] a word's input
//! representation is the mean of its own vector and the vectors of its
//! hashed character n-grams, so unseen instructions still get a vector from
//! the n-grams they share with known ones. [`EmbedMode::Word`] drops the
//! n-grams and is plain word-level skip-gram.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, MonoCorpus, NUM_SPECIALS, UNK};
use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, log_sigmoid, sigmoid};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Subword,
    Word,
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "subword" | "fasttext" => Ok(EmbedMode::Subword),
            "word" | "word2vec" => Ok(EmbedMode::Word),
            _ => Err(Error::config("mode", format!("expected subword|word, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedMode::Subword => "subword",
            EmbedMode::Word => "word",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly to zero.
    pub lr: f64,
    pub seed: u64,
    pub mode: EmbedMode,
    pub buckets: u32,
    pub min_n: usize,
    pub max_n: usize,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.05,
            seed: 1,
            mode: EmbedMode::Subword,
            buckets: 2_000_000,
            min_n: 3,
            max_n: 6,
        }
    }
}

impl EmbedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
            ("buckets", self.buckets as usize),
            ("min_n", self.min_n),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.max_n < self.min_n {
            return Err(Error::config("max_n", "must be at least min_n"));
        }
        Ok(())
    }
}

/// Character n-grams of `<word>` with lengths in `min_n..=max_n`. When the
/// marked word is shorter than `min_n`, the marked word itself is returned.
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        if n > marked.len() {
            break;
        }
        for start in 0..=marked.len() - n {
            out.push(marked[start..start + n].iter().collect());
        }
    }
    if out.is_empty() {
        out.push(marked.iter().collect());
    }
    out
}

fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for b in s.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Hashed bucket ids of the word's character n-grams.
pub fn subword_ngrams(word: &str, min_n: usize, max_n: usize, buckets: u32) -> Vec<u32> {
    char_ngrams(word, min_n, max_n)
        .iter()
        .map(|g| fnv1a(g) % buckets.max(1))
        .collect()
}

/// Vectors for the n-gram buckets that were reached during training. Buckets
/// never touched by a training word have no row and are skipped on lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordTable {
    pub buckets: u32,
    pub min_n: usize,
    pub max_n: usize,
    /// Sorted bucket ids that own a row.
    slots: Vec<u32>,
    rows: Vec<f64>,
    dim: usize,
}

impl SubwordTable {
    pub fn slot(&self, bucket: u32) -> Option<usize> {
        self.slots.binary_search(&bucket).ok()
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.rows[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Mean of the known n-gram vectors of `word`, if any.
    pub fn compose(&self, word: &str) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for b in subword_ngrams(word, self.min_n, self.max_n, self.buckets) {
            if let Some(s) = self.slot(b) {
                axpy(1.0, self.row(s), &mut acc);
                n += 1;
            }
        }
        (n > 0).then(|| {
            acc.iter_mut().for_each(|v| *v /= n as f64);
            acc
        })
    }
}

/// Row-wise affine pipeline applied to vectors composed for unseen words, so
/// that they land in the same space as a transformed matrix: unit length,
/// minus `mean`, unit length, then times `rotation`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowTransform {
    pub mean: Vec<f64>,
    pub rotation: Option<Vec<f64>>,
}

impl RowTransform {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = v.len();
        let mut x = v.to_vec();
        unit(&mut x);
        for (xi, m) in x.iter_mut().zip(&self.mean) {
            *xi -= m;
        }
        unit(&mut x);
        match &self.rotation {
            Some(w) => {
                let mut out = vec![0.0; d];
                for (i, &xi) in x.iter().enumerate() {
                    axpy(xi, &w[i * d..(i + 1) * d], &mut out);
                }
                out
            }
            None => x,
        }
    }
}

fn unit(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `V × d` instruction embeddings; row `i` belongs to vocabulary id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    words: Vec<String>,
    index: HashMap<String, u32>,
    dim: usize,
    data: Vec<f64>,
    pub mode: EmbedMode,
    pub subword: Option<SubwordTable>,
    pub oov_transform: Option<RowTransform>,
}

impl EmbeddingMatrix {
    pub fn new(words: Vec<String>, dim: usize, data: Vec<f64>, mode: EmbedMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if data.len() != words.len() * dim {
            return Err(Error::DimensionMismatch { expected: words.len() * dim, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding value".into()));
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(EmbeddingMatrix { words, index, dim, data, mode, subword: None, oov_transform: None })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Same words and side tables, new rows.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out = EmbeddingMatrix::new(self.words.clone(), self.dim, data, self.mode)?;
        out.subword = self.subword.clone();
        out.oov_transform = self.oov_transform.clone();
        Ok(out)
    }

    /// Vector for `word`. Known words return their row. Unknown words are
    /// composed from n-grams in subword mode and fall back to the `<UNK>` row.
    pub fn lookup_vector(&self, word: &str) -> Vec<f64> {
        if let Some(id) = self.id(word) {
            return self.row(id as usize).to_vec();
        }
        if let Some(v) = self.subword.as_ref().and_then(|t| t.compose(word)) {
            return match &self.oov_transform {
                Some(t) => t.apply(&v),
                None => v,
            };
        }
        self.row(UNK as usize).to_vec()
    }

    /// The `k` regular words most cosine-similar to `word`, best first.
    /// Specials and the query itself are excluded.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Vec<(String, f64)> {
        let q = self.lookup_vector(word);
        let own = self.id(word);
        let mut scored: Vec<(u32, f64)> = (NUM_SPECIALS..self.len())
            .map(|i| i as u32)
            .filter(|&i| Some(i) != own)
            .map(|i| (i, cosine(&q, self.row(i as usize))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, c)| (self.words[i as usize].clone(), c))
            .collect()
    }

    /// Text format: `V d` header, then `word v1 … vd` with six significant
    /// digits per value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.len(), self.dim);
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for v in self.row(i) {
                let _ = write!(out, " {}", fmt_sig6(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, mode: EmbedMode) -> Result<Self> {
        let mut lines = corpus::content_lines(text);
        let header = lines.next().ok_or_else(|| Error::format("embedding text", "missing header"))?;
        let (v, d) = header
            .split_once(' ')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| Error::format("embedding text", format!("bad header `{header}`")))?;
        let mut words = Vec::with_capacity(v);
        let mut data = Vec::with_capacity(v * d);
        for line in lines {
            let mut parts = line.split(' ');
            let w = parts.next().unwrap_or_default();
            words.push(w.to_string());
            let before = data.len();
            for p in parts {
                data.push(
                    p.parse::<f64>()
                        .map_err(|e| Error::format("embedding text", format!("bad value `{p}`: {e}")))?,
                );
            }
            if data.len() - before != d {
                return Err(Error::format("embedding text", format!("row `{w}` has {} values, expected {d}", data.len() - before)));
            }
        }
        if words.len() != v {
            return Err(Error::format("embedding text", format!("declared {v} rows, found {}", words.len())));
        }
        EmbeddingMatrix::new(words, d, data, mode)
    }

    /// Binary companion: one JSON manifest line, then little-endian `f32`
    /// payloads in the order the manifest lists them.
    pub fn write_binary<W: Write>(&self, mut w: W, provenance: &str) -> Result<()> {
        let manifest = BinaryManifest { format: "UBE1".into(), provenance: provenance.into(), matrix: self.manifest() };
        let line = serde_json::to_string(&manifest).map_err(|e| Error::format("embedding binary", e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        self.write_payload(&mut w)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("embedding binary", "missing manifest line"))?;
        let manifest: BinaryManifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format("embedding binary", e.to_string()))?;
        if manifest.format != "UBE1" {
            return Err(Error::format("embedding binary", format!("unknown format `{}`", manifest.format)));
        }
        let mut payload = F32Reader { bytes: &bytes[nl + 1..] };
        let out = EmbeddingMatrix::from_payload(manifest.matrix, &mut payload)?;
        if !payload.bytes.is_empty() {
            return Err(Error::format("embedding binary", "trailing bytes after payload"));
        }
        Ok(out)
    }

    pub(crate) fn manifest(&self) -> MatrixManifest {
        MatrixManifest {
            mode: self.mode,
            words: self.words.clone(),
            dim: self.dim,
            subword: self.subword.as_ref().map(|t| SubwordManifest {
                buckets: t.buckets,
                min_n: t.min_n,
                max_n: t.max_n,
                slots: t.slots.clone(),
            }),
            oov_mean: self.oov_transform.is_some(),
            oov_rotation: self.oov_transform.as_ref().is_some_and(|t| t.rotation.is_some()),
        }
    }

    pub(crate) fn write_payload<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_f32s(w, &self.data)?;
        if let Some(t) = &self.subword {
            write_f32s(w, &t.rows)?;
        }
        if let Some(t) = &self.oov_transform {
            write_f32s(w, &t.mean)?;
            if let Some(r) = &t.rotation {
                write_f32s(w, r)?;
            }
        }
        Ok(())
    }

    pub(crate) fn from_payload(m: MatrixManifest, payload: &mut F32Reader) -> Result<Self> {
        let d = m.dim;
        let data = payload.take(m.words.len() * d)?;
        let mut out = EmbeddingMatrix::new(m.words, d, data, m.mode)?;
        if let Some(s) = m.subword {
            let rows = payload.take(s.slots.len() * d)?;
            out.subword = Some(SubwordTable {
                buckets: s.buckets,
                min_n: s.min_n,
                max_n: s.max_n,
                slots: s.slots,
                rows,
                dim: d,
            });
        }
        if m.oov_mean {
            let mean = payload.take(d)?;
            let rotation = if m.oov_rotation { Some(payload.take(d * d)?) } else { None };
            out.oov_transform = Some(RowTransform { mean, rotation });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SubwordManifest {
    buckets: u32,
    min_n: usize,
    max_n: usize,
    slots: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MatrixManifest {
    mode: EmbedMode,
    words: Vec<String>,
    dim: usize,
    subword: Option<SubwordManifest>,
    oov_mean: bool,
    oov_rotation: bool,
}

#[derive(Serialize, Deserialize)]
struct BinaryManifest {
    format: String,
    provenance: String,
    #[serde(flatten)]
    matrix: MatrixManifest,
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) struct F32Reader<'a> {
    pub bytes: &'a [u8],
}

impl F32Reader<'_> {
    pub fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.bytes.len() < n * 4 {
            return Err(Error::format("binary payload", "truncated"));
        }
        let (head, tail) = self.bytes.split_at(n * 4);
        self.bytes = tail;
        Ok(head
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
}

/// `%g`-style formatting with six significant digits.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.5e}");
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        format!("{mant}e{e}")
    }
}

/// One skip-gram training example: the input rows composing the center word,
/// the context word's output row, and the sampled negative output rows.
#[derive(Debug, Clone)]
pub struct SgnsExample {
    pub input_rows: Vec<usize>,
    pub context: usize,
    pub negatives: Vec<usize>,
}

fn compose_hidden(input: &[f64], dim: usize, rows: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &r in rows {
        axpy(1.0, &input[r * dim..(r + 1) * dim], out);
    }
    let inv = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
}

/// `-ln σ(h·c) - Σ ln σ(-h·n)` where `h` is the mean of the input rows.
pub fn sgns_loss(input: &[f64], output: &[f64], dim: usize, ex: &SgnsExample) -> f64 {
    let mut h = vec![0.0; dim];
    compose_hidden(input, dim, &ex.input_rows, &mut h);
    let row = |r: usize| &output[r * dim..(r + 1) * dim];
    let mut loss = -log_sigmoid(dot(&h, row(ex.context)));
    for &n in &ex.negatives {
        loss -= log_sigmoid(-dot(&h, row(n)));
    }
    loss
}

/// Dense gradients of [`sgns_loss`] with respect to both tables.
pub fn sgns_grad(input: &[f64], output: &[f64], dim: usize, ex: &SgnsExample) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; dim];
    compose_hidden(input, dim, &ex.input_rows, &mut h);
    let mut d_in = vec![0.0; input.len()];
    let mut d_out = vec![0.0; output.len()];
    let mut d_h = vec![0.0; dim];
    let targets = std::iter::once((ex.context, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)));
    for (t, label) in targets {
        let o = &output[t * dim..(t + 1) * dim];
        let coeff = sigmoid(dot(&h, o)) - label;
        axpy(coeff, o, &mut d_h);
        axpy(coeff, &h, &mut d_out[t * dim..(t + 1) * dim]);
    }
    let inv = 1.0 / ex.input_rows.len() as f64;
    for &r in &ex.input_rows {
        axpy(inv, &d_h, &mut d_in[r * dim..(r + 1) * dim]);
    }
    (d_in, d_out)
}

#[derive(Debug, Clone)]
pub struct TrainedEmbeddings {
    pub embeddings: EmbeddingMatrix,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains skip-gram embeddings for one mono-architecture corpus.
///
/// Runs single-threaded from `cfg.seed`, so identical inputs give identical
/// matrices. Specials never appear as centers, contexts or negatives.
pub fn train_maie(corpus: &MonoCorpus, cfg: &EmbedTrainConfig) -> Result<TrainedEmbeddings> {
    cfg.validate()?;
    let v = corpus.vocab.len();
    let regular: Vec<u32> = corpus.vocab.regular_ids().collect();
    let total_tokens: usize = corpus
        .blocks
        .iter()
        .flatten()
        .filter(|&&id| !corpus::is_special(id))
        .count();
    if regular.is_empty() || total_tokens == 0 {
        return Err(Error::EmptyInput("embedding corpus has no regular words"));
    }
    let d = cfg.dim;
    let mut rng = rng::derive(cfg.seed, "embed");

    // Input rows: one per vocabulary word, then one per touched n-gram bucket.
    let mut rows_of: Vec<Vec<usize>> = (0..v).map(|i| vec![i]).collect();
    let mut slots: Vec<u32> = Vec::new();
    if cfg.mode == EmbedMode::Subword {
        let mut per_word: Vec<Vec<u32>> = vec![Vec::new(); v];
        for &id in &regular {
            let w = corpus.vocab.word(id).unwrap_or_default();
            per_word[id as usize] = subword_ngrams(w, cfg.min_n, cfg.max_n, cfg.buckets);
            slots.extend_from_slice(&per_word[id as usize]);
        }
        slots.sort_unstable();
        slots.dedup();
        for &id in &regular {
            for b in &per_word[id as usize] {
                let s = slots.binary_search(b).unwrap_or_default();
                rows_of[id as usize].push(v + s);
            }
        }
    }
    let n_rows = v + slots.len();
    let bound = 1.0 / d as f64;
    let mut input: Vec<f64> = (0..n_rows * d).map(|_| rng.random_range(-bound..bound)).collect();
    let mut output = vec![0.0; v * d];

    let weights: Vec<f64> = regular
        .iter()
        .map(|&id| (corpus.vocab.count(id).max(1) as f64).powf(0.75))
        .collect();
    let neg_dist = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;

    let total_steps = (cfg.epochs * total_tokens) as f64;
    let mut processed = 0usize;
    let mut h = vec![0.0; d];
    let mut d_h = vec![0.0; d];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut examples = 0usize;
        for block in &corpus.blocks {
            for (i, &center) in block.iter().enumerate() {
                if corpus::is_special(center) {
                    continue;
                }
                let lr = cfg.lr * (1.0 - processed as f64 / total_steps).max(1e-4);
                processed += 1;
                let span = rng.random_range(1..=cfg.window);
                let lo = i.saturating_sub(span);
                let hi = (i + span).min(block.len() - 1);
                let rows = &rows_of[center as usize];
                for (j, &ctx) in block.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i || corpus::is_special(ctx) {
                        continue;
                    }
                    compose_hidden(&input, d, rows, &mut h);
                    d_h.iter_mut().for_each(|x| *x = 0.0);
                    let mut targets = Vec::with_capacity(cfg.negatives + 1);
                    targets.push((ctx as usize, 1.0));
                    for _ in 0..cfg.negatives {
                        // Redraw a few times when the sample hits the positive.
                        let mut neg = None;
                        for _ in 0..10 {
                            let cand = regular[neg_dist.sample(&mut rng)];
                            if cand != ctx {
                                neg = Some(cand);
                                break;
                            }
                        }
                        if let Some(n) = neg {
                            targets.push((n as usize, 0.0));
                        }
                    }
                    for (t, label) in targets {
                        let o = &mut output[t * d..(t + 1) * d];
                        let score = dot(&h, o);
                        loss_sum -= if label > 0.0 { log_sigmoid(score) } else { log_sigmoid(-score) };
                        let coeff = sigmoid(score) - label;
                        axpy(coeff, o, &mut d_h);
                        axpy(-lr * coeff, &h, o);
                    }
                    let scale = -lr / rows.len() as f64;
                    for &r in rows {
                        axpy(scale, &d_h, &mut input[r * d..(r + 1) * d]);
                    }
                    examples += 1;
                }
            }
        }
        epoch_losses.push(if examples > 0 { loss_sum / examples as f64 } else { 0.0 });
    }

    let mut data = vec![0.0; v * d];
    for (id, rows) in rows_of.iter().enumerate() {
        compose_hidden(&input, d, rows, &mut data[id * d..(id + 1) * d]);
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("embedding training diverged".into()));
    }
    let mut embeddings = EmbeddingMatrix::new(corpus.vocab.words().to_vec(), d, data, cfg.mode)?;
    if cfg.mode == EmbedMode::Subword {
        embeddings.subword = Some(SubwordTable {
            buckets: cfg.buckets,
            min_n: cfg.min_n,
            max_n: cfg.max_n,
            rows: input[v * d..].to_vec(),
            slots,
            dim: d,
        });
    }
    Ok(TrainedEmbeddings { embeddings, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asmtext::ArchId;
    use crate::corpus::OptLevel;
    use crate::toyoracle::finite_difference_grad;

    fn corpus_of(blocks: &[Vec<&str>]) -> MonoCorpus {
        let owned: Vec<Vec<String>> = blocks.iter().map(|b| b.iter().map(|s| s.to_string()).collect()).collect();
        MonoCorpus::from_word_blocks(ArchId::X86, OptLevel::O0, &owned, 1).unwrap()
    }

    fn small_cfg(mode: EmbedMode, seed: u64) -> EmbedTrainConfig {
        EmbedTrainConfig { dim: 16, epochs: 20, buckets: 5000, seed, mode, ..Default::default() }
    }

    #[test]
    fn ngram_extraction() {
        assert_eq!(char_ngrams("MOV", 3, 3), vec!["<MO", "MOV", "OV>"]);
        assert_eq!(subword_ngrams("MOV", 3, 3, 100).len(), 3);
        assert_eq!(char_ngrams("A", 3, 6), vec!["<A>"]);
        assert_eq!(char_ngrams("A", 4, 6), vec!["<A>"]);
        for len in 1..15usize {
            let w: String = "X".repeat(len);
            let expected: usize = (3..=6).map(|n| (len + 3).saturating_sub(n)).sum();
            assert_eq!(char_ngrams(&w, 3, 6).len(), expected.max(1), "len {len}");
        }
        assert!(subword_ngrams("MOV_EAX,EBX", 3, 6, 7).iter().all(|&b| b < 7));
    }

    #[test]
    fn single_repeated_word_trains_with_default_dimension() {
        let corpus = corpus_of(&[vec!["NOP"; 6]]);
        let cfg = EmbedTrainConfig { buckets: 1000, ..Default::default() };
        let out = train_maie(&corpus, &cfg).unwrap();
        assert_eq!(out.embeddings.len(), 5);
        assert_eq!(out.embeddings.dim(), 200);
        assert!(out.embeddings.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_empty_corpus_and_bad_dim() {
        let empty = corpus_of(&[]);
        assert!(matches!(train_maie(&empty, &EmbedTrainConfig::default()), Err(Error::EmptyInput(_))));
        let c = corpus_of(&[vec!["A", "B"]]);
        let cfg = EmbedTrainConfig { dim: 0, ..Default::default() };
        assert!(matches!(train_maie(&c, &cfg), Err(Error::Config { field: "dim", .. })));
    }

    /// A and B always co-occur; C only ever appears with D.
    fn cooccurrence_corpus() -> MonoCorpus {
        let mut blocks = Vec::new();
        for i in 0..200 {
            blocks.push(if i % 2 == 0 { vec!["A", "B", "A", "B"] } else { vec!["C", "D", "C", "D"] });
        }
        corpus_of(&blocks)
    }

    #[test]
    fn cooccurring_words_are_closer() {
        let corpus = cooccurrence_corpus();
        for seed in 0..10 {
            for mode in [EmbedMode::Word, EmbedMode::Subword] {
                let e = train_maie(&corpus, &small_cfg(mode, seed)).unwrap().embeddings;
                let v = |w| e.lookup_vector(w);
                assert!(cosine(&v("A"), &v("B")) > cosine(&v("A"), &v("C")), "seed {seed} {mode}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_loss_settles() {
        let corpus = cooccurrence_corpus();
        let a = train_maie(&corpus, &small_cfg(EmbedMode::Subword, 3)).unwrap();
        let b = train_maie(&corpus, &small_cfg(EmbedMode::Subword, 3)).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        let l = &a.epoch_losses;
        let half = l.len() / 2;
        assert!(l[l.len() - 1] <= l[half] + 1e-9, "{l:?}");
        assert!(l[l.len() - 1] < l[0]);
    }

    #[test]
    fn lookup_rules() {
        let corpus = cooccurrence_corpus();
        let word = train_maie(&corpus, &small_cfg(EmbedMode::Word, 1)).unwrap().embeddings;
        assert_eq!(word.lookup_vector("A"), word.row(word.id("A").unwrap() as usize));
        assert_eq!(word.lookup_vector("NEVER_SEEN"), word.row(UNK as usize));

        let sub = train_maie(&corpus, &small_cfg(EmbedMode::Subword, 1)).unwrap().embeddings;
        // Two unseen words hashed with a single bucket share every n-gram.
        let mut collide = sub.clone();
        let table = collide.subword.as_mut().unwrap();
        table.buckets = 1;
        table.slots = vec![0];
        table.rows = table.rows[..16].to_vec();
        let (q, z) = (collide.lookup_vector("QQQ"), collide.lookup_vector("ZZZZ"));
        assert!(q.iter().zip(&z).all(|(a, b)| (a - b).abs() <= 1e-12));
        assert_ne!(collide.lookup_vector("A_unseen"), collide.row(UNK as usize));
        // No shared n-gram with any training word: falls back to <UNK>.
        assert_eq!(sub.lookup_vector("A_unseen"), sub.row(UNK as usize));
    }

    #[test]
    fn neighbors_match_brute_force() {
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let d = 8;
        let data: Vec<f64> = (0..50 * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let e = EmbeddingMatrix::new(words.clone(), d, data, EmbedMode::Word).unwrap();
        let got = e.nearest_neighbors("w10", 5);
        let mut all: Vec<(String, f64)> = (4..50)
            .filter(|&i| i != 10)
            .map(|i| (words[i].clone(), cosine(e.row(10), e.row(i))))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(got, all[..5].to_vec());
    }

    #[test]
    fn planted_duplicate_and_orthogonal_neighbors() {
        let words: Vec<String> = ["<PAD>", "<UNK>", "<BOS>", "<EOS>", "q", "dup", "orth", "half"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = [[0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [0.2, 0.1], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let e = EmbeddingMatrix::new(words, 2, rows.concat(), EmbedMode::Word).unwrap();
        let nn = e.nearest_neighbors("q", 3);
        assert_eq!(nn[0], ("dup".to_string(), 1.0));
        assert_eq!(nn[1].0, "half");
        assert_eq!(nn[2], ("orth".to_string(), 0.0));
    }

    #[test]
    fn sgns_gradients_match_finite_differences() {
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (d, n_in, n_out) = (6, 12, 8);
        let mut checked = 0;
        for _ in 0..100 {
            let input: Vec<f64> = (0..n_in * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let output: Vec<f64> = (0..n_out * d).map(|_| r.random_range(-1.0..1.0)).collect();
            let n_rows = r.random_range(1..4);
            let ex = SgnsExample {
                input_rows: (0..n_rows).map(|_| r.random_range(0..n_in)).collect(),
                context: r.random_range(0..n_out),
                negatives: (0..3).map(|_| r.random_range(0..n_out)).collect(),
            };
            let (g_in, g_out) = sgns_grad(&input, &output, d, &ex);
            let coords_in: Vec<usize> = ex.input_rows.iter().map(|&row| row * d + r.random_range(0..d)).collect();
            let fd_in = finite_difference_grad(|p| sgns_loss(p, &output, d, &ex), &input, &coords_in, 1e-4);
            let coord_out = ex.context * d + r.random_range(0..d);
            let fd_out = finite_difference_grad(|p| sgns_loss(&input, p, d, &ex), &output, &[coord_out], 1e-4);
            for (&c, &fd) in coords_in.iter().zip(&fd_in) {
                assert!(rel_err(g_in[c], fd) <= 1e-5, "{} vs {}", g_in[c], fd);
                checked += 1;
            }
            assert!(rel_err(g_out[coord_out], fd_out[0]) <= 1e-5);
            checked += 1;
        }
        assert!(checked >= 100);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn text_and_binary_formats() {
        let corpus = cooccurrence_corpus();
        let e = train_maie(&corpus, &small_cfg(EmbedMode::Subword, 2)).unwrap().embeddings;
        let text = e.to_text();
        assert!(text.starts_with(&format!("{} 16\n", e.len())));
        let back = EmbeddingMatrix::from_text(&text, EmbedMode::Subword).unwrap();
        for (a, b) in back.data().iter().zip(e.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3));
        }
        let mut buf = Vec::new();
        e.write_binary(&mut buf, "test").unwrap();
        let bin = EmbeddingMatrix::read_binary(&buf[..]).unwrap();
        assert_eq!(bin.words(), e.words());
        assert_eq!(bin.subword.as_ref().unwrap().len(), e.subword.as_ref().unwrap().len());
        let mut buf2 = Vec::new();
        bin.write_binary(&mut buf2, "test").unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(0.123456789), "0.123457");
        assert_eq!(fmt_sig6(-12.5), "-12.5");
        assert_eq!(fmt_sig6(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e8");
    }
}
