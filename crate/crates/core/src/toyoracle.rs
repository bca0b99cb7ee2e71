//! Ground truth for desk-scale checks: synthetic twin corpora with a hidden
//! word lexicon, plus independent reference implementations used by tests.
//!
//! Nothing in here reuses the numeric code of the modules it checks.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::asmtext::{ArchId, BasicBlock, FunctionRecord};
use crate::corpus::{self, CorpusStats};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TwinSpec {
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Inclusive block length range.
    pub block_len: (usize, usize),
    pub blocks_per_function: (usize, usize),
    /// Probability of swapping each adjacent pair on the B side.
    pub swap_p: f64,
    /// Total number of blocks per side.
    pub blocks: usize,
    /// Words held out of the grammar and used only in the planted motif.
    pub motif_words: usize,
    /// Fraction of functions that carry the motif block.
    pub motif_fraction: f64,
    pub seed: u64,
}

impl Default for TwinSpec {
    fn default() -> Self {
        TwinSpec {
            vocab_size: 300,
            zipf_exponent: 1.0,
            block_len: (4, 12),
            blocks_per_function: (1, 4),
            swap_p: 0.1,
            blocks: 2000,
            motif_words: 0,
            motif_fraction: 0.0,
            seed: 1,
        }
    }
}

impl TwinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 + self.motif_words {
            return Err(Error::config("vocab_size", "too small for the grammar and motif"));
        }
        if !(0.0..=0.5).contains(&self.swap_p) {
            return Err(Error::config("swap_p", "must lie in [0, 0.5]"));
        }
        if self.block_len.0 == 0 || self.block_len.0 > self.block_len.1 {
            return Err(Error::config("block_len", "need 1 <= min <= max"));
        }
        if self.blocks_per_function.0 == 0 || self.blocks_per_function.0 > self.blocks_per_function.1 {
            return Err(Error::config("blocks_per_function", "need 1 <= min <= max"));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.motif_fraction) || (self.motif_fraction > 0.0 && self.motif_words < 2) {
            return Err(Error::config("motif_fraction", "needs a fraction in [0, 1] and at least two motif words"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::config("zipf_exponent", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AToB,
    BToA,
}

/// Bijection between A-side and B-side words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pairs: Vec<(String, String)>,
    a_to_b: HashMap<String, String>,
    b_to_a: HashMap<String, String>,
}

impl Lexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let a_to_b: HashMap<_, _> = pairs.iter().cloned().collect();
        let b_to_a: HashMap<_, _> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        if a_to_b.len() != pairs.len() || b_to_a.len() != pairs.len() {
            return Err(Error::format("lexicon", "not a bijection"));
        }
        Ok(Lexicon { pairs, a_to_b, b_to_a })
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, word: &str, dir: Direction) -> Option<&str> {
        match dir {
            Direction::AToB => self.a_to_b.get(word),
            Direction::BToA => self.b_to_a.get(word),
        }
        .map(String::as_str)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.pairs {
            let _ = writeln!(out, "{a}\t{b}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let pairs = corpus::content_lines(text)
            .map(|l| {
                l.split_once('\t')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::format("lexicon", format!("bad line `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Lexicon::new(pairs)
    }
}

/// Word-for-word image of `block` under the lexicon.
pub fn oracle_translate<S: AsRef<str>>(block: &[S], lexicon: &Lexicon, dir: Direction) -> Result<Vec<String>> {
    block
        .iter()
        .map(|w| {
            lexicon
                .get(w.as_ref(), dir)
                .map(str::to_string)
                .ok_or_else(|| Error::MissingWord(w.as_ref().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TwinCorpus {
    /// High-resource side, listed in generation order.
    pub a: Vec<FunctionRecord>,
    /// Low-resource side, shuffled so the pairing is not positional.
    pub b: Vec<FunctionRecord>,
    pub lexicon: Lexicon,
    /// `b_to_a[j]` is the index in `a` of the twin of `b[j]`.
    pub b_to_a: Vec<usize>,
    /// Whether `a[i]` carries the planted motif.
    pub motif_a: Vec<bool>,
    /// Statistics of side A tracked during generation.
    pub stats_a: CorpusStats,
    /// Number of adjacent swaps applied on the B side, and the number of
    /// adjacent pairs that were eligible.
    pub swaps: (usize, usize),
}

fn random_names(rng: &mut Rng, n: usize, upper: bool) -> Vec<String> {
    let base = if upper { b'A' } else { b'a' };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..6).map(|_| char::from(base + rng.random_range(0..26u8))).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Grammar {
    start: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

impl Grammar {
    fn new(n: usize, exponent: f64, rng: &mut Rng) -> Result<Self> {
        let zipf: Vec<f64> = (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(exponent)).collect();
        let start = WeightedIndex::new(&zipf).map_err(|e| Error::Numerical(e.to_string()))?;
        let mut successors = Vec::with_capacity(n);
        for w in 0..n {
            let k = rng.random_range(3..=8).min(n - 1);
            let mut chosen = BTreeSet::new();
            while chosen.len() < k {
                let c = start.sample(rng);
                if c != w {
                    chosen.insert(c);
                }
            }
            let next: Vec<usize> = chosen.into_iter().collect();
            let weights: Vec<f64> = next.iter().map(|&c| zipf[c] * rng.random_range(0.5..1.5)).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;
            successors.push((next, dist));
        }
        Ok(Grammar { start, successors })
    }

    fn block(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut w = self.start.sample(rng);
        out.push(w);
        while out.len() < len {
            let (next, dist) = &self.successors[w];
            w = next[dist.sample(rng)];
            out.push(w);
        }
        out
    }
}

/// Applies a left-to-right pass of adjacent swaps, each with probability `p`.
/// Returns the number of swaps made.
fn swap_pass<T>(block: &mut [T], p: f64, rng: &mut Rng) -> usize {
    let mut swaps = 0;
    for i in 0..block.len().saturating_sub(1) {
        if rng.random::<f64>() < p {
            block.swap(i, i + 1);
            swaps += 1;
        }
    }
    swaps
}

/// Generates A-side functions from a seeded Zipfian bigram grammar and their
/// B-side twins: lexicon images with adjacent swaps at rate `swap_p`.
pub fn generate_twin_corpus(spec: &TwinSpec) -> Result<TwinCorpus> {
    spec.validate()?;
    let mut rng = rng::derive(spec.seed, "twin");
    let a_names = random_names(&mut rng, spec.vocab_size, true);
    let b_names = random_names(&mut rng, spec.vocab_size, false);
    let grammar_words = spec.vocab_size - spec.motif_words;
    let grammar = Grammar::new(grammar_words, spec.zipf_exponent, &mut rng)?;
    let mut motif: Vec<usize> = (grammar_words..spec.vocab_size).collect();
    motif.shuffle(&mut rng);

    let mut a_ids: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut motif_a = Vec::new();
    let mut total_blocks = 0;
    while total_blocks < spec.blocks {
        let want = rng.random_range(spec.blocks_per_function.0..=spec.blocks_per_function.1);
        let n = want.min(spec.blocks - total_blocks);
        let mut blocks: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let len = rng.random_range(spec.block_len.0..=spec.block_len.1);
                grammar.block(len, &mut rng)
            })
            .collect();
        let planted = spec.motif_fraction > 0.0 && rng.random::<f64>() < spec.motif_fraction;
        if planted {
            let at = rng.random_range(0..blocks.len());
            blocks[at] = motif.clone();
        }
        total_blocks += n;
        a_ids.push(blocks);
        motif_a.push(planted);
    }

    let mut unique = HashSet::new();
    let mut total_tokens = 0;
    let a: Vec<FunctionRecord> = a_ids
        .iter()
        .enumerate()
        .map(|(i, blocks)| FunctionRecord {
            name: format!("fa{i:05}"),
            arch: ArchId::X86,
            blocks: blocks
                .iter()
                .map(|b| {
                    total_tokens += b.len();
                    unique.extend(b.iter().copied());
                    BasicBlock::from_words(b.iter().map(|&w| a_names[w].clone()))
                })
                .collect(),
        })
        .collect();

    let mut order: Vec<usize> = (0..a_ids.len()).collect();
    order.shuffle(&mut rng);
    let mut swaps = (0, 0);
    let b: Vec<FunctionRecord> = order
        .iter()
        .enumerate()
        .map(|(j, &i)| FunctionRecord {
            name: format!("fb{j:05}"),
            arch: ArchId::Arm,
            blocks: a_ids[i]
                .iter()
                .map(|blk| {
                    let mut words: Vec<String> = blk.iter().map(|&w| b_names[w].clone()).collect();
                    swaps.0 += swap_pass(&mut words, spec.swap_p, &mut rng);
                    swaps.1 += words.len().saturating_sub(1);
                    BasicBlock::from_words(words)
                })
                .collect(),
        })
        .collect();

    let lexicon = Lexicon::new(a_names.into_iter().zip(b_names).collect())?;
    let stats_a = CorpusStats {
        function_count: a.len(),
        unique_instruction_count: unique.len(),
        total_instruction_count: total_tokens,
    };
    Ok(TwinCorpus { a, b, lexicon, b_to_a: order, motif_a, stats_a, swaps })
}

/// Corpus BLEU by exhaustive n-gram enumeration. Orders for which the
/// candidate has no n-grams are left out; zero matches count as 0.1 when
/// `smooth` is set.
pub fn bleu_bruteforce(candidate: &[Vec<String>], reference: &[Vec<String>], max_n: usize, smooth: bool) -> f64 {
    let cand_len: usize = candidate.iter().map(Vec::len).sum();
    let ref_len: usize = reference.iter().map(Vec::len).sum();
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (c, r) in candidate.iter().zip(reference) {
            let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
            if r.len() >= n {
                for start in 0..=r.len() - n {
                    *ref_counts.entry(&r[start..start + n]).or_default() += 1;
                }
            }
            let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
            if c.len() >= n {
                for start in 0..=c.len() - n {
                    *cand_counts.entry(&c[start..start + n]).or_default() += 1;
                    total += 1;
                }
            }
            for (g, k) in cand_counts {
                matched += k.min(ref_counts.get(g).copied().unwrap_or(0));
            }
        }
        if total == 0 {
            continue;
        }
        let m = if matched == 0 {
            if !smooth {
                return 0.0;
            }
            0.1
        } else {
            matched as f64
        };
        log_sum += (m / total as f64).ln();
        orders += 1;
    }
    let ratio = ref_len as f64 / cand_len as f64;
    let bp = if ratio > 1.0 { (1.0 - ratio).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` on the chosen coordinates.
pub fn finite_difference_grad<F>(f: F, params: &[f64], coords: &[usize], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    coords
        .iter()
        .map(|&c| {
            let orig = p[c];
            p[c] = orig + eps;
            let up = f(&p);
            p[c] = orig - eps;
            let down = f(&p);
            p[c] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Richardson-extrapolated central differences, `(4·D(ε/2) − D(ε)) / 3`,
/// accurate to fourth order in `ε`.
pub fn richardson_grad<F>(f: F, params: &[f64], coords: &[usize], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let coarse = finite_difference_grad(&f, params, coords, eps);
    let fine = finite_difference_grad(&f, params, coords, eps / 2.0);
    coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect()
}

/// Random orthogonal `Q` (QR of a Gaussian matrix with the signs of `R`'s
/// diagonal folded into `Q`) and `Z = X·Q + σ·N`.
pub fn plant_rotation(x: &DMatrix<f64>, sigma: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = x.ncols();
    let mut rng = rng::derive(seed, "rotation");
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let noise = DMatrix::from_fn(x.nrows(), d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    (x * &q + noise, q)
}

/// Two noisy views of one latent point cloud: `Xs = L + σN₁` and
/// `Zt = P(L·Q + σN₂)` for a random row permutation `P`. Returns the gold
/// pairs `(source row, target row)`.
pub fn shared_latent_twins(v: usize, d: usize, sigma: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Vec<(usize, usize)>) {
    let mut rng = rng::derive(seed, "latent");
    let latent = DMatrix::from_fn(v, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xs = DMatrix::from_fn(v, d, |i, j| latent[(i, j)] + sigma * rng.sample::<f64, _>(StandardNormal));
    let (rotated, _) = plant_rotation(&latent, sigma, seed.wrapping_add(1));
    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng);
    // Target row perm[i] holds the twin of source row i.
    let mut zt = DMatrix::zeros(v, d);
    for (i, &p) in perm.iter().enumerate() {
        zt.set_row(p, &rotated.row(i));
    }
    (xs, zt, perm.into_iter().enumerate().collect())
}
