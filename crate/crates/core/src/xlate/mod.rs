//! Unsupervised basic-block translation between two architectures.
//!
//! A bidirectional recurrent encoder is shared by both directions and reads
//! frozen cross-architecture embeddings, so blocks from either side land in
//! one representation space. Each architecture has its own attentional
//! decoder. Training alternates four objectives per iteration: denoising on
//! each side, and backtranslation in each direction, where the current model
//! produces the pseudo-source without gradient.

mod io;
mod net;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asmtext::{ArchId, BasicBlock, FunctionRecord};
use crate::corpus::{MonoCorpus, NUM_SPECIALS, UNK};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::cosine;
use crate::rng::{self, Rng};

pub use net::TensorSpec;
use net::Net;

/// Index of the high-resource (decoding target) side.
pub const HIGH: usize = 0;
/// Index of the low-resource side.
pub const LOW: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Adjacent swaps per block, as a fraction of its length (rounded down).
    pub swap_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { swap_fraction: 0.5, seed: 1 }
    }
}

/// Applies `⌊N × fraction⌋` adjacent transpositions one after another, each
/// at a uniformly chosen position.
pub fn add_noise_with(block: &[u32], swap_fraction: f64, rng: &mut Rng) -> Vec<u32> {
    let mut out = block.to_vec();
    if out.len() < 2 {
        return out;
    }
    let swaps = (out.len() as f64 * swap_fraction).floor() as usize;
    for _ in 0..swaps {
        let i = rng.random_range(0..out.len() - 1);
        out.swap(i, i + 1);
    }
    out
}

pub fn add_noise(block: &[u32], cfg: &NoiseConfig) -> Vec<u32> {
    add_noise_with(block, cfg.swap_fraction, &mut rng::derive(cfg.seed, "noise"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    /// Hidden size of each encoder direction.
    pub hidden: usize,
    /// Blocks longer than this are truncated.
    pub max_len: usize,
    pub swap_fraction: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            iterations: 1000,
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip: 5.0,
            hidden: 128,
            max_len: 64,
            swap_fraction: 0.5,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("batch_size", self.batch_size), ("hidden", self.hidden), ("max_len", self.max_len)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::config("clip", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.swap_fraction) {
            return Err(Error::config("swap_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationRequest {
    pub block: Vec<String>,
    pub source: ArchId,
    pub target: ArchId,
}

/// The four objectives of one training iteration, in rotation order.
pub const OBJECTIVES: [&str; 4] = ["denoise-high", "denoise-low", "backtranslate-to-high", "backtranslate-to-low"];

#[derive(Debug, Clone)]
pub struct TranslationModel {
    net: Net,
    params: Vec<f64>,
    caie: [EmbeddingMatrix; 2],
    archs: [ArchId; 2],
    pub schedule: TrainSchedule,
    pub seed: u64,
    /// Mean token loss of each objective, per iteration.
    pub losses: Vec<[f64; 4]>,
    /// Backtranslation pairs dropped because the pseudo-source was empty.
    pub skipped_pairs: usize,
    trained: bool,
}

/// Source/target id pairs for supervised steps.
pub type Pairs = Vec<(Vec<u32>, Vec<u32>)>;

impl TranslationModel {
    /// Fresh model. `high` and `low` are the CAIE of the two sides, with rows
    /// aligned to each side's vocabulary.
    pub fn new(
        high: EmbeddingMatrix,
        high_arch: ArchId,
        low: EmbeddingMatrix,
        low_arch: ArchId,
        schedule: TrainSchedule,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        if high.dim() != low.dim() {
            return Err(Error::DimensionMismatch { expected: high.dim(), got: low.dim() });
        }
        if high_arch == low_arch {
            return Err(Error::config("arch", "the two sides must be different architectures"));
        }
        if high.len() <= NUM_SPECIALS || low.len() <= NUM_SPECIALS {
            return Err(Error::EmptyInput("embedding vocabulary has no regular words"));
        }
        let net = Net::new(high.dim(), schedule.hidden, [high.len(), low.len()]);
        let mut rng = rng::derive(seed, "xlate-init");
        let mut params = vec![0.0; net.n_params];
        let mut fan = 1;
        for spec in &net.specs {
            // Recurrent cells use the hidden size; other layers their input width.
            if spec.name.contains("w_ih") || spec.name.contains("w_hh") {
                fan = spec.shape[0] / 3;
            } else if spec.shape.len() == 2 {
                fan = spec.shape[1];
            }
            let bound = 1.0 / (fan as f64).sqrt();
            for v in &mut params[spec.offset..spec.offset + spec.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(TranslationModel {
            net,
            params,
            caie: [high, low],
            archs: [high_arch, low_arch],
            schedule,
            seed,
            losses: Vec::new(),
            skipped_pairs: 0,
            trained: false,
        })
    }

    pub fn archs(&self) -> [ArchId; 2] {
        self.archs
    }

    pub fn side(&self, arch: ArchId) -> Result<usize> {
        self.archs
            .iter()
            .position(|&a| a == arch)
            .ok_or_else(|| Error::UnsupportedArch(arch.to_string()))
    }

    pub fn caie(&self, side: usize) -> &EmbeddingMatrix {
        &self.caie[side]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor_specs(&self) -> &[TensorSpec] {
        &self.net.specs
    }

    /// Parameter range owned by the decoder of `side`.
    pub fn decoder_range(&self, side: usize) -> std::ops::Range<usize> {
        self.net.decoder_range(side)
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// SHA-256 over both frozen embedding tables.
    pub fn embedding_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.caie {
            for v in e.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn clip_len<'a>(&self, ids: &'a [u32]) -> &'a [u32] {
        if ids.len() > self.schedule.max_len {
            log::warn!("block of {} instructions truncated to {}", ids.len(), self.schedule.max_len);
            &ids[..self.schedule.max_len]
        } else {
            ids
        }
    }

    /// Encoder context vectors, one per position.
    pub fn encode_block(&self, ids: &[u32], side: usize) -> Result<Vec<Vec<f64>>> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("block"));
        }
        self.check_ids(ids, side)?;
        Ok(self.net.encode(&self.params, &self.caie[side], self.clip_len(ids)).ctx)
    }

    fn check_ids(&self, ids: &[u32], side: usize) -> Result<()> {
        let v = self.caie[side].len();
        match ids.iter().find(|&&i| i as usize >= v) {
            Some(&id) => Err(Error::IdOutOfRange { id: id as usize, size: v }),
            None => Ok(()),
        }
    }

    /// Mean token cross-entropy of decoding each target from its source with
    /// the decoder of `tgt_side`, and optionally its gradient.
    pub fn batch_loss(&self, pairs: &[(Vec<u32>, Vec<u32>)], src_side: usize, tgt_side: usize, with_grad: bool) -> (f64, Option<Vec<f64>>) {
        self.batch_loss_at(&self.params, pairs, src_side, tgt_side, with_grad)
    }

    /// [`Self::batch_loss`] evaluated at an arbitrary parameter vector.
    pub fn batch_loss_at(&self, p: &[f64], pairs: &[(Vec<u32>, Vec<u32>)], src_side: usize, tgt_side: usize, with_grad: bool) -> (f64, Option<Vec<f64>>) {
        let tokens: usize = pairs.iter().map(|(_, t)| t.len() + 1).sum();
        if tokens == 0 {
            return (0.0, with_grad.then(|| vec![0.0; p.len()]));
        }
        let scale = 1.0 / tokens as f64;
        let mut grad = with_grad.then(|| vec![0.0; p.len()]);
        let mut total = 0.0;
        for (src, tgt) in pairs {
            let g = grad.as_deref_mut().map(|g| (g, scale));
            total += self.net.seq_loss(p, &self.caie[src_side], &self.caie[tgt_side], src, tgt, tgt_side, g);
        }
        (total * scale, grad)
    }

    /// Decodes `ids` from `src_side` into the other side's vocabulary. The
    /// output may be empty.
    pub fn translate_ids(&self, ids: &[u32], src_side: usize, beam: usize) -> Vec<u32> {
        self.decode_ids(ids, src_side, beam, 0)
    }

    fn decode_ids(&self, ids: &[u32], src_side: usize, beam: usize, min_len: usize) -> Vec<u32> {
        let ids = self.clip_len(ids);
        if ids.is_empty() {
            return Vec::new();
        }
        let max_out = 2 * ids.len() + 5;
        self.net.decode(&self.params, &self.caie[src_side], &self.caie[1 - src_side], ids, 1 - src_side, beam, min_len, max_out)
    }

    /// Maps words to ids; unknown words become their nearest known word by
    /// subword-composed cosine, or `<UNK>` when no subword table applies.
    pub fn lookup_ids<S: AsRef<str>>(&self, words: &[S], side: usize) -> Vec<u32> {
        let e = &self.caie[side];
        words
            .iter()
            .map(|w| {
                let w = w.as_ref();
                if let Some(id) = e.id(w) {
                    return id;
                }
                let composed = e.subword.as_ref().and_then(|t| t.compose(w));
                match composed {
                    Some(v) => {
                        let v = e.oov_transform.as_ref().map_or(v.clone(), |t| t.apply(&v));
                        (NUM_SPECIALS..e.len())
                            .map(|i| (i as u32, cosine(&v, e.row(i))))
                            .fold((UNK, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
                            .0
                    }
                    None => UNK,
                }
            })
            .collect()
    }

    pub fn translate_block(&self, req: &TranslationRequest, beam: usize) -> Result<BasicBlock> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let src = self.side(req.source)?;
        let tgt = self.side(req.target)?;
        if src == tgt {
            return Err(Error::config("target", "source and target architecture must differ"));
        }
        if req.block.is_empty() {
            return Err(Error::EmptyInput("block"));
        }
        let ids = self.lookup_ids(&req.block, src);
        // A block always translates to at least one instruction.
        let out = self.decode_ids(&ids, src, beam, 1);
        let words = self.caie[tgt].words();
        Ok(BasicBlock::from_words(out.iter().map(|&i| words[i as usize].clone())))
    }

    /// Translates every block; order and function name are kept.
    pub fn translate_function(&self, f: &FunctionRecord, target: ArchId, beam: usize) -> Result<FunctionRecord> {
        let blocks = f
            .blocks
            .iter()
            .map(|b| {
                self.translate_block(&TranslationRequest { block: b.words(), source: f.arch, target }, beam)
            })
            .collect::<Result<_>>()?;
        Ok(FunctionRecord { name: f.name.clone(), arch: target, blocks })
    }
}

/// Pairs `(noised block, block)` for denoising on one side.
pub fn denoising_pairs(blocks: &[Vec<u32>], swap_fraction: f64, rng: &mut Rng) -> Pairs {
    blocks.iter().map(|b| (add_noise_with(b, swap_fraction, rng), b.clone())).collect()
}

/// Denoising loss and gradient for a batch from `side`.
pub fn denoising_loss(model: &TranslationModel, blocks: &[Vec<u32>], side: usize, noise: &NoiseConfig) -> (f64, Vec<f64>) {
    let pairs = denoising_pairs(blocks, noise.swap_fraction, &mut rng::derive(noise.seed, "noise"));
    let (l, g) = model.batch_loss(&pairs, side, side, true);
    (l, g.unwrap_or_default())
}

#[derive(Debug, Clone, Default)]
pub struct BacktranslationBatch {
    /// `(pseudo-source on the other side, original block)`.
    pub pairs: Pairs,
    pub skipped: usize,
}

/// Greedily translates each block of `side` to the other side (no gradient
/// flows through this step) and returns the reversed pairs.
pub fn backtranslation_pairs(model: &TranslationModel, blocks: &[Vec<u32>], side: usize) -> BacktranslationBatch {
    let mut out = BacktranslationBatch::default();
    for b in blocks {
        let pseudo = model.translate_ids(b, side, 1);
        if pseudo.is_empty() {
            out.skipped += 1;
        } else {
            out.pairs.push((pseudo, b.clone()));
        }
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &mut [f64], s: &TrainSchedule) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > s.clip {
            let k = s.clip / norm;
            grad.iter_mut().for_each(|g| *g *= k);
        }
        self.t += 1;
        let bc1 = 1.0 - s.beta1.powi(self.t);
        let bc2 = 1.0 - s.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = s.beta1 * self.m[i] + (1.0 - s.beta1) * g;
            self.v[i] = s.beta2 * self.v[i] + (1.0 - s.beta2) * g * g;
            params[i] -= s.lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + s.adam_eps);
        }
    }
}

/// Cycles through a side's blocks in seeded shuffled order.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Sampler { order, pos: 0 }
    }

    fn batch(&mut self, blocks: &[Vec<u32>], size: usize, rng: &mut Rng) -> Vec<Vec<u32>> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                blocks[self.order[self.pos - 1]].clone()
            })
            .collect()
    }
}

/// Stateful trainer; [`train_translator`] runs it for the whole schedule.
pub struct Trainer<'a> {
    pub model: TranslationModel,
    blocks: [Vec<Vec<u32>>; 2],
    samplers: [Sampler; 2],
    adam: Adam,
    rng: Rng,
    _corpora: std::marker::PhantomData<&'a ()>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: TranslationModel, high: &'a MonoCorpus, low: &'a MonoCorpus) -> Result<Self> {
        for (side, c) in [(HIGH, high), (LOW, low)] {
            if c.blocks.iter().all(Vec::is_empty) {
                return Err(Error::EmptyInput("translation corpus"));
            }
            if c.vocab.words() != model.caie[side].words() {
                return Err(Error::config("caie", format!("embedding rows do not match the {} vocabulary", c.arch)));
            }
        }
        let max_len = model.schedule.max_len;
        let prep = |c: &MonoCorpus| -> Vec<Vec<u32>> {
            c.blocks
                .iter()
                .filter(|b| !b.is_empty())
                .map(|b| b[..b.len().min(max_len)].to_vec())
                .collect()
        };
        let blocks = [prep(high), prep(low)];
        let mut rng = rng::derive(model.seed, "xlate-train");
        let samplers = [Sampler::new(blocks[0].len(), &mut rng), Sampler::new(blocks[1].len(), &mut rng)];
        let adam = Adam::new(model.params.len());
        Ok(Trainer { model, blocks, samplers, adam, rng, _corpora: std::marker::PhantomData })
    }

    fn update(&mut self, pairs: &Pairs, src: usize, tgt: usize) -> Option<f64> {
        if pairs.is_empty() {
            return None;
        }
        let (loss, grad) = self.model.batch_loss(pairs, src, tgt, true);
        let mut grad = grad.unwrap_or_default();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Some(f64::NAN);
        }
        let sched = self.model.schedule.clone();
        self.adam.step(&mut self.model.params, &mut grad, &sched);
        Some(loss)
    }

    /// One iteration of the four-objective rotation.
    pub fn step(&mut self) -> Result<[f64; 4]> {
        let bs = self.model.schedule.batch_size;
        let frac = self.model.schedule.swap_fraction;
        let mut out = [0.0; 4];
        for side in [HIGH, LOW] {
            let batch = self.samplers[side].batch(&self.blocks[side], bs, &mut self.rng);
            let pairs = denoising_pairs(&batch, frac, &mut self.rng);
            out[side] = self.update(&pairs, side, side).unwrap_or(f64::NAN);
        }
        // Backtranslation: blocks of `side` go to the other side and back.
        for (k, side) in [(2, HIGH), (3, LOW)] {
            let batch = self.samplers[side].batch(&self.blocks[side], bs, &mut self.rng);
            let bt = backtranslation_pairs(&self.model, &batch, side);
            self.model.skipped_pairs += bt.skipped;
            let previous = self.model.losses.last().map_or(f64::NAN, |l| l[k]);
            out[k] = self.update(&bt.pairs, 1 - side, side).unwrap_or(previous);
        }
        if out[..2].iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical("translator loss is not finite".into()));
        }
        self.model.losses.push(out);
        self.model.trained = true;
        Ok(out)
    }

    pub fn finish(self) -> TranslationModel {
        self.model
    }
}

/// Trains the translator on two mono-architecture corpora. `high` is the
/// side translations are decoded into.
pub fn train_translator(
    high: &MonoCorpus,
    low: &MonoCorpus,
    caie_high: &EmbeddingMatrix,
    caie_low: &EmbeddingMatrix,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TranslationModel> {
    let model = TranslationModel::new(caie_high.clone(), high.arch, caie_low.clone(), low.arch, schedule.clone(), seed)?;
    let mut trainer = Trainer::new(model, high, low)?;
    for it in 0..schedule.iterations {
        let l = trainer.step()?;
        if it % 50 == 0 || it + 1 == schedule.iterations {
            log::info!(
                "iteration {it}: denoise {:.4}/{:.4} backtranslate {:.4}/{:.4}",
                l[0],
                l[1],
                l[2],
                l[3]
            );
        }
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EOS, SPECIAL_WORDS};
    use crate::embed::EmbedMode;
    use crate::toyoracle::richardson_grad;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn random_matrix(words: Vec<String>, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..words.len() * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(words, dim, data, EmbedMode::Word).unwrap()
    }

    fn words(prefix: &str, n: usize) -> Vec<String> {
        SPECIAL_WORDS.iter().map(|s| s.to_string()).chain((0..n).map(|i| format!("{prefix}{i}"))).collect()
    }

    fn tiny(v: [usize; 2], dim: usize, hidden: usize, seed: u64) -> TranslationModel {
        let schedule = TrainSchedule { hidden, lr: 1e-2, batch_size: 4, ..TrainSchedule::default() };
        TranslationModel::new(
            random_matrix(words("X", v[0]), dim, seed),
            ArchId::X86,
            random_matrix(words("a", v[1]), dim, seed + 1),
            ArchId::Arm,
            schedule,
            seed,
        )
        .unwrap()
    }

    fn sampled_coords(n_params: usize, count: usize, seed: u64) -> Vec<usize> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| r.random_range(0..n_params)).collect()
    }

    fn assert_grad_matches(model: &TranslationModel, pairs: &Pairs, src: usize, tgt: usize) {
        let (_, g) = model.batch_loss(pairs, src, tgt, true);
        let g = g.unwrap();
        let coords = sampled_coords(model.params.len(), 150, 3);
        let fd = richardson_grad(|p| model.batch_loss_at(p, pairs, src, tgt, false).0, &model.params, &coords, 1e-3);
        let mut checked = 0;
        for (&c, &n) in coords.iter().zip(&fd) {
            let a = g[c];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel <= 1e-5, "coordinate {c}: analytic {a} numeric {n}");
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn noise_edge_cases_and_replay() {
        assert_eq!(add_noise(&[], &NoiseConfig::default()), Vec::<u32>::new());
        assert_eq!(add_noise(&[7], &NoiseConfig::default()), vec![7]);
        let b: Vec<u32> = (10..30).collect();
        let cfg = NoiseConfig { swap_fraction: 0.5, seed: 9 };
        assert_eq!(add_noise(&b, &cfg), add_noise(&b, &cfg));
        assert_eq!(add_noise(&b, &NoiseConfig { swap_fraction: 0.0, seed: 9 }), b);
    }

    proptest! {
        #[test]
        fn noise_permutes_by_adjacent_swaps(block in prop::collection::vec(0u32..50, 0..40), seed in 0u64..1000) {
            let out = add_noise(&block, &NoiseConfig { swap_fraction: 0.5, seed });
            let mut a = block.clone();
            let mut b = out.clone();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            // Replaying the same positions step by step reproduces the output,
            // and each step touches two neighbouring positions only.
            let mut rng = rng::derive(seed, "noise");
            let mut cur = block.clone();
            if cur.len() >= 2 {
                for _ in 0..cur.len() / 2 {
                    let before = cur.clone();
                    let i = rng.random_range(0..cur.len() - 1);
                    cur.swap(i, i + 1);
                    let changed: Vec<usize> = (0..cur.len()).filter(|&k| cur[k] != before[k]).collect();
                    prop_assert!(changed.is_empty() || changed == vec![i, i + 1]);
                }
            }
            prop_assert_eq!(cur, out);
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let m = tiny([60, 60], 8, 8, 4);
        let pairs: Pairs = (0..10)
            .map(|i| {
                let b: Vec<u32> = (0..6).map(|k| 4 + ((i * 7 + k * 3) % 60) as u32).collect();
                (b.clone(), b)
            })
            .collect();
        let (loss, _) = m.batch_loss(&pairs, HIGH, HIGH, false);
        let expected = (64f64).ln();
        assert!((loss - expected).abs() / expected <= 0.2, "{loss} vs {expected}");
    }

    #[test]
    fn denoising_gradient_matches_finite_differences() {
        let m = tiny([7, 6], 5, 4, 11);
        let blocks = vec![vec![4, 5, 6, 7], vec![8, 9, 10], vec![5]];
        let pairs = denoising_pairs(&blocks, 0.5, &mut rng::derive(2, "noise"));
        assert_grad_matches(&m, &pairs, HIGH, HIGH);
        let low = vec![vec![4, 5, 9, 6, 7]];
        assert_grad_matches(&m, &denoising_pairs(&low, 0.5, &mut rng::derive(3, "noise")), LOW, LOW);
    }

    #[test]
    fn backtranslation_gradient_matches_finite_differences() {
        let m = tiny([7, 6], 5, 4, 12);
        let bt = backtranslation_pairs(&m, &[vec![4, 5, 6], vec![7, 8, 9, 4]], HIGH);
        let mut pairs = bt.pairs;
        if pairs.is_empty() {
            pairs.push((vec![4, 6], vec![4, 5, 6]));
        }
        assert_grad_matches(&m, &pairs, LOW, HIGH);
    }

    #[test]
    fn backtranslation_step_leaves_other_decoder_untouched() {
        let m = tiny([7, 6], 5, 4, 13);
        let pairs: Pairs = vec![(vec![4, 5, 6], vec![6, 7, 8]), (vec![9], vec![4])];
        let (_, g) = m.batch_loss(&pairs, LOW, HIGH, true);
        let g = g.unwrap();
        assert!(g[m.decoder_range(LOW)].iter().all(|&v| v == 0.0));
        assert!(g[m.decoder_range(HIGH)].iter().any(|&v| v != 0.0));
        assert!(g[..m.decoder_range(HIGH).start].iter().any(|&v| v != 0.0), "encoder gets gradient");
    }

    fn overfit(model: &mut TranslationModel, pairs: &Pairs, side: usize, steps: usize) -> f64 {
        let mut adam = Adam::new(model.params.len());
        let sched = TrainSchedule { lr: 1e-2, ..model.schedule.clone() };
        let mut loss = f64::INFINITY;
        for _ in 0..steps {
            let (l, g) = model.batch_loss(pairs, side, side, true);
            loss = l;
            adam.step(&mut model.params, &mut g.unwrap(), &sched);
        }
        model.batch_loss(pairs, side, side, false).0.min(loss)
    }

    #[test]
    fn overfits_a_single_block_and_beam_widths_agree() {
        let mut m = tiny([10, 10], 8, 8, 21);
        let pairs: Pairs = vec![(vec![5, 9, 6], vec![5, 9, 6])];
        let loss = overfit(&mut m, &pairs, HIGH, 500);
        assert!(loss <= 0.05, "final loss {loss}");
        let greedy = m.net.decode(&m.params, &m.caie[HIGH], &m.caie[HIGH], &[5, 9, 6], HIGH, 1, 0, 10);
        let beam = m.net.decode(&m.params, &m.caie[HIGH], &m.caie[HIGH], &[5, 9, 6], HIGH, 3, 0, 10);
        assert_eq!(greedy, vec![5, 9, 6]);
        assert_eq!(beam, greedy);
    }

    #[test]
    fn empty_pseudo_sources_are_skipped() {
        let mut m = tiny([6, 6], 4, 3, 5);
        let spec = m.tensor_specs().iter().find(|s| s.name == "dec1.b_o").unwrap().clone();
        m.params[spec.offset + EOS as usize] = 1e3;
        let bt = backtranslation_pairs(&m, &[vec![4, 5], vec![6]], HIGH);
        assert_eq!(bt.skipped, 2);
        assert!(bt.pairs.is_empty());
        m.mark_trained();
        let req = TranslationRequest { block: vec!["X0".into()], source: ArchId::X86, target: ArchId::Arm };
        assert_eq!(m.translate_block(&req, 2).unwrap().len(), 1);
    }

    fn toy_corpora() -> (MonoCorpus, MonoCorpus) {
        let a: Vec<Vec<&str>> = (0..30).map(|i| vec!["MOV", "ADD", if i % 2 == 0 { "SUB" } else { "CMP" }, "RET"]).collect();
        let b: Vec<Vec<&str>> = (0..30).map(|i| vec!["ldr", "add", if i % 3 == 0 { "sub" } else { "cmp" }]).collect();
        (
            MonoCorpus::from_word_blocks(ArchId::X86, crate::corpus::OptLevel::O0, &a, 1).unwrap(),
            MonoCorpus::from_word_blocks(ArchId::Arm, crate::corpus::OptLevel::O0, &b, 1).unwrap(),
        )
    }

    fn toy_run(iterations: usize, seed: u64) -> TranslationModel {
        let (a, b) = toy_corpora();
        let ea = random_matrix(a.vocab.words().to_vec(), 6, 1);
        let eb = random_matrix(b.vocab.words().to_vec(), 6, 2);
        let sched = TrainSchedule { iterations, batch_size: 4, hidden: 5, lr: 3e-3, ..TrainSchedule::default() };
        train_translator(&a, &b, &ea, &eb, &sched, seed).unwrap()
    }

    #[test]
    fn training_keeps_embeddings_frozen_and_is_deterministic() {
        let (a, b) = toy_corpora();
        let ea = random_matrix(a.vocab.words().to_vec(), 6, 1);
        let eb = random_matrix(b.vocab.words().to_vec(), 6, 2);
        let fresh = TranslationModel::new(ea, ArchId::X86, eb, ArchId::Arm, TrainSchedule { hidden: 5, ..TrainSchedule::default() }, 3).unwrap();
        let m1 = toy_run(30, 3);
        assert_eq!(m1.embedding_hash(), fresh.embedding_hash());
        assert_ne!(m1.params, fresh.params);
        let m2 = toy_run(30, 3);
        assert_eq!(m1.params, m2.params);
        assert_eq!(m1.losses, m2.losses);
        assert_eq!(m1.losses.len(), 30);
        let req = TranslationRequest { block: vec!["ldr".into(), "add".into()], source: ArchId::Arm, target: ArchId::X86 };
        assert_eq!(m1.translate_block(&req, 1).unwrap(), m2.translate_block(&req, 1).unwrap());
    }

    #[test]
    fn rejects_mismatched_inputs_and_untrained_use() {
        let (a, b) = toy_corpora();
        let ea = random_matrix(a.vocab.words().to_vec(), 6, 1);
        let eb = random_matrix(b.vocab.words().to_vec(), 6, 2);
        let sched = TrainSchedule { hidden: 5, ..TrainSchedule::default() };
        assert!(matches!(train_translator(&a, &b, &eb, &ea, &sched, 1), Err(Error::Config { .. })));
        let short = random_matrix(b.vocab.words().to_vec(), 4, 2);
        assert!(matches!(train_translator(&a, &b, &ea, &short, &sched, 1), Err(Error::DimensionMismatch { .. })));
        let m = TranslationModel::new(ea, ArchId::X86, eb, ArchId::Arm, sched, 1).unwrap();
        let req = TranslationRequest { block: vec!["ldr".into()], source: ArchId::Arm, target: ArchId::X86 };
        assert!(matches!(m.translate_block(&req, 1), Err(Error::Untrained)));
    }

    #[test]
    fn single_word_vocabularies_work() {
        let a = MonoCorpus::from_word_blocks(ArchId::X86, crate::corpus::OptLevel::O0, &vec![vec!["NOP"]; 5], 1).unwrap();
        let b = MonoCorpus::from_word_blocks(ArchId::Arm, crate::corpus::OptLevel::O0, &vec![vec!["nop", "nop"]; 5], 1).unwrap();
        let ea = random_matrix(a.vocab.words().to_vec(), 4, 1);
        let eb = random_matrix(b.vocab.words().to_vec(), 4, 2);
        let sched = TrainSchedule { iterations: 5, batch_size: 2, hidden: 3, ..TrainSchedule::default() };
        let m = train_translator(&a, &b, &ea, &eb, &sched, 1).unwrap();
        let req = TranslationRequest { block: vec!["nop".into()], source: ArchId::Arm, target: ArchId::X86 };
        let out = m.translate_block(&req, 2).unwrap();
        assert!(out.words().iter().all(|w| w == "NOP"));
    }

    #[test]
    fn unknown_words_map_to_unk_without_subwords() {
        let m = tiny([5, 5], 4, 3, 1);
        assert_eq!(m.lookup_ids(&["a2", "zzz"], LOW), vec![6, UNK]);
    }

    #[test]
    fn model_file_round_trip() {
        let m = toy_run(5, 8);
        let mut buf = Vec::new();
        m.write(&mut buf, "# test").unwrap();
        assert!(buf.starts_with(b"{\"format\":\"UBT1\""));
        let back = TranslationModel::read(&buf[..]).unwrap();
        for (x, y) in m.params.iter().zip(&back.params) {
            assert_eq!(*x as f32 as f64, *y);
        }
        assert_eq!(back.losses, m.losses);
        assert_eq!(back.archs(), m.archs());
        let mut again = Vec::new();
        back.write(&mut again, "# test").unwrap();
        assert_eq!(buf, again);
        assert!(TranslationModel::read(&buf[..buf.len() - 3]).is_err());
    }
}
