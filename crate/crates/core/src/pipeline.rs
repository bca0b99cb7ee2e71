//! End-to-end runs on synthetic twin corpora: embeddings, mapping,
//! translation and the downstream checks against the generator's ground
//! truth.

use serde::{Deserialize, Serialize};

use crate::asmtext::{ArchId, FunctionRecord};
use crate::corpus::{flatten_functions, MonoCorpus, OptLevel};
use crate::embed::{train_maie, EmbedMode, EmbedTrainConfig};
use crate::error::{Error, Result};
use crate::evalkit::{bleu_report, function_embedding, BleuReport, TfWeighting};
use crate::toyoracle::{generate_twin_corpus, oracle_translate, Direction, Lexicon, TwinCorpus, TwinSpec};
use crate::vulndetect::{evaluate_detection, oversample, train_linear_svm, LabeledSet, LinearModel, Metrics, OversampleConfig};
use crate::xlate::{train_translator, TrainSchedule, TranslationModel};
use crate::xmap::{align, Alignment, SelfLearnConfig};

/// SVM regularization for detectors trained on toy function embeddings.
pub const TOY_SVM_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub twin: TwinSpec,
    pub embed: EmbedTrainConfig,
    pub map: SelfLearnConfig,
    pub schedule: TrainSchedule,
    pub beam: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    /// Desk-scale settings that train in a few minutes on one core.
    fn default() -> Self {
        ToyConfig {
            twin: TwinSpec { motif_words: 4, motif_fraction: 0.05, ..TwinSpec::default() },
            embed: EmbedTrainConfig {
                dim: 32,
                epochs: 80,
                window: 5,
                buckets: 20_000,
                mode: EmbedMode::Subword,
                ..EmbedTrainConfig::default()
            },
            map: SelfLearnConfig::default(),
            schedule: TrainSchedule { iterations: 600, batch_size: 16, lr: 3e-3, hidden: 32, ..TrainSchedule::default() },
            beam: 1,
            seed: 1,
        }
    }
}

impl ToyConfig {
    /// Propagates the top-level seed into every stage.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.twin.seed = seed;
        self.embed.seed = seed;
        self.map.seed = seed;
        self
    }
}

/// Both sides of a twin corpus as mono-architecture block corpora.
pub fn twin_corpora(twin: &TwinCorpus) -> Result<(MonoCorpus, MonoCorpus)> {
    let (a, _) = flatten_functions(&twin.a);
    let (b, _) = flatten_functions(&twin.b);
    Ok((
        MonoCorpus::from_word_blocks(ArchId::X86, OptLevel::O0, &a, 1)?,
        MonoCorpus::from_word_blocks(ArchId::Arm, OptLevel::O0, &b, 1)?,
    ))
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub twin: TwinCorpus,
    pub alignment: Alignment,
    pub model: TranslationModel,
    /// Translations of every B-side function, in B order.
    pub translations: Vec<FunctionRecord>,
    pub token_accuracy: f64,
    pub bleu: BleuReport,
}

/// Trains every stage on a generated twin corpus and scores the B → A
/// translations against the hidden twins.
pub fn run_toy(cfg: &ToyConfig) -> Result<ToyRun> {
    let twin = generate_twin_corpus(&cfg.twin)?;
    let (corpus_a, corpus_b) = twin_corpora(&twin)?;
    log::info!("training embeddings: {} / {} words", corpus_a.vocab.len(), corpus_b.vocab.len());
    let maie_a = train_maie(&corpus_a, &cfg.embed)?.embeddings;
    let maie_b = train_maie(&corpus_b, &cfg.embed)?.embeddings;
    let alignment = align(&maie_b, &maie_a, ArchId::Arm, ArchId::X86, &cfg.map)?;
    log::info!("mapping converged after {} iterations", alignment.outcome.iterations);
    let model = train_translator(
        &corpus_a,
        &corpus_b,
        &alignment.target_caie,
        &alignment.source_caie,
        &cfg.schedule,
        cfg.seed,
    )?;
    let translations = twin
        .b
        .iter()
        .map(|f| model.translate_function(f, ArchId::X86, cfg.beam))
        .collect::<Result<Vec<_>>>()?;
    let token_accuracy = token_accuracy(&twin.lexicon, &twin.b, &translations)?;
    let references: Vec<FunctionRecord> = twin.b_to_a.iter().map(|&i| twin.a[i].clone()).collect();
    let bleu = bleu_report(&translations, &references)?;
    Ok(ToyRun { twin, alignment, model, translations, token_accuracy, bleu })
}

/// Clipped unigram matches against the lexicon image of each source block,
/// divided by the longer of the two lengths, pooled over all blocks.
/// `sources` are low-resource functions and `translations` their outputs.
pub fn token_accuracy(lexicon: &Lexicon, sources: &[FunctionRecord], translations: &[FunctionRecord]) -> Result<f64> {
    if sources.len() != translations.len() {
        return Err(Error::DimensionMismatch { expected: sources.len(), got: translations.len() });
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (src, out) in sources.iter().zip(translations) {
        if src.blocks.len() != out.blocks.len() {
            return Err(Error::format("translation", format!("`{}` has {} blocks, its source {}", out.name, out.blocks.len(), src.blocks.len())));
        }
        for (sb, ob) in src.blocks.iter().zip(&out.blocks) {
            let image = oracle_translate(&sb.words(), lexicon, Direction::BToA)?;
            let mut cand = ob.words();
            cand.sort();
            let mut refs = image;
            refs.sort();
            let (mut i, mut j) = (0, 0);
            while i < cand.len() && j < refs.len() {
                match cand[i].cmp(&refs[j]) {
                    std::cmp::Ordering::Equal => {
                        hits += 1;
                        i += 1;
                        j += 1;
                    }
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                }
            }
            total += cand.len().max(refs.len());
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[derive(Debug, Clone)]
pub struct VulnTransfer {
    pub model: LinearModel,
    pub model_hash_before: String,
    pub model_hash_after: String,
    pub train_counts: (usize, usize),
    pub metrics: Metrics,
}

/// Trains a detector on A-side function embeddings (motif = vulnerable) and
/// applies it unchanged to the translated B-side functions.
pub fn vuln_transfer(run: &ToyRun, oversampling: &OversampleConfig, lambda: f64, epochs: usize, seed: u64) -> Result<VulnTransfer> {
    let caie = run.model.caie(crate::xlate::HIGH);
    let embed = |f: &FunctionRecord| function_embedding(f, caie, TfWeighting::Raw).map(|e| e.vector);
    let train_x = run.twin.a.iter().map(embed).collect::<Result<Vec<_>>>()?;
    let train = LabeledSet::new(train_x, run.twin.motif_a.clone())?;
    let train = oversample(&train, oversampling)?;
    let fit = train_linear_svm(&train, lambda, epochs, seed)?;
    let model = fit.model;
    let model_hash_before = model.hash();
    let test_x = run.translations.iter().map(embed).collect::<Result<Vec<_>>>()?;
    let test_y: Vec<bool> = run.twin.b_to_a.iter().map(|&i| run.twin.motif_a[i]).collect();
    let test = LabeledSet::new(test_x, test_y)?;
    let metrics = evaluate_detection(&model, &test)?;
    Ok(VulnTransfer {
        model_hash_after: model.hash(),
        model_hash_before,
        train_counts: train.class_counts(),
        model,
        metrics,
    })
}
