//! Shared fixtures for the benchmarks.

use bintrans_core::embed::{train_maie, EmbedTrainConfig};
use bintrans_core::pipeline::{twin_corpora, ToyConfig};
use bintrans_core::toyoracle::{generate_twin_corpus, TwinCorpus, TwinSpec};
use bintrans_core::xmap::{align, Alignment};
use bintrans_core::{ArchId, MonoCorpus, TrainSchedule};

pub struct Fixture {
    pub twin: TwinCorpus,
    pub high: MonoCorpus,
    pub low: MonoCorpus,
    pub embed: EmbedTrainConfig,
    pub alignment: Alignment,
    pub schedule: TrainSchedule,
}

/// A small twin corpus with trained and aligned embeddings.
pub fn fixture() -> Fixture {
    let cfg = ToyConfig::default();
    let twin = generate_twin_corpus(&TwinSpec { blocks: 500, vocab_size: 100, ..cfg.twin }).expect("twin corpus");
    let (high, low) = twin_corpora(&twin).expect("corpora");
    let embed = EmbedTrainConfig { epochs: 5, ..cfg.embed };
    let maie_high = train_maie(&high, &embed).expect("embeddings").embeddings;
    let maie_low = train_maie(&low, &embed).expect("embeddings").embeddings;
    let alignment = align(&maie_low, &maie_high, ArchId::Arm, ArchId::X86, &cfg.map).expect("alignment");
    Fixture { twin, high, low, embed, alignment, schedule: cfg.schedule }
}
