//! Unsupervised translation of disassembled basic blocks between instruction
//! set architectures, plus the downstream tasks built on top of it: function
//! similarity and vulnerability detection.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`asmtext`] parses disassembly listings and normalizes instructions into
//!   single-token words.
//! * [`corpus`] builds vocabularies and integer-encoded block corpora.
//! * [`embed`] trains skip-gram instruction embeddings per architecture.
//! * [`xmap`] aligns the low-resource embedding space with the high-resource
//!   one without supervision.
//! * [`xlate`] trains the shared-encoder, dual-decoder translator by denoising
//!   and on-the-fly backtranslation.
//! * [`evalkit`] and [`vulndetect`] hold the evaluation and downstream tasks.
//! * [`toyoracle`] generates synthetic twin corpora with known ground truth.

pub mod asmtext;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod toyoracle;
pub mod vulndetect;
pub mod xlate;
pub mod xmap;

pub use asmtext::{ArchId, BasicBlock, FunctionRecord, Instruction, NormalizedInstruction, TagKind};
pub use corpus::{CorpusStats, MonoCorpus, OptLevel, Vocab};
pub use embed::{EmbedMode, EmbedTrainConfig, EmbeddingMatrix, SubwordTable};
pub use error::{Error, Result};
pub use evalkit::{FunctionEmbedding, SimilarityPair, ThresholdPolicy};
pub use vulndetect::{LabeledSet, LinearModel, Metrics, OversampleConfig, OversampleMethod};
pub use xlate::{NoiseConfig, TrainSchedule, TranslationModel, TranslationRequest};
pub use xmap::{MappingTransform, SeedDictionary, SelfLearnConfig};

/// Version string stamped into artifact provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
