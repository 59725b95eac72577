//! Corpora, vocabularies, image feature grids and checkpoints.

mod binary;
pub mod checkpoint;
pub mod corpus;
pub mod features;
pub mod vocab;

pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use corpus::{
    corpus_stats, oov_rate, read_corpus, read_manifest, tokenize, write_lines, CorpusStats,
    ParallelCorpus,
};
pub use features::FeatureGrid;
pub use vocab::{Vocabulary, BOS, EOS, PAD, UNK};
