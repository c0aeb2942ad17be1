//! Synthetic report corpora, tokenization, vocabulary and dataset splits.

pub mod corpus;
pub mod generator;
pub mod split;
pub mod tokenize;
pub mod vocab;

pub use corpus::{Corpus, Document};
pub use generator::{generate, generate_dvt_corpus, generate_traced, generate_pe_corpus, DocTrace, GeneratorSpec, Preset};
pub use split::{split, Split};
pub use tokenize::{tokenize, word_count};
pub use vocab::{build_vocab, encode, Encoded, Vocab, PAD, UNK};
