//! Datasets: the canonical line format, vocabularies, WikiBio import and a
//! synthetic biography generator.

mod example;
pub mod synth;
mod vocab;
pub mod wikibio;

use std::path::Path;

use thiserror::Error;

pub use example::{
    open_examples, parse_examples, parse_infobox, parse_infoboxes, parse_line, serialize_example,
    write_examples, Domain, Example, ExampleReader, Field, Infobox, DESCRIPTION_MARKER,
};
pub use synth::{name_pool, synth_generate, DomainMix, NameStyle, SynthConfig};
pub use vocab::{Vocabulary, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN};
pub use wikibio::{import_wikibio, ImportReport};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("read error: {0}")]
    Read(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{0}: zero valid examples")]
    NoExamples(String),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 80/10/10 assignment by a fixed hash of the example index.
pub fn split_of(index: usize) -> Split {
    match splitmix64(index as u64) % 10 {
        0..=7 => Split::Train,
        8 => Split::Valid,
        _ => Split::Test,
    }
}

/// Partitions `examples` into `(train, valid, test)` with [`split_of`].
pub fn split_examples(examples: Vec<Example>) -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, ex) in examples.into_iter().enumerate() {
        match split_of(i) {
            Split::Train => train.push(ex),
            Split::Valid => valid.push(ex),
            Split::Test => test.push(ex),
        }
    }
    (train, valid, test)
}
