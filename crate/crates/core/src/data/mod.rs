//! Corpus, lexicon and benchmark data types with their JSONL/TSV loaders.

mod bench;
pub mod jsonl;
mod lexicon;
mod records;

pub use bench::{
    load_crows, load_stereoset, Candidate, CrowSPair, Label, StereoSetInstance, StereoSetVariant,
    GENDER,
};
pub use lexicon::{Gender, GenderLexicon, WordPair};
pub use records::{
    load_augmented, load_corpus, load_counterfactuals, AugmentedCounterfactual, CorpusExample,
    Counterfactual, Flip, Sample,
};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: impl AsRef<std::path::Path>) -> crate::Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
