//! Context-aware counterfactual data augmentation toolkit.
//!
//! The pipeline flips gendered words in a corpus, asks a generation backend to
//! rephrase each counterfactual with richer context, scores the rephrasings'
//! semantic entropy under the target model, drops the most uncertain ones,
//! fine-tunes the target model on what remains and tracks intrinsic and
//! extrinsic bias metrics per epoch.

pub mod augment;
pub mod backends;
pub mod cda;
pub mod data;
pub mod entropy;
pub mod error;
pub mod extrinsic;
pub mod finetune;
pub mod http;
pub mod intrinsic;
pub mod pipeline;
pub mod plot;
pub mod synthetic;
pub mod text;
pub mod tokendist;

pub use error::{Error, ErrorCategory, Result};
