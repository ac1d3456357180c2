//! Neural program repair for MiniLang: subword tokenization, a pre-trained
//! code language model feeding a convolutional translation model, code-aware
//! beam search and test-based patch validation.

pub mod config;
pub mod apr;
pub mod bench;
pub mod corpus;
mod dense;
pub mod infer;
pub mod plm;
pub mod repair;
pub mod search;
pub mod lang;
pub mod tokenizer;
