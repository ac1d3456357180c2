//! Word-level tokenization with literal abstraction, BPE subwords with `@@`
//! continuation markers, and the inverse path back to source text.

pub mod bpe;
pub mod donor;
pub mod vocab;
pub mod word;

use thiserror::Error;

pub use bpe::{bpe_decode, bpe_encode, train_bpe, BpeModel};
pub use donor::{detokenize, Donor, DonorPool};
pub use vocab::Vocab;
pub use word::{detokenize_with_refs, word_tokenize, TokenSeq, BOS, CAMEL, EOS, NUM, SEP, STR, UNK};

pub const DESK_TARGET_VOCAB: usize = 4_000;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("symbol `{0}` is outside the tokenizer alphabet")]
    Alphabet(String),
    #[error("final token carries a continuation marker")]
    DanglingContinuation,
    #[error("no donor literal for placeholder `{0}`")]
    MissingDonor(String),
    #[error("malformed tokenizer file: {0}")]
    Format(String),
}

/// The model-facing tokenization: either plain word-level tokens (unknown
/// words become `<UNK>`) or BPE subwords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Codec {
    Word(Vocab),
    Bpe(BpeModel),
}

impl Codec {
    pub fn vocab(&self) -> &Vocab {
        match self {
            Codec::Word(v) => v,
            Codec::Bpe(m) => m.vocab(),
        }
    }

    pub fn is_bpe(&self) -> bool {
        matches!(self, Codec::Bpe(_))
    }

    /// Word-level tokens to model tokens.
    pub fn encode(&self, seq: &TokenSeq) -> Result<TokenSeq, TokenizerError> {
        match self {
            Codec::Bpe(m) => bpe_encode(seq, m),
            Codec::Word(v) => Ok(TokenSeq {
                tokens: seq
                    .tokens
                    .iter()
                    .map(|t| if v.contains(t) { t.clone() } else { UNK.to_string() })
                    .collect(),
                donor_refs: seq.donor_refs.clone(),
            }),
        }
    }

    pub fn encode_text(&self, text: &str) -> Result<TokenSeq, TokenizerError> {
        self.encode(&word_tokenize(text))
    }

    pub fn ids(&self, seq: &TokenSeq) -> Vec<usize> {
        let v = self.vocab();
        seq.tokens.iter().map(|t| v.id_or_unk(t)).collect()
    }

    /// Model tokens back to word-level tokens.
    pub fn decode(&self, tokens: &[String]) -> Result<Vec<String>, TokenizerError> {
        match self {
            Codec::Bpe(_) => Ok(bpe_decode(&TokenSeq::new(tokens.to_vec()))?.tokens),
            Codec::Word(_) => Ok(tokens.to_vec()),
        }
    }
}
