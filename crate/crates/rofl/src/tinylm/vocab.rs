//! Byte-level vocabulary with a handful of structural tokens.
//!
//! Token ids 0..=255 are raw byte values; six special ids follow. The
//! tokenizer is exact: detokenize(tokenize(s)) == s for every byte string.

use crate::{Error, Result};

/// A single token id, always < the vocabulary size of the model using it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u16);

impl TokenId {
    pub fn is_byte(self) -> bool {
        self.0 < 256
    }
}

impl From<u8> for TokenId {
    fn from(b: u8) -> Self {
        TokenId(b as u16)
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Total vocabulary size: 256 byte tokens plus the specials below.
pub const VOCAB_SIZE: usize = 262;

pub const BOS: TokenId = TokenId(256);
pub const EOS: TokenId = TokenId(257);
pub const SYS_OPEN: TokenId = TokenId(258);
pub const SYS_CLOSE: TokenId = TokenId(259);
pub const INST_OPEN: TokenId = TokenId(260);
pub const INST_CLOSE: TokenId = TokenId(261);

/// Map a byte string to its token sequence (byte identity).
pub fn tokenize(text: &[u8]) -> Vec<TokenId> {
    text.iter().map(|&b| TokenId(b as u16)).collect()
}

/// Map byte tokens back to bytes. Special tokens have no byte image.
pub fn detokenize(tokens: &[TokenId]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|t| {
            if t.is_byte() {
                Ok(t.0 as u8)
            } else {
                Err(Error::InvalidToken {
                    id: t.0,
                    vocab: 256,
                })
            }
        })
        .collect()
}

/// Structural prompt framing: INST_OPEN SYS_OPEN h SYS_CLOSE x INST_CLOSE.
///
/// Models whose vocabulary is too small to contain the framing tokens
/// (hand-built test models) fall back to bare concatenation of h and x.
pub fn template(vocab: usize, system: &[TokenId], prompt: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(system.len() + prompt.len() + 4);
    if vocab >= VOCAB_SIZE {
        out.push(INST_OPEN);
        out.push(SYS_OPEN);
        out.extend_from_slice(system);
        out.push(SYS_CLOSE);
        out.extend_from_slice(prompt);
        out.push(INST_CLOSE);
    } else {
        out.extend_from_slice(system);
        out.extend_from_slice(prompt);
    }
    out
}

/// Position of the first prompt token inside `template(vocab, system, prompt)`.
pub fn template_prompt_offset(vocab: usize, system_len: usize) -> usize {
    if vocab >= VOCAB_SIZE {
        3 + system_len
    } else {
        system_len
    }
}
