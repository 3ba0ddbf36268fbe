use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trie::Token;

/// Ids below this are raw bytes; word pieces start here.
pub const BYTE_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("token {0} is outside the vocabulary")]
    UnknownToken(Token),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
}

/// Word/byte tokenizer with a vocabulary fixed at corpus ingest.
///
/// Text splits into maximal runs of alphanumerics and `_`, and single other
/// characters. Pieces seen at ingest get stable ids in sorted order; any
/// other piece falls back to its UTF-8 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pieces: Vec<String>,
    lookup: HashMap<String, Token>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn split_pieces(text: &str) -> impl Iterator<Item = &str> {
    let mut rest = text;
    std::iter::from_fn(move || {
        let first = rest.chars().next()?;
        let len = if is_word_char(first) {
            rest.find(|c: char| !is_word_char(c)).unwrap_or(rest.len())
        } else {
            first.len_utf8()
        };
        let (piece, tail) = rest.split_at(len);
        rest = tail;
        Some(piece)
    })
}

impl Tokenizer {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = texts.into_iter().flat_map(split_pieces).collect();
        Self::from_pieces(set.into_iter().map(str::to_string).collect())
    }

    /// Rebuilds a tokenizer from its stored piece list.
    pub fn from_pieces(pieces: Vec<String>) -> Self {
        let lookup = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), BYTE_TOKENS + i as Token))
            .collect();
        Self { pieces, lookup }
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_TOKENS as usize + self.pieces.len()
    }

    /// Hex SHA-256 over the piece list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.pieces {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn encode(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for piece in split_pieces(text) {
            match self.lookup.get(piece) {
                Some(&id) => out.push(id),
                None => out.extend(piece.bytes().map(Token::from)),
            }
        }
        out
    }

    pub fn decode(&self, tokens: &[Token]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &t in tokens {
            if t < BYTE_TOKENS {
                bytes.push(t as u8);
            } else {
                let piece = self.pieces.get((t - BYTE_TOKENS) as usize).ok_or(TokenizerError::UnknownToken(t))?;
                bytes.extend_from_slice(piece.as_bytes());
            }
        }
        String::from_utf8(bytes).map_err(|_| TokenizerError::InvalidUtf8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_split_words_and_symbols() {
        let p: Vec<&str> = split_pieces("# Table: sat_scores\n- cds [PK]").collect();
        assert_eq!(p, vec!["#", " ", "Table", ":", " ", "sat_scores", "\n", "-", " ", "cds", " ", "[", "PK", "]"]);
    }

    #[test]
    fn known_pieces_get_stable_ids() {
        let a = Tokenizer::build(["b a", "c"]);
        let b = Tokenizer::build(["c", "b a"]);
        assert_eq!(a, b);
        assert_eq!(a.encode("a b"), vec![257, 256, 258]);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn unknown_pieces_fall_back_to_bytes() {
        let t = Tokenizer::build(["hello"]);
        let toks = t.encode("hello wörld");
        assert_eq!(toks[0], BYTE_TOKENS);
        assert_eq!(t.decode(&toks).unwrap(), "hello wörld");
        assert!(matches!(t.decode(&[9999]), Err(TokenizerError::UnknownToken(9999))));
        assert!(matches!(t.decode(&[0xC3]), Err(TokenizerError::InvalidUtf8)));
    }

    #[test]
    fn embedded_text_tokenizes_identically() {
        let t = Tokenizer::build(["# Table: x\n- id\n"]);
        let alone = t.encode("# Table: x\n- id\n");
        let embedded = t.encode("zz# Table: x\n- id\nQuestion");
        assert_eq!(&embedded[2..2 + alone.len()], alone.as_slice());
    }
}
