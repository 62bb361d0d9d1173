//! Whitespace-splitting toy tokenizer with a byte-level fallback.
//!
//! Ids `0..256` are raw bytes. In word mode, ids from 256 upward are whole
//! words from a fixed word list: a maximal run of non-whitespace bytes that
//! exactly matches a listed word becomes one token, anything else (including
//! all whitespace) falls back to bytes. Detokenizing concatenates the bytes,
//! so `detokenize(tokenize(s)) == s` for every string.

use std::collections::HashMap;

use super::TokenId;

pub const BYTE_TOKENS: usize = 256;

const DEFAULT_WORDS: &str = include_str!("../../assets/vocab.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerMode {
    Bytes,
    Words,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Tokenizer {
    /// Pure byte-level tokenizer (vocabulary of 256).
    pub fn bytes() -> Self {
        Self {
            mode: TokenizerMode::Bytes,
            words: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Word-mode tokenizer with an explicit word list. Duplicates and
    /// entries containing whitespace are skipped.
    pub fn with_words<I, W>(words: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: Into<String>,
    {
        let mut out = Self {
            mode: TokenizerMode::Words,
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in words {
            let w: String = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) || out.index.contains_key(&w) {
                continue;
            }
            out.index
                .insert(w.clone(), (BYTE_TOKENS + out.words.len()) as TokenId);
            out.words.push(w);
        }
        out
    }

    /// The bundled tokenizer for a model vocabulary of `vocab_size`: bytes
    /// plus the first `vocab_size - 256` bundled words. Returns `None` when
    /// the vocabulary cannot hold the byte fallback.
    pub fn for_vocab(vocab_size: usize) -> Option<Self> {
        if vocab_size < BYTE_TOKENS {
            return None;
        }
        if vocab_size == BYTE_TOKENS {
            return Some(Self::bytes());
        }
        let n = vocab_size - BYTE_TOKENS;
        Some(Self::with_words(
            DEFAULT_WORDS
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .take(n),
        ))
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_TOKENS + self.words.len()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        if self.mode == TokenizerMode::Bytes {
            return bytes.iter().map(|&b| b as TokenId).collect();
        }
        let mut out = Vec::with_capacity(bytes.len() / 2);
        let mut rest = text;
        while !rest.is_empty() {
            let ws_end = rest
                .find(|c: char| !c.is_whitespace())
                .unwrap_or(rest.len());
            out.extend(rest[..ws_end].bytes().map(|b| b as TokenId));
            rest = &rest[ws_end..];
            let word_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let word = &rest[..word_end];
            match self.index.get(word) {
                Some(&id) => out.push(id),
                None => out.extend(word.bytes().map(|b| b as TokenId)),
            }
            rest = &rest[word_end..];
        }
        out
    }

    /// Raw bytes of a token sequence. Ids beyond the vocabulary decode to
    /// nothing.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id < BYTE_TOKENS {
                out.push(id as u8);
            } else if let Some(w) = self.words.get(id - BYTE_TOKENS) {
                out.extend_from_slice(w.as_bytes());
            }
        }
        out
    }

    /// Text of a token sequence; invalid UTF-8 is replaced lossily.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }
}
