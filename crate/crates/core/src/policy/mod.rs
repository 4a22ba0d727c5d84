//! A small pre-norm causal transformer used as the trainable token policy.

mod checkpoint;
mod model;
mod sample;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use model::{init_policy, Decoder, ModelShape, PolicyParams, TapeModel};
pub use sample::{sample, sample_branches, Decoding, Sampled};

/// Ordered token alphabet with its special symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    pub bos: u32,
    pub eos: u32,
    pub sep: u32,
    pub pad: u32,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, bos: u32, eos: u32, sep: u32, pad: u32) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(validation(format!(
                "vocab needs at least 4 tokens, got {}",
                tokens.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = tokens.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(validation(format!("duplicate token `{dup}`")));
        }
        let special = [bos, eos, sep, pad];
        if special.iter().any(|&s| s as usize >= tokens.len()) {
            return Err(validation("special token index out of range"));
        }
        for (i, a) in special.iter().enumerate() {
            if special[i + 1..].contains(a) {
                return Err(validation("special token indices must be distinct"));
            }
        }
        Ok(Self {
            tokens,
            bos,
            eos,
            sep,
            pad,
        })
    }

    /// Specials, the ten digits, `+`, `=` and the answer delimiter `#`.
    pub fn arithmetic() -> Self {
        let mut tokens: Vec<String> = ["<bos>", "<eos>", "<sep>", "<pad>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend(["+", "=", "#"].iter().map(|s| s.to_string()));
        Self::new(tokens, 0, 1, 2, 3).expect("built-in vocab is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.tokens
            .iter()
            .position(|t| t == symbol)
            .map(|i| i as u32)
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(&self, id: u32) -> bool {
        [self.bos, self.eos, self.sep, self.pad].contains(&id)
    }

    /// FNV-1a over the token list and special indices.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for t in &self.tokens {
            eat(t.as_bytes());
            eat(&[0]);
        }
        for s in [self.bos, self.eos, self.sep, self.pad] {
            eat(&s.to_le_bytes());
        }
        h
    }

    /// Human-readable rendering, specials in angle brackets.
    pub fn render(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.symbol(i))
            .collect::<Vec<_>>()
            .join("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Query,
    Response,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub role: Role,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, role: Role) -> Self {
        Self { ids, role }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check(&self, vocab: &Vocab) -> Result<()> {
        match self.ids.iter().find(|&&i| i as usize >= vocab.len()) {
            Some(bad) => Err(validation(format!(
                "token id {bad} outside vocab of {}",
                vocab.len()
            ))),
            None => Ok(()),
        }
    }

    pub fn concat(&self, other: &TokenSeq) -> Vec<u32> {
        let mut v = self.ids.clone();
        v.extend_from_slice(&other.ids);
        v
    }
}

/// Frozen, shareable copy of the policy with a version tag.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: Arc<PolicyParams>,
    pub version: u64,
}

impl PolicySnapshot {
    pub fn new(params: &PolicyParams, version: u64) -> Self {
        Self {
            params: Arc::new(params.clone()),
            version,
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}
