//! Word-level vocabulary with reserved padding, unknown, separator and
//! candidate-start tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{io_err, CoreError, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const SEP: TokenId = 2;
const ST_BASE: TokenId = 3;
const HEADER: &str = "#rrx-vocab v1";

/// Token ids plus the token→word map (identity here, one word per token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<TokenId>,
    pub word_of_token: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    num_st: usize,
}

fn reserved_tokens(num_st: usize) -> Vec<String> {
    let mut t = vec!["[PAD]".to_string(), "[UNK]".to_string(), "[SEP]".to_string()];
    t.extend((0..num_st).map(|i| format!("<ST_{i}>")));
    t
}

impl Vocabulary {
    /// Only the reserved tokens; `num_st` candidate-start tokens `<ST_0>..`.
    pub fn new(num_st: usize) -> Self {
        let tokens = reserved_tokens(num_st);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index, num_st }
    }

    /// Adds words in first-seen order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, num_st: usize) -> Self {
        let mut v = Self::new(num_st);
        for w in words {
            v.add(w);
        }
        v
    }

    pub fn add(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_st(&self) -> usize {
        self.num_st
    }

    pub fn st(&self, i: usize) -> Result<TokenId> {
        if i >= self.num_st {
            return Err(CoreError::Contract(format!(
                "candidate slot {i} needs <ST_{i}> but only {} are reserved",
                self.num_st
            )));
        }
        Ok(ST_BASE + i as TokenId)
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Whitespace tokenization.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let ids: Vec<TokenId> = text.split_whitespace().map(|w| self.id(w)).collect();
        let word_of_token = (0..ids.len()).collect();
        Tokenized { ids, word_of_token }
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER} num_st={}\n", self.num_st);
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines.next().unwrap_or_default();
        let num_st = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.trim().strip_prefix("num_st="))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| CoreError::Validation(format!("bad vocabulary header `{header}`")))?;
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let reserved = reserved_tokens(num_st);
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(CoreError::Validation("vocabulary reserved-token manifest mismatch".into()));
        }
        let mut v = Self::new(num_st);
        for t in &tokens[reserved.len()..] {
            v.add(t);
        }
        if v.len() != tokens.len() {
            return Err(CoreError::Validation("duplicate token in vocabulary file".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}
