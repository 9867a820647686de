use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

use super::prompt::{ASSISTANT_TEMPLATE, SYSTEM_PROMPT, USER_TEMPLATE};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// The tokens the segmentation pipeline relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialVocab {
    pub seg_token: &'static str,
    pub image_token: &'static str,
    pub phrase_open: &'static str,
    pub phrase_close: &'static str,
}

pub const SPECIAL: SpecialVocab = SpecialVocab {
    seg_token: "[SEG]",
    image_token: "<image>",
    phrase_open: "<p>",
    phrase_close: "</p>",
};

/// Every reserved token, in id order.
pub const RESERVED: [&str; 8] = [PAD, UNK, BOS, EOS, "<image>", "[SEG]", "<p>", "</p>"];

const SPLIT_PUNCT: &[char] = &['.', ',', '?', '!', ':', ';'];

/// Splits on whitespace and peels trailing punctuation into separate words.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut tail = Vec::new();
        let mut core = word;
        while let Some(c) = core.chars().last() {
            if core.len() > 1 && SPLIT_PUNCT.contains(&c) {
                tail.push(c.to_string());
                core = &core[..core.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.push(core.to_string());
        out.extend(tail.into_iter().rev());
    }
    out
}

/// Word-level tokenizer over a closed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidData(format!("invalid vocabulary entry {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidData(format!("token {t:?} appears more than once")));
            }
        }
        for r in RESERVED {
            if !index.contains_key(r) {
                return Err(Error::InvalidData(format!("vocabulary lacks reserved token {r}")));
            }
        }
        Ok(Tokenizer { tokens, index })
    }

    /// Reserved tokens, the prompt template words, then the given words in sorted order.
    pub fn for_corpus<'a>(extra: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in [SYSTEM_PROMPT, USER_TEMPLATE, ASSISTANT_TEMPLATE] {
            for w in split_words(text) {
                if !w.starts_with('{') {
                    words.insert(w);
                }
            }
        }
        for e in extra {
            words.extend(split_words(e));
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !RESERVED.contains(&w.as_str())));
        Tokenizer::from_tokens(tokens).expect("reserved tokens are present and distinct")
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

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn reserved(&self, token: &str) -> u32 {
        self.index[token]
    }

    pub fn pad_id(&self) -> u32 {
        self.reserved(PAD)
    }
    pub fn unk_id(&self) -> u32 {
        self.reserved(UNK)
    }
    pub fn bos_id(&self) -> u32 {
        self.reserved(BOS)
    }
    pub fn eos_id(&self) -> u32 {
        self.reserved(EOS)
    }
    pub fn image_id(&self) -> u32 {
        self.reserved(SPECIAL.image_token)
    }
    pub fn seg_id(&self) -> u32 {
        self.reserved(SPECIAL.seg_token)
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or_else(|| self.unk_id()))
            .collect()
    }

    /// Joins words with single spaces, attaching punctuation to the preceding word.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK);
            let attach = tok.len() == 1 && tok.chars().all(|c| SPLIT_PUNCT.contains(&c));
            if !out.is_empty() && !attach {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Tokenizer::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }
}
