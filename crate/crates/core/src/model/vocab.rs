use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Instance, ModelError};

pub type TokenId = usize;

pub const CLS: TokenId = 0;
pub const SEP: TokenId = 1;
pub const PAD: TokenId = 2;
pub const MASK: TokenId = 3;

const SPECIALS: [&str; 4] = ["[CLS]", "[SEP]", "[PAD]", "[MASK]"];

/// Closed word-level vocabulary with the four specials at ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            let w = w.as_ref();
            if !all.iter().any(|x| x == w) {
                all.push(w.to_owned());
            }
        }
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: all, index }
    }

    /// Vocabulary over every word the synthetic generators can emit.
    pub fn synthetic() -> Self {
        Self::new(&crate::counterfactuals::lexicon::all_words())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        id <= MASK
    }

    fn lookup(&self, word: &str) -> Result<TokenId, ModelError> {
        self.id(word)
            .ok_or_else(|| ModelError::UnknownWord(word.to_owned()))
    }

    /// `CLS ‖ q ‖ SEP ‖ c ‖ SEP`, padded with PAD to `max_seq`.
    pub fn encode(&self, instance: &Instance, max_seq: usize) -> Result<Encoded, ModelError> {
        if instance.question.is_empty() {
            return Err(ModelError::EmptySegment("question"));
        }
        if instance.context.is_empty() {
            return Err(ModelError::EmptySegment("context"));
        }
        let len = instance.question.len() + instance.context.len() + 3;
        if len > max_seq {
            return Err(ModelError::Overflow { len, max_seq });
        }
        let mut ids = Vec::with_capacity(max_seq);
        ids.push(CLS);
        for w in &instance.question {
            ids.push(self.lookup(w)?);
        }
        ids.push(SEP);
        let context_start = ids.len();
        for w in &instance.context {
            ids.push(self.lookup(w)?);
        }
        let context_end = ids.len();
        ids.push(SEP);
        ids.resize(max_seq, PAD);
        Ok(Encoded {
            ids,
            question: 1..1 + instance.question.len(),
            context: context_start..context_end,
        })
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or("[UNK]").to_owned())
            .collect()
    }
}

/// An encoded `CLS ‖ q ‖ SEP ‖ c ‖ SEP ‖ PAD…` sequence with its segment ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoded {
    pub ids: Vec<TokenId>,
    pub question: Range<usize>,
    pub context: Range<usize>,
}

impl Encoded {
    /// Number of non-PAD positions.
    pub fn content_len(&self) -> usize {
        self.ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1)
    }

    /// Drops trailing PAD; PAD positions never influence non-PAD outputs.
    pub fn trimmed(&self) -> Encoded {
        let n = self.content_len();
        Encoded {
            ids: self.ids[..n].to_vec(),
            question: self.question.clone(),
            context: self.context.clone(),
        }
    }

    /// Re-pads to a new total length (must cover the content).
    pub fn padded_to(&self, len: usize) -> Encoded {
        let mut out = self.trimmed();
        out.ids.resize(len.max(out.ids.len()), PAD);
        out
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions holding question or context words (not CLS, SEP, PAD).
    pub fn word_positions(&self) -> Vec<usize> {
        self.question.clone().chain(self.context.clone()).collect()
    }

    pub fn keep_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&i| i != PAD).collect()
    }

    /// Copy with the listed positions replaced by MASK.
    pub fn masked(&self, positions: impl IntoIterator<Item = usize>) -> Encoded {
        let mut out = self.clone();
        for p in positions {
            out.ids[p] = MASK;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Answer;

    fn toy_vocab() -> Vocabulary {
        Vocabulary::new(&["are", "a", "b", "both", "red", "is", "."])
    }

    #[test]
    fn specials_are_reserved() {
        let v = toy_vocab();
        assert_eq!(v.id("[CLS]"), Some(0));
        assert_eq!(v.id("[SEP]"), Some(1));
        assert_eq!(v.id("[PAD]"), Some(2));
        assert_eq!(v.id("[MASK]"), Some(3));
        assert_eq!(v.id("are"), Some(4));
    }

    #[test]
    fn encodes_question_then_context() {
        let v = toy_vocab();
        let inst = Instance::new("t", "are a b both red", "a is red . b is red .", Answer::YesNo(true));
        let enc = v.encode(&inst, 20).unwrap();
        let words = v.decode(&enc.ids);
        let expected = "[CLS] are a b both red [SEP] a is red . b is red . [SEP]";
        let mut want: Vec<String> = expected.split(' ').map(str::to_owned).collect();
        want.resize(20, "[PAD]".into());
        assert_eq!(words, want);
        assert_eq!(enc.question, 1..6);
        assert_eq!(enc.context, 7..15);
        assert_eq!(enc.content_len(), 16);
    }

    #[test]
    fn empty_context_is_rejected() {
        let v = toy_vocab();
        let inst = Instance::new("t", "are a b both red", "", Answer::YesNo(true));
        assert_eq!(v.encode(&inst, 20), Err(ModelError::EmptySegment("context")));
    }

    #[test]
    fn unknown_word_and_overflow() {
        let v = toy_vocab();
        let inst = Instance::new("t", "are a c", "a is red .", Answer::YesNo(true));
        assert_eq!(v.encode(&inst, 20), Err(ModelError::UnknownWord("c".into())));
        let inst = Instance::new("t", "are a b", "a is red .", Answer::YesNo(true));
        assert!(matches!(v.encode(&inst, 8), Err(ModelError::Overflow { len: 10, .. })));
    }

    #[test]
    fn synthetic_vocabulary_has_no_duplicates() {
        let v = Vocabulary::synthetic();
        for (i, w) in v.words.iter().enumerate() {
            assert_eq!(v.id(w), Some(i));
        }
    }
}
