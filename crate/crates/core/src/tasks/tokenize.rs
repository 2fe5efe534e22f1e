use std::collections::{BTreeSet, HashMap};

use super::{Domain, Sample};
use crate::error::{Error, Result};
use crate::model::{TokenMatrix, PAD_ID};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const EOS: &str = "[EOS]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, EOS];
pub const UNK_ID: usize = 1;
const CLS_ID: usize = 2;
const SEP_ID: usize = 3;
const EOS_ID: usize = 4;

/// Lowercases, splits on whitespace, and emits every punctuation character
/// as its own token.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Token matrix plus per-row metadata, in sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub tokens: TokenMatrix,
    pub ids: Vec<String>,
    pub domains: Vec<Domain>,
    pub labels: Vec<bool>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Vocabulary {
    /// Special tokens first, then every token of `samples` in sorted order.
    pub fn build(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let words: BTreeSet<String> = samples
            .iter()
            .flat_map(|s| {
                tokenize_text(&s.premise)
                    .into_iter()
                    .chain(tokenize_text(&s.candidate))
            })
            .collect();
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(
                words
                    .into_iter()
                    .filter(|w| !SPECIAL_TOKENS.contains(&w.as_str())),
            )
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(Error::Validation(
                "vocabulary must start with the special tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary entry `{t}`"
                )));
            }
        }
        debug_assert_eq!(index[PAD], PAD_ID);
        Ok(Self { tokens, index })
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

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[CLS] premise [SEP] candidate [EOS]`, at most `max_seq_len` ids.
    /// Premises are cut from the front so the question at their end survives.
    pub fn encode_sample(&self, sample: &Sample, max_seq_len: usize) -> Result<Vec<usize>> {
        if max_seq_len < 5 {
            return Err(Error::invalid(format!(
                "max_seq_len {max_seq_len} too short"
            )));
        }
        let premise: Vec<usize> = tokenize_text(&sample.premise)
            .iter()
            .map(|t| self.id(t))
            .collect();
        let mut candidate: Vec<usize> = tokenize_text(&sample.candidate)
            .iter()
            .map(|t| self.id(t))
            .collect();
        candidate.truncate(max_seq_len - 4);
        let room = max_seq_len - 3 - candidate.len();
        let premise = &premise[premise.len().saturating_sub(room)..];
        let mut ids = Vec::with_capacity(premise.len() + candidate.len() + 3);
        ids.push(CLS_ID);
        ids.extend_from_slice(premise);
        ids.push(SEP_ID);
        ids.extend(candidate);
        ids.push(EOS_ID);
        Ok(ids)
    }

    pub fn encode(&self, samples: &[Sample], max_seq_len: usize) -> Result<Encoded> {
        let rows = samples
            .iter()
            .map(|s| self.encode_sample(s, max_seq_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoded {
            tokens: TokenMatrix::from_rows(&rows, max_seq_len)?,
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            domains: samples.iter().map(|s| s.domain).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(premise: &str, candidate: &str) -> Sample {
        Sample {
            id: "x".into(),
            domain: Domain::Memory,
            premise: premise.into(),
            candidate: candidate.into(),
            label: true,
        }
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            tokenize_text("What's the Capital?  Zorbia."),
            vec!["what", "'", "s", "the", "capital", "?", "zorbia", "."]
        );
        assert_eq!(tokenize_text("a b"), tokenize_text("a b"));
    }

    #[test]
    fn unseen_words_map_to_unknown() {
        let v = Vocabulary::build(&[sample("the ice melts", "yes")]).unwrap();
        assert_eq!(v.id("ice"), v.id("ice"));
        assert_eq!(v.id("lava"), UNK_ID);
        assert_ne!(v.id("ice"), UNK_ID);
    }

    #[test]
    fn every_vocabulary_entry_round_trips() {
        let corpus = crate::tasks::synthetic_corpus(100, 100, 3).unwrap();
        let v = Vocabulary::build(&corpus).unwrap();
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }

    #[test]
    fn encoding_truncates_premise_from_the_front() {
        let v = Vocabulary::build(&[sample("a b c d e f", "g")]).unwrap();
        let ids = v.encode_sample(&sample("a b c d e f", "g"), 7).unwrap();
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, vec![CLS, "d", "e", "f", SEP, "g", EOS]);
        let enc = v.encode(&[sample("a b c d e f", "g")], 7).unwrap();
        assert_eq!(enc.tokens.row(0), ids.as_slice());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(Vocabulary::build(&[]).is_err());
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }
}
