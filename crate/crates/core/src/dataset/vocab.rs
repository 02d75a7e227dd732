use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Context objects the renderer knows how to draw, in vocabulary order.
pub const OBJECTS: [&str; 6] = ["snowboard", "motorcycle", "umbrella", "kitchen", "dog", "laptop"];

const FUNCTION_WORDS: [&str; 11] = [
    "a", "is", "standing", "riding", "holding", "in", "with", "using", "near", "and", "person",
];
const PERSON_WORDS: [&str; 6] = ["woman", "man", "girl", "boy", "lady", "guy"];

/// Which gendered word sets the losses and metrics use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GenderSetMode {
    /// `{woman}` and `{man}`.
    #[default]
    Singleton,
    /// `{woman, girl, lady}` and `{man, boy, guy}`.
    MultiWord,
}

impl GenderSetMode {
    pub fn woman_words(self) -> &'static [&'static str] {
        match self {
            GenderSetMode::Singleton => &["woman"],
            GenderSetMode::MultiWord => &["woman", "girl", "lady"],
        }
    }

    pub fn man_words(self) -> &'static [&'static str] {
        match self {
            GenderSetMode::Singleton => &["man"],
            GenderSetMode::MultiWord => &["man", "boy", "guy"],
        }
    }
}

/// Token table with gendered and neutral person-word sets.
///
/// Token ids are positions in `tokens`. The four special tokens always
/// occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    woman_set: BTreeSet<TokenId>,
    man_set: BTreeSet<TokenId>,
    neutral_set: BTreeSet<TokenId>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// The fixed scene vocabulary with the given gender-set mode.
    pub fn scene(mode: GenderSetMode) -> Self {
        let mut tokens: Vec<String> = [BOS, EOS, PAD, UNK].iter().map(|s| s.to_string()).collect();
        tokens.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
        tokens.extend(PERSON_WORDS.iter().map(|s| s.to_string()));
        tokens.extend(OBJECTS.iter().map(|s| s.to_string()));
        Self::new(tokens, mode.woman_words(), mode.man_words(), &["person"])
            .expect("scene vocabulary is well formed")
    }

    pub fn new(tokens: Vec<String>, woman: &[&str], man: &[&str], neutral: &[&str]) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token {t:?}")));
            }
        }
        for (i, special) in [BOS, EOS, PAD, UNK].iter().enumerate() {
            if index.get(*special) != Some(&i) {
                return Err(Error::InvalidInput(format!("special token {special} must have id {i}")));
            }
        }
        let lookup = |words: &[&str]| -> Result<BTreeSet<TokenId>> {
            words
                .iter()
                .map(|w| {
                    index
                        .get(*w)
                        .copied()
                        .ok_or_else(|| Error::InvalidInput(format!("set word {w:?} not in vocabulary")))
                })
                .collect()
        };
        let woman_set = lookup(woman)?;
        let man_set = lookup(man)?;
        let neutral_set = lookup(neutral)?;
        if !woman_set.is_disjoint(&man_set)
            || !neutral_set.is_disjoint(&woman_set)
            || !neutral_set.is_disjoint(&man_set)
        {
            return Err(Error::InvalidInput("gender and neutral sets must be disjoint".into()));
        }
        Ok(Self {
            tokens,
            woman_set,
            man_set,
            neutral_set,
            index,
        })
    }

    /// Rebuilds the lookup index after deserialization and re-checks invariants.
    pub fn validated(self) -> Result<Self> {
        let words = |set: &BTreeSet<TokenId>| -> Result<Vec<String>> {
            set.iter()
                .map(|&id| {
                    self.tokens
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::InvalidInput(format!("set id {id} out of range")))
                })
                .collect()
        };
        let (w, m, n) = (words(&self.woman_set)?, words(&self.man_set)?, words(&self.neutral_set)?);
        fn refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        Self::new(self.tokens.clone(), &refs(&w), &refs(&m), &refs(&n))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn pad(&self) -> TokenId {
        2
    }

    pub fn unk(&self) -> TokenId {
        3
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn woman_set(&self) -> &BTreeSet<TokenId> {
        &self.woman_set
    }

    pub fn man_set(&self) -> &BTreeSet<TokenId> {
        &self.man_set
    }

    pub fn neutral_set(&self) -> &BTreeSet<TokenId> {
        &self.neutral_set
    }

    pub fn is_woman(&self, id: TokenId) -> bool {
        self.woman_set.contains(&id)
    }

    pub fn is_man(&self, id: TokenId) -> bool {
        self.man_set.contains(&id)
    }

    pub fn is_gendered(&self, id: TokenId) -> bool {
        self.is_woman(id) || self.is_man(id)
    }

    /// Any person-referring word: gendered or neutral.
    pub fn is_person_word(&self, id: TokenId) -> bool {
        self.is_gendered(id) || self.neutral_set.contains(&id)
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown token {w:?}")))
            })
            .collect()
    }

    /// Wraps `words` in BOS/EOS.
    pub fn caption(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        let mut out = vec![self.bos()];
        out.extend(self.encode(words)?);
        out.push(self.eos());
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    /// Human-readable caption without special tokens.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&i| i > self.unk())
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable hash over tokens and sets; checkpoints carry it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        for set in [&self.woman_set, &self.man_set, &self.neutral_set] {
            h.update([0xffu8]);
            for id in set {
                h.update((*id as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_vocab_invariants() {
        let v = Vocabulary::scene(GenderSetMode::Singleton);
        assert_eq!(v.id(BOS), Some(0));
        assert_eq!(v.id(EOS), Some(1));
        assert!(v.woman_set().is_disjoint(v.man_set()));
        assert_eq!(v.woman_set().len(), 1);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        let m = Vocabulary::scene(GenderSetMode::MultiWord);
        assert_eq!(m.woman_set().len(), 3);
        assert_ne!(v.fingerprint(), m.fingerprint());
    }

    #[test]
    fn overlapping_sets_rejected() {
        let tokens = [BOS, EOS, PAD, UNK, "man", "woman"].iter().map(|s| s.to_string()).collect();
        assert!(Vocabulary::new(tokens, &["woman", "man"], &["man"], &[]).is_err());
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let v = Vocabulary::scene(GenderSetMode::MultiWord);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str::<Vocabulary>(&json).unwrap().validated().unwrap();
        assert_eq!(back.id("lady"), v.id("lady"));
        assert_eq!(back.fingerprint(), v.fingerprint());
    }
}
