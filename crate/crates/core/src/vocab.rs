//! Token inventory and sentences.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SILENCE: &str = ".";
pub const FUNCTION_WORDS: [&str; 7] = ["what", "where", "is", "on", "the", "yes", "no"];

/// Bijection between surface tokens and ids. `<pad>`, `<bos>` and `<eos>`
/// always take ids 0, 1 and 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Specials followed by `words` in order. Duplicates are rejected.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = vec![PAD.into(), BOS.into(), EOS.into()];
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::Config(format!("duplicate token {t:?}")));
            }
        }
        if tokens.get(1).map(String::as_str) != Some(BOS) || tokens.get(2).map(String::as_str) != Some(EOS) {
            return Err(Error::Config("specials must lead the vocabulary".into()));
        }
        Ok(Self { tokens, index })
    }

    /// Vocabulary for the grid world: `.`, function words, directions, objects.
    pub fn grounded<S: AsRef<str>>(objects: &[S]) -> Result<Self> {
        let mut words: Vec<String> = vec![SILENCE.into()];
        words.extend(FUNCTION_WORDS.iter().map(|w| w.to_string()));
        words.extend(crate::world::Direction::ALL.iter().map(|d| d.word().to_string()));
        words.extend(objects.iter().map(|o| o.as_ref().to_string()));
        Self::from_words(&words)
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        Self::from_tokens(self.tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        TokenId(0)
    }

    pub fn bos(&self) -> TokenId {
        TokenId(1)
    }

    pub fn eos(&self) -> TokenId {
        TokenId(2)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn lookup(&self, word: &str) -> Result<TokenId> {
        self.id(word).ok_or_else(|| Error::UnknownToken { token: word.to_string(), known: self.tokens.clone() })
    }

    /// Splits on whitespace; every word must be known.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.lookup(w)).collect()
    }
}

/// A sentence: content tokens terminated by `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    tokens: Vec<TokenId>,
    surface: String,
}

impl Utterance {
    /// Parses whitespace-separated words. Empty text becomes the silent `.`.
    pub fn parse(vocab: &Vocabulary, text: &str) -> Result<Self> {
        let mut content = vocab.tokenize(text)?;
        if content.is_empty() {
            content.push(vocab.lookup(SILENCE)?);
        }
        Self::from_content(vocab, content)
    }

    /// Builds from content tokens (without `<eos>`).
    pub fn from_content(vocab: &Vocabulary, content: Vec<TokenId>) -> Result<Self> {
        if let Some(bad) = content.iter().find(|t| t.index() >= vocab.len()) {
            return Err(Error::Contract(format!("token id {} outside vocabulary", bad.0)));
        }
        let surface = content.iter().map(|&t| vocab.token(t)).collect::<Vec<_>>().join(" ");
        let mut tokens = content;
        tokens.push(vocab.eos());
        Ok(Self { tokens, surface })
    }

    /// Builds from a full token sequence that must end in `<eos>`.
    pub fn from_tokens(vocab: &Vocabulary, tokens: Vec<TokenId>) -> Result<Self> {
        match tokens.split_last() {
            Some((&last, content)) if last == vocab.eos() => Self::from_content(vocab, content.to_vec()),
            _ => Err(Error::Contract("utterance must end with <eos>".into())),
        }
    }

    pub fn silent(vocab: &Vocabulary) -> Self {
        Self::parse(vocab, SILENCE).expect("grounded vocabularies contain '.'")
    }

    /// All tokens including the trailing `<eos>`.
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn content(&self) -> &[TokenId] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::grounded(&["apple", "banana"]).unwrap()
    }

    #[test]
    fn specials_fixed() {
        let v = vocab();
        assert_eq!(v.token(v.bos()), BOS);
        assert_eq!(v.token(v.eos()), EOS);
        assert_ne!(v.bos(), v.eos());
        assert_eq!(v.len(), 3 + 1 + 7 + 4 + 2);
    }

    #[test]
    fn bijection() {
        let v = vocab();
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(TokenId(i as u32)));
        }
        assert!(Vocabulary::grounded(&["apple", "apple"]).is_err());
        assert!(Vocabulary::grounded(&["is"]).is_err());
    }

    #[test]
    fn utterances() {
        let v = vocab();
        let u = Utterance::parse(&v, "where is apple").unwrap();
        assert_eq!(u.surface(), "where is apple");
        assert_eq!(*u.tokens().last().unwrap(), v.eos());
        assert_eq!(u.content().len(), 3);
        let s = Utterance::silent(&v);
        assert_eq!(s.surface(), ".");
        assert_eq!(Utterance::parse(&v, "   ").unwrap(), s);
        assert!(matches!(Utterance::parse(&v, "where is kiwi"), Err(Error::UnknownToken { .. })));
        assert!(Utterance::from_tokens(&v, vec![v.bos()]).is_err());
    }
}
