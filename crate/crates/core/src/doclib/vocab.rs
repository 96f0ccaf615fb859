use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::DocError;

pub const CLS_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const UNK_ID: usize = 3;
const SPECIALS: [&str; 4] = ["[CLS]", "[PAD]", "[MASK]", "[UNK]"];
/// Prefix marking single-character fallback tokens.
const CHAR_PREFIX: &str = "##";

/// Whole-word vocabulary with a per-character fallback.
///
/// Ids `0..4` are the special tokens, followed by the corpus words in the
/// order given to [`Vocab::build`], followed by one token per printable
/// ASCII character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    word_count: usize,
}

impl Vocab {
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        for w in words {
            let w = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) || index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        let word_count = tokens.len() - SPECIALS.len();
        for c in '!'..='~' {
            let t = format!("{CHAR_PREFIX}{c}");
            if !index.contains_key(&t) {
                index.insert(t.clone(), tokens.len());
                tokens.push(t);
            }
        }
        Self { tokens, index, word_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of whole-word entries (excluding specials and characters).
    pub fn word_count(&self) -> usize {
        self.word_count
    }

    /// Ids eligible as random MLM replacements: every non-special token.
    pub fn regular_ids(&self) -> std::ops::Range<usize> {
        SPECIALS.len()..self.tokens.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token ids for one whitespace-free word. Empty text yields no tokens.
    pub fn tokenize_word(&self, word: &str) -> Vec<usize> {
        if let Some(id) = self.index.get(word).filter(|&&id| id >= SPECIALS.len()) {
            return vec![*id];
        }
        word.chars()
            .map(|c| self.index.get(&format!("{CHAR_PREFIX}{c}")).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Splits on whitespace, then tokenizes each piece.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().flat_map(|w| self.tokenize_word(w)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), DocError> {
        let body: String = self.tokens[SPECIALS.len()..SPECIALS.len() + self.word_count]
            .iter()
            .map(|t| format!("{t}\n"))
            .collect();
        fs::write(path, body)?;
        Ok(())
    }

    /// Reads a word list written by [`Vocab::save`] (one word per line).
    pub fn load(path: &Path) -> Result<Self, DocError> {
        let text = fs::read_to_string(path)?;
        Ok(Self::build(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_then_char_fallback() {
        let v = Vocab::build(["total", "amount", "total"]);
        assert_eq!(v.word_count(), 2);
        assert_eq!(v.tokenize_word("total"), vec![4]);
        assert_eq!(v.tokenize_word("amount"), vec![5]);
        let chars = v.tokenize_word("ab");
        assert_eq!(chars.len(), 2);
        assert_eq!(v.token(chars[0]), Some("##a"));
        assert_eq!(v.tokenize_word("é"), vec![UNK_ID]);
        assert!(v.tokenize_word("").is_empty());
        assert_eq!(v.tokenize("total  ab"), [vec![4], chars].concat());
    }

    #[test]
    fn specials_are_never_produced_by_words() {
        let v = Vocab::build(["x"]);
        assert_eq!(v.tokenize_word("[MASK]").len(), 6);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(["kato", "mire", "sulo"]);
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
