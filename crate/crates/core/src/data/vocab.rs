use std::collections::HashMap;

use crate::error::{Error, Result};

pub const END_TOKEN: &str = "</s>";
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token lexicon. Regular tokens occupy `0..size-2`; the end-of-review and
/// unknown markers are the last two indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_index: HashMap<String, usize>,
    index_to_token: Vec<String>,
}

impl Vocabulary {
    /// Counts tokens over `reviews` and keeps those seen at least `min_count`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<'a, I, R>(reviews: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&'a str, usize> = HashMap::new();
        for review in reviews {
            for tok in review {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned())))
    }

    /// Builds a vocabulary from an explicit ordered token list (reserved markers are appended).
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut index_to_token: Vec<String> = Vec::new();
        let mut token_to_index = HashMap::new();
        for t in tokens {
            if t == END_TOKEN || t == UNKNOWN_TOKEN || token_to_index.contains_key(&t) {
                continue;
            }
            token_to_index.insert(t.clone(), index_to_token.len());
            index_to_token.push(t);
        }
        for reserved in [END_TOKEN, UNKNOWN_TOKEN] {
            token_to_index.insert(reserved.to_owned(), index_to_token.len());
            index_to_token.push(reserved.to_owned());
        }
        Self {
            token_to_index,
            index_to_token,
        }
    }

    /// `N^w`, reserved entries included.
    pub fn size(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn end_index(&self) -> usize {
        self.size() - 2
    }

    pub fn unknown_index(&self) -> usize {
        self.size() - 1
    }

    pub fn index(&self, token: &str) -> usize {
        self.token_to_index
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unknown_index())
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.token_to_index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.index_to_token[index]
    }

    pub fn encode<'a, I: IntoIterator<Item = &'a str>>(&self, tokens: I) -> Vec<usize> {
        tokens.into_iter().map(|t| self.index(t)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Vec<Vec<&str>> {
        vec![text.split_whitespace().collect()]
    }

    #[test]
    fn frequency_order() {
        let c = corpus("a b a");
        let v = Vocabulary::build(c.iter().map(|r| r.iter().copied()), 1).unwrap();
        assert_eq!(v.size(), 4);
        assert!(v.index("a") < v.index("b"));
        assert_eq!(v.token(v.end_index()), END_TOKEN);
        assert_eq!(v.token(v.unknown_index()), UNKNOWN_TOKEN);
    }

    #[test]
    fn min_count_maps_rare_to_unknown() {
        let c = corpus("a b a");
        let v = Vocabulary::build(c.iter().map(|r| r.iter().copied()), 2).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.index("a"), 0);
        assert_eq!(v.index("b"), v.unknown_index());
    }

    #[test]
    fn ties_are_lexicographic() {
        let c = corpus("zeta alpha mu beta");
        let v = Vocabulary::build(c.iter().map(|r| r.iter().copied()), 1).unwrap();
        let order: Vec<&str> = (0..4).map(|i| v.token(i)).collect();
        assert_eq!(order, vec!["alpha", "beta", "mu", "zeta"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c: Vec<Vec<&str>> = vec![vec![]];
        assert!(Vocabulary::build(c.iter().map(|r| r.iter().copied()), 1).is_err());
    }

    #[test]
    fn stable_across_builds() {
        let c = corpus("x y z y x q r s x");
        let a = Vocabulary::build(c.iter().map(|r| r.iter().copied()), 1).unwrap();
        let b = Vocabulary::build(c.iter().map(|r| r.iter().copied()), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.decode(&a.encode(["x", "q"])), "x q");
    }
}
