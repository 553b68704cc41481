use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::interactions::InteractionSet;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// A review as read from disk: raw ids plus pre-tokenized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub user: String,
    pub item: String,
    pub tokens: Vec<String>,
}

/// A review over dense indices. `tokens` never contains the end marker; it is
/// appended by the sequence model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Review {
    pub user: usize,
    pub item: usize,
    pub tokens: Vec<usize>,
}

impl Review {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Reads `user<TAB>item<TAB>space separated tokens` lines.
pub fn load_reviews(path: impl AsRef<Path>) -> Result<Vec<RawReview>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reviews(BufReader::new(file), path)
}

pub fn parse_reviews<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawReview>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(user), Some(item)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected user<TAB>item<TAB>tokens".into(),
            });
        };
        let tokens = fields
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        out.push(RawReview {
            user: user.trim().to_owned(),
            item: item.trim().to_owned(),
            tokens,
        });
    }
    Ok(out)
}

pub fn write_reviews(reviews: &[RawReview], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in reviews {
        writeln!(w, "{}\t{}\t{}", r.user, r.item, r.tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    /// Reviews whose user/item pair is not a known interaction.
    pub unmatched: usize,
    /// Reviews left with no tokens.
    pub empty: usize,
    /// Later reviews for an already reviewed pair.
    pub duplicates: usize,
}

/// Maps raw reviews onto dense indices. Reviews with no tokens, for unknown
/// pairs, or repeating an already reviewed pair are dropped and counted.
pub fn encode_reviews(
    raw: &[RawReview],
    interactions: &InteractionSet,
    vocab: &Vocabulary,
) -> (Vec<Review>, EncodeStats) {
    let known: std::collections::HashSet<(usize, usize)> = interactions
        .positives()
        .iter()
        .map(|p| (p.user, p.item))
        .collect();
    let mut seen = std::collections::HashSet::new();
    let mut stats = EncodeStats::default();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let pair = match (
            interactions.users().index_of(&r.user),
            interactions.items().index_of(&r.item),
        ) {
            (Some(u), Some(i)) if known.contains(&(u, i)) => (u, i),
            _ => {
                stats.unmatched += 1;
                continue;
            }
        };
        if r.tokens.is_empty() {
            stats.empty += 1;
            continue;
        }
        if !seen.insert(pair) {
            stats.duplicates += 1;
            continue;
        }
        out.push(Review {
            user: pair.0,
            item: pair.1,
            tokens: vocab.encode(r.tokens.iter().map(String::as_str)),
        });
    }
    if stats != EncodeStats::default() {
        log::warn!(
            "reviews dropped: {} unmatched, {} empty, {} duplicate",
            stats.unmatched,
            stats.empty,
            stats.duplicates
        );
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::interactions::parse_interactions;

    #[test]
    fn parse_and_encode() {
        let (set, _) =
            parse_interactions("u1\ti1\nu2\ti1\n".as_bytes(), Path::new("i.tsv")).unwrap();
        let raw = parse_reviews(
            "u1\ti1\tnice wide neck\nu2\ti1\t\nu3\ti1\tghost\nu1\ti1\tagain\n".as_bytes(),
            Path::new("r.tsv"),
        )
        .unwrap();
        assert_eq!(raw.len(), 4);
        let vocab = Vocabulary::build(raw.iter().map(|r| r.tokens.iter().map(String::as_str)), 1)
            .unwrap();
        let (reviews, stats) = encode_reviews(&raw, &set, &vocab);
        assert_eq!(reviews.len(), 1);
        assert_eq!(reviews[0].tokens.len(), 3);
        assert_eq!(
            stats,
            EncodeStats {
                unmatched: 1,
                empty: 1,
                duplicates: 1
            }
        );
    }

    #[test]
    fn malformed_line() {
        let err = parse_reviews("only\n".as_bytes(), Path::new("r.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
