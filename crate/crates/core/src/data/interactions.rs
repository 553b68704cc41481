use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Maps raw string ids onto dense 0-based indices in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    to_index: HashMap<String, usize>,
    ids: Vec<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = Self::new();
        for id in ids {
            let id = id.into();
            if map.to_index.contains_key(&id) {
                return Err(Error::Data(format!("duplicate id {id:?}")));
            }
            map.intern(&id);
        }
        Ok(map)
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.to_index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.to_index.insert(id.to_owned(), i);
        self.ids.push(id.to_owned());
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.to_index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

/// Implicit-feedback positives over densely indexed users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    users: IdMap,
    items: IdMap,
    positives: Vec<Interaction>,
}

impl InteractionSet {
    /// Builds a set from already dense records. Duplicate pairs are rejected.
    pub fn new(users: IdMap, items: IdMap, positives: Vec<Interaction>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(positives.len());
        let mut has_items = vec![false; users.len()];
        for p in &positives {
            if p.user >= users.len() || p.item >= items.len() {
                return Err(Error::Data(format!(
                    "interaction ({}, {}) out of range for {} users / {} items",
                    p.user,
                    p.item,
                    users.len(),
                    items.len()
                )));
            }
            if !seen.insert((p.user, p.item)) {
                return Err(Error::Data(format!(
                    "duplicate interaction ({}, {})",
                    p.user, p.item
                )));
            }
            has_items[p.user] = true;
        }
        if positives.is_empty() {
            return Err(Error::Data("no interactions".into()));
        }
        if let Some(u) = has_items.iter().position(|&h| !h) {
            return Err(Error::Data(format!("user {:?} has no positives", users.id(u))));
        }
        let with_ts = positives.iter().filter(|p| p.timestamp.is_some()).count();
        if with_ts != 0 && with_ts != positives.len() {
            return Err(Error::Data(
                "timestamps must be given for every interaction or for none".into(),
            ));
        }
        Ok(Self {
            users,
            items,
            positives,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self) -> &[Interaction] {
        &self.positives
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    pub fn has_timestamps(&self) -> bool {
        self.positives.first().is_some_and(|p| p.timestamp.is_some())
    }

    /// Positives grouped by user, in file order.
    pub fn by_user(&self) -> Vec<Vec<Interaction>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for p in &self.positives {
            out[p.user].push(*p);
        }
        out
    }

    /// Sorted item indices per user.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for p in &self.positives {
            out[p.user].push(p.item);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub duplicates: usize,
}

/// Reads `user<TAB>item[<TAB>unix_ts]` lines. Blank lines are skipped; duplicate
/// pairs keep their first occurrence and are counted in [`LoadStats::duplicates`].
pub fn load_interactions(path: impl AsRef<Path>) -> Result<(InteractionSet, LoadStats)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), path)
}

pub fn parse_interactions<R: BufRead>(reader: R, path: &Path) -> Result<(InteractionSet, LoadStats)> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut positives = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut stats = LoadStats::default();
    let mut ts_mode: Option<bool> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(format!(
                "expected 2 or 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let timestamp = match fields.get(2) {
            Some(ts) => Some(
                ts.trim()
                    .parse::<i64>()
                    .map_err(|e| parse_err(format!("bad timestamp {ts:?}: {e}")))?,
            ),
            None => None,
        };
        match ts_mode {
            None => ts_mode = Some(timestamp.is_some()),
            Some(mode) if mode != timestamp.is_some() => {
                return Err(parse_err(
                    "timestamp column present on some lines but not others".into(),
                ))
            }
            _ => {}
        }
        let u = users.intern(user);
        let i = items.intern(item);
        if !seen.insert((u, i)) {
            stats.duplicates += 1;
            continue;
        }
        positives.push(Interaction {
            user: u,
            item: i,
            timestamp,
        });
    }
    if positives.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }
    if stats.duplicates > 0 {
        log::warn!(
            "{}: dropped {} duplicate interaction(s)",
            path.display(),
            stats.duplicates
        );
    }
    Ok((InteractionSet::new(users, items, positives)?, stats))
}

pub fn write_interactions(set: &InteractionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in set.positives() {
        let res = match p.timestamp {
            Some(ts) => writeln!(w, "{}\t{}\t{}", set.users.id(p.user), set.items.id(p.item), ts),
            None => writeln!(w, "{}\t{}", set.users.id(p.user), set.items.id(p.item)),
        };
        res.map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
