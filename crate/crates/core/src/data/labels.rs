use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::interactions::InteractionSet;
use crate::error::{Error, Result};

/// Human-labeled explanation regions for one (user, item) pair, on a coarse
/// `grid_side × grid_side` grid with row-major cell indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabelSet {
    pub user: usize,
    pub item: usize,
    pub grid_side: usize,
    pub cells: Vec<usize>,
}

impl RegionLabelSet {
    pub fn new(user: usize, item: usize, grid_side: usize, mut cells: Vec<usize>) -> Result<Self> {
        if grid_side == 0 {
            return Err(Error::Data("label grid side must be positive".into()));
        }
        cells.sort_unstable();
        cells.dedup();
        if cells.is_empty() {
            return Err(Error::Data("label set has no cells".into()));
        }
        if let Some(&c) = cells.iter().find(|&&c| c >= grid_side * grid_side) {
            return Err(Error::Data(format!(
                "label cell {c} outside a {grid_side}x{grid_side} grid"
            )));
        }
        Ok(Self {
            user,
            item,
            grid_side,
            cells,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRegionLabel {
    pub user: String,
    pub item: String,
    pub grid_side: usize,
    pub cells: Vec<usize>,
}

/// Reads `user<TAB>item<TAB>grid_side<TAB>c1,c2,...` lines.
pub fn load_region_labels(path: impl AsRef<Path>) -> Result<Vec<RawRegionLabel>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_region_labels(BufReader::new(file), path)
}

pub fn parse_region_labels<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawRegionLabel>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let grid_side: usize = fields[2]
            .trim()
            .parse()
            .map_err(|e| err(format!("bad grid side {:?}: {e}", fields[2])))?;
        let cells = fields[3]
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(format!("bad cell list {:?}: {e}", fields[3])))?;
        if grid_side == 0 || cells.is_empty() || cells.iter().any(|&c| c >= grid_side * grid_side) {
            return Err(err(format!(
                "cells {cells:?} invalid for grid side {grid_side}"
            )));
        }
        out.push(RawRegionLabel {
            user: fields[0].trim().to_owned(),
            item: fields[1].trim().to_owned(),
            grid_side,
            cells,
        });
    }
    Ok(out)
}

pub fn write_region_labels(labels: &[RawRegionLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        let cells: Vec<String> = l.cells.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}\t{}\t{}\t{}", l.user, l.item, l.grid_side, cells.join(","))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolves raw ids; labels naming unknown users or items are skipped and counted.
pub fn resolve_region_labels(
    raw: &[RawRegionLabel],
    interactions: &InteractionSet,
) -> (Vec<RegionLabelSet>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for l in raw {
        match (
            interactions.users().index_of(&l.user),
            interactions.items().index_of(&l.item),
        ) {
            (Some(u), Some(i)) => match RegionLabelSet::new(u, i, l.grid_side, l.cells.clone()) {
                Ok(set) => out.push(set),
                Err(_) => skipped += 1,
            },
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} region label(s) with unknown user/item");
    }
    (out, skipped)
}
