//! Scoring attention maps against coarse human-labeled grids.
//!
//! The top-k fine cells (ties to the lower index) are mapped onto the coarse
//! grid by floor-proportional scaling; a selected cell counts as a hit when its
//! coarse cell is labeled.

use crate::attention::rank_desc;
use crate::data::features::perfect_square_root;
use crate::data::labels::RegionLabelSet;
use crate::error::{Error, Result};

use super::ranking::harmonic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

/// Coarse cell index of fine cell `cell` on a `fine_side` grid.
pub fn coarse_cell(cell: usize, fine_side: usize, coarse_side: usize) -> usize {
    let (row, col) = (cell / fine_side, cell % fine_side);
    (row * coarse_side / fine_side) * coarse_side + col * coarse_side / fine_side
}

pub fn region_explanation_score(weights: &[f64], labels: &RegionLabelSet, k: usize) -> Result<RegionScore> {
    let h = weights.len();
    let g = perfect_square_root(h)
        .filter(|&g| g > 0)
        .ok_or_else(|| Error::Data(format!("{h} attention cells do not form a square grid")))?;
    if k == 0 {
        return Err(Error::Data("region cut-off k must be positive".into()));
    }
    let s = labels.grid_side;
    let labeled = |cell: usize| labels.cells.binary_search(&coarse_cell(cell, g, s)).is_ok();
    let relevant = (0..h).filter(|&c| labeled(c)).count();
    let ranked = rank_desc(weights);
    let k = k.min(h);
    let hit_flags: Vec<bool> = ranked[..k].iter().map(|&c| labeled(c)).collect();
    let hits = hit_flags.iter().filter(|&&x| x).count() as f64;
    let precision = hits / k as f64;
    let recall = if relevant == 0 { 0.0 } else { hits / relevant as f64 };
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = hit_flags
        .iter()
        .enumerate()
        .filter(|(_, &x)| x)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant)).map(discount).sum();
    Ok(RegionScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
        ndcg: if ideal > 0.0 { dcg / ideal } else { 0.0 },
    })
}
