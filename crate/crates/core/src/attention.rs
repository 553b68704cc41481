//! User-conditioned attention over the regions of an item image.
//!
//! Scores are `a_k = relu(w_u·p + w_r·f_k + b)` and the weights are the plain
//! ratios `α_k = a_k / Σ a`. When every score is zero the map falls back to
//! uniform weights and that branch is treated as a constant when
//! differentiating.

use serde::{Deserialize, Serialize};

use crate::data::features::{perfect_square_root, RegionGrid};
use crate::error::{Result, ShapeError};
use crate::numerics::{axpy, dot, DenseVector};

/// Below this total score the uniform fallback is used.
pub const FALLBACK_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `w_att^u`, dimension K.
    pub w_user: DenseVector,
    /// `w_att^r`, dimension D.
    pub w_region: DenseVector,
    pub bias: f64,
}

impl AttentionParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            w_user: DenseVector::zeros(k),
            w_region: DenseVector::zeros(d),
            bias: 0.0,
        }
    }
}

/// Normalized region weights for one (user, item) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub user: usize,
    pub item: usize,
    pub weights: DenseVector,
}

impl AttentionMap {
    /// Region indices ordered by weight, heaviest first; ties go to the lower index.
    pub fn ranked_regions(&self) -> Vec<usize> {
        rank_desc(self.weights.as_slice())
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranked_regions();
        r.truncate(k);
        r
    }
}

pub(crate) fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Cached forward pass of the attention block.
#[derive(Debug, Clone)]
pub struct AttentionForward {
    /// Pre-activations `w_u·p + w_r·f_k + b`.
    pub pre: Vec<f64>,
    /// `Σ relu(pre)`.
    pub total: f64,
    pub alpha: Vec<f64>,
    pub fallback: bool,
}

impl AttentionForward {
    pub fn compute(user_emb: &[f64], grid: RegionGrid<'_>, params: &AttentionParams) -> Self {
        let h = grid.regions();
        let user_term = dot(params.w_user.as_slice(), user_emb) + params.bias;
        let pre: Vec<f64> = (0..h)
            .map(|k| user_term + dot(params.w_region.as_slice(), grid.region(k)))
            .collect();
        let total: f64 = pre.iter().map(|&x| x.max(0.0)).sum();
        let fallback = total < FALLBACK_THRESHOLD;
        let alpha = if fallback {
            vec![1.0 / h as f64; h]
        } else {
            pre.iter().map(|&x| x.max(0.0) / total).collect()
        };
        Self {
            pre,
            total,
            alpha,
            fallback,
        }
    }

    /// `IMAGE = Σ α_k f_k`.
    pub fn merged(&self, grid: RegionGrid<'_>) -> Vec<f64> {
        let mut out = vec![0.0; grid.dim()];
        merge_into(&self.alpha, grid, &mut out);
        out
    }
}

fn check_dims(user_emb: &DenseVector, grid: &RegionGrid<'_>, params: &AttentionParams) -> Result<(), ShapeError> {
    if grid.regions() == 0 {
        return Err(ShapeError::new("attention_map", "h=0", "h >= 1"));
    }
    if user_emb.dim() != params.w_user.dim() {
        return Err(ShapeError::new(
            "attention_map",
            format!("user embedding [{}]", user_emb.dim()),
            format!("w_user [{}]", params.w_user.dim()),
        ));
    }
    if grid.dim() != params.w_region.dim() {
        return Err(ShapeError::new(
            "attention_map",
            format!("region features [{}]", grid.dim()),
            format!("w_region [{}]", params.w_region.dim()),
        ));
    }
    Ok(())
}

pub fn attention_map(
    user_emb: &DenseVector,
    grid: RegionGrid<'_>,
    params: &AttentionParams,
    user: usize,
    item: usize,
) -> Result<AttentionMap, ShapeError> {
    check_dims(user_emb, &grid, params)?;
    let fwd = AttentionForward::compute(user_emb.as_slice(), grid, params);
    Ok(AttentionMap {
        user,
        item,
        weights: DenseVector::from_vec(fwd.alpha),
    })
}

/// Attention-weighted sum of the region features.
pub fn merged_image(alpha: &AttentionMap, grid: RegionGrid<'_>) -> Result<DenseVector, ShapeError> {
    if alpha.weights.dim() != grid.regions() {
        return Err(ShapeError::new(
            "merged_image",
            format!("weights [{}]", alpha.weights.dim()),
            format!("{} regions", grid.regions()),
        ));
    }
    let mut out = vec![0.0; grid.dim()];
    merge_into(alpha.weights.as_slice(), grid, &mut out);
    Ok(DenseVector::from_vec(out))
}

pub(crate) fn merge_into(alpha: &[f64], grid: RegionGrid<'_>, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (k, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            axpy(a, grid.region(k), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGradients {
    pub user: Vec<f64>,
    /// `h·D`, region-major.
    pub features: Vec<f64>,
    pub params: AttentionParams,
}

/// Back-propagates upstream gradients on the merged image (and optionally on
/// the weights themselves) to the user embedding, the features and the
/// attention parameters.
pub fn attention_backward(
    fwd: &AttentionForward,
    user_emb: &[f64],
    grid: RegionGrid<'_>,
    params: &AttentionParams,
    d_image: &[f64],
    d_alpha: Option<&[f64]>,
) -> AttentionGradients {
    let h = grid.regions();
    let d = grid.dim();
    let mut grads = AttentionGradients {
        user: vec![0.0; user_emb.len()],
        features: vec![0.0; h * d],
        params: AttentionParams::zeros(user_emb.len(), d),
    };
    // Direct path through IMAGE = Σ α_k f_k.
    for k in 0..h {
        axpy(
            fwd.alpha[k],
            d_image,
            &mut grads.features[k * d..(k + 1) * d],
        );
    }
    if fwd.fallback {
        return grads;
    }
    let d_alpha_k: Vec<f64> = (0..h)
        .map(|k| dot(d_image, grid.region(k)) + d_alpha.map_or(0.0, |g| g[k]))
        .collect();
    let mean: f64 = fwd.alpha.iter().zip(&d_alpha_k).map(|(a, g)| a * g).sum();
    let mut d_user_term = 0.0;
    for k in 0..h {
        if fwd.pre[k] <= 0.0 {
            continue;
        }
        let d_pre = (d_alpha_k[k] - mean) / fwd.total;
        d_user_term += d_pre;
        axpy(d_pre, grid.region(k), grads.params.w_region.as_mut_slice());
        axpy(
            d_pre,
            params.w_region.as_slice(),
            &mut grads.features[k * d..(k + 1) * d],
        );
    }
    grads.params.bias = d_user_term;
    axpy(d_user_term, user_emb, grads.params.w_user.as_mut_slice());
    axpy(d_user_term, params.w_user.as_slice(), &mut grads.user);
    grads
}

/// Heatmap export of an attention map over a square region grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub user: String,
    pub item: String,
    pub grid_side: usize,
    /// Row-major weights, `grid_side²` entries.
    pub weights: Vec<f64>,
    /// Heaviest cells first.
    pub top_cells: Vec<usize>,
}

impl Heatmap {
    pub fn new(map: &AttentionMap, user: &str, item: &str, top_k: usize) -> Result<Self> {
        let h = map.weights.dim();
        let grid_side = perfect_square_root(h).ok_or_else(|| {
            crate::Error::Data(format!("cannot draw a heatmap for h={h} (not a perfect square)"))
        })?;
        Ok(Self {
            user: user.to_owned(),
            item: item.to_owned(),
            grid_side,
            weights: map.weights.as_slice().to_vec(),
            top_cells: map.top_k(top_k),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("heatmap serializes")
    }

    /// Binary 8-bit PGM; a cell's gray level is `round(255·α/max α)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.weights.iter().copied().fold(0.0f64, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.grid_side, self.grid_side).into_bytes();
        out.extend(self.weights.iter().map(|&w| {
            if max > 0.0 {
                (255.0 * w / max).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        out
    }
}
