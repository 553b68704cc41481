//! The base scorer: attended image merged into the item embedding, a sigmoid
//! inner product, and the cross-entropy objective over sampled negatives.

use rand::Rng;

use crate::attention::{attention_backward, AttentionForward, AttentionMap};
use crate::data::features::RegionalFeatureStore;
use crate::error::{Error, Result, ShapeError};
use crate::numerics::{add_outer, axpy, dot, gemv_acc, gemv_t_acc, log_sigmoid, sigmoid, DenseMatrix, DenseVector};
use crate::params::ModelParams;

/// `q* = q ∘ (W_projᵀ · image)`.
pub fn merge(q: &DenseVector, image: &DenseVector, img_proj: &DenseMatrix) -> Result<DenseVector, ShapeError> {
    if img_proj.rows() != image.dim() || img_proj.cols() != q.dim() {
        return Err(ShapeError::new(
            "merge",
            format!("q [{}], image [{}]", q.dim(), image.dim()),
            format!("W_img_proj {}x{}", img_proj.rows(), img_proj.cols()),
        ));
    }
    let mut proj = vec![0.0; q.dim()];
    gemv_t_acc(img_proj, image.as_slice(), &mut proj);
    Ok(q.as_slice()
        .iter()
        .zip(&proj)
        .map(|(a, b)| a * b)
        .collect::<Vec<_>>()
        .into())
}

/// `σ(p · q*)`.
pub fn predict(p: &DenseVector, q_star: &DenseVector) -> Result<f64, ShapeError> {
    Ok(sigmoid(p.dot(q_star)?))
}

/// Score with its attention map.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub score: f64,
    pub attention: Option<AttentionMap>,
}

/// Cached forward pass for one (user, item) pair.
#[derive(Debug, Clone)]
pub struct PairForward {
    pub user: usize,
    pub item: usize,
    /// `None` for the image-free variant.
    pub attention: Option<AttentionForward>,
    /// Merged image (zeros without images).
    pub image: Vec<f64>,
    /// `W_projᵀ · image`.
    pub proj: Vec<f64>,
    pub q_star: Vec<f64>,
    pub logit: f64,
}

impl PairForward {
    pub fn compute(
        params: &ModelParams,
        features: Option<&RegionalFeatureStore>,
        user: usize,
        item: usize,
    ) -> Self {
        let v = &params.vecf;
        let p = v.user_emb.row(user);
        let q = v.item_emb.row(item);
        let k = q.len();
        if !params.variant.uses_images() {
            let logit = dot(p, q);
            return Self {
                user,
                item,
                attention: None,
                image: vec![0.0; params.dims.d],
                proj: Vec::new(),
                q_star: q.to_vec(),
                logit,
            };
        }
        let features = features.expect("image variant scored without features");
        let grid = features.item(item);
        let att = AttentionForward::compute(p, grid, &v.attention);
        let image = att.merged(grid);
        let mut proj = vec![0.0; k];
        gemv_t_acc(&v.img_proj, &image, &mut proj);
        let q_star: Vec<f64> = q.iter().zip(&proj).map(|(a, b)| a * b).collect();
        let logit = dot(p, &q_star);
        Self {
            user,
            item,
            attention: Some(att),
            image,
            proj,
            q_star,
            logit,
        }
    }

    pub fn score(&self) -> f64 {
        sigmoid(self.logit)
    }

    /// Back-propagates `d_logit` on the logit plus extra upstream gradients on
    /// p, q and the merged image (from the review model) into `grads`.
    pub fn backward(
        &self,
        params: &ModelParams,
        features: Option<&RegionalFeatureStore>,
        d_logit: f64,
        extra: Option<(&[f64], &[f64], &[f64])>,
        grads: &mut ModelParams,
    ) {
        let v = &params.vecf;
        let p = v.user_emb.row(self.user);
        let q = v.item_emb.row(self.item);
        let k = p.len();
        let mut d_p = vec![0.0; k];
        let mut d_q = vec![0.0; k];
        axpy(d_logit, &self.q_star, &mut d_p);
        let mut d_image = vec![0.0; self.image.len()];
        if let Some((ep, eq, ei)) = extra {
            axpy(1.0, ep, &mut d_p);
            axpy(1.0, eq, &mut d_q);
            axpy(1.0, ei, &mut d_image);
        }
        match &self.attention {
            None => axpy(d_logit, p, &mut d_q),
            Some(att) => {
                // d q* = d_logit · p; q* = q ∘ proj.
                let d_proj: Vec<f64> = (0..k).map(|i| d_logit * p[i] * q[i]).collect();
                for i in 0..k {
                    d_q[i] += d_logit * p[i] * self.proj[i];
                }
                add_outer(&mut grads.vecf.img_proj, 1.0, &self.image, &d_proj);
                gemv_acc(&v.img_proj, &d_proj, &mut d_image);
                let features = features.expect("image variant without features");
                let ag = attention_backward(att, p, features.item(self.item), &v.attention, &d_image, None);
                axpy(1.0, &ag.user, &mut d_p);
                let ga = &mut grads.vecf.attention;
                axpy(1.0, ag.params.w_user.as_slice(), ga.w_user.as_mut_slice());
                axpy(1.0, ag.params.w_region.as_slice(), ga.w_region.as_mut_slice());
                ga.bias += ag.params.bias;
            }
        }
        axpy(1.0, &d_p, grads.vecf.user_emb.row_mut(self.user));
        axpy(1.0, &d_q, grads.vecf.item_emb.row_mut(self.item));
    }
}

/// Scores one pair and returns its attention map (image variants only).
pub fn predict_pair(
    params: &ModelParams,
    features: Option<&RegionalFeatureStore>,
    user: usize,
    item: usize,
) -> Prediction {
    let fwd = PairForward::compute(params, features, user, item);
    let score = fwd.score();
    Prediction {
        score,
        attention: fwd.attention.map(|a| AttentionMap {
            user,
            item,
            weights: a.alpha.into(),
        }),
    }
}

/// One labeled training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub user: usize,
    pub item: usize,
    pub label: bool,
}

/// `y log σ(s) + (1 − y) log(1 − σ(s))` and its derivative in `s`.
pub(crate) fn bce_term(logit: f64, label: bool) -> (f64, f64) {
    if label {
        (log_sigmoid(logit), 1.0 - sigmoid(logit))
    } else {
        (log_sigmoid(-logit), -sigmoid(logit))
    }
}

pub(crate) fn check_batch(params: &ModelParams, features: Option<&RegionalFeatureStore>, batch: &[LabeledPair]) -> Result<()> {
    let dims = params.dims;
    if let Some(bad) = batch.iter().find(|e| e.user >= dims.users || e.item >= dims.items) {
        return Err(Error::Data(format!(
            "pair ({}, {}) outside {}x{} model",
            bad.user, bad.item, dims.users, dims.items
        )));
    }
    if params.variant.uses_images() {
        let f = features.ok_or_else(|| Error::Config(format!("variant {} needs features", params.variant)))?;
        if f.num_items() != dims.items || f.dim() != dims.d || f.regions() != dims.regions {
            return Err(ShapeError::new(
                "features",
                format!("{}x{}x{}", f.num_items(), f.regions(), f.dim()),
                format!("{}x{}x{}", dims.items, dims.regions, dims.d),
            )
            .into());
        }
    }
    Ok(())
}

/// Adds the gradient of `−λ‖Θ‖²` into `grads` and returns the penalty.
pub(crate) fn add_regularizer(params: &ModelParams, lambda: f64, grads: &mut ModelParams) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    grads.axpy(-2.0 * lambda, params);
    lambda * params.squared_norm()
}

/// Cross-entropy objective `Σ_pos log ŷ + Σ_neg log(1 − ŷ) − λ‖Θ‖²` (to be
/// maximized) and its gradient over every tensor in `params`.
pub fn bce_objective(
    batch: &[LabeledPair],
    params: &ModelParams,
    features: Option<&RegionalFeatureStore>,
    lambda: f64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    check_batch(params, features, batch)?;
    let mut grads = params.zeros_like();
    let mut data = 0.0;
    for e in batch {
        let fwd = PairForward::compute(params, features, e.user, e.item);
        let (ll, d) = bce_term(fwd.logit, e.label);
        data += ll;
        fwd.backward(params, features, d, None, &mut grads);
    }
    let penalty = add_regularizer(params, lambda, &mut grads);
    Ok((data - penalty, grads))
}

/// Draws `count` items uniformly from those not in `owned` (sorted).
pub fn sample_negatives<R: Rng + ?Sized>(
    owned: &[usize],
    num_items: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let free = num_items.saturating_sub(owned.len());
    if free == 0 {
        return Err(Error::Data(format!(
            "user owns all {num_items} items; no negative to sample"
        )));
    }
    Ok((0..count)
        .map(|_| {
            // Map a rank among free items to the item index by skipping owned ones.
            let mut j = rng.gen_range(0..free);
            for &o in owned {
                if o <= j {
                    j += 1;
                } else {
                    break;
                }
            }
            j
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::params::{ModelDims, Variant};

    #[test]
    fn merge_examples() {
        let w = DenseMatrix::from_rows(&[&[3.0, -1.0]]).unwrap();
        let q = DenseVector::from_vec(vec![1.0, 2.0]);
        let got = merge(&q, &DenseVector::from_vec(vec![1.0]), &w).unwrap();
        assert_eq!(got.as_slice(), &[3.0, -2.0]);
        let ones = DenseMatrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        assert_eq!(merge(&q, &DenseVector::from_vec(vec![1.0]), &ones).unwrap(), q);
        assert_eq!(
            merge(&DenseVector::zeros(2), &DenseVector::from_vec(vec![5.0]), &w).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        assert!(merge(&q, &DenseVector::zeros(3), &w).is_err());
    }

    #[test]
    fn predict_examples() {
        let z = DenseVector::zeros(2);
        let one = DenseVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(predict(&z, &one).unwrap(), 0.5);
        assert!((predict(&one, &one).unwrap() - 0.880797).abs() < 1e-6);
        let orth = DenseVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(predict(&one, &orth).unwrap(), 0.5);
    }

    fn tiny(variant: Variant) -> (ModelParams, RegionalFeatureStore) {
        let dims = ModelDims {
            users: 2,
            items: 3,
            k: 2,
            d: 2,
            regions: 4,
            z: 2,
            vocab: 4,
            o: 2,
        };
        let f = RegionalFeatureStore::new(3, 4, 2, (0..24).map(|i| i as f64 / 10.0).collect()).unwrap();
        (ModelParams::zeros(variant, dims), f)
    }

    #[test]
    fn zero_params_objective() {
        let (p, f) = tiny(Variant::Vecf);
        let batch = [
            LabeledPair { user: 0, item: 0, label: true },
            LabeledPair { user: 1, item: 2, label: false },
        ];
        let (l, _) = bce_objective(&batch, &p, Some(&f), 0.0).unwrap();
        assert!((l - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let (l2, _) = bce_objective(&batch, &p, Some(&f), 0.3).unwrap();
        assert_eq!(l, l2);
        assert!(bce_objective(&[], &p, Some(&f), 0.0).is_err());
    }

    #[test]
    fn negatives_forced_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let owned = [0, 1, 2, 4];
        let s = sample_negatives(&owned, 5, 20, &mut rng).unwrap();
        assert!(s.iter().all(|&j| j == 3));
        assert!(sample_negatives(&[0, 1], 2, 1, &mut rng).is_err());
        let a = sample_negatives(&[1, 5], 9, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_negatives(&[1, 5], 9, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|j| *j != 1 && *j != 5 && *j < 9));
    }
}
