//! Joint training: cross-entropy over positives and sampled negatives plus,
//! for the text variants, the review log-likelihood, mixed by δ.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::features::RegionalFeatureStore;
use crate::data::reviews::Review;
use crate::error::{Error, Result};
use crate::gru::{review_pass, ReviewInputs};
use crate::params::{InitScheme, ModelDims, ModelParams, ParamGroup, Variant};
use crate::vecf::{add_regularizer, bce_term, check_batch, sample_negatives, LabeledPair, PairForward};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub delta: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
    pub z: usize,
    pub o: usize,
    /// Positives per update; each brings its own negative.
    pub batch_size: usize,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ReVecf,
            learning_rate: 0.01,
            delta: 0.2,
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
            k: 16,
            z: 16,
            o: 64,
            batch_size: 1,
            init: InitScheme::UnitUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.k == 0 {
            return Err(Error::Config("batch_size and K must be positive".into()));
        }
        if self.variant.has_text() && (self.z == 0 || self.o == 0) {
            return Err(Error::Config("text variants need Z and O >= 1".into()));
        }
        Ok(())
    }

    /// Model shape for a dataset of the given size.
    pub fn dims(&self, users: usize, items: usize, d: usize, regions: usize, vocab: usize) -> ModelDims {
        ModelDims {
            users,
            items,
            k: self.k,
            d,
            regions,
            z: self.z,
            vocab,
            o: self.o,
        }
    }

    /// δ as seen by the objective: image-only models have no text term.
    pub fn effective_delta(&self) -> f64 {
        if self.variant.has_text() {
            self.delta
        } else {
            0.0
        }
    }
}

/// Encoded reviews keyed by (user, item).
#[derive(Debug, Clone, Default)]
pub struct ReviewIndex {
    map: HashMap<(usize, usize), Vec<usize>>,
}

impl ReviewIndex {
    pub fn new(reviews: &[Review]) -> Self {
        let map = reviews
            .iter()
            .filter(|r| !r.tokens.is_empty())
            .map(|r| ((r.user, r.item), r.tokens.clone()))
            .collect();
        Self { map }
    }

    pub fn get(&self, user: usize, item: usize) -> Option<&[usize]> {
        self.map.get(&(user, item)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Data and text resources for one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub features: Option<&'a RegionalFeatureStore>,
    pub reviews: &'a ReviewIndex,
    pub end_token: usize,
    pub delta: f64,
    pub lambda: f64,
}

/// Objective terms of one example. Gradients of its contribution to
/// `δ·review + (1 − δ)·bce` are accumulated into `grads`.
fn accumulate_example(
    params: &ModelParams,
    inputs: &ObjectiveInputs<'_>,
    ex: LabeledPair,
    grads: &mut ModelParams,
) -> (f64, f64) {
    let fwd = PairForward::compute(params, inputs.features, ex.user, ex.item);
    let (bce, d_logit) = bce_term(fwd.logit, ex.label);
    let delta = inputs.delta;
    let review = match (params.text(), ex.label) {
        (Some(text), true) if delta != 0.0 => inputs.reviews.get(ex.user, ex.item).map(|tokens| {
            let v = &params.vecf;
            review_pass(
                tokens,
                inputs.end_token,
                ReviewInputs {
                    user: v.user_emb.row(ex.user),
                    item: v.item_emb.row(ex.item),
                    image: &fwd.image,
                },
                text,
                delta,
                grads.text.as_mut(),
            )
        }),
        _ => None,
    };
    let extra = review
        .as_ref()
        .map(|r| (r.d_user.as_slice(), r.d_item.as_slice(), r.d_image.as_slice()));
    fwd.backward(params, inputs.features, (1.0 - delta) * d_logit, extra, grads);
    (bce, review.map_or(0.0, |r| r.log_likelihood))
}

fn combine(bce: f64, review: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        (1.0 - delta) * bce
    } else {
        delta * review + (1.0 - delta) * bce
    }
}

/// Accumulates the data-term gradient of `batch` into `grads` (which is not
/// cleared) and returns the data term.
fn batch_data_term(
    batch: &[LabeledPair],
    params: &ModelParams,
    inputs: &ObjectiveInputs<'_>,
    grads: &mut ModelParams,
) -> f64 {
    let mut bce = 0.0;
    let mut review = 0.0;
    for &ex in batch {
        let (b, r) = accumulate_example(params, inputs, ex, grads);
        bce += b;
        review += r;
    }
    combine(bce, review, inputs.delta)
}

/// `l₂ = δ·Σ review log-likelihood + (1 − δ)·Σ cross-entropy − λ‖Θ‖²` and its
/// gradient. Review terms come from positives that have a review. An empty
/// batch leaves only the regularizer.
pub fn joint_objective(
    batch: &[LabeledPair],
    params: &ModelParams,
    inputs: &ObjectiveInputs<'_>,
) -> Result<(f64, ModelParams)> {
    check_batch(params, inputs.features, batch)?;
    if !(0.0..=1.0).contains(&inputs.delta) {
        return Err(Error::Config(format!("delta must lie in [0, 1], got {}", inputs.delta)));
    }
    let mut grads = params.zeros_like();
    let data = batch_data_term(batch, params, inputs, &mut grads);
    let penalty = add_regularizer(params, inputs.lambda, &mut grads);
    Ok((data - penalty, grads))
}

/// Training-side view of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    /// Train items per user, sorted.
    pub train: &'a [Vec<usize>],
    pub num_items: usize,
    pub features: Option<&'a RegionalFeatureStore>,
    pub reviews: &'a ReviewIndex,
    pub end_token: usize,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub objective: f64,
    pub seconds: f64,
    pub grad_norm_user: f64,
    pub grad_norm_item: f64,
    pub grad_norm_attention: f64,
    /// GRU, context gate and output layer together.
    pub grad_norm_text: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str =
        "epoch,objective,seconds,grad_norm_P,grad_norm_Q,grad_norm_attn,grad_norm_gru";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{},{}",
                e.epoch,
                e.objective,
                e.seconds,
                e.grad_norm_user,
                e.grad_norm_item,
                e.grad_norm_attention,
                e.grad_norm_text
            );
        }
        out
    }

    /// Equality on everything but wall time.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.objective.to_bits() == b.objective.to_bits()
                    && a.grad_norm_user.to_bits() == b.grad_norm_user.to_bits()
                    && a.grad_norm_item.to_bits() == b.grad_norm_item.to_bits()
                    && a.grad_norm_attention.to_bits() == b.grad_norm_attention.to_bits()
                    && a.grad_norm_text.to_bits() == b.grad_norm_text.to_bits()
            })
    }
}

/// Seed-derived stream for training-time randomness, kept apart from the
/// initialization stream.
const TRAIN_STREAM: u64 = 1;

/// Stateful SGD driver. Owns the sampling RNG so that consecutive epochs
/// continue one deterministic stream.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: TrainData<'a>,
    rng: ChaCha8Rng,
    epoch: usize,
    grads: Option<ModelParams>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: TrainData<'a>) -> Result<Self> {
        config.validate()?;
        if config.variant.uses_images() && data.features.is_none() {
            return Err(Error::Config(format!("variant {} needs a feature file", config.variant)));
        }
        if let Some(u) = data.train.iter().position(|items| items.len() >= data.num_items) {
            return Err(Error::Data(format!("user {u} owns every item; no negatives exist")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            config,
            data,
            rng,
            epoch: 0,
            grads: None,
        })
    }

    /// Fresh parameters for this trainer's data.
    pub fn init_params(&self, dims: ModelDims) -> Result<ModelParams> {
        ModelParams::init(self.config.variant, dims, self.config.init, self.config.seed)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn inputs(&self) -> ObjectiveInputs<'a> {
        ObjectiveInputs {
            features: self.data.features,
            reviews: self.data.reviews,
            end_token: self.data.end_token,
            delta: self.config.effective_delta(),
            lambda: self.config.lambda,
        }
    }

    /// One pass over the shuffled train positives, each paired with a fresh
    /// uniformly sampled negative, with an ascent step per batch.
    pub fn train_epoch(&mut self, params: &mut ModelParams) -> Result<EpochStats> {
        let start = Instant::now();
        self.epoch += 1;
        let mut order: Vec<(usize, usize)> = self
            .data
            .train
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&j| (u, j)))
            .collect();
        order.shuffle(&mut self.rng);

        let inputs = self.inputs();
        let lr = self.config.learning_rate;
        let lambda = self.config.lambda;
        let mut grads = self.grads.take().unwrap_or_else(|| params.zeros_like());
        let mut data_total = 0.0;
        let mut norms = [0.0f64; 4];
        let mut steps = 0usize;
        let mut batch = Vec::with_capacity(2 * self.config.batch_size);
        for chunk in order.chunks(self.config.batch_size) {
            batch.clear();
            for &(u, j) in chunk {
                let neg = sample_negatives(&self.data.train[u], self.data.num_items, 1, &mut self.rng)?[0];
                batch.push(LabeledPair { user: u, item: j, label: true });
                batch.push(LabeledPair { user: u, item: neg, label: false });
            }
            grads.fill_zero();
            let data = batch_data_term(&batch, params, &inputs, &mut grads);
            add_regularizer(params, lambda, &mut grads);
            if !data.is_finite() || !grads.is_finite() {
                self.grads = Some(grads);
                return Err(Error::Numerical(format!(
                    "objective diverged at epoch {} step {steps} (data term {data})",
                    self.epoch
                )));
            }
            data_total += data;
            norms[0] += grads.group_norm(ParamGroup::UserEmb);
            norms[1] += grads.group_norm(ParamGroup::ItemEmb);
            norms[2] += grads.group_norm(ParamGroup::Attention);
            norms[3] += [ParamGroup::Gru, ParamGroup::ContextGate, ParamGroup::Output]
                .iter()
                .map(|&g| grads.group_norm(g).powi(2))
                .sum::<f64>()
                .sqrt();
            params.axpy(lr, &grads);
            steps += 1;
        }
        self.grads = Some(grads);
        if !params.is_finite() {
            return Err(Error::Numerical(format!(
                "parameters became non-finite in epoch {}",
                self.epoch
            )));
        }
        let objective = data_total - lambda * params.squared_norm();
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective is {objective} after epoch {}",
                self.epoch
            )));
        }
        let n = steps.max(1) as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            objective,
            seconds: start.elapsed().as_secs_f64(),
            grad_norm_user: norms[0] / n,
            grad_norm_item: norms[1] / n,
            grad_norm_attention: norms[2] / n,
            grad_norm_text: norms[3] / n,
        })
    }

    /// Runs `epochs` epochs, calling `on_epoch` after each.
    pub fn train<F: FnMut(&EpochStats)>(
        &mut self,
        params: &mut ModelParams,
        epochs: usize,
        mut on_epoch: F,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        for _ in 0..epochs {
            let stats = self.train_epoch(params)?;
            on_epoch(&stats);
            report.epochs.push(stats);
        }
        Ok(report)
    }
}

/// Gradient of one review's log-likelihood with respect to the attention
/// parameters, through the merged image that feeds the context gate.
#[derive(Debug, Clone, PartialEq)]
pub struct BackpropProbe {
    pub variant: Variant,
    /// `None` when the variant has no text model.
    pub attention_grad_norm: Option<f64>,
}

pub fn backprop_text_to_attention(
    params: &ModelParams,
    features: Option<&RegionalFeatureStore>,
    review: &Review,
    end_token: usize,
) -> Result<BackpropProbe> {
    let Some(text) = params.text() else {
        return Ok(BackpropProbe {
            variant: params.variant,
            attention_grad_norm: None,
        });
    };
    let ex = LabeledPair {
        user: review.user,
        item: review.item,
        label: true,
    };
    check_batch(params, features, &[ex])?;
    let fwd = PairForward::compute(params, features, ex.user, ex.item);
    let mut grads = params.zeros_like();
    let v = &params.vecf;
    let pass = review_pass(
        &review.tokens,
        end_token,
        ReviewInputs {
            user: v.user_emb.row(ex.user),
            item: v.item_emb.row(ex.item),
            image: &fwd.image,
        },
        text,
        1.0,
        grads.text.as_mut(),
    );
    fwd.backward(
        params,
        features,
        0.0,
        Some((&pass.d_user, &pass.d_item, &pass.d_image)),
        &mut grads,
    );
    Ok(BackpropProbe {
        variant: params.variant,
        attention_grad_norm: Some(grads.group_norm(ParamGroup::Attention)),
    })
}
