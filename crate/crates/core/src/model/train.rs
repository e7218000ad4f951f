use log::debug;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_backward, FloatImage, ModelParams, ModelShape, ParamSet};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossConfig};
use crate::objectness::ObjectnessMap;
use crate::rng;
use crate::seg::ClassCatalog;
use crate::supervision::{assign_weights, SupervisionKind, SupervisionRecord, WeightScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitMode {
    #[default]
    ZeroClassifier,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub bias_lr_multiplier: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub lambda_obj: f64,
    pub weight_scheme: WeightScheme,
    pub init: InitMode,
    /// First-layer init standard deviation; He scaling when absent.
    pub init_std: Option<f64>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            bias_lr_multiplier: 2.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 20,
            iterations: 300,
            seed: 0,
            lambda_obj: 0.0,
            weight_scheme: WeightScheme::Uniform,
            init: InitMode::ZeroClassifier,
            init_std: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Full-scale recipe: pre-trained backbone learning rate and iteration count.
    pub fn full_scale() -> Self {
        TrainConfig { learning_rate: 1e-5, iterations: 50_000, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("bias_lr_multiplier", self.bias_lr_multiplier),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.lambda_obj >= 0.0 && self.lambda_obj.is_finite()) {
            return Err(Error::Config(format!("lambda_obj must be non-negative, got {}", self.lambda_obj)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(s) = self.init_std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init_std must be positive, got {s}")));
            }
        }
        self.weight_scheme.validate()
    }
}

/// He scaling for the first convolution.
pub(crate) fn default_init_std(shape: &ModelShape) -> f64 {
    (2.0 / (super::IN_CHANNELS * shape.kernel * shape.kernel) as f64).sqrt()
}

/// Gaussian first layer; the classifier is zero (`ZeroClassifier`) or Gaussian
/// with `1/sqrt(F)` spread (`Random`). Biases start at zero.
pub fn init_params(shape: &ModelShape, mode: InitMode, init_std: Option<f64>, seed: u64) -> Result<ModelParams> {
    shape.validate()?;
    let std = init_std.unwrap_or_else(|| default_init_std(shape));
    let mut values = ParamSet::zeros(shape);
    let mut r = rng::seeded(rng::derive_seed(seed, "init", 0));
    let first = Normal::new(0.0, std).map_err(|e| Error::Config(format!("init_std: {e}")))?;
    values.conv1_w.iter_mut().for_each(|w| *w = first.sample(&mut r));
    if mode == InitMode::Random {
        let cls = Normal::new(0.0, 1.0 / (shape.features as f64).sqrt()).expect("positive spread");
        values.conv2_w.iter_mut().for_each(|w| *w = cls.sample(&mut r));
    }
    Ok(ModelParams { shape: *shape, values })
}

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: ParamSet,
}

impl SgdState {
    pub fn new(shape: &ModelShape) -> Self {
        SgdState { velocity: ParamSet::zeros(shape) }
    }
}

pub fn sgd_step(params: &mut ModelParams, grads: &ParamSet, state: &mut SgdState, cfg: &TrainConfig) -> Result<()> {
    let names = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"];
    for ((name, (g, _)), (v, _)) in names.iter().zip(grads.tensors()).zip(state.velocity.tensors()) {
        if g.len() != v.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {name}", v.len()),
                actual: format!("{}", g.len()),
            });
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{name}[{i}] = {}", g[i])));
        }
    }
    let tensors = params.values.tensors_mut().into_iter().zip(grads.tensors()).zip(state.velocity.tensors_mut());
    for (((w, is_bias), (g, _)), (v, _)) in tensors {
        let (lr, decay) = if is_bias {
            (cfg.learning_rate * cfg.bias_lr_multiplier, 0.0)
        } else {
            (cfg.learning_rate, cfg.weight_decay)
        };
        for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = cfg.momentum * *v - lr * (g + decay * *w);
            *w += *v;
        }
    }
    Ok(())
}

/// One training image with its supervision and optional objectness prior.
/// The objectness term is applied only where a prior is attached.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: FloatImage,
    pub record: SupervisionRecord,
    pub prior: Option<ObjectnessMap>,
    /// Multiplies this image's loss in the batch mean.
    pub weight: f64,
}

impl TrainSample {
    pub fn new(image: FloatImage, record: SupervisionRecord, prior: Option<ObjectnessMap>) -> Self {
        TrainSample { image, record, prior, weight: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean combined loss of each iteration's minibatch, before its update.
    pub loss_history: Vec<f64>,
}

fn reweight(record: &SupervisionRecord, scheme: &WeightScheme) -> Result<SupervisionRecord> {
    let mut rec = record.clone();
    let pointwise = matches!(rec.kind, SupervisionKind::Points1 | SupervisionKind::PointsAll)
        || (rec.kind == SupervisionKind::HybridMember && rec.mask.is_none());
    if pointwise {
        if let Some(points) = rec.points.as_ref().filter(|p| !p.is_empty()) {
            rec.points = Some(assign_weights(points, scheme)?);
        }
    }
    Ok(rec)
}

/// Minibatch SGD starting from `init`. Per-image work runs in parallel and
/// is reduced in batch order, so the result is independent of thread count.
pub fn train(
    init: ModelParams,
    samples: &[TrainSample],
    catalog: &ClassCatalog,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if init.shape.num_classes != catalog.num_classes() {
        return Err(Error::Config(format!(
            "model predicts {} classes but the catalog has {}",
            init.shape.num_classes,
            catalog.num_classes()
        )));
    }
    if let Some(s) = samples.iter().find(|s| !(s.weight > 0.0 && s.weight.is_finite())) {
        return Err(Error::Config(format!("sample {:?} has weight {}", s.record.image_id, s.weight)));
    }
    let records: Vec<SupervisionRecord> = samples
        .iter()
        .map(|s| {
            s.record.validate(catalog, s.image.width(), s.image.height())?;
            reweight(&s.record, &cfg.weight_scheme)
        })
        .collect::<Result<_>>()?;

    let mut params = init;
    let mut state = SgdState::new(&params.shape);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;
    let batch = cfg.batch_size.min(samples.len());

    for it in 0..cfg.iterations {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                let mut r = rng::seeded(rng::derive_seed(cfg.seed, "shuffle", epoch));
                order.shuffle(&mut r);
                epoch += 1;
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }

        let results: Vec<Result<(f64, ParamSet)>> = picked
            .par_iter()
            .map(|&i| {
                let s = &samples[i];
                let lambda = if s.prior.is_some() { cfg.lambda_obj } else { 0.0 };
                let prior = if lambda > 0.0 { s.prior.as_ref() } else { None };
                forward_backward(&params, &s.image, |scores| {
                    let l = combined_loss(scores, &records[i], prior, lambda, catalog, &cfg.loss)?;
                    Ok((l.value, l.grad))
                })
            })
            .collect();

        let scale = 1.0 / picked.len() as f64;
        let mut grads = ParamSet::zeros(&params.shape);
        let mut loss = 0.0;
        for (r, &i) in results.into_iter().zip(&picked) {
            let (value, g) = r?;
            let wt = scale * samples[i].weight;
            loss += wt * value;
            grads.add_scaled(&g, wt);
        }
        if it % 50 == 0 {
            debug!("iteration {it}: loss {loss:.5}");
        }
        history.push(loss);
        sgd_step(&mut params, &grads, &mut state, cfg)?;
    }
    Ok(TrainOutcome { params, loss_history: history })
}
