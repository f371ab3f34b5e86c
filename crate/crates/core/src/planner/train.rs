use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LossWeights, ModelConfig, PlannerModel};
use crate::dictionary::PrototypeDictionary;
use crate::error::{Error, Result};
use crate::intervention::{stagewise_wire, ScisFlags};
use crate::params::GradStore;
use crate::seeding::{self, derive_seed};
use crate::tensor::Tape;
use crate::world::{Dataset, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub flags: ScisFlags,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr: 0.1,
            seed: 0,
            weights: LossWeights::default(),
            flags: ScisFlags::NONE,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        let w = self.weights;
        if [w.classification, w.motion, w.planning].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

impl PlannerModel {
    /// Loss and parameter gradients of one scene.
    pub fn scene_gradients(&self, scene: &Scene, w: &LossWeights) -> Result<(f64, GradStore)> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let f = self.forward(&tape, &b, scene)?;
        let loss = self.loss(&f, scene, w)?;
        let grads = tape.backward(loss)?;
        if f.dict.iter().any(|z| grads.get(*z).is_some()) {
            return Err(Error::Contract("gradient reached the frozen dictionary".into()));
        }
        Ok((loss.item(), GradStore::from_bound(&b, &grads)))
    }

    pub fn scene_loss(&self, scene: &Scene, w: &LossWeights) -> Result<f64> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let f = self.forward(&tape, &b, scene)?;
        Ok(self.loss(&f, scene, w)?.item())
    }

    /// Mean loss over `scenes`, summed in scene order.
    pub fn mean_loss(&self, scenes: &[Scene], w: &LossWeights) -> Result<f64> {
        let losses: Vec<f64> = scenes
            .par_iter()
            .map(|s| self.scene_loss(s, w))
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }

    fn sgd_step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?;
            if g.len() != t.len() {
                return Err(Error::Contract(format!("gradient of `{name}` has the wrong length")));
            }
            for (p, d) in t.data_mut().iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
        Ok(())
    }
}

fn fit(model: &mut PlannerModel, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let initial = model.mean_loss(&data.scenes, &cfg.weights)?;
    if !initial.is_finite() {
        return Err(Error::Training {
            step: 0,
            reason: format!("initial loss {initial}"),
        });
    }
    model.train_loss = vec![initial];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seeding::rng(derive_seed(cfg.seed, 1000 + epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if let Some(d) = &model.dict {
                d.verify()?;
            }
            let results: Vec<(f64, GradStore)> = batch
                .par_iter()
                .map(|&i| model.scene_gradients(&data.scenes[i], &cfg.weights))
                .collect::<Result<_>>()?;
            let mut sum = GradStore::default();
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                sum.add_assign(g);
            }
            if !loss.is_finite() || !sum.is_finite() {
                return Err(Error::Training {
                    step,
                    reason: format!("non-finite loss or gradient (batch loss {loss})"),
                });
            }
            total += loss;
            sum.scale(1.0 / batch.len() as f64);
            model.sgd_step(&sum, cfg.lr)?;
            step += 1;
        }
        model.train_loss.push(total / data.len() as f64);
    }
    let last = *model.train_loss.last().expect("at least one epoch");
    if cfg.lr > 0.0 && last >= initial {
        return Err(Error::Training {
            step,
            reason: format!("loss did not decrease ({initial} -> {last})"),
        });
    }
    Ok(())
}

/// Stage 1: the plain planner.
pub fn pretrain_baseline(data: &Dataset, cfg: &TrainConfig) -> Result<PlannerModel> {
    cfg.validate()?;
    if cfg.flags.any() {
        return Err(Error::Misuse(
            "pretrain_baseline trains the plain planner; clear the SCIS flags or call train_causal".into(),
        ));
    }
    let mut model = PlannerModel::new(cfg.model, cfg.seed)?;
    fit(&mut model, data, cfg)?;
    Ok(model)
}

/// Stage 2: a fresh planner with SCIS instances against a frozen dictionary.
pub fn train_causal(data: &Dataset, dict: &PrototypeDictionary, cfg: &TrainConfig) -> Result<PlannerModel> {
    train_causal_with(data, dict, cfg, None)
}

/// As [`train_causal`], optionally starting the backbone from `warm`.
pub fn train_causal_with(
    data: &Dataset,
    dict: &PrototypeDictionary,
    cfg: &TrainConfig,
    warm: Option<&PlannerModel>,
) -> Result<PlannerModel> {
    cfg.validate()?;
    if !cfg.flags.any() {
        return Err(Error::Misuse(
            "no SCIS module selected; use pretrain_baseline for the plain planner".into(),
        ));
    }
    if dict.dim() != cfg.model.dim {
        return Err(Error::Config(format!(
            "dictionary width {} does not match model width {}",
            dict.dim(),
            cfg.model.dim
        )));
    }
    dict.verify()?;
    let mut model = match warm {
        Some(w) if w.is_causal() => return Err(Error::Misuse("warm start needs a baseline model".into())),
        Some(w) if w.config != cfg.model => return Err(Error::Config("warm-start model has a different shape".into())),
        Some(w) => {
            let mut m = w.clone();
            m.seed = cfg.seed;
            m
        }
        None => PlannerModel::new(cfg.model, cfg.seed)?,
    };
    model.dict = Some(dict.clone());
    stagewise_wire(&mut model, dict, cfg.flags)?;
    fit(&mut model, data, cfg)?;
    let d = model.dict.as_ref().expect("set above");
    d.verify()?;
    if d.hash != dict.hash {
        return Err(Error::HashMismatch {
            expected: dict.hash.clone(),
            found: d.hash.clone(),
        });
    }
    Ok(model)
}
