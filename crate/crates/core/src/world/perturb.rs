use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{render, Context, Scene};
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum VelocityPerturbation {
    /// Multiply the history speed by `r >= 0`.
    Scale(f64),
    /// Set the history speed magnitude, keeping the heading.
    Absolute(f64),
}

impl VelocityPerturbation {
    pub fn label(&self) -> String {
        match self {
            VelocityPerturbation::Scale(r) => format!("x{r:.1}"),
            VelocityPerturbation::Absolute(v) => format!("{v} m/s"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Agent,
    Map,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::Agent => "agent",
            Block::Map => "map",
        }
    }
}

pub fn perturb_ego_velocity(scene: &Scene, mode: VelocityPerturbation) -> Scene {
    let mut out = scene.clone();
    for h in &mut out.ego_history {
        match mode {
            VelocityPerturbation::Scale(r) => h.speed *= r,
            VelocityPerturbation::Absolute(v) => h.speed = v,
        }
    }
    out
}

/// Adds uniform noise in `[-m, m] * rms(block)` to one feature block.
pub fn perturb_context_features(scene: &Scene, block: Block, magnitude: f64, seed: u64) -> Scene {
    let mut out = scene.clone();
    if magnitude == 0.0 {
        return out;
    }
    let target: &mut Tensor = match block {
        Block::Agent => &mut out.agent_features,
        Block::Map => &mut out.map_features,
    };
    let rms = (target.data().iter().map(|v| v * v).sum::<f64>() / target.len() as f64).sqrt();
    let bound = magnitude * rms;
    let mut rng = seeding::child_rng(seed, scene.index as u64);
    for v in target.data_mut() {
        *v += rng.gen_range(-bound..=bound);
    }
    out
}

/// Re-renders the scene under `context` with its exogenous noise held fixed.
/// The ego history is carried over unchanged.
pub fn counterfactual_context(scene: &Scene, context: Context) -> Scene {
    if context == scene.context {
        return scene.clone();
    }
    render(scene.index, context, scene.cooccurrence, scene.exogenous.clone(), scene.ego_history)
}
