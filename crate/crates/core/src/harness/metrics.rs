use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::PlannerModel;
use crate::world::{collides, Dataset, Scene, HORIZON};

/// Anything that plans six waypoints for a scene.
pub trait TrajectoryModel: Sync {
    fn plan(&self, scene: &Scene) -> Result<Vec<[f64; 2]>>;

    /// Stable identity recorded in reports.
    fn identity(&self) -> String;
}

impl TrajectoryModel for PlannerModel {
    fn plan(&self, scene: &Scene) -> Result<Vec<[f64; 2]>> {
        Ok(self.predict(scene)?.waypoints)
    }

    fn identity(&self) -> String {
        self.identity_hash()
    }
}

/// Waypoint counts covered by the 1 s, 2 s and 3 s horizons.
pub const HORIZON_STEPS: [usize; 3] = [2, 4, 6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub context: String,
    pub l2: [f64; 3],
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub model_hash: String,
    pub condition: String,
    pub split: String,
    pub seed: u64,
    pub scenes: usize,
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub collision_rate: f64,
    pub records: Vec<SceneRecord>,
}

/// Mean displacement over the first `steps` waypoints.
pub fn l2_upto(pred: &[[f64; 2]], truth: &[[f64; 2]], steps: usize) -> f64 {
    pred.iter()
        .zip(truth)
        .take(steps)
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
        .sum::<f64>()
        / steps as f64
}

/// Labels attached to a report.
#[derive(Clone, Debug, Default)]
pub struct Condition {
    pub model: String,
    pub condition: String,
    pub split: String,
    pub seed: u64,
}

impl Condition {
    pub fn new(model: &str, condition: &str, split: &str, seed: u64) -> Self {
        Condition {
            model: model.into(),
            condition: condition.into(),
            split: split.into(),
            seed,
        }
    }
}

pub fn evaluate<M: TrajectoryModel + ?Sized>(model: &M, data: &Dataset, cond: &Condition) -> Result<MetricsReport> {
    evaluate_scenes(model, &data.scenes, cond)
}

pub fn evaluate_scenes<M: TrajectoryModel + ?Sized>(model: &M, scenes: &[Scene], cond: &Condition) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let records: Vec<SceneRecord> = scenes
        .par_iter()
        .map(|s| {
            let pred = model.plan(s)?;
            if pred.len() != HORIZON || pred.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::Contract(format!("scene {}: bad waypoint output", s.index)));
            }
            Ok(SceneRecord {
                index: s.index,
                context: s.context.name().to_string(),
                l2: HORIZON_STEPS.map(|k| l2_upto(&pred, &s.expert, k)),
                collision: collides(&pred, &s.agents),
            })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(model.identity(), cond, records))
}

/// Aggregates per-scene records in index order.
pub fn summarize(model_hash: String, cond: &Condition, records: Vec<SceneRecord>) -> MetricsReport {
    let n = records.len() as f64;
    let mut l2 = [0.0; 3];
    for r in &records {
        for (a, v) in l2.iter_mut().zip(r.l2) {
            *a += v;
        }
    }
    let l2 = l2.map(|v| v / n);
    MetricsReport {
        model: cond.model.clone(),
        model_hash,
        condition: cond.condition.clone(),
        split: cond.split.clone(),
        seed: cond.seed,
        scenes: records.len(),
        l2_1s: l2[0],
        l2_2s: l2[1],
        l2_3s: l2[2],
        l2_avg: (l2[0] + l2[1] + l2[2]) / 3.0,
        collision_rate: records.iter().filter(|r| r.collision).count() as f64 / n,
        records,
    }
}
