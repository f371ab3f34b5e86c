//! Toy sequential planner: perception heads over object and map queries, a
//! motion decoder where agent queries attend to objects and map, and a
//! planning decoder where one ego query attends to agents and map.
//!
//! SCIS instances are optional and purely additive: a baseline and a causal
//! model built from the same seed share every backbone tensor at init.

mod train;

pub use train::{pretrain_baseline, train_causal, train_causal_with, TrainConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionary::{Domain, DomainStores, EmbeddingStore, PrototypeDictionary};
use crate::error::{Error, Result};
use crate::intervention::{
    idm_forward, multi_head_attention, pdm_forward, GateMode, IdmParams, IdmVars, InsertionPoint, PdmParams, PdmVars,
    Pipeline, Site,
};
use crate::params::{Bound, ParamStore};
use crate::seeding::{self, derive_seed};
use crate::tensor::{concat_rows, mlp_forward, Tape, Tensor, Var};
use crate::world::{Scene, FEATURE_DIM, HORIZON, MAP_CLASSES, OBJECT_CLASSES};

/// Ego status: speed and yaw at both history steps.
pub const EGO_INPUT: usize = 4;
/// Trajectory targets are divided by this before the loss.
pub const TARGET_SCALE: f64 = 10.0;
const MOTION_OUT: usize = 6;
const PLAN_OUT: usize = 2 * HORIZON;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Query width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Hidden width of the planning head.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            heads: 2,
            hidden: 32,
        }
    }
}

fn dense<R: rand::Rng>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    ps.insert(format!("{name}.w"), Tensor::glorot(fan_in, fan_out, rng));
    ps.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

fn mlp<R: rand::Rng>(ps: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) {
    for (i, w) in widths.windows(2).enumerate() {
        dense(ps, &format!("{name}.{i}"), w[0], w[1], rng);
    }
}

fn attention<R: rand::Rng>(ps: &mut ParamStore, name: &str, dim: usize, rng: &mut R) {
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        ps.insert(format!("{name}.{w}"), Tensor::glorot(dim, dim, rng));
    }
}

/// Backbone parameters drawn from the model seed.
fn backbone(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = seeding::child_rng(seed, 1);
    let d = cfg.dim;
    let mut ps = ParamStore::new();
    mlp(&mut ps, "obj_enc", &[FEATURE_DIM, d, d], &mut rng);
    dense(&mut ps, "obj_cls", d, OBJECT_CLASSES, &mut rng);
    mlp(&mut ps, "map_enc", &[FEATURE_DIM, d, d], &mut rng);
    dense(&mut ps, "map_cls", d, MAP_CLASSES, &mut rng);
    mlp(&mut ps, "agent_enc", &[FEATURE_DIM, d, d], &mut rng);
    attention(&mut ps, "mot_attn", d, &mut rng);
    mlp(&mut ps, "mot_head", &[d, d, MOTION_OUT], &mut rng);
    mlp(&mut ps, "ego_enc", &[EGO_INPUT, d, d], &mut rng);
    attention(&mut ps, "plan_attn", d, &mut rng);
    mlp(&mut ps, "plan_head", &[d, cfg.hidden, PLAN_OUT], &mut rng);
    ps
}

#[derive(Clone, Debug)]
pub struct PlannerModel {
    pub config: ModelConfig,
    /// Seeds the backbone and every SCIS instance.
    pub seed: u64,
    pub params: ParamStore,
    /// Installed SCIS instances in wiring order.
    pub sites: Vec<Site>,
    pub dict: Option<PrototypeDictionary>,
    /// Mean training loss before training, then per epoch.
    pub train_loss: Vec<f64>,
    pub gate: GateMode,
}

/// Planner outputs for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub object_logits: Tensor,
    pub map_logits: Tensor,
    /// Per agent: displacement at 1 s, 2 s, 3 s.
    pub motion: Tensor,
    pub waypoints: Vec<[f64; 2]>,
}

/// Tape handles of one forward pass.
pub struct Forward<'t> {
    pub object_logits: Var<'t>,
    pub map_logits: Var<'t>,
    pub motion: Var<'t>,
    pub plan: Var<'t>,
    pub object_q: Var<'t>,
    pub map_q: Var<'t>,
    pub agent_q: Var<'t>,
    pub ego_q: Var<'t>,
    /// Dictionary constants used by this pass.
    pub dict: Vec<Var<'t>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub classification: f64,
    pub motion: f64,
    pub planning: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            classification: 1.0,
            motion: 1.0,
            planning: 1.0,
        }
    }
}

pub fn ego_input(scene: &Scene) -> Tensor {
    let data = scene
        .ego_history
        .iter()
        .flat_map(|h| [h.speed / TARGET_SCALE, 4.0 * h.yaw])
        .collect();
    Tensor::from_parts(vec![1, EGO_INPUT], data)
}

fn mlp_vars<'t>(b: &Bound<'t>, name: &str) -> Result<Vec<(Var<'t>, Var<'t>)>> {
    let mut layers = Vec::new();
    while let Ok(w) = b.get(&format!("{name}.{}.w", layers.len())) {
        let bias = b.get(&format!("{name}.{}.b", layers.len()))?;
        layers.push((w, bias));
    }
    if layers.is_empty() {
        return Err(Error::Invalid(format!("missing layers for `{name}`")));
    }
    Ok(layers)
}

fn attn_vars<'t>(b: &Bound<'t>, name: &str) -> Result<[Var<'t>; 4]> {
    Ok([
        b.get(&format!("{name}.w_q"))?,
        b.get(&format!("{name}.w_k"))?,
        b.get(&format!("{name}.w_v"))?,
        b.get(&format!("{name}.w_o"))?,
    ])
}

fn linear<'t>(b: &Bound<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    x.matmul(b.get(&format!("{name}.w"))?)?.add_row(b.get(&format!("{name}.b"))?)
}

/// Mean cross-entropy of `logits` rows against `labels`.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let c = logits.cols();
    if labels.len() != logits.rows() || labels.iter().any(|&l| l >= c) {
        return Err(Error::Invalid("labels do not match logits".into()));
    }
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * c + l).collect();
    Ok(logits.log_softmax_rows().gather(&idx)?.mean().scale(-1.0))
}

impl PlannerModel {
    /// Freshly initialized model without SCIS instances.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 || config.heads == 0 || config.dim % config.heads != 0 {
            return Err(Error::Config(format!("bad model shape {config:?}")));
        }
        Ok(PlannerModel {
            config,
            seed,
            params: backbone(&config, seed),
            sites: Vec::new(),
            dict: None,
            train_loss: Vec::new(),
            gate: GateMode::Learned,
        })
    }

    pub fn is_causal(&self) -> bool {
        !self.sites.is_empty()
    }

    /// SHA-256 of the parameter store.
    pub fn identity_hash(&self) -> String {
        self.params.hash()
    }

    fn dict_var<'t>(&self, tape: &'t Tape, site: Site, used: &mut Vec<Var<'t>>) -> Result<Var<'t>> {
        let dict = self
            .dict
            .as_ref()
            .ok_or_else(|| Error::Contract("SCIS instance installed without a dictionary".into()))?;
        let z = tape.constant(dict.get(site.dictionary()));
        used.push(z);
        Ok(z)
    }

    fn idm<'t>(&self, tape: &'t Tape, b: &Bound<'t>, site: Site, s: Var<'t>, used: &mut Vec<Var<'t>>) -> Result<Var<'t>> {
        if !self.sites.contains(&site) {
            return Ok(s);
        }
        let z = self.dict_var(tape, site, used)?;
        let vars = IdmVars::from_bound(b, site.prefix(), self.config.heads, self.gate)?;
        Ok(idm_forward(s, z, &vars)?.clean)
    }

    fn pdm<'t>(
        &self,
        tape: &'t Tape,
        b: &Bound<'t>,
        site: Site,
        q: Var<'t>,
        logits: Var<'t>,
        used: &mut Vec<Var<'t>>,
    ) -> Result<Var<'t>> {
        if !self.sites.contains(&site) {
            return Ok(logits);
        }
        let z = self.dict_var(tape, site, used)?;
        let vars = PdmVars::from_bound(b, site.prefix())?;
        pdm_forward(q, logits, z, &vars)
    }

    /// Perception, then prediction, then planning.
    pub fn forward<'t>(&self, tape: &'t Tape, b: &Bound<'t>, scene: &Scene) -> Result<Forward<'t>> {
        let mut used = Vec::new();
        let heads = self.config.heads;

        let object_q = mlp_forward(&mlp_vars(b, "obj_enc")?, tape.constant(&scene.object_features))?;
        let object_logits = linear(b, "obj_cls", object_q)?;
        let object_logits = self.pdm(tape, b, Site::PdmObject, object_q, object_logits, &mut used)?;
        let map_q = mlp_forward(&mlp_vars(b, "map_enc")?, tape.constant(&scene.map_features))?;
        let map_logits = linear(b, "map_cls", map_q)?;
        let map_logits = self.pdm(tape, b, Site::PdmMap, map_q, map_logits, &mut used)?;

        let agent0 = mlp_forward(&mlp_vars(b, "agent_enc")?, tape.constant(&scene.agent_features))?;
        let o1 = self.idm(tape, b, Site::IdmObjectVsMap, object_q, &mut used)?;
        let m1 = self.idm(tape, b, Site::IdmMapVsObject, map_q, &mut used)?;
        let scene_kv = concat_rows(&[o1, m1])?;
        let agent_q = agent0.add(multi_head_attention(agent0, scene_kv, attn_vars(b, "mot_attn")?, heads)?)?;
        let motion = mlp_forward(&mlp_vars(b, "mot_head")?, agent_q)?;

        let a2 = self.idm(tape, b, Site::IdmAgentVsMap, agent_q, &mut used)?;
        let m2 = self.idm(tape, b, Site::IdmMapVsAgent, map_q, &mut used)?;
        let plan_kv = concat_rows(&[a2, m2])?;
        let ego0 = mlp_forward(&mlp_vars(b, "ego_enc")?, tape.constant(&ego_input(scene)))?;
        let ego_q = ego0.add(multi_head_attention(ego0, plan_kv, attn_vars(b, "plan_attn")?, heads)?)?;
        let plan = mlp_forward(&mlp_vars(b, "plan_head")?, ego_q)?;

        Ok(Forward {
            object_logits,
            map_logits,
            motion,
            plan,
            object_q,
            map_q,
            agent_q,
            ego_q,
            dict: used,
        })
    }

    /// Weighted sum of the four task losses.
    pub fn loss<'t>(&self, f: &Forward<'t>, scene: &Scene, w: &LossWeights) -> Result<Var<'t>> {
        let tape = f.plan.tape();
        let cls = cross_entropy(f.object_logits, &scene.object_classes)?
            .add(cross_entropy(f.map_logits, &scene.map_classes)?)?;
        let motion_target = tape.constant(&scene.agent_motion()).scale(1.0 / TARGET_SCALE);
        let motion = f.motion.sub(motion_target)?.square().mean();
        let plan_target = Tensor::from_parts(
            vec![1, PLAN_OUT],
            scene.expert.iter().flat_map(|p| [p[0] / TARGET_SCALE, p[1] / TARGET_SCALE]).collect(),
        );
        let plan = f.plan.sub(tape.constant(&plan_target))?.square().mean();
        cls.scale(w.classification)
            .add(motion.scale(w.motion))?
            .add(plan.scale(w.planning))
    }

    fn check_scene(&self, scene: &Scene) -> Result<()> {
        for (name, t) in [
            ("object", &scene.object_features),
            ("map", &scene.map_features),
            ("agent", &scene.agent_features),
        ] {
            if t.shape().len() != 2 || t.cols() != FEATURE_DIM {
                return Err(Error::shape("scene features", t.shape(), &[0, FEATURE_DIM]));
            }
            if t.rows() == 0 {
                return Err(Error::Invalid(format!("scene has no {name} rows")));
            }
        }
        Ok(())
    }

    pub fn predict(&self, scene: &Scene) -> Result<Prediction> {
        self.check_scene(scene)?;
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let f = self.forward(&tape, &b, scene)?;
        let plan = f.plan.value();
        Ok(Prediction {
            object_logits: f.object_logits.value(),
            map_logits: f.map_logits.value(),
            motion: f.motion.value().scaled(TARGET_SCALE),
            waypoints: plan
                .data()
                .chunks(2)
                .map(|p| [p[0] * TARGET_SCALE, p[1] * TARGET_SCALE])
                .collect(),
        })
    }

    /// Final-layer object, map and agent queries of every scene.
    pub fn collect_embeddings(&self, scenes: &[Scene]) -> Result<DomainStores> {
        let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
        let mut prov: [Vec<(usize, usize)>; 3] = Default::default();
        for (si, scene) in scenes.iter().enumerate() {
            self.check_scene(scene)?;
            let tape = Tape::new();
            let b = self.params.bind_frozen(&tape);
            let f = self.forward(&tape, &b, scene)?;
            for (d, q) in [f.object_q, f.map_q, f.agent_q].into_iter().enumerate() {
                let t = q.value();
                for r in 0..t.rows() {
                    rows[d].push(t.row(r).to_vec());
                    prov[d].push((si, r));
                }
            }
        }
        let [ro, rm, ra] = rows;
        let [po, pm, pa] = prov;
        Ok(DomainStores {
            object: EmbeddingStore::new(Domain::Object, ro, po)?,
            map: EmbeddingStore::new(Domain::Map, rm, pm)?,
            agent: EmbeddingStore::new(Domain::Agent, ra, pa)?,
        })
    }

    /// Final ego query of every scene, one row each.
    pub fn ego_embeddings(&self, scenes: &[Scene]) -> Result<Tensor> {
        let rows = scenes
            .iter()
            .map(|scene| {
                self.check_scene(scene)?;
                let tape = Tape::new();
                let b = self.params.bind_frozen(&tape);
                Ok(self.forward(&tape, &b, scene)?.ego_q.value().data().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            config: self.config,
            seed: self.seed,
            sites: self.sites.clone(),
            dict_hash: self.dict.as_ref().map(|d| d.hash.clone()),
            train_loss: self.train_loss.clone(),
            params: self.params.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    /// Restores a checkpoint; causal checkpoints need the dictionary they were
    /// trained with.
    pub fn from_json(s: &str, dict: Option<&PrototypeDictionary>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        let dict = match (&ck.dict_hash, dict) {
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::Config("causal checkpoint needs its dictionary".into()));
            }
            (Some(h), Some(d)) => {
                d.verify()?;
                if &d.hash != h {
                    return Err(Error::HashMismatch {
                        expected: h.clone(),
                        found: d.hash.clone(),
                    });
                }
                Some(d.clone())
            }
        };
        Ok(PlannerModel {
            config: ck.config,
            seed: ck.seed,
            params: ck.params,
            sites: ck.sites,
            dict,
            train_loss: ck.train_loss,
            gate: GateMode::Learned,
        })
    }

    pub fn load(path: &Path, dict: Option<&PrototypeDictionary>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, dict)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    seed: u64,
    sites: Vec<Site>,
    dict_hash: Option<String>,
    train_loss: Vec<f64>,
    params: ParamStore,
}

impl Pipeline for PlannerModel {
    fn insertion_points(&self) -> Vec<InsertionPoint> {
        vec![
            InsertionPoint::ObjectLogits,
            InsertionPoint::MapLogits,
            InsertionPoint::PredictionInputs,
            InsertionPoint::PlanningInputs,
        ]
    }

    fn install(&mut self, site: Site, prototypes: &Tensor) -> Result<()> {
        if self.sites.contains(&site) {
            return Err(Error::Misuse(format!("{} installed twice", site.prefix())));
        }
        if prototypes.cols() != self.config.dim {
            return Err(Error::Config(format!(
                "dictionary width {} does not match model width {}",
                prototypes.cols(),
                self.config.dim
            )));
        }
        let index = Site::ALL.iter().position(|s| *s == site).expect("known site") as u64;
        let mut rng = seeding::rng(derive_seed(self.seed, 100 + index));
        if site.is_pdm() {
            let classes = match site {
                Site::PdmObject => OBJECT_CLASSES,
                _ => MAP_CLASSES,
            };
            PdmParams::init(prototypes.rows(), classes, &mut rng).store(site.prefix(), &mut self.params);
        } else {
            IdmParams::init(self.config.dim, self.config.heads, &mut rng)?.store(site.prefix(), &mut self.params);
        }
        self.sites.push(site);
        Ok(())
    }
}
