//! Synthetic confounded driving scenes.
//!
//! A latent context (straight / left / right) bends every lane, shapes the
//! map features and steers the lane-following agents. A separate binary
//! co-occurrence flag couples object classes to a shared feature offset. The
//! expert is a hand-written rule over (context, agents, map): cruise at the
//! posted speed, follow lane curvature, brake for a cutting-in agent. The
//! ego history is a noisy copy of the expert's first step, which is the
//! shortcut a planner can fall into.

mod perturb;

pub use perturb::{counterfactual_context, perturb_context_features, perturb_ego_velocity, Block, VelocityPerturbation};

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, derive_seed};
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 16;
pub const HORIZON: usize = 6;
/// Seconds between waypoints.
pub const DT: f64 = 0.5;
pub const OBJECT_CLASSES: usize = 3;
pub const MAP_CLASSES: usize = 3;
pub const LANE_WIDTH: f64 = 3.5;
pub const V_MAX: f64 = 12.0;
pub const KAPPA_MAX: f64 = 0.06;
pub const COLLISION_RADIUS: f64 = 1.0;

const SPEED_LIMIT: (f64, f64) = (5.0, 10.0);
const CURVATURE: (f64, f64) = (0.02, 0.05);
const CUT_IN_PROB: f64 = 0.3;
const HISTORY_YAW: f64 = 0.25;
const OBJECT_NOISE: f64 = 0.6;
const MAP_NOISE: f64 = 0.15;
const AGENT_NOISE: f64 = 0.05;
const WORLD_SEED: u64 = 0x5C15_70E5;
const VAL_STREAM: u64 = 0xA11D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Straight,
    Left,
    Right,
}

impl Context {
    pub const ALL: [Context; 3] = [Context::Straight, Context::Left, Context::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sign of the lane curvature.
    pub fn turn(self) -> f64 {
        match self {
            Context::Straight => 0.0,
            Context::Left => 1.0,
            Context::Right => -1.0,
        }
    }

    pub fn is_turn(self) -> bool {
        self != Context::Straight
    }

    pub fn name(self) -> &'static str {
        match self {
            Context::Straight => "straight",
            Context::Left => "left",
            Context::Right => "right",
        }
    }
}

impl std::str::FromStr for Context {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Context::Straight),
            "left" => Ok(Context::Left),
            "right" => Ok(Context::Right),
            _ => Err(Error::Invalid(format!("unknown context `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// `P(straight), P(left), P(right)`.
    pub context_prior: [f64; 3],
    pub shortcut_strength: f64,
    pub cooccurrence_strength: f64,
    pub n_objects: usize,
    pub n_map_elems: usize,
    pub n_agents: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            context_prior: [0.75, 0.125, 0.125],
            shortcut_strength: 0.9,
            cooccurrence_strength: 0.8,
            n_objects: 4,
            n_map_elems: 3,
            n_agents: 3,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.context_prior.iter().sum();
        if self.context_prior.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("context prior {:?} is not a distribution", self.context_prior)));
        }
        for (name, v) in [("shortcut_strength", self.shortcut_strength), ("cooccurrence_strength", self.cooccurrence_strength)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_objects == 0 || self.n_map_elems == 0 || self.n_agents == 0 {
            return Err(Error::Config("scene element counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl AgentState {
    /// Constant-velocity position after `t` seconds.
    pub fn at(&self, t: f64) -> [f64; 2] {
        [self.pos[0] + self.vel[0] * t, self.pos[1] + self.vel[1] * t]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub speed: f64,
    pub yaw: f64,
}

/// Per-agent exogenous draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNoise {
    /// Lane index: -1 right, +1 left.
    pub lane: i8,
    /// Arc length ahead of the ego.
    pub s: f64,
    /// Speed as a fraction of the posted limit.
    pub speed_frac: f64,
    pub feature: Vec<f64>,
}

/// Every random draw of a scene except the context. Rendering is a pure
/// function of `(context, flag, exogenous)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    pub curvature: f64,
    pub speed_limit: f64,
    pub object_classes: Vec<usize>,
    pub object_noise: Vec<Vec<f64>>,
    pub map_classes: Vec<usize>,
    pub map_noise: Vec<Vec<f64>>,
    pub agents: Vec<AgentNoise>,
    /// Lateral speed of agent 0 toward the ego lane, when it cuts in.
    pub cut_in: Option<f64>,
    pub history_speed: [f64; 2],
    pub history_yaw: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub index: usize,
    pub context: Context,
    pub cooccurrence: bool,
    pub object_features: Tensor,
    pub object_classes: Vec<usize>,
    pub map_features: Tensor,
    pub map_classes: Vec<usize>,
    pub agents: Vec<AgentState>,
    pub agent_features: Tensor,
    /// Oldest first.
    pub ego_history: [EgoState; 2],
    pub expert: Vec<[f64; 2]>,
    pub exogenous: Exogenous,
}

impl Scene {
    /// Agent displacement targets at 1 s, 2 s and 3 s, flattened per agent.
    pub fn agent_motion(&self) -> Tensor {
        let data = self
            .agents
            .iter()
            .flat_map(|a| [1.0, 2.0, 3.0].into_iter().flat_map(move |t| [a.vel[0] * t, a.vel[1] * t]))
            .collect();
        Tensor::from_parts(vec![self.agents.len(), 6], data)
    }

    pub fn has_cut_in(&self) -> bool {
        self.exogenous.cut_in.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub split: Split,
    pub scenes: Vec<Scene>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ScenarioConfig,
    split: Split,
    n: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// JSON lines: a header line, then one scene per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            split: self.split,
            n: self.scenes.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.scenes {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Invalid("empty dataset file".into())),
        };
        let mut scenes = Vec::with_capacity(header.n);
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                scenes.push(serde_json::from_str(&line)?);
            }
        }
        if scenes.len() != header.n {
            return Err(Error::Invalid(format!("header promises {} scenes, found {}", header.n, scenes.len())));
        }
        Ok(Dataset {
            config: header.config,
            split: header.split,
            scenes,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn filter(&self, keep: impl Fn(&Scene) -> bool) -> Dataset {
        Dataset {
            config: self.config.clone(),
            split: self.split,
            scenes: self.scenes.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn map_scenes(&self, f: impl Fn(&Scene) -> Scene + Sync + Send) -> Dataset {
        Dataset {
            config: self.config.clone(),
            split: self.split,
            scenes: self.scenes.par_iter().map(f).collect(),
        }
    }
}

/// Fixed feature directions shared by every scene of every dataset.
struct Basis {
    object_class: Vec<Vec<f64>>,
    cooccurrence: Vec<f64>,
    map_class: Vec<Vec<f64>>,
    map_context: Vec<Vec<f64>>,
    curvature: Vec<f64>,
    speed: Vec<f64>,
    /// `FEATURE_DIM x 4` mixing of agent kinematics.
    agent_mix: Vec<[f64; 4]>,
}

fn unit(rng: &mut ChaCha8Rng, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x * norm / n).collect()
}

fn basis() -> &'static Basis {
    static B: OnceLock<Basis> = OnceLock::new();
    B.get_or_init(|| {
        let mut r = seeding::rng(WORLD_SEED);
        Basis {
            object_class: (0..OBJECT_CLASSES).map(|_| unit(&mut r, 2.0)).collect(),
            cooccurrence: unit(&mut r, 1.5),
            map_class: (0..MAP_CLASSES).map(|_| unit(&mut r, 1.0)).collect(),
            map_context: (0..3).map(|_| unit(&mut r, 1.5)).collect(),
            curvature: unit(&mut r, 1.0),
            speed: unit(&mut r, 1.0),
            agent_mix: (0..FEATURE_DIM)
                .map(|_| std::array::from_fn(|_| r.gen_range(-1.0..1.0)))
                .collect(),
        }
    })
}

/// Lane centerline point and heading at arc length `s` for lateral offset
/// `offset` under signed curvature `kappa`.
fn lane_point(offset: f64, s: f64, kappa: f64) -> ([f64; 2], f64) {
    ([s, offset + 0.5 * kappa * s * s], kappa * s)
}

fn noise_vec(rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    // Uniform with standard deviation `amp`.
    let b = amp * 3f64.sqrt();
    (0..FEATURE_DIM).map(|_| rng.gen_range(-b..b)).collect()
}

fn draw_context(rng: &mut ChaCha8Rng, prior: &[f64; 3]) -> Context {
    let u: f64 = rng.gen();
    if u < prior[0] {
        Context::Straight
    } else if u < prior[0] + prior[1] {
        Context::Left
    } else {
        Context::Right
    }
}

fn draw_exogenous(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, flag: bool) -> Exogenous {
    let curvature = rng.gen_range(CURVATURE.0..CURVATURE.1);
    let speed_limit = rng.gen_range(SPEED_LIMIT.0..SPEED_LIMIT.1);
    let preferred = usize::from(flag);
    let object_classes: Vec<usize> = (0..cfg.n_objects)
        .map(|_| {
            if rng.gen_bool(cfg.cooccurrence_strength) {
                preferred
            } else {
                let other = rng.gen_range(0..OBJECT_CLASSES - 1);
                if other >= preferred {
                    other + 1
                } else {
                    other
                }
            }
        })
        .collect();
    let object_noise = (0..cfg.n_objects).map(|_| noise_vec(rng, OBJECT_NOISE)).collect();
    let map_classes = (0..cfg.n_map_elems).map(|_| rng.gen_range(0..MAP_CLASSES)).collect();
    let map_noise = (0..cfg.n_map_elems).map(|_| noise_vec(rng, MAP_NOISE)).collect();
    let cut_in = rng.gen_bool(CUT_IN_PROB).then(|| rng.gen_range(1.0..2.0));
    let agents = (0..cfg.n_agents)
        .map(|i| {
            let lane = if rng.gen_bool(0.5) { 1 } else { -1 };
            let (s, speed_frac) = if i == 0 && cut_in.is_some() {
                (rng.gen_range(10.0..18.0), rng.gen_range(0.6..0.9))
            } else {
                (rng.gen_range(5.0..25.0), rng.gen_range(0.5..1.2))
            };
            AgentNoise {
                lane,
                s,
                speed_frac,
                feature: noise_vec(rng, AGENT_NOISE),
            }
        })
        .collect();
    let history_speed = [rng.gen_range(SPEED_LIMIT.0..SPEED_LIMIT.1), rng.gen_range(SPEED_LIMIT.0..SPEED_LIMIT.1)];
    let history_yaw = [rng.gen_range(-HISTORY_YAW..HISTORY_YAW), rng.gen_range(-HISTORY_YAW..HISTORY_YAW)];
    Exogenous {
        curvature,
        speed_limit,
        object_classes,
        object_noise,
        map_classes,
        map_noise,
        agents,
        cut_in,
        history_speed,
        history_yaw,
    }
}

/// Expert speed at each of the six steps.
fn expert_speeds(ex: &Exogenous) -> [f64; HORIZON] {
    std::array::from_fn(|k| match ex.cut_in {
        Some(_) => ex.speed_limit * (1.0 - 0.13 * (k + 1) as f64).max(0.35),
        None => ex.speed_limit,
    })
}

/// Expert waypoints: integrate the speed profile along the lane curvature.
pub fn expert_trajectory(context: Context, ex: &Exogenous) -> Vec<[f64; 2]> {
    let kappa = context.turn() * ex.curvature;
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    expert_speeds(ex)
        .iter()
        .map(|&v| {
            let turn = kappa * v * DT;
            let mid = heading + 0.5 * turn;
            // Exact chord of the arc travelled this step.
            let chord = if kappa == 0.0 { v * DT } else { 2.0 * (0.5 * turn).sin() / kappa };
            x += chord * mid.cos();
            y += chord * mid.sin();
            heading += turn;
            [x, y]
        })
        .collect()
}

fn render_agents(context: Context, ex: &Exogenous) -> Vec<AgentState> {
    let kappa = context.turn() * ex.curvature;
    ex.agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let offset = f64::from(a.lane) * LANE_WIDTH;
            let (pos, heading) = lane_point(offset, a.s, kappa);
            let speed = a.speed_frac * ex.speed_limit;
            let mut vel = [speed * heading.cos(), speed * heading.sin()];
            if let (0, Some(lat)) = (i, ex.cut_in) {
                // Drift toward the ego lane along the lane normal.
                let toward = -f64::from(a.lane);
                vel[0] += toward * lat * -heading.sin();
                vel[1] += toward * lat * heading.cos();
            }
            AgentState { pos, vel }
        })
        .collect()
}

fn agent_feature(a: &AgentState, noise: &[f64]) -> Vec<f64> {
    let raw = [a.pos[0] / 20.0, a.pos[1] / 10.0, a.vel[0] / 10.0, a.vel[1] / 2.0];
    basis()
        .agent_mix
        .iter()
        .zip(noise)
        .map(|(w, n)| w.iter().zip(&raw).map(|(a, b)| a * b).sum::<f64>() + n)
        .collect()
}

fn map_feature(context: Context, ex: &Exogenous, class: usize, noise: &[f64]) -> Vec<f64> {
    let b = basis();
    let kappa = context.turn() * ex.curvature;
    let speed = (ex.speed_limit - 7.5) / 2.5;
    (0..FEATURE_DIM)
        .map(|j| {
            b.map_class[class][j]
                + b.map_context[context.index()][j]
                + b.curvature[j] * kappa * 25.0
                + b.speed[j] * speed
                + noise[j]
        })
        .collect()
}

fn object_feature(flag: bool, class: usize, noise: &[f64]) -> Vec<f64> {
    let b = basis();
    let sign = if flag { 1.0 } else { -1.0 };
    (0..FEATURE_DIM)
        .map(|j| b.object_class[class][j] + sign * b.cooccurrence[j] + noise[j])
        .collect()
}

fn rows(v: Vec<Vec<f64>>) -> Tensor {
    let r = v.len();
    Tensor::from_parts(vec![r, FEATURE_DIM], v.into_iter().flatten().collect())
}

/// Ego history from the expert's first step; `shortcut` blends in the true
/// state, the rest is the independent exogenous draw.
fn ego_history(expert: &[[f64; 2]], ex: &Exogenous, shortcut: f64) -> [EgoState; 2] {
    let [x, y] = expert[0];
    let speed = (x * x + y * y).sqrt() / DT;
    let yaw = y.atan2(x);
    std::array::from_fn(|j| EgoState {
        speed: shortcut * speed + (1.0 - shortcut) * ex.history_speed[j],
        yaw: shortcut * yaw + (1.0 - shortcut) * ex.history_yaw[j],
    })
}

/// Renders everything that depends on the context. The ego history is
/// produced separately.
fn render(index: usize, context: Context, flag: bool, ex: Exogenous, history: [EgoState; 2]) -> Scene {
    let agents = render_agents(context, &ex);
    let agent_features = rows(agents.iter().zip(&ex.agents).map(|(a, n)| agent_feature(a, &n.feature)).collect());
    let map_features = rows(
        ex.map_classes
            .iter()
            .zip(&ex.map_noise)
            .map(|(&c, n)| map_feature(context, &ex, c, n))
            .collect(),
    );
    let object_features = rows(
        ex.object_classes
            .iter()
            .zip(&ex.object_noise)
            .map(|(&c, n)| object_feature(flag, c, n))
            .collect(),
    );
    Scene {
        index,
        context,
        cooccurrence: flag,
        object_features,
        object_classes: ex.object_classes.clone(),
        map_features,
        map_classes: ex.map_classes.clone(),
        agents,
        agent_features,
        ego_history: history,
        expert: expert_trajectory(context, &ex),
        exogenous: ex,
    }
}

/// Samples one scene from `rng`. `force` overrides the drawn context while
/// consuming the same random stream.
pub fn sample_scene(cfg: &ScenarioConfig, index: usize, rng: &mut ChaCha8Rng, force: Option<Context>) -> Scene {
    let drawn = draw_context(rng, &cfg.context_prior);
    let context = force.unwrap_or(drawn);
    let flag = rng.gen_bool(0.5);
    let ex = draw_exogenous(rng, cfg, flag);
    let history = ego_history(&expert_trajectory(context, &ex), &ex, cfg.shortcut_strength);
    render(index, context, flag, ex, history)
}

fn stream_seed(cfg: &ScenarioConfig, split: Split) -> u64 {
    match split {
        Split::Train => cfg.seed,
        Split::Val => derive_seed(cfg.seed, VAL_STREAM),
    }
}

/// Scene `index` of `split`, regenerated from scratch.
pub fn generate_scene(cfg: &ScenarioConfig, split: Split, index: usize, force: Option<Context>) -> Scene {
    let mut rng = seeding::child_rng(stream_seed(cfg, split), index as u64);
    sample_scene(cfg, index, &mut rng, force)
}

pub fn generate_split(cfg: &ScenarioConfig, n: usize, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Invalid("dataset size must be at least 1".into()));
    }
    let scenes = (0..n)
        .into_par_iter()
        .map(|i| generate_scene(cfg, split, i, None))
        .collect();
    Ok(Dataset {
        config: cfg.clone(),
        split,
        scenes,
    })
}

/// Training split of `n` scenes.
pub fn generate_dataset(cfg: &ScenarioConfig, n: usize) -> Result<Dataset> {
    generate_split(cfg, n, Split::Train)
}

/// Per-step displacement within `V_MAX * DT` and turning within `KAPPA_MAX`.
pub fn is_feasible(traj: &[[f64; 2]]) -> bool {
    let mut prev = [0.0, 0.0];
    let mut last: Option<(f64, f64)> = None;
    for p in traj {
        let (dx, dy) = (p[0] - prev[0], p[1] - prev[1]);
        let step = (dx * dx + dy * dy).sqrt();
        if !step.is_finite() || step > V_MAX * DT + 1e-9 {
            return false;
        }
        let heading = dy.atan2(dx);
        if let Some((h, s)) = last {
            // Chord headings of consecutive steps differ by the arc between
            // their midpoints.
            if step > 1e-9 && (heading - h).abs() > KAPPA_MAX * 0.5 * (step + s) + 1e-9 {
                return false;
            }
        }
        last = Some((heading, step));
        prev = *p;
    }
    true
}

/// True when any waypoint comes within the collision radius of an agent's
/// constant-velocity position at the same time.
pub fn collides(traj: &[[f64; 2]], agents: &[AgentState]) -> bool {
    traj.iter().enumerate().any(|(k, p)| {
        let t = (k + 1) as f64 * DT;
        agents.iter().any(|a| {
            let q = a.at(t);
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            dx * dx + dy * dy < COLLISION_RADIUS * COLLISION_RADIUS
        })
    })
}

#[cfg(test)]
mod tests;
