use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, Condition, MetricsReport};
use crate::dictionary::{build_dictionary, ClusterAlgo, DictSizes, PrototypeDictionary};
use crate::error::{Error, Result};
use crate::intervention::ScisFlags;
use crate::planner::{pretrain_baseline, train_causal, PlannerModel, TrainConfig};
use crate::seeding::derive_seed;
use crate::world::{perturb_context_features, perturb_ego_velocity, Block, Dataset, VelocityPerturbation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Eval,
    EgoNoise,
    ContextNoise,
    ScenarioSplit,
    Ablation,
    DictSweep,
    ClusterCompare,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Eval => "eval",
            Experiment::EgoNoise => "ego_noise",
            Experiment::ContextNoise => "context_noise",
            Experiment::ScenarioSplit => "scenario_split",
            Experiment::Ablation => "ablation",
            Experiment::DictSweep => "dict_sweep",
            Experiment::ClusterCompare => "cluster_compare",
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "eval" => Experiment::Eval,
            "ego_noise" => Experiment::EgoNoise,
            "context_noise" => Experiment::ContextNoise,
            "scenario_split" | "split" => Experiment::ScenarioSplit,
            "ablation" => Experiment::Ablation,
            "dict_sweep" => Experiment::DictSweep,
            "cluster_compare" => Experiment::ClusterCompare,
            _ => return Err(Error::Invalid(format!("unknown experiment `{s}`"))),
        })
    }
}

/// One evaluated cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub causal: bool,
    /// Value of the report's derived column, when the row has one.
    pub derived: Option<f64>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub experiment: Experiment,
    pub seed: u64,
    /// Meaning of [`SweepRow::derived`].
    pub derived_name: String,
    pub rows: Vec<SweepRow>,
    /// Soft-check findings; never fatal.
    pub notes: Vec<String>,
}

impl SweepReport {
    pub fn find(&self, model: &str, condition: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.report.model == model && r.report.condition == condition)
    }
}

/// A named model taking part in a sweep.
#[derive(Clone, Copy)]
pub struct Candidate<'a> {
    pub name: &'a str,
    pub model: &'a PlannerModel,
}

pub const EGO_NOISE_GRID: [Option<VelocityPerturbation>; 5] = [
    None,
    Some(VelocityPerturbation::Scale(0.0)),
    Some(VelocityPerturbation::Scale(0.5)),
    Some(VelocityPerturbation::Scale(1.5)),
    Some(VelocityPerturbation::Absolute(100.0)),
];

pub const CONTEXT_NOISE_GRID: [f64; 3] = [0.5, 0.7, 0.9];

pub const ABLATION_GRID: [ScisFlags; 4] = [
    ScisFlags::NONE,
    ScisFlags {
        use_pdm: true,
        use_idm: false,
    },
    ScisFlags {
        use_pdm: false,
        use_idm: true,
    },
    ScisFlags::FULL,
];

pub const DICT_SWEEP_GRID: [DictSizes; 3] = [
    DictSizes {
        object: 5,
        map: 2,
        agent: 3,
    },
    DictSizes {
        object: 10,
        map: 3,
        agent: 6,
    },
    DictSizes {
        object: 20,
        map: 5,
        agent: 10,
    },
];

pub const CLUSTER_GRID: [ClusterAlgo; 3] = [ClusterAlgo::Kmeans, ClusterAlgo::Kmedoids, ClusterAlgo::KmeansPp];

pub fn ego_condition(p: Option<VelocityPerturbation>) -> String {
    p.map_or_else(|| "none".to_string(), |p| p.label())
}

pub fn context_condition(block: Block, magnitude: f64) -> String {
    format!("{}:{magnitude}", block.name())
}

pub fn ablation_label(flags: ScisFlags) -> &'static str {
    match (flags.use_pdm, flags.use_idm) {
        (false, false) => "ID-1",
        (true, false) => "ID-2",
        (false, true) => "ID-3",
        (true, true) => "ID-4",
    }
}

fn require_mix(models: &[Candidate]) -> Result<()> {
    let causal = models.iter().filter(|c| c.model.is_causal()).count();
    if causal == 0 || causal == models.len() {
        return Err(Error::Misuse("sweep needs at least one baseline and one causal model".into()));
    }
    Ok(())
}

fn ratio(value: f64, clean: f64) -> Option<f64> {
    (clean > 0.0).then(|| value / clean)
}

fn row(model: &PlannerModel, name: &str, data: &Dataset, condition: &str, seed: u64) -> Result<SweepRow> {
    let report = evaluate(model, data, &Condition::new(name, condition, data.split.name(), seed))?;
    Ok(SweepRow {
        causal: model.is_causal(),
        derived: None,
        report,
    })
}

/// Models x velocity perturbations, with degradation ratios against the
/// clean evaluation of each model.
pub fn run_ego_noise_sweep(
    models: &[Candidate],
    data: &Dataset,
    grid: &[Option<VelocityPerturbation>],
    seed: u64,
) -> Result<SweepReport> {
    require_mix(models)?;
    if grid.is_empty() {
        return Err(Error::Invalid("empty perturbation grid".into()));
    }
    let mut rows = Vec::new();
    for c in models {
        let clean = row(c.model, c.name, data, "none", seed)?;
        let base = clean.report.l2_avg;
        for &p in grid {
            let mut r = match p {
                None => clean.clone(),
                Some(p) => row(c.model, c.name, &data.map_scenes(|s| perturb_ego_velocity(s, p)), &ego_condition(Some(p)), seed)?,
            };
            r.derived = ratio(r.report.l2_avg, base);
            rows.push(r);
        }
    }
    Ok(SweepReport {
        experiment: Experiment::EgoNoise,
        seed,
        derived_name: "degradation_ratio".into(),
        rows,
        notes: Vec::new(),
    })
}

/// Models x {agent, map} x magnitudes. Every model sees the same noise draw
/// for a given cell.
pub fn run_context_noise_sweep(models: &[Candidate], data: &Dataset, magnitudes: &[f64], seed: u64) -> Result<SweepReport> {
    require_mix(models)?;
    if magnitudes.is_empty() {
        return Err(Error::Invalid("empty magnitude grid".into()));
    }
    if magnitudes.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
        return Err(Error::Invalid("noise magnitudes must be finite and non-negative".into()));
    }
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for c in models {
        let mut clean = row(c.model, c.name, data, "none", seed)?;
        let base = clean.report.l2_avg;
        clean.derived = ratio(base, base);
        rows.push(clean.clone());
        for (bi, block) in [Block::Agent, Block::Map].into_iter().enumerate() {
            let mut prev = (0.0, base);
            for (mi, &m) in magnitudes.iter().enumerate() {
                let cell_seed = derive_seed(seed, (bi * magnitudes.len() + mi) as u64);
                let d = data.map_scenes(|s| perturb_context_features(s, block, m, cell_seed));
                let mut r = row(c.model, c.name, &d, &context_condition(block, m), seed)?;
                r.derived = ratio(r.report.l2_avg, base);
                if r.report.l2_avg < prev.1 && m > prev.0 {
                    notes.push(format!(
                        "{}: {} avg L2 falls from {:.4} (x{}) to {:.4} (x{m})",
                        c.name,
                        block.name(),
                        prev.1,
                        prev.0,
                        r.report.l2_avg
                    ));
                }
                prev = (m, r.report.l2_avg);
                rows.push(r);
            }
        }
    }
    Ok(SweepReport {
        experiment: Experiment::ContextNoise,
        seed,
        derived_name: "degradation_ratio".into(),
        rows,
        notes,
    })
}

/// Straight versus turning scenes; the turning row carries the LR - ST gap.
pub fn run_scenario_split(models: &[Candidate], data: &Dataset, seed: u64) -> Result<SweepReport> {
    require_mix(models)?;
    let straight = data.filter(|s| !s.context.is_turn());
    let turning = data.filter(|s| s.context.is_turn());
    let mut rows = Vec::new();
    for c in models {
        let st = row(c.model, c.name, &straight, "ST", seed)?;
        let mut lr = row(c.model, c.name, &turning, "LR", seed)?;
        lr.derived = Some(lr.report.l2_avg - st.report.l2_avg);
        rows.push(st);
        rows.push(lr);
    }
    Ok(SweepReport {
        experiment: Experiment::ScenarioSplit,
        seed,
        derived_name: "lr_minus_st".into(),
        rows,
        notes: Vec::new(),
    })
}

/// Trains and evaluates the {PDM, IDM} grid on a shared seed. Returns the
/// trained models in grid order alongside the report.
pub fn run_ablation(
    train: &Dataset,
    eval: &Dataset,
    dict: &PrototypeDictionary,
    cfg: &TrainConfig,
    grid: &[ScisFlags],
) -> Result<(SweepReport, Vec<PlannerModel>)> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty ablation grid".into()));
    }
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for &flags in grid {
        let c = TrainConfig { flags, ..cfg.clone() };
        let m = if flags.any() { train_causal(train, dict, &c)? } else { pretrain_baseline(train, &c)? };
        let cond = format!("pdm={},idm={}", u8::from(flags.use_pdm), u8::from(flags.use_idm));
        rows.push(row(&m, ablation_label(flags), eval, &cond, cfg.seed)?);
        models.push(m);
    }
    let reference = rows
        .iter()
        .find(|r| !r.causal)
        .map(|r| r.report.l2_avg);
    if let Some(b) = reference {
        for r in &mut rows {
            r.derived = ratio(r.report.l2_avg, b);
        }
    }
    Ok((
        SweepReport {
            experiment: Experiment::Ablation,
            seed: cfg.seed,
            derived_name: "ratio_to_id1".into(),
            rows,
            notes: Vec::new(),
        },
        models,
    ))
}

fn baseline_row(baseline: &PlannerModel, eval: &Dataset, seed: u64) -> Result<SweepRow> {
    if baseline.is_causal() {
        return Err(Error::Misuse("dictionary sweeps need a baseline model".into()));
    }
    let mut r = row(baseline, "baseline", eval, "none", seed)?;
    r.derived = Some(1.0);
    Ok(r)
}

/// One full causal model per dictionary size triple, each clustered from the
/// same baseline embeddings.
pub fn run_dict_sweep(
    train: &Dataset,
    eval: &Dataset,
    baseline: &PlannerModel,
    cfg: &TrainConfig,
    algo: ClusterAlgo,
    grid: &[DictSizes],
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty dictionary grid".into()));
    }
    let base = baseline_row(baseline, eval, cfg.seed)?;
    let stores = baseline.collect_embeddings(&train.scenes)?;
    let mut rows = vec![base.clone()];
    for &sizes in grid {
        let dict = build_dictionary(&stores, sizes, algo, cfg.seed)?;
        let c = TrainConfig {
            flags: ScisFlags::FULL,
            ..cfg.clone()
        };
        let m = train_causal(train, &dict, &c)?;
        let mut r = row(&m, "causal", eval, &format!("k={sizes}"), cfg.seed)?;
        r.derived = ratio(r.report.l2_avg, base.report.l2_avg);
        rows.push(r);
    }
    Ok(SweepReport {
        experiment: Experiment::DictSweep,
        seed: cfg.seed,
        derived_name: "ratio_to_baseline".into(),
        rows,
        notes: Vec::new(),
    })
}

/// One full causal model per clustering algorithm. The note compares the
/// spread across algorithms with the baseline-vs-causal gap.
pub fn run_cluster_compare(
    train: &Dataset,
    eval: &Dataset,
    baseline: &PlannerModel,
    cfg: &TrainConfig,
    sizes: DictSizes,
    grid: &[ClusterAlgo],
) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty algorithm grid".into()));
    }
    let base = baseline_row(baseline, eval, cfg.seed)?;
    let stores = baseline.collect_embeddings(&train.scenes)?;
    let mut rows = vec![base.clone()];
    for &algo in grid {
        let dict = build_dictionary(&stores, sizes, algo, cfg.seed)?;
        let c = TrainConfig {
            flags: ScisFlags::FULL,
            ..cfg.clone()
        };
        let m = train_causal(train, &dict, &c)?;
        let mut r = row(&m, "causal", eval, algo.name(), cfg.seed)?;
        r.derived = ratio(r.report.l2_avg, base.report.l2_avg);
        rows.push(r);
    }
    let causal: Vec<f64> = rows[1..].iter().map(|r| r.report.l2_avg).collect();
    let max = causal.iter().copied().fold(f64::MIN, f64::max);
    let min = causal.iter().copied().fold(f64::MAX, f64::min);
    let mean = causal.iter().sum::<f64>() / causal.len() as f64;
    let gap = (base.report.l2_avg - mean).abs();
    let spread = max - min;
    let notes = vec![format!(
        "causal spread across algorithms {spread:.6}, baseline-vs-causal gap {gap:.6}: spread {} gap",
        if spread < gap { "<" } else { ">=" }
    )];
    Ok(SweepReport {
        experiment: Experiment::ClusterCompare,
        seed: cfg.seed,
        derived_name: "ratio_to_baseline".into(),
        rows,
        notes,
    })
}

/// Wraps one plain evaluation as a single-row report.
pub fn single(model: &PlannerModel, name: &str, data: &Dataset, seed: u64) -> Result<SweepReport> {
    Ok(SweepReport {
        experiment: Experiment::Eval,
        seed,
        derived_name: String::new(),
        rows: vec![row(model, name, data, "none", seed)?],
        notes: Vec::new(),
    })
}
