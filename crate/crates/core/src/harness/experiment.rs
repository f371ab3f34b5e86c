use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emit::Format;
use super::sweeps::*;
use crate::dictionary::{ClusterAlgo, DictSizes, PrototypeDictionary};
use crate::error::{Error, Result};
use crate::intervention::ScisFlags;
use crate::planner::{PlannerModel, TrainConfig};
use crate::world::{Dataset, VelocityPerturbation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    pub path: PathBuf,
}

/// A named experiment with its grid and the artifacts it reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Grid cells in their textual form, see [`ExperimentSpec::default_grid`].
    pub grid: Vec<String>,
    /// Evaluation dataset.
    pub data: PathBuf,
    /// Training dataset, for experiments that train.
    pub train_data: Option<PathBuf>,
    /// Models to evaluate; the baseline for dictionary experiments.
    pub models: Vec<ModelRef>,
    pub dict: Option<PathBuf>,
    pub out: PathBuf,
    pub format: Format,
    pub seed: u64,
    pub train: TrainConfig,
    /// Dictionary sizes for cluster comparison.
    pub sizes: DictSizes,
    /// Clustering algorithm for the dictionary sweep.
    pub algo: ClusterAlgo,
}

fn parse_ego(s: &str) -> Result<Option<VelocityPerturbation>> {
    let bad = || Error::Invalid(format!("bad ego-noise cell `{s}` (none, x<r> or <v> m/s)"));
    if s == "none" {
        return Ok(None);
    }
    if let Some(r) = s.strip_prefix('x') {
        let r: f64 = r.parse().map_err(|_| bad())?;
        if !(r >= 0.0 && r.is_finite()) {
            return Err(bad());
        }
        return Ok(Some(VelocityPerturbation::Scale(r)));
    }
    let v: f64 = s.trim_end_matches("m/s").trim().parse().map_err(|_| bad())?;
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(Some(VelocityPerturbation::Absolute(v)))
}

fn parse_flags(s: &str) -> Result<ScisFlags> {
    ABLATION_GRID
        .into_iter()
        .find(|f| ablation_label(*f) == s)
        .ok_or_else(|| Error::Invalid(format!("bad ablation cell `{s}` (ID-1..ID-4)")))
}

impl ExperimentSpec {
    pub fn default_grid(e: Experiment) -> Vec<String> {
        match e {
            Experiment::Eval => vec!["none".into()],
            Experiment::EgoNoise => EGO_NOISE_GRID.iter().map(|p| ego_condition(*p)).collect(),
            Experiment::ContextNoise => CONTEXT_NOISE_GRID.iter().map(|m| m.to_string()).collect(),
            Experiment::ScenarioSplit => vec!["ST".into(), "LR".into()],
            Experiment::Ablation => ABLATION_GRID.iter().map(|f| ablation_label(*f).to_string()).collect(),
            Experiment::DictSweep => DICT_SWEEP_GRID.iter().map(|d| d.to_string()).collect(),
            Experiment::ClusterCompare => CLUSTER_GRID.iter().map(|a| a.name().to_string()).collect(),
        }
    }

    /// Grid non-empty and parseable; every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        self.train.validate()?;
        match self.experiment {
            Experiment::EgoNoise => {
                self.ego_grid()?;
            }
            Experiment::ContextNoise => {
                self.magnitudes()?;
            }
            Experiment::ScenarioSplit => {
                if self.grid != ["ST", "LR"] {
                    return Err(Error::Config("the scenario split grid is fixed to ST, LR".into()));
                }
            }
            Experiment::Ablation => {
                self.flags()?;
            }
            Experiment::DictSweep => {
                self.size_grid()?;
            }
            Experiment::ClusterCompare => {
                self.algo_grid()?;
            }
            Experiment::Eval => {}
        }
        let mut needed: Vec<&Path> = vec![&self.data];
        let trains = matches!(
            self.experiment,
            Experiment::Ablation | Experiment::DictSweep | Experiment::ClusterCompare
        );
        if trains {
            needed.push(
                self.train_data
                    .as_deref()
                    .ok_or_else(|| Error::Config(format!("{} needs training data", self.experiment.name())))?,
            );
        }
        match self.experiment {
            Experiment::Ablation => {
                needed.push(self.dict_path()?);
            }
            Experiment::DictSweep | Experiment::ClusterCompare => {
                if self.models.len() != 1 {
                    return Err(Error::Config(format!("{} needs exactly one baseline model", self.experiment.name())));
                }
            }
            Experiment::Eval => {
                if self.models.len() != 1 {
                    return Err(Error::Config("eval needs exactly one model".into()));
                }
            }
            _ => {
                if self.models.len() < 2 {
                    return Err(Error::Config("sweeps need a baseline and a causal model".into()));
                }
            }
        }
        needed.extend(self.models.iter().map(|m| m.path.as_path()));
        if let Some(d) = &self.dict {
            needed.push(d);
        }
        for p in needed {
            if !p.exists() {
                return Err(Error::Config(format!("referenced artifact {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn dict_path(&self) -> Result<&Path> {
        self.dict
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{} needs a dictionary", self.experiment.name())))
    }

    fn ego_grid(&self) -> Result<Vec<Option<VelocityPerturbation>>> {
        self.grid.iter().map(|s| parse_ego(s)).collect()
    }

    fn magnitudes(&self) -> Result<Vec<f64>> {
        self.grid
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(m) if m >= 0.0 && m.is_finite() => Ok(m),
                _ => Err(Error::Invalid(format!("bad noise magnitude `{s}`"))),
            })
            .collect()
    }

    fn flags(&self) -> Result<Vec<ScisFlags>> {
        self.grid.iter().map(|s| parse_flags(s)).collect()
    }

    fn size_grid(&self) -> Result<Vec<DictSizes>> {
        self.grid.iter().map(|s| s.parse()).collect()
    }

    fn algo_grid(&self) -> Result<Vec<ClusterAlgo>> {
        self.grid.iter().map(|s| s.parse()).collect()
    }

    fn load_dict(&self) -> Result<Option<PrototypeDictionary>> {
        self.dict
            .as_ref()
            .map(|p| PrototypeDictionary::from_json(&std::fs::read_to_string(p)?))
            .transpose()
    }

    fn load_models(&self, dict: Option<&PrototypeDictionary>) -> Result<Vec<PlannerModel>> {
        self.models.iter().map(|m| PlannerModel::load(&m.path, dict)).collect()
    }

    pub fn run(&self) -> Result<SweepReport> {
        self.validate()?;
        let data = Dataset::load(&self.data)?;
        let train = self.train_data.as_ref().map(|p| Dataset::load(p)).transpose()?;
        let dict = self.load_dict()?;
        let models = self.load_models(dict.as_ref())?;
        let candidates: Vec<Candidate> = self
            .models
            .iter()
            .zip(&models)
            .map(|(r, m)| Candidate { name: &r.name, model: m })
            .collect();
        match self.experiment {
            Experiment::Eval => single(&models[0], &self.models[0].name, &data, self.seed),
            Experiment::EgoNoise => run_ego_noise_sweep(&candidates, &data, &self.ego_grid()?, self.seed),
            Experiment::ContextNoise => run_context_noise_sweep(&candidates, &data, &self.magnitudes()?, self.seed),
            Experiment::ScenarioSplit => run_scenario_split(&candidates, &data, self.seed),
            Experiment::Ablation => {
                let train = train.expect("validated");
                let dict = dict.expect("validated");
                Ok(run_ablation(&train, &data, &dict, &self.train, &self.flags()?)?.0)
            }
            Experiment::DictSweep => run_dict_sweep(
                &train.expect("validated"),
                &data,
                &models[0],
                &self.train,
                self.algo,
                &self.size_grid()?,
            ),
            Experiment::ClusterCompare => run_cluster_compare(
                &train.expect("validated"),
                &data,
                &models[0],
                &self.train,
                self.sizes,
                &self.algo_grid()?,
            ),
        }
    }
}
