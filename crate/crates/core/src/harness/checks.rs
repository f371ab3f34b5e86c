//! Directional comparisons between a baseline and a causal model, read off
//! sweep reports.

use serde::{Deserialize, Serialize};

use super::sweeps::{context_condition, ego_condition, Experiment, SweepReport, SweepRow};
use crate::error::{Error, Result};
use crate::world::{Block, VelocityPerturbation};

/// Causal x0.0 degradation ratio must be at most this multiple of the baseline's.
pub const EGO_SCALE_ZERO_FACTOR: f64 = 0.8;
/// Same for the 100 m/s condition.
pub const EGO_ABSOLUTE_FACTOR: f64 = 0.7;
/// Magnitude at which context-noise robustness is compared.
pub const CONTEXT_MAGNITUDE: f64 = 0.9;
/// Relative slack of each ordering step in the ablation grid.
pub const ABLATION_BAND: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn expect(r: &SweepReport, e: Experiment) -> Result<()> {
    if r.experiment != e {
        return Err(Error::Misuse(format!("expected a {} report, got {}", e.name(), r.experiment.name())));
    }
    Ok(())
}

/// First baseline and first causal model names in row order.
fn pair(r: &SweepReport) -> Result<(&str, &str)> {
    let base = r.rows.iter().find(|x| !x.causal);
    let causal = r.rows.iter().find(|x| x.causal);
    match (base, causal) {
        (Some(b), Some(c)) => Ok((&b.report.model, &c.report.model)),
        _ => Err(Error::Misuse("report lacks a baseline or a causal model".into())),
    }
}

fn cell<'a>(r: &'a SweepReport, model: &str, condition: &str) -> Result<&'a SweepRow> {
    r.find(model, condition)
        .ok_or_else(|| Error::Invalid(format!("report has no `{condition}` row for {model}")))
}

fn derived(row: &SweepRow) -> Result<f64> {
    row.derived
        .ok_or_else(|| Error::Invalid(format!("row `{}` has no derived value", row.report.condition)))
}

pub fn check_ego_noise(r: &SweepReport) -> Result<Vec<Check>> {
    expect(r, Experiment::EgoNoise)?;
    let (b, c) = pair(r)?;
    [
        (VelocityPerturbation::Scale(0.0), EGO_SCALE_ZERO_FACTOR),
        (VelocityPerturbation::Absolute(100.0), EGO_ABSOLUTE_FACTOR),
    ]
    .into_iter()
    .map(|(p, factor)| {
        let cond = ego_condition(Some(p));
        let rb = derived(cell(r, b, &cond)?)?;
        let rc = derived(cell(r, c, &cond)?)?;
        Ok(Check {
            name: format!("ego {cond}"),
            passed: rc <= factor * rb,
            detail: format!("causal ratio {rc:.3} vs {factor} x baseline ratio {rb:.3} = {:.3}", factor * rb),
        })
    })
    .collect()
}

/// One check per block at [`CONTEXT_MAGNITUDE`].
pub fn check_context_noise(r: &SweepReport) -> Result<Vec<Check>> {
    expect(r, Experiment::ContextNoise)?;
    let (b, c) = pair(r)?;
    [Block::Agent, Block::Map]
        .into_iter()
        .map(|block| {
            let cond = context_condition(block, CONTEXT_MAGNITUDE);
            let rb = derived(cell(r, b, &cond)?)?;
            let rc = derived(cell(r, c, &cond)?)?;
            Ok(Check {
                name: format!("context {cond}"),
                passed: rc < rb,
                detail: format!("causal ratio {rc:.4} vs baseline ratio {rb:.4}"),
            })
        })
        .collect()
}

pub fn check_split(r: &SweepReport) -> Result<Check> {
    expect(r, Experiment::ScenarioSplit)?;
    let (b, c) = pair(r)?;
    let gb = derived(cell(r, b, "LR")?)?;
    let gc = derived(cell(r, c, "LR")?)?;
    Ok(Check {
        name: "LR-ST gap".into(),
        passed: gc < gb,
        detail: format!("causal gap {gc:.4} vs baseline gap {gb:.4}"),
    })
}

/// `ID-4 <= min(ID-2, ID-3) <= max(ID-2, ID-3) <= ID-1`, each step allowed
/// [`ABLATION_BAND`] relative slack.
pub fn check_ablation(r: &SweepReport) -> Result<Check> {
    expect(r, Experiment::Ablation)?;
    let avg = |id: &str| -> Result<f64> {
        r.rows
            .iter()
            .find(|x| x.report.model == id)
            .map(|x| x.report.l2_avg)
            .ok_or_else(|| Error::Invalid(format!("ablation report lacks {id}")))
    };
    let (i1, i2, i3, i4) = (avg("ID-1")?, avg("ID-2")?, avg("ID-3")?, avg("ID-4")?);
    let (lo, hi) = (i2.min(i3), i2.max(i3));
    let le = |a: f64, b: f64| a <= b * (1.0 + ABLATION_BAND);
    Ok(Check {
        name: "ablation ordering".into(),
        passed: le(i4, lo) && le(lo, hi) && le(hi, i1),
        detail: format!("ID-1 {i1:.4}, ID-2 {i2:.4}, ID-3 {i3:.4}, ID-4 {i4:.4}"),
    })
}

/// Every check that applies to the report's experiment.
pub fn checks_for(r: &SweepReport) -> Result<Vec<Check>> {
    match r.experiment {
        Experiment::EgoNoise => check_ego_noise(r),
        Experiment::ContextNoise => check_context_noise(r),
        Experiment::ScenarioSplit => Ok(vec![check_split(r)?]),
        Experiment::Ablation => Ok(vec![check_ablation(r)?]),
        e => Err(Error::Misuse(format!("no directional check is defined for {}", e.name()))),
    }
}
