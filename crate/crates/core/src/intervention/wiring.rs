use serde::{Deserialize, Serialize};

use crate::dictionary::{Domain, PrototypeDictionary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Places in a sequential perception/prediction/planning pipeline where a
/// module can be attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionPoint {
    /// Object classifier logits.
    ObjectLogits,
    /// Map classifier logits.
    MapLogits,
    /// Object and map queries entering the motion decoder.
    PredictionInputs,
    /// Agent and map queries entering the planning decoder.
    PlanningInputs,
}

impl InsertionPoint {
    pub fn name(self) -> &'static str {
        match self {
            InsertionPoint::ObjectLogits => "object_logits",
            InsertionPoint::MapLogits => "map_logits",
            InsertionPoint::PredictionInputs => "prediction_inputs",
            InsertionPoint::PlanningInputs => "planning_inputs",
        }
    }
}

/// One module instance: where it sits and which dictionary it reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// PDM on object logits against `Z_o`.
    PdmObject,
    /// PDM on map logits against `Z_m`.
    PdmMap,
    /// `O' = IDM(O, Z_m)`
    IdmObjectVsMap,
    /// `M' = IDM(M, Z_o)`
    IdmMapVsObject,
    /// `A' = IDM(A, Z_m)`
    IdmAgentVsMap,
    /// `M'' = IDM(M, Z_a)`
    IdmMapVsAgent,
}

impl Site {
    pub const ALL: [Site; 6] = [
        Site::PdmObject,
        Site::PdmMap,
        Site::IdmObjectVsMap,
        Site::IdmMapVsObject,
        Site::IdmAgentVsMap,
        Site::IdmMapVsAgent,
    ];

    pub fn is_pdm(self) -> bool {
        matches!(self, Site::PdmObject | Site::PdmMap)
    }

    pub fn point(self) -> InsertionPoint {
        match self {
            Site::PdmObject => InsertionPoint::ObjectLogits,
            Site::PdmMap => InsertionPoint::MapLogits,
            Site::IdmObjectVsMap | Site::IdmMapVsObject => InsertionPoint::PredictionInputs,
            Site::IdmAgentVsMap | Site::IdmMapVsAgent => InsertionPoint::PlanningInputs,
        }
    }

    /// Dictionary the instance attends over.
    pub fn dictionary(self) -> Domain {
        match self {
            Site::PdmObject | Site::IdmMapVsObject => Domain::Object,
            Site::PdmMap | Site::IdmObjectVsMap | Site::IdmAgentVsMap => Domain::Map,
            Site::IdmMapVsAgent => Domain::Agent,
        }
    }

    /// Parameter-name prefix of the instance.
    pub fn prefix(self) -> &'static str {
        match self {
            Site::PdmObject => "pdm_obj",
            Site::PdmMap => "pdm_map",
            Site::IdmObjectVsMap => "idm_obj_m",
            Site::IdmMapVsObject => "idm_map_o",
            Site::IdmAgentVsMap => "idm_agent_m",
            Site::IdmMapVsAgent => "idm_map_a",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScisFlags {
    pub use_pdm: bool,
    pub use_idm: bool,
}

impl ScisFlags {
    pub const NONE: ScisFlags = ScisFlags { use_pdm: false, use_idm: false };
    pub const FULL: ScisFlags = ScisFlags { use_pdm: true, use_idm: true };

    pub fn any(self) -> bool {
        self.use_pdm || self.use_idm
    }

    pub fn sites(self) -> Vec<Site> {
        Site::ALL
            .into_iter()
            .filter(|s| if s.is_pdm() { self.use_pdm } else { self.use_idm })
            .collect()
    }
}

/// A model that exposes module insertion points.
pub trait Pipeline {
    fn insertion_points(&self) -> Vec<InsertionPoint>;

    /// Installs a fresh, independently parameterized instance at `site`.
    fn install(&mut self, site: Site, prototypes: &Tensor) -> Result<()>;
}

/// Installs every instance selected by `flags`, checking up front that all
/// required insertion points exist.
pub fn stagewise_wire<P: Pipeline + ?Sized>(
    pipeline: &mut P,
    dict: &PrototypeDictionary,
    flags: ScisFlags,
) -> Result<Vec<Site>> {
    dict.verify()?;
    let available = pipeline.insertion_points();
    let sites = flags.sites();
    if let Some(missing) = sites.iter().map(|s| s.point()).find(|p| !available.contains(p)) {
        return Err(Error::Wiring(missing.name().to_string()));
    }
    for &site in &sites {
        pipeline.install(site, dict.get(site.dictionary()))?;
    }
    Ok(sites)
}
