//! Offline confounder dictionary: per-domain query embeddings clustered into
//! frozen prototype matrices.

mod cluster;

pub use cluster::{cluster, kmeans_pp_init, ClusterAlgo, Clustering, MAX_ITERS};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Object,
    Map,
    Agent,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Object, Domain::Map, Domain::Agent];
}

/// Collected query embeddings of one domain, one row per (scene, query).
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    pub domain: Domain,
    pub rows: Tensor,
    /// `(scene index, query index)` for every row.
    pub provenance: Vec<(usize, usize)>,
}

impl EmbeddingStore {
    pub fn new(domain: Domain, rows: Vec<Vec<f64>>, provenance: Vec<(usize, usize)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid(format!("no {domain:?} embeddings collected")));
        }
        if rows.len() != provenance.len() {
            return Err(Error::Invalid("one provenance entry per row".into()));
        }
        Ok(EmbeddingStore {
            domain,
            rows: Tensor::from_rows(&rows)?,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn cluster(&self, k: usize, algo: ClusterAlgo, seed: u64) -> Result<Clustering> {
        cluster(&self.rows, k, algo, seed)
    }
}

#[derive(Clone, Debug)]
pub struct DomainStores {
    pub object: EmbeddingStore,
    pub map: EmbeddingStore,
    pub agent: EmbeddingStore,
}

/// Prototype counts `(k_o, k_m, k_a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictSizes {
    pub object: usize,
    pub map: usize,
    pub agent: usize,
}

impl Default for DictSizes {
    fn default() -> Self {
        DictSizes {
            object: 10,
            map: 3,
            agent: 6,
        }
    }
}

impl std::str::FromStr for DictSizes {
    type Err = Error;

    /// Parses `"10,3,6"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Invalid(format!("bad sizes `{s}`: {e}")))?;
        match parts.as_slice() {
            [o, m, a] if *o > 0 && *m > 0 && *a > 0 => Ok(DictSizes {
                object: *o,
                map: *m,
                agent: *a,
            }),
            _ => Err(Error::Invalid(format!("expected three positive sizes, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for DictSizes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.object, self.map, self.agent)
    }
}

/// Frozen confounder dictionary. `hash` covers every other field and is
/// re-checked whenever the dictionary is used for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeDictionary {
    pub algo: ClusterAlgo,
    pub seed: u64,
    pub hash: String,
    #[serde(rename = "Z_o")]
    pub z_o: Tensor,
    #[serde(rename = "Z_m")]
    pub z_m: Tensor,
    #[serde(rename = "Z_a")]
    pub z_a: Tensor,
}

impl PrototypeDictionary {
    pub fn new(algo: ClusterAlgo, seed: u64, z_o: Tensor, z_m: Tensor, z_a: Tensor) -> Result<Self> {
        let dim = z_o.cols();
        for (name, z) in [("Z_o", &z_o), ("Z_m", &z_m), ("Z_a", &z_a)] {
            if z.shape().len() != 2 || z.cols() != dim {
                return Err(Error::Config(format!("{name} has shape {:?}, expected [k, {dim}]", z.shape())));
            }
            for i in 0..z.rows() {
                for j in i + 1..z.rows() {
                    if z.row(i) == z.row(j) {
                        return Err(Error::Invalid(format!("{name} rows {i} and {j} coincide")));
                    }
                }
            }
        }
        let mut d = PrototypeDictionary {
            algo,
            seed,
            hash: String::new(),
            z_o,
            z_m,
            z_a,
        };
        d.hash = d.content_hash();
        Ok(d)
    }

    pub fn dim(&self) -> usize {
        self.z_o.cols()
    }

    pub fn get(&self, domain: Domain) -> &Tensor {
        match domain {
            Domain::Object => &self.z_o,
            Domain::Map => &self.z_m,
            Domain::Agent => &self.z_a,
        }
    }

    pub fn sizes(&self) -> DictSizes {
        DictSizes {
            object: self.z_o.rows(),
            map: self.z_m.rows(),
            agent: self.z_a.rows(),
        }
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.algo.name().as_bytes());
        h.update(self.seed.to_le_bytes());
        for z in [&self.z_o, &self.z_m, &self.z_a] {
            h.update((z.shape().len() as u64).to_le_bytes());
            for &s in z.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for v in z.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Fails if the content no longer matches the recorded hash.
    pub fn verify(&self) -> Result<()> {
        let found = self.content_hash();
        if found != self.hash {
            return Err(Error::HashMismatch {
                expected: self.hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: PrototypeDictionary = serde_json::from_str(s)?;
        d.verify()?;
        Ok(d)
    }
}

/// Clusters each domain store into its prototype matrix.
pub fn build_dictionary(
    stores: &DomainStores,
    sizes: DictSizes,
    algo: ClusterAlgo,
    seed: u64,
) -> Result<PrototypeDictionary> {
    let z_o = stores.object.cluster(sizes.object, algo, derive_seed(seed, 0))?.centers;
    let z_m = stores.map.cluster(sizes.map, algo, derive_seed(seed, 1))?.centers;
    let z_a = stores.agent.cluster(sizes.agent, algo, derive_seed(seed, 2))?.centers;
    PrototypeDictionary::new(algo, seed, z_o, z_m, z_a)
}
