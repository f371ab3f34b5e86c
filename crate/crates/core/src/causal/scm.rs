use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Dag;
use crate::error::{Error, Result};

/// Largest joint state space enumerated exactly.
pub const MAX_JOINT_STATES: usize = 1 << 20;

const ROW_TOL: f64 = 1e-12;

/// Discrete causal model: a DAG with one conditional table per node.
///
/// `cpts[v][row][state]`, where `row` is the mixed-radix index of the parent
/// states, parents taken in node-declaration order with the first parent as
/// the most significant digit.
#[derive(Clone, Debug)]
pub struct DiscreteScm {
    dag: Dag,
    card: Vec<usize>,
    cpts: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub variable: String,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn p(&self, state: usize) -> f64 {
        self.probs[state]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScmNode {
    pub name: String,
    pub card: usize,
}

/// JSON form of a [`DiscreteScm`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScmFile {
    pub nodes: Vec<ScmNode>,
    pub edges: Vec<(String, String)>,
    pub cpts: BTreeMap<String, Vec<Vec<f64>>>,
}

impl DiscreteScm {
    pub fn new(dag: Dag, card: Vec<usize>, cpts: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if card.len() != dag.len() || cpts.len() != dag.len() {
            return Err(Error::Invalid("one cardinality and table per node".into()));
        }
        for (v, &c) in card.iter().enumerate() {
            let name = dag.name(v);
            if c < 2 {
                return Err(Error::Invalid(format!("`{name}` needs at least 2 states")));
            }
            let rows: usize = dag.parents(v).iter().map(|&p| card[p]).product();
            if cpts[v].len() != rows {
                return Err(Error::Invalid(format!(
                    "`{name}` table has {} rows, parents give {rows}",
                    cpts[v].len()
                )));
            }
            for row in &cpts[v] {
                if row.len() != c {
                    return Err(Error::Invalid(format!("`{name}` row width {} != {c}", row.len())));
                }
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::Invalid(format!("`{name}` has a negative entry")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_TOL {
                    return Err(Error::Invalid(format!("`{name}` row sums to {s}")));
                }
            }
        }
        Ok(DiscreteScm { dag, card, cpts })
    }

    pub fn from_file(f: &ScmFile) -> Result<Self> {
        let names: Vec<&str> = f.nodes.iter().map(|n| n.name.as_str()).collect();
        let edges: Vec<(&str, &str)> = f.edges.iter().map(|(p, c)| (p.as_str(), c.as_str())).collect();
        let dag = Dag::new(&names, &edges)?;
        let card = f.nodes.iter().map(|n| n.card).collect();
        let mut cpts = Vec::with_capacity(names.len());
        for n in &names {
            let t = f
                .cpts
                .get(*n)
                .ok_or_else(|| Error::Invalid(format!("no table for `{n}`")))?;
            cpts.push(t.clone());
        }
        if let Some(extra) = f.cpts.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(Error::UnknownNode(extra.clone()));
        }
        Self::new(dag, card, cpts)
    }

    pub fn to_file(&self) -> ScmFile {
        ScmFile {
            nodes: (0..self.dag.len())
                .map(|i| ScmNode {
                    name: self.dag.name(i).to_string(),
                    card: self.card[i],
                })
                .collect(),
            edges: self.dag.edges(),
            cpts: (0..self.dag.len())
                .map(|i| (self.dag.name(i).to_string(), self.cpts[i].clone()))
                .collect(),
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn card(&self, name: &str) -> Result<usize> {
        Ok(self.card[self.dag.id(name)?])
    }

    pub fn joint_size(&self) -> usize {
        self.card.iter().product()
    }

    fn resolve(&self, assign: &[(&str, usize)]) -> Result<Vec<(usize, usize)>> {
        assign
            .iter()
            .map(|&(n, s)| {
                let i = self.dag.id(n)?;
                if s >= self.card[i] {
                    return Err(Error::Invalid(format!("`{n}` has no state {s}")));
                }
                Ok((i, s))
            })
            .collect()
    }

    /// Visits every full assignment with its probability under the model in
    /// which each `clamped` node is forced to its state (incoming edges cut).
    fn enumerate(&self, clamped: &[(usize, usize)], mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
        let total = self.joint_size();
        if total > MAX_JOINT_STATES {
            return Err(Error::Contract(format!(
                "joint space of {total} states exceeds exact-enumeration cap"
            )));
        }
        let n = self.dag.len();
        let mut clamp = vec![None; n];
        for &(i, s) in clamped {
            clamp[i] = Some(s);
        }
        let mut state = vec![0usize; n];
        for _ in 0..total {
            let mut p = 1.0;
            for v in 0..n {
                let f = match clamp[v] {
                    Some(s) => (state[v] == s) as u8 as f64,
                    None => self.cpts[v][self.parent_row(v, &state)][state[v]],
                };
                p *= f;
                if p == 0.0 {
                    break;
                }
            }
            visit(&state, p);
            // odometer increment, last node fastest
            for v in (0..n).rev() {
                state[v] += 1;
                if state[v] < self.card[v] {
                    break;
                }
                state[v] = 0;
            }
        }
        Ok(())
    }

    fn parent_row(&self, v: usize, state: &[usize]) -> usize {
        self.dag
            .parents(v)
            .iter()
            .fold(0, |acc, &p| acc * self.card[p] + state[p])
    }

    fn conditional(
        &self,
        y: &str,
        given: &[(usize, usize)],
        clamped: &[(usize, usize)],
    ) -> Result<Distribution> {
        let yi = self.dag.id(y)?;
        let mut acc = vec![0.0; self.card[yi]];
        self.enumerate(clamped, |state, p| {
            if given.iter().all(|&(i, s)| state[i] == s) {
                acc[state[yi]] += p;
            }
        })?;
        let z: f64 = acc.iter().sum();
        if z <= 0.0 {
            return Err(Error::UndefinedConditional);
        }
        Ok(Distribution {
            variable: y.to_string(),
            probs: acc.into_iter().map(|v| v / z).collect(),
        })
    }

    /// `P(y | given)` by full joint enumeration.
    pub fn observational(&self, y: &str, given: &[(&str, usize)]) -> Result<Distribution> {
        let g = self.resolve(given)?;
        self.conditional(y, &g, &[])
    }

    /// `P(y | do(assign))` by truncated factorization.
    pub fn interventional(&self, y: &str, assign: &[(&str, usize)]) -> Result<Distribution> {
        let d = self.resolve(assign)?;
        self.conditional(y, &[], &d)
    }

    /// `sum_z P(y | s, z) P(z)` over all joint states of `z`.
    ///
    /// Equals `P(y | do(s))` whenever `z` satisfies the backdoor criterion.
    pub fn backdoor_adjust(&self, y: &str, s: (&str, usize), z: &[&str]) -> Result<Distribution> {
        let yi = self.dag.id(y)?;
        let si = self.resolve(&[s])?[0];
        let zi: Vec<usize> = z.iter().map(|n| self.dag.id(n)).collect::<Result<_>>()?;
        let zcard: Vec<usize> = zi.iter().map(|&i| self.card[i]).collect();
        let nz: usize = zcard.iter().product();

        // One pass collects P(z) and P(s, z, y) for every z configuration.
        let mut pz = vec![0.0; nz];
        let mut psz = vec![0.0; nz];
        let mut pszy = vec![vec![0.0; self.card[yi]]; nz];
        self.enumerate(&[], |state, p| {
            let zidx = zi.iter().fold(0, |acc, &i| acc * self.card[i] + state[i]);
            pz[zidx] += p;
            if state[si.0] == si.1 {
                psz[zidx] += p;
                pszy[zidx][state[yi]] += p;
            }
        })?;

        let mut out = vec![0.0; self.card[yi]];
        for k in 0..nz {
            if pz[k] == 0.0 {
                continue;
            }
            if psz[k] == 0.0 {
                return Err(Error::UndefinedConditional);
            }
            for (o, v) in out.iter_mut().zip(&pszy[k]) {
                *o += v / psz[k] * pz[k];
            }
        }
        Ok(Distribution {
            variable: y.to_string(),
            probs: out,
        })
    }
}
