//! Exact causal queries on small discrete models.

mod dag;
mod scm;

pub use dag::{build_vad_scm, Arrow, Dag, Path};
pub use scm::{DiscreteScm, Distribution, ScmFile, ScmNode, MAX_JOINT_STATES};

use rand::Rng;

use crate::error::Result;

/// `Z -> S`, `Z -> Y`, `S -> Y` with `P(Z=1)=0.5`, `P(S=1|Z=1)=0.9`,
/// `P(S=1|Z=0)=0.1` and `P(Y=1|S,Z) = 0.7 s + 0.2 z`.
pub fn confounded_triple() -> DiscreteScm {
    let dag = Dag::new(&["Z", "S", "Y"], &[("Z", "S"), ("Z", "Y"), ("S", "Y")])
        .expect("valid fixture graph");
    // Y's parents in declaration order are (Z, S): rows z*2 + s.
    let y_rows = (0..2)
        .flat_map(|z| (0..2).map(move |s| 0.7 * s as f64 + 0.2 * z as f64))
        .map(|p1| vec![1.0 - p1, p1])
        .collect();
    DiscreteScm::new(
        dag,
        vec![2, 2, 2],
        vec![
            vec![vec![0.5, 0.5]],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            y_rows,
        ],
    )
    .expect("valid fixture tables")
}

/// Random DAG with strictly positive tables whose joint space stays within
/// `max_states`. Edges only run from lower to higher node index.
pub fn random_scm<R: Rng + ?Sized>(rng: &mut R, max_states: usize) -> Result<DiscreteScm> {
    let mut card: Vec<usize> = Vec::new();
    let target = rng.gen_range(3..=8);
    while card.len() < target {
        let c = rng.gen_range(2..=4);
        if card.iter().product::<usize>() * c > max_states {
            break;
        }
        card.push(c);
    }
    while card.len() < 2 {
        card.push(2);
    }
    let n = card.len();
    let names: Vec<String> = (0..n).map(|i| format!("V{i}")).collect();
    let density = rng.gen_range(0.25..0.7);
    let mut edges = Vec::new();
    for c in 1..n {
        for p in 0..c {
            if rng.gen_bool(density) {
                edges.push((names[p].clone(), names[c].clone()));
            }
        }
    }
    let dag = Dag::new(&names, &edges)?;
    let cpts = (0..n)
        .map(|v| {
            let rows: usize = dag.parents(v).iter().map(|&p| card[p]).product();
            (0..rows)
                .map(|_| {
                    let raw: Vec<f64> = (0..card[v]).map(|_| rng.gen_range(0.05..1.0)).collect();
                    normalize(raw)
                })
                .collect()
        })
        .collect();
    DiscreteScm::new(dag, card, cpts)
}

fn normalize(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    for v in &mut row {
        *v /= s;
    }
    // Push the rounding residue into the largest entry so the row sums to 1.
    let resid = 1.0 - row.iter().sum::<f64>();
    let (imax, _) = row
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    row[imax] += resid;
    row
}

#[cfg(test)]
mod tests;
