use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;

/// Lloyd / medoid iteration budget.
pub const MAX_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgo {
    /// Lloyd iterations from k distinct uniformly drawn rows.
    Kmeans,
    /// Lloyd iterations from k-means++ seeding.
    KmeansPp,
    /// Alternating medoid updates from k-means++ seeding; centers are data rows.
    Kmedoids,
}

impl ClusterAlgo {
    pub const ALL: [ClusterAlgo; 3] = [ClusterAlgo::Kmeans, ClusterAlgo::KmeansPp, ClusterAlgo::Kmedoids];

    pub fn name(self) -> &'static str {
        match self {
            ClusterAlgo::Kmeans => "kmeans",
            ClusterAlgo::KmeansPp => "kmeans_pp",
            ClusterAlgo::Kmedoids => "kmedoids",
        }
    }
}

impl std::str::FromStr for ClusterAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterAlgo::Kmeans),
            "kmeans_pp" | "kmeans++" => Ok(ClusterAlgo::KmeansPp),
            "kmedoids" => Ok(ClusterAlgo::Kmedoids),
            _ => Err(Error::Invalid(format!("unknown clustering algorithm `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub centers: Tensor,
    pub assignment: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    /// Row indices of the medoids (k-medoids only).
    pub medoids: Option<Vec<usize>>,
}

impl Clustering {
    pub fn sse(&self) -> f64 {
        *self.objective.last().expect("at least one assignment step")
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_capacity(points: &Tensor, k: usize) -> Result<()> {
    if k == 0 || k > points.rows() {
        return Err(Error::Capacity { k, n: points.rows() });
    }
    Ok(())
}

/// Row indices chosen by k-means++ seeding.
fn kmeans_pp_indices<R: Rng>(points: &Tensor, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining row duplicates a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    chosen
}

/// k-means++ seeding: the first center uniform, each next one drawn with
/// probability proportional to its squared distance from the chosen set.
pub fn kmeans_pp_init(points: &Tensor, k: usize, seed: u64) -> Result<Tensor> {
    check_capacity(points, k)?;
    let mut rng = seeding::rng(seed);
    Ok(points.select_rows(&kmeans_pp_indices(points, k, &mut rng)))
}

fn assign(points: &Tensor, centers: &Tensor) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..centers.rows() {
                let d = sq_dist(p, centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn check_monotone(objective: &[f64]) -> Result<()> {
    if let [.., prev, cur] = objective {
        if *cur > prev + 1e-12 * prev.abs().max(1.0) {
            return Err(Error::Contract(format!("clustering objective rose from {prev} to {cur}")));
        }
    }
    Ok(())
}

/// Clusters the rows of `points` into `k` groups.
pub fn cluster(points: &Tensor, k: usize, algo: ClusterAlgo, seed: u64) -> Result<Clustering> {
    check_capacity(points, k)?;
    let mut rng = seeding::rng(seed);
    match algo {
        ClusterAlgo::Kmeans => {
            let idx = sample(&mut rng, points.rows(), k).into_vec();
            lloyd(points, points.select_rows(&idx))
        }
        ClusterAlgo::KmeansPp => {
            let idx = kmeans_pp_indices(points, k, &mut rng);
            lloyd(points, points.select_rows(&idx))
        }
        ClusterAlgo::Kmedoids => {
            let idx = kmeans_pp_indices(points, k, &mut rng);
            medoids(points, idx)
        }
    }
}

fn lloyd(points: &Tensor, mut centers: Tensor) -> Result<Clustering> {
    let (n, d, k) = (points.rows(), points.cols(), centers.rows());
    let mut objective = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut assignment;
    loop {
        let (a, dist) = assign(points, &centers);
        assignment = a;
        objective.push(dist.iter().sum());
        check_monotone(&objective)?;
        if prev.as_ref() == Some(&assignment) || objective.len() > MAX_ITERS {
            break;
        }

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut donated = vec![false; n];
        let mut dist = dist;
        for c in 0..k {
            let row = &mut centers.data_mut()[c * d..(c + 1) * d];
            if counts[c] > 0 {
                for (r, s) in row.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *r = s / counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the globally farthest point.
                let far = (0..n)
                    .filter(|&i| !donated[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a donor");
                donated[far] = true;
                dist[far] = 0.0;
                row.copy_from_slice(points.row(far));
            }
        }
        prev = Some(assignment.clone());
    }
    Ok(Clustering {
        centers,
        assignment,
        objective,
        medoids: None,
    })
}

fn medoids(points: &Tensor, mut idx: Vec<usize>) -> Result<Clustering> {
    let n = points.rows();
    let k = idx.len();
    let mut objective = Vec::new();
    let mut assignment;
    loop {
        let (a, dist) = assign(points, &points.select_rows(&idx));
        assignment = a;
        objective.push(dist.iter().sum());
        check_monotone(&objective)?;
        if objective.len() > MAX_ITERS {
            break;
        }

        let mut next = idx.clone();
        let mut taken: Vec<bool> = vec![false; n];
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let cost = |m: usize| -> f64 { members.iter().map(|&i| sq_dist(points.row(i), points.row(m))).sum() };
            let mut best = (idx[c], cost(idx[c]));
            for &m in &members {
                let cm = cost(m);
                if cm < best.1 {
                    best = (m, cm);
                }
            }
            next[c] = best.0;
            taken[best.0] = true;
        }
        for c in 0..k {
            if !(0..n).any(|i| assignment[i] == c) {
                // Empty cluster: move its medoid to the farthest free point.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a free point");
                taken[far] = true;
                next[c] = far;
            }
        }
        if next == idx {
            break;
        }
        idx = next;
    }
    Ok(Clustering {
        centers: points.select_rows(&idx),
        assignment,
        objective,
        medoids: Some(idx),
    })
}
