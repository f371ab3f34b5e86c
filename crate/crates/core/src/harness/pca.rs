use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Projection {
    /// `n x k` coordinates along the leading components.
    pub coords: Tensor,
    /// Variance along each kept component, descending.
    pub variance: Vec<f64>,
}

/// Projects the rows of `points` onto their `k` leading principal components.
pub fn pca_project(points: &Tensor, k: usize) -> Result<Projection> {
    if points.shape().len() != 2 || points.rows() < 2 {
        return Err(Error::Invalid("PCA needs a matrix with at least two rows".into()));
    }
    let (n, d) = (points.rows(), points.cols());
    if k == 0 || k > d {
        return Err(Error::Invalid(format!("cannot keep {k} of {d} components")));
    }
    let x = DMatrix::from_row_slice(n, d, points.data());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<_> = order[..k]
        .iter()
        .map(|&c| {
            let mut v = eig.eigenvectors.column(c).into_owned();
            // Sign convention: the largest-magnitude loading is positive.
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.neg_mut();
            }
            v
        })
        .collect();
    let mut coords = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = centered.row(i).transpose();
        coords.extend(axes.iter().map(|v| row.dot(v)));
    }
    Ok(Projection {
        coords: Tensor::from_parts(vec![n, k], coords),
        variance: order[..k].iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect(),
    })
}
