//! Principal-component projection of latent trajectories.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Relative eigenvalue below which a component counts as absent.
const RANK_TOL: f64 = 1e-10;

/// A fitted top-`k` principal subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `k × d`, rows are unit axes ordered by decreasing variance.
    pub axes: Array2<f64>,
    /// Variance along each axis.
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

impl Pca {
    /// Fits on the rows of `pool`. Uses the `n × n` Gram matrix when the
    /// dimension exceeds the pool size.
    pub fn fit(pool: &Array2<f64>, k: usize) -> Result<Self> {
        let (n, d) = pool.dim();
        if k == 0 {
            return Err(Error::InvalidConfig("need at least one principal component".into()));
        }
        if n <= k {
            return Err(Error::InvalidConfig(format!(
                "pool of {n} vectors is too small for {k} components"
            )));
        }
        if pool.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite value in PCA pool", None));
        }
        let mean = pool.mean_axis(Axis(0)).expect("non-empty pool");
        let centered = to_na(&(pool - &mean));
        let denom = (n - 1) as f64;

        let gram = d > n;
        let m = if gram {
            &centered * centered.transpose()
        } else {
            centered.transpose() * &centered
        };
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank = order
            .iter()
            .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
            .count();
        if rank < k {
            return Err(Error::InvalidConfig(format!(
                "pool has rank {rank}, fewer than the {k} requested components"
            )));
        }

        let mut axes = Array2::zeros((k, d));
        let mut variances = Vec::with_capacity(k);
        for (row, &i) in order.iter().take(k).enumerate() {
            let lambda = eig.eigenvalues[i];
            let v = eig.eigenvectors.column(i);
            let axis: Vec<f64> = if gram {
                let a = centered.transpose() * v;
                let s = lambda.sqrt();
                a.iter().map(|x| x / s).collect()
            } else {
                v.iter().copied().collect()
            };
            let lead = axis
                .iter()
                .copied()
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            for (j, x) in axis.iter().enumerate() {
                axes[[row, j]] = sign * x;
            }
            variances.push(lambda / denom);
        }
        let total_variance = centered.iter().map(|x| x * x).sum::<f64>() / denom;
        Ok(Self {
            mean,
            axes,
            variances,
            total_variance,
        })
    }

    pub fn k(&self) -> usize {
        self.axes.nrows()
    }

    pub fn project(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                context: "PCA projection",
                expected: vec![self.mean.len()],
                actual: vec![rows.ncols()],
            });
        }
        Ok((rows - &self.mean).dot(&self.axes.t()))
    }

    /// Maps coordinates back into the original space.
    pub fn reconstruct(&self, coords: &Array2<f64>) -> Array2<f64> {
        coords.dot(&self.axes) + &self.mean
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 0.0;
        }
        self.variances.iter().sum::<f64>() / self.total_variance
    }
}

/// Fits a `k`-component PCA on `pool` and projects each trajectory into it.
pub fn pca_project(pool: &Array2<f64>, trajectories: &[Array2<f64>], k: usize) -> Result<Vec<Array2<f64>>> {
    let pca = Pca::fit(pool, k)?;
    trajectories.iter().map(|t| pca.project(t)).collect()
}
