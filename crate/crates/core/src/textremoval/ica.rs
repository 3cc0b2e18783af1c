//! FastICA with the symmetric (parallel) fixed-point update and a `tanh`
//! contrast function.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues of the sample covariance below this are dropped when whitening.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaParams {
    pub components: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for IcaParams {
    fn default() -> Self {
        Self {
            components: 3,
            tolerance: 1e-4,
            max_iterations: 200,
            seed: 0,
        }
    }
}

/// Fitted unmixing model: `s = unmixing · whitening · (x - mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    pub mean: Vec<f64>,
    /// `r × d` whitening matrix, `r` = retained eigen-directions.
    pub whitening: Vec<Vec<f64>>,
    /// `k × r` unmixing matrix with orthonormal rows.
    pub unmixing: Vec<Vec<f64>>,
    #[serde(default = "yes")]
    pub converged: bool,
    #[serde(default)]
    pub iterations: usize,
}

fn yes() -> bool {
    true
}

impl IcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> usize {
        self.unmixing.len()
    }

    fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
        let cols = rows.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
    }

    pub fn whitening_matrix(&self) -> DMatrix<f64> {
        Self::to_matrix(&self.whitening)
    }

    pub fn unmixing_matrix(&self) -> DMatrix<f64> {
        Self::to_matrix(&self.unmixing)
    }

    /// Combined `k × d` map applied to centered samples.
    pub fn projection_matrix(&self) -> DMatrix<f64> {
        self.unmixing_matrix() * self.whitening_matrix()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        let r = self.whitening.len();
        let bad = |m: &str| Err(Error::DimensionMismatch(format!("ica model: {m}")));
        if d == 0 || r == 0 || self.unmixing.is_empty() {
            return bad("empty matrices");
        }
        if self.whitening.iter().any(|row| row.len() != d) {
            return bad("whitening rows must match the mean dimension");
        }
        if self.unmixing.iter().any(|row| row.len() != r) {
            return bad("unmixing rows must match the whitened dimension");
        }
        Ok(())
    }

    /// Projects one sample.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let p = self.projection_matrix();
        let centered =
            DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        (p * centered).iter().copied().collect()
    }

    /// Projects the rows of an `n × d` matrix into an `n × k` matrix.
    pub fn transform(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let centered = center(samples, &self.mean);
        centered * self.projection_matrix().transpose()
    }
}

fn center(samples: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut c = samples.clone();
    for (j, m) in mean.iter().enumerate() {
        c.column_mut(j).add_scalar_mut(-m);
    }
    c
}

/// Fits FastICA on `samples` (`n × d`, one row per observation).
///
/// Returns the best iterate with `converged = false` when `max_iterations`
/// runs out.
pub fn fastica(samples: &DMatrix<f64>, params: &IcaParams) -> Result<IcaModel> {
    let (n, d) = samples.shape();
    if params.components == 0 {
        return Err(Error::InvalidConfig(
            "ica needs at least one component".into(),
        ));
    }
    if d == 0 || n < 10 * params.components {
        return Err(Error::DegenerateData(format!(
            "{n} samples for {} components",
            params.components
        )));
    }
    let mean: Vec<f64> = (0..d).map(|j| samples.column(j).mean()).collect();
    let centered = center(samples, &mean);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] >= EIGENVALUE_FLOOR)
        .collect();
    if order.is_empty() {
        return Err(Error::DegenerateData(
            "samples have rank 0 after centering".into(),
        ));
    }
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r = order.len();
    let whitening = DMatrix::from_fn(r, d, |i, j| {
        eig.eigenvectors[(j, order[i])] / eig.eigenvalues[order[i]].sqrt()
    });
    // r × n whitened data
    let z = &whitening * centered.transpose();
    let k = params.components.min(r);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = DMatrix::from_fn(k, r, |_, _| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init)?;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..params.max_iterations {
        iterations = it + 1;
        let wz = &w * &z;
        let g = wz.map(f64::tanh);
        let g_prime_mean: Vec<f64> = (0..k)
            .map(|i| g.row(i).iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64)
            .collect();
        let mut next = &g * z.transpose() / n as f64;
        for i in 0..k {
            let scaled = w.row(i) * g_prime_mean[i];
            let mut row = next.row_mut(i);
            row -= scaled;
        }
        let next = symmetric_decorrelation(&next)?;
        let change = (0..k)
            .map(|i| (1.0 - next.row(i).dot(&w.row(i)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < params.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fastica stopped after {iterations} iterations without converging");
    }
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    };
    Ok(IcaModel {
        mean,
        whitening: rows(&whitening),
        unmixing: rows(&w),
        converged,
        iterations,
    })
}

/// `(W Wᵀ)^{-1/2} W`: makes the rows of `w` orthonormal.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(w * w.transpose());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::DegenerateData(
            "rank-deficient unmixing iterate".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w)
}
