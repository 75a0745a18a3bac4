//! Gauss-Newton parameter covariance from a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::anneal::ProposalScales;
use super::cost::{CostEvaluator, CostOptions};
use super::params::{from_vector, names, to_vector, N_PARAMS, PARAMS};
use crate::error::{Error, Result};
use crate::model::HamiltonianModel;
use crate::spectra::{Band, BandMask, FieldScanDataset};

/// Relative step of the central differences, in units of each parameter's
/// proposal scale.
pub const FD_STEP_FRACTION: f64 = 1e-4;
/// Smallest accepted eigenvalue ratio of the scaled normal matrix.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Row-major, in parameter units squared.
    pub matrix: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// Residual rms used as sigma, MHz.
    pub sigma_mhz: f64,
    pub n_observations: usize,
}

impl CovarianceReport {
    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    /// Labeled square matrix as CSV text, six significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.matrix) {
            out.push_str(n);
            for v in row {
                out.push_str(&format!(",{v:.6e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Covariance of all 24 parameters against all bands, with default scales.
pub fn covariance(model: &HamiltonianModel, data: &FieldScanDataset) -> Result<CovarianceReport> {
    let free: Vec<usize> = (0..N_PARAMS).collect();
    covariance_with(model, data, &free, BandMask::ALL, CostOptions::default(), &ProposalScales::default())
}

pub fn covariance_with(
    model: &HamiltonianModel,
    data: &FieldScanDataset,
    free: &[usize],
    mask: BandMask,
    options: CostOptions,
    scales: &ProposalScales,
) -> Result<CovarianceReport> {
    let eval = CostEvaluator::new(data, mask, options)?;
    let (report, assignment) = eval.evaluate_with_assignment(model);
    let rows: Vec<(usize, Band, usize)> = assignment
        .points
        .iter()
        .enumerate()
        .flat_map(|(k, bands)| {
            Band::ALL
                .into_iter()
                .flat_map(move |band| bands[band.index()].pairs.iter().map(move |&(_, j)| (k, band, j)))
        })
        .collect();
    let n = rows.len();
    let p = free.len();
    if n < p {
        return Err(Error::InsufficientData { needed: p, got: n });
    }

    let x0 = to_vector(model);
    let mut jac = DMatrix::<f64>::zeros(n, p);
    for (col, &k) in free.iter().enumerate() {
        let h = FD_STEP_FRACTION * scales.for_kind(PARAMS[k].kind);
        let mut xp = x0;
        let mut xm = x0;
        xp[k] += h;
        xm[k] -= h;
        let pp = eval.predictions(&from_vector(&xp, model));
        let pm = eval.predictions(&from_vector(&xm, model));
        for (row, &(pt, band, j)) in rows.iter().enumerate() {
            let (a, b) = (&pp[pt][band.index()], &pm[pt][band.index()]);
            if j >= a.len() || j >= b.len() {
                return Err(Error::Invalid(format!(
                    "peak count changed while differentiating {}",
                    PARAMS[k].name
                )));
            }
            jac[(row, col)] = (a[j] - b[j]) / (2.0 * h);
        }
    }

    let sigma = report.rms_khz * 1e-3;
    let normal = jac.transpose() * &jac;
    // Conditioning is judged in units of each parameter's proposal scale,
    // where an O(1) step is a comparable change for every kind.
    let u = DVector::from_iterator(p, free.iter().map(|&k| scales.for_kind(PARAMS[k].kind)));
    let labels = names(free);
    let unit = DMatrix::from_fn(p, p, |i, j| normal[(i, j)] * u[i] * u[j]);
    let eig = SymmetricEigen::new(unit);
    let (imin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one parameter");
    let lmax = eig.eigenvalues.amax();
    if !(lmin > SINGULAR_RCOND * lmax) {
        // Back to parameter units, then normalized.
        let mut dir: Vec<f64> = (0..p).map(|i| eig.eigenvectors[(i, imin)] * u[i]).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let mut null_direction: Vec<(String, f64)> = labels
            .iter()
            .cloned()
            .zip(dir)
            .filter(|(_, w)| w.abs() > 1e-3)
            .collect();
        null_direction.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        return Err(Error::SingularJacobian { null_direction });
    }
    let inv_unit = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
        * eig.eigenvectors.transpose();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            cov[(i, j)] = sigma * sigma * inv_unit[(i, j)] * u[i] * u[j];
        }
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(CovarianceReport {
        names: labels,
        values: free.iter().map(|&k| x0[k]).collect(),
        matrix: (0..p).map(|i| cov.row(i).iter().copied().collect()).collect(),
        std_errors: (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        sigma_mhz: sigma,
        n_observations: n,
    })
}
