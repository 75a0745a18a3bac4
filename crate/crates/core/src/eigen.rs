//! Diagonalization of the 6x6 Hermitian spin Hamiltonians.

use nalgebra::{SymmetricEigen, Vector6};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spin::{CMatrix6, DIM};

pub const HERMITICITY_TOL: f64 = 1e-10;

/// Energies (MHz, ascending) and matching orthonormal eigenvectors.
///
/// Vectors inside a degenerate level pair come back in whatever gauge the
/// solver produced; only the subspace they span is meaningful.
#[derive(Debug, Clone)]
pub struct EnergyLevels {
    pub energies: [f64; DIM],
    pub vectors: [Vector6<Complex64>; DIM],
}

impl EnergyLevels {
    /// `<a| op |b>` between eigenvectors a and b.
    pub fn matrix_element(&self, op: &CMatrix6, a: usize, b: usize) -> Complex64 {
        self.vectors[a].dotc(&(op * self.vectors[b]))
    }

    pub fn min_gap(&self) -> f64 {
        self.energies.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

fn scale_of(h: &CMatrix6) -> f64 {
    h.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn check_hermitian(h: &CMatrix6) -> Result<()> {
    let scale = scale_of(h);
    let asymmetry = (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if asymmetry > HERMITICITY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonHermitianInput { asymmetry, scale });
    }
    Ok(())
}

/// Full eigensystem with a Hermiticity check on the input.
pub fn eigensystem(h: &CMatrix6) -> Result<EnergyLevels> {
    check_hermitian(h)?;
    Ok(eigensystem_unchecked(h))
}

pub(crate) fn eigensystem_unchecked(h: &CMatrix6) -> EnergyLevels {
    let eig = SymmetricEigen::new(*h);
    let mut order: [usize; DIM] = [0, 1, 2, 3, 4, 5];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies = order.map(|k| eig.eigenvalues[k]);
    let vectors = order.map(|k| {
        let v: Vector6<Complex64> = eig.eigenvectors.column(k).into_owned();
        v.normalize()
    });
    EnergyLevels { energies, vectors }
}

/// Ascending eigenvalues only. No Hermiticity check; used in inner loops
/// where the matrix is Hermitian by construction.
pub fn eigenvalues(h: &CMatrix6) -> [f64; DIM] {
    let ev = h.symmetric_eigenvalues();
    let mut out = [ev[0], ev[1], ev[2], ev[3], ev[4], ev[5]];
    out.sort_by(f64::total_cmp);
    out
}
