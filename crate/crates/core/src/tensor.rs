//! Rotations and second-rank interaction tensors.
//!
//! Angles are held in radians; degree conversion only happens at the file
//! boundary. Rotations use the ZYZ Euler convention
//! `R(a, b, g) = Rz(a) * Ry(b) * Rz(g)`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles { alpha, beta, gamma }
    }

    pub fn from_degrees(alpha: f64, beta: f64, gamma: f64) -> Self {
        EulerAngles::new(alpha.to_radians(), beta.to_radians(), gamma.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [self.alpha.to_degrees(), self.beta.to_degrees(), self.gamma.to_degrees()]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self)
    }
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// ZYZ rotation matrix `Rz(alpha) * Ry(beta) * Rz(gamma)`.
pub fn rotation_matrix(angles: &EulerAngles) -> Matrix3<f64> {
    rot_z(angles.alpha) * rot_y(angles.beta) * rot_z(angles.gamma)
}

/// Inverse of [`rotation_matrix`] for a proper rotation. Returns beta in
/// [0, pi]; at the gimbal points (beta = 0 or pi) gamma is set to zero.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> EulerAngles {
    let sin_beta = (r[(2, 0)].powi(2) + r[(2, 1)].powi(2)).sqrt();
    let beta = sin_beta.atan2(r[(2, 2)]);
    if sin_beta > 1e-12 {
        EulerAngles::new(
            r[(1, 2)].atan2(r[(0, 2)]),
            beta,
            r[(2, 1)].atan2(-r[(2, 0)]),
        )
    } else if r[(2, 2)] > 0.0 {
        EulerAngles::new(r[(1, 0)].atan2(r[(0, 0)]), 0.0, 0.0)
    } else {
        // Rz(a) Ry(pi) = [[-cos a, -sin a, 0], [-sin a, cos a, 0], [0, 0, -1]]
        EulerAngles::new((-r[(0, 1)]).atan2(-r[(0, 0)]), beta, 0.0)
    }
}

/// Principal values of an interaction tensor, in its principal-axis frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PrincipalValues {
    /// Quadrupole form `diag(-E, E, D)`, MHz.
    Quadrupole { e: f64, d: f64 },
    /// Zeeman form `diag(g1, g2, g3)`, kHz/G.
    Zeeman { g: [f64; 3] },
}

impl PrincipalValues {
    pub fn diagonal(&self) -> Vector3<f64> {
        match *self {
            PrincipalValues::Quadrupole { e, d } => Vector3::new(-e, e, d),
            PrincipalValues::Zeeman { g } => Vector3::from(g),
        }
    }
}

/// Symmetric 3x3 tensor (Q in MHz or M in kHz/G), optionally remembering
/// the parameters it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTensor {
    pub matrix: Matrix3<f64>,
    pub source: Option<(EulerAngles, PrincipalValues)>,
}

impl InteractionTensor {
    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        InteractionTensor { matrix, source: None }
    }

    /// `R * T * R^T`. Drops the parameter provenance.
    pub fn conjugated(&self, r: &Matrix3<f64>) -> Self {
        InteractionTensor::from_matrix(r * self.matrix * r.transpose())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2]]
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        (self.matrix - self.matrix.transpose()).amax() <= rel_tol * scale
    }
}

/// `R(angles) * diag(pv) * R(angles)^T`.
pub fn build_tensor(angles: EulerAngles, pv: PrincipalValues) -> InteractionTensor {
    let r = rotation_matrix(&angles);
    let mut matrix = r * Matrix3::from_diagonal(&pv.diagonal()) * r.transpose();
    // Enforce exact symmetry against rounding in the triple product.
    matrix = (matrix + matrix.transpose()) * 0.5;
    InteractionTensor {
        matrix,
        source: Some((angles, pv)),
    }
}

/// Orientation of the crystal C2 axis in the laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct C2Orientation {
    /// Polar angle between the C2 axis and lab z, radians.
    pub theta: f64,
    /// Azimuth of the C2 projection onto the xy plane from lab x, radians.
    pub phi: f64,
}

impl C2Orientation {
    pub fn from_degrees(theta: f64, phi: f64) -> Self {
        C2Orientation {
            theta: theta.to_radians(),
            phi: phi.to_radians(),
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        unit_vector(self.theta, self.phi)
    }

    /// `R(phi, theta, 0) * R(pi, 0, 0) * R(phi, theta, 0)^T`: a pi rotation
    /// about the C2 axis.
    pub fn rotation(&self) -> Matrix3<f64> {
        let tilt = rotation_matrix(&EulerAngles::new(self.phi, self.theta, 0.0));
        let flip = rotation_matrix(&EulerAngles::new(std::f64::consts::PI, 0.0, 0.0));
        tilt * flip * tilt.transpose()
    }
}

pub fn c2_transform(t: &InteractionTensor, c2: &C2Orientation) -> InteractionTensor {
    t.conjugated(&c2.rotation())
}

pub fn unit_vector(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Directions of the D1 and D2 optical extinction axes in the lab frame
/// (polar/azimuth angles, radians). The third crystal axis b is the C2 axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalAxes {
    pub theta_d1: f64,
    pub phi_d1: f64,
    pub theta_d2: f64,
    pub phi_d2: f64,
}

impl CrystalAxes {
    pub fn from_degrees(theta_d1: f64, phi_d1: f64, theta_d2: f64, phi_d2: f64) -> Self {
        CrystalAxes {
            theta_d1: theta_d1.to_radians(),
            phi_d1: phi_d1.to_radians(),
            theta_d2: theta_d2.to_radians(),
            phi_d2: phi_d2.to_radians(),
        }
    }

    /// Matrix whose columns are D1, D2 and b in lab coordinates.
    pub fn axis_matrix(&self, c2: &C2Orientation) -> Matrix3<f64> {
        Matrix3::from_columns(&[
            unit_vector(self.theta_d1, self.phi_d1),
            unit_vector(self.theta_d2, self.phi_d2),
            c2.axis(),
        ])
    }

    /// Express a lab-frame tensor in the (D1, D2, b) basis.
    ///
    /// Uses `A * T * A^T` with `A` the column matrix of the crystal axes. This
    /// is the convention under which published (D1, D2, b) tensor tables for
    /// this system are reproduced; the row convention `A^T * T * A` differs
    /// by the small misalignment rotation applied twice.
    pub fn to_crystal_basis(&self, t: &InteractionTensor, c2: &C2Orientation) -> InteractionTensor {
        t.conjugated(&self.axis_matrix(c2))
    }
}
