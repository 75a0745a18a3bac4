//! Effective spin Hamiltonian `H = B.M.I + I.Q.I` for the two C2-related
//! subsites of one crystal site.
//!
//! Units: B in gauss, M in kHz/G, Q in MHz. Hamiltonians and energies are in
//! MHz; the kHz -> MHz conversion of the Zeeman term happens here and nowhere
//! else.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spin::{CMatrix6, SpinOperators};
use crate::tensor::{build_tensor, C2Orientation, CrystalAxes, EulerAngles, InteractionTensor, PrincipalValues};

const KHZ_TO_MHZ: f64 = 1e-3;

const TABLE1_JSON: &str = include_str!("../data/site2_table1.json");

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MagneticField {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl MagneticField {
    pub const ZERO: MagneticField = MagneticField { bx: 0.0, by: 0.0, bz: 0.0 };

    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        MagneticField { bx, by, bz }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        MagneticField::new(v.x, v.y, v.z)
    }

    pub fn magnitude(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn scaled(self, s: f64) -> Self {
        MagneticField::new(self.bx * s, self.by * s, self.bz * s)
    }

    pub fn rotated(self, r: &Matrix3<f64>) -> Self {
        MagneticField::from_vector(&(r * self.to_vector()))
    }
}

impl fmt::Display for MagneticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.2}, {:.2}, {:.2}] G", self.bx, self.by, self.bz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Ground,
    Excited,
}

impl State {
    pub const ALL: [State; 2] = [State::Ground, State::Excited];

    pub fn name(self) -> &'static str {
        match self {
            State::Ground => "ground",
            State::Excited => "excited",
        }
    }

    pub fn parse(s: &str) -> Option<State> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ground" | "g" => Some(State::Ground),
            "excited" | "e" => Some(State::Excited),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subsite {
    One,
    Two,
}

impl Subsite {
    pub const ALL: [Subsite; 2] = [Subsite::One, Subsite::Two];

    pub fn number(self) -> u8 {
        match self {
            Subsite::One => 1,
            Subsite::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Subsite> {
        match n {
            1 => Some(Subsite::One),
            2 => Some(Subsite::Two),
            _ => None,
        }
    }
}

/// Euler angles plus principal values for one tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorParams {
    pub angles: EulerAngles,
    pub values: PrincipalValues,
}

impl TensorParams {
    pub fn tensor(&self) -> InteractionTensor {
        build_tensor(self.angles, self.values)
    }
}

/// Zeeman and quadrupole parameters of one electronic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateParams {
    pub zeeman: TensorParams,
    pub quad: TensorParams,
}

impl StateParams {
    pub fn new(zeeman_angles: EulerAngles, g: [f64; 3], quad_angles: EulerAngles, e: f64, d: f64) -> Self {
        StateParams {
            zeeman: TensorParams {
                angles: zeeman_angles,
                values: PrincipalValues::Zeeman { g },
            },
            quad: TensorParams {
                angles: quad_angles,
                values: PrincipalValues::Quadrupole { e, d },
            },
        }
    }

    pub fn g(&self) -> [f64; 3] {
        match self.zeeman.values {
            PrincipalValues::Zeeman { g } => g,
            PrincipalValues::Quadrupole { .. } => unreachable!("zeeman slot holds quadrupole values"),
        }
    }

    pub fn e_d(&self) -> (f64, f64) {
        match self.quad.values {
            PrincipalValues::Quadrupole { e, d } => (e, d),
            PrincipalValues::Zeeman { .. } => unreachable!("quadrupole slot holds zeeman values"),
        }
    }

    /// Lab-frame (M, Q) for a subsite; subsite 2 is the C2 image of subsite 1.
    pub fn tensors(&self, subsite: Subsite, c2: &C2Orientation) -> (InteractionTensor, InteractionTensor) {
        let m = self.zeeman.tensor();
        let q = self.quad.tensor();
        match subsite {
            Subsite::One => (m, q),
            Subsite::Two => {
                let r = c2.rotation();
                (m.conjugated(&r), q.conjugated(&r))
            }
        }
    }
}

/// Precomputed `H(B) = H_Q + sum_k B_k Z_k` for one state and subsite.
///
/// `zeeman[k] = dH/dB_k` in MHz/G, which is also what the field-derivative
/// code needs.
#[derive(Debug, Clone)]
pub struct SpinHamiltonian {
    pub quad: CMatrix6,
    pub zeeman: [CMatrix6; 3],
}

impl SpinHamiltonian {
    pub fn from_tensors(m: &Matrix3<f64>, q: &Matrix3<f64>) -> Self {
        let ops = SpinOperators::get();
        let mut quad = CMatrix6::zeros();
        for a in 0..3 {
            for b in 0..3 {
                if q[(a, b)] != 0.0 {
                    quad += ops.product(a, b) * Complex64::new(q[(a, b)], 0.0);
                }
            }
        }
        let mut zeeman = [CMatrix6::zeros(); 3];
        for (k, zk) in zeeman.iter_mut().enumerate() {
            for l in 0..3 {
                *zk += ops.component(l) * Complex64::new(m[(k, l)] * KHZ_TO_MHZ, 0.0);
            }
        }
        SpinHamiltonian { quad, zeeman }
    }

    pub fn new(state: &StateParams, subsite: Subsite, c2: &C2Orientation) -> Self {
        let (m, q) = state.tensors(subsite, c2);
        SpinHamiltonian::from_tensors(&m.matrix, &q.matrix)
    }

    pub fn at(&self, b: MagneticField) -> CMatrix6 {
        let mut h = self.quad;
        for (k, bk) in [b.bx, b.by, b.bz].into_iter().enumerate() {
            if bk != 0.0 {
                h += self.zeeman[k] * Complex64::new(bk, 0.0);
            }
        }
        h
    }
}

/// `B.M.I + I.Q.I` in MHz for the given state and subsite.
pub fn effective_hamiltonian(state: &StateParams, subsite: Subsite, c2: &C2Orientation, b: MagneticField) -> CMatrix6 {
    SpinHamiltonian::new(state, subsite, c2).at(b)
}

/// Full parameter set for both electronic states of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct HamiltonianModel {
    pub ground: StateParams,
    pub excited: StateParams,
    pub c2: C2Orientation,
    pub crystal_axes: Option<CrystalAxes>,
}

impl HamiltonianModel {
    /// Parameters of the bundled `site2_table1.json`.
    pub fn site2_table1() -> Self {
        serde_json::from_str(TABLE1_JSON).expect("bundled model file is valid")
    }

    pub fn bundled_json() -> &'static str {
        TABLE1_JSON
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn state(&self, state: State) -> &StateParams {
        match state {
            State::Ground => &self.ground,
            State::Excited => &self.excited,
        }
    }

    pub fn state_mut(&mut self, state: State) -> &mut StateParams {
        match state {
            State::Ground => &mut self.ground,
            State::Excited => &mut self.excited,
        }
    }

    pub fn spin_hamiltonian(&self, state: State, subsite: Subsite) -> SpinHamiltonian {
        SpinHamiltonian::new(self.state(state), subsite, &self.c2)
    }

    pub fn hamiltonian(&self, state: State, subsite: Subsite, b: MagneticField) -> CMatrix6 {
        effective_hamiltonian(self.state(state), subsite, &self.c2, b)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("model serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDocument {
    alpha_m_deg: f64,
    beta_m_deg: f64,
    gamma_m_deg: f64,
    g1_khz_per_g: f64,
    g2_khz_per_g: f64,
    g3_khz_per_g: f64,
    alpha_q_deg: f64,
    beta_q_deg: f64,
    gamma_q_deg: f64,
    e_mhz: f64,
    d_mhz: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct C2Document {
    theta_deg: f64,
    phi_deg: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxesDocument {
    theta_d1_deg: f64,
    phi_d1_deg: f64,
    theta_d2_deg: f64,
    phi_d2_deg: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    ground: StateDocument,
    excited: StateDocument,
    c2: C2Document,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crystal_axes: Option<AxesDocument>,
}

impl From<&StateParams> for StateDocument {
    fn from(s: &StateParams) -> Self {
        let [am, bm, gm] = s.zeeman.angles.to_degrees();
        let [aq, bq, gq] = s.quad.angles.to_degrees();
        let g = s.g();
        let (e, d) = s.e_d();
        StateDocument {
            alpha_m_deg: am,
            beta_m_deg: bm,
            gamma_m_deg: gm,
            g1_khz_per_g: g[0],
            g2_khz_per_g: g[1],
            g3_khz_per_g: g[2],
            alpha_q_deg: aq,
            beta_q_deg: bq,
            gamma_q_deg: gq,
            e_mhz: e,
            d_mhz: d,
        }
    }
}

impl StateDocument {
    fn values(&self) -> [f64; 11] {
        [
            self.alpha_m_deg,
            self.beta_m_deg,
            self.gamma_m_deg,
            self.g1_khz_per_g,
            self.g2_khz_per_g,
            self.g3_khz_per_g,
            self.alpha_q_deg,
            self.beta_q_deg,
            self.gamma_q_deg,
            self.e_mhz,
            self.d_mhz,
        ]
    }

    fn to_params(self) -> StateParams {
        StateParams::new(
            EulerAngles::from_degrees(self.alpha_m_deg, self.beta_m_deg, self.gamma_m_deg),
            [self.g1_khz_per_g, self.g2_khz_per_g, self.g3_khz_per_g],
            EulerAngles::from_degrees(self.alpha_q_deg, self.beta_q_deg, self.gamma_q_deg),
            self.e_mhz,
            self.d_mhz,
        )
    }
}

impl TryFrom<ModelDocument> for HamiltonianModel {
    type Error = String;

    fn try_from(doc: ModelDocument) -> std::result::Result<Self, String> {
        let mut all: Vec<f64> = doc.ground.values().to_vec();
        all.extend(doc.excited.values());
        all.extend([doc.c2.theta_deg, doc.c2.phi_deg]);
        if let Some(ax) = &doc.crystal_axes {
            all.extend([ax.theta_d1_deg, ax.phi_d1_deg, ax.theta_d2_deg, ax.phi_d2_deg]);
        }
        if all.iter().any(|v| !v.is_finite()) {
            return Err("model contains non-finite values".into());
        }
        Ok(HamiltonianModel {
            ground: doc.ground.to_params(),
            excited: doc.excited.to_params(),
            c2: C2Orientation::from_degrees(doc.c2.theta_deg, doc.c2.phi_deg),
            crystal_axes: doc
                .crystal_axes
                .map(|a| CrystalAxes::from_degrees(a.theta_d1_deg, a.phi_d1_deg, a.theta_d2_deg, a.phi_d2_deg)),
        })
    }
}

impl From<HamiltonianModel> for ModelDocument {
    fn from(m: HamiltonianModel) -> Self {
        ModelDocument {
            ground: StateDocument::from(&m.ground),
            excited: StateDocument::from(&m.excited),
            c2: C2Document {
                theta_deg: m.c2.theta.to_degrees(),
                phi_deg: m.c2.phi.to_degrees(),
            },
            crystal_axes: m.crystal_axes.map(|a| AxesDocument {
                theta_d1_deg: a.theta_d1.to_degrees(),
                phi_d1_deg: a.phi_d1.to_degrees(),
                theta_d2_deg: a.theta_d2.to_degrees(),
                phi_d2_deg: a.phi_d2.to_degrees(),
            }),
        }
    }
}
