//! Flat parameter vector view of a [`HamiltonianModel`], in the units the
//! model file uses (degrees, kHz/G, MHz).

use serde::{Deserialize, Serialize};

use crate::model::{HamiltonianModel, State, StateParams};
use crate::tensor::{C2Orientation, EulerAngles};

pub const N_PARAMS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    /// Euler angle of an M or Q tensor, degrees.
    Angle,
    /// Zeeman principal value, kHz/G.
    GFactor,
    /// E or D, MHz.
    Quadrupole,
    /// C2 axis polar/azimuth angle, degrees.
    C2Angle,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamInfo {
    pub name: &'static str,
    pub kind: ParamKind,
}

const fn p(name: &'static str, kind: ParamKind) -> ParamInfo {
    ParamInfo { name, kind }
}

use ParamKind::*;

pub const PARAMS: [ParamInfo; N_PARAMS] = [
    p("ground.alpha_m_deg", Angle),
    p("ground.beta_m_deg", Angle),
    p("ground.gamma_m_deg", Angle),
    p("ground.g1_khz_per_g", GFactor),
    p("ground.g2_khz_per_g", GFactor),
    p("ground.g3_khz_per_g", GFactor),
    p("ground.alpha_q_deg", Angle),
    p("ground.beta_q_deg", Angle),
    p("ground.gamma_q_deg", Angle),
    p("ground.e_mhz", Quadrupole),
    p("ground.d_mhz", Quadrupole),
    p("excited.alpha_m_deg", Angle),
    p("excited.beta_m_deg", Angle),
    p("excited.gamma_m_deg", Angle),
    p("excited.g1_khz_per_g", GFactor),
    p("excited.g2_khz_per_g", GFactor),
    p("excited.g3_khz_per_g", GFactor),
    p("excited.alpha_q_deg", Angle),
    p("excited.beta_q_deg", Angle),
    p("excited.gamma_q_deg", Angle),
    p("excited.e_mhz", Quadrupole),
    p("excited.d_mhz", Quadrupole),
    p("c2.theta_deg", C2Angle),
    p("c2.phi_deg", C2Angle),
];

/// Parameter indices belonging to a state (11 each).
pub fn state_indices(state: State) -> std::ops::Range<usize> {
    match state {
        State::Ground => 0..11,
        State::Excited => 11..22,
    }
}

pub const C2_INDICES: [usize; 2] = [22, 23];

fn state_to_slice(s: &StateParams, out: &mut [f64]) {
    let [am, bm, gm] = s.zeeman.angles.to_degrees();
    let [aq, bq, gq] = s.quad.angles.to_degrees();
    let g = s.g();
    let (e, d) = s.e_d();
    out.copy_from_slice(&[am, bm, gm, g[0], g[1], g[2], aq, bq, gq, e, d]);
}

fn state_from_slice(v: &[f64]) -> StateParams {
    StateParams::new(
        EulerAngles::from_degrees(v[0], v[1], v[2]),
        [v[3], v[4], v[5]],
        EulerAngles::from_degrees(v[6], v[7], v[8]),
        v[9],
        v[10],
    )
}

pub fn to_vector(model: &HamiltonianModel) -> [f64; N_PARAMS] {
    let mut v = [0.0; N_PARAMS];
    state_to_slice(&model.ground, &mut v[0..11]);
    state_to_slice(&model.excited, &mut v[11..22]);
    v[22] = model.c2.theta.to_degrees();
    v[23] = model.c2.phi.to_degrees();
    v
}

/// Rebuild a model from a parameter vector; crystal axes come from
/// `template` since they are not fitted.
pub fn from_vector(v: &[f64; N_PARAMS], template: &HamiltonianModel) -> HamiltonianModel {
    HamiltonianModel {
        ground: state_from_slice(&v[0..11]),
        excited: state_from_slice(&v[11..22]),
        c2: C2Orientation::from_degrees(v[22], v[23]),
        crystal_axes: template.crystal_axes,
    }
}

pub fn names(indices: &[usize]) -> Vec<String> {
    indices.iter().map(|&i| PARAMS[i].name.to_string()).collect()
}
