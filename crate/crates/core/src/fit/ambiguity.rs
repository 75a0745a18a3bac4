//! Parameter transformations that leave every observable peak position
//! unchanged, so a fit can only determine the model up to these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{HamiltonianModel, MagneticField, State, StateParams};
use crate::spectra::{BandMask, BandPredictor};
use crate::tensor::{euler_from_rotation, EulerAngles, PrincipalValues};

/// Largest per-peak difference accepted as "same spectrum".
pub const EQUIVALENCE_TOL_MHZ: f64 = 1e-6;
const CHECK_FIELDS: usize = 10;
const CHECK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Serialize)]
pub struct EquivalentModel {
    pub label: String,
    pub model: HamiltonianModel,
    /// Worst peak difference against the input model over the check fields.
    pub max_deviation_mhz: f64,
    pub verified: bool,
}

fn rotate_state(s: &StateParams, r: &nalgebra::Matrix3<f64>) -> StateParams {
    let mut out = *s;
    out.zeeman.angles = euler_from_rotation(&(r * s.zeeman.angles.rotation()));
    out.quad.angles = euler_from_rotation(&(r * s.quad.angles.rotation()));
    out
}

fn flip_zeeman(s: &StateParams) -> StateParams {
    let mut out = *s;
    out.zeeman.values = PrincipalValues::Zeeman { g: s.g().map(|g| -g) };
    out
}

fn flip_quad(s: &StateParams) -> StateParams {
    let mut out = *s;
    let (e, d) = s.e_d();
    out.quad.values = PrincipalValues::Quadrupole { e: -e, d: -d };
    out
}

fn quarter_turn(a: EulerAngles) -> EulerAngles {
    EulerAngles::new(a.alpha, a.beta, a.gamma + std::f64::consts::FRAC_PI_2)
}

/// Relabel the principal x and y axes of Q: gamma + 90 deg with E -> -E.
fn relabel_quad(s: &StateParams) -> StateParams {
    let mut out = *s;
    let (e, d) = s.e_d();
    out.quad.angles = quarter_turn(s.quad.angles);
    out.quad.values = PrincipalValues::Quadrupole { e: -e, d };
    out
}

/// Relabel the principal x and y axes of M: gamma + 90 deg with g1 <-> g2.
fn relabel_zeeman(s: &StateParams) -> StateParams {
    let mut out = *s;
    let [g1, g2, g3] = s.g();
    out.zeeman.angles = quarter_turn(s.zeeman.angles);
    out.zeeman.values = PrincipalValues::Zeeman { g: [g2, g1, g3] };
    out
}

/// Reverse the signs of the two M principal values other than `keep`.
///
/// Equivalent to rotating the spin frame by pi about that principal axis of
/// M, so Q is carried along by the same rotation.
fn relative_sign(s: &StateParams, keep: usize) -> StateParams {
    let mut out = *s;
    let mut d = nalgebra::Vector3::from_element(-1.0);
    d[keep] = 1.0;
    let rm = s.zeeman.angles.rotation();
    let spin_rotation = rm * nalgebra::Matrix3::from_diagonal(&d) * rm.transpose();
    out.zeeman.values = PrincipalValues::Zeeman {
        g: std::array::from_fn(|k| s.g()[k] * d[k]),
    };
    out.quad.angles = euler_from_rotation(&(spin_rotation * s.quad.angles.rotation()));
    out
}

fn with_state(model: &HamiltonianModel, state: State, f: impl Fn(&StateParams) -> StateParams) -> HamiltonianModel {
    let mut m = *model;
    *m.state_mut(state) = f(model.state(state));
    m
}

fn check_fields() -> Vec<MagneticField> {
    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED);
    (0..CHECK_FIELDS)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let mag: f64 = rng.gen_range(10.0..120.0);
            MagneticField::new(mag * r * phi.cos(), mag * r * phi.sin(), mag * z)
        })
        .collect()
}

/// Worst absolute difference between the sorted band spectra of two models
/// over `fields`; infinite if any band changes its peak count.
pub fn spectrum_deviation(a: &HamiltonianModel, b: &HamiltonianModel, fields: &[MagneticField]) -> f64 {
    let (pa, pb) = (BandPredictor::new(a), BandPredictor::new(b));
    let mut worst: f64 = 0.0;
    for &f in fields {
        let (sa, sb) = (pa.predict(f, BandMask::ALL), pb.predict(f, BandMask::ALL));
        for (x, y) in sa.iter().zip(&sb) {
            if x.len() != y.len() {
                return f64::INFINITY;
            }
            for (u, v) in x.iter().zip(y) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    worst
}

/// The model itself followed by its images under each single
/// spectrum-preserving transformation, each checked numerically.
pub fn canonical_ambiguity_report(model: &HamiltonianModel) -> Vec<EquivalentModel> {
    let r = model.c2.rotation();
    let mut candidates: Vec<(String, HamiltonianModel)> = vec![("identity".into(), *model)];
    let mut both = *model;
    both.ground = rotate_state(&model.ground, &r);
    both.excited = rotate_state(&model.excited, &r);
    candidates.push(("subsite swap (both states)".into(), both));
    candidates.push((
        "ground/excited subsite pairing swap".into(),
        with_state(model, State::Excited, |s| rotate_state(s, &r)),
    ));
    for state in State::ALL {
        let n = state.name();
        candidates.push((format!("{n} Zeeman sign flip"), with_state(model, state, flip_zeeman)));
        candidates.push((format!("{n} quadrupole sign flip"), with_state(model, state, flip_quad)));
        candidates.push((format!("{n} quadrupole x/y relabel"), with_state(model, state, relabel_quad)));
        candidates.push((format!("{n} Zeeman x/y relabel"), with_state(model, state, relabel_zeeman)));
        for keep in 0..3 {
            candidates.push((
                format!("{n} M relative signs (g{} kept)", keep + 1),
                with_state(model, state, |s| relative_sign(s, keep)),
            ));
        }
    }
    let fields = check_fields();
    candidates
        .into_iter()
        .map(|(label, m)| {
            let dev = spectrum_deviation(model, &m, &fields);
            EquivalentModel {
                label,
                model: m,
                max_deviation_mhz: dev,
                verified: dev < EQUIVALENCE_TOL_MHZ,
            }
        })
        .collect()
}

/// One-line summary of the ambiguity classes for fit reports.
pub fn ambiguity_note(model: &HamiltonianModel) -> String {
    let labels: Vec<String> = canonical_ambiguity_report(model)
        .into_iter()
        .filter(|e| e.verified && e.label != "identity")
        .map(|e| e.label)
        .collect();
    format!(
        "parameters are determined only up to compositions of: {}",
        labels.join(", ")
    )
}
