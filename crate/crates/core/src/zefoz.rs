//! Zero-first-order-Zeeman (ZEFOZ) field search.
//!
//! Field derivatives of a transition frequency come from perturbation theory
//! on the eigensystem: with `Z_k = dH/dB_k`, the gradient is the difference
//! of diagonal elements `<n|Z_k|n>` and the curvature the second-order sum
//! over intermediate levels. Near-degenerate levels make the sums blow up,
//! so below a 1 kHz gap those formulas are refused and central finite
//! differences of the eigenvalues take over.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigensystem_unchecked, eigenvalues, EnergyLevels};
use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, MagneticField, SpinHamiltonian, State, Subsite};
use crate::spin::DIM;

pub const DEGENERACY_TOL_MHZ: f64 = 1e-3;
pub const DEFAULT_DELTA_B_G: f64 = 0.08;
/// Step of the finite-difference fallback for gradients, G.
pub const FD_GRADIENT_STEP_G: f64 = 0.01;
/// Step of the finite-difference fallback for curvatures, G.
pub const FD_CURVATURE_STEP_G: f64 = 0.05;
const MHZ_TO_HZ: f64 = 1e6;

/// Ordered level pair `(lower, upper)` in ascending-energy indexing.
pub type LevelPair = (usize, usize);

/// All 15 level pairs of a six-level system.
pub fn level_pairs() -> Vec<LevelPair> {
    (0..DIM).flat_map(|i| (i + 1..DIM).map(move |j| (i, j))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMethod {
    Perturbation,
    FiniteDifference,
}

/// Frequency and field derivatives of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub f_mhz: f64,
    /// Hz/G
    pub s1: Vector3<f64>,
    /// Hz/G^2, symmetric
    pub s2: Matrix3<f64>,
    pub method: DerivativeMethod,
}

fn check_pair(pair: LevelPair) -> Result<()> {
    if pair.0 >= pair.1 || pair.1 >= DIM {
        return Err(Error::Invalid(format!("level pair {pair:?} must satisfy lower < upper < {DIM}")));
    }
    Ok(())
}

fn guard(lv: &EnergyLevels, pair: LevelPair, all_intermediate: bool) -> Result<()> {
    let mut gap = f64::INFINITY;
    for n in [pair.0, pair.1] {
        for m in 0..DIM {
            let neighbour = m + 1 == n || n + 1 == m;
            if m != n && (all_intermediate || neighbour) {
                gap = gap.min((lv.energies[n] - lv.energies[m]).abs());
            }
        }
    }
    if gap < DEGENERACY_TOL_MHZ {
        return Err(Error::Degeneracy {
            lower: pair.0,
            upper: pair.1,
            gap_khz: gap * 1e3,
            tolerance_khz: DEGENERACY_TOL_MHZ * 1e3,
        });
    }
    Ok(())
}

fn level_gradient(ham: &SpinHamiltonian, lv: &EnergyLevels, n: usize) -> Vector3<f64> {
    Vector3::from_fn(|k, _| lv.matrix_element(&ham.zeeman[k], n, n).re)
}

fn level_curvature(ham: &SpinHamiltonian, lv: &EnergyLevels, n: usize) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for m in 0..DIM {
        if m == n {
            continue;
        }
        let z: [_; 3] = std::array::from_fn(|k| lv.matrix_element(&ham.zeeman[k], n, m));
        let denom = lv.energies[n] - lv.energies[m];
        for k in 0..3 {
            for l in 0..3 {
                out[(k, l)] += 2.0 * (z[k] * z[l].conj()).re / denom;
            }
        }
    }
    (out + out.transpose()) * 0.5
}

/// Perturbation-theory frequency, gradient and curvature; refuses when any
/// level gap touching the pair is under the degeneracy tolerance.
pub fn sensitivity(ham: &SpinHamiltonian, pair: LevelPair, b: MagneticField) -> Result<Sensitivity> {
    check_pair(pair)?;
    let lv = eigensystem_unchecked(&ham.at(b));
    guard(&lv, pair, true)?;
    let (i, j) = pair;
    Ok(Sensitivity {
        f_mhz: lv.energies[j] - lv.energies[i],
        s1: (level_gradient(ham, &lv, j) - level_gradient(ham, &lv, i)) * MHZ_TO_HZ,
        s2: (level_curvature(ham, &lv, j) - level_curvature(ham, &lv, i)) * MHZ_TO_HZ,
        method: DerivativeMethod::Perturbation,
    })
}

/// As [`sensitivity`], falling back to finite differences (with a warning)
/// near degeneracies.
pub fn sensitivity_or_fd(ham: &SpinHamiltonian, pair: LevelPair, b: MagneticField) -> Result<Sensitivity> {
    match sensitivity(ham, pair, b) {
        Err(e @ Error::Degeneracy { .. }) => {
            warn!("{e} at {b}; using finite differences");
            Ok(Sensitivity {
                f_mhz: transition_frequency(ham, pair, b),
                s1: fd_gradient(ham, pair, b, FD_GRADIENT_STEP_G),
                s2: fd_curvature(ham, pair, b, FD_CURVATURE_STEP_G),
                method: DerivativeMethod::FiniteDifference,
            })
        }
        other => other,
    }
}

pub fn transition_frequency(ham: &SpinHamiltonian, pair: LevelPair, b: MagneticField) -> f64 {
    let e = eigenvalues(&ham.at(b));
    e[pair.1] - e[pair.0]
}

fn shifted(b: MagneticField, d: Vector3<f64>) -> MagneticField {
    MagneticField::from_vector(&(b.to_vector() + d))
}

/// Central-difference gradient of the transition frequency, Hz/G.
pub fn fd_gradient(ham: &SpinHamiltonian, pair: LevelPair, b: MagneticField, h: f64) -> Vector3<f64> {
    Vector3::from_fn(|k, _| {
        let d = Vector3::ith(k, h);
        let (fp, fm) = (transition_frequency(ham, pair, shifted(b, d)), transition_frequency(ham, pair, shifted(b, -d)));
        (fp - fm) / (2.0 * h) * MHZ_TO_HZ
    })
}

/// Second-order central-difference Hessian of the transition frequency,
/// Hz/G^2.
pub fn fd_curvature(ham: &SpinHamiltonian, pair: LevelPair, b: MagneticField, h: f64) -> Matrix3<f64> {
    let f = |d: Vector3<f64>| transition_frequency(ham, pair, shifted(b, d));
    let f0 = f(Vector3::zeros());
    let mut out = Matrix3::zeros();
    for k in 0..3 {
        let ek = Vector3::ith(k, h);
        out[(k, k)] = (f(ek) - 2.0 * f0 + f(-ek)) / (h * h);
        for l in 0..k {
            let el = Vector3::ith(l, h);
            let v = (f(ek + el) - f(ek - el) - f(-ek + el) + f(-ek - el)) / (4.0 * h * h);
            out[(k, l)] = v;
            out[(l, k)] = v;
        }
    }
    out * MHZ_TO_HZ
}

/// Hellmann-Feynman gradient `d f / d B` of the `pair` transition, Hz/G.
pub fn zeeman_gradient(
    model: &HamiltonianModel,
    state: State,
    subsite: Subsite,
    pair: LevelPair,
    b: MagneticField,
) -> Result<Vector3<f64>> {
    check_pair(pair)?;
    let ham = model.spin_hamiltonian(state, subsite);
    let lv = eigensystem_unchecked(&ham.at(b));
    guard(&lv, pair, false)?;
    Ok((level_gradient(&ham, &lv, pair.1) - level_gradient(&ham, &lv, pair.0)) * MHZ_TO_HZ)
}

/// Second-order perturbative curvature `d2 f / dB dB` of the `pair`
/// transition, Hz/G^2.
pub fn zeeman_curvature(
    model: &HamiltonianModel,
    state: State,
    subsite: Subsite,
    pair: LevelPair,
    b: MagneticField,
) -> Result<Matrix3<f64>> {
    sensitivity(&model.spin_hamiltonian(state, subsite), pair, b).map(|s| s.s2)
}

/// Worst-case scalar curvature: largest absolute eigenvalue.
pub fn s2_scalar(s2: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*s2).eigenvalues.amax()
}

/// Coherence time (s) limited by field fluctuations `delta_b` (G) through a
/// residual gradient `s1` (Hz/G) and curvature `s2` (Hz/G^2). Infinite when
/// both terms vanish.
pub fn project_t2(s1_norm: f64, s2_scalar: f64, delta_b: f64) -> Result<f64> {
    for v in [s1_norm, s2_scalar, delta_b] {
        if !(v >= 0.0) || v.is_infinite() {
            return Err(Error::Invalid(format!("project_t2 needs finite non-negative inputs, got {v}")));
        }
    }
    let denom = std::f64::consts::PI * (s1_norm * delta_b + s2_scalar * delta_b * delta_b);
    Ok(if denom > 0.0 { 1.0 / denom } else { f64::INFINITY })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lower_g: [f64; 3],
    pub upper_g: [f64; 3],
    pub step_g: [f64; 3],
    pub state: State,
    /// Newton stops once |s1| drops below this, Hz/G.
    pub gradient_threshold_hz_per_g: f64,
    pub max_iterations: usize,
    /// Longest single Newton step, G.
    pub max_step_g: f64,
    pub dedup_radius_g: f64,
    pub delta_b_g: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lower_g: [-600.0; 3],
            upper_g: [600.0; 3],
            step_g: [25.0; 3],
            state: State::Ground,
            gradient_threshold_hz_per_g: 1e-3,
            max_iterations: 50,
            max_step_g: 100.0,
            dedup_radius_g: 2.0,
            delta_b_g: DEFAULT_DELTA_B_G,
        }
    }
}

impl GridSpec {
    pub fn cube(half_width_g: f64, step_g: f64) -> Self {
        GridSpec {
            lower_g: [-half_width_g; 3],
            upper_g: [half_width_g; 3],
            step_g: [step_g; 3],
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.step_g[k] > 0.0) || !self.lower_g[k].is_finite() || !self.upper_g[k].is_finite() {
                return Err(Error::Invalid("grid steps must be positive and bounds finite".into()));
            }
            if self.upper_g[k] < self.lower_g[k] {
                return Err(Error::Invalid("grid upper bound below lower bound".into()));
            }
        }
        if !(self.gradient_threshold_hz_per_g > 0.0) || !(self.max_step_g > 0.0) || self.max_iterations == 0 {
            return Err(Error::Invalid("Newton threshold, step cap and iteration cap must be positive".into()));
        }
        if !(self.delta_b_g >= 0.0) || !(self.dedup_radius_g >= 0.0) {
            return Err(Error::Invalid("delta B and dedup radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn nodes_per_axis(&self) -> [usize; 3] {
        std::array::from_fn(|k| ((self.upper_g[k] - self.lower_g[k]) / self.step_g[k] + 1e-9).floor() as usize + 1)
    }

    fn node(&self, idx: [usize; 3]) -> MagneticField {
        let c: [f64; 3] = std::array::from_fn(|k| self.lower_g[k] + idx[k] as f64 * self.step_g[k]);
        MagneticField::new(c[0], c[1], c[2])
    }

    /// Newton iterates leaving the grid by more than one step are abandoned.
    fn contains(&self, b: &Vector3<f64>) -> bool {
        (0..3).all(|k| b[k] >= self.lower_g[k] - self.step_g[k] && b[k] <= self.upper_g[k] + self.step_g[k])
    }
}

/// Newton's method on a gradient field: `b <- b - s2^-1 s1` with the step
/// length capped, until `|s1|` is under the threshold. Returns the zero and
/// the number of steps taken.
pub fn newton_iterate<F>(mut derivatives: F, start: Vector3<f64>, spec: &GridSpec) -> Result<(Vector3<f64>, usize)>
where
    F: FnMut(Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)>,
{
    let mut b = start;
    for it in 0..=spec.max_iterations {
        let (s1, s2) = derivatives(b)?;
        if s1.norm() < spec.gradient_threshold_hz_per_g {
            return Ok((b, it));
        }
        if it == spec.max_iterations {
            break;
        }
        let eig = SymmetricEigen::new(s2);
        let big = eig.eigenvalues.amax();
        let small = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(small > 1e-12 * big) {
            return Err(Error::SingularCurvature(small));
        }
        let inv = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
        let mut step = -(inv * s1);
        if step.norm() > spec.max_step_g {
            step *= spec.max_step_g / step.norm();
        }
        b += step;
        if !spec.contains(&b) {
            return Err(Error::NoZero(format!("iterate left the search box at ({:.2}, {:.2}, {:.2}) G", b.x, b.y, b.z)));
        }
    }
    Err(Error::NoZero(format!("no convergence within {} iterations", spec.max_iterations)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZefozCandidate {
    pub field: MagneticField,
    pub state: State,
    pub subsite: Subsite,
    pub level_i: usize,
    pub level_j: usize,
    pub f_mhz: f64,
    pub s1_hz_per_g: [f64; 3],
    pub s2_hz_per_g2: [[f64; 3]; 3],
    pub s1_norm: f64,
    pub s2_scalar: f64,
    pub projected_t2_s: f64,
    pub iterations: usize,
    pub method: DerivativeMethod,
}

impl ZefozCandidate {
    fn new(state: State, subsite: Subsite, pair: LevelPair, b: Vector3<f64>, s: Sensitivity, iterations: usize, delta_b: f64) -> Result<Self> {
        let s1_norm = s.s1.norm();
        let s2s = s2_scalar(&s.s2);
        Ok(ZefozCandidate {
            field: MagneticField::from_vector(&b),
            state,
            subsite,
            level_i: pair.0,
            level_j: pair.1,
            f_mhz: s.f_mhz,
            s1_hz_per_g: [s.s1.x, s.s1.y, s.s1.z],
            s2_hz_per_g2: std::array::from_fn(|r| std::array::from_fn(|c| s.s2[(r, c)])),
            s1_norm,
            s2_scalar: s2s,
            projected_t2_s: project_t2(s1_norm, s2s, delta_b)?,
            iterations,
            method: s.method,
        })
    }

    pub fn s2(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.s2_hz_per_g2[r][c])
    }

    pub fn pair(&self) -> LevelPair {
        (self.level_i, self.level_j)
    }
}

/// Refine a ZEFOZ point of one transition starting near `start`.
pub fn newton_refine(
    model: &HamiltonianModel,
    state: State,
    subsite: Subsite,
    pair: LevelPair,
    start: MagneticField,
    spec: &GridSpec,
) -> Result<ZefozCandidate> {
    check_pair(pair)?;
    let ham = model.spin_hamiltonian(state, subsite);
    refine_with(&ham, state, subsite, pair, start.to_vector(), spec)
}

fn refine_with(
    ham: &SpinHamiltonian,
    state: State,
    subsite: Subsite,
    pair: LevelPair,
    start: Vector3<f64>,
    spec: &GridSpec,
) -> Result<ZefozCandidate> {
    let derivs = |b: Vector3<f64>| sensitivity_or_fd(ham, pair, MagneticField::from_vector(&b)).map(|s| (s.s1, s.s2));
    let (b, iterations) = newton_iterate(derivs, start, spec)?;
    let s = sensitivity_or_fd(ham, pair, MagneticField::from_vector(&b))?;
    ZefozCandidate::new(state, subsite, pair, b, s, iterations, spec.delta_b_g)
}

/// |s1| (Hz/G) of every level pair at one field; infinite where the
/// neighbouring levels are degenerate.
fn gradient_norms(ham: &SpinHamiltonian, b: MagneticField, pairs: &[LevelPair]) -> Vec<f64> {
    let lv = eigensystem_unchecked(&ham.at(b));
    let grads: [Vector3<f64>; DIM] = std::array::from_fn(|n| level_gradient(ham, &lv, n));
    pairs
        .iter()
        .map(|&p| match guard(&lv, p, false) {
            Ok(()) => (grads[p.1] - grads[p.0]).norm() * MHZ_TO_HZ,
            Err(_) => f64::INFINITY,
        })
        .collect()
}

/// Grid nodes (flat index) at which `values` is finite and no larger than at
/// any of the up-to-26 neighbours.
fn local_minima(values: &[f64], dims: [usize; 3]) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let flat = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;
    let mut out = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let v = values[flat(x, y, z)];
                if !v.is_finite() {
                    continue;
                }
                let mut is_min = true;
                'scan: for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dz in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                                continue;
                            }
                            if values[flat(a as usize, b as usize, c as usize)] < v {
                                is_min = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_min {
                    out.push(flat(x, y, z));
                }
            }
        }
    }
    out
}

/// Search the grid for ZEFOZ points of every transition of `spec.state` in
/// both subsites, ranked by projected T2 (longest first).
pub fn grid_search(model: &HamiltonianModel, spec: &GridSpec) -> Result<Vec<ZefozCandidate>> {
    spec.validate()?;
    let dims = spec.nodes_per_axis();
    if dims.iter().all(|&n| n < 2) {
        return Ok(Vec::new());
    }
    let total = dims[0] * dims[1] * dims[2];
    let unflat = |i: usize| [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]];
    let pairs = level_pairs();

    let mut seeds: Vec<(Subsite, LevelPair, usize)> = Vec::new();
    let hams: Vec<(Subsite, SpinHamiltonian)> =
        Subsite::ALL.iter().map(|&s| (s, model.spin_hamiltonian(spec.state, s))).collect();
    for (subsite, ham) in &hams {
        let norms: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .map(|i| gradient_norms(ham, spec.node(unflat(i)), &pairs))
            .collect();
        for (p, &pair) in pairs.iter().enumerate() {
            let column: Vec<f64> = norms.iter().map(|row| row[p]).collect();
            seeds.extend(local_minima(&column, dims).into_iter().map(|i| (*subsite, pair, i)));
        }
    }

    let refined: Vec<ZefozCandidate> = seeds
        .par_iter()
        .filter_map(|&(subsite, pair, i)| {
            let ham = &hams[subsite.number() as usize - 1].1;
            refine_with(ham, spec.state, subsite, pair, spec.node(unflat(i)).to_vector(), spec).ok()
        })
        .filter(|c| (0..3).all(|k| {
            let v = c.field.to_vector()[k];
            v >= spec.lower_g[k] && v <= spec.upper_g[k]
        }))
        .collect();
    Ok(rank(dedup(refined, spec.dedup_radius_g)))
}

fn dedup(mut cands: Vec<ZefozCandidate>, radius: f64) -> Vec<ZefozCandidate> {
    cands.sort_by(|a, b| {
        (a.subsite.number(), a.level_i, a.level_j)
            .cmp(&(b.subsite.number(), b.level_i, b.level_j))
            .then(a.s1_norm.total_cmp(&b.s1_norm))
            .then(a.field.bx.total_cmp(&b.field.bx))
            .then(a.field.by.total_cmp(&b.field.by))
            .then(a.field.bz.total_cmp(&b.field.bz))
    });
    let mut kept: Vec<ZefozCandidate> = Vec::new();
    for c in cands {
        let dup = kept.iter().any(|k| {
            k.subsite == c.subsite
                && k.pair() == c.pair()
                && (k.field.to_vector() - c.field.to_vector()).norm() <= radius
        });
        if !dup {
            kept.push(c);
        }
    }
    kept
}

fn rank(mut cands: Vec<ZefozCandidate>) -> Vec<ZefozCandidate> {
    cands.sort_by(|a, b| {
        b.projected_t2_s
            .total_cmp(&a.projected_t2_s)
            .then(a.field.magnitude().total_cmp(&b.field.magnitude()))
            .then(a.subsite.number().cmp(&b.subsite.number()))
    });
    cands
}

pub const CANDIDATE_COLUMNS: [&str; 11] = [
    "bx", "by", "bz", "state", "subsite", "level_i", "level_j", "f_mhz", "s1_hz_per_g", "s2_hz_per_g2", "t2_s",
];

pub fn write_candidates_csv(cands: &[ZefozCandidate], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CANDIDATE_COLUMNS)?;
    for c in cands {
        w.write_record([
            format!("{:.4}", c.field.bx),
            format!("{:.4}", c.field.by),
            format!("{:.4}", c.field.bz),
            c.state.name().to_string(),
            c.subsite.number().to_string(),
            c.level_i.to_string(),
            c.level_j.to_string(),
            format!("{:.6}", c.f_mhz),
            format!("{:.6}", c.s1_norm),
            format!("{:.6}", c.s2_scalar),
            format!("{:.6}", c.projected_t2_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_candidates_json(cands: &[ZefozCandidate], spec: &GridSpec, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Report<'a> {
        grid: &'a GridSpec,
        candidates: &'a [ZefozCandidate],
    }
    let text = serde_json::to_string_pretty(&Report { grid: spec, candidates: cands })?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| Error::io(path, e))
}

/// Plot-ready |B| against scalar curvature, one row per candidate.
pub fn write_scatter_csv(cands: &[ZefozCandidate], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["b_magnitude_g", "s2_hz_per_g2", "f_mhz", "subsite", "t2_s"])?;
    for c in cands {
        w.write_record([
            format!("{:.4}", c.field.magnitude()),
            format!("{:.6}", c.s2_scalar),
            format!("{:.6}", c.f_mhz),
            c.subsite.number().to_string(),
            format!("{:.6}", c.projected_t2_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
