//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! Reference numbers below are the published values; tolerances are pinned
//! here and nowhere else.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use spinham::cli::{tensor_table, Basis};
use spinham::echo::{fit_decay, DecayTrace, EchoParams};
use spinham::eigen::eigenvalues;
use spinham::fit::cost::match_sorted;
use spinham::fit::params::{from_vector, to_vector, N_PARAMS, PARAMS};
use spinham::fit::{anneal, canonical_ambiguity_report, CostEvaluator, CostOptions, FitConfig, InitJitter};
use spinham::model::{HamiltonianModel, MagneticField, State, StateParams, Subsite};
use spinham::spectra::{predict_peaks, synthesize_dataset, BandMask, SpiralScan};
use spinham::spin::SpinOperators;
use spinham::tensor::{euler_from_rotation, rotation_matrix, C2Orientation, EulerAngles, PrincipalValues};
use spinham::zefoz::{
    fd_curvature, fd_gradient, grid_search, level_pairs, project_t2, sensitivity, transition_frequency, GridSpec,
    FD_CURVATURE_STEP_G, FD_GRADIENT_STEP_G,
};

const PROPERTY_SEEDS: [u64; 3] = [1, 2, 3];

// 1. tensors in the (D1, D2, b) frame
const TENSOR_TOL: f64 = 0.002;
const PRINTED_Q1G: [[f64; 3]; 3] = [[-0.234, 0.471, -0.136], [0.471, -0.996, -0.455], [-0.136, -0.455, -0.099]];
const PRINTED_M1G: [[f64; 3]; 3] = [[3.232, -0.527, -0.188], [-0.527, 4.390, -0.457], [-0.188, -0.457, 2.288]];
const PRINTED_Q1E: [[f64; 3]; 3] = [[-0.278, -0.336, 0.076], [-0.336, -0.079, 0.235], [0.076, 0.235, -0.295]];
const PRINTED_M1E: [[f64; 3]; 3] = [[1.561, -0.013, 0.114], [-0.013, 1.524, 0.150], [0.114, 0.150, 1.555]];

// 2. zero-field splittings, MHz
const GROUND_SPLITTINGS: [f64; 2] = [3.78, 4.93];
const GROUND_SPLITTING_TOL: f64 = 0.05;
const EXCITED_SPLITTING: f64 = 2.29;
const EXCITED_SPLITTING_TOL: f64 = 0.08;

// 3. peak multiplicity
const FIG3_FIELD: [f64; 3] = [-40.0, -13.0, 68.0];
const FIG3_COUNTS: [usize; 3] = [8, 8, 16];

// 4. round-trip fit
const FIT_SEED: u64 = 1;
const FIT_NOISE_KHZ: f64 = 9.0;
const FIT_JITTER_DEG: f64 = 5.0;
const FIT_JITTER_REL: f64 = 0.05;
const FIT_RMS_MAX_KHZ: f64 = 12.0;
const FIT_SIGMA_MULTIPLE: f64 = 3.0;
const FIT_MAX_SECONDS: f64 = 600.0;
/// Published one-sigma uncertainties in parameter-vector order.
const TABLE1_SIGMA: [f64; N_PARAMS] = [
    0.0048, 0.042, 0.020, 0.0039, 0.0011, 0.0020, 0.00047, 0.0076, 0.057, 0.000076, 0.00034, // ground
    0.12, 0.21, 0.11, 0.000060, 0.000050, 0.000028, 0.0095, 0.0072, 0.0016, 0.000020, 0.00032, // excited
    0.092, 0.42, // C2
];

// 5. ZEFOZ
const ZEFOZ_FIELD: [f64; 3] = [255.60, 80.55, 341.05];
const ZEFOZ_RADIUS_G: f64 = 2.0;
const ZEFOZ_F_MHZ: f64 = 3.13;
const ZEFOZ_F_TOL: f64 = 0.02;
const ZEFOZ_S1_MAX: f64 = 0.5;
const ZEFOZ_S2: f64 = 19.5;
const ZEFOZ_S2_REL_TOL: f64 = 0.15;
const ZEFOZ_T2_S: f64 = 2.1;
const ZEFOZ_T2_TOL: f64 = 0.15;
const ZEFOZ_DELTA_B: f64 = 0.08;
const SITE1_S2: f64 = 60.0;
const SITE1_T2_S: f64 = 0.83;
const SITE1_T2_TOL: f64 = 0.005;
const ZEFOZ_MAX_SECONDS: f64 = 300.0;

// 6. derivative oracles
const ORACLE_FIELDS: usize = 100;
const GRADIENT_REL_TOL: f64 = 1e-6;
const CURVATURE_REL_TOL: f64 = 1e-4;
const ORACLE_MAX_SECONDS: f64 = 10.0;

// 7. echo
const ECHO_TRUTH: EchoParams = EchoParams {
    i0: 1000.0,
    t2_ms: 2.6,
    n: 1.73,
    offset: 27.0,
};
const ECHO_NOISELESS_REL_TOL: f64 = 1e-3;
const ECHO_NOISE: f64 = 0.03;
const ECHO_T2_TOL_MS: f64 = 0.1;

// 8. properties
const COMMUTATOR_TOL: f64 = 1e-12;
const INVOLUTION_TOL: f64 = 1e-12;
const SUBSITE_SPECTRUM_TOL_MHZ: f64 = 1e-9;
const COST_INVARIANCE_TOL_KHZ: f64 = 1e-3;
const MATCHING_TOL: f64 = 1e-12;
const TAYLOR_SLOPE: f64 = 3.0;
const TAYLOR_SLOPE_TOL: f64 = 0.3;

/// Sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    lines: Vec<(bool, String)>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.lines.push((ok, what.into()));
    }

    /// Informational line that does not affect the verdict.
    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn passed(&self) -> bool {
        self.lines.iter().all(|(ok, _)| *ok)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Checks); 8] = [
        ("1 tensor reconstruction", tensor_reconstruction),
        ("2 zero-field splittings", zero_field_splittings),
        ("3 peak multiplicity", peak_multiplicity),
        ("4 round-trip fit", round_trip_fit),
        ("5 ZEFOZ reproduction", zefoz_reproduction),
        ("6 derivative oracles", derivative_oracles),
        ("7 echo fit", echo_fit),
        ("8 property suites", property_suites),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let checks = run();
        let verdict = if checks.passed() { "PASS" } else { "FAIL" };
        if !checks.passed() {
            failed += 1;
        }
        println!("{verdict} criterion {name} ({:.1} s)", started.elapsed().as_secs_f64());
        for (ok, line) in &checks.lines {
            println!("    [{}] {line}", if *ok { "ok" } else { "FAILED" });
        }
        for note in &checks.notes {
            println!("    (info) {note}");
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn table1() -> HamiltonianModel {
    HamiltonianModel::site2_table1()
}

fn max_entry_error(m: &Matrix3<f64>, printed: &[[f64; 3]; 3]) -> f64 {
    (0..9).map(|k| (m[(k / 3, k % 3)] - printed[k / 3][k % 3]).abs()).fold(0.0, f64::max)
}

fn tensor_reconstruction() -> Checks {
    let mut c = Checks::default();
    let started = Instant::now();
    let table = match tensor_table(&table1(), Basis::D1D2b) {
        Ok(t) => t,
        Err(e) => {
            c.check(false, format!("tensor table: {e}"));
            return c;
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    let find = |state: State, kind: &str| {
        table
            .iter()
            .find(|t| t.state == state && t.subsite == Subsite::One && t.kind == kind)
            .expect("entry present")
            .matrix
    };
    for (label, state, kind, printed, unit) in [
        ("Q1^g", State::Ground, "Q", &PRINTED_Q1G, "MHz"),
        ("M1^g", State::Ground, "M", &PRINTED_M1G, "kHz/G"),
        ("Q1^e", State::Excited, "Q", &PRINTED_Q1E, "MHz"),
        ("M1^e", State::Excited, "M", &PRINTED_M1E, "kHz/G"),
    ] {
        let err = max_entry_error(&find(state, kind), printed);
        c.check(err <= TENSOR_TOL, format!("{label}: max entry error {err:.4} {unit} (tol {TENSOR_TOL})"));
    }
    c.check(elapsed < 1.0, format!("runtime {elapsed:.3} s < 1 s"));
    c
}

fn zero_field_splittings() -> Checks {
    let mut c = Checks::default();
    let started = Instant::now();
    let model = table1();
    for state in State::ALL {
        let e = eigenvalues(&model.hamiltonian(state, Subsite::One, MagneticField::ZERO));
        let centers = [0.5 * (e[0] + e[1]), 0.5 * (e[2] + e[3]), 0.5 * (e[4] + e[5])];
        let mut split = [centers[1] - centers[0], centers[2] - centers[1]];
        split.sort_by(f64::total_cmp);
        match state {
            State::Ground => {
                for (got, want) in split.iter().zip(GROUND_SPLITTINGS) {
                    c.check(
                        (got - want).abs() <= GROUND_SPLITTING_TOL,
                        format!("ground splitting {got:.4} MHz vs {want} +/- {GROUND_SPLITTING_TOL}"),
                    );
                }
            }
            State::Excited => {
                for got in split {
                    c.check(
                        (got - EXCITED_SPLITTING).abs() <= EXCITED_SPLITTING_TOL,
                        format!("excited splitting {got:.4} MHz vs {EXCITED_SPLITTING} +/- {EXCITED_SPLITTING_TOL}"),
                    );
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 1.0, format!("runtime {elapsed:.3} s < 1 s"));
    c
}

fn peak_multiplicity() -> Checks {
    let mut c = Checks::default();
    let started = Instant::now();
    let b = MagneticField::new(FIG3_FIELD[0], FIG3_FIELD[1], FIG3_FIELD[2]);
    match predict_peaks(&table1(), b) {
        Ok(p) => {
            let counts = p.counts();
            c.check(counts == FIG3_COUNTS, format!("counts {counts:?} at {b}, expected {FIG3_COUNTS:?}"));
        }
        Err(e) => c.check(false, format!("prediction failed: {e}")),
    }
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 1.0, format!("runtime {elapsed:.3} s < 1 s"));
    c
}

fn wrap_deg(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Euler triples (degrees) describing the same principal-axis tensor as `r`:
/// the four axis sign flips that keep the frame proper, each in both ZYZ
/// representations.
fn equivalent_triples(r: &Matrix3<f64>) -> Vec<[f64; 3]> {
    let flips = [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]];
    let mut out = Vec::with_capacity(8);
    for f in flips {
        let e = euler_from_rotation(&(r * Matrix3::from_diagonal(&Vector3::from(f)))).to_degrees();
        out.push(e);
        out.push([e[0] + 180.0, -e[1], e[2] + 180.0]);
    }
    out
}

/// Smallest worst-case normalized angle deviation over equivalent triples.
fn best_angles(r: &Matrix3<f64>, truth: &[f64], sigma: &[f64]) -> ([f64; 3], f64) {
    equivalent_triples(r)
        .into_iter()
        .map(|t| {
            let d: [f64; 3] = std::array::from_fn(|k| wrap_deg(t[k] - truth[k]));
            let worst = (0..3).map(|k| d[k].abs() / sigma[k]).fold(0.0, f64::max);
            (d, worst)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("eight candidates")
}

fn quarter() -> Matrix3<f64> {
    rotation_matrix(&EulerAngles::from_degrees(0.0, 0.0, 90.0))
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];

/// Principal frame with its axes reordered, kept proper.
fn permuted_frame(r: &Matrix3<f64>, p: [usize; 3]) -> Matrix3<f64> {
    let mut out = Matrix3::from_columns(&[r.column(p[0]), r.column(p[1]), r.column(p[2])]);
    if out.determinant() < 0.0 {
        out.set_column(2, &(-out.column(2)));
    }
    out
}

/// Deviations of one fitted state from the truth, in parameter-vector order,
/// after picking the member of its ambiguity class that lies closest.
///
/// The class is generated by the C2 image of the state, a pi rotation of the
/// spin frame about a principal axis of M (which reverses two g signs and
/// carries Q along), the overall signs of M and of Q, and the free labelling
/// of principal axes (any order for M, x/y for Q).
fn state_deviation(fit: &StateParams, c2: &C2Orientation, truth: &[f64], sigma: &[f64]) -> [f64; 11] {
    let (PrincipalValues::Zeeman { g }, PrincipalValues::Quadrupole { e, d }) = (fit.zeeman.values, fit.quad.values)
    else {
        unreachable!("state slots hold their own kinds")
    };
    let rm0 = rotation_matrix(&fit.zeeman.angles);
    let rq0 = rotation_matrix(&fit.quad.angles);
    let spin_flips = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut best = ([0.0; 11], f64::INFINITY);
    for conj in [Matrix3::identity(), c2.rotation()] {
        for flip in spin_flips {
            let s = rm0 * Matrix3::from_diagonal(&Vector3::from(flip)) * rm0.transpose();
            let gs: [f64; 3] = std::array::from_fn(|k| g[k] * flip[k]);
            for zsign in [1.0, -1.0] {
                for qsign in [1.0, -1.0] {
                    for qrel in [false, true] {
                        let rq = conj * s * rq0;
                        let (rq, ev) = if qrel { (rq * quarter(), -e) } else { (rq, e) };
                        let (aq, wq) = best_angles(&rq, &truth[6..9], &sigma[6..9]);
                        for p in PERMUTATIONS {
                            let rm = permuted_frame(&(conj * rm0), p);
                            let (am, wm) = best_angles(&rm, &truth[0..3], &sigma[0..3]);
                            let mut dev = [0.0; 11];
                            dev[0..3].copy_from_slice(&am);
                            for k in 0..3 {
                                dev[3 + k] = zsign * gs[p[k]] - truth[3 + k];
                            }
                            dev[6..9].copy_from_slice(&aq);
                            dev[9] = qsign * ev - truth[9];
                            dev[10] = qsign * d - truth[10];
                            let worst = (0..11).map(|k| dev[k].abs() / sigma[k]).fold(wm.max(wq), f64::max);
                            if worst < best.1 {
                                best = (dev, worst);
                            }
                        }
                    }
                }
            }
        }
    }
    best.0
}

fn deviation_modulo_ambiguity(fit: &HamiltonianModel, truth: &HamiltonianModel) -> [f64; N_PARAMS] {
    let t = to_vector(truth);
    let mut dev = [0.0; N_PARAMS];
    dev[0..11].copy_from_slice(&state_deviation(&fit.ground, &fit.c2, &t[0..11], &TABLE1_SIGMA[0..11]));
    dev[11..22].copy_from_slice(&state_deviation(&fit.excited, &fit.c2, &t[11..22], &TABLE1_SIGMA[11..22]));
    // The C2 axis and its antipode describe the same rotation, and (theta, phi)
    // names the same direction as (-theta, phi + 180).
    let (th, ph) = (fit.c2.theta.to_degrees(), fit.c2.phi.to_degrees());
    let worst = |v: &[f64; 2]| (v[0] / TABLE1_SIGMA[22]).abs().max((v[1] / TABLE1_SIGMA[23]).abs());
    let c2 = [(th, ph), (180.0 - th, ph + 180.0), (-th, ph + 180.0), (th - 180.0, ph)]
        .map(|(a, b)| [wrap_deg(a - t[22]), wrap_deg(b - t[23])])
        .into_iter()
        .min_by(|a, b| worst(a).total_cmp(&worst(b)))
        .expect("four candidates");
    dev[22..24].copy_from_slice(&c2);
    dev
}

fn round_trip_fit() -> Checks {
    let mut c = Checks::default();
    let truth = table1();
    let data = match synthesize_dataset(&truth, &SpiralScan::new(80.0, 201), FIT_NOISE_KHZ, FIT_SEED) {
        Ok(d) => d,
        Err(e) => {
            c.check(false, format!("synthesis failed: {e}"));
            return c;
        }
    };
    let config = FitConfig {
        seed: FIT_SEED,
        init_jitter: InitJitter {
            angle_deg: FIT_JITTER_DEG,
            relative: FIT_JITTER_REL,
        },
        ..FitConfig::default()
    };
    let started = Instant::now();
    let result = match anneal(&data, &config, &truth) {
        Ok(r) => r,
        Err(e) => {
            c.check(false, format!("anneal failed: {e}"));
            return c;
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    c.check(
        result.rms_khz <= FIT_RMS_MAX_KHZ,
        format!("rms {:.3} kHz per peak <= {FIT_RMS_MAX_KHZ} ({} unmatched)", result.rms_khz, result.unmatched),
    );
    c.check(elapsed <= FIT_MAX_SECONDS, format!("runtime {elapsed:.0} s <= {FIT_MAX_SECONDS} s"));

    let dev = deviation_modulo_ambiguity(&result.model, &truth);
    let ratios: Vec<f64> = (0..N_PARAMS).map(|k| dev[k].abs() / TABLE1_SIGMA[k]).collect();
    let outside: Vec<String> = (0..N_PARAMS)
        .filter(|&k| ratios[k] > FIT_SIGMA_MULTIPLE)
        .map(|k| format!("{} {:.1}x", PARAMS[k].name, ratios[k]))
        .collect();
    c.check(
        outside.is_empty(),
        format!(
            "{} of {N_PARAMS} parameters within {FIT_SIGMA_MULTIPLE}x published uncertainty modulo ambiguity; outside: [{}]",
            N_PARAMS - outside.len(),
            outside.join(", ")
        ),
    );
    // Information only: the same deviations against the fit's own errors.
    if let Some(cov) = &result.covariance {
        let own: Vec<String> = (0..N_PARAMS)
            .filter_map(|k| cov.std_error(PARAMS[k].name).map(|se| (k, dev[k].abs() / se)))
            .filter(|&(_, r)| r > FIT_SIGMA_MULTIPLE)
            .map(|(k, r)| format!("{} {r:.1}x", PARAMS[k].name))
            .collect();
        c.note(format!(
            "{} of {N_PARAMS} parameters within {FIT_SIGMA_MULTIPLE}x the fit's own standard errors; outside: [{}]",
            N_PARAMS - own.len(),
            own.join(", ")
        ));
    }
    c
}

fn zefoz_reproduction() -> Checks {
    let mut c = Checks::default();
    let spec = GridSpec {
        delta_b_g: ZEFOZ_DELTA_B,
        ..GridSpec::default()
    };
    let started = Instant::now();
    let cands = match grid_search(&table1(), &spec) {
        Ok(v) => v,
        Err(e) => {
            c.check(false, format!("grid search failed: {e}"));
            return c;
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    let target = Vector3::from(ZEFOZ_FIELD);
    let nearest = cands
        .iter()
        .filter(|k| k.state == State::Ground)
        .min_by(|a, b| (a.field.to_vector() - target).norm().total_cmp(&(b.field.to_vector() - target).norm()));
    match nearest {
        None => c.check(false, "no ground-state candidates"),
        Some(k) => {
            let dist = (k.field.to_vector() - target).norm();
            c.check(dist <= ZEFOZ_RADIUS_G, format!("nearest candidate {} is {dist:.3} G away", k.field));
            c.check(
                (k.f_mhz - ZEFOZ_F_MHZ).abs() <= ZEFOZ_F_TOL,
                format!("f = {:.5} MHz vs {ZEFOZ_F_MHZ} +/- {ZEFOZ_F_TOL}", k.f_mhz),
            );
            c.check(k.s1_norm <= ZEFOZ_S1_MAX, format!("|S1| = {:.2e} Hz/G <= {ZEFOZ_S1_MAX}", k.s1_norm));
            c.check(
                (k.s2_scalar - ZEFOZ_S2).abs() <= ZEFOZ_S2_REL_TOL * ZEFOZ_S2,
                format!("S2 = {:.2} Hz/G^2 vs {ZEFOZ_S2} +/- 15%", k.s2_scalar),
            );
            c.check(
                (k.projected_t2_s - ZEFOZ_T2_S).abs() <= ZEFOZ_T2_TOL,
                format!("T2 = {:.3} s vs {ZEFOZ_T2_S} +/- {ZEFOZ_T2_TOL} at dB = {ZEFOZ_DELTA_B} G", k.projected_t2_s),
            );
        }
    }
    match project_t2(0.0, SITE1_S2, ZEFOZ_DELTA_B) {
        Ok(t) => c.check(
            (t - SITE1_T2_S).abs() <= SITE1_T2_TOL,
            format!("site-1 comparison T2 = {t:.4} s for S2 = {SITE1_S2} (expected {SITE1_T2_S})"),
        ),
        Err(e) => c.check(false, format!("site-1 projection failed: {e}")),
    }
    c.check(elapsed <= ZEFOZ_MAX_SECONDS, format!("grid search {elapsed:.1} s <= {ZEFOZ_MAX_SECONDS} s"));
    c
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_field(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> MagneticField {
    MagneticField::from_vector(&(random_direction(rng) * rng.gen_range(lo..hi)))
}

fn richardson<T>(fine: T, coarse: T) -> T
where
    T: std::ops::Mul<f64, Output = T> + std::ops::Sub<Output = T>,
{
    fine * (4.0 / 3.0) - coarse * (1.0 / 3.0)
}

fn derivative_oracles() -> Checks {
    let mut c = Checks::default();
    let model = table1();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let started = Instant::now();
    let (mut worst_g, mut worst_c, mut fields, mut skipped) = (0.0f64, 0.0f64, 0, 0);
    while fields < ORACLE_FIELDS {
        let state = State::ALL[rng.gen_range(0..2)];
        let subsite = Subsite::ALL[rng.gen_range(0..2)];
        let b = random_field(&mut rng, 5.0, 600.0);
        let ham = model.spin_hamiltonian(state, subsite);
        let Ok(all) = level_pairs().into_iter().map(|p| sensitivity(&ham, p, b).map(|s| (p, s))).collect::<Result<Vec<_>, _>>()
        else {
            skipped += 1;
            continue;
        };
        for (pair, s) in all {
            // Richardson-extrapolated central differences: the O(h^2) term of the
            // plain stencil dominates near level crossings at low field.
            let g = richardson(
                fd_gradient(&ham, pair, b, FD_GRADIENT_STEP_G),
                fd_gradient(&ham, pair, b, 2.0 * FD_GRADIENT_STEP_G),
            );
            let h = richardson(
                fd_curvature(&ham, pair, b, FD_CURVATURE_STEP_G),
                fd_curvature(&ham, pair, b, 2.0 * FD_CURVATURE_STEP_G),
            );
            worst_g = worst_g.max((s.s1 - g).norm() / s.s1.norm());
            worst_c = worst_c.max((s.s2 - h).norm() / s.s2.norm());
        }
        fields += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    c.check(
        worst_g <= GRADIENT_REL_TOL,
        format!("worst gradient relative error {worst_g:.2e} over {fields} fields x 15 pairs ({skipped} degenerate draws skipped)"),
    );
    c.check(worst_c <= CURVATURE_REL_TOL, format!("worst curvature relative error {worst_c:.2e}"));
    c.check(elapsed < ORACLE_MAX_SECONDS, format!("runtime {elapsed:.2} s < {ORACLE_MAX_SECONDS} s"));
    c
}

fn echo_delays() -> Vec<f64> {
    (0..20).map(|k| 0.2 * 50f64.powf(k as f64 / 19.0)).collect()
}

fn echo_fit() -> Checks {
    let mut c = Checks::default();
    let t = echo_delays();
    let clean: Vec<f64> = t.iter().map(|&x| ECHO_TRUTH.eval(x)).collect();
    match DecayTrace::from_columns(&t, &clean).and_then(|tr| fit_decay(&tr, None)) {
        Ok(fit) => {
            let p = fit.params;
            let worst = [
                (p.i0, ECHO_TRUTH.i0),
                (p.t2_ms, ECHO_TRUTH.t2_ms),
                (p.n, ECHO_TRUTH.n),
                (p.offset, ECHO_TRUTH.offset),
            ]
            .iter()
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
            c.check(worst < ECHO_NOISELESS_REL_TOL, format!("noiseless worst relative error {worst:.2e} < 0.1%"));
        }
        Err(e) => c.check(false, format!("noiseless fit failed: {e}")),
    }
    for seed in PROPERTY_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, ECHO_NOISE).unwrap();
        let y: Vec<f64> = t.iter().map(|&x| ECHO_TRUTH.eval(x) * (1.0 + z.sample(&mut rng))).collect();
        match DecayTrace::from_columns(&t, &y).and_then(|tr| fit_decay(&tr, None)) {
            Ok(fit) => c.check(
                (fit.params.t2_ms - ECHO_TRUTH.t2_ms).abs() <= ECHO_T2_TOL_MS,
                format!("seed {seed}, 3% noise: T2 = {:.4} ms (+/- {:.4})", fit.params.t2_ms, fit.errors.t2_ms),
            ),
            Err(e) => c.check(false, format!("seed {seed}: fit failed: {e}")),
        }
    }
    c
}

fn property_suites() -> Checks {
    let mut c = Checks::default();
    for seed in PROPERTY_SEEDS {
        let results = [
            ("commutation relations", commutation(seed)),
            ("C2 involution", c2_involution(seed)),
            ("subsite spectral equivalence", subsite_equivalence(seed)),
            ("cost invariance under ambiguity", cost_invariance(seed)),
            ("sorted matching vs brute force", matching_optimality(seed)),
            ("Taylor cubic residual", taylor_scaling(seed)),
        ];
        for (name, r) in results {
            match r {
                Ok(detail) => c.check(true, format!("seed {seed}: {name}: {detail}")),
                Err(detail) => c.check(false, format!("seed {seed}: {name}: {detail}")),
            }
        }
    }
    c
}

type Property = Result<String, String>;

fn commutation(seed: u64) -> Property {
    let ops = SpinOperators::get();
    let i = Complex64::new(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let dot = |v: &Vector3<f64>| (0..3).fold(spinham::spin::CMatrix6::zeros(), |acc, k| acc + ops.component(k) * Complex64::new(v[k], 0.0));
    // Basis relations first, then random linear combinations:
    // [a.I, b.I] = i (a x b).I
    let mut vectors = vec![(Vector3::x(), Vector3::y()), (Vector3::y(), Vector3::z()), (Vector3::z(), Vector3::x())];
    for _ in 0..20 {
        vectors.push((random_direction(&mut rng), random_direction(&mut rng)));
    }
    for (a, b) in vectors {
        let (ia, ib) = (dot(&a), dot(&b));
        let lhs = ia * ib - ib * ia;
        let rhs = dot(&a.cross(&b)) * i;
        worst = worst.max((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    if worst <= COMMUTATOR_TOL {
        Ok(format!("max entry error {worst:.1e}"))
    } else {
        Err(format!("max entry error {worst:.1e} > {COMMUTATOR_TOL:.0e}"))
    }
}

fn c2_involution(seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c2 = C2Orientation::from_degrees(rng.gen_range(0.0..180.0), rng.gen_range(-180.0..180.0));
        let r = c2.rotation();
        worst = worst.max((r * r - Matrix3::identity()).amax());
        worst = worst.max((r * c2.axis() - c2.axis()).amax());
        worst = worst.max((r.determinant() - 1.0).abs());
    }
    if worst <= INVOLUTION_TOL {
        Ok(format!("max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:.1e} > {INVOLUTION_TOL:.0e}"))
    }
}

fn subsite_equivalence(seed: u64) -> Property {
    let model = table1();
    let r = model.c2.rotation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = random_field(&mut rng, 0.0, 500.0);
        for state in State::ALL {
            let two = eigenvalues(&model.hamiltonian(state, Subsite::Two, b));
            let one = eigenvalues(&model.hamiltonian(state, Subsite::One, b.rotated(&r.transpose())));
            worst = worst.max((0..6).map(|k| (two[k] - one[k]).abs()).fold(0.0, f64::max));
        }
    }
    if worst <= SUBSITE_SPECTRUM_TOL_MHZ {
        Ok(format!("max level difference {worst:.1e} MHz"))
    } else {
        Err(format!("max level difference {worst:.1e} MHz"))
    }
}

fn cost_invariance(seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // A generic nearby model: the symmetries hold everywhere, not just at
    // the published point.
    let base = table1();
    let mut x = to_vector(&base);
    for v in x.iter_mut() {
        *v *= 1.0 + rng.gen_range(-0.02..0.02);
    }
    let model = from_vector(&x, &base);
    let data = synthesize_dataset(&model, &SpiralScan::new(80.0, 41), 9.0, seed).map_err(|e| e.to_string())?;
    let eval = CostEvaluator::new(&data, BandMask::ALL, CostOptions::default()).map_err(|e| e.to_string())?;
    let reference = eval.evaluate(&model).objective_khz;
    let report = canonical_ambiguity_report(&model);
    let mut worst = 0.0f64;
    for eq in &report {
        if !eq.verified {
            return Err(format!("{} not verified ({:.1e} MHz)", eq.label, eq.max_deviation_mhz));
        }
        worst = worst.max((eval.evaluate(&eq.model).objective_khz - reference).abs());
    }
    if worst <= COST_INVARIANCE_TOL_KHZ {
        Ok(format!("{} transformations, max cost change {worst:.1e} kHz", report.len()))
    } else {
        Err(format!("max cost change {worst:.1e} kHz"))
    }
}

fn brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn rec(a: &[f64], b: &[f64], used: &mut [bool], i: usize) -> f64 {
        if i == a.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                best = best.min((a[i] - b[j]).powi(2) + rec(a, b, used, i + 1));
                used[j] = false;
            }
        }
        best
    }
    let (a, b) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    rec(a, b, &mut vec![false; b.len()], 0)
}

fn matching_optimality(seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    for _ in 0..300 {
        let n = rng.gen_range(1..=8);
        let m = if rng.gen_bool(0.5) { n } else { rng.gen_range(1..=8) };
        let obs = sorted((0..n).map(|_| rng.gen_range(2.0..5.0)).collect());
        let pred = sorted((0..m).map(|_| rng.gen_range(2.0..5.0)).collect());
        let (pairs, s) = match_sorted(&obs, &pred);
        if pairs.len() != n.min(m) {
            return Err(format!("{} pairs for sizes {n}, {m}", pairs.len()));
        }
        worst = worst.max((s - brute_force(&obs, &pred)).abs());
    }
    if worst <= MATCHING_TOL {
        Ok(format!("300 instances, max difference {worst:.1e}"))
    } else {
        Err(format!("max difference {worst:.1e}"))
    }
}

fn taylor_scaling(seed: u64) -> Property {
    let model = table1();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = [0.1, 0.2, 0.4];
    let xs = steps.map(f64::ln);
    let mx = xs.iter().sum::<f64>() / 3.0;
    let mut slopes = Vec::new();
    while slopes.len() < 20 {
        let state = State::ALL[rng.gen_range(0..2)];
        let ham = model.spin_hamiltonian(state, Subsite::ALL[rng.gen_range(0..2)]);
        let b = random_field(&mut rng, 30.0, 300.0);
        let pair = level_pairs()[rng.gen_range(0..15)];
        let Ok(s) = sensitivity(&ham, pair, b) else { continue };
        let u = random_direction(&mut rng);
        let ys: Vec<f64> = steps
            .iter()
            .map(|&d| {
                let dv = u * d;
                let f = transition_frequency(&ham, pair, MagneticField::from_vector(&(b.to_vector() + dv))) * 1e6;
                (f - s.f_mhz * 1e6 - s.s1.dot(&dv) - 0.5 * (dv.transpose() * s.s2 * dv)[0]).abs().ln()
            })
            .collect();
        let my = ys.iter().sum::<f64>() / 3.0;
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        slopes.push(slope);
    }
    let worst = slopes.iter().map(|s| (s - TAYLOR_SLOPE).abs()).fold(0.0, f64::max);
    if worst <= TAYLOR_SLOPE_TOL {
        Ok(format!("20 transitions, log-log slopes within {worst:.3} of 3"))
    } else {
        Err(format!("slope off by {worst:.3}; slopes {slopes:?}"))
    }
}
