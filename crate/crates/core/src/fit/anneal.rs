//! Simulated annealing over the model parameters.
//!
//! Each restart owns one ChaCha stream. Proposals perturb a single free
//! parameter with a Gaussian step; Metropolis acceptance runs on the cost
//! objective in kHz under geometric cooling. Per-parameter step widths adapt
//! after every temperature towards a 40-60% acceptance band. A share of the
//! proposals instead move all free parameters at once along the covariance
//! of the previous temperature's chain, which follows the narrow correlated
//! valleys of the misfit far faster than coordinate moves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ambiguity::ambiguity_note;
use super::cost::{CostEvaluator, CostOptions, CostReport};
use super::covariance::{covariance_with, CovarianceReport};
use super::params::{from_vector, state_indices, to_vector, ParamKind, C2_INDICES, N_PARAMS, PARAMS};
use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, State};
use crate::spectra::{BandMask, FieldScanDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalScales {
    pub angle_deg: f64,
    pub g_khz_per_g: f64,
    pub quad_mhz: f64,
    pub c2_deg: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            angle_deg: 2.0,
            g_khz_per_g: 0.05,
            quad_mhz: 0.02,
            c2_deg: 0.5,
        }
    }
}

impl ProposalScales {
    pub fn for_kind(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Angle => self.angle_deg,
            ParamKind::GFactor => self.g_khz_per_g,
            ParamKind::Quadrupole => self.quad_mhz,
            ParamKind::C2Angle => self.c2_deg,
        }
    }
}

/// Box constraints on principal values; angles are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBounds {
    pub g_abs_max_khz_per_g: f64,
    pub quad_abs_max_mhz: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            g_abs_max_khz_per_g: 20.0,
            quad_abs_max_mhz: 10.0,
        }
    }
}

impl ParamBounds {
    fn admits(&self, kind: ParamKind, v: f64) -> bool {
        match kind {
            ParamKind::GFactor => v.abs() <= self.g_abs_max_khz_per_g,
            ParamKind::Quadrupole => v.abs() <= self.quad_abs_max_mhz,
            ParamKind::Angle | ParamKind::C2Angle => v.is_finite(),
        }
    }
}

/// Random spread applied to the initial model before each restart.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitJitter {
    /// Uniform additive spread on every angle, degrees.
    pub angle_deg: f64,
    /// Uniform multiplicative spread on principal values (0.2 = +-20%).
    pub relative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Ground state and C2 on the ground bands, then the excited state on
    /// the excited band with C2 held fixed.
    #[default]
    Staged,
    /// All parameters against all bands at once.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// kHz; `None` calibrates each stage so `target_acceptance` of probe
    /// proposals would be accepted.
    pub initial_temperature_khz: Option<f64>,
    pub target_acceptance: f64,
    pub cooling: f64,
    pub steps_per_temperature: usize,
    pub scales: ProposalScales,
    pub adaptive_steps: bool,
    /// Share of proposals drawn jointly over all free parameters, shaped by
    /// the spread of the chain at the previous temperature. Zero gives
    /// purely single-parameter moves.
    pub joint_proposal_fraction: f64,
    /// After a temperature level, a chain more than this many temperatures
    /// above the best state so far is moved back to it.
    pub reset_margin: f64,
    pub min_temperature_khz: f64,
    /// Per stage and restart.
    pub max_evaluations: usize,
    /// Stop once the chain is frozen and the best objective has not moved
    /// for this many consecutive temperatures.
    pub stall_temperatures: usize,
    pub seed: u64,
    pub restarts: usize,
    pub bounds: ParamBounds,
    pub init_jitter: InitJitter,
    pub mode: FitMode,
    pub cost: CostOptions,
    /// Best rms above this marks the result as not converged.
    pub rms_ceiling_khz: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            initial_temperature_khz: None,
            target_acceptance: 0.8,
            cooling: 0.95,
            steps_per_temperature: 200,
            scales: ProposalScales::default(),
            adaptive_steps: true,
            joint_proposal_fraction: 0.5,
            reset_margin: 20.0,
            min_temperature_khz: 1e-5,
            max_evaluations: 120_000,
            stall_temperatures: 60,
            seed: 0,
            restarts: 1,
            bounds: ParamBounds::default(),
            init_jitter: InitJitter::default(),
            mode: FitMode::Staged,
            cost: CostOptions::default(),
            rms_ceiling_khz: 50.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("fit config: {m}")));
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad("cooling factor must lie in (0, 1)");
        }
        let s = self.scales;
        if ![s.angle_deg, s.g_khz_per_g, s.quad_mhz, s.c2_deg].iter().all(|&v| v > 0.0 && v.is_finite()) {
            return bad("proposal scales must be positive");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if self.initial_temperature_khz.is_some_and(|t| !(t > 0.0)) {
            return bad("initial temperature must be positive");
        }
        if self.steps_per_temperature == 0 || self.restarts == 0 || self.max_evaluations == 0 {
            return bad("steps, restarts and evaluation budget must be nonzero");
        }
        if !(self.min_temperature_khz > 0.0) {
            return bad("minimum temperature must be positive");
        }
        if self.init_jitter.angle_deg < 0.0 || !(0.0..1.0).contains(&self.init_jitter.relative) {
            return bad("init jitter must be non-negative, relative spread below 1");
        }
        if !(self.reset_margin > 0.0) {
            return bad("reset margin must be positive");
        }
        if !(0.0..=1.0).contains(&self.joint_proposal_fraction) {
            return bad("joint proposal fraction must lie in [0, 1]");
        }
        if !(self.cost.unmatched_penalty_mhz >= 0.0) {
            return bad("unmatched penalty must be non-negative");
        }
        Ok(())
    }
}

/// Summary of one temperature level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRecord {
    pub temperature_khz: f64,
    pub current_khz: f64,
    pub best_khz: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub initial_temperature_khz: f64,
    pub evaluations: usize,
    pub best_objective_khz: f64,
    pub history: Vec<TemperatureRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: HamiltonianModel,
    /// Matched-peak rms over all bands, kHz.
    pub rms_khz: f64,
    pub objective_khz: f64,
    pub matched: usize,
    pub unmatched: usize,
    pub covariance: Option<CovarianceReport>,
    /// Why `covariance` is missing, if it is.
    pub covariance_error: Option<String>,
    pub evaluations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
    pub ambiguity_note: String,
    pub initialization: String,
    pub best_restart: usize,
    pub stages: Vec<StageRecord>,
    pub config: FitConfig,
}

impl FitResult {
    /// `(name, value, standard error)` for every parameter with a covariance.
    pub fn parameter_table(&self) -> Vec<(String, f64, f64)> {
        match &self.covariance {
            Some(c) => c
                .names
                .iter()
                .zip(&c.values)
                .zip(&c.std_errors)
                .map(|((n, v), e)| (n.clone(), *v, *e))
                .collect(),
            None => Vec::new(),
        }
    }
}

struct Stage {
    name: &'static str,
    free: Vec<usize>,
    mask: BandMask,
}

fn stages(mode: FitMode) -> Vec<Stage> {
    match mode {
        FitMode::Staged => {
            let mut ground: Vec<usize> = state_indices(State::Ground).collect();
            ground.extend(C2_INDICES);
            vec![
                Stage {
                    name: "ground+c2",
                    free: ground,
                    mask: BandMask::GROUND,
                },
                Stage {
                    name: "excited",
                    free: state_indices(State::Excited).collect(),
                    mask: BandMask::EXCITED,
                },
            ]
        }
        FitMode::Joint => vec![Stage {
            name: "joint",
            free: (0..N_PARAMS).collect(),
            mask: BandMask::ALL,
        }],
    }
}

const PROBE_PROPOSALS: usize = 100;
const STEP_FLOOR: f64 = 1e-6;
/// Stall counting starts once the temperature is this small against the
/// best objective, i.e. the chain is frozen.
const STALL_TEMPERATURE_FRACTION: f64 = 1e-3;
const STEP_CEILING: f64 = 50.0;

struct Annealer<'a> {
    eval: &'a CostEvaluator,
    template: &'a HamiltonianModel,
    config: &'a FitConfig,
    free: &'a [usize],
    evaluations: usize,
}

impl Annealer<'_> {
    fn objective(&mut self, x: &[f64; N_PARAMS]) -> f64 {
        self.evaluations += 1;
        self.eval.evaluate(&from_vector(x, self.template)).objective_khz
    }

    fn propose(&self, x: &[f64; N_PARAMS], steps: &[f64], rng: &mut ChaCha8Rng) -> Option<(usize, [f64; N_PARAMS])> {
        let slot = rng.gen_range(0..self.free.len());
        let k = self.free[slot];
        let z: f64 = rng.sample(StandardNormal);
        let mut y = *x;
        y[k] += z * steps[slot];
        self.config.bounds.admits(PARAMS[k].kind, y[k]).then_some((slot, y))
    }

    fn initial_temperature(&mut self, x: &[f64; N_PARAMS], c: f64, steps: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        if let Some(t) = self.config.initial_temperature_khz {
            return t;
        }
        let mut uphill = Vec::new();
        for _ in 0..PROBE_PROPOSALS {
            if let Some((_, y)) = self.propose(x, steps, rng) {
                let d = self.objective(&y) - c;
                if d > 0.0 {
                    uphill.push(d);
                }
            }
        }
        // Accepting every downhill move and uphill ones with exp(-d/T), the
        // overall rate is f_down + f_up * mean(exp(-d/T)); solve with the
        // mean uphill step standing in for the distribution.
        let f_up = uphill.len() as f64 / PROBE_PROPOSALS as f64;
        let needed = (self.config.target_acceptance - (1.0 - f_up)) / f_up.max(1e-12);
        let mean = uphill.iter().sum::<f64>() / uphill.len().max(1) as f64;
        if uphill.is_empty() || needed <= 0.0 {
            return (mean.max(c)).max(1e-3);
        }
        let needed = needed.min(0.999);
        (-mean / needed.ln()).max(1e-9)
    }

    fn run(&mut self, start: [f64; N_PARAMS], rng: &mut ChaCha8Rng) -> ([f64; N_PARAMS], f64, f64, Vec<TemperatureRecord>) {
        let cfg = self.config;
        let d = self.free.len();
        let mut steps: Vec<f64> = self.free.iter().map(|&k| cfg.scales.for_kind(PARAMS[k].kind)).collect();
        let base = steps.clone();
        let mut x = start;
        let mut c = self.objective(&x);
        let mut best = (x, c);
        let t0 = self.initial_temperature(&x, c, &steps, rng);
        let mut t = t0;
        let mut history = Vec::new();
        let mut stall = 0usize;
        // Cholesky factor of the previous level's chain spread, and its scale.
        let mut joint: Option<DMatrix<f64>> = None;
        let mut lambda = 2.38 / (d as f64).sqrt();
        let mut chain = DMatrix::<f64>::zeros(d, cfg.steps_per_temperature);
        while t >= cfg.min_temperature_khz && self.evaluations < cfg.max_evaluations {
            let mut tried = vec![0usize; d];
            let mut taken = vec![0usize; d];
            let (mut joint_tried, mut joint_taken) = (0usize, 0usize);
            let best_before = best.1;
            for step in 0..cfg.steps_per_temperature {
                let proposal = match &joint {
                    Some(l) if rng.gen::<f64>() < cfg.joint_proposal_fraction => {
                        self.propose_joint(&x, l, lambda, rng).map(|y| (None, y))
                    }
                    _ => self.propose(&x, &steps, rng).map(|(slot, y)| (Some(slot), y)),
                };
                if let Some((slot, y)) = proposal {
                    match slot {
                        Some(i) => tried[i] += 1,
                        None => joint_tried += 1,
                    }
                    let cy = self.objective(&y);
                    if cy <= c || rng.gen::<f64>() < (-(cy - c) / t).exp() {
                        match slot {
                            Some(i) => taken[i] += 1,
                            None => joint_taken += 1,
                        }
                        x = y;
                        c = cy;
                        if c < best.1 {
                            best = (x, c);
                        }
                    }
                }
                for (i, &k) in self.free.iter().enumerate() {
                    chain[(i, step)] = x[k];
                }
            }
            let all_tried = tried.iter().sum::<usize>() + joint_tried;
            let all_taken = taken.iter().sum::<usize>() + joint_taken;
            history.push(TemperatureRecord {
                temperature_khz: t,
                current_khz: c,
                best_khz: best.1,
                acceptance: all_taken as f64 / all_tried.max(1) as f64,
            });
            if cfg.adaptive_steps {
                for i in 0..d {
                    if tried[i] > 0 {
                        steps[i] = adapt(steps[i], taken[i], tried[i]).clamp(STEP_FLOOR * base[i], STEP_CEILING * base[i]);
                    }
                }
                if joint_tried > 0 {
                    lambda = adapt(lambda, joint_taken, joint_tried).clamp(1e-3, 10.0);
                }
            }
            if cfg.joint_proposal_fraction > 0.0 {
                joint = chain_factor(&chain, &base);
            }
            // A chain this far above the best state is trapped in a worse basin.
            if c - best.1 > cfg.reset_margin * t {
                x = best.0;
                c = best.1;
            }
            if t < STALL_TEMPERATURE_FRACTION * best.1 && best_before - best.1 <= 1e-9 * best.1.max(1e-12) {
                stall += 1;
                if stall >= cfg.stall_temperatures {
                    break;
                }
            } else {
                stall = 0;
            }
            t *= cfg.cooling;
        }
        (best.0, best.1, t0, history)
    }

    fn propose_joint(&self, x: &[f64; N_PARAMS], l: &DMatrix<f64>, lambda: f64, rng: &mut ChaCha8Rng) -> Option<[f64; N_PARAMS]> {
        let d = self.free.len();
        let z = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
        let dz = l * z * lambda;
        let mut y = *x;
        for (i, &k) in self.free.iter().enumerate() {
            y[k] += dz[i];
            if !self.config.bounds.admits(PARAMS[k].kind, y[k]) {
                return None;
            }
        }
        Some(y)
    }
}

/// Scale a step towards a 40-60% acceptance rate.
fn adapt(step: f64, taken: usize, tried: usize) -> f64 {
    let ratio = taken as f64 / tried as f64;
    if ratio > 0.6 {
        step * (1.0 + 2.0 * (ratio - 0.6) / 0.4)
    } else if ratio < 0.4 {
        step / (1.0 + 2.0 * (0.4 - ratio) / 0.4)
    } else {
        step
    }
}

/// Cholesky factor of the sample covariance of a chain (one state per
/// column), regularized by a tiny multiple of the base proposal widths.
fn chain_factor(chain: &DMatrix<f64>, base: &[f64]) -> Option<DMatrix<f64>> {
    let n = chain.ncols();
    if n < 2 {
        return None;
    }
    let mean = chain.column_mean();
    let centered = chain - &mean * DVector::from_element(n, 1.0).transpose();
    let mut cov = &centered * centered.transpose() / (n - 1) as f64;
    for (i, b) in base.iter().enumerate() {
        cov[(i, i)] += (STEP_FLOOR * b).powi(2);
    }
    cov.cholesky().map(|ch| ch.l())
}

fn jitter(x: &mut [f64; N_PARAMS], j: &InitJitter, rng: &mut ChaCha8Rng) {
    if j.angle_deg == 0.0 && j.relative == 0.0 {
        return;
    }
    for (k, v) in x.iter_mut().enumerate() {
        match PARAMS[k].kind {
            ParamKind::Angle | ParamKind::C2Angle if j.angle_deg > 0.0 => {
                *v += rng.gen_range(-j.angle_deg..=j.angle_deg);
            }
            ParamKind::GFactor | ParamKind::Quadrupole if j.relative > 0.0 => {
                *v *= 1.0 + rng.gen_range(-j.relative..=j.relative);
            }
            _ => {}
        }
    }
}

struct RestartOutcome {
    x: [f64; N_PARAMS],
    report: CostReport,
    evaluations: usize,
    stages: Vec<StageRecord>,
}

fn run_restart(
    config: &FitConfig,
    init: &HamiltonianModel,
    evaluators: &[(Stage, CostEvaluator)],
    full: &CostEvaluator,
    restart: usize,
) -> RestartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let mut x = to_vector(init);
    jitter(&mut x, &config.init_jitter, &mut rng);
    let mut evaluations = 0;
    let mut records = Vec::new();
    for (stage, eval) in evaluators {
        let mut annealer = Annealer {
            eval,
            template: init,
            config,
            free: &stage.free,
            evaluations: 0,
        };
        let (bx, bc, t0, history) = annealer.run(x, &mut rng);
        x = bx;
        evaluations += annealer.evaluations;
        records.push(StageRecord {
            name: stage.name.to_string(),
            initial_temperature_khz: t0,
            evaluations: annealer.evaluations,
            best_objective_khz: bc,
            history,
        });
    }
    RestartOutcome {
        x,
        report: full.evaluate(&from_vector(&x, init)),
        evaluations,
        stages: records,
    }
}

/// Anneal `init` against `data`. A fit whose best rms stays above the
/// configured ceiling is still returned, with `converged == false`.
pub fn anneal(data: &FieldScanDataset, config: &FitConfig, init: &HamiltonianModel) -> Result<FitResult> {
    config.validate()?;
    let full = CostEvaluator::new(data, BandMask::ALL, config.cost)?;
    let evaluators: Vec<(Stage, CostEvaluator)> = stages(config.mode)
        .into_iter()
        .map(|s| CostEvaluator::new(data, s.mask, config.cost).map(|e| (s, e)))
        .collect::<Result<_>>()?;

    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(config, init, &evaluators, &full, r))
        .collect();
    let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
    let (best_restart, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.report.objective_khz.total_cmp(&b.1.report.objective_khz))
        .expect("at least one restart");

    let model = from_vector(&best.x, init);
    // Covariance rows follow parameter-vector order whatever the staging.
    let mut free: Vec<usize> = evaluators.iter().flat_map(|(s, _)| s.free.iter().copied()).collect();
    free.sort_unstable();
    free.dedup();
    let (covariance, covariance_error) =
        match covariance_with(&model, data, &free, BandMask::ALL, config.cost, &config.scales) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let mut flags = Vec::new();
    let converged = best.report.rms_khz <= config.rms_ceiling_khz;
    if !converged {
        flags.push(format!(
            "no convergence: best rms {:.3} kHz exceeds ceiling {:.3} kHz",
            best.report.rms_khz, config.rms_ceiling_khz
        ));
    }
    if best.report.unmatched > 0 {
        flags.push(format!("{} unmatched peaks at the optimum", best.report.unmatched));
    }
    let j = config.init_jitter;
    let initialization = if j.angle_deg == 0.0 && j.relative == 0.0 {
        "started from the supplied model without jitter".to_string()
    } else {
        format!(
            "supplied model jittered uniformly by +-{} deg on angles and +-{}% on principal values, per restart",
            j.angle_deg,
            j.relative * 100.0
        )
    };
    Ok(FitResult {
        ambiguity_note: ambiguity_note(&model),
        model,
        rms_khz: best.report.rms_khz,
        objective_khz: best.report.objective_khz,
        matched: best.report.matched,
        unmatched: best.report.unmatched,
        covariance,
        covariance_error,
        evaluations,
        converged,
        flags,
        initialization,
        best_restart,
        stages: best.stages,
        config: config.clone(),
    })
}
