//! Stretched-exponential fits of two-pulse echo decays,
//! `I(2tau) = offset + i0 * exp(-(2tau / t2)^n)` with `n` held in [1, 2].
//!
//! `i0` and `offset` enter linearly, so for every trial `(t2, n)` they are
//! solved exactly by weighted least squares and the simplex only searches
//! the two nonlinear parameters. Intensities are normalized by their largest
//! magnitude before fitting, which makes the fit exactly scale-equivariant.

use std::path::Path;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 5;
pub const N_MIN: f64 = 1.0;
pub const N_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub two_tau_ms: f64,
    pub intensity: f64,
    pub sigma: Option<f64>,
}

/// Samples with strictly increasing positive delays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTrace {
    samples: Vec<DecaySample>,
}

impl DecayTrace {
    pub fn new(samples: Vec<DecaySample>) -> Result<Self> {
        for (k, s) in samples.iter().enumerate() {
            if !(s.two_tau_ms > 0.0) || !s.two_tau_ms.is_finite() || !s.intensity.is_finite() {
                return Err(Error::Invalid(format!("sample {k}: delay must be positive and values finite")));
            }
            if s.sigma.is_some_and(|v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Invalid(format!("sample {k}: sigma must be positive")));
            }
            if k > 0 && s.two_tau_ms <= samples[k - 1].two_tau_ms {
                return Err(Error::Invalid(format!("sample {k}: delays must be strictly increasing")));
            }
        }
        Ok(DecayTrace { samples })
    }

    pub fn from_columns(two_tau_ms: &[f64], intensity: &[f64]) -> Result<Self> {
        if two_tau_ms.len() != intensity.len() {
            return Err(Error::Invalid("column lengths differ".into()));
        }
        DecayTrace::new(
            two_tau_ms
                .iter()
                .zip(intensity)
                .map(|(&t, &i)| DecaySample {
                    two_tau_ms: t,
                    intensity: i,
                    sigma: None,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[DecaySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same delays, intensities (and sigmas) multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        DecayTrace {
            samples: self
                .samples
                .iter()
                .map(|s| DecaySample {
                    intensity: s.intensity * c,
                    sigma: s.sigma.map(|v| v * c.abs()),
                    ..*s
                })
                .collect(),
        }
    }

    /// Two- or three-column CSV `two_tau_ms,intensity[,sigma]`; a header
    /// row is optional.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(file);
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| rec.get(i).map(|s| s.parse::<f64>());
            match (num(0), num(1)) {
                (Some(Ok(t)), Some(Ok(i))) => {
                    let sigma = match num(2) {
                        None => None,
                        Some(Ok(s)) => Some(s),
                        Some(Err(_)) if rec.get(2) == Some("") => None,
                        Some(Err(_)) => return Err(Error::Invalid(format!("row {}: bad sigma", row + 1))),
                    };
                    samples.push(DecaySample {
                        two_tau_ms: t,
                        intensity: i,
                        sigma,
                    });
                }
                _ if row == 0 => continue,
                _ => return Err(Error::Invalid(format!("row {}: expected two_tau_ms,intensity[,sigma]", row + 1))),
            }
        }
        DecayTrace::new(samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoParams {
    pub i0: f64,
    pub t2_ms: f64,
    pub n: f64,
    pub offset: f64,
}

impl EchoParams {
    pub fn eval(&self, two_tau_ms: f64) -> f64 {
        model_eval(self, two_tau_ms)
    }
}

/// `offset + i0 * exp(-(two_tau / t2)^n)`.
pub fn model_eval(p: &EchoParams, two_tau_ms: f64) -> f64 {
    p.offset + p.i0 * (-(two_tau_ms / p.t2_ms).powf(p.n)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EchoErrors {
    pub i0: f64,
    pub t2_ms: f64,
    pub n: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoFit {
    pub params: EchoParams,
    pub errors: EchoErrors,
    /// Square root of the weighted residual sum of squares.
    pub residual_norm: f64,
    /// Same, for the log-linear starting guess.
    pub initial_residual_norm: f64,
    pub initial_guess: EchoParams,
    pub n_at_bound: bool,
    pub offset_fixed: bool,
    pub iterations: u64,
}

impl EchoFit {
    pub fn eval(&self, two_tau_ms: f64) -> f64 {
        model_eval(&self.params, two_tau_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoOptions {
    /// When false the offset is held at zero.
    pub fit_offset: bool,
    pub max_iterations: u64,
}

impl Default for EchoOptions {
    fn default() -> Self {
        EchoOptions {
            fit_offset: true,
            max_iterations: 4000,
        }
    }
}

/// Normalized, weighted view of a trace.
struct Problem {
    t: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    fit_offset: bool,
}

impl Problem {
    fn basis(&self, t2: f64, n: f64) -> Vec<f64> {
        self.t.iter().map(|&t| (-(t / t2).powf(n)).exp()).collect()
    }

    /// Optimal `(i0, offset)` for fixed `(t2, n)` and the resulting weighted
    /// sum of squares.
    fn linear(&self, t2: f64, n: f64) -> (f64, f64, f64) {
        let phi = self.basis(t2, n);
        let (mut sw, mut sp, mut spp, mut sy, mut spy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..self.t.len() {
            let (w, p, y) = (self.w[k], phi[k], self.y[k]);
            sw += w;
            sp += w * p;
            spp += w * p * p;
            sy += w * y;
            spy += w * p * y;
        }
        let (i0, off) = if self.fit_offset {
            let det = sw * spp - sp * sp;
            if det.abs() <= 1e-300 {
                (0.0, sy / sw)
            } else {
                ((sw * spy - sp * sy) / det, (spp * sy - sp * spy) / det)
            }
        } else if spp > 0.0 {
            (spy / spp, 0.0)
        } else {
            (0.0, 0.0)
        };
        (i0, off, self.ssr(i0, off, &phi))
    }

    fn ssr(&self, i0: f64, off: f64, phi: &[f64]) -> f64 {
        (0..self.t.len()).map(|k| self.w[k] * (self.y[k] - off - i0 * phi[k]).powi(2)).sum()
    }
}

struct Profile<'a>(&'a Problem);

impl CostFunction for Profile<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let t2 = p[0].exp();
        let n = p[1].clamp(N_MIN, N_MAX);
        let (_, _, ssr) = self.0.linear(t2, n);
        // Gently push the simplex back inside the n bounds.
        Ok(ssr * (1.0 + (p[1] - n).powi(2)))
    }
}

fn initial_guess(p: &Problem) -> Result<(f64, f64)> {
    let off0 = if p.fit_offset { p.y.iter().copied().fold(f64::INFINITY, f64::min) } else { 0.0 };
    let top = p.y.iter().map(|y| y - off0).fold(f64::NEG_INFINITY, f64::max);
    let i00 = 1.05 * top;
    let pts: Vec<(f64, f64)> = p
        .t
        .iter()
        .zip(&p.y)
        .filter_map(|(&t, &y)| {
            let r = (y - off0) / i00;
            (r > 0.0 && r < 1.0).then(|| (t.ln(), (-r.ln()).ln()))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateTrace);
    }
    let m = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|q| q.0).sum::<f64>() / m, pts.iter().map(|q| q.1).sum::<f64>() / m);
    let sxx: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 1.5 };
    let n0 = slope.clamp(N_MIN, N_MAX);
    // ln(-ln r) = n ln(2tau) - n ln(t2)
    let t2 = ((n0 * mx - my) / n0).exp();
    let t_max = p.t[p.t.len() - 1];
    Ok((t2.clamp(p.t[0] * 1e-3, t_max * 1e3), n0))
}

fn decays(y: &[f64]) -> bool {
    let third = (y.len() / 3).max(1);
    let head = y[..third].iter().sum::<f64>() / third as f64;
    let tail = y[y.len() - third..].iter().sum::<f64>() / third as f64;
    head > tail
}

fn simplex(problem: &Problem, start: [f64; 2], step: f64, max_iters: u64) -> Result<(Vec<f64>, f64, u64)> {
    let s = start.to_vec();
    let verts = vec![s.clone(), vec![s[0] + step, s[1]], vec![s[0], s[1] + step]];
    let solver = NelderMead::new(verts)
        .with_sd_tolerance(1e-15)
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let res = Executor::new(Profile(problem), solver)
        .configure(|st| st.max_iters(max_iters))
        .run()
        .map_err(|e| Error::Invalid(format!("simplex failed: {e}")))?;
    let st = res.state();
    let best = st.get_best_param().cloned().unwrap_or(s);
    Ok((best, st.get_best_cost(), st.get_iter()))
}

pub fn fit_decay(trace: &DecayTrace, init: Option<&EchoParams>) -> Result<EchoFit> {
    fit_decay_with(trace, init, &EchoOptions::default())
}

pub fn fit_decay_with(trace: &DecayTrace, init: Option<&EchoParams>, options: &EchoOptions) -> Result<EchoFit> {
    let s = trace.samples();
    if s.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: s.len(),
        });
    }
    let scale = s.iter().map(|x| x.intensity.abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::DegenerateTrace);
    }
    let problem = Problem {
        t: s.iter().map(|x| x.two_tau_ms).collect(),
        y: s.iter().map(|x| x.intensity / scale).collect(),
        w: s.iter().map(|x| x.sigma.map_or(1.0, |v| (scale / v).powi(2))).collect(),
        fit_offset: options.fit_offset,
    };
    if !decays(&problem.y) {
        return Err(Error::DegenerateTrace);
    }

    let guess = initial_guess(&problem)?;
    let (t2_0, n_0) = match init {
        Some(p) if p.t2_ms > 0.0 => (p.t2_ms, p.n.clamp(N_MIN, N_MAX)),
        _ => guess,
    };
    // Residual of the raw log-linear guess, before the linear solve.
    let off_guess = if options.fit_offset { problem.y.iter().copied().fold(f64::INFINITY, f64::min) } else { 0.0 };
    let i0_guess = 1.05 * problem.y.iter().map(|y| y - off_guess).fold(f64::NEG_INFINITY, f64::max);
    let initial_ssr = problem.ssr(i0_guess, off_guess, &problem.basis(guess.0, guess.1));

    let mut x = [t2_0.ln(), n_0];
    let mut cost = Profile(&problem).cost(&x.to_vec()).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut iterations = 0;
    let mut step = 0.2;
    // Restarting from the best vertex with a shrinking simplex guards
    // against premature collapse.
    for _ in 0..6 {
        let (best, c, it) = simplex(&problem, x, step, options.max_iterations)?;
        iterations += it;
        let improved = cost - c;
        if c <= cost {
            x = [best[0], best[1]];
            cost = c;
        }
        if improved <= 1e-14 * cost.max(1e-300) {
            break;
        }
        step *= 0.25;
    }

    let t2 = x[0].exp();
    let n = x[1].clamp(N_MIN, N_MAX);
    let (i0, offset, ssr) = problem.linear(t2, n);
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::DegenerateTrace);
    }
    let errors = standard_errors(&problem, i0, t2, n, ssr, options.fit_offset);
    Ok(EchoFit {
        params: EchoParams {
            i0: i0 * scale,
            t2_ms: t2,
            n,
            offset: offset * scale,
        },
        errors: EchoErrors {
            i0: errors.i0 * scale,
            t2_ms: errors.t2_ms,
            n: errors.n,
            offset: errors.offset * scale,
        },
        residual_norm: ssr.sqrt() * scale,
        initial_residual_norm: initial_ssr.sqrt() * scale,
        initial_guess: EchoParams {
            i0: i0_guess * scale,
            t2_ms: guess.0,
            n: guess.1,
            offset: off_guess * scale,
        },
        n_at_bound: n == N_MIN || n == N_MAX,
        offset_fixed: !options.fit_offset,
        iterations,
    })
}

/// Gauss-Newton standard errors in normalized units, scaled by the reduced
/// chi-square.
fn standard_errors(p: &Problem, i0: f64, t2: f64, n: f64, ssr: f64, fit_offset: bool) -> EchoErrors {
    let m = p.t.len();
    let cols = if fit_offset { 4 } else { 3 };
    if m <= cols {
        return EchoErrors::default();
    }
    let mut j = DMatrix::<f64>::zeros(m, cols);
    for k in 0..m {
        let x = p.t[k] / t2;
        let xn = x.powf(n);
        let phi = (-xn).exp();
        let sw = p.w[k].sqrt();
        j[(k, 0)] = sw * phi;
        j[(k, 1)] = sw * i0 * phi * n * xn / t2;
        j[(k, 2)] = -sw * i0 * phi * xn * x.ln();
        if fit_offset {
            j[(k, 3)] = sw;
        }
    }
    let s2 = ssr / (m - cols) as f64;
    let jtj = j.transpose() * j;
    let Some(inv) = jtj.try_inverse() else {
        return EchoErrors {
            i0: f64::NAN,
            t2_ms: f64::NAN,
            n: f64::NAN,
            offset: f64::NAN,
        };
    };
    let se = DVector::from_fn(cols, |i, _| (s2 * inv[(i, i)]).max(0.0).sqrt());
    EchoErrors {
        i0: se[0],
        t2_ms: se[1],
        n: se[2],
        offset: if fit_offset { se[3] } else { 0.0 },
    }
}
