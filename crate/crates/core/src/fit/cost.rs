//! Misfit between predicted and observed peak positions.
//!
//! Within each field point and band, observed and predicted frequencies are
//! paired one-to-one. For squared differences on a line the optimal pairing
//! never crosses, so equal-size bands pair in sorted order and unequal ones
//! reduce to a small order-preserving dynamic program.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, MagneticField};
use crate::spectra::{Band, BandMask, BandPredictor, FieldScanDataset};

pub const DEFAULT_UNMATCHED_PENALTY_MHZ: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOptions {
    pub unmatched_penalty_mhz: f64,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            unmatched_penalty_mhz: DEFAULT_UNMATCHED_PENALTY_MHZ,
        }
    }
}

/// Pairing for one band at one field point: `(observed, predicted)` indices
/// into the sorted frequency lists.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BandAssignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_observed: usize,
    pub unmatched_predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    /// Indexed like `FieldScanDataset::points`, then by `Band::index()`.
    pub points: Vec<[BandAssignment; 3]>,
}

impl Assignment {
    pub fn unmatched(&self) -> usize {
        self.points
            .iter()
            .flatten()
            .map(|b| b.unmatched_observed + b.unmatched_predicted)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostReport {
    /// Root-mean-square residual over matched peaks, kHz.
    pub rms_khz: f64,
    /// Annealing objective: like `rms_khz` but with each unmatched peak
    /// contributing the penalty squared to the numerator.
    pub objective_khz: f64,
    pub matched: usize,
    pub unmatched: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    sumsq: f64,
    matched: usize,
    unmatched: usize,
}

/// Minimum-total-squared-difference one-to-one matching of two ascending
/// lists, pairing `min(len)` elements. Returns pairs and the sum of squares.
pub fn match_sorted(observed: &[f64], predicted: &[f64]) -> (Vec<(usize, usize)>, f64) {
    let (n, m) = (observed.len(), predicted.len());
    if n == m {
        let sumsq = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
        return ((0..n).map(|i| (i, i)).collect(), sumsq);
    }
    // Short side `a` is fully matched into long side `b`, order preserved.
    let swap = n > m;
    let (a, b) = if swap { (predicted, observed) } else { (observed, predicted) };
    let (k, l) = (a.len(), b.len());
    // cost[i][j]: best for a[..i] inside b[..j]
    let mut cost = vec![vec![f64::INFINITY; l + 1]; k + 1];
    for c in cost[0].iter_mut() {
        *c = 0.0;
    }
    for i in 1..=k {
        for j in i..=l {
            let skip = cost[i][j - 1];
            let take = cost[i - 1][j - 1] + (a[i - 1] - b[j - 1]).powi(2);
            cost[i][j] = skip.min(take);
        }
    }
    let mut pairs = Vec::with_capacity(k);
    let (mut i, mut j) = (k, l);
    while i > 0 {
        let take = cost[i - 1][j - 1] + (a[i - 1] - b[j - 1]).powi(2);
        if j > i && cost[i][j - 1] <= take {
            j -= 1;
        } else {
            pairs.push(if swap { (j - 1, i - 1) } else { (i - 1, j - 1) });
            i -= 1;
            j -= 1;
        }
    }
    pairs.reverse();
    (pairs, cost[k][l])
}

/// Observed data in the layout the inner loop wants.
#[derive(Debug, Clone)]
pub struct CostEvaluator {
    fields: Vec<MagneticField>,
    observed: Vec<[Vec<f64>; 3]>,
    mask: BandMask,
    options: CostOptions,
}

impl CostEvaluator {
    pub fn new(data: &FieldScanDataset, mask: BandMask, options: CostOptions) -> Result<Self> {
        let fields = data.points.iter().map(|p| p.peaks.field).collect();
        let observed: Vec<[Vec<f64>; 3]> = data
            .points
            .iter()
            .map(|p| {
                Band::ALL.map(|b| {
                    if mask.contains(b) {
                        let mut f = p.peaks.frequencies(b);
                        f.sort_by(f64::total_cmp);
                        f
                    } else {
                        Vec::new()
                    }
                })
            })
            .collect();
        let n: usize = observed.iter().flatten().map(Vec::len).sum();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(CostEvaluator {
            fields,
            observed,
            mask,
            options,
        })
    }

    pub fn mask(&self) -> BandMask {
        self.mask
    }

    pub fn n_points(&self) -> usize {
        self.fields.len()
    }

    pub fn observed(&self, point: usize, band: Band) -> &[f64] {
        &self.observed[point][band.index()]
    }

    pub fn field(&self, point: usize) -> MagneticField {
        self.fields[point]
    }

    fn tally_point(&self, predictor: &BandPredictor, k: usize, buf: &mut [Vec<f64>; 3]) -> Tally {
        predictor.predict_into(self.fields[k], self.mask, buf);
        let mut t = Tally::default();
        for band in Band::ALL {
            if !self.mask.contains(band) {
                continue;
            }
            let obs = &self.observed[k][band.index()];
            let pred = &buf[band.index()];
            let (pairs, sumsq) = match_sorted(obs, pred);
            t.sumsq += sumsq;
            t.matched += pairs.len();
            t.unmatched += obs.len().max(pred.len()) - pairs.len();
        }
        t
    }

    fn report(&self, tallies: &[Tally]) -> CostReport {
        // Sequential reduction keeps the sum independent of thread timing.
        let mut total = Tally::default();
        for t in tallies {
            total.sumsq += t.sumsq;
            total.matched += t.matched;
            total.unmatched += t.unmatched;
        }
        let denom = total.matched.max(1) as f64;
        let pen = self.options.unmatched_penalty_mhz;
        CostReport {
            rms_khz: (total.sumsq / denom).sqrt() * 1e3,
            objective_khz: ((total.sumsq + total.unmatched as f64 * pen * pen) / denom).sqrt() * 1e3,
            matched: total.matched,
            unmatched: total.unmatched,
        }
    }

    pub fn evaluate(&self, model: &HamiltonianModel) -> CostReport {
        let predictor = BandPredictor::new(model);
        let tallies: Vec<Tally> = (0..self.fields.len())
            .into_par_iter()
            .map_init(
                <[Vec<f64>; 3]>::default,
                |buf, k| self.tally_point(&predictor, k, buf),
            )
            .collect();
        self.report(&tallies)
    }

    /// Predicted sorted band frequencies at every point.
    pub fn predictions(&self, model: &HamiltonianModel) -> Vec<[Vec<f64>; 3]> {
        let predictor = BandPredictor::new(model);
        self.fields.par_iter().map(|&b| predictor.predict(b, self.mask)).collect()
    }

    pub fn evaluate_with_assignment(&self, model: &HamiltonianModel) -> (CostReport, Assignment) {
        let predictions = self.predictions(model);
        let mut tallies = Vec::with_capacity(predictions.len());
        let mut points = Vec::with_capacity(predictions.len());
        for (k, pred) in predictions.iter().enumerate() {
            let mut t = Tally::default();
            let mut per_band: [BandAssignment; 3] = Default::default();
            for band in Band::ALL {
                if !self.mask.contains(band) {
                    continue;
                }
                let obs = &self.observed[k][band.index()];
                let p = &pred[band.index()];
                let (pairs, sumsq) = match_sorted(obs, p);
                t.sumsq += sumsq;
                t.matched += pairs.len();
                t.unmatched += obs.len().max(p.len()) - pairs.len();
                per_band[band.index()] = BandAssignment {
                    unmatched_observed: obs.len() - pairs.len(),
                    unmatched_predicted: p.len() - pairs.len(),
                    pairs,
                };
            }
            tallies.push(t);
            points.push(per_band);
        }
        (self.report(&tallies), Assignment { points })
    }
}

/// Matched-peak rms (kHz) of `model` against `data` over all bands, plus the
/// peak pairing used.
pub fn cost(model: &HamiltonianModel, data: &FieldScanDataset) -> Result<(f64, Assignment)> {
    let eval = CostEvaluator::new(data, BandMask::ALL, CostOptions::default())?;
    let (report, assignment) = eval.evaluate_with_assignment(model);
    Ok((report.rms_khz, assignment))
}
