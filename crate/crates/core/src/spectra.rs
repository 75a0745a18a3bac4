//! Field scans and predicted NMR peak positions.
//!
//! At zero field the I = 5/2 quadrupole Hamiltonian has three doubly
//! degenerate levels. A field splits each doublet, so every transition
//! between adjacent doublets becomes four lines per subsite. For the ground
//! state the two adjacent-doublet transitions land in separate bands; for
//! the excited state both share one band (16 lines from two subsites).

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector6;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigensystem_unchecked, eigenvalues, EnergyLevels};
use crate::error::{Error, Result};
use crate::model::{HamiltonianModel, MagneticField, SpinHamiltonian, State, Subsite};

/// Default spiral radius, gauss.
pub const DEFAULT_B0: f64 = 80.0;
/// Default number of spiral points.
pub const DEFAULT_POINTS: usize = 201;
/// Number of azimuthal turns of the spiral (the `6 pi t` phase).
pub const SPIRAL_TURNS: f64 = 3.0;
/// Straight-line ramp steps used to follow doublets away from zero field.
pub const TRACKING_STEPS: usize = 16;

/// `(b0 sqrt(1-t^2) cos 6 pi t, b0 sqrt(1-t^2) sin 6 pi t, b0 t)`.
pub fn spiral_field(t: f64, b0: f64) -> Result<MagneticField> {
    spiral_field_turns(t, b0, SPIRAL_TURNS)
}

fn spiral_field_turns(t: f64, b0: f64, turns: f64) -> Result<MagneticField> {
    if !(-1.0..=1.0).contains(&t) || t.is_nan() {
        return Err(Error::OutOfRange(t));
    }
    let rho = (1.0 - t * t).max(0.0).sqrt();
    let phase = 2.0 * std::f64::consts::PI * turns * t;
    Ok(MagneticField::new(b0 * rho * phase.cos(), b0 * rho * phase.sin(), b0 * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralScan {
    pub b0: f64,
    pub n_points: usize,
    pub turns: f64,
}

impl Default for SpiralScan {
    fn default() -> Self {
        SpiralScan::new(DEFAULT_B0, DEFAULT_POINTS)
    }
}

impl SpiralScan {
    pub fn new(b0: f64, n_points: usize) -> Self {
        SpiralScan {
            b0,
            n_points,
            turns: SPIRAL_TURNS,
        }
    }

    /// Equidistant samples of [-1, 1]; a single point sits at t = -1.
    pub fn t_values(&self) -> Vec<f64> {
        match self.n_points {
            0 => Vec::new(),
            1 => vec![-1.0],
            n => (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn fields(&self) -> Vec<MagneticField> {
        self.t_values()
            .into_iter()
            .map(|t| spiral_field_turns(t, self.b0, self.turns).expect("t in range"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    /// Ground-state transition near 3.78 MHz.
    GroundLow,
    /// Ground-state transition near 4.93 MHz.
    GroundHigh,
    /// Both excited-state transitions near 2.29 MHz.
    Excited,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::GroundLow, Band::GroundHigh, Band::Excited];

    pub fn index(self) -> usize {
        match self {
            Band::GroundLow => 0,
            Band::GroundHigh => 1,
            Band::Excited => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::GroundLow => "ground-low",
            Band::GroundHigh => "ground-high",
            Band::Excited => "excited",
        }
    }

    pub fn state(self) -> State {
        match self {
            Band::GroundLow | Band::GroundHigh => State::Ground,
            Band::Excited => State::Excited,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Band> {
        match s.trim() {
            "ground-low" => Ok(Band::GroundLow),
            "ground-high" => Ok(Band::GroundHigh),
            "excited" => Ok(Band::Excited),
            other => Err(Error::Invalid(format!("unknown band {other:?}"))),
        }
    }
}

/// Frequency windows (MHz) used to classify unlabelled peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandWindows {
    pub ground_low: (f64, f64),
    pub ground_high: (f64, f64),
    pub excited: (f64, f64),
}

impl Default for BandWindows {
    fn default() -> Self {
        BandWindows {
            ground_low: (3.0, 4.4),
            ground_high: (4.4, 5.6),
            excited: (1.6, 3.0),
        }
    }
}

impl BandWindows {
    pub fn window(&self, band: Band) -> (f64, f64) {
        match band {
            Band::GroundLow => self.ground_low,
            Band::GroundHigh => self.ground_high,
            Band::Excited => self.excited,
        }
    }

    /// Half-open windows `[lo, hi)` must not overlap.
    pub fn validate(&self) -> Result<()> {
        let mut w: Vec<(f64, f64)> = Band::ALL.iter().map(|&b| self.window(b)).collect();
        if w.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Invalid("band window with lo >= hi".into()));
        }
        w.sort_by(|a, b| a.0.total_cmp(&b.0));
        if w.windows(2).any(|p| p[0].1 > p[1].0) {
            return Err(Error::Invalid("band windows overlap".into()));
        }
        Ok(())
    }

    pub fn classify(&self, freq_mhz: f64) -> Option<Band> {
        Band::ALL.into_iter().find(|&b| {
            let (lo, hi) = self.window(b);
            freq_mhz >= lo && freq_mhz < hi
        })
    }
}

/// Where a synthetic peak comes from. Level indices count from the lowest
/// energy at the peak's field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakOrigin {
    pub state: State,
    pub subsite: Subsite,
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq_mhz: f64,
    pub origin: Option<PeakOrigin>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeakSet {
    pub field: MagneticField,
    bands: [Vec<Peak>; 3],
}

impl PeakSet {
    pub fn new(field: MagneticField) -> Self {
        PeakSet {
            field,
            bands: Default::default(),
        }
    }

    pub fn band(&self, band: Band) -> &[Peak] {
        &self.bands[band.index()]
    }

    pub fn push(&mut self, band: Band, peak: Peak) {
        self.bands[band.index()].push(peak);
    }

    pub fn frequencies(&self, band: Band) -> Vec<f64> {
        self.band(band).iter().map(|p| p.freq_mhz).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.bands[0].len(), self.bands[1].len(), self.bands[2].len()]
    }

    pub fn total(&self) -> usize {
        self.bands.iter().map(Vec::len).sum()
    }

    /// Sort each band ascending by frequency.
    pub fn sort(&mut self) {
        for b in &mut self.bands {
            b.sort_by(|x, y| x.freq_mhz.total_cmp(&y.freq_mhz));
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Band, &Peak)> {
        Band::ALL
            .into_iter()
            .flat_map(move |b| self.bands[b.index()].iter().map(move |p| (b, p)))
    }
}

/// Level indices of the three zero-field doublets at some field, listed in
/// order of zero-field energy.
pub type DoubletMap = [[usize; 2]; 3];

fn doublet_weight(levels: &EnergyLevels, tracked: &[Vector6<Complex64>; 2], k: usize) -> f64 {
    tracked.iter().map(|v| v.dotc(&levels.vectors[k]).norm_sqr()).sum()
}

/// Diagonalize at `b` and map levels onto zero-field doublets by following
/// eigenvector overlaps along the ramp `s * b`, `s = 1/steps .. 1`.
pub fn track_doublets(ham: &SpinHamiltonian, b: MagneticField, steps: usize) -> Result<(EnergyLevels, DoubletMap)> {
    let zero = eigensystem_unchecked(&ham.quad);
    let e = &zero.energies;
    let spread = (e[5] - e[0]).abs().max(f64::MIN_POSITIVE);
    let inner = (e[1] - e[0]).max(e[3] - e[2]).max(e[5] - e[4]);
    let outer = (e[2] - e[1]).min(e[4] - e[3]);
    if !(outer > 1e3 * inner.max(1e-12 * spread)) {
        return Err(Error::DegenerateLevels(format!(
            "zero-field levels do not form three doublets (energies {e:?})"
        )));
    }

    let mut map: DoubletMap = [[0, 1], [2, 3], [4, 5]];
    let mut levels = zero;
    if b.magnitude() == 0.0 {
        return Ok((levels, map));
    }
    let steps = steps.max(1);
    for s in 1..=steps {
        let next = eigensystem_unchecked(&ham.at(b.scaled(s as f64 / steps as f64)));
        let tracked: [[Vector6<Complex64>; 2]; 3] =
            map.map(|[a, c]| [levels.vectors[a], levels.vectors[c]]);
        let mut assigned: [Vec<usize>; 3] = Default::default();
        for k in 0..6 {
            let weights: [f64; 3] = std::array::from_fn(|d| doublet_weight(&next, &tracked[d], k));
            let best = (0..3).max_by(|&x, &y| weights[x].total_cmp(&weights[y])).unwrap();
            if weights[best] <= 0.5 {
                return Err(Error::DegenerateLevels(format!(
                    "level {k} has no dominant doublet at step {s}/{steps} (weights {weights:?})"
                )));
            }
            assigned[best].push(k);
        }
        for (d, a) in assigned.iter().enumerate() {
            if a.len() != 2 {
                return Err(Error::DegenerateLevels(format!(
                    "doublet {d} tracked to {} levels at step {s}/{steps}",
                    a.len()
                )));
            }
            map[d] = [a[0], a[1]];
        }
        levels = next;
    }
    Ok((levels, map))
}

/// Which ground-state doublet pair sits in the low band: `true` when the
/// upper pair (doublets 1-2) has the smaller zero-field splitting.
fn upper_pair_is_low(ham: &SpinHamiltonian) -> bool {
    let e = eigenvalues(&ham.quad);
    (e[4] - e[2]) <= (e[2] - e[0])
}

/// Peaks at field `b`, with doublets followed from zero field.
pub fn predict_peaks(model: &HamiltonianModel, b: MagneticField) -> Result<PeakSet> {
    let mut set = PeakSet::new(b);
    for state in State::ALL {
        for subsite in Subsite::ALL {
            let ham = model.spin_hamiltonian(state, subsite);
            let (levels, map) = track_doublets(&ham, b, TRACKING_STEPS)?;
            let upper_low = upper_pair_is_low(&ham);
            for (pair, (da, db)) in [(0usize, 1usize), (1, 2)].into_iter().enumerate() {
                let band = match state {
                    State::Excited => Band::Excited,
                    State::Ground if (pair == 1) == upper_low => Band::GroundLow,
                    State::Ground => Band::GroundHigh,
                };
                for &a in &map[da] {
                    for &c in &map[db] {
                        let (lower, upper) = if levels.energies[a] <= levels.energies[c] { (a, c) } else { (c, a) };
                        set.push(
                            band,
                            Peak {
                                freq_mhz: levels.energies[upper] - levels.energies[lower],
                                origin: Some(PeakOrigin {
                                    state,
                                    subsite,
                                    lower,
                                    upper,
                                }),
                            },
                        );
                    }
                }
            }
        }
    }
    set.sort();
    Ok(set)
}

/// Which bands a prediction needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandMask(pub [bool; 3]);

impl BandMask {
    pub const ALL: BandMask = BandMask([true; 3]);
    pub const GROUND: BandMask = BandMask([true, true, false]);
    pub const EXCITED: BandMask = BandMask([false, false, true]);

    pub fn contains(self, band: Band) -> bool {
        self.0[band.index()]
    }

    fn needs(self, state: State) -> bool {
        match state {
            State::Ground => self.0[0] || self.0[1],
            State::Excited => self.0[2],
        }
    }
}

/// Fast unlabelled band prediction for the fit's inner loop.
///
/// Levels are paired into doublets by energy rank, which coincides with
/// continuation from zero field whenever the doublets do not cross on the
/// way out (true for the fields and models this crate targets; the tests
/// check it against [`predict_peaks`] along the full spiral).
#[derive(Debug, Clone)]
pub struct BandPredictor {
    hams: [[SpinHamiltonian; 2]; 2],
    upper_low: bool,
}

impl BandPredictor {
    pub fn new(model: &HamiltonianModel) -> Self {
        let hams = [State::Ground, State::Excited]
            .map(|s| [Subsite::One, Subsite::Two].map(|sub| model.spin_hamiltonian(s, sub)));
        let upper_low = upper_pair_is_low(&hams[0][0]);
        BandPredictor { hams, upper_low }
    }

    /// Fill `out` with sorted band frequencies (MHz) for the bands in `mask`.
    pub fn predict_into(&self, b: MagneticField, mask: BandMask, out: &mut [Vec<f64>; 3]) {
        for v in out.iter_mut() {
            v.clear();
        }
        for (si, state) in [State::Ground, State::Excited].into_iter().enumerate() {
            if !mask.needs(state) {
                continue;
            }
            for ham in &self.hams[si] {
                let e = eigenvalues(&ham.at(b));
                for (pair, base) in [0usize, 2].into_iter().enumerate() {
                    let band = match state {
                        State::Excited => Band::Excited,
                        State::Ground if (pair == 1) == self.upper_low => Band::GroundLow,
                        State::Ground => Band::GroundHigh,
                    };
                    if !mask.contains(band) {
                        continue;
                    }
                    let dst = &mut out[band.index()];
                    for a in base..base + 2 {
                        for c in base + 2..base + 4 {
                            dst.push(e[c] - e[a]);
                        }
                    }
                }
            }
        }
        for v in out.iter_mut() {
            v.sort_by(f64::total_cmp);
        }
    }

    pub fn predict(&self, b: MagneticField, mask: BandMask) -> [Vec<f64>; 3] {
        let mut out: [Vec<f64>; 3] = Default::default();
        self.predict_into(b, mask, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub b0: Option<f64>,
    pub n_points: usize,
    pub noise_sigma_khz: Option<f64>,
    pub seed: Option<u64>,
    pub model_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub index: usize,
    pub t: Option<f64>,
    pub peaks: PeakSet,
}

/// One peak set per field point, in scan order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FieldScanDataset {
    pub meta: ScanMetadata,
    pub points: Vec<ScanPoint>,
}

impl FieldScanDataset {
    pub fn total_peaks(&self) -> usize {
        self.points.iter().map(|p| p.peaks.total()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_peaks() == 0
    }
}

/// Predicted peaks at every spiral point plus i.i.d. Gaussian noise of
/// `noise_sigma_khz`. Point `k` draws from its own ChaCha stream
/// `(seed, k)`, so the result does not depend on evaluation order.
pub fn synthesize_dataset(
    model: &HamiltonianModel,
    scan: &SpiralScan,
    noise_sigma_khz: f64,
    seed: u64,
) -> Result<FieldScanDataset> {
    if !(noise_sigma_khz >= 0.0) {
        return Err(Error::Invalid(format!("noise sigma must be >= 0, got {noise_sigma_khz}")));
    }
    let ts = scan.t_values();
    let fields = scan.fields();
    let noise = Normal::new(0.0, noise_sigma_khz * 1e-3).expect("finite sigma");
    let points = ts
        .par_iter()
        .zip(fields.par_iter())
        .enumerate()
        .map(|(index, (&t, &b))| {
            let mut peaks = predict_peaks(model, b)?;
            if noise_sigma_khz > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                let mut noisy = PeakSet::new(b);
                for (band, p) in peaks.iter() {
                    noisy.push(
                        band,
                        Peak {
                            freq_mhz: p.freq_mhz + noise.sample(&mut rng),
                            origin: p.origin,
                        },
                    );
                }
                noisy.sort();
                peaks = noisy;
            }
            Ok(ScanPoint {
                index,
                t: Some(t),
                peaks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldScanDataset {
        meta: ScanMetadata {
            b0: Some(scan.b0),
            n_points: scan.n_points,
            noise_sigma_khz: Some(noise_sigma_khz),
            seed: Some(seed),
            model_hash: Some(model.hash()),
        },
        points,
    })
}
