//! Batch command-line front end.
//!
//! Every run writes its outputs plus a `manifest.json` into `--out`. Apart
//! from the manifest (which records wall-clock time) outputs depend only on
//! the inputs and the resolved configuration, so repeating a run reproduces
//! them byte for byte. Settings come from flags, then the `--config` file,
//! then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_dataset, sidecar_path, write_dataset};
use crate::echo::{fit_decay_with, DecayTrace, EchoFit, EchoOptions};
use crate::error::{Error, Result};
use crate::fit::{anneal, FitConfig, FitMode};
use crate::model::{HamiltonianModel, State, Subsite};
use crate::spectra::{synthesize_dataset, SpiralScan, DEFAULT_B0, DEFAULT_POINTS};
use crate::zefoz::{grid_search, write_candidates_csv, write_candidates_json, write_scatter_csv, GridSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Console summary line. Results live in the output files, so a closed
/// stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}
const BUNDLED_MODEL: &str = "<bundled site2_table1.json>";

#[derive(Debug, Parser)]
#[command(name = "spinham", version, about = "Spin Hamiltonian spectra, fits, ZEFOZ search and echo fits")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// RNG seed for noise synthesis and annealing.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// JSON settings file, or a manifest from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a spiral field-scan dataset from a model.
    Simulate(SimulateArgs),
    /// Fit a model to a field-scan dataset by simulated annealing.
    Fit(FitArgs),
    /// Grid search for zero first-order Zeeman fields.
    Zefoz(ZefozArgs),
    /// Fit a stretched exponential to an echo decay trace.
    #[command(name = "echo-fit")]
    EchoFit(EchoArgs),
    /// Print the M and Q tensors of both states and subsites.
    Tensors(TensorArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model JSON; the bundled site-2 model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Spiral radius, G.
    #[arg(long)]
    pub b0: Option<f64>,
    /// Field points along the spiral
    #[arg(long)]
    pub points: Option<usize>,
    /// Gaussian peak noise, kHz.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Starting model JSON; the bundled site-2 model when omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Independent annealing chains; the best one is kept
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Ground and C2 first then the excited state, or everything at once
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Exit with status 4 when the result is flagged as not converged.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Staged,
    Joint,
}

#[derive(Debug, Args)]
pub struct ZefozArgs {
    /// Model JSON; the bundled site-2 model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Half width of the search cube, G.
    #[arg(long)]
    pub half_width: Option<f64>,
    /// Grid spacing, G.
    #[arg(long)]
    pub step: Option<f64>,
    /// Restrict the search to one electronic state
    #[arg(long, value_enum)]
    pub state: Option<StateArg>,
    /// Field fluctuation amplitude for projected T2, G.
    #[arg(long)]
    pub delta_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StateArg {
    Ground,
    Excited,
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    /// CSV with columns two_tau_ms,intensity[,sigma].
    #[arg(long)]
    pub trace: PathBuf,
    /// Hold the baseline offset at zero.
    #[arg(long)]
    pub no_offset: bool,
}

#[derive(Debug, Args)]
pub struct TensorArgs {
    /// Model JSON; the bundled site-2 model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, ignore_case = true)]
    pub basis: Option<Basis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
pub enum Basis {
    /// Laboratory (coil) frame.
    #[default]
    #[value(name = "lab")]
    #[serde(rename = "lab")]
    Lab,
    /// Crystal (D1, D2, b) frame.
    #[value(name = "D1D2b")]
    #[serde(rename = "D1D2b")]
    D1D2b,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub b0_g: f64,
    pub n_points: usize,
    pub noise_khz: f64,
    pub seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            b0_g: DEFAULT_B0,
            n_points: DEFAULT_POINTS,
            noise_khz: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub anneal: FitConfig,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZefozSettings {
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EchoSettings {
    pub options: EchoOptions,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TensorSettings {
    pub basis: Basis,
}

/// Layout of a `--config` file: one optional section per subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub simulate: SimulateSettings,
    pub fit: FitSettings,
    pub zefoz: ZefozSettings,
    #[serde(rename = "echo-fit")]
    pub echo_fit: EchoSettings,
    pub tensors: TensorSettings,
}

/// Record written next to the outputs of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved settings; same shape as the subcommand's config section.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_s: f64,
}

/// Failure categories mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
    NoConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Io(_) => EXIT_IO,
            CliError::NoConvergence(_) => EXIT_NO_CONVERGENCE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::NoConvergence(m) => write!(f, "no convergence: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Io(e.to_string()),
            Error::Csv(ref c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => CliError::Io(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    if cli.common.verbose {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Info).try_init();
    }
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("spinham: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let started = Instant::now();
    let file = load_config(cli.common.config.as_deref(), subcommand_name(&cli.command))?;
    fs::create_dir_all(&cli.common.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.common.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;

    let mut manifest = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cli.common, a, file.simulate)?,
        Command::Fit(a) => pool.install(|| cmd_fit(&cli.common, a, file.fit))?,
        Command::Zefoz(a) => pool.install(|| cmd_zefoz(&cli.common, a, file.zefoz))?,
        Command::EchoFit(a) => cmd_echo_fit(&cli.common, a, file.echo_fit)?,
        Command::Tensors(a) => cmd_tensors(&cli.common, a, file.tensors)?,
    };
    manifest.duration_s = started.elapsed().as_secs_f64();
    let path = cli.common.out.join(MANIFEST_FILE);
    write_text(&path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Zefoz(_) => "zefoz",
        Command::EchoFit(_) => "echo-fit",
        Command::Tensors(_) => "tensors",
    }
}

/// Reads a config file, accepting either the sectioned layout or a manifest
/// whose `config` then becomes the section for its subcommand.
pub fn load_config(path: Option<&Path>, subcommand: &str) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| CliError::Input(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    if let Some(m) = value.as_object().filter(|m| m.contains_key("subcommand")) {
        let manifest: RunManifest = serde_json::from_value(serde_json::Value::Object(m.clone())).map_err(bad)?;
        if manifest.subcommand != subcommand {
            return Err(CliError::Input(format!(
                "{} is a manifest for `{}`, not `{subcommand}`",
                path.display(),
                manifest.subcommand
            )));
        }
        let mut sections = serde_json::Map::new();
        sections.insert(subcommand.to_string(), manifest.config);
        return serde_json::from_value(serde_json::Value::Object(sections)).map_err(bad);
    }
    serde_json::from_value(value).map_err(bad)
}

fn load_model(path: Option<&Path>) -> CliResult<(HamiltonianModel, String)> {
    match path {
        None => Ok((HamiltonianModel::site2_table1(), BUNDLED_MODEL.to_string())),
        Some(p) => Ok((HamiltonianModel::load(p)?, p.display().to_string())),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn snapshot<T: Serialize>(settings: &T) -> serde_json::Value {
    serde_json::to_value(settings).expect("settings serialize")
}

fn manifest(name: &str, config: serde_json::Value, inputs: Vec<String>, outputs: &[&Path], seed: Option<u64>) -> RunManifest {
    RunManifest {
        subcommand: name.to_string(),
        config,
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_s: 0.0,
    }
}

pub fn cmd_simulate(common: &CommonArgs, a: &SimulateArgs, mut s: SimulateSettings) -> CliResult<RunManifest> {
    s.b0_g = a.b0.unwrap_or(s.b0_g);
    s.n_points = a.points.unwrap_or(s.n_points);
    s.noise_khz = a.noise.unwrap_or(s.noise_khz);
    s.seed = common.seed.unwrap_or(s.seed);
    if s.n_points == 0 || !(s.b0_g >= 0.0) {
        return Err(CliError::Input("need at least one point and a non-negative b0".into()));
    }
    let (model, source) = load_model(a.model.as_deref())?;
    let data = synthesize_dataset(&model, &SpiralScan::new(s.b0_g, s.n_points), s.noise_khz, s.seed)?;
    let csv = common.out.join("dataset.csv");
    write_dataset(&data, &csv)?;
    say!("{} points, {} peaks -> {}", data.points.len(), data.total_peaks(), csv.display());
    Ok(manifest("simulate", snapshot(&s), vec![source], &[&csv, &sidecar_path(&csv)], Some(s.seed)))
}

pub fn cmd_fit(common: &CommonArgs, a: &FitArgs, mut s: FitSettings) -> CliResult<RunManifest> {
    if let Some(seed) = common.seed {
        s.anneal.seed = seed;
    }
    if let Some(r) = a.restarts {
        s.anneal.restarts = r;
    }
    if let Some(m) = a.mode {
        s.anneal.mode = match m {
            ModeArg::Staged => FitMode::Staged,
            ModeArg::Joint => FitMode::Joint,
        };
    }
    s.strict |= a.strict;
    let data = read_dataset(&a.data)?;
    if data.is_empty() {
        return Err(CliError::Input(format!("{}: dataset has no peaks", a.data.display())));
    }
    let (init, source) = load_model(a.init.as_deref())?;
    let result = anneal(&data, &s.anneal, &init)?;

    let result_path = common.out.join("fit_result.json");
    let model_path = common.out.join("fitted_model.json");
    let cov_path = common.out.join("covariance.csv");
    write_text(&result_path, &(serde_json::to_string_pretty(&result).expect("result serializes") + "\n"))?;
    write_text(&model_path, &(result.model.to_json_pretty() + "\n"))?;
    let mut outputs = vec![result_path.as_path(), model_path.as_path()];
    match &result.covariance {
        Some(c) => {
            write_text(&cov_path, &c.to_csv())?;
            outputs.push(&cov_path);
        }
        None => {
            if let Some(why) = &result.covariance_error {
                eprintln!("covariance unavailable: {why}");
            }
        }
    }
    say!(
        "rms {:.3} kHz per peak over {} matched peaks ({} unmatched), {} evaluations",
        result.rms_khz, result.matched, result.unmatched, result.evaluations
    );
    for f in &result.flags {
        say!("flag: {f}");
    }
    let m = manifest(
        "fit",
        snapshot(&s),
        vec![a.data.display().to_string(), source],
        &outputs,
        Some(s.anneal.seed),
    );
    if s.strict && !result.converged {
        // Outputs stay on disk for inspection; the manifest is still written.
        let path = common.out.join(MANIFEST_FILE);
        write_text(&path, &(serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"))?;
        return Err(CliError::NoConvergence(result.flags.join("; ")));
    }
    Ok(m)
}

pub fn cmd_zefoz(common: &CommonArgs, a: &ZefozArgs, mut s: ZefozSettings) -> CliResult<RunManifest> {
    let g = &mut s.grid;
    if let Some(h) = a.half_width {
        g.lower_g = [-h; 3];
        g.upper_g = [h; 3];
    }
    if let Some(step) = a.step {
        g.step_g = [step; 3];
    }
    if let Some(st) = a.state {
        g.state = match st {
            StateArg::Ground => State::Ground,
            StateArg::Excited => State::Excited,
        };
    }
    if let Some(d) = a.delta_b {
        g.delta_b_g = d;
    }
    let (model, source) = load_model(a.model.as_deref())?;
    let cands = grid_search(&model, &s.grid)?;
    let csv = common.out.join("zefoz_candidates.csv");
    let json = common.out.join("zefoz_candidates.json");
    let scatter = common.out.join("zefoz_scatter.csv");
    write_candidates_csv(&cands, &csv)?;
    write_candidates_json(&cands, &s.grid, &json)?;
    write_scatter_csv(&cands, &scatter)?;
    say!("{} candidates", cands.len());
    for c in cands.iter().take(5) {
        say!(
            "  B = ({:.2}, {:.2}, {:.2}) G  subsite {}  levels {}-{}  f {:.5} MHz  S2 {:.3} Hz/G^2  T2 {:.4} s",
            c.field.bx,
            c.field.by,
            c.field.bz,
            c.subsite.number(),
            c.level_i,
            c.level_j,
            c.f_mhz,
            c.s2_scalar,
            c.projected_t2_s
        );
    }
    Ok(manifest("zefoz", snapshot(&s), vec![source], &[&csv, &json, &scatter], common.seed))
}

pub fn cmd_echo_fit(common: &CommonArgs, a: &EchoArgs, mut s: EchoSettings) -> CliResult<RunManifest> {
    if a.no_offset {
        s.options.fit_offset = false;
    }
    let trace = DecayTrace::read_csv(&a.trace)?;
    let fit = fit_decay_with(&trace, None, &s.options)?;
    let json = common.out.join("echo_fit.json");
    let curve = common.out.join("echo_curve.csv");
    write_text(&json, &(serde_json::to_string_pretty(&fit).expect("fit serializes") + "\n"))?;
    write_text(&curve, &echo_curve_csv(&trace, &fit))?;
    let p = fit.params;
    let e = fit.errors;
    say!(
        "T2 = {:.4} +/- {:.4} ms, n = {:.4} +/- {:.4}, I0 = {:.6} +/- {:.6}, offset = {:.6} +/- {:.6}",
        p.t2_ms, e.t2_ms, p.n, e.n, p.i0, e.i0, p.offset, e.offset
    );
    Ok(manifest("echo-fit", snapshot(&s), vec![a.trace.display().to_string()], &[&json, &curve], common.seed))
}

/// Measured and fitted intensities side by side, for plotting.
fn echo_curve_csv(trace: &DecayTrace, fit: &EchoFit) -> String {
    let mut out = String::from("two_tau_ms,intensity,fit,residual\n");
    for s in trace.samples() {
        let f = fit.eval(s.two_tau_ms);
        out.push_str(&format!("{:.6},{:.6},{:.6},{:.6}\n", s.two_tau_ms, s.intensity, f, s.intensity - f));
    }
    out
}

pub fn cmd_tensors(common: &CommonArgs, a: &TensorArgs, mut s: TensorSettings) -> CliResult<RunManifest> {
    if let Some(b) = a.basis {
        s.basis = b;
    }
    let (model, source) = load_model(a.model.as_deref())?;
    let table = tensor_table(&model, s.basis)?;
    for t in &table {
        say!("{} subsite {} {} [{}], {} basis", t.state.name(), t.subsite.number(), t.kind, t.unit, t.basis);
        for r in 0..3 {
            let m = &t.matrix;
            say!("  {:>10.4} {:>10.4} {:>10.4}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
        }
    }
    let csv = common.out.join("tensors.csv");
    write_text(&csv, &tensor_csv(&table))?;
    Ok(manifest("tensors", snapshot(&s), vec![source], &[&csv], common.seed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub state: State,
    pub subsite: Subsite,
    /// `"M"` or `"Q"`.
    pub kind: &'static str,
    pub unit: &'static str,
    pub basis: &'static str,
    pub matrix: Matrix3<f64>,
}

/// M and Q for both states and subsites in the requested basis.
pub fn tensor_table(model: &HamiltonianModel, basis: Basis) -> Result<Vec<TensorEntry>> {
    let axes = match basis {
        Basis::Lab => None,
        Basis::D1D2b => Some(
            model
                .crystal_axes
                .ok_or_else(|| Error::Invalid("model has no crystal_axes; the D1D2b basis needs them".into()))?,
        ),
    };
    let mut out = Vec::with_capacity(8);
    for state in State::ALL {
        for subsite in Subsite::ALL {
            let (m, q) = model.state(state).tensors(subsite, &model.c2);
            for (kind, unit, t) in [("M", "kHz/G", m), ("Q", "MHz", q)] {
                let t = match &axes {
                    Some(ax) => ax.to_crystal_basis(&t, &model.c2),
                    None => t,
                };
                out.push(TensorEntry {
                    state,
                    subsite,
                    kind,
                    unit,
                    basis: if axes.is_some() { "D1D2b" } else { "lab" },
                    matrix: t.matrix,
                });
            }
        }
    }
    Ok(out)
}

pub fn tensor_csv(table: &[TensorEntry]) -> String {
    let mut out = String::from("state,subsite,tensor,unit,basis,row,c1,c2,c3\n");
    for t in table {
        for r in 0..3 {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                t.state.name(),
                t.subsite.number(),
                t.kind,
                t.unit,
                t.basis,
                r + 1,
                t.matrix[(r, 0)],
                t.matrix[(r, 1)],
                t.matrix[(r, 2)]
            ));
        }
    }
    out
}
