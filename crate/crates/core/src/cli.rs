//! Command-line front end: configuration handling and the five commands.
//!
//! Every command reads one JSON [`RunConfig`], materializes all defaults into
//! `resolved_config.json` next to its outputs, and writes CSV files whose
//! numbers use the shortest decimal form that round-trips to the same `f64`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{fundamental_soliton, two_soliton, SolitonParams};
use crate::error::Error;
use crate::fluctuations::{
    backward_adjoint, forward_linearized, mc_estimate_variance, pairing,
    DoubledVector, MIN_MC_SAMPLES,
};
use crate::grid::{ComplexEnvelope, TimeGrid};
use crate::measurements::{
    correlation_matrix, local_oscillator, squeezing_ratio, z_steps, CorrelationSpectrum, CurvePlan,
    HomodyneResult, SlotLayout,
};
use crate::propagator::{pde_residual, relative_l2, ssfm_propagate_with, PropagateOptions, StepPlan, Storage};

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "BREATHER_SQUEEZE_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolitonKind {
    /// Fundamental soliton of amplitude `amplitude`.
    N1,
    /// Two-soliton bound state with poles `eta1`, `eta2`.
    N2,
}

/// Complete description of a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub soliton: SolitonKind,
    pub eta1: f64,
    pub eta2: f64,
    pub amplitude: f64,
    pub n: usize,
    pub t_max: f64,
    pub dz: f64,
    pub z_max: f64,
    /// Spacing of the default distance list `0, z_step, ..., z_max`.
    pub z_step: f64,
    /// Explicit distances; overrides `z_max`/`z_step` when present.
    pub z_list: Option<Vec<f64>>,
    /// Distances for `spectrum`; defaults to `[z_max]`.
    pub spectrum_z: Option<Vec<f64>>,
    pub slots: usize,
    pub omega_max: f64,
    pub seed: u64,
    pub mc_samples: usize,
    /// `(eta1, eta2)` pairs for `sweep`.
    pub ratios: Vec<[f64; 2]>,
    pub output_dir: String,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            soliton: SolitonKind::N2,
            eta1: 0.5,
            eta2: 1.5,
            amplitude: 1.0,
            n: 1024,
            t_max: 25.0,
            dz: 5e-4,
            z_max: 5.0,
            z_step: 0.05,
            z_list: None,
            spectrum_z: None,
            slots: 64,
            omega_max: 8.0,
            seed: 20_060_101,
            mc_samples: 20_000,
            ratios: Vec::new(),
            output_dir: "out".into(),
            strict: false,
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Result<TimeGrid, Error> {
        TimeGrid::new(self.n, self.t_max)
    }

    pub fn params(&self) -> Result<SolitonParams, Error> {
        SolitonParams::new(self.eta1, self.eta2)
    }

    fn options(&self) -> PropagateOptions {
        PropagateOptions {
            strict: self.strict,
            storage: Storage::Stored,
        }
    }

    /// Distances at which curves and field snapshots are reported.
    pub fn z_values(&self) -> Result<Vec<f64>, Error> {
        if let Some(list) = &self.z_list {
            if list.is_empty() {
                return Err(Error::config("z_list", "z_list must not be empty"));
            }
            z_steps(list, self.dz)?;
            return Ok(list.clone());
        }
        StepPlan::new(self.z_max, self.dz)?;
        if self.z_max == 0.0 {
            return Ok(vec![0.0]);
        }
        if !(self.z_step > 0.0) {
            return Err(Error::config("z_step", "z_step must be positive"));
        }
        let count = (self.z_max / self.z_step).round();
        if (count * self.z_step - self.z_max).abs() > 1e-12 * self.z_max.max(1.0) {
            return Err(Error::config("z_step", "z_max must be a multiple of z_step"));
        }
        let values: Vec<f64> = (0..=count as usize)
            .map(|k| if k == count as usize { self.z_max } else { k as f64 * self.z_step })
            .collect();
        z_steps(&values, self.dz).map_err(|_| Error::config("z_step", "z_step must be a multiple of dz"))?;
        Ok(values)
    }

    /// Checks every field before any computation starts.
    pub fn validate(&self) -> Result<(), Error> {
        let grid = self.grid()?;
        match self.soliton {
            SolitonKind::N2 => {
                self.params()?;
            }
            SolitonKind::N1 => {
                if !(self.amplitude > 0.0) {
                    return Err(Error::config("amplitude", "amplitude must be positive"));
                }
            }
        }
        if !(self.dz > 0.0) {
            return Err(Error::config("dz", "dz must be positive"));
        }
        self.z_values()?;
        if let Some(list) = &self.spectrum_z {
            z_steps(list, self.dz).map_err(|_| {
                Error::config("spectrum_z", "spectrum distances must be increasing multiples of dz")
            })?;
        }
        if self.slots == 0 {
            return Err(Error::config("slots", "slots must be positive"));
        }
        if !(self.omega_max > 0.0 && self.omega_max <= grid.omega_nyquist()) {
            return Err(Error::config("omega_max", "omega_max must lie in (0, pi/dt]"));
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(Error::config(
                "mc_samples",
                format!("mc_samples must be at least {MIN_MC_SAMPLES}"),
            ));
        }
        let mut seen = HashSet::new();
        for pair in &self.ratios {
            SolitonParams::new(pair[0], pair[1])?;
            if !seen.insert((pair[0].to_bits(), pair[1].to_bits())) {
                return Err(Error::config(
                    "ratios",
                    format!("duplicate pair ({}, {})", pair[0], pair[1]),
                ));
            }
        }
        Ok(())
    }

    /// Launch field at `z = 0`.
    pub fn initial_field(&self) -> Result<ComplexEnvelope, Error> {
        let grid = self.grid()?;
        match self.soliton {
            SolitonKind::N1 => fundamental_soliton(self.amplitude, 0.0, &grid),
            SolitonKind::N2 => two_soliton(&self.params()?, 0.0, &grid),
        }
    }

    /// Analytic field at distance `z`.
    pub fn analytic_field(&self, z: f64) -> Result<ComplexEnvelope, Error> {
        let grid = self.grid()?;
        match self.soliton {
            SolitonKind::N1 => fundamental_soliton(self.amplitude, z, &grid),
            SolitonKind::N2 => two_soliton(&self.params()?, z, &grid),
        }
    }

    fn curve_plan(&self) -> CurvePlan {
        CurvePlan {
            dz: self.dz,
            options: self.options(),
        }
    }
}

/// Failure of a CLI run, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) | CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::SingularParameters(_) | Error::GridTooSmall { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Reads a config file; a missing path yields the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// Formats a value as the shortest decimal that round-trips; NaN as `nan`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        CliError::Runtime(
            Error::Io {
                path: path.display().to_string(),
                source: e,
            }
            .to_string(),
        )
    })
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display()))
    })
}

fn write_resolved(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(config).expect("config serializes");
    json.push('\n');
    write_file(&dir.join("resolved_config.json"), &json)
}

fn start(config: &RunConfig) -> Result<PathBuf, CliError> {
    config.validate()?;
    let dir = PathBuf::from(&config.output_dir);
    prepare_dir(&dir)?;
    write_resolved(config, &dir)?;
    Ok(dir)
}

/// `field.csv`: first row the time samples, then one row of `|U(z, t_k)|` per distance.
pub fn cmd_classical(config: &RunConfig) -> Result<(), CliError> {
    let dir = start(config)?;
    let grid = config.grid()?;
    let z_values = config.z_values()?;
    let steps = z_steps(&z_values, config.dz)?;
    let initial = config.initial_field()?;
    let plan = StepPlan::new(*z_values.last().unwrap(), config.dz)?;
    let (_, traj) = ssfm_propagate_with(&initial, &plan, config.options())?;
    let mut out = String::new();
    writeln!(out, "z,{}", join(grid.times())).unwrap();
    for (z, k) in z_values.iter().zip(steps) {
        let field = traj.field_at_step(k)?;
        writeln!(out, "{},{}", fmt_f64(*z), join(field.abs())).unwrap();
    }
    write_file(&dir.join("field.csv"), &out)
}

fn squeeze_csv(results: &[HomodyneResult], z_values: &[f64]) -> String {
    let mut out = String::from("z,R_opt,R_opt_dB,theta_opt\n");
    for (z, r) in z_values.iter().zip(results) {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(*z),
            fmt_f64(r.r_opt),
            fmt_f64(r.r_db),
            fmt_f64(r.theta_opt)
        )
        .unwrap();
    }
    out
}

fn squeeze_results(config: &RunConfig, z_values: &[f64]) -> Result<Vec<HomodyneResult>, CliError> {
    let initial = config.initial_field()?;
    Ok(crate::measurements::squeezing_curve(&initial, z_values, &config.curve_plan())?)
}

/// `squeeze.csv` with `z,R_opt,R_opt_dB,theta_opt`.
pub fn cmd_squeeze(config: &RunConfig) -> Result<(), CliError> {
    let dir = start(config)?;
    let z_values = config.z_values()?;
    let results = squeeze_results(config, &z_values)?;
    write_file(&dir.join("squeeze.csv"), &squeeze_csv(&results, &z_values))
}

fn spectrum_csvs(spec: &CorrelationSpectrum) -> (String, String) {
    let m = spec.len();
    let mut matrix = String::new();
    writeln!(matrix, "{}", join(spec.centers())).unwrap();
    for i in 0..m {
        writeln!(matrix, "{}", join(spec.raw()[i * m..(i + 1) * m].iter().copied())).unwrap();
    }
    let mut slots = String::from("slot,omega_lo,omega_hi,n\n");
    for i in 0..m {
        writeln!(
            slots,
            "{i},{},{},{}",
            fmt_f64(spec.slot_edges[i]),
            fmt_f64(spec.slot_edges[i + 1]),
            fmt_f64(spec.photons[i])
        )
        .unwrap();
    }
    (matrix, slots)
}

/// Correlation spectra at each configured distance.
pub fn spectra(config: &RunConfig) -> Result<Vec<CorrelationSpectrum>, CliError> {
    let z_values = config.spectrum_z.clone().unwrap_or_else(|| vec![config.z_max]);
    let steps = z_steps(&z_values, config.dz)?;
    let layout = SlotLayout::uniform(config.slots, config.omega_max)?;
    let initial = config.initial_field()?;
    let plan = StepPlan::new(*z_values.last().unwrap(), config.dz)?;
    let (_, traj) = ssfm_propagate_with(&initial, &plan, config.options())?;
    steps
        .iter()
        .map(|&k| Ok(correlation_matrix(&traj.prefix(k)?, &layout)?))
        .collect()
}

/// `spectrum_z<z>.csv` (slot centers then the matrix) and `slots_z<z>.csv`.
pub fn cmd_spectrum(config: &RunConfig) -> Result<(), CliError> {
    let dir = start(config)?;
    let z_values = config.spectrum_z.clone().unwrap_or_else(|| vec![config.z_max]);
    for (z, spec) in z_values.iter().zip(spectra(config)?) {
        let (matrix, slots) = spectrum_csvs(&spec);
        let tag = fmt_f64(*z);
        write_file(&dir.join(format!("spectrum_z{tag}.csv")), &matrix)?;
        write_file(&dir.join(format!("slots_z{tag}.csv")), &slots)?;
    }
    Ok(())
}

/// One entry of `validate.json`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: String,
    pub passed: bool,
}

impl CheckResult {
    fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: format!("< {limit:e}"),
            passed: value < limit,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Distance of the analytic-agreement and convergence checks.
pub const VALIDATE_ANALYTIC_Z: f64 = 2.0;
/// Distance of the adjoint and Monte-Carlo checks.
pub const VALIDATE_ADJOINT_Z: f64 = 1.0;

/// Runs the oracle suite for the configured soliton, grid and step.
pub fn run_validation(config: &RunConfig) -> Result<ValidationReport, CliError> {
    config.validate()?;
    let grid = config.grid()?;
    let mut checks = Vec::new();

    let mut residual: f64 = 0.0;
    for z in [0.0, 0.3, 1.1] {
        residual = residual.max(pde_residual(|z| config.analytic_field(z), z, &grid)?);
    }
    checks.push(CheckResult::below("pde_residual", residual, 1e-6));

    let initial = config.initial_field()?;
    let analytic_error = |dz: f64| -> Result<f64, CliError> {
        let plan = StepPlan::new(VALIDATE_ANALYTIC_Z, dz)?;
        let opts = PropagateOptions {
            strict: config.strict,
            storage: Storage::Recompute,
        };
        let (out, _) = ssfm_propagate_with(&initial, &plan, opts)?;
        Ok(relative_l2(&out, &config.analytic_field(VALIDATE_ANALYTIC_Z)?))
    };
    let coarse = analytic_error(config.dz)?;
    let fine = analytic_error(config.dz / 2.0)?;
    checks.push(CheckResult::below("analytic_vs_ssfm", coarse, 1e-5));
    let order = coarse / fine;
    checks.push(CheckResult {
        name: "convergence_order".into(),
        value: order,
        tolerance: "in [3.5, 4.5]".into(),
        passed: (3.5..=4.5).contains(&order),
    });

    let plan = StepPlan::new(VALIDATE_ADJOINT_Z, config.dz)?;
    let (_, traj) = ssfm_propagate_with(&initial, &plan, config.options())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut drift: f64 = 0.0;
    for _ in 0..20 {
        let w0 = random_pair(&mut rng, &grid, 0.0);
        let vl = random_pair(&mut rng, &grid, traj.z_end());
        let end = pairing(&vl, &forward_linearized(&w0, &traj)?)?;
        let start = pairing(&backward_adjoint(&vl, &traj)?, &w0)?;
        drift = drift.max((end - start).norm() / end.norm());
    }
    checks.push(CheckResult::below("pairing_conservation", drift, 1e-8));

    let empty = traj.prefix(0)?;
    let probe = random_pair(&mut rng, &grid, 0.0);
    let same = backward_adjoint(&probe, &empty)?;
    let identity_error = probe
        .a()
        .iter()
        .chain(probe.b())
        .zip(same.a().iter().chain(same.b()))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    checks.push(CheckResult::below("adjoint_identity_at_zero", identity_error, 1e-15));

    let at_zero = squeezing_ratio(&empty)?;
    checks.push(CheckResult {
        name: "shot_noise_at_zero".into(),
        value: at_zero.r_opt,
        tolerance: "== 1".into(),
        passed: at_zero.r_opt == 1.0,
    });

    let res = squeezing_ratio(&traj)?;
    let lo = local_oscillator(traj.final_field(), res.theta_opt, traj.z_end())?;
    let mc = mc_estimate_variance(&lo, &traj, config.mc_samples, config.seed)?;
    let sigmas = (mc.variance - res.r_opt).abs() / mc.std_error;
    checks.push(CheckResult::below("mc_vs_adjoint_sigmas", sigmas, 3.0));

    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { checks, passed })
}

fn random_pair(rng: &mut ChaCha8Rng, grid: &TimeGrid, z: f64) -> DoubledVector {
    let mut component = || -> Vec<Complex64> {
        let centre: f64 = rng.random_range(-3.0..3.0);
        let width: f64 = rng.random_range(0.5..2.0);
        let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        grid.times()
            .into_iter()
            .map(|t| amp * (-(t - centre).powi(2) / (2.0 * width * width)).exp())
            .collect()
    };
    let a = component();
    let b = component();
    DoubledVector::new(*grid, z, a, b).expect("finite random pair")
}

/// Writes `validate.json`; fails with exit code 1 naming the failing checks.
pub fn cmd_validate(config: &RunConfig) -> Result<ValidationReport, CliError> {
    let dir = start(config)?;
    let report = run_validation(config)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&dir.join("validate.json"), &json)?;
    if !report.passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::Check(failed.join(", ")));
    }
    Ok(report)
}

/// Directory holding the curve of one sweep pair.
pub fn sweep_subdir(eta1: f64, eta2: f64) -> String {
    format!("eta1_{}_eta2_{}", fmt_f64(eta1), fmt_f64(eta2))
}

/// One `squeeze.csv` per `(eta1, eta2)` pair plus `summary.csv`.
pub fn cmd_sweep(config: &RunConfig) -> Result<(), CliError> {
    if config.ratios.is_empty() {
        return Err(CliError::Config("invalid ratios: sweep needs at least one (eta1, eta2) pair".into()));
    }
    let dir = start(config)?;
    let z_values = config.z_values()?;
    let results: Vec<Result<Vec<HomodyneResult>, CliError>> = config
        .ratios
        .par_iter()
        .map(|pair| {
            let sub = RunConfig {
                soliton: SolitonKind::N2,
                eta1: pair[0],
                eta2: pair[1],
                ..config.clone()
            };
            squeeze_results(&sub, &z_values)
        })
        .collect();
    let mut summary = String::from("eta1,eta2,ratio,min_R_opt,argmin_z\n");
    for (pair, res) in config.ratios.iter().zip(results) {
        let res = res?;
        let sub = dir.join(sweep_subdir(pair[0], pair[1]));
        prepare_dir(&sub)?;
        write_file(&sub.join("squeeze.csv"), &squeeze_csv(&res, &z_values))?;
        let (best, z_best) = res
            .iter()
            .zip(&z_values)
            .fold((f64::INFINITY, 0.0), |acc, (r, z)| if r.r_opt < acc.0 { (r.r_opt, *z) } else { acc });
        writeln!(
            summary,
            "{},{},{},{},{}",
            fmt_f64(pair[0]),
            fmt_f64(pair[1]),
            fmt_f64(pair[0] / pair[1]),
            fmt_f64(best),
            fmt_f64(z_best)
        )
        .unwrap();
    }
    write_file(&dir.join("summary.csv"), &summary)
}
