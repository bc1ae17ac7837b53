//! Symmetric split-step Fourier integration of `i U_z + U_tt / 2 + |U|^2 U = 0`
//! and a spectral PDE-residual check for candidate solutions.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexEnvelope, Domain, Spectral, TimeGrid};

/// Default step size.
pub const DEFAULT_DZ: f64 = 5e-4;

/// Edge-to-peak amplitude ratio that triggers the window-overflow check.
pub const WINDOW_OVERFLOW_RATIO: f64 = 1e-8;

/// Centered-difference offset used by [`pde_residual`].
pub const RESIDUAL_DZ: f64 = 1e-5;

/// Total distance and step size of a propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    z_target: f64,
    dz: f64,
    steps: usize,
}

impl StepPlan {
    pub fn new(z_target: f64, dz: f64) -> Result<Self> {
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(Error::config("dz", "dz must be positive"));
        }
        if !(z_target >= 0.0 && z_target.is_finite()) {
            return Err(Error::config("z_target", "distance must be non-negative"));
        }
        let steps = (z_target / dz).round();
        if (steps * dz - z_target).abs() > 1e-12 * z_target.max(1.0) {
            return Err(Error::config("z_max", "z_max must be a multiple of dz"));
        }
        Ok(Self {
            z_target,
            dz,
            steps: steps as usize,
        })
    }

    pub fn z_target(&self) -> f64 {
        self.z_target
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of steps needed to reach `z`, which must be a multiple of dz.
    pub fn steps_to(&self, z: f64) -> Result<usize> {
        Ok(StepPlan::new(z, self.dz)?.steps)
    }
}

/// How a [`Trajectory`] makes its midpoint fields available to the
/// fluctuation solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    /// Keep every midpoint field in memory.
    #[default]
    Stored,
    /// Keep only the end fields and regenerate midpoints by stepping the
    /// (reversible) classical scheme.
    Recompute,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PropagateOptions {
    /// Escalate the window-overflow warning to an error.
    pub strict: bool,
    pub storage: Storage,
}

/// Classical solution sampled along `z`. The midpoint of step `k` is the
/// field entering that step's nonlinear substep.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: TimeGrid,
    dz: f64,
    steps: usize,
    initial: ComplexEnvelope,
    final_field: ComplexEnvelope,
    midpoints: Option<Arc<Vec<Vec<Complex64>>>>,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn z_end(&self) -> f64 {
        self.steps as f64 * self.dz
    }

    pub fn initial(&self) -> &ComplexEnvelope {
        &self.initial
    }

    pub fn final_field(&self) -> &ComplexEnvelope {
        &self.final_field
    }

    pub fn storage(&self) -> Storage {
        if self.midpoints.is_some() {
            Storage::Stored
        } else {
            Storage::Recompute
        }
    }

    /// Stored midpoint field of step `k`, if this trajectory keeps them.
    pub fn midpoint(&self, k: usize) -> Option<&[Complex64]> {
        self.midpoints
            .as_ref()
            .and_then(|m| m.get(k))
            .filter(|_| k < self.steps)
            .map(|v| v.as_slice())
    }

    /// Classical field after `k` steps. Needs stored midpoints for `0 < k < steps`.
    pub fn field_at_step(&self, k: usize) -> Result<ComplexEnvelope> {
        if k == 0 {
            return Ok(self.initial.clone());
        }
        if k == self.steps {
            return Ok(self.final_field.clone());
        }
        let w = self.midpoint(k - 1).ok_or_else(|| {
            Error::Usage(format!(
                "field at step {k} requires stored midpoints (trajectory has {} steps)",
                self.steps
            ))
        })?;
        let mut stepper = SplitStep::new(self.grid, self.dz);
        let mut buf = w.to_vec();
        nonlinear(&mut buf, self.dz);
        stepper.linear(&mut buf, Half);
        Ok(ComplexEnvelope::from_raw(self.grid, Domain::Time, buf))
    }

    /// The first `k` steps of this trajectory, sharing its midpoint storage.
    pub fn prefix(&self, k: usize) -> Result<Trajectory> {
        if k > self.steps {
            return Err(Error::Usage(format!(
                "prefix of {k} steps exceeds trajectory length {}",
                self.steps
            )));
        }
        Ok(Trajectory {
            grid: self.grid,
            dz: self.dz,
            steps: k,
            initial: self.initial.clone(),
            final_field: self.field_at_step(k)?,
            midpoints: self.midpoints.clone(),
        })
    }

    /// Visits midpoint fields in order of step index.
    pub fn for_each_midpoint(&self, mut f: impl FnMut(usize, &[Complex64])) {
        if let Some(m) = &self.midpoints {
            for (k, w) in m.iter().take(self.steps).enumerate() {
                f(k, w);
            }
            return;
        }
        if self.steps == 0 {
            return;
        }
        let mut stepper = SplitStep::new(self.grid, self.dz);
        let mut buf = self.initial.values().to_vec();
        stepper.linear(&mut buf, Half);
        for k in 0..self.steps {
            f(k, &buf);
            if k + 1 < self.steps {
                nonlinear(&mut buf, self.dz);
                stepper.linear(&mut buf, Full);
            }
        }
    }

    /// Visits midpoint fields from the last step back to the first.
    pub fn for_each_midpoint_rev(&self, mut f: impl FnMut(usize, &[Complex64])) {
        if let Some(m) = &self.midpoints {
            for k in (0..self.steps).rev() {
                f(k, &m[k]);
            }
            return;
        }
        if self.steps == 0 {
            return;
        }
        let mut stepper = SplitStep::new(self.grid, -self.dz);
        let mut buf = self.final_field.values().to_vec();
        stepper.linear(&mut buf, Half);
        for k in (0..self.steps).rev() {
            nonlinear(&mut buf, -self.dz);
            f(k, &buf);
            if k > 0 {
                stepper.linear(&mut buf, Full);
            }
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Span {
    Half,
    Full,
}
use Span::{Full, Half};

/// Dispersion substeps of the split-step scheme for a fixed signed `dz`.
pub(crate) struct SplitStep {
    spectral: Spectral,
    half: Vec<Complex64>,
    full: Vec<Complex64>,
}

impl SplitStep {
    pub(crate) fn new(grid: TimeGrid, dz: f64) -> Self {
        let inv_n = 1.0 / grid.n() as f64;
        let omegas = grid.fft_omegas();
        let mult = |h: f64| -> Vec<Complex64> {
            omegas
                .iter()
                .map(|w| Complex64::from_polar(inv_n, -0.5 * w * w * h))
                .collect()
        };
        Self {
            spectral: Spectral::new(grid.n()),
            half: mult(0.5 * dz),
            full: mult(dz),
        }
    }

    /// Exact solution of `i U_z + U_tt / 2 = 0` over half or all of `dz`.
    pub(crate) fn linear(&mut self, buf: &mut [Complex64], span: Span) {
        let m = match span {
            Half => &self.half,
            Full => &self.full,
        };
        self.spectral.apply_multiplier(buf, m);
    }

    /// Adjoint of [`linear`](Self::linear), i.e. the same span with `-dz`.
    pub(crate) fn linear_adjoint(&mut self, buf: &mut [Complex64], span: Span) {
        let m = match span {
            Half => &self.half,
            Full => &self.full,
        };
        self.spectral.fft(buf);
        for (v, m) in buf.iter_mut().zip(m) {
            *v *= m.conj();
        }
        self.spectral.ifft(buf);
    }
}

/// Exact solution of `i U_z + |U|^2 U = 0`: pointwise phase rotation.
pub(crate) fn nonlinear(buf: &mut [Complex64], dz: f64) {
    for v in buf.iter_mut() {
        *v *= Complex64::from_polar(1.0, v.norm_sqr() * dz);
    }
}

/// Propagates `env0` over `plan` with stored midpoints, non-strict.
pub fn ssfm_propagate(env0: &ComplexEnvelope, plan: &StepPlan) -> Result<(ComplexEnvelope, Trajectory)> {
    ssfm_propagate_with(env0, plan, PropagateOptions::default())
}

pub fn ssfm_propagate_with(
    env0: &ComplexEnvelope,
    plan: &StepPlan,
    options: PropagateOptions,
) -> Result<(ComplexEnvelope, Trajectory)> {
    if env0.domain() != Domain::Time {
        return Err(Error::Usage("ssfm_propagate expects a time-domain envelope".into()));
    }
    let grid = *env0.grid();
    let steps = plan.steps();
    let dz = plan.dz();
    let mut stepper = SplitStep::new(grid, dz);
    let mut midpoints = match options.storage {
        Storage::Stored => Some(Vec::with_capacity(steps)),
        Storage::Recompute => None,
    };
    let mut buf = env0.values().to_vec();
    let mut warned = false;
    if steps > 0 {
        stepper.linear(&mut buf, Half);
    }
    for k in 0..steps {
        check_window(&buf, k, options.strict, &mut warned)?;
        if let Some(m) = midpoints.as_mut() {
            m.push(buf.clone());
        }
        nonlinear(&mut buf, dz);
        stepper.linear(&mut buf, if k + 1 < steps { Full } else { Half });
    }
    let final_field = ComplexEnvelope::from_raw(grid, Domain::Time, buf);
    let trajectory = Trajectory {
        grid,
        dz,
        steps,
        initial: env0.clone(),
        final_field: final_field.clone(),
        midpoints: midpoints.map(Arc::new),
    };
    Ok((final_field, trajectory))
}

fn check_window(buf: &[Complex64], step: usize, strict: bool, warned: &mut bool) -> Result<()> {
    let peak = buf.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max).sqrt();
    if !peak.is_finite() {
        return Err(Error::NumericalBlowup { step });
    }
    if peak == 0.0 {
        return Ok(());
    }
    let edge = buf[0].norm().max(buf[buf.len() - 1].norm());
    let ratio = edge / peak;
    if ratio > WINDOW_OVERFLOW_RATIO {
        if strict {
            return Err(Error::WindowOverflow { step, ratio });
        }
        if !*warned {
            log::warn!("field reaches the window edge at step {step} (edge/peak = {ratio:e})");
            *warned = true;
        }
    }
    Ok(())
}

/// Runs the scheme with negated step from `env_end` back over `plan`.
pub fn ssfm_propagate_back(env_end: &ComplexEnvelope, plan: &StepPlan) -> Result<ComplexEnvelope> {
    if env_end.domain() != Domain::Time {
        return Err(Error::Usage("ssfm_propagate_back expects a time-domain envelope".into()));
    }
    let grid = *env_end.grid();
    let mut stepper = SplitStep::new(grid, -plan.dz());
    let mut buf = env_end.values().to_vec();
    let steps = plan.steps();
    if steps > 0 {
        stepper.linear(&mut buf, Half);
    }
    for k in 0..steps {
        nonlinear(&mut buf, -plan.dz());
        stepper.linear(&mut buf, if k + 1 < steps { Full } else { Half });
        if buf.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NumericalBlowup { step: steps - 1 - k });
        }
    }
    Ok(ComplexEnvelope::from_raw(grid, Domain::Time, buf))
}

/// Second time derivative by spectral differentiation.
pub fn spectral_d2(env: &ComplexEnvelope) -> Vec<Complex64> {
    let grid = env.grid();
    let inv_n = 1.0 / grid.n() as f64;
    let mult: Vec<Complex64> = grid
        .fft_omegas()
        .iter()
        .map(|w| Complex64::new(-w * w * inv_n, 0.0))
        .collect();
    let mut buf = env.values().to_vec();
    Spectral::new(grid.n()).apply_multiplier(&mut buf, &mult);
    buf
}

/// Normalized residual `max |i U_z + U_tt/2 + |U|^2 U| / max |U|` over `|t| <= t_max/2`,
/// with `U_z` by centered difference (offset [`RESIDUAL_DZ`]) and `U_tt` spectrally.
pub fn pde_residual<F>(env_at: F, z: f64, grid: &TimeGrid) -> Result<f64>
where
    F: Fn(f64) -> Result<ComplexEnvelope>,
{
    let centre = env_at(z)?;
    let plus = env_at(z + RESIDUAL_DZ)?;
    let minus = env_at(z - RESIDUAL_DZ)?;
    for e in [&centre, &plus, &minus] {
        if e.grid() != grid || e.domain() != Domain::Time {
            return Err(Error::Usage("pde_residual: envelope not on the given time grid".into()));
        }
    }
    let peak = centre.peak();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let utt = spectral_d2(&centre);
    let i = Complex64::new(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for k in 0..grid.n() {
        if grid.t(k).abs() > grid.t_max() / 2.0 {
            continue;
        }
        let u = centre.values()[k];
        let uz = (plus.values()[k] - minus.values()[k]) / (2.0 * RESIDUAL_DZ);
        let r = i * uz + 0.5 * utt[k] + u * u.norm_sqr();
        worst = worst.max(r.norm());
    }
    Ok(worst / peak)
}

/// Relative L2 distance `||a - b|| / ||b||`.
pub fn relative_l2(a: &ComplexEnvelope, b: &ComplexEnvelope) -> f64 {
    let num: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let den: f64 = b.values().iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
