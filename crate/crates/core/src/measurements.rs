//! Observables: the homodyne squeezing ratio with optimal local-oscillator
//! phase, and the normally ordered photon-number correlation matrix between
//! spectral slots. Both are evaluated by back-propagating the measurement
//! functionals to the input, where the fluctuations are vacuum noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fluctuations::{backward_adjoint_many, vacuum_covariance, DoubledVector};
use crate::grid::{energy, from_spectrum, to_spectrum, ComplexEnvelope, Domain};
use crate::propagator::{ssfm_propagate_with, PropagateOptions, StepPlan, Trajectory};

/// Relative variance floor below which a slot is reported empty.
pub const SLOT_FLOOR: f64 = 1e-12;

/// Homodyne measurement at one distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomodyneResult {
    pub z: f64,
    /// Covariance of the in-phase and out-of-phase quadratures in shot-noise units.
    pub m: [[f64; 2]; 2],
    pub r_opt: f64,
    /// Local-oscillator phase attaining `r_opt`, in `[0, pi)`.
    pub theta_opt: f64,
    pub r_db: f64,
}

impl HomodyneResult {
    /// Squeezing ratio at local-oscillator phase `theta`.
    pub fn ratio_at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.m[0][0] * c * c + 2.0 * self.m[0][1] * c * s + self.m[1][1] * s * s
    }

    fn from_matrix(z: f64, m: [[f64; 2]; 2]) -> Self {
        let (p, q, r) = (m[0][0], m[0][1], m[1][1]);
        let mean = 0.5 * (p + r);
        let half = 0.5 * (p - r);
        let rad = half.hypot(q);
        let lambda_max = mean + rad;
        // det / lambda_max keeps the small eigenvalue accurate under strong squeezing.
        let r_opt = (p * r - q * q) / lambda_max;
        let theta_opt = if rad == 0.0 {
            0.0
        } else {
            (0.5 * (-q).atan2(-half)).rem_euclid(PI)
        };
        let theta_opt = if theta_opt >= PI { 0.0 } else { theta_opt };
        Self {
            z,
            m,
            r_opt,
            theta_opt,
            r_db: 10.0 * r_opt.log10(),
        }
    }
}

/// Normalized output pulse with phase `theta`: `a = U e^{i theta} / sqrt(energy)`.
pub fn local_oscillator(env_l: &ComplexEnvelope, theta: f64, z: f64) -> Result<DoubledVector> {
    if env_l.domain() != Domain::Time {
        return Err(Error::Usage("local oscillator needs a time-domain field".into()));
    }
    let e = energy(env_l);
    if e <= 0.0 {
        return Err(Error::DegenerateOscillator);
    }
    let scale = Complex64::from_polar(1.0 / e.sqrt(), theta);
    let a = env_l.values().iter().map(|v| v * scale).collect();
    DoubledVector::hermitian(*env_l.grid(), z, a)
}

/// Optimal quadrature squeezing ratio at the end of `traj`.
pub fn squeezing_ratio(traj: &Trajectory) -> Result<HomodyneResult> {
    let z = traj.z_end();
    let env_l = traj.final_field();
    let in_phase = local_oscillator(env_l, 0.0, z)?;
    // Quarter-turn by exact multiplication with i rather than a rounded phase factor.
    let quadrature = in_phase.a().iter().map(|v| v * Complex64::i()).collect();
    let oscillators = [in_phase, DoubledVector::hermitian(*env_l.grid(), z, quadrature)?];
    let back = backward_adjoint_many(&oscillators, traj)?;
    let mut cov = [[0.0; 2]; 2];
    let mut shot = [[0.0; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            cov[p][q] = vacuum_covariance(&back[p], &back[q])?;
            shot[p][q] = vacuum_covariance(&oscillators[p], &oscillators[q])?;
        }
    }
    // The two oscillators differ by a factor i, so `shot` is diagonal.
    let mut m = [[0.0; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            m[p][q] = if p == q {
                cov[p][p] / shot[p][p]
            } else {
                cov[p][q] / (shot[0][0] * shot[1][1]).sqrt()
            };
        }
    }
    m[1][0] = m[0][1];
    Ok(HomodyneResult::from_matrix(z, m))
}

/// Step size and options shared by the points of a squeezing curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePlan {
    pub dz: f64,
    pub options: PropagateOptions,
}

/// Propagates once to the largest requested distance and evaluates
/// [`squeezing_ratio`] on each prefix of the trajectory.
pub fn squeezing_curve(
    initial: &ComplexEnvelope,
    z_values: &[f64],
    plan: &CurvePlan,
) -> Result<Vec<HomodyneResult>> {
    let (_, traj) = trajectory_for(initial, z_values, plan)?;
    let steps = z_steps(z_values, plan.dz)?;
    steps
        .par_iter()
        .map(|&k| squeezing_ratio(&traj.prefix(k)?))
        .collect()
}

pub(crate) fn z_steps(z_values: &[f64], dz: f64) -> Result<Vec<usize>> {
    if z_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("z_list", "distances must be strictly increasing"));
    }
    z_values
        .iter()
        .map(|&z| Ok(StepPlan::new(z, dz)?.steps()))
        .collect()
}

/// Stored-midpoint trajectory reaching the last entry of `z_values`.
pub(crate) fn trajectory_for(
    initial: &ComplexEnvelope,
    z_values: &[f64],
    plan: &CurvePlan,
) -> Result<(ComplexEnvelope, Trajectory)> {
    let z_max = *z_values
        .last()
        .ok_or_else(|| Error::config("z_list", "at least one distance is required"))?;
    let options = PropagateOptions {
        storage: crate::propagator::Storage::Stored,
        ..plan.options
    };
    ssfm_propagate_with(initial, &StepPlan::new(z_max, plan.dz)?, options)
}

/// Contiguous frequency slots given by increasing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLayout {
    edges: Vec<f64>,
}

impl SlotLayout {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::config("slots", "at least one slot is required"));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::config("slots", "slot edges must be finite"));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("slots", "slot edges must be strictly increasing"));
        }
        Ok(Self { edges })
    }

    /// `count` equal slots covering `[-omega_max, omega_max]`.
    pub fn uniform(count: usize, omega_max: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::config("slots", "at least one slot is required"));
        }
        if !(omega_max > 0.0) {
            return Err(Error::config("omega_max", "omega_max must be positive"));
        }
        let width = 2.0 * omega_max / count as f64;
        let edges = (0..=count)
            .map(|i| {
                if i == count {
                    omega_max
                } else {
                    -omega_max + i as f64 * width
                }
            })
            .collect();
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the slot `[lo, hi)` containing `omega`.
    pub fn slot_of(&self, omega: f64) -> Option<usize> {
        if omega < self.edges[0] || omega >= self.edges[self.len()] {
            return None;
        }
        Some(self.edges.partition_point(|e| *e <= omega) - 1)
    }
}

/// Photon-number functional of one spectral slot.
#[derive(Debug, Clone)]
pub struct SlotFunctional {
    /// Classical photon number `\int_slot |U(w)|^2 dw / 2pi`.
    pub photons: f64,
    /// Time-domain coefficients of the slot's `Delta n` operator.
    pub functional: DoubledVector,
    pub empty: bool,
}

/// Slot photon-number functionals `a_i(w) = U(w)` restricted to slot `i`.
pub fn slot_functionals(
    env_freq: &ComplexEnvelope,
    layout: &SlotLayout,
    z: f64,
) -> Result<Vec<SlotFunctional>> {
    if env_freq.domain() != Domain::Frequency {
        return Err(Error::Usage("slot functionals need a frequency-domain field".into()));
    }
    let grid = *env_freq.grid();
    let nyquist = grid.omega_nyquist();
    if layout.edges()[0] < -nyquist || layout.edges()[layout.len()] > nyquist {
        return Err(Error::config(
            "omega_max",
            format!("slots exceed the grid band [-{nyquist}, {nyquist}]"),
        ));
    }
    let weight = grid.weight(Domain::Frequency);
    let mut masked = vec![vec![Complex64::new(0.0, 0.0); grid.n()]; layout.len()];
    let mut photons = vec![0.0; layout.len()];
    for (j, v) in env_freq.values().iter().enumerate() {
        if let Some(i) = layout.slot_of(grid.omega(j)) {
            masked[i][j] = *v;
            photons[i] += v.norm_sqr() * weight;
        }
    }
    let floor = SLOT_FLOOR * photons.iter().cloned().fold(0.0, f64::max);
    masked
        .into_iter()
        .zip(photons)
        .map(|(spec, n)| {
            let time = from_spectrum(&ComplexEnvelope::new(grid, Domain::Frequency, spec)?)?;
            Ok(SlotFunctional {
                photons: n,
                functional: DoubledVector::hermitian(grid, z, time.into_values())?,
                empty: !(n > floor),
            })
        })
        .collect()
}

/// Photon-number correlation matrix between spectral slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpectrum {
    pub z: f64,
    pub slot_edges: Vec<f64>,
    /// Classical photon number per slot.
    pub photons: Vec<f64>,
    /// Full photon-number variance per slot, in the same units.
    pub variances: Vec<f64>,
    pub empty: Vec<bool>,
    /// Row-major `M x M`; NaN where either slot is empty.
    c: Vec<f64>,
}

impl CorrelationSpectrum {
    pub fn len(&self) -> usize {
        self.photons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photons.is_empty()
    }

    /// `C_ij`, or `None` when either slot is below the floor.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.c[i * self.len() + j];
        (!v.is_nan()).then_some(v)
    }

    pub fn raw(&self) -> &[f64] {
        &self.c
    }

    pub fn centers(&self) -> Vec<f64> {
        self.slot_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Smallest off-diagonal entry and its indices.
    pub fn min_off_diagonal(&self) -> Option<(f64, usize, usize)> {
        let m = self.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                if let Some(v) = self.get(i, j) {
                    if best.is_none_or(|b| v < b.0) {
                        best = Some((v, i, j));
                    }
                }
            }
        }
        best
    }
}

/// `C_ij = <:dn_i dn_j:> / sqrt(<dn_i^2> <dn_j^2>)` at the end of `traj`.
pub fn correlation_matrix(traj: &Trajectory, layout: &SlotLayout) -> Result<CorrelationSpectrum> {
    let z = traj.z_end();
    let spectrum = to_spectrum(traj.final_field())?;
    let slots = slot_functionals(&spectrum, layout, z)?;
    let live: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].empty).collect();
    let functionals: Vec<DoubledVector> = live.iter().map(|&i| slots[i].functional.clone()).collect();
    let back = backward_adjoint_many(&functionals, traj)?;

    let m = slots.len();
    let mut variances = vec![0.0; m];
    for (k, &i) in live.iter().enumerate() {
        variances[i] = vacuum_covariance(&back[k], &back[k])?;
    }
    let floor = SLOT_FLOOR * variances.iter().cloned().fold(0.0, f64::max);
    let mut empty: Vec<bool> = slots.iter().map(|s| s.empty).collect();
    for &i in &live {
        if !(variances[i] > floor) {
            empty[i] = true;
        }
    }
    if empty.iter().all(|e| *e) {
        return Err(Error::DegenerateSpectrum);
    }
    let photons: Vec<f64> = slots.iter().map(|s| s.photons).collect();
    let mut c = vec![f64::NAN; m * m];
    for (ka, &i) in live.iter().enumerate() {
        if empty[i] {
            continue;
        }
        for (kb, &j) in live.iter().enumerate().skip(ka) {
            if empty[j] {
                continue;
            }
            let cov = if i == j {
                variances[i]
            } else {
                vacuum_covariance(&back[ka], &back[kb])?
            };
            let normal = if i == j { cov - photons[i] } else { cov };
            let value = normal / (variances[i] * variances[j]).sqrt();
            c[i * m + j] = value;
            c[j * m + i] = value;
        }
    }
    Ok(CorrelationSpectrum {
        z,
        slot_edges: layout.edges().to_vec(),
        photons,
        variances,
        empty,
        c,
    })
}
