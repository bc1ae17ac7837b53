//! Closed-form solutions of `i U_z + U_tt / 2 + |U|^2 U = 0`: the fundamental
//! soliton and the two-parameter family of N = 2 bound states (breathers).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexEnvelope, Domain, TimeGrid};

/// Edge amplitude above which a two-soliton sample is rejected as truncated.
pub const EDGE_LIMIT: f64 = 1e-10;

/// Imaginary parts of the two scattering-data poles, `lambda_j = i eta_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolitonParams {
    eta1: f64,
    eta2: f64,
}

impl SolitonParams {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        if !(eta1 > 0.0 && eta1.is_finite()) {
            return Err(Error::config("eta1", "eta1 must be positive"));
        }
        if !eta2.is_finite() {
            return Err(Error::config("eta2", "eta2 must be finite"));
        }
        if eta1 == eta2 {
            return Err(Error::SingularParameters(eta1));
        }
        if eta2 < eta1 {
            return Err(Error::config("eta2", "eta2 must exceed eta1"));
        }
        Ok(Self { eta1, eta2 })
    }

    /// Parameters with `eta1 : eta2 = ratio_num : ratio_den` and `eta1 + eta2 = total`.
    pub fn from_ratio(ratio_num: f64, ratio_den: f64, total: f64) -> Result<Self> {
        let s = ratio_num + ratio_den;
        Self::new(total * ratio_num / s, total * ratio_den / s)
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }

    pub fn eta2(&self) -> f64 {
        self.eta2
    }

    /// Conserved energy of the bound state, `4 (eta1 + eta2)`.
    pub fn energy(&self) -> f64 {
        4.0 * (self.eta1 + self.eta2)
    }
}

/// `A sech(A t) e^{i A^2 z / 2}` on the grid.
pub fn fundamental_soliton(amplitude: f64, z: f64, grid: &TimeGrid) -> Result<ComplexEnvelope> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::config("amplitude", "soliton amplitude must be positive"));
    }
    let phase = Complex64::from_polar(1.0, amplitude * amplitude * z / 2.0);
    let values = grid
        .times()
        .into_iter()
        .map(|t| phase * (amplitude / (amplitude * t).cosh()))
        .collect();
    Ok(ComplexEnvelope::from_raw(*grid, Domain::Time, values))
}

/// `cosh(x) e^{-m}` without overflow for large `|x|` when `m >= |x|`.
fn cosh_scaled(x: f64, m: f64) -> f64 {
    let x = x.abs();
    0.5 * ((x - m).exp() + (-x - m).exp())
}

/// Bound-state value at a single point.
pub fn two_soliton_value(params: &SolitonParams, z: f64, t: f64) -> Complex64 {
    let (e1, e2) = (params.eta1, params.eta2);
    let sum = e1 + e2;
    let diff = e2 - e1;
    let beat = 2.0 * (e2 * e2 - e1 * e1) * z;
    // Common factor e^{-2 (eta1 + eta2) |t|} cancels between numerator and denominator.
    let m = 2.0 * sum * t.abs();
    let num = Complex64::new(cosh_scaled(2.0 * e2 * t, m), 0.0)
        + Complex64::from_polar(e2 / e1 * cosh_scaled(2.0 * e1 * t, m), beat);
    let den = (sum * sum) / (diff * diff) * cosh_scaled(2.0 * diff * t, m)
        + 4.0 * e1 * e2 / (diff * diff) * beat.cos() * (-m).exp()
        + cosh_scaled(2.0 * sum * t, m);
    let prefactor = 4.0 * e1 * sum / diff.abs();
    num / den * prefactor * Complex64::from_polar(1.0, 2.0 * e1 * e1 * z)
}

/// The N = 2 bound state sampled on the grid at distance `z`.
///
/// Fails with [`Error::GridTooSmall`] when the field at the window edges
/// exceeds [`EDGE_LIMIT`], since the periodic transforms would then wrap it.
pub fn two_soliton(params: &SolitonParams, z: f64, grid: &TimeGrid) -> Result<ComplexEnvelope> {
    let values: Vec<Complex64> = grid
        .times()
        .into_iter()
        .map(|t| two_soliton_value(params, z, t))
        .collect();
    let edge = values[0].norm().max(values[grid.n() - 1].norm());
    if edge >= EDGE_LIMIT {
        return Err(Error::GridTooSmall {
            edge,
            limit: EDGE_LIMIT,
        });
    }
    Ok(ComplexEnvelope::from_raw(*grid, Domain::Time, values))
}

/// Period in `z` of the bound-state intensity, `pi / ((eta2 + eta1)(eta2 - eta1))`.
pub fn soliton_period(params: &SolitonParams) -> f64 {
    PI / ((params.eta2 + params.eta1) * (params.eta2 - params.eta1))
}

/// Residues `[C1, C2]`, positive branch of
/// `C_j^2 = prod_k (eta_j + eta_k) / prod_{k != j} |eta_j - eta_k|`.
pub fn residues(params: &SolitonParams) -> [f64; 2] {
    let etas = [params.eta1, params.eta2];
    let mut out = [0.0; 2];
    for (j, c) in out.iter_mut().enumerate() {
        let num: f64 = etas.iter().map(|ek| etas[j] + ek).product();
        let den: f64 = etas
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, ek)| (etas[j] - ek).abs())
            .product();
        *c = (num / den).sqrt();
    }
    out
}

/// Number of strict local maxima of `|U|` over the samples.
pub fn count_humps(env: &ComplexEnvelope) -> usize {
    let a = env.abs();
    a.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
}
