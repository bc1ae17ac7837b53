//! Uniform time/frequency grids and the spectral transforms built on them.
//!
//! The time window is `[-t_max, t_max)` sampled at `n` points. The frequency
//! representation approximates the continuous transform
//! `U(w) = \int U(t) e^{-i w t} dt`, stored in ascending order of `w` over
//! `(-pi/dt, pi/dt]`. With inner products weighted by `dt` in time and
//! `dw / 2pi` in frequency the transform is unitary, so delta-correlated
//! vacuum noise has identical statistics in both representations.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform sampling of the retarded-time window and its conjugate frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n: usize,
    t_max: f64,
    dt: f64,
    domega: f64,
}

impl TimeGrid {
    pub fn new(n: usize, t_max: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::config("n", "n must be a power of two and at least 8"));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::config("t_max", "t_max must be positive and finite"));
        }
        let dt = 2.0 * t_max / n as f64;
        let domega = 2.0 * PI / (n as f64 * dt);
        Ok(Self {
            n,
            t_max,
            dt,
            domega,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn domega(&self) -> f64 {
        self.domega
    }

    /// Time of sample `k`.
    pub fn t(&self, k: usize) -> f64 {
        -self.t_max + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.t(k)).collect()
    }

    /// Frequency of ascending-order sample `j`; `j = n/2 - 1` is zero and the
    /// last sample is the Nyquist frequency `pi/dt`.
    pub fn omega(&self, j: usize) -> f64 {
        (j as f64 + 1.0 - (self.n / 2) as f64) * self.domega
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.omega(j)).collect()
    }

    /// Frequencies in raw FFT bin order (0, dw, ..., pi/dt, -pi/dt + dw, ..., -dw).
    pub fn fft_omegas(&self) -> Vec<f64> {
        let n = self.n as i64;
        (0..n)
            .map(|k| {
                let signed = if k <= n / 2 { k } else { k - n };
                signed as f64 * self.domega
            })
            .collect()
    }

    pub fn omega_nyquist(&self) -> f64 {
        PI / self.dt
    }

    /// Quadrature weight of the inner product in the given domain.
    pub fn weight(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Time => self.dt,
            Domain::Frequency => self.domega / (2.0 * PI),
        }
    }

    fn fft_index_of_ascending(&self, j: usize) -> usize {
        (j + self.n / 2 + 1) % self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Time,
    Frequency,
}

/// Complex field samples on a [`TimeGrid`] in one of the two representations.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    grid: TimeGrid,
    domain: Domain,
    values: Vec<Complex64>,
}

impl ComplexEnvelope {
    pub fn new(grid: TimeGrid, domain: Domain, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Usage(format!(
                "envelope has {} samples but the grid has {}",
                values.len(),
                grid.n()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Usage("envelope contains non-finite samples".into()));
        }
        Ok(Self {
            grid,
            domain,
            values,
        })
    }

    pub fn zeros(grid: TimeGrid, domain: Domain) -> Self {
        Self {
            grid,
            domain,
            values: vec![Complex64::new(0.0, 0.0); grid.n()],
        }
    }

    /// Samples `f(t_k)` on the time grid.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, Domain::Time, grid.times().into_iter().map(f).collect())
    }

    pub(crate) fn from_raw(grid: TimeGrid, domain: Domain, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self {
            grid,
            domain,
            values,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn abs(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Multiplies every sample by `e^{i phase}`.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            grid: self.grid,
            domain: self.domain,
            values: self.values.iter().map(|v| v * r).collect(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward/inverse FFT plans for one grid size plus the fixed phase factors
/// of the continuous-transform convention.
pub(crate) struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let (forward, inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Unnormalized in-place DFT.
    pub(crate) fn fft(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Unnormalized in-place inverse DFT (no 1/n).
    pub(crate) fn ifft(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
    }

    /// Applies `F^{-1} diag(multiplier) F` where `multiplier` is given in FFT
    /// order and already includes the `1/n` normalization if required.
    pub(crate) fn apply_multiplier(&mut self, buf: &mut [Complex64], multiplier: &[Complex64]) {
        self.fft(buf);
        for (v, m) in buf.iter_mut().zip(multiplier) {
            *v *= m;
        }
        self.ifft(buf);
    }
}

/// Transforms a time-domain envelope into its frequency representation.
pub fn to_spectrum(env: &ComplexEnvelope) -> Result<ComplexEnvelope> {
    if env.domain != Domain::Time {
        return Err(Error::Usage("to_spectrum expects a time-domain envelope".into()));
    }
    let grid = env.grid;
    let mut buf = env.values.clone();
    Spectral::new(grid.n()).fft(&mut buf);
    let dt = grid.dt();
    let values = (0..grid.n())
        .map(|j| {
            let k = grid.fft_index_of_ascending(j);
            let sign = if k.is_multiple_of(2) { dt } else { -dt };
            buf[k] * sign
        })
        .collect();
    Ok(ComplexEnvelope::from_raw(grid, Domain::Frequency, values))
}

/// Inverse of [`to_spectrum`].
pub fn from_spectrum(env: &ComplexEnvelope) -> Result<ComplexEnvelope> {
    if env.domain != Domain::Frequency {
        return Err(Error::Usage(
            "from_spectrum expects a frequency-domain envelope".into(),
        ));
    }
    let grid = env.grid;
    let n = grid.n();
    let scale = 1.0 / (n as f64 * grid.dt());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (j, v) in env.values.iter().enumerate() {
        let k = grid.fft_index_of_ascending(j);
        let sign = if k.is_multiple_of(2) { scale } else { -scale };
        buf[k] = v * sign;
    }
    Spectral::new(n).ifft(&mut buf);
    Ok(ComplexEnvelope::from_raw(grid, Domain::Time, buf))
}

/// Quadrature of `\int f^* g` in the envelopes' shared domain.
pub fn inner_product(f: &ComplexEnvelope, g: &ComplexEnvelope) -> Result<Complex64> {
    if f.grid != g.grid {
        return Err(Error::Usage("inner product of envelopes on different grids".into()));
    }
    if f.domain != g.domain {
        return Err(Error::Usage(
            "inner product of envelopes in different domains".into(),
        ));
    }
    Ok(dot(&f.values, &g.values) * f.grid.weight(f.domain))
}

/// Unweighted `sum conj(f_k) g_k`.
pub(crate) fn dot(f: &[Complex64], g: &[Complex64]) -> Complex64 {
    f.iter().zip(g).map(|(a, b)| a.conj() * b).sum()
}

pub(crate) fn norm_sqr_sum(f: &[Complex64]) -> f64 {
    f.iter().map(|v| v.norm_sqr()).sum()
}

/// Pulse energy `\int |U|^2`, in photon-number-normalized units.
pub fn energy(env: &ComplexEnvelope) -> f64 {
    norm_sqr_sum(&env.values) * env.grid.weight(env.domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1024, 20.0).unwrap()
    }

    fn sech(x: f64) -> f64 {
        1.0 / x.cosh()
    }

    fn random_envelope(seed: u64, grid: TimeGrid) -> ComplexEnvelope {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.n())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexEnvelope::new(grid, Domain::Time, values).unwrap()
    }

    fn max_rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn derived_spacings() {
        let g = grid();
        assert_eq!(g.dt(), 0.0390625);
        assert_relative_eq!(g.domega(), 2.0 * PI / 40.0, max_relative = 1e-15);
        assert_relative_eq!(g.dt() * g.domega() * g.n() as f64, 2.0 * PI, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_sizes() {
        let err = TimeGrid::new(1000, 20.0).unwrap_err();
        assert!(err.to_string().contains("n must be a power of two"), "{err}");
        assert!(matches!(TimeGrid::new(4, 20.0), Err(Error::Config { .. })));
        match TimeGrid::new(1024, 0.0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "t_max"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_layout() {
        let g = grid();
        let t = g.times();
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(t[0], -20.0);
        assert_eq!(t[g.n() / 2], 0.0);
        assert_relative_eq!(t[g.n() - 1], 20.0 - g.dt());
        assert_eq!(g.omega(g.n() / 2 - 1), 0.0);
        assert_relative_eq!(g.omega(g.n() - 1), g.omega_nyquist(), max_relative = 1e-15);
        assert!(g.omega(0) > -g.omega_nyquist());
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = grid();
        let env = random_envelope(7, g);
        let spec = to_spectrum(&env).unwrap();
        let back = from_spectrum(&spec).unwrap();
        assert!(max_rel_diff(env.values(), back.values()) < 1e-12);
        assert_relative_eq!(energy(&env), energy(&spec), max_relative = 1e-12);
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let g = grid();
        let mut values = vec![Complex64::new(0.0, 0.0); g.n()];
        values[300] = Complex64::new(1.0, 0.0);
        let spec = to_spectrum(&ComplexEnvelope::new(g, Domain::Time, values).unwrap()).unwrap();
        for v in spec.values() {
            assert_relative_eq!(v.norm(), g.dt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn even_real_field_has_real_even_spectrum() {
        // Window wide enough that the truncated tails sit below the tolerance.
        let g = TimeGrid::new(2048, 40.0).unwrap();
        let env = ComplexEnvelope::from_fn(g, |t| Complex64::new(sech(t), 0.0)).unwrap();
        let spec = to_spectrum(&env).unwrap();
        let zero = g.n() / 2 - 1;
        // Continuous transform of sech(t) is pi sech(pi w / 2).
        assert_relative_eq!(spec.values()[zero].re, PI, max_relative = 1e-10);
        for j in 1..g.n() / 2 - 1 {
            let (p, m) = (spec.values()[zero + j], spec.values()[zero - j]);
            assert!((p - m).norm() < 1e-12);
            assert!(p.im.abs() < 1e-12);
            let w = g.omega(zero + j);
            assert!((p.re - PI * sech(PI * w / 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn domain_mismatch_is_usage_error() {
        let g = grid();
        let env = random_envelope(1, g);
        assert!(matches!(from_spectrum(&env), Err(Error::Usage(_))));
        let spec = to_spectrum(&env).unwrap();
        assert!(matches!(to_spectrum(&spec), Err(Error::Usage(_))));
        assert!(matches!(inner_product(&env, &spec), Err(Error::Usage(_))));
        let other = random_envelope(1, TimeGrid::new(512, 20.0).unwrap());
        assert!(matches!(inner_product(&env, &other), Err(Error::Usage(_))));
    }

    #[test]
    fn inner_products() {
        let g = grid();
        let f = ComplexEnvelope::from_fn(g, |t| Complex64::new(sech(t) / 2f64.sqrt(), 0.0)).unwrap();
        assert!((inner_product(&f, &f).unwrap() - 1.0).norm() < 1e-10);

        let even = ComplexEnvelope::from_fn(g, |t| Complex64::new((-t * t).exp(), 0.0)).unwrap();
        let odd = ComplexEnvelope::from_fn(g, |t| Complex64::new(t * (-t * t).exp(), 0.0)).unwrap();
        assert!(inner_product(&even, &odd).unwrap().norm() < 1e-12);

        let a = random_envelope(2, g);
        let b = random_envelope(3, g);
        let ab = inner_product(&a, &b).unwrap();
        let ba = inner_product(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-12 * ab.norm().max(1.0));
    }

    #[test]
    fn energies() {
        let g = grid();
        let two_sech = ComplexEnvelope::from_fn(g, |t| Complex64::new(2.0 * sech(t), 0.0)).unwrap();
        assert!((energy(&two_sech) - 8.0).abs() < 1e-9);
        assert_eq!(energy(&ComplexEnvelope::zeros(g, Domain::Time)), 0.0);
        for amp in [1.0, 1.7] {
            let env = ComplexEnvelope::from_fn(g, |t| Complex64::new(amp * sech(amp * t), 0.0)).unwrap();
            assert!((energy(&env) - 2.0 * amp).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        let g = TimeGrid::new(8, 1.0).unwrap();
        let mut values = vec![Complex64::new(0.0, 0.0); 8];
        assert!(ComplexEnvelope::new(g, Domain::Time, values[..7].to_vec()).is_err());
        values[3] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexEnvelope::new(g, Domain::Time, values).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transform_preserves_energy(seed in any::<u64>(), log_n in 3usize..11) {
            let g = TimeGrid::new(1 << log_n, 10.0).unwrap();
            let env = random_envelope(seed, g);
            let spec = to_spectrum(&env).unwrap();
            let e = energy(&env);
            prop_assert!((energy(&spec) - e).abs() <= 1e-12 * e);
            let back = from_spectrum(&spec).unwrap();
            prop_assert!(max_rel_diff(env.values(), back.values()) < 1e-12);
        }

        #[test]
        fn sesquilinear(seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let g = TimeGrid::new(256, 10.0).unwrap();
            let f = random_envelope(seed, g);
            let h = random_envelope(seed.wrapping_add(1), g);
            let k = random_envelope(seed.wrapping_add(2), g);
            let alpha = Complex64::new(re, im);
            let combo: Vec<Complex64> = h.values().iter().zip(k.values()).map(|(x, y)| alpha * x + y).collect();
            let combo = ComplexEnvelope::new(g, Domain::Time, combo).unwrap();
            let lhs = inner_product(&f, &combo).unwrap();
            let fh = inner_product(&f, &h).unwrap();
            let fk = inner_product(&f, &k).unwrap();
            let rhs = alpha * fh + fk;
            let scale = alpha.norm() * fh.norm() + fk.norm() + 1.0;
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }
    }
}
