//! Linearized quantum fluctuations around a classical [`Trajectory`].
//!
//! A fluctuation `u` and its conjugate partner evolve under
//! `i a_z + a_tt/2 + 2|U0|^2 a + U0^2 b = 0` together with the conjugate
//! equation for `b`. The discrete flow uses the same splitting as the
//! classical solver: dispersion multipliers in frequency and, for each
//! nonlinear substep, the exact tangent of the pointwise phase rotation.
//! The backward (adjoint) flow applies the conjugate transpose of every forward
//! substep in reverse order, so [`pairing`] between a backward solution and a
//! forward solution is conserved to rounding.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{dot, TimeGrid};
use crate::propagator::{Span, SplitStep, Trajectory};

/// Relative tolerance for the `b = conj(a)` contract.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Minimum sample count accepted by the Monte-Carlo estimator.
pub const MIN_MC_SAMPLES: usize = 100;

const Z_MATCH: f64 = 1e-9;

/// Coefficients `(a, b)` multiplying `(u, u^dagger)` in a linear functional,
/// or a perturbation `(du, du^*)` of the field, expressed at distance `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubledVector {
    grid: TimeGrid,
    z: f64,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
}

impl DoubledVector {
    pub fn new(grid: TimeGrid, z: f64, a: Vec<Complex64>, b: Vec<Complex64>) -> Result<Self> {
        if a.len() != grid.n() || b.len() != grid.n() {
            return Err(Error::Usage(format!(
                "doubled vector components have {} and {} samples, grid has {}",
                a.len(),
                b.len(),
                grid.n()
            )));
        }
        if a.iter().chain(&b).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Usage("doubled vector contains non-finite samples".into()));
        }
        Ok(Self { grid, z, a, b })
    }

    /// The pair `(a, conj(a))`.
    pub fn hermitian(grid: TimeGrid, z: f64, a: Vec<Complex64>) -> Result<Self> {
        let b = a.iter().map(|v| v.conj()).collect();
        Self::new(grid, z, a, b)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn z_location(&self) -> f64 {
        self.z
    }

    pub fn a(&self) -> &[Complex64] {
        &self.a
    }

    pub fn b(&self) -> &[Complex64] {
        &self.b
    }

    /// Largest `|b - conj(a)|` relative to the largest component magnitude.
    pub fn hermiticity_defect(&self) -> f64 {
        let scale = self
            .a
            .iter()
            .chain(&self.b)
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| (b - a.conj()).norm())
            .fold(0.0, f64::max)
            / scale
    }

    fn is_exactly_hermitian(&self) -> bool {
        self.a.iter().zip(&self.b).all(|(a, b)| *b == a.conj())
    }

    /// `alpha * self + other`, located at `self`'s distance.
    pub fn axpy(&self, alpha: Complex64, other: &DoubledVector) -> Result<DoubledVector> {
        check_same(self, other)?;
        let comb = |x: &[Complex64], y: &[Complex64]| -> Vec<Complex64> {
            x.iter().zip(y).map(|(x, y)| alpha * x + y).collect()
        };
        Ok(DoubledVector {
            grid: self.grid,
            z: self.z,
            a: comb(&self.a, &other.a),
            b: comb(&self.b, &other.b),
        })
    }

    pub fn scaled(&self, alpha: Complex64) -> DoubledVector {
        DoubledVector {
            grid: self.grid,
            z: self.z,
            a: self.a.iter().map(|v| alpha * v).collect(),
            b: self.b.iter().map(|v| alpha * v).collect(),
        }
    }
}

fn check_same(v: &DoubledVector, w: &DoubledVector) -> Result<()> {
    if v.grid != w.grid {
        return Err(Error::Usage("doubled vectors live on different grids".into()));
    }
    if (v.z - w.z).abs() > Z_MATCH {
        return Err(Error::Usage(format!(
            "doubled vectors expressed at different distances ({} vs {})",
            v.z, w.z
        )));
    }
    Ok(())
}

/// `<v.a|w.a> + <v.b|w.b>`, conjugate-linear in `v`.
pub fn pairing(v: &DoubledVector, w: &DoubledVector) -> Result<Complex64> {
    check_same(v, w)?;
    Ok((dot(&v.a, &w.a) + dot(&v.b, &w.b)) * v.grid.dt())
}

/// Symmetrized vacuum covariance of the Hermitian operators
/// `\int conj(a_F) u + a_F u^dagger` and likewise for `G`: `Re <a_F|a_G>`.
pub fn vacuum_covariance(f: &DoubledVector, g: &DoubledVector) -> Result<f64> {
    check_same(f, g)?;
    for (name, v) in [("F", f), ("G", g)] {
        let defect = v.hermiticity_defect();
        if defect > HERMITIAN_TOLERANCE {
            return Err(Error::ContractViolation(format!(
                "{name} is not a Hermitian functional (|b - conj(a)| = {defect:e})"
            )));
        }
    }
    Ok(dot(&f.a, &g.a).re * f.grid.dt())
}

/// Pointwise coefficients of one nonlinear substep's tangent map
/// `[[alpha, beta], [conj(beta), conj(alpha)]]`.
struct Tangent {
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
}

impl Tangent {
    fn new(n: usize) -> Self {
        Self {
            alpha: vec![Complex64::new(0.0, 0.0); n],
            beta: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Linearization of `W -> W e^{i |W|^2 h}` about the midpoint `W`:
    /// `dW' = e^{i p h} [(1 + i p h) dW + i h W^2 dW^*]` with `p = |W|^2`.
    fn update(&mut self, midpoint: &[Complex64], h: f64) {
        for ((al, be), w) in self.alpha.iter_mut().zip(self.beta.iter_mut()).zip(midpoint) {
            let ph = w.norm_sqr() * h;
            let rot = Complex64::from_polar(1.0, ph);
            *al = rot * Complex64::new(1.0, ph);
            *be = rot * Complex64::new(0.0, h) * w * w;
        }
    }

    fn forward(&self, a: &mut [Complex64], b: &mut [Complex64]) {
        for k in 0..a.len() {
            let (al, be) = (self.alpha[k], self.beta[k]);
            let (x, y) = (a[k], b[k]);
            a[k] = al * x + be * y;
            b[k] = be.conj() * x + al.conj() * y;
        }
    }

    fn adjoint(&self, a: &mut [Complex64], b: &mut [Complex64]) {
        for k in 0..a.len() {
            let (al, be) = (self.alpha[k], self.beta[k]);
            let (x, y) = (a[k], b[k]);
            a[k] = al.conj() * x + be * y;
            b[k] = be.conj() * x + al * y;
        }
    }

    fn forward_hermitian(&self, a: &mut [Complex64]) {
        for ((v, al), be) in a.iter_mut().zip(&self.alpha).zip(&self.beta) {
            *v = al * *v + be * v.conj();
        }
    }

    fn adjoint_hermitian(&self, a: &mut [Complex64]) {
        for ((v, al), be) in a.iter_mut().zip(&self.alpha).zip(&self.beta) {
            *v = al.conj() * *v + be * v.conj();
        }
    }
}

/// Working state of one vector during a sweep. Exactly Hermitian inputs are
/// carried as `a` alone and rebuilt with `b = conj(a)` on output.
enum Pair {
    General { a: Vec<Complex64>, b: Vec<Complex64> },
    Hermitian { a: Vec<Complex64> },
}

impl Pair {
    fn from_vector(v: &DoubledVector, allow_reduced: bool) -> Self {
        if allow_reduced && v.is_exactly_hermitian() {
            Pair::Hermitian { a: v.a.clone() }
        } else {
            Pair::General {
                a: v.a.clone(),
                b: v.b.clone(),
            }
        }
    }

    fn into_vector(self, grid: TimeGrid, z: f64) -> DoubledVector {
        match self {
            Pair::General { a, b } => DoubledVector { grid, z, a, b },
            Pair::Hermitian { a } => {
                let b = a.iter().map(|v| v.conj()).collect();
                DoubledVector { grid, z, a, b }
            }
        }
    }

    /// Dispersion: `a` with the forward multiplier, `b` with its conjugate.
    fn disperse(&mut self, ops: &mut SplitStep, span: Span, adjoint: bool) {
        let (fwd_a, fwd_b) = (!adjoint, adjoint);
        let mut go = |buf: &mut [Complex64], forward: bool| {
            if forward {
                ops.linear(buf, span)
            } else {
                ops.linear_adjoint(buf, span)
            }
        };
        match self {
            Pair::General { a, b } => {
                go(a, fwd_a);
                go(b, fwd_b);
            }
            Pair::Hermitian { a } => go(a, fwd_a),
        }
    }

    fn potential(&mut self, tangent: &Tangent, adjoint: bool) {
        match (self, adjoint) {
            (Pair::General { a, b }, false) => tangent.forward(a, b),
            (Pair::General { a, b }, true) => tangent.adjoint(a, b),
            (Pair::Hermitian { a }, false) => tangent.forward_hermitian(a),
            (Pair::Hermitian { a }, true) => tangent.adjoint_hermitian(a),
        }
    }
}

fn check_on_trajectory(v: &DoubledVector, traj: &Trajectory, z: f64, what: &str) -> Result<()> {
    if v.grid != *traj.grid() {
        return Err(Error::Usage(format!("{what}: vector grid differs from trajectory grid")));
    }
    if (v.z - z).abs() > Z_MATCH {
        return Err(Error::Usage(format!(
            "{what}: vector is expressed at z = {} but the trajectory requires z = {z}",
            v.z
        )));
    }
    Ok(())
}

fn sweep_forward(pairs: &mut [Pair], traj: &Trajectory) {
    let steps = traj.steps();
    if steps == 0 {
        return;
    }
    let grid = *traj.grid();
    let mut ops = SplitStep::new(grid, traj.dz());
    let mut tangent = Tangent::new(grid.n());
    for p in pairs.iter_mut() {
        p.disperse(&mut ops, Span::Half, false);
    }
    traj.for_each_midpoint(|k, w| {
        tangent.update(w, traj.dz());
        let span = if k + 1 < steps { Span::Full } else { Span::Half };
        for p in pairs.iter_mut() {
            p.potential(&tangent, false);
            p.disperse(&mut ops, span, false);
        }
    });
}

fn sweep_backward(pairs: &mut [Pair], traj: &Trajectory) {
    let steps = traj.steps();
    if steps == 0 {
        return;
    }
    let grid = *traj.grid();
    let mut ops = SplitStep::new(grid, traj.dz());
    let mut tangent = Tangent::new(grid.n());
    for p in pairs.iter_mut() {
        p.disperse(&mut ops, Span::Half, true);
    }
    traj.for_each_midpoint_rev(|k, w| {
        tangent.update(w, traj.dz());
        let span = if k > 0 { Span::Full } else { Span::Half };
        for p in pairs.iter_mut() {
            p.potential(&tangent, true);
            p.disperse(&mut ops, span, true);
        }
    });
}

/// Vectors per lockstep sweep; each sweep shares one pass over the trajectory.
const BATCH: usize = 16;

fn run_batched(
    vs: &[DoubledVector],
    traj: &Trajectory,
    allow_reduced: bool,
    backward: bool,
) -> Vec<DoubledVector> {
    let grid = *traj.grid();
    let z_out = if backward { 0.0 } else { traj.z_end() };
    vs.par_chunks(BATCH)
        .flat_map_iter(|chunk| {
            let mut pairs: Vec<Pair> = chunk
                .iter()
                .map(|v| Pair::from_vector(v, allow_reduced))
                .collect();
            if backward {
                sweep_backward(&mut pairs, traj);
            } else {
                sweep_forward(&mut pairs, traj);
            }
            pairs.into_iter().map(move |p| p.into_vector(grid, z_out))
        })
        .collect()
}

/// Evolves a perturbation given at `z = 0` to the end of the trajectory.
pub fn forward_linearized(v0: &DoubledVector, traj: &Trajectory) -> Result<DoubledVector> {
    Ok(forward_linearized_many(std::slice::from_ref(v0), traj)?.remove(0))
}

pub fn forward_linearized_many(vs: &[DoubledVector], traj: &Trajectory) -> Result<Vec<DoubledVector>> {
    for v in vs {
        check_on_trajectory(v, traj, 0.0, "forward_linearized")?;
    }
    Ok(run_batched(vs, traj, true, false))
}

/// Back-propagates a functional given at the end of the trajectory to `z = 0`.
pub fn backward_adjoint(v_l: &DoubledVector, traj: &Trajectory) -> Result<DoubledVector> {
    Ok(backward_adjoint_many(std::slice::from_ref(v_l), traj)?.remove(0))
}

/// Back-propagates several functionals through one shared trajectory.
/// Output order matches input order.
pub fn backward_adjoint_many(vs: &[DoubledVector], traj: &Trajectory) -> Result<Vec<DoubledVector>> {
    for v in vs {
        check_on_trajectory(v, traj, traj.z_end(), "backward_adjoint")?;
    }
    Ok(run_batched(vs, traj, true, true))
}

/// Forward flow without the Hermitian fast path.
#[cfg(test)]
pub(crate) fn forward_linearized_general(v0: &DoubledVector, traj: &Trajectory) -> Result<DoubledVector> {
    check_on_trajectory(v0, traj, 0.0, "forward_linearized")?;
    Ok(run_batched(std::slice::from_ref(v0), traj, false, false).remove(0))
}

/// Backward flow without the Hermitian fast path.
#[cfg(test)]
pub(crate) fn backward_adjoint_general(v_l: &DoubledVector, traj: &Trajectory) -> Result<DoubledVector> {
    check_on_trajectory(v_l, traj, traj.z_end(), "backward_adjoint")?;
    Ok(run_batched(std::slice::from_ref(v_l), traj, false, true).remove(0))
}

/// Monte-Carlo variance estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub variance: f64,
    pub std_error: f64,
}

/// A Hermitian functional evaluated after `step` steps of the trajectory.
#[derive(Debug, Clone)]
pub struct Probe {
    pub step: usize,
    pub functional: DoubledVector,
}

/// `splitmix64` output for `index` within the stream seeded by `seed`.
pub fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimates the variance of `2 Re <a_f|du(L)>` over vacuum input noise by
/// sampling and forward propagation.
pub fn mc_estimate_variance(
    f_l: &DoubledVector,
    traj: &Trajectory,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let probe = Probe {
        step: traj.steps(),
        functional: f_l.clone(),
    };
    Ok(mc_estimate_probes(&[probe], traj, samples, seed)?[0])
}

/// Monte-Carlo estimates for several probes sharing the same noise realizations.
///
/// Input noise is an independent complex Gaussian per time sample with
/// `E|du_k|^2 = 1 / (2 dt)`, the symmetrically ordered discretization of
/// `[u(t), u^dagger(t')] = delta(t - t')`. Realization `i` draws from a
/// ChaCha8 stream seeded with `splitmix64(seed, i)`, so results do not depend
/// on scheduling.
pub fn mc_estimate_probes(
    probes: &[Probe],
    traj: &Trajectory,
    samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::config(
            "mc_samples",
            format!("at least {MIN_MC_SAMPLES} samples are required, got {samples}"),
        ));
    }
    let grid = *traj.grid();
    for p in probes {
        if p.step > traj.steps() {
            return Err(Error::Usage(format!(
                "probe at step {} beyond trajectory end {}",
                p.step,
                traj.steps()
            )));
        }
        let z = p.step as f64 * traj.dz();
        check_on_trajectory(&p.functional, traj, z, "mc_estimate")?;
        if p.functional.hermiticity_defect() > HERMITIAN_TOLERANCE {
            return Err(Error::ContractViolation("Monte-Carlo probe is not Hermitian".into()));
        }
    }

    let sigma = (0.25 / grid.dt()).sqrt();
    let indices: Vec<usize> = (0..samples).collect();
    let per_sample: Vec<Vec<f64>> = indices
        .par_chunks(BATCH)
        .flat_map_iter(|chunk| {
            let mut noise: Vec<Vec<Complex64>> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, i as u64));
                    (0..grid.n())
                        .map(|_| {
                            let re: f64 = StandardNormal.sample(&mut rng);
                            let im: f64 = StandardNormal.sample(&mut rng);
                            Complex64::new(sigma * re, sigma * im)
                        })
                        .collect()
                })
                .collect();
            let mut out = vec![vec![0.0; probes.len()]; chunk.len()];
            propagate_noise(&mut noise, traj, probes, &mut out);
            out.into_iter()
        })
        .collect();

    let n = samples as f64;
    Ok((0..probes.len())
        .map(|j| {
            let mean = per_sample.iter().map(|m| m[j]).sum::<f64>() / n;
            let var = per_sample.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            McEstimate {
                variance: var,
                std_error: var * (2.0 / (n - 1.0)).sqrt(),
            }
        })
        .collect())
}

/// Forward-propagates Hermitian noise realizations and records
/// `2 Re <a_probe | du>` at each probe's step.
fn propagate_noise(noise: &mut [Vec<Complex64>], traj: &Trajectory, probes: &[Probe], out: &mut [Vec<f64>]) {
    let grid = *traj.grid();
    let dt = grid.dt();
    let steps = traj.steps();
    let mut ops = SplitStep::new(grid, traj.dz());
    let mut tangent = Tangent::new(grid.n());
    let measure = |buf: &[Complex64], probe: &Probe| 2.0 * dot(probe.functional.a(), buf).re * dt;

    for (s, a) in noise.iter().enumerate() {
        for (j, p) in probes.iter().enumerate() {
            if p.step == 0 {
                out[s][j] = measure(a, p);
            }
        }
    }
    if steps == 0 {
        return;
    }
    for a in noise.iter_mut() {
        ops.linear(a, Span::Half);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); grid.n()];
    traj.for_each_midpoint(|k, w| {
        tangent.update(w, traj.dz());
        let done = k + 1;
        for (s, a) in noise.iter_mut().enumerate() {
            tangent.forward_hermitian(a);
            if done < steps {
                for (j, p) in probes.iter().enumerate() {
                    if p.step == done {
                        scratch.copy_from_slice(a);
                        ops.linear(&mut scratch, Span::Half);
                        out[s][j] = measure(&scratch, p);
                    }
                }
                ops.linear(a, Span::Full);
            } else {
                ops.linear(a, Span::Half);
                for (j, p) in probes.iter().enumerate() {
                    if p.step == steps {
                        out[s][j] = measure(a, p);
                    }
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{fundamental_soliton, two_soliton, SolitonParams};
    use crate::grid::{ComplexEnvelope, Domain};
    use crate::propagator::{ssfm_propagate, ssfm_propagate_with, PropagateOptions, StepPlan, Storage};
    use proptest::prelude::*;
    use rand::Rng;

    fn grid() -> TimeGrid {
        TimeGrid::new(512, 32.0).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, grid: &TimeGrid) -> Vec<Complex64> {
        // Smooth, localized random profile so that dispersion cannot alias it.
        let c: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.3..1.5),
                )
            })
            .collect();
        grid.times()
            .into_iter()
            .map(|t| {
                c.iter()
                    .map(|&(re, im, t0, w)| {
                        Complex64::new(re, im) * (-(t - t0) * (t - t0) / (2.0 * w * w)).exp()
                    })
                    .sum()
            })
            .collect()
    }

    fn random_pair(rng: &mut ChaCha8Rng, grid: &TimeGrid, z: f64) -> DoubledVector {
        DoubledVector::new(*grid, z, random_vec(rng, grid), random_vec(rng, grid)).unwrap()
    }

    fn zero_trajectory(z: f64) -> Trajectory {
        let g = grid();
        ssfm_propagate(&ComplexEnvelope::zeros(g, Domain::Time), &StepPlan::new(z, 1e-3).unwrap())
            .unwrap()
            .1
    }

    fn breather_trajectory(z: f64) -> Trajectory {
        let g = grid();
        let p = SolitonParams::new(0.5, 1.5).unwrap();
        let u0 = two_soliton(&p, 0.0, &g).unwrap();
        ssfm_propagate(&u0, &StepPlan::new(z, 1e-3).unwrap()).unwrap().1
    }

    fn sum_sq(v: &[Complex64]) -> f64 {
        v.iter().map(|x| x.norm_sqr()).sum()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn tangent_flow_matches_finite_differences() {
        let g = grid();
        let p = SolitonParams::new(0.5, 1.5).unwrap();
        let u0 = two_soliton(&p, 0.0, &g).unwrap();
        let plan = StepPlan::new(1.0, 1e-3).unwrap();
        let (_, traj) = ssfm_propagate(&u0, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_vec(&mut rng, &g);
        let out = forward_linearized(&DoubledVector::hermitian(g, 0.0, w.clone()).unwrap(), &traj).unwrap();
        let eps = 1e-5;
        let shifted = |s: f64| {
            let v = u0.values().iter().zip(&w).map(|(u, d)| u + s * d).collect();
            ssfm_propagate(&ComplexEnvelope::new(g, Domain::Time, v).unwrap(), &plan).unwrap().0
        };
        let (plus, minus) = (shifted(eps), shifted(-eps));
        let fd: Vec<Complex64> = plus
            .values()
            .iter()
            .zip(minus.values())
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let rel = (sum_sq(
            &fd.iter().zip(out.a()).map(|(x, y)| x - y).collect::<Vec<_>>(),
        ) / sum_sq(&fd))
        .sqrt();
        assert!(rel < 1e-7, "{rel}");
    }

    #[test]
    fn free_field_conserves_component_norms() {
        let traj = zero_trajectory(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v0 = random_pair(&mut rng, traj.grid(), 0.0);
        let out = forward_linearized(&v0, &traj).unwrap();
        assert!((sum_sq(out.a()) - sum_sq(v0.a())).abs() < 1e-12 * sum_sq(v0.a()));
        assert!((sum_sq(out.b()) - sum_sq(v0.b())).abs() < 1e-12 * sum_sq(v0.b()));

        let vl = DoubledVector::hermitian(*traj.grid(), traj.z_end(), random_vec(&mut rng, traj.grid())).unwrap();
        let back = backward_adjoint_general(&vl, &traj).unwrap();
        assert!((sum_sq(back.a()) - sum_sq(vl.a())).abs() < 1e-12 * sum_sq(vl.a()));
    }

    #[test]
    fn translation_mode_is_preserved() {
        let g = TimeGrid::new(1024, 32.0).unwrap();
        let (l, dz) = (1.0, 5e-4);
        let u0 = fundamental_soliton(1.0, 0.0, &g).unwrap();
        let traj = ssfm_propagate(&u0, &StepPlan::new(l, dz).unwrap()).unwrap().1;
        // d/dt of sech(t) e^{i z/2} is -tanh(t) sech(t) e^{i z/2}.
        let mode = |z: f64| -> Vec<Complex64> {
            g.times()
                .into_iter()
                .map(|t| Complex64::from_polar(-t.tanh() / t.cosh(), z / 2.0))
                .collect()
        };
        let v0 = DoubledVector::hermitian(g, 0.0, mode(0.0)).unwrap();
        let out = forward_linearized(&v0, &traj).unwrap();
        let expected = mode(l);
        let rel = (sum_sq(
            &out.a().iter().zip(&expected).map(|(x, y)| x - y).collect::<Vec<_>>(),
        ) / sum_sq(&expected))
        .sqrt();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn conjugation_closure_on_general_path() {
        let traj = breather_trajectory(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v0 = DoubledVector::hermitian(*traj.grid(), 0.0, random_vec(&mut rng, traj.grid())).unwrap();
        let out = forward_linearized_general(&v0, &traj).unwrap();
        assert!(out.hermiticity_defect() < 1e-12, "{}", out.hermiticity_defect());
        let fast = forward_linearized(&v0, &traj).unwrap();
        assert!(max_diff(fast.a(), out.a()) < 1e-12 * sum_sq(out.a()).sqrt());

        let vl = DoubledVector::hermitian(*traj.grid(), traj.z_end(), random_vec(&mut rng, traj.grid())).unwrap();
        let back = backward_adjoint_general(&vl, &traj).unwrap();
        assert!(back.hermiticity_defect() < 1e-12);
        let fast = backward_adjoint(&vl, &traj).unwrap();
        assert!(max_diff(fast.a(), back.a()) < 1e-12 * sum_sq(back.a()).sqrt());
    }

    #[test]
    fn empty_trajectory_is_identity() {
        let traj = breather_trajectory(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_pair(&mut rng, traj.grid(), 0.0);
        assert_eq!(backward_adjoint(&v, &traj).unwrap(), v);
        assert_eq!(forward_linearized(&v, &traj).unwrap(), v);
    }

    #[test]
    fn pairing_is_conserved_by_adjoint() {
        let traj = breather_trajectory(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..3 {
            let w0 = random_pair(&mut rng, traj.grid(), 0.0);
            let vl = random_pair(&mut rng, traj.grid(), traj.z_end());
            let wl = forward_linearized(&w0, &traj).unwrap();
            let v0 = backward_adjoint(&vl, &traj).unwrap();
            let end = pairing(&vl, &wl).unwrap();
            let start = pairing(&v0, &w0).unwrap();
            assert!((end - start).norm() < 1e-8 * end.norm(), "{end} vs {start}");
        }
    }

    #[test]
    fn recompute_mode_matches_stored() {
        let g = grid();
        let p = SolitonParams::new(2.0 / 3.0, 4.0 / 3.0).unwrap();
        let u0 = two_soliton(&p, 0.0, &g).unwrap();
        let plan = StepPlan::new(0.5, 1e-3).unwrap();
        let stored = ssfm_propagate(&u0, &plan).unwrap().1;
        let opts = PropagateOptions { storage: Storage::Recompute, ..Default::default() };
        let recompute = ssfm_propagate_with(&u0, &plan, opts).unwrap().1;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let vl = DoubledVector::hermitian(g, 0.5, random_vec(&mut rng, &g)).unwrap();
        let a = backward_adjoint(&vl, &stored).unwrap();
        let b = backward_adjoint(&vl, &recompute).unwrap();
        let rel = max_diff(a.a(), b.a()) / a.a().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn pairing_properties() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = random_vec(&mut rng, &g);
        let v = DoubledVector::hermitian(g, 0.0, a.clone()).unwrap();
        let p = pairing(&v, &v).unwrap();
        assert!(p.im.abs() < 1e-14 * p.re);
        assert!((p.re - 2.0 * sum_sq(&a) * g.dt()).abs() < 1e-12 * p.re);

        let w = random_pair(&mut rng, &g, 0.0);
        let x = random_pair(&mut rng, &g, 0.0);
        let alpha = Complex64::new(0.3, -1.2);
        let lin = pairing(&v, &w.axpy(alpha, &x).unwrap()).unwrap();
        let expect = alpha * pairing(&v, &w).unwrap() + pairing(&v, &x).unwrap();
        assert!((lin - expect).norm() < 1e-12 * expect.norm());
        let anti = pairing(&w.scaled(alpha), &x).unwrap();
        assert!((anti - alpha.conj() * pairing(&w, &x).unwrap()).norm() < 1e-12 * anti.norm());

        let elsewhere = random_pair(&mut rng, &g, 1.0);
        assert!(matches!(pairing(&v, &elsewhere), Err(Error::Usage(_))));
    }

    #[test]
    fn vacuum_covariance_rules() {
        let g = grid();
        let norm = |t: f64| Complex64::new(1.0 / (2f64.sqrt() * t.cosh()), 0.0);
        let f = DoubledVector::hermitian(g, 0.0, g.times().into_iter().map(norm).collect()).unwrap();
        assert!((vacuum_covariance(&f, &f).unwrap() - 1.0).abs() < 1e-10);

        let even = DoubledVector::hermitian(g, 0.0, g.times().iter().map(|t| Complex64::new((-t * t).exp(), 0.0)).collect()).unwrap();
        let odd = DoubledVector::hermitian(g, 0.0, g.times().iter().map(|t| Complex64::new(t * (-t * t).exp(), 0.0)).collect()).unwrap();
        assert!(vacuum_covariance(&even, &odd).unwrap().abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let bad = random_pair(&mut rng, &g, 0.0);
        assert!(matches!(vacuum_covariance(&bad, &f), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn mc_free_field_is_shot_noise() {
        let traj = zero_trajectory(0.2);
        let g = *traj.grid();
        let a: Vec<Complex64> = g.times().into_iter().map(|t| Complex64::new(1.0 / (2f64.sqrt() * t.cosh()), 0.0)).collect();
        let f = DoubledVector::hermitian(g, traj.z_end(), a).unwrap();
        let est = mc_estimate_variance(&f, &traj, 10_000, 99).unwrap();
        assert!((est.variance - 1.0).abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn mc_is_deterministic_and_validates_inputs() {
        let traj = breather_trajectory(0.05);
        let g = *traj.grid();
        let a: Vec<Complex64> = traj.final_field().values().iter().map(|v| v / 8f64.sqrt()).collect();
        let f = DoubledVector::hermitian(g, traj.z_end(), a).unwrap();
        let x = mc_estimate_variance(&f, &traj, 200, 7).unwrap();
        let y = mc_estimate_variance(&f, &traj, 200, 7).unwrap();
        assert_eq!(x.variance.to_bits(), y.variance.to_bits());
        assert_eq!(x.std_error.to_bits(), y.std_error.to_bits());
        assert!(matches!(mc_estimate_variance(&f, &traj, 50, 7), Err(Error::Config { .. })));
        let wrong_z = DoubledVector::hermitian(g, 0.0, f.a().to_vec()).unwrap();
        assert!(mc_estimate_variance(&wrong_z, &traj, 200, 7).is_err());
    }

    #[test]
    fn mc_intermediate_probe_matches_prefix_run() {
        let traj = breather_trajectory(0.1);
        let g = *traj.grid();
        let pre = traj.prefix(40).unwrap();
        let a: Vec<Complex64> = pre.final_field().values().iter().map(|v| v / 8f64.sqrt()).collect();
        let f = DoubledVector::hermitian(g, pre.z_end(), a).unwrap();
        let via_probe = mc_estimate_probes(&[Probe { step: 40, functional: f.clone() }], &traj, 300, 1).unwrap()[0];
        let direct = mc_estimate_variance(&f, &pre, 300, 1).unwrap();
        assert!((via_probe.variance - direct.variance).abs() < 1e-12 * direct.variance);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn forward_flow_is_linear(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let traj = breather_trajectory(0.2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_pair(&mut rng, traj.grid(), 0.0);
            let w = random_pair(&mut rng, traj.grid(), 0.0);
            let alpha = Complex64::new(re, im);
            let lhs = forward_linearized(&v.axpy(alpha, &w).unwrap(), &traj).unwrap();
            let rhs = forward_linearized(&v, &traj).unwrap().axpy(alpha, &forward_linearized(&w, &traj).unwrap()).unwrap();
            let scale = lhs.a().iter().chain(lhs.b()).map(|x| x.norm()).fold(0.0, f64::max);
            prop_assert!(max_diff(lhs.a(), rhs.a()) < 1e-10 * scale);
            prop_assert!(max_diff(lhs.b(), rhs.b()) < 1e-10 * scale);
        }
    }
}
