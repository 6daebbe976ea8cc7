//! Time evolution of the unreduced constrained system and Fourier peak
//! extraction, used to cross-check [`crate::engine::spectrum`].
//!
//! Propagation uses a matrix exponential computed here by scaling and
//! squaring, so nothing is shared with the eigen-decomposition path.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::algebra::{gradient_matrix, max_abs, pseudo_inverse, re, AffinePhaseFn, BracketMatrix, CMatrix, CVector, PhaseSpace, QuadHamiltonian, Scalar};
use crate::engine::{Analysis, ModeKind};
use crate::error::{Error, Result};

/// `exp(A)` by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm1 = (0..n).map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / re(2f64.powi(s));
    let mut term = CMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / re(k as f64);
        sum += &term;
        if max_abs(&term) < 1e-18 * max_abs(&sum) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Orthogonal (Euclidean) projection of `z` onto the affine surface where
/// every constraint vanishes.
pub fn project_onto_surface(z: &CVector, constraints: &[AffinePhaseFn]) -> CVector {
    Projector::new(z.len(), constraints).apply(z)
}

struct Projector {
    constraints: Vec<AffinePhaseFn>,
    /// `(Gᵀ)⁺`
    lift: CMatrix,
}

impl Projector {
    fn new(dim: usize, constraints: &[AffinePhaseFn]) -> Self {
        let g = gradient_matrix(&constraints.iter().map(|f| f.grad.clone()).collect::<Vec<_>>(), dim);
        let lift = if constraints.is_empty() { CMatrix::zeros(dim, 0) } else { pseudo_inverse(&g.transpose(), 1e-12) };
        Self { constraints: constraints.to_vec(), lift }
    }

    fn residual(&self, z: &CVector) -> CVector {
        CVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|f| f.eval(z)))
    }

    fn apply(&self, z: &CVector) -> CVector {
        if self.constraints.is_empty() {
            return z.clone();
        }
        z - &self.lift * self.residual(z)
    }
}

/// Standard Gaussian state projected onto the constraint surface.
pub fn random_surface_point(dim: usize, constraints: &[AffinePhaseFn], seed: u64) -> CVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = CVector::from_fn(dim, |_, _| re(StandardNormal.sample(&mut rng)));
    project_onto_surface(&z, constraints)
}

/// Gaussian linear observable `Σ cᵢ zᵢ`.
pub fn random_observable(dim: usize, seed: u64) -> AffinePhaseFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    AffinePhaseFn::new(CVector::from_fn(dim, |_, _| re(StandardNormal.sample(&mut rng))), re(0.0))
}

fn surface_residual(z: &CVector, constraints: &[AffinePhaseFn]) -> f64 {
    constraints.iter().map(|f| f.eval(z).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// `steps + 1` states, `states[i]` at `t = i·dt`.
    pub states: Vec<CVector>,
    /// `max_t max_i |φᵢ(z(t))|` over the propagated states, before each
    /// step's return to the surface.
    pub constraint_drift: f64,
    /// `max_t |H(z(t)) − H(z₀)|` for the propagating Hamiltonian.
    pub energy_drift: f64,
    pub initial_energy: Scalar,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| i as f64 * self.dt)
    }

    pub fn series(&self, observable: &AffinePhaseFn) -> Vec<Scalar> {
        self.states.iter().map(|z| observable.eval(z)).collect()
    }

    /// `t,<label>...` with real parts; imaginary parts are appended as
    /// `im_<label>` columns when any state is complex.
    pub fn write_csv<W: Write>(&self, w: W, space: &PhaseSpace) -> Result<()> {
        let complex = self.states.iter().any(|z| z.iter().any(|c| c.im != 0.0));
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(space.labels());
        if complex {
            header.extend(space.labels().iter().map(|l| format!("im_{l}")));
        }
        out.write_record(&header)?;
        for (t, z) in self.times().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(z.iter().map(|c| c.re.to_string()));
            if complex {
                row.extend(z.iter().map(|c| c.im.to_string()));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Exact propagation of `ż = J ∇H(z)` in steps of `dt`.
///
/// The constraint surface is invariant under the flow, but the extension of
/// the multipliers off the surface is arbitrary and can make transverse
/// directions unstable, so rounding errors are removed after every step by
/// an orthogonal projection. The recorded drift is measured before that
/// projection: a flow that is not tangent to the surface shows up as an
/// `O(dt)` residual.
pub fn evolve(
    h: &QuadHamiltonian,
    j: &BracketMatrix,
    constraints: &[AffinePhaseFn],
    z0: &CVector,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    let dim = j.dim();
    if h.dim() != dim || z0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: z0.len().max(h.dim()) });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let proj = Projector::new(dim, constraints);
    let start = surface_residual(z0, constraints);
    if start > 1e-10 * z0.norm().max(1.0) {
        return Err(Error::OffSurface { residual: start });
    }
    // affine flow as a linear one on (z, 1)
    let mut gen = CMatrix::zeros(dim + 1, dim + 1);
    gen.view_mut((0, 0), (dim, dim)).copy_from(&(j.matrix() * &h.hess * re(dt)));
    gen.view_mut((0, dim), (dim, 1)).copy_from(&(j.matrix() * &h.lin * re(dt)));
    let step = expm(&gen);

    let e0 = h.eval(z0);
    let mut states = Vec::with_capacity(steps + 1);
    let mut aug = CVector::zeros(dim + 1);
    aug.rows_mut(0, dim).copy_from(z0);
    aug[dim] = re(1.0);
    let mut constraint_drift = start;
    let mut energy_drift: f64 = 0.0;
    states.push(z0.clone());
    for _ in 0..steps {
        aug = &step * &aug;
        let moved = aug.rows(0, dim).into_owned();
        if moved.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("trajectory"));
        }
        constraint_drift = constraint_drift.max(surface_residual(&moved, constraints));
        let z = proj.apply(&moved);
        aug.rows_mut(0, dim).copy_from(&z);
        energy_drift = energy_drift.max((h.eval(&z) - e0).norm());
        states.push(z);
    }
    Ok(Trajectory { dt, states, constraint_drift, energy_drift, initial_energy: e0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub omega: f64,
    pub power: f64,
}

/// Blackman–Harris main-lobe half width, in bins.
pub const MIN_PEAK_BIN: usize = 4;

/// Number of leading samples used by [`extract_frequencies`]: the largest
/// power of two not exceeding the trajectory length.
pub fn fft_len(samples: usize) -> usize {
    if samples == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - samples.leading_zeros())
    }
}

/// `2π / (dt · N)` for the FFT length used on `samples` samples.
pub fn frequency_bin(dt: f64, samples: usize) -> f64 {
    2.0 * std::f64::consts::PI / (dt * fft_len(samples) as f64)
}

/// Spectral peaks of an observable's time series.
///
/// The series is linearly detrended (removing constant and free-particle
/// components), Blackman–Harris windowed, and transformed; power at `±ω` is
/// folded together. Peaks are local maxima above ten times the median power,
/// refined by parabolic interpolation of the log power. The lowest
/// [`MIN_PEAK_BIN`] bins lie inside the window's main lobe around zero
/// frequency and are not searched.
pub fn extract_frequencies(traj: &Trajectory, observable: &AffinePhaseFn) -> Result<Vec<Peak>> {
    let n = fft_len(traj.states.len());
    if n < 256 {
        return Err(Error::InvalidParameter(format!("need at least 256 samples, got {}", traj.states.len())));
    }
    let raw: Vec<Scalar> = traj.states[..n].iter().map(|z| observable.eval(z)).collect();

    // least-squares line through the samples
    let nf = n as f64;
    let tmean = (nf - 1.0) / 2.0;
    let ymean = raw.iter().sum::<Scalar>() / nf;
    let stt: f64 = (0..n).map(|i| (i as f64 - tmean).powi(2)).sum();
    let sty: Scalar = raw.iter().enumerate().map(|(i, y)| (y - ymean) * (i as f64 - tmean)).sum();
    let slope = sty / stt;

    let (a0, a1, a2, a3) = (0.35875, 0.48829, 0.14128, 0.01168);
    let tau = 2.0 * std::f64::consts::PI / (nf - 1.0);
    let mut buf: Vec<Scalar> = raw
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let x = i as f64;
            let w = a0 - a1 * (tau * x).cos() + a2 * (2.0 * tau * x).cos() - a3 * (3.0 * tau * x).cos();
            (y - ymean - slope * (x - tmean)) * w
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let power: Vec<f64> = (0..=half)
        .map(|k| {
            let pos = buf[k].norm_sqr();
            if k == 0 || k == half {
                pos
            } else {
                pos + buf[n - k].norm_sqr()
            }
        })
        .collect();
    let pmax = power.iter().copied().fold(0.0, f64::max);
    if pmax == 0.0 {
        return Ok(Vec::new());
    }
    let mut sorted = power.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    // rounding noise of a pure trend must not count as signal
    let variance: f64 = raw.iter().map(|y| (y - ymean).norm_sqr()).sum();
    let threshold = (10.0 * median).max(1e-8 * pmax).max(1e-12 * nf * variance);

    let bin = frequency_bin(traj.dt, traj.states.len());
    let mut peaks = Vec::new();
    for k in MIN_PEAK_BIN..half {
        let p = power[k];
        if p > threshold && p > power[k - 1] && p >= power[k + 1] {
            let (l, c, r) = (power[k - 1].max(1e-300).ln(), p.ln(), power[k + 1].max(1e-300).ln());
            let denom = l - 2.0 * c + r;
            let delta = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
            peaks.push(Peak { omega: (k as f64 + delta) * bin, power: p });
        }
    }
    Ok(peaks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub dt: f64,
    pub time: f64,
    pub seed: u64,
    pub drift_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { dt: 0.01, time: 100.0, seed: 7, drift_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub constraint_drift: f64,
    pub energy_drift: f64,
    pub initial_energy: f64,
    pub bin: f64,
    pub peaks: Vec<Peak>,
    /// Real engine oscillator frequencies, with multiplicity collapsed.
    pub engine: Vec<f64>,
    pub free_modes: usize,
    pub unmatched_engine: Vec<f64>,
    /// Engine frequencies below the lowest searched bin.
    pub unresolved: Vec<f64>,
    pub unmatched_peaks: Vec<f64>,
    pub drift_ok: bool,
    pub energy_ok: bool,
    pub peaks_ok: bool,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.drift_ok && self.energy_ok && self.peaks_ok
    }
}

/// Evolves the full constrained system of a completed analysis with its
/// total Hamiltonian from a random surface point and compares the Fourier
/// peaks of a random observable with the engine's oscillator frequencies.
pub fn cross_check(analysis: &Analysis, opts: &VerifyOptions) -> Result<VerifyReport> {
    let red = analysis
        .reduction()
        .ok_or_else(|| Error::InvalidParameter("analysis has no reduction (gauge required)".into()))?;
    let osc: Vec<Scalar> = red.spectrum.oscillators().map(|m| m.omega).collect();
    if let Some(bad) = red.spectrum.oscillators().find(|m| !m.is_real()) {
        return Err(Error::Domain(format!(
            "oscillator ω = {} is complex; the oracle needs a real spectrum",
            crate::algebra::fmt_scalar(bad.omega)
        )));
    }
    let space = analysis.ledger.space();
    let dim = space.dim();
    let j = space.symplectic();
    let constraints = red.fixed.functions();
    let steps = (opts.time / opts.dt).round() as usize;
    let z0 = random_surface_point(dim, &constraints, opts.seed);
    let traj = evolve(&red.total_hamiltonian, &j, &constraints, &z0, opts.dt, steps)?;
    let obs = random_observable(dim, opts.seed);
    let peaks = extract_frequencies(&traj, &obs)?;
    let bin = frequency_bin(opts.dt, traj.states.len());

    let engine: Vec<f64> = osc.iter().map(|w| w.re).collect();
    let floor = MIN_PEAK_BIN as f64 * bin;
    let unresolved: Vec<f64> = engine.iter().copied().filter(|w| *w < floor).collect();
    let unmatched_engine: Vec<f64> = engine
        .iter()
        .copied()
        .filter(|w| *w >= floor && !peaks.iter().any(|p| (p.omega - w).abs() <= bin))
        .collect();
    let unmatched_peaks: Vec<f64> = peaks
        .iter()
        .map(|p| p.omega)
        .filter(|p| !engine.iter().any(|w| (p - w).abs() <= bin))
        .collect();
    let e0 = traj.initial_energy.norm();
    Ok(VerifyReport {
        constraint_drift: traj.constraint_drift,
        energy_drift: traj.energy_drift,
        initial_energy: traj.initial_energy.re,
        bin,
        peaks,
        engine,
        free_modes: red.spectrum.count(ModeKind::Free),
        unmatched_engine: unmatched_engine.clone(),
        unresolved,
        unmatched_peaks: unmatched_peaks.clone(),
        drift_ok: traj.constraint_drift < opts.drift_tol,
        energy_ok: traj.energy_drift < opts.drift_tol * e0.max(1.0),
        peaks_ok: unmatched_engine.is_empty() && unmatched_peaks.is_empty(),
    })
}
