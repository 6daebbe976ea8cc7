//! Model builders and their closed-form spectra.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algebra::{re, AffinePhaseFn, CMatrix, PhaseSpace, Scalar};
use crate::engine::QuadLagrangian;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Jackiw–Rajaraman parameter, possibly complex.
    pub a: Scalar,
    pub e: f64,
    /// Chern–Simons / cranking strength.
    pub b: f64,
    /// Cranking spring constant, Proca mass squared.
    pub k_spring: f64,
    /// Wavenumber of the field-mode reduction.
    pub k_mode: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { a: re(2.0), e: 1.0, b: 1.0, k_spring: 1.0, k_mode: 1.0 }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e.is_finite()) {
            return Err(Error::InvalidParameter(format!("e must be positive, got {}", self.e)));
        }
        if !(self.k_mode >= 0.0 && self.k_mode.is_finite()) {
            return Err(Error::InvalidParameter(format!("k_mode must be non-negative, got {}", self.k_mode)));
        }
        if !(self.a.re.is_finite() && self.a.im.is_finite() && self.b.is_finite() && self.k_spring.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "csm")]
    Csm,
    #[serde(rename = "csm-mode")]
    CsmMode,
    #[serde(rename = "cranking")]
    Cranking,
    #[serde(rename = "mcsp-point")]
    McspPoint,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Csm, ModelId::CsmMode, ModelId::Cranking, ModelId::McspPoint];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Csm => "csm",
            ModelId::CsmMode => "csm-mode",
            ModelId::Cranking => "cranking",
            ModelId::McspPoint => "mcsp-point",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelId::Csm => "chiral Schwinger model, spatially constant fields (A0, A1, phi)",
            ModelId::CsmMode => "chiral Schwinger model, one Fourier mode of wavenumber k (cos/sin doublets)",
            ModelId::Cranking => "cranking model: planar oscillator in a rotating frame",
            ModelId::McspPoint => "Maxwell-Chern-Simons-Proca at zero momentum (A0, A1, A2)",
        }
    }

    /// Parameters the builder reads.
    pub fn parameters(self) -> &'static [&'static str] {
        match self {
            ModelId::Csm => &["a", "e"],
            ModelId::CsmMode => &["a", "e", "k"],
            ModelId::Cranking | ModelId::McspPoint => &["B", "k"],
        }
    }

    pub fn build(self, p: &ModelParams) -> Result<QuadLagrangian> {
        match self {
            ModelId::Csm => csm_particle(p.a, p.e),
            ModelId::CsmMode => csm_field_mode(p.k_mode, p.a, p.e),
            ModelId::Cranking => cranking(p.b, p.k_spring),
            ModelId::McspPoint => mcsp_point(p.b, p.k_spring),
        }
    }

    /// Gauge conditions used when the model turns out to carry first-class
    /// constraints: temporal gauge on every `A0` coordinate.
    pub fn default_gauges(self, space: &PhaseSpace) -> Vec<AffinePhaseFn> {
        let labels: &[&str] = match self {
            ModelId::Csm => &["A0"],
            ModelId::CsmMode => &["A0c", "A0s"],
            ModelId::Cranking | ModelId::McspPoint => &[],
        };
        labels.iter().filter_map(|l| space.coordinate(l).ok()).collect()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model `{s}`")))
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn check_e(e: f64) -> Result<()> {
    if e > 0.0 && e.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("e must be positive, got {e}")))
    }
}

/// Chiral Schwinger model with spatially constant fields:
/// `L = ½Ȧ₁² + ½φ̇² + e(A₀φ̇ + Ȧ₁φ) + (ae²/2)(A₀² − A₁²)`.
///
/// The momentum conjugate to `A₁` is labelled `p_A1` with sign −1: the
/// lower-index `π₁` of the field theory is `−p_A1`.
pub fn csm_particle(a: Scalar, e: f64) -> Result<QuadLagrangian> {
    check_e(e)?;
    let space = PhaseSpace::with_momenta(
        labels(&["A0", "A1", "phi"]),
        labels(&["p_A0", "p_A1", "p_phi"]),
        vec![1.0, -1.0, 1.0],
    )?;
    let m = CMatrix::from_diagonal(&crate::algebra::CVector::from_vec(vec![re(0.0), re(1.0), re(1.0)]));
    let mut n = CMatrix::zeros(3, 3);
    n[(2, 0)] = re(e);
    n[(1, 2)] = re(e);
    let ae2 = a * e * e;
    let k = CMatrix::from_diagonal(&crate::algebra::CVector::from_vec(vec![ae2, -ae2, re(0.0)]));
    QuadLagrangian::new(space, m, n, k)
}

/// Oscillator frequency `±a e / √(a − 1)` of [`csm_particle`], principal
/// branch, plus branch first (`Re ω ≥ 0`, ties by `Im ω ≥ 0`).
///
/// For `Im a ≥ 0` this is the explicit real/imaginary decomposition
/// `e[(r+1)√(r+a₀−1) + i(r−1)√(r−a₀+1)] / √(2r²)`, `r = |a − 1|`; for
/// `Im a < 0` it is its complex conjugate.
pub fn csm_omega_closed(a: Scalar, e: f64) -> Result<(Scalar, Scalar)> {
    check_e(e)?;
    let d = a - re(1.0);
    if d.norm() == 0.0 {
        return Err(Error::CriticalPoint);
    }
    let w = crate::engine::branch_representative(a * e / d.sqrt());
    Ok((w, -w))
}

/// Whether `a = a₀ + i a₁` lies on the circle `(a₀−1)² + a₁² = 1` (to `tol`)
/// inside the strict bounds `|a₁| < 1`, `|a₀ − 1| < 1`.
pub fn reality_locus(a0: f64, a1: f64, tol: f64) -> bool {
    let c = (a0 - 1.0).powi(2) + a1 * a1 - 1.0;
    c.abs() <= tol && a1.abs() < 1.0 && (a0 - 1.0).abs() < 1.0
}

/// Cranking model `L = ½(ẋ₁² + ẋ₂²) + (B/2)(x₁ẋ₂ − x₂ẋ₁) − (k/2)(x₁² + x₂²)`.
pub fn cranking(b: f64, k: f64) -> Result<QuadLagrangian> {
    if !(b.is_finite() && k.is_finite()) {
        return Err(Error::NonFinite("cranking parameters"));
    }
    let space = PhaseSpace::new(labels(&["x1", "x2"]))?;
    let m = CMatrix::identity(2, 2);
    let mut n = CMatrix::zeros(2, 2);
    n[(1, 0)] = re(b / 2.0);
    n[(0, 1)] = re(-b / 2.0);
    let kk = CMatrix::identity(2, 2) * re(-k);
    QuadLagrangian::new(space, m, n, kk)
}

/// `ω±² = ½(2k + B²)[1 ± (1 − 4k²/(2k + B²)²)^{1/2}]`, principal roots.
pub fn cranking_omega_closed(b: f64, k: f64) -> Result<(Scalar, Scalar)> {
    let s = 2.0 * k + b * b;
    if !(s > 0.0) {
        return Err(Error::Domain(format!("2k + B² must be positive, got {s}")));
    }
    let inner = re(1.0 - 4.0 * k * k / (s * s)).sqrt();
    let plus = (re(0.5 * s) * (re(1.0) + inner)).sqrt();
    let minus = (re(0.5 * s) * (re(1.0) - inner)).sqrt();
    Ok((plus, minus))
}

/// Maxwell–Chern–Simons–Proca theory with spatial dependence dropped:
/// `L = ½(Ȧ₁² + Ȧ₂²) + (B/2)(Ȧ₁A₂ − Ȧ₂A₁) + (k/2)(A₀² − A₁² − A₂²)`.
pub fn mcsp_point(b: f64, k: f64) -> Result<QuadLagrangian> {
    if !(k > 0.0 && k.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("mcsp-point needs k > 0, got {k}")));
    }
    let space = PhaseSpace::new(labels(&["A0", "A1", "A2"]))?;
    let m = CMatrix::from_diagonal(&crate::algebra::CVector::from_vec(vec![re(0.0), re(1.0), re(1.0)]));
    let mut n = CMatrix::zeros(3, 3);
    n[(1, 2)] = re(b / 2.0);
    n[(2, 1)] = re(-b / 2.0);
    let kk = CMatrix::from_diagonal(&crate::algebra::CVector::from_vec(vec![re(k), re(-k), re(-k)]));
    QuadLagrangian::new(space, m, n, kk)
}

/// One Fourier mode of the chiral Schwinger model on the line.
///
/// Each field `X` becomes the real doublet `(X_c, X_s)` of
/// `X_c cos kx − X_s sin kx`, and `∂₁` acts as `k R` with
/// `R = [[0, −1], [1, 0]]` on the doublet. Coordinates are ordered
/// `(A0c, A1c, phic, A0s, A1s, phis)`.
pub fn csm_field_mode(k_mode: f64, a: Scalar, e: f64) -> Result<QuadLagrangian> {
    check_e(e)?;
    if !(k_mode >= 0.0 && k_mode.is_finite()) {
        return Err(Error::InvalidParameter(format!("k_mode must be non-negative, got {k_mode}")));
    }
    let space = PhaseSpace::new(labels(&["A0c", "A1c", "phic", "A0s", "A1s", "phis"]))?;
    const A0: usize = 0;
    const A1: usize = 1;
    const PHI: usize = 2;
    let idx = |field: usize, comp: usize| field + 3 * comp;
    let rot = [[0.0, -1.0], [1.0, 0.0]];
    let k = k_mode;

    let mut m = CMatrix::zeros(6, 6);
    let mut n = CMatrix::zeros(6, 6);
    let mut kk = CMatrix::zeros(6, 6);
    let ae2 = a * e * e;
    for c in 0..2 {
        m[(idx(A1, c), idx(A1, c))] = re(1.0);
        m[(idx(PHI, c), idx(PHI, c))] = re(1.0);
        n[(idx(PHI, c), idx(A0, c))] = re(e);
        n[(idx(A1, c), idx(PHI, c))] = re(e);
        kk[(idx(A0, c), idx(A0, c))] = ae2 + k * k;
        kk[(idx(A1, c), idx(A1, c))] = -ae2;
        kk[(idx(PHI, c), idx(PHI, c))] = re(-k * k);
        for d in 0..2 {
            let r = rot[c][d];
            if r == 0.0 {
                continue;
            }
            // −Ȧ₁·(∂₁A₀)
            n[(idx(A1, c), idx(A0, d))] = re(-k * r);
            // e(∂₁φ)(A₀ − A₁)
            kk[(idx(A0, c), idx(PHI, d))] = re(e * k * r);
            kk[(idx(PHI, d), idx(A0, c))] = re(e * k * r);
            kk[(idx(A1, c), idx(PHI, d))] = re(-e * k * r);
            kk[(idx(PHI, d), idx(A1, c))] = re(-e * k * r);
        }
    }
    QuadLagrangian::new(space, m, n, kk)
}
