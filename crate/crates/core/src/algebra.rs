//! Phase-space linear algebra.
//!
//! Coordinates are ordered `z = (q_1..q_n, p_1..p_n)` with `{q_i, p_j} = δ_ij`,
//! so the canonical structure is `J = [[0, I], [-I, 0]]`. Every bilinear
//! operation here uses the plain transpose, never the conjugate transpose:
//! complex parameters make the forms complex-symmetric, not Hermitian.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Scalar = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default relative tolerance for every rank decision.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;

pub fn re(x: f64) -> Scalar {
    Complex64::new(x, 0.0)
}

pub(crate) fn is_finite(z: Scalar) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

pub(crate) fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| is_finite(*z))
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn vec_norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Plain (non-conjugating) dot product.
pub(crate) fn dot(a: &CVector, b: &CVector) -> Scalar {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Labelled phase space of configuration dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpace {
    n: usize,
    q_labels: Vec<String>,
    p_labels: Vec<String>,
    /// Sign relating each canonical momentum to the momentum named in the
    /// source model's own convention (e.g. a lower-index field momentum).
    p_signs: Vec<f64>,
}

impl PhaseSpace {
    pub fn new(q_labels: Vec<String>) -> Result<Self> {
        let p_labels = q_labels.iter().map(|l| format!("p_{l}")).collect();
        let signs = vec![1.0; q_labels.len()];
        Self::with_momenta(q_labels, p_labels, signs)
    }

    pub fn with_momenta(
        q_labels: Vec<String>,
        p_labels: Vec<String>,
        p_signs: Vec<f64>,
    ) -> Result<Self> {
        let n = q_labels.len();
        if p_labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p_labels.len() });
        }
        if p_signs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p_signs.len() });
        }
        let mut seen = HashSet::new();
        for l in q_labels.iter().chain(p_labels.iter()) {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate coordinate label `{l}`")));
            }
        }
        Ok(Self { n, q_labels, p_labels, p_signs })
    }

    /// Unlabelled space with `q1..qn`.
    pub fn anonymous(n: usize) -> Self {
        Self::new((1..=n).map(|i| format!("q{i}")).collect()).expect("generated labels are unique")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn q_labels(&self) -> &[String] {
        &self.q_labels
    }

    pub fn p_labels(&self) -> &[String] {
        &self.p_labels
    }

    pub fn p_signs(&self) -> &[f64] {
        &self.p_signs
    }

    /// Label of phase-space coordinate `i` (positions first, then momenta).
    pub fn label(&self, i: usize) -> &str {
        if i < self.n {
            &self.q_labels[i]
        } else {
            &self.p_labels[i - self.n]
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.q_labels.iter().chain(self.p_labels.iter()).cloned().collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        (0..self.dim()).find(|&i| self.label(i) == label)
    }

    /// The coordinate function `z_i` for a label.
    pub fn coordinate(&self, label: &str) -> Result<AffinePhaseFn> {
        let i = self
            .index_of(label)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown coordinate `{label}`")))?;
        Ok(AffinePhaseFn::coordinate(self.dim(), i))
    }

    pub fn symplectic(&self) -> BracketMatrix {
        BracketMatrix::canonical(self.n)
    }
}

/// `f(z) = grad · z + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePhaseFn {
    pub grad: CVector,
    pub constant: Scalar,
}

impl AffinePhaseFn {
    pub fn new(grad: CVector, constant: Scalar) -> Self {
        Self { grad, constant }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(CVector::zeros(dim), Scalar::new(0.0, 0.0))
    }

    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut grad = CVector::zeros(dim);
        grad[i] = re(1.0);
        Self::new(grad, re(0.0))
    }

    /// Linear function from `(index, coefficient)` pairs.
    pub fn from_terms(dim: usize, terms: &[(usize, Scalar)]) -> Self {
        let mut f = Self::zero(dim);
        for &(i, c) in terms {
            f.grad[i] += c;
        }
        f
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn eval(&self, z: &CVector) -> Scalar {
        dot(&self.grad, z) + self.constant
    }

    pub fn scale(&self, s: Scalar) -> Self {
        Self::new(&self.grad * s, self.constant * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(&self.grad + &other.grad, self.constant + other.constant)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(&self.grad - &other.grad, self.constant - other.constant)
    }

    pub fn grad_norm(&self) -> f64 {
        vec_norm(&self.grad)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.grad_norm() <= tol && self.constant.norm() <= tol
    }

    /// Rescaled to unit gradient norm; the zero function is returned as is.
    pub fn normalized(&self) -> Self {
        let n = self.grad_norm();
        if n == 0.0 {
            self.clone()
        } else {
            self.scale(re(1.0 / n))
        }
    }

    /// Human-readable form using coordinate labels. The expression is scaled so
    /// that its largest coefficient is one; constraints are only defined up to
    /// such a factor.
    pub fn display<'a>(&'a self, space: &'a PhaseSpace) -> impl fmt::Display + 'a {
        FnDisplay { f: self, space }
    }
}

struct FnDisplay<'a> {
    f: &'a AffinePhaseFn,
    space: &'a PhaseSpace,
}

impl fmt::Display for FnDisplay<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cmax = self
            .f
            .grad
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(re(0.0));
        if cmax.norm() == 0.0 {
            return write!(out, "{}", fmt_scalar(self.f.constant));
        }
        let scale = re(1.0) / cmax;
        let cut = 1e-10;
        let mut first = true;
        for (i, c) in self.f.grad.iter().enumerate() {
            let c = c * scale;
            if c.norm() <= cut {
                continue;
            }
            write_term(out, c, Some(self.space.label(i)), first)?;
            first = false;
        }
        let k = self.f.constant * scale;
        if k.norm() > cut {
            write_term(out, k, None, first)?;
        }
        Ok(())
    }
}

fn write_term(
    out: &mut fmt::Formatter<'_>,
    c: Scalar,
    label: Option<&str>,
    first: bool,
) -> fmt::Result {
    let real = c.im.abs() <= 1e-12 * c.norm().max(1.0);
    if real {
        let v = c.re;
        let sign = if v < 0.0 { "-" } else { "+" };
        if first {
            if v < 0.0 {
                write!(out, "-")?;
            }
        } else {
            write!(out, " {sign} ")?;
        }
        let mag = v.abs();
        match label {
            Some(l) if (mag - 1.0).abs() < 1e-12 => write!(out, "{l}"),
            Some(l) => write!(out, "{} {l}", fmt_real(mag)),
            None => write!(out, "{}", fmt_real(mag)),
        }
    } else {
        if !first {
            write!(out, " + ")?;
        }
        match label {
            Some(l) => write!(out, "{} {l}", fmt_scalar(c)),
            None => write!(out, "{}", fmt_scalar(c)),
        }
    }
}

fn fmt_real(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

pub fn fmt_scalar(z: Scalar) -> String {
    if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
        fmt_real(z.re)
    } else {
        let sign = if z.im < 0.0 { '-' } else { '+' };
        format!("({}{}{}i)", fmt_real(z.re), sign, fmt_real(z.im.abs()))
    }
}

/// `H(z) = ½ zᵀ hess z + lin · z + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadHamiltonian {
    pub hess: CMatrix,
    pub lin: CVector,
    pub constant: Scalar,
}

impl QuadHamiltonian {
    /// Symmetrizes `hess` on construction.
    pub fn new(hess: CMatrix, lin: CVector, constant: Scalar) -> Result<Self> {
        if !hess.is_square() {
            return Err(Error::DimensionMismatch { expected: hess.nrows(), found: hess.ncols() });
        }
        if lin.len() != hess.nrows() {
            return Err(Error::DimensionMismatch { expected: hess.nrows(), found: lin.len() });
        }
        if !all_finite(&hess) || !lin.iter().all(|z| is_finite(*z)) || !is_finite(constant) {
            return Err(Error::NonFinite("Hamiltonian"));
        }
        let hess = (&hess + hess.transpose()) * re(0.5);
        Ok(Self { hess, lin, constant })
    }

    pub fn quadratic(hess: CMatrix) -> Result<Self> {
        let d = hess.nrows();
        Self::new(hess, CVector::zeros(d), re(0.0))
    }

    pub fn zero(dim: usize) -> Self {
        Self { hess: CMatrix::zeros(dim, dim), lin: CVector::zeros(dim), constant: re(0.0) }
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }

    pub fn eval(&self, z: &CVector) -> Scalar {
        let hz = &self.hess * z;
        dot(z, &hz) * re(0.5) + dot(&self.lin, z) + self.constant
    }

    pub fn gradient_at(&self, z: &CVector) -> CVector {
        &self.hess * z + &self.lin
    }
}

/// Antisymmetric bracket structure: canonical `J` or a Dirac matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketMatrix {
    omega: CMatrix,
}

impl BracketMatrix {
    pub fn new(omega: CMatrix) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::DimensionMismatch { expected: omega.nrows(), found: omega.ncols() });
        }
        if !all_finite(&omega) {
            return Err(Error::NonFinite("bracket matrix"));
        }
        let scale = max_abs(&omega).max(f64::MIN_POSITIVE);
        let defect = max_abs(&(&omega + omega.transpose())) / scale;
        if defect > SYMMETRY_TOL {
            return Err(Error::NotAntisymmetric { defect });
        }
        let omega = (&omega - omega.transpose()) * re(0.5);
        Ok(Self { omega })
    }

    pub fn canonical(n: usize) -> Self {
        let mut j = CMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = re(1.0);
            j[(n + i, i)] = re(-1.0);
        }
        Self { omega: j }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    /// Principal submatrix on the given index set.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let omega = CMatrix::from_fn(k, k, |r, c| self.omega[(idx[r], idx[c])]);
        Self { omega }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `{f, g}_W = ∇fᵀ W ∇g`.
pub fn bracket(f: &AffinePhaseFn, g: &AffinePhaseFn, w: &BracketMatrix) -> Result<Scalar> {
    check_dim(w.dim(), f.dim())?;
    check_dim(w.dim(), g.dim())?;
    let wg = w.matrix() * &g.grad;
    Ok(dot(&f.grad, &wg))
}

/// `{f, H}_W` as an affine function: `∇fᵀ W (hess z + lin)`.
pub fn bracket_observable(
    f: &AffinePhaseFn,
    h: &QuadHamiltonian,
    w: &BracketMatrix,
) -> Result<AffinePhaseFn> {
    check_dim(w.dim(), f.dim())?;
    check_dim(w.dim(), h.dim())?;
    // row vector fᵀW
    let fw = w.matrix().transpose() * &f.grad;
    let grad = h.hess.transpose() * &fw;
    let constant = dot(&fw, &h.lin);
    Ok(AffinePhaseFn::new(grad, constant))
}

/// Rank and right null space of a matrix.
#[derive(Debug, Clone)]
pub struct RankInfo {
    pub rank: usize,
    /// Orthonormal columns spanning the right null space.
    pub null_basis: CMatrix,
    /// Descending.
    pub singular_values: Vec<f64>,
}

/// Singular values above `rel_tol × σ_max` count towards the rank.
pub fn numerical_rank(a: &CMatrix, rel_tol: f64) -> Result<RankInfo> {
    numerical_rank_with_floor(a, rel_tol, 0.0)
}

/// Like [`numerical_rank`], with the threshold `rel_tol × max(σ_max, floor)`.
/// The floor matters when the whole matrix is small relative to a known scale
/// (a Gram matrix of unit-norm gradients is compared against one, not against
/// its own largest entry).
pub fn numerical_rank_with_floor(a: &CMatrix, rel_tol: f64, floor: f64) -> Result<RankInfo> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter(format!("rel_tol {rel_tol} outside (0, 1)")));
    }
    if !all_finite(a) {
        return Err(Error::NonFinite("rank input"));
    }
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(RankInfo { rank: 0, null_basis: CMatrix::zeros(0, 0), singular_values: vec![] });
    }
    if m == 0 {
        return Ok(RankInfo {
            rank: 0,
            null_basis: CMatrix::identity(n, n),
            singular_values: vec![],
        });
    }
    // Pad to at least square so that V is the full n×n unitary.
    let padded = if m < n {
        let mut p = CMatrix::zeros(n, n);
        p.view_mut((0, 0), (m, n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v = svd.v_t.expect("requested V").adjoint();
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = rel_tol * smax.max(floor);
    let mut null_cols = Vec::new();
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > threshold && s > 0.0 {
            rank += 1;
        } else {
            null_cols.push(i);
        }
    }
    let null_basis = CMatrix::from_fn(n, null_cols.len(), |r, c| v[(r, null_cols[c])]);
    let mut sorted = sv;
    sorted.sort_by(|x, y| y.total_cmp(x));
    sorted.truncate(m.min(n));
    Ok(RankInfo { rank, null_basis, singular_values: sorted })
}

/// Moore–Penrose pseudo-inverse with singular values below `rel_tol × σ_max` dropped.
pub fn pseudo_inverse(a: &CMatrix, rel_tol: f64) -> CMatrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return CMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = CMatrix::zeros(n, m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            let vi = v_t.row(i).adjoint();
            let ui = u.column(i).adjoint();
            out += vi * ui * re(1.0 / s);
        }
    }
    out
}

/// Reduced row-echelon form of the columns of `basis`, so that a null space
/// spanned by unit vectors comes back as exactly those vectors.
pub(crate) fn tidy_basis(basis: &CMatrix) -> CMatrix {
    let (n, k) = basis.shape();
    let mut rows = basis.transpose(); // k × n
    let mut pivot_row = 0;
    for col in 0..n {
        if pivot_row == k {
            break;
        }
        let (best, mag) = (pivot_row..k)
            .map(|r| (r, rows[(r, col)].norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if mag < 1e-10 {
            continue;
        }
        rows.swap_rows(pivot_row, best);
        let p = rows[(pivot_row, col)];
        let scaled = rows.row(pivot_row) / p;
        rows.set_row(pivot_row, &scaled);
        for r in 0..k {
            if r != pivot_row {
                let f = rows[(r, col)];
                if f.norm() != 0.0 {
                    let sub = rows.row(pivot_row) * f;
                    let new = rows.row(r) - sub;
                    rows.set_row(r, &new);
                }
            }
        }
        pivot_row += 1;
    }
    for z in rows.iter_mut() {
        if z.norm() < 1e-14 {
            *z = re(0.0);
        }
    }
    rows.transpose()
}

/// Columns are the gradients.
pub fn gradient_matrix(grads: &[CVector], dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, grads.len(), |r, c| grads[c][r])
}

/// `C_ij = g_iᵀ W g_j`.
pub fn gram_matrix(grads: &[CVector], w: &BracketMatrix) -> CMatrix {
    let g = gradient_matrix(grads, w.dim());
    g.transpose() * w.matrix() * &g
}

/// Dirac bracket structure `D = J − (J G) C⁻¹ (Gᵀ J)` for second-class gradients `G`.
pub fn dirac_bracket_matrix(
    j: &BracketMatrix,
    scc_grads: &[CVector],
    rel_tol: f64,
) -> Result<BracketMatrix> {
    for g in scc_grads {
        check_dim(j.dim(), g.len())?;
    }
    if scc_grads.is_empty() {
        return Ok(j.clone());
    }
    let c = gram_matrix(scc_grads, j);
    let floor = scc_grads.iter().map(|g| vec_norm(g).powi(2)).fold(0.0, f64::max);
    let info = numerical_rank_with_floor(&c, rel_tol, floor)?;
    if info.rank < scc_grads.len() {
        return Err(Error::NotSecondClass { size: scc_grads.len(), rank: info.rank });
    }
    let c_inv = c
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::NotSecondClass { size: scc_grads.len(), rank: info.rank })?;
    let g = gradient_matrix(scc_grads, j.dim());
    let jg = j.matrix() * &g;
    let gtj = g.transpose() * j.matrix();
    let d = j.matrix() - jg * c_inv * gtj;
    let d = (&d - d.transpose()) * re(0.5);
    if !all_finite(&d) {
        return Err(Error::NonFinite("Dirac matrix"));
    }
    Ok(BracketMatrix { omega: d })
}

/// `|det C|^{1/2}`, the Pfaffian magnitude of an antisymmetric Gram matrix.
pub fn pfaffian_abs(c: &CMatrix) -> f64 {
    if c.nrows() == 0 {
        return 1.0;
    }
    c.clone().lu().determinant().norm().sqrt()
}
