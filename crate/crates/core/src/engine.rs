//! The Dirac–Bergmann procedure for quadratic Lagrangians.
//!
//! `legendre` → `constraint_chain` → `classify` → `gauge_fix` → `reduce` →
//! `spectrum`, composed by [`analyze`]. Constraints are affine in phase space,
//! so every step is linear algebra on gradients; all rank decisions go
//! through [`numerical_rank_with_floor`] with a single relative tolerance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::algebra::{
    bracket_observable, dirac_bracket_matrix, gradient_matrix, gram_matrix, is_finite, max_abs,
    numerical_rank, numerical_rank_with_floor, pfaffian_abs, pseudo_inverse, re, tidy_basis,
    vec_norm, AffinePhaseFn, BracketMatrix, CMatrix, CVector, PhaseSpace, QuadHamiltonian, Scalar,
    DEFAULT_REL_TOL,
};
use crate::error::{Error, Result};

/// `L = ½ q̇ᵀ M q̇ + q̇ᵀ N q + ½ qᵀ K q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadLagrangian {
    space: PhaseSpace,
    kinetic: CMatrix,
    coupling: CMatrix,
    potential: CMatrix,
}

impl QuadLagrangian {
    /// `M` and `K` are symmetrized.
    pub fn new(space: PhaseSpace, kinetic: CMatrix, coupling: CMatrix, potential: CMatrix) -> Result<Self> {
        let n = space.n();
        for m in [&kinetic, &coupling, &potential] {
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch { expected: n, found: m.nrows().max(m.ncols()) });
            }
            if !crate::algebra::all_finite(m) {
                return Err(Error::NonFinite("Lagrangian"));
            }
        }
        let kinetic = (&kinetic + kinetic.transpose()) * re(0.5);
        let potential = (&potential + potential.transpose()) * re(0.5);
        Ok(Self { space, kinetic, coupling, potential })
    }

    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn kinetic(&self) -> &CMatrix {
        &self.kinetic
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }

    pub fn potential(&self) -> &CMatrix {
        &self.potential
    }

    /// Adds the total time derivative `d/dt(½ qᵀ S q) = q̇ᵀ S q` (with `S`
    /// symmetrized). The dynamics, and hence the spectrum, is unchanged.
    pub fn with_total_derivative(&self, s: &CMatrix) -> Result<Self> {
        if s.shape() != (self.n(), self.n()) {
            return Err(Error::DimensionMismatch { expected: self.n(), found: s.nrows() });
        }
        let sym = (s + s.transpose()) * re(0.5);
        Self::new(self.space.clone(), self.kinetic.clone(), &self.coupling + sym, self.potential.clone())
    }

    pub fn eval(&self, q: &CVector, qdot: &CVector) -> Scalar {
        let kin = (qdot.transpose() * &self.kinetic * qdot)[(0, 0)];
        let cpl = (qdot.transpose() * &self.coupling * q)[(0, 0)];
        let pot = (q.transpose() * &self.potential * q)[(0, 0)];
        kin * re(0.5) + cpl + pot * re(0.5)
    }

    /// Euler–Lagrange residual `M q̈ + (N − Nᵀ) q̇ − K q`.
    pub fn euler_lagrange_residual(&self, q: &CVector, qdot: &CVector, qddot: &CVector) -> CVector {
        &self.kinetic * qddot + (&self.coupling - self.coupling.transpose()) * qdot - &self.potential * q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintClass {
    First,
    Second,
    Unclassified,
}

impl fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintClass::First => "first",
            ConstraintClass::Second => "second",
            ConstraintClass::Unclassified => "unclassified",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub function: AffinePhaseFn,
    /// 0 for primary constraints, `s` for those found at step `s` of the chain.
    pub stage: usize,
    pub class: ConstraintClass,
    pub origin: String,
}

/// Ordered constraint set with linearly independent gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLedger {
    space: PhaseSpace,
    records: Vec<ConstraintRecord>,
    notes: Vec<String>,
}

impl ConstraintLedger {
    pub fn new(space: PhaseSpace) -> Self {
        Self { space, records: Vec::new(), notes: Vec::new() }
    }

    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn records(&self) -> &[ConstraintRecord] {
        &self.records
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn functions(&self) -> Vec<AffinePhaseFn> {
        self.records.iter().map(|r| r.function.clone()).collect()
    }

    pub fn grads(&self) -> Vec<CVector> {
        self.records.iter().map(|r| r.function.grad.clone()).collect()
    }

    pub fn count(&self, class: ConstraintClass) -> usize {
        self.records.iter().filter(|r| r.class == class).count()
    }

    pub fn of_class(&self, class: ConstraintClass) -> Vec<&ConstraintRecord> {
        self.records.iter().filter(|r| r.class == class).collect()
    }

    pub fn gram(&self, j: &BracketMatrix) -> CMatrix {
        gram_matrix(&self.grads(), j)
    }

    /// Appends a record after checking that its gradient is independent of
    /// the ledger.
    pub fn push(&mut self, record: ConstraintRecord, rel_tol: f64) -> Result<()> {
        if record.function.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: record.function.dim() });
        }
        let g = &record.function.grad;
        let norm = vec_norm(g);
        if norm == 0.0 || residual_against(&self.grads(), g, self.dim()).1 <= rel_tol * norm {
            return Err(Error::DependentConstraint(record.function.display(&self.space).to_string()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }
}

/// Least-squares coefficients of `g` in the span of `grads`, and the residual norm.
fn residual_against(grads: &[CVector], g: &CVector, dim: usize) -> (CVector, f64) {
    if grads.is_empty() {
        return (CVector::zeros(0), vec_norm(g));
    }
    let gm = gradient_matrix(grads, dim);
    let alpha = pseudo_inverse(&gm, 1e-12) * g;
    let r = g - &gm * &alpha;
    (alpha, vec_norm(&r))
}

/// Legendre transform with a possibly singular kinetic matrix.
///
/// Momenta `p = M q̇ + N q`; every null vector `u` of `M` yields the primary
/// constraint `uᵀ(p − N q) ≈ 0`, and the canonical Hamiltonian is
/// `H = ½ (p − Nq)ᵀ M⁺ (p − Nq) − ½ qᵀ K q`.
pub fn legendre(l: &QuadLagrangian, rel_tol: f64) -> Result<(QuadHamiltonian, ConstraintLedger)> {
    let n = l.n();
    let info = numerical_rank(l.kinetic(), rel_tol)?;
    let m_plus = pseudo_inverse(l.kinetic(), rel_tol);

    // y = p − N q = B z
    let mut b = CMatrix::zeros(n, 2 * n);
    b.view_mut((0, 0), (n, n)).copy_from(&(-l.coupling()));
    b.view_mut((0, n), (n, n)).copy_from(&CMatrix::identity(n, n));

    let mut hess = b.transpose() * &m_plus * &b;
    let mut kq = hess.view_mut((0, 0), (n, n));
    kq -= l.potential();
    let h = QuadHamiltonian::quadratic(hess)?;

    let mut ledger = ConstraintLedger::new(l.space().clone());
    let nulls = tidy_basis(&info.null_basis);
    for c in 0..nulls.ncols() {
        let u = nulls.column(c).into_owned();
        let grad = b.transpose() * &u;
        let f = AffinePhaseFn::new(grad, re(0.0)).normalized();
        ledger.push(
            ConstraintRecord {
                function: f,
                stage: 0,
                class: ConstraintClass::Unclassified,
                origin: "primary".into(),
            },
            rel_tol,
        )?;
    }
    Ok((h, ledger))
}

/// Consistency data for the multipliers of `generators` in
/// `H_T = H + Σ u_a φ_a`: the matrix `A_ia = {φ_i, φ_a}` and the brackets
/// `{φ_i, H}` for every ledger constraint.
fn consistency(
    h: &QuadHamiltonian,
    constraints: &[AffinePhaseFn],
    generators: &[AffinePhaseFn],
    j: &BracketMatrix,
) -> Result<(CMatrix, Vec<AffinePhaseFn>)> {
    let dim = j.dim();
    let gc = gradient_matrix(&constraints.iter().map(|f| f.grad.clone()).collect::<Vec<_>>(), dim);
    let gp = gradient_matrix(&generators.iter().map(|f| f.grad.clone()).collect::<Vec<_>>(), dim);
    let a = gc.transpose() * j.matrix() * gp;
    let flows = constraints
        .iter()
        .map(|f| bracket_observable(f, h, j))
        .collect::<Result<Vec<_>>>()?;
    Ok((a, flows))
}

fn combine(weights: &CVector, fns: &[AffinePhaseFn], dim: usize) -> AffinePhaseFn {
    let mut out = AffinePhaseFn::zero(dim);
    for (w, f) in weights.iter().zip(fns) {
        if w.norm() != 0.0 {
            out = out.add(&f.scale(*w));
        }
    }
    out
}

fn describe_combination(weights: &CVector, prefix: &str) -> String {
    let parts: Vec<String> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| w.norm() > 1e-12)
        .map(|(i, w)| {
            if (w - re(1.0)).norm() < 1e-12 {
                format!("{prefix}{i}")
            } else {
                format!("{}·{prefix}{i}", crate::algebra::fmt_scalar(*w))
            }
        })
        .collect();
    parts.join(" + ")
}

/// Generates secondary, tertiary, ... constraints by demanding that every
/// constraint be preserved by `H_T = H + Σ u_a φ_a` (primaries `φ_a`).
///
/// At each step the combinations of consistency conditions that no multiplier
/// can absorb (left null space of `A_ia = {φ_i, φ_a}`) are tested against the
/// ledger; independent ones are appended, dependent ones either vanish on the
/// surface or signal an inconsistent system.
pub fn constraint_chain(
    h: &QuadHamiltonian,
    primaries: &ConstraintLedger,
    j: &BracketMatrix,
    max_stage: usize,
    rel_tol: f64,
) -> Result<ConstraintLedger> {
    if max_stage < 1 {
        return Err(Error::InvalidParameter("max_stage must be at least 1".into()));
    }
    let dim = j.dim();
    let generators = primaries.functions();
    let mut ledger = primaries.clone();
    let scale = max_abs(&h.hess).max(1.0);

    for stage in 1.. {
        if stage > max_stage {
            return Err(Error::RunawayChain { max_stage });
        }
        let fns = ledger.functions();
        let (a, flows) = consistency(h, &fns, &generators, j)?;
        let a_rank = numerical_rank_with_floor(&a, rel_tol, 1.0)?.rank;
        let left_null = if generators.is_empty() {
            CMatrix::identity(fns.len(), fns.len())
        } else {
            tidy_basis(&numerical_rank_with_floor(&a.transpose(), rel_tol, 1.0)?.null_basis)
        };
        let mut added = 0;
        let mut implied = 0;
        for c in 0..left_null.ncols() {
            let w = left_null.column(c).into_owned();
            let candidate = combine(&w, &flows, dim);
            let what = format!("d/dt({})", describe_combination(&w, "#"));
            let existing = ledger.functions();
            let (alpha, resid) = residual_against(&ledger.grads(), &candidate.grad, dim);
            let reduced = candidate.sub(&combine(&alpha, &existing, dim));
            if resid <= rel_tol * scale {
                if reduced.constant.norm() > rel_tol * scale {
                    return Err(Error::InconsistentConstraints(format!(
                        "{what} reduces to the nonzero constant {}",
                        crate::algebra::fmt_scalar(reduced.constant)
                    )));
                }
                implied += 1;
                continue;
            }
            ledger.push(
                ConstraintRecord {
                    function: reduced.normalized(),
                    stage,
                    class: ConstraintClass::Unclassified,
                    origin: what,
                },
                rel_tol,
            )?;
            added += 1;
        }
        if added == 0 {
            ledger.note(format!(
                "chain closed at stage {stage}: {a_rank} multiplier(s) fixed, {implied} condition(s) hold on the surface"
            ));
            break;
        }
        if a_rank > 0 {
            ledger.note(format!("stage {stage}: {a_rank} multiplier(s) fixed"));
        }
    }
    Ok(ledger)
}

/// Splits the ledger into first- and second-class records.
///
/// First-class records are the combinations in the null space of the Gram
/// matrix `C_ij = {φ_i, φ_j}`; the second-class records are original
/// constraints spanning a complement, so their labels survive.
pub fn classify(ledger: &ConstraintLedger, j: &BracketMatrix, rel_tol: f64) -> Result<ConstraintLedger> {
    let k = ledger.len();
    let mut out = ConstraintLedger {
        space: ledger.space.clone(),
        records: Vec::new(),
        notes: ledger.notes.clone(),
    };
    if k == 0 {
        return Ok(out);
    }
    let floor = ledger.grads().iter().map(|g| vec_norm(g).powi(2)).fold(0.0, f64::max);
    let c = ledger.gram(j);
    let info = numerical_rank_with_floor(&c, rel_tol, floor)?;
    let nulls = tidy_basis(&info.null_basis);

    // (position, record) pairs, sorted at the end so output follows the input order.
    let mut placed: Vec<(usize, ConstraintRecord)> = Vec::new();
    for col in 0..nulls.ncols() {
        let v = nulls.column(col).into_owned();
        let members: Vec<usize> = (0..k).filter(|&i| v[i].norm() > 1e-12).collect();
        let position = members[0];
        let record = if members.len() == 1 {
            ConstraintRecord { class: ConstraintClass::First, ..ledger.records[position].clone() }
        } else {
            let f = combine(&v, &ledger.functions(), ledger.dim()).normalized();
            let stage = members.iter().map(|&i| ledger.records[i].stage).max().unwrap_or(0);
            ConstraintRecord {
                function: f,
                stage,
                class: ConstraintClass::First,
                origin: format!("first-class combination {}", describe_combination(&v, "#")),
            }
        };
        placed.push((position, record));
    }

    let mut span = nulls.clone();
    for i in 0..k {
        if span.ncols() == k {
            break;
        }
        let mut trial = CMatrix::zeros(k, span.ncols() + 1);
        trial.view_mut((0, 0), (k, span.ncols())).copy_from(&span);
        trial[(i, span.ncols())] = re(1.0);
        if numerical_rank(&trial, 1e-10)?.rank == trial.ncols() {
            span = trial;
            placed.push((i, ConstraintRecord { class: ConstraintClass::Second, ..ledger.records[i].clone() }));
        }
    }
    placed.sort_by_key(|(pos, r)| (*pos, r.class == ConstraintClass::Second));
    out.records = placed.into_iter().map(|(_, r)| r).collect();
    Ok(out)
}

/// Adjoins one gauge condition per first-class record, making every record
/// second-class.
pub fn gauge_fix(
    ledger: &ConstraintLedger,
    gauges: &[AffinePhaseFn],
    j: &BracketMatrix,
    rel_tol: f64,
) -> Result<ConstraintLedger> {
    let firsts: Vec<AffinePhaseFn> =
        ledger.of_class(ConstraintClass::First).iter().map(|r| r.function.clone()).collect();
    if gauges.len() != firsts.len() {
        return Err(Error::GaugeCountMismatch { first_class: firsts.len(), gauges: gauges.len() });
    }
    if firsts.is_empty() {
        return Ok(ledger.clone());
    }
    let space = ledger.space.clone();
    let mut out = ledger.clone();
    for r in out.records.iter_mut() {
        r.class = ConstraintClass::Second;
    }
    for g in gauges {
        let rec = ConstraintRecord {
            function: g.normalized(),
            stage: 0,
            class: ConstraintClass::Second,
            origin: "gauge condition".into(),
        };
        out.push(rec, rel_tol).map_err(|e| match e {
            Error::DependentConstraint(s) => {
                Error::InadmissibleGauge(format!("gauge `{s}` is dependent on the existing constraints"))
            }
            other => other,
        })?;
    }
    let c = out.gram(j);
    let info = numerical_rank_with_floor(&c, rel_tol, 1.0)?;
    if info.rank < out.len() {
        // Name the first-class record that no gauge pairs with.
        let q = gram_between(gauges, &firsts, j);
        let scale = max_abs(&q).max(1.0);
        let bad = (0..firsts.len()).find(|&f| (0..gauges.len()).all(|g| q[(g, f)].norm() <= rel_tol * scale));
        let detail = match bad {
            Some(f) => format!(
                "no gauge condition has a nonvanishing bracket with first-class constraint `{}`",
                firsts[f].display(&space)
            ),
            None => format!(
                "augmented Gram matrix of {} constraints has rank {} (gauges {})",
                out.len(),
                info.rank,
                gauges.iter().map(|g| format!("`{}`", g.display(&space))).collect::<Vec<_>>().join(", ")
            ),
        };
        return Err(Error::InadmissibleGauge(detail));
    }
    Ok(out)
}

fn gram_between(rows: &[AffinePhaseFn], cols: &[AffinePhaseFn], j: &BracketMatrix) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        crate::algebra::dot(&rows[r].grad, &(j.matrix() * &cols[c].grad))
    })
}

/// Phase space after second-class constraints are imposed strongly.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    space: PhaseSpace,
    /// Retained phase-space indices, ascending.
    pub kept: Vec<usize>,
    /// `z = embedding · z_kept + offset` on the constraint surface.
    pub embedding: CMatrix,
    pub offset: CVector,
    pub hamiltonian: QuadHamiltonian,
    pub bracket: BracketMatrix,
    pub dirac: BracketMatrix,
}

impl ReducedSystem {
    pub fn space(&self) -> &PhaseSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn kept_labels(&self) -> Vec<String> {
        self.kept.iter().map(|&i| self.space.label(i).to_string()).collect()
    }

    /// Eliminated coordinates as affine functions of the kept ones.
    pub fn elimination_map(&self) -> Vec<(usize, AffinePhaseFn)> {
        (0..self.space.dim())
            .filter(|i| !self.kept.contains(i))
            .map(|i| {
                let grad = self.embedding.row(i).transpose();
                (i, AffinePhaseFn::new(grad, self.offset[i]))
            })
            .collect()
    }

    /// Lifts a reduced state to the full phase space.
    pub fn lift(&self, zk: &CVector) -> CVector {
        &self.embedding * zk + &self.offset
    }

    /// Linear flow matrix `D_red · hess(H_red)`.
    pub fn flow(&self) -> CMatrix {
        self.bracket.matrix() * &self.hamiltonian.hess
    }
}

/// Imposes a fully second-class ledger strongly: Dirac bracket, pivoted
/// elimination of one coordinate per constraint, substitution into `H`.
pub fn reduce(
    h: &QuadHamiltonian,
    ledger: &ConstraintLedger,
    j: &BracketMatrix,
    rel_tol: f64,
) -> Result<ReducedSystem> {
    if ledger.records.iter().any(|r| r.class != ConstraintClass::Second) {
        return Err(Error::NotFullySecondClass);
    }
    let dim = j.dim();
    let dirac = dirac_bracket_matrix(j, &ledger.grads(), rel_tol)?;

    // Gauss–Jordan on the constraint rows with threshold pivoting: any entry
    // within a factor 10 of the row maximum is acceptable and the lowest
    // index wins, which prefers eliminating configuration coordinates.
    let s = ledger.len();
    let mut rows = CMatrix::from_fn(s, dim, |r, c| ledger.records[r].function.grad[c]);
    let mut rhs = CVector::from_fn(s, |r, _| -ledger.records[r].function.constant);
    let mut pivots: Vec<usize> = Vec::with_capacity(s);
    for r in 0..s {
        let row_scale = rows.row(r).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let free: Vec<usize> = (0..dim).filter(|c| !pivots.contains(c)).collect();
        let best = free.iter().map(|&c| rows[(r, c)].norm()).fold(0.0, f64::max);
        if best <= rel_tol * row_scale.max(1.0) {
            return Err(Error::DegenerateElimination { row: r, pivot: best });
        }
        let col = *free.iter().find(|&&c| rows[(r, c)].norm() >= 0.1 * best).unwrap();
        let p = rows[(r, col)];
        let scaled = rows.row(r) / p;
        rows.set_row(r, &scaled);
        rhs[r] /= p;
        for o in 0..s {
            if o != r {
                let f = rows[(o, col)];
                if f.norm() != 0.0 {
                    let sub = rows.row(r) * f;
                    let new = rows.row(o) - sub;
                    rows.set_row(o, &new);
                    let rr = rhs[r];
                    rhs[o] -= f * rr;
                }
            }
        }
        pivots.push(col);
    }
    let kept: Vec<usize> = (0..dim).filter(|c| !pivots.contains(c)).collect();
    let mut embedding = CMatrix::zeros(dim, kept.len());
    let mut offset = CVector::zeros(dim);
    for (kc, &c) in kept.iter().enumerate() {
        embedding[(c, kc)] = re(1.0);
    }
    for (r, &pc) in pivots.iter().enumerate() {
        for (kc, &c) in kept.iter().enumerate() {
            embedding[(pc, kc)] = -rows[(r, c)];
        }
        offset[pc] = rhs[r];
    }

    let hess = embedding.transpose() * &h.hess * &embedding;
    let lin = embedding.transpose() * (&h.hess * &offset + &h.lin);
    let constant = h.eval(&offset);
    let hamiltonian = QuadHamiltonian::new(hess, lin, constant)?;
    let bracket = dirac.restrict(&kept);
    Ok(ReducedSystem { space: ledger.space.clone(), kept, embedding, offset, hamiltonian, bracket, dirac })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    /// Eigenvalue pair `±iω`, `ω ≠ 0` (possibly complex).
    Oscillator,
    /// Size-2 Jordan block at zero: `ẍ = 0`.
    Free,
    /// Semisimple zero eigenvalues: frozen (cyclic) canonical pair.
    Zero,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Oscillator => "oscillator",
            ModeKind::Free => "free",
            ModeKind::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub omega: Scalar,
    pub kind: ModeKind,
    pub multiplicity: usize,
}

impl Mode {
    /// `|Im ω| < 1e-9 · max(1, |ω|)`.
    pub fn is_real(&self) -> bool {
        self.omega.im.abs() < 1e-9 * self.omega.norm().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub modes: Vec<Mode>,
    /// Number of canonical pairs of the reduced system (each mode kind counts).
    pub dof_count: usize,
    pub dim: usize,
    /// Raw eigenvalues of the reduced flow.
    pub eigenvalues: Vec<Scalar>,
}

impl SpectrumReport {
    pub fn oscillators(&self) -> impl Iterator<Item = &Mode> {
        self.modes.iter().filter(|m| m.kind == ModeKind::Oscillator)
    }

    /// Oscillator frequencies repeated by multiplicity, ascending in `|ω|`.
    pub fn oscillator_frequencies(&self) -> Vec<Scalar> {
        let mut out: Vec<Scalar> = self
            .oscillators()
            .flat_map(|m| std::iter::repeat_n(m.omega, m.multiplicity))
            .collect();
        out.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        out
    }

    pub fn count(&self, kind: ModeKind) -> usize {
        self.modes.iter().filter(|m| m.kind == kind).map(|m| m.multiplicity).sum()
    }

    /// The oscillator of largest `|ω|`.
    pub fn dominant(&self) -> Option<Scalar> {
        self.oscillators().map(|m| m.omega).max_by(|a, b| a.norm().total_cmp(&b.norm()))
    }
}

/// Canonical representative of `±ω`: `Re ω ≥ 0`, ties broken by `Im ω ≥ 0`.
pub fn branch_representative(omega: Scalar) -> Scalar {
    let tie = omega.re.abs() <= 1e-9 * omega.norm();
    let flip = if tie { omega.im < 0.0 } else { omega.re < 0.0 };
    if flip {
        -omega
    } else {
        omega
    }
}

fn eigenvalues(f: &CMatrix) -> Result<Vec<Scalar>> {
    let schur = nalgebra::linalg::Schur::new(f.clone());
    let (_, t) = schur.unpack();
    let vals: Vec<Scalar> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
    if vals.iter().any(|z| !is_finite(*z)) {
        return Err(Error::NonFiniteEigenvalue);
    }
    Ok(vals)
}

/// Normal modes of the reduced flow `F = D_red · hess(H_red)`.
///
/// The zero-eigenvalue sector is sized by the rank sequence of `F^k`, which is
/// robust where the eigenvalues of a Jordan block are not; its block sizes
/// decide between FREE and ZERO. The remaining eigenvalues are paired as
/// `±λ` and reported as `ω = −iλ`.
pub fn spectrum(rs: &ReducedSystem, rel_tol: f64) -> Result<SpectrumReport> {
    let f = rs.flow();
    let r = f.nrows();
    if r == 0 {
        return Ok(SpectrumReport { modes: vec![], dof_count: 0, dim: 0, eigenvalues: vec![] });
    }
    let eig = eigenvalues(&f)?;
    let fnorm = numerical_rank(&f, rel_tol)?.singular_values.first().copied().unwrap_or(0.0);

    // ranks[k] = rank(F^k)
    let mut ranks = vec![r];
    let mut power = CMatrix::identity(r, r);
    loop {
        power = &power * &f;
        let k = ranks.len() as i32;
        let rk = numerical_rank_with_floor(&power, rel_tol, fnorm.powi(k))?.rank;
        let prev = *ranks.last().unwrap();
        ranks.push(rk);
        if rk == prev || rk == 0 {
            break;
        }
    }
    let null_dim = r - *ranks.last().unwrap();
    let rank_at = |k: usize| ranks.get(k).copied().unwrap_or(*ranks.last().unwrap());
    let blocks_ge2 = rank_at(1) - rank_at(2);
    let free = blocks_ge2;
    let zero_dims = null_dim.saturating_sub(2 * free);

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig[a].norm().total_cmp(&eig[b].norm()));
    let nonzero: Vec<Scalar> = order[null_dim.min(r)..].iter().map(|&i| eig[i]).collect();

    let mut used = vec![false; nonzero.len()];
    let mut omegas = Vec::new();
    let mut idx: Vec<usize> = (0..nonzero.len()).collect();
    idx.sort_by(|&a, &b| nonzero[b].norm().total_cmp(&nonzero[a].norm()));
    for &i in &idx {
        if used[i] {
            continue;
        }
        used[i] = true;
        let lam = nonzero[i];
        let partner = (0..nonzero.len())
            .filter(|&k| !used[k])
            .min_by(|&x, &y| (lam + nonzero[x]).norm().total_cmp(&(lam + nonzero[y]).norm()));
        let avg = match partner {
            Some(k) => {
                used[k] = true;
                (lam - nonzero[k]) * re(0.5)
            }
            None => lam,
        };
        omegas.push(branch_representative(avg * Scalar::new(0.0, -1.0)));
    }

    let mut modes: Vec<Mode> = Vec::new();
    omegas.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    for w in omegas {
        match modes
            .iter_mut()
            .find(|m| (m.omega - w).norm() <= 1e-6 * w.norm().max(1.0))
        {
            Some(m) => m.multiplicity += 1,
            None => modes.push(Mode { omega: w, kind: ModeKind::Oscillator, multiplicity: 1 }),
        }
    }
    modes.sort_by(|a, b| a.omega.norm().total_cmp(&b.omega.norm()));
    if free > 0 {
        modes.push(Mode { omega: re(0.0), kind: ModeKind::Free, multiplicity: free });
    }
    if zero_dims > 0 {
        modes.push(Mode { omega: re(0.0), kind: ModeKind::Zero, multiplicity: zero_dims.div_ceil(2) });
    }
    let dof_count = modes.iter().map(|m| m.multiplicity).sum();
    Ok(SpectrumReport { modes, dof_count, dim: r, eigenvalues: eig })
}

/// Total Hamiltonian `H_T = H + Σ u_a(z) φ_a` with the multipliers of the
/// `generators` solved from preservation of every constraint in `ledger`
/// (minimum-norm solution; undetermined directions stay zero).
///
/// The canonical flow of `H_T` leaves the constraint surface invariant; the
/// function fails if some consistency condition is not implied by the ledger.
pub fn total_hamiltonian(
    h: &QuadHamiltonian,
    generators: &[AffinePhaseFn],
    ledger: &ConstraintLedger,
    j: &BracketMatrix,
    rel_tol: f64,
) -> Result<QuadHamiltonian> {
    let dim = j.dim();
    let fns = ledger.functions();
    if generators.is_empty() || fns.is_empty() {
        check_closure(h, &fns, generators, j, rel_tol)?;
        return Ok(h.clone());
    }
    let (a, flows) = consistency(h, &fns, generators, j)?;
    check_closure(h, &fns, generators, j, rel_tol)?;
    // v(z) = R z + r0; u = −A⁺ v
    let rmat = CMatrix::from_fn(fns.len(), dim, |i, c| flows[i].grad[c]);
    let r0 = CVector::from_fn(fns.len(), |i, _| flows[i].constant);
    let a_plus = pseudo_inverse(&a, rel_tol);
    let lmat = -(&a_plus * rmat); // m × dim
    let u0 = -(&a_plus * r0);
    let mut hess = h.hess.clone();
    let mut lin = h.lin.clone();
    let mut constant = h.constant;
    for (k, g) in generators.iter().enumerate() {
        let l = lmat.row(k).transpose();
        hess += &l * g.grad.transpose() + &g.grad * l.transpose();
        lin += &g.grad * u0[k] + &l * g.constant;
        constant += u0[k] * g.constant;
    }
    QuadHamiltonian::new(hess, lin, constant)
}

fn check_closure(
    h: &QuadHamiltonian,
    fns: &[AffinePhaseFn],
    generators: &[AffinePhaseFn],
    j: &BracketMatrix,
    rel_tol: f64,
) -> Result<()> {
    if fns.is_empty() {
        return Ok(());
    }
    let dim = j.dim();
    let (a, flows) = consistency(h, fns, generators, j)?;
    let left_null = if generators.is_empty() {
        CMatrix::identity(fns.len(), fns.len())
    } else {
        numerical_rank_with_floor(&a.transpose(), rel_tol, 1.0)?.null_basis
    };
    let grads: Vec<CVector> = fns.iter().map(|f| f.grad.clone()).collect();
    let scale = max_abs(&h.hess).max(1.0);
    for c in 0..left_null.ncols() {
        let w = left_null.column(c).into_owned();
        let cand = combine(&w, &flows, dim);
        let (alpha, resid) = residual_against(&grads, &cand.grad, dim);
        let rest = cand.sub(&combine(&alpha, fns, dim));
        if resid > rel_tol * scale * 10.0 || rest.constant.norm() > rel_tol * scale * 10.0 {
            return Err(Error::InconsistentConstraints(
                "a consistency condition is not implied by the constraint set".into(),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub rel_tol: f64,
    /// Defaults to `2n + 1`, enough for any chain on a `2n`-dimensional space.
    pub max_stage: Option<usize>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { rel_tol: DEFAULT_REL_TOL, max_stage: None }
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    /// Ledger after gauge fixing (all second-class).
    pub fixed: ConstraintLedger,
    pub total_hamiltonian: QuadHamiltonian,
    pub system: ReducedSystem,
    pub spectrum: SpectrumReport,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    /// First-class constraints are present and no gauge conditions were given.
    GaugeRequired { first_class: usize },
    Reduced(Box<Reduction>),
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub hamiltonian: QuadHamiltonian,
    pub primaries: ConstraintLedger,
    /// Full constraint set, classified.
    pub ledger: ConstraintLedger,
    /// `|det C|^{1/2}` of the classified ledger's Gram matrix (unit-norm gradients).
    pub gram_det_abs: f64,
    /// Gauge conditions were supplied but no first-class constraint needed them.
    pub unused_gauges: bool,
    pub outcome: Outcome,
}

impl Analysis {
    pub fn n_first(&self) -> usize {
        self.ledger.count(ConstraintClass::First)
    }

    pub fn n_second(&self) -> usize {
        self.ledger.count(ConstraintClass::Second)
    }

    pub fn reduction(&self) -> Option<&Reduction> {
        match &self.outcome {
            Outcome::Reduced(r) => Some(r),
            Outcome::GaugeRequired { .. } => None,
        }
    }

    pub fn spectrum(&self) -> Option<&SpectrumReport> {
        self.reduction().map(|r| &r.spectrum)
    }
}

/// Runs the whole pipeline.
pub fn analyze(
    l: &QuadLagrangian,
    gauges: Option<&[AffinePhaseFn]>,
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    let tol = opts.rel_tol;
    let j = l.space().symplectic();
    let (h, primaries) = legendre(l, tol)?;
    let max_stage = opts.max_stage.unwrap_or(2 * l.n() + 1);
    let chain = constraint_chain(&h, &primaries, &j, max_stage, tol)?;
    let ledger = classify(&chain, &j, tol)?;
    let gram_det_abs = pfaffian_abs(&ledger.gram(&j));
    let n_first = ledger.count(ConstraintClass::First);

    let mut unused_gauges = false;
    let fixed = match (n_first, gauges) {
        (0, g) => {
            unused_gauges = g.is_some_and(|g| !g.is_empty());
            ledger.clone()
        }
        (n, None) => {
            return Ok(Analysis {
                hamiltonian: h,
                primaries,
                ledger,
                gram_det_abs,
                unused_gauges,
                outcome: Outcome::GaugeRequired { first_class: n },
            })
        }
        (_, Some(g)) => gauge_fix(&ledger, g, &j, tol)?,
    };

    let mut generators = primaries.functions();
    generators.extend(ledger.of_class(ConstraintClass::First).iter().map(|r| r.function.clone()));
    let total = total_hamiltonian(&h, &generators, &fixed, &j, tol)?;
    let system = reduce(&h, &fixed, &j, tol)?;
    let spectrum = spectrum(&system, tol)?;
    Ok(Analysis {
        hamiltonian: h,
        primaries,
        ledger,
        gram_det_abs,
        unused_gauges,
        outcome: Outcome::Reduced(Box::new(Reduction { fixed, total_hamiltonian: total, system, spectrum })),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{bracket, fmt_scalar};
    use crate::zoo::{cranking, csm_field_mode, csm_particle, mcsp_point};
    use proptest::prelude::*;

    const TOL: f64 = DEFAULT_REL_TOL;

    fn opts() -> AnalysisOptions {
        AnalysisOptions::default()
    }

    fn cv(x: &[f64]) -> CVector {
        CVector::from_iterator(x.len(), x.iter().map(|&v| re(v)))
    }

    fn shown(ledger: &ConstraintLedger) -> Vec<String> {
        ledger.records().iter().map(|r| r.function.display(ledger.space()).to_string()).collect()
    }

    /// `L = ½(ẋ − y)² + ½ż² − ½w²z²`: `y` is pure gauge and `x` is cyclic.
    fn gauge_toy(w: f64) -> QuadLagrangian {
        let space = PhaseSpace::new(vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let m = CMatrix::from_diagonal(&cv(&[1.0, 0.0, 1.0]));
        let mut n = CMatrix::zeros(3, 3);
        n[(0, 1)] = re(-1.0);
        let k = CMatrix::from_diagonal(&cv(&[0.0, 1.0, -w * w]));
        QuadLagrangian::new(space, m, n, k).unwrap()
    }

    fn coord(l: &QuadLagrangian, name: &str) -> AffinePhaseFn {
        l.space().coordinate(name).unwrap()
    }

    #[test]
    fn legendre_csm_primary_and_hamiltonian() {
        let (a, e) = (2.5, 1.3);
        let l = csm_particle(re(a), e).unwrap();
        let (h, prim) = legendre(&l, TOL).unwrap();
        assert_eq!(shown(&prim), vec!["p_A0"]);
        // H = ½(p1 − eφ)² + ½(π − eA0)² − ½ae²(A0² − A1²)
        let z = cv(&[0.3, -0.7, 1.1, 0.4, -0.2, 0.9]);
        let (a0, a1, phi, p1, pp) = (0.3, -0.7, 1.1, -0.2, 0.9);
        let lit = 0.5 * (p1 - e * phi).powi(2) + 0.5 * (pp - e * a0).powi(2) - 0.5 * a * e * e * (a0 * a0 - a1 * a1);
        assert!((h.eval(&z).re - lit).abs() < 1e-12);
    }

    #[test]
    fn csm_chain_generic_a() {
        let (a, e) = (2.0, 1.0);
        let l = csm_particle(re(a), e).unwrap();
        let j = l.space().symplectic();
        let (h, prim) = legendre(&l, TOL).unwrap();
        let chain = constraint_chain(&h, &prim, &j, 7, TOL).unwrap();
        assert_eq!(shown(&chain), vec!["p_A0", "A0 + p_phi"]);
        assert_eq!(chain.records()[1].stage, 1);
        // {π₀, π + e(a−1)A₀} = −e(a−1)
        for (a, e) in [(2.0, 1.0), (3.0, 2.0), (0.5, 1.5)] {
            let l = csm_particle(re(a), e).unwrap();
            let chi = AffinePhaseFn::from_terms(6, &[(5, re(1.0)), (0, re(e * (a - 1.0)))]);
            let b = bracket(&coord(&l, "p_A0"), &chi, &l.space().symplectic()).unwrap();
            assert!((b - re(-e * (a - 1.0))).norm() < 1e-14);
            let (h, prim) = legendre(&l, TOL).unwrap();
            let chain = constraint_chain(&h, &prim, &l.space().symplectic(), 7, TOL).unwrap();
            let g = &chain.records()[1].function;
            // proportional to χ
            let ratio = g.grad[5] / chi.grad[5];
            assert!((g.grad.clone() - chi.grad.clone() * ratio).norm() < 1e-12);
        }
    }

    #[test]
    fn csm_critical_chain_closes_with_four_second_class() {
        let l = csm_particle(re(1.0), 1.0).unwrap();
        let an = analyze(&l, None, &opts()).unwrap();
        assert_eq!(an.n_first(), 0);
        assert_eq!(an.n_second(), 4);
        assert_eq!(shown(&an.ledger), vec!["p_A0", "p_phi", "-phi + p_A1", "-A0 + A1"]);
        let red = an.reduction().unwrap();
        assert_eq!(red.system.kept_labels(), vec!["A1", "p_A1"]);
        let hr = &red.system.hamiltonian.hess;
        assert!((hr[(0, 0)] - re(1.0)).norm() < 1e-12);
        assert!(hr[(0, 1)].norm() < 1e-12 && hr[(1, 1)].norm() < 1e-12);
        assert_eq!(red.spectrum.count(ModeKind::Free), 1);
        assert_eq!(red.spectrum.dof_count, 1);
        assert_eq!(red.spectrum.oscillators().count(), 0);
    }

    /// `{π₀, π, π₁ + eφ}` at the critical point, with `π₀` first class.
    fn critical_ledger_by_hand(e: f64) -> (QuadLagrangian, ConstraintLedger) {
        let l = csm_particle(re(1.0), e).unwrap();
        let mut ledger = ConstraintLedger::new(l.space().clone());
        let fns = [
            coord(&l, "p_A0"),
            coord(&l, "p_phi"),
            AffinePhaseFn::from_terms(6, &[(4, re(-1.0)), (2, re(e))]),
        ];
        for (s, f) in fns.into_iter().enumerate() {
            let rec = ConstraintRecord { function: f, stage: s, class: ConstraintClass::Unclassified, origin: "hand".into() };
            ledger.push(rec, TOL).unwrap();
        }
        (l, ledger)
    }

    #[test]
    fn classify_examples() {
        let (l, ledger) = critical_ledger_by_hand(1.0);
        let j = l.space().symplectic();
        let c = classify(&ledger, &j, TOL).unwrap();
        let classes: Vec<_> = c.records().iter().map(|r| r.class).collect();
        assert_eq!(classes, vec![ConstraintClass::First, ConstraintClass::Second, ConstraintClass::Second]);

        let mut lone = ConstraintLedger::new(l.space().clone());
        lone.push(
            ConstraintRecord { function: coord(&l, "p_A0"), stage: 0, class: ConstraintClass::Unclassified, origin: "p".into() },
            TOL,
        )
        .unwrap();
        assert_eq!(classify(&lone, &j, TOL).unwrap().records()[0].class, ConstraintClass::First);

        let l2 = csm_particle(re(2.0), 1.0).unwrap();
        let an = analyze(&l2, None, &opts()).unwrap();
        assert_eq!((an.n_first(), an.n_second()), (0, 2));
    }

    #[test]
    fn classify_extracts_first_class_combination() {
        // {q1, q1 + p2, p1}: only the difference p2 commutes with everything.
        let space = PhaseSpace::anonymous(2);
        let j = space.symplectic();
        let mut ledger = ConstraintLedger::new(space);
        for terms in [vec![(0, re(1.0))], vec![(0, re(1.0)), (3, re(1.0))], vec![(2, re(1.0))]] {
            let rec = ConstraintRecord {
                function: AffinePhaseFn::from_terms(4, &terms),
                stage: 0,
                class: ConstraintClass::Unclassified,
                origin: "t".into(),
            };
            ledger.push(rec, TOL).unwrap();
        }
        let c = classify(&ledger, &j, TOL).unwrap();
        assert_eq!(c.count(ConstraintClass::First), 1);
        assert_eq!(c.count(ConstraintClass::Second), 2);
        let first = &c.of_class(ConstraintClass::First)[0].function;
        for r in ledger.records() {
            assert!(bracket(first, &r.function, &j).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn gauge_fix_examples() {
        let (l, ledger) = critical_ledger_by_hand(1.0);
        let j = l.space().symplectic();
        let c = classify(&ledger, &j, TOL).unwrap();
        let fixed = gauge_fix(&c, &[coord(&l, "A0")], &j, TOL).unwrap();
        assert_eq!(fixed.len(), 4);
        assert_eq!(fixed.count(ConstraintClass::Second), 4);
        assert!(crate::algebra::numerical_rank(&fixed.gram(&j), TOL).unwrap().rank == 4);

        let err = gauge_fix(&c, &[coord(&l, "p_A0")], &j, TOL).unwrap_err();
        assert!(matches!(err, Error::InadmissibleGauge(_)));

        let err = gauge_fix(&c, &[coord(&l, "A1")], &j, TOL).unwrap_err();
        match err {
            Error::InadmissibleGauge(msg) => assert!(msg.contains("p_A0") && msg.contains("first-class")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(gauge_fix(&c, &[], &j, TOL), Err(Error::GaugeCountMismatch { first_class: 1, gauges: 0 })));

        let l2 = csm_particle(re(2.0), 1.0).unwrap();
        let an = analyze(&l2, None, &opts()).unwrap();
        let same = gauge_fix(&an.ledger, &[], &l2.space().symplectic(), TOL).unwrap();
        assert_eq!(same, an.ledger);
    }

    #[test]
    fn reduce_csm_generic() {
        for (a, e) in [(2.0, 1.0), (3.0, 1.5), (0.4, 0.7)] {
            let l = csm_particle(re(a), e).unwrap();
            let an = analyze(&l, None, &opts()).unwrap();
            let red = an.reduction().unwrap();
            assert_eq!(red.system.kept_labels(), vec!["A1", "phi", "p_A1", "p_phi"]);
            // ½[(π₁ + eφ)² + ae²A₁² + (a/(a−1))π²] with π₁ = −p_A1
            let zk = cv(&[0.6, -0.3, 1.2, 0.8]);
            let (a1, phi, p1, pp) = (0.6, -0.3, 1.2, 0.8);
            let lit = 0.5 * ((-p1 + e * phi).powi(2) + a * e * e * a1 * a1 + a / (a - 1.0) * pp * pp);
            assert!((red.system.hamiltonian.eval(&zk).re - lit).abs() < 1e-12);
            // lifted state is on the surface
            let z = red.system.lift(&zk);
            for r in red.fixed.records() {
                assert!(r.function.eval(&z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_empty_ledger_is_identity() {
        let l = cranking(1.0, 1.0).unwrap();
        let (h, prim) = legendre(&l, TOL).unwrap();
        let j = l.space().symplectic();
        let rs = reduce(&h, &prim, &j, TOL).unwrap();
        assert_eq!(rs.hamiltonian, h);
        assert_eq!(rs.bracket, j);
        assert_eq!(rs.kept, vec![0, 1, 2, 3]);
    }

    #[test]
    fn reduce_refuses_first_class() {
        let (l, ledger) = critical_ledger_by_hand(1.0);
        let j = l.space().symplectic();
        let c = classify(&ledger, &j, TOL).unwrap();
        let (h, _) = legendre(&l, TOL).unwrap();
        assert_eq!(reduce(&h, &c, &j, TOL), Err(Error::NotFullySecondClass));
    }

    #[test]
    fn spectrum_examples() {
        let sp3 = analyze(&csm_particle(re(3.0), 1.0).unwrap(), None, &opts()).unwrap();
        let sp3 = sp3.spectrum().unwrap();
        assert_eq!(fmt_scalar(sp3.oscillator_frequencies()[0]), fmt_scalar(re(4.5f64.sqrt())));
        assert!((sp3.oscillator_frequencies()[0].re - 2.1213).abs() < 5e-5);
        assert_eq!(sp3.count(ModeKind::Free), 1);
        assert_eq!(sp3.dof_count, 2);

        let half = analyze(&csm_particle(re(0.5), 1.0).unwrap(), None, &opts()).unwrap();
        let w = half.spectrum().unwrap().oscillator_frequencies()[0];
        assert!(w.re.abs() < 1e-12 && (w.im - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(!half.spectrum().unwrap().oscillators().next().unwrap().is_real());

        let cr = analyze(&cranking(0.0, 1.0).unwrap(), None, &opts()).unwrap();
        let sp = cr.spectrum().unwrap();
        assert_eq!(sp.modes.len(), 1);
        assert_eq!(sp.modes[0].multiplicity, 2);
        assert!((sp.modes[0].omega - re(1.0)).norm() < 1e-12);
    }

    #[test]
    fn gauge_toy_two_first_class() {
        let l = gauge_toy(1.5);
        let an = analyze(&l, None, &opts()).unwrap();
        assert_eq!(an.n_first(), 2);
        assert!(matches!(an.outcome, Outcome::GaugeRequired { first_class: 2 }));
        let gauges = [coord(&l, "y"), coord(&l, "x")];
        let an = analyze(&l, Some(&gauges), &opts()).unwrap();
        let red = an.reduction().unwrap();
        assert_eq!(red.system.kept_labels(), vec!["z", "p_z"]);
        let osc = red.spectrum.oscillator_frequencies();
        assert_eq!(osc.len(), 1);
        assert!((osc[0] - re(1.5)).norm() < 1e-12);
        // dim = 2n − #SCC − 2·#FCC
        assert_eq!(red.system.dim(), 6 - an.n_second() - 2 * an.n_first());

        // a gauge pairing with neither first-class constraint
        let bad = [coord(&l, "y"), coord(&l, "z")];
        assert!(matches!(analyze(&l, Some(&bad), &opts()), Err(Error::InadmissibleGauge(_))));
    }

    #[test]
    fn unused_gauges_are_flagged() {
        let l = csm_particle(re(2.0), 1.0).unwrap();
        let an = analyze(&l, Some(&[coord(&l, "A0")]), &opts()).unwrap();
        assert!(an.unused_gauges);
        assert!(an.reduction().is_some());
    }

    #[test]
    fn runaway_chain_reported() {
        let l = csm_particle(re(1.0), 1.0).unwrap();
        let (h, prim) = legendre(&l, TOL).unwrap();
        let err = constraint_chain(&h, &prim, &l.space().symplectic(), 2, TOL).unwrap_err();
        assert_eq!(err, Error::RunawayChain { max_stage: 2 });
    }

    #[test]
    fn inconsistent_system_rejected() {
        // H = −2y with p_y ≈ 0: {p_y, H} = 2.
        let space = PhaseSpace::new(vec!["y".into()]).unwrap();
        let (mut h, prim) = {
            let l = QuadLagrangian::new(space.clone(), CMatrix::zeros(1, 1), CMatrix::zeros(1, 1), CMatrix::zeros(1, 1)).unwrap();
            legendre(&l, TOL).unwrap()
        };
        h.lin[0] = re(-2.0);
        let err = constraint_chain(&h, &prim, &space.symplectic(), 3, TOL).unwrap_err();
        assert!(matches!(err, Error::InconsistentConstraints(_)));
    }

    #[test]
    fn dof_bookkeeping_across_zoo() {
        let cases: Vec<(QuadLagrangian, Vec<&str>)> = vec![
            (csm_particle(re(2.0), 1.0).unwrap(), vec![]),
            (csm_particle(re(1.0), 1.0).unwrap(), vec![]),
            (csm_field_mode(0.7, re(2.0), 1.0).unwrap(), vec![]),
            (csm_field_mode(0.7, re(1.0), 1.0).unwrap(), vec!["A0c", "A0s"]),
            (cranking(1.0, 0.3).unwrap(), vec![]),
            (mcsp_point(1.0, 0.3).unwrap(), vec![]),
            (gauge_toy(2.0), vec!["y", "x"]),
        ];
        for (l, g) in cases {
            let gauges: Vec<_> = g.iter().map(|s| coord(&l, s)).collect();
            let first = analyze(&l, None, &opts()).unwrap().n_first();
            let gauges = if first > 0 { Some(gauges.as_slice()) } else { None };
            let an = analyze(&l, gauges, &opts()).unwrap();
            let red = an.reduction().unwrap();
            assert_eq!(red.system.dim(), 2 * l.n() - an.n_second() - 2 * an.n_first());
            assert_eq!(red.spectrum.dof_count * 2, red.system.dim());
        }
    }

    #[test]
    fn total_derivative_leaves_spectrum_unchanged() {
        let l = csm_particle(re(2.7), 1.1).unwrap();
        let s = CMatrix::from_fn(3, 3, |i, j| re(0.3 * (i + 2 * j) as f64 - 0.4));
        let l2 = l.with_total_derivative(&s).unwrap();
        let w1 = analyze(&l, None, &opts()).unwrap().spectrum().unwrap().oscillator_frequencies();
        let w2 = analyze(&l2, None, &opts()).unwrap().spectrum().unwrap().oscillator_frequencies();
        assert_eq!(w1.len(), w2.len());
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    fn zoo_point(which: usize, x: f64, y: f64) -> QuadLagrangian {
        match which {
            0 => csm_particle(Scalar::new(x, y), 0.5 + y.abs()).unwrap(),
            1 => cranking(x, y.abs() + 0.1).unwrap(),
            2 => mcsp_point(x, y.abs() + 0.1).unwrap(),
            _ => csm_field_mode(y.abs(), Scalar::new(x, 0.0), 1.0).unwrap(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn eigenvalues_come_in_opposite_pairs(which in 0usize..4, x in -3.0f64..4.0, y in -2.0f64..2.0) {
            prop_assume!((Scalar::new(x, y) - re(1.0)).norm() > 0.05);
            let l = zoo_point(which, x, y);
            let an = analyze(&l, None, &opts()).unwrap();
            let sp = an.spectrum().unwrap();
            let scale = sp.eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);
            for lam in &sp.eigenvalues {
                let best = sp.eigenvalues.iter().map(|mu| (lam + mu).norm()).fold(f64::INFINITY, f64::min);
                // zero-sector eigenvalues of a Jordan block split like √ε
                prop_assert!(best < 1e-9 * scale || lam.norm() < 1e-6 * scale);
            }
        }

        #[test]
        fn reduced_energy_is_conserved(which in 0usize..4, x in -3.0f64..4.0, y in -2.0f64..2.0, seed in 0u64..1000) {
            prop_assume!((Scalar::new(x, y) - re(1.0)).norm() > 0.05);
            let an = analyze(&zoo_point(which, x, y), None, &opts()).unwrap();
            let rs = &an.reduction().unwrap().system;
            let f = rs.flow();
            let h = &rs.hamiltonian.hess;
            let z = CVector::from_fn(rs.dim(), |i, _| re(((seed as f64 + 1.0) * (i as f64 + 0.7)).sin()));
            let rate = (z.transpose() * h * &f * &z)[(0, 0)];
            let scale = crate::algebra::max_abs(h) * crate::algebra::max_abs(&f) * z.norm_squared();
            prop_assert!(rate.norm() <= 1e-10 * scale.max(1.0));
        }

        #[test]
        fn total_flow_preserves_constraints(which in 0usize..4, x in -3.0f64..4.0, y in -2.0f64..2.0, seed in 0u64..1000) {
            prop_assume!((Scalar::new(x, y) - re(1.0)).norm() > 0.05);
            let l = zoo_point(which, x, y);
            let an = analyze(&l, None, &opts()).unwrap();
            let red = an.reduction().unwrap();
            let ht = &red.total_hamiltonian;
            let j = l.space().symplectic();
            let zk = CVector::from_fn(red.system.dim(), |i, _| re(((seed as f64 + 3.0) * (i as f64 + 0.3)).cos()));
            let z = red.system.lift(&zk);
            let zdot = j.matrix() * ht.gradient_at(&z);
            let scale = crate::algebra::max_abs(&ht.hess).max(1.0) * z.norm().max(1.0);
            for r in red.fixed.records() {
                let rate = crate::algebra::dot(&r.function.grad, &zdot);
                prop_assert!(rate.norm() < 1e-9 * scale, "{}", rate);
            }
        }
    }
}
