use std::collections::BTreeMap;
use std::fmt::Write as _;

use dirac_ladder::algebra::{fmt_scalar, CMatrix, PhaseSpace, Scalar};
use dirac_ladder::engine::{Analysis, ConstraintLedger, Outcome};
use dirac_ladder::model_file::Entry;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub stage: usize,
    pub class: String,
    pub expression: String,
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub kind: String,
    pub re_omega: f64,
    pub im_omega: f64,
    pub multiplicity: usize,
    pub real: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub kept: Vec<String>,
    pub hamiltonian: Vec<Vec<Entry>>,
    pub linear: Vec<Entry>,
    pub eliminated: Vec<(String, String)>,
    pub modes: Vec<ModeRow>,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub model: String,
    pub params: BTreeMap<String, Entry>,
    pub rel_tol: f64,
    pub status: String,
    pub n_fcc: usize,
    pub n_scc: usize,
    pub gram_det_abs: f64,
    pub unused_gauges: bool,
    pub constraints: Vec<ConstraintRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gauge_conditions: Vec<String>,
    pub notes: Vec<String>,
    pub reduced: Option<ReducedReport>,
}

fn rows(ledger: &ConstraintLedger) -> Vec<ConstraintRow> {
    ledger
        .records()
        .iter()
        .map(|r| ConstraintRow {
            stage: r.stage,
            class: r.class.to_string(),
            expression: r.function.display(ledger.space()).to_string(),
            origin: r.origin.clone(),
        })
        .collect()
}

fn entries(m: &CMatrix) -> Vec<Vec<Entry>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| Entry::from(clean(m[(i, j)]))).collect()).collect()
}

/// Flushes rounding residue so the printed matrices are readable.
fn clean(z: Scalar) -> Scalar {
    let f = |x: f64| if x.abs() < 1e-13 { 0.0 } else { x };
    Scalar::new(f(z.re), f(z.im))
}

impl AnalyzeReport {
    pub fn new(model: &str, params: BTreeMap<String, Entry>, rel_tol: f64, an: &Analysis) -> Self {
        let space: &PhaseSpace = an.ledger.space();
        let status = match &an.outcome {
            Outcome::GaugeRequired { .. } => "gauge-required",
            Outcome::Reduced(_) => "reduced",
        };
        let mut gauge_conditions = Vec::new();
        let reduced = an.reduction().map(|red| {
            for r in red.fixed.records().iter().filter(|r| r.origin == "gauge condition") {
                gauge_conditions.push(r.function.display(space).to_string());
            }
            let sys = &red.system;
            let kept = sys.kept_labels();
            ReducedReport {
                kept,
                hamiltonian: entries(&sys.hamiltonian.hess),
                linear: sys.hamiltonian.lin.iter().map(|z| Entry::from(clean(*z))).collect(),
                eliminated: sys
                    .elimination_map()
                    .into_iter()
                    .map(|(i, f)| (space.label(i).to_string(), expression_in(&f.grad, f.constant, &sys.kept_labels())))
                    .collect(),
                modes: red
                    .spectrum
                    .modes
                    .iter()
                    .map(|m| ModeRow {
                        kind: m.kind.to_string(),
                        re_omega: clean(m.omega).re,
                        im_omega: clean(m.omega).im,
                        multiplicity: m.multiplicity,
                        real: m.is_real(),
                    })
                    .collect(),
                dof: red.spectrum.dof_count,
            }
        });
        Self {
            model: model.to_string(),
            params,
            rel_tol,
            status: status.to_string(),
            n_fcc: an.n_first(),
            n_scc: an.n_second(),
            gram_det_abs: an.gram_det_abs,
            unused_gauges: an.unused_gauges,
            constraints: rows(&an.ledger),
            gauge_conditions,
            notes: an.ledger.notes().to_vec(),
            reduced,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k} = {}", fmt_scalar(v.value()))).collect();
        if params.is_empty() {
            let _ = writeln!(s, "model: {}", self.model);
        } else {
            let _ = writeln!(s, "model: {} ({})", self.model, params.join(", "));
        }
        let _ = writeln!(s, "\nconstraints:");
        let width = self.constraints.iter().map(|c| c.expression.len()).max().unwrap_or(10).max(10);
        let _ = writeln!(s, "  {:>3}  {:>5}  {:<12}  {:<width$}  origin", "#", "stage", "class", "expression");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(s, "  {:>3}  {:>5}  {:<12}  {:<width$}  {}", i, c.stage, c.class, c.expression, c.origin);
        }
        let _ = writeln!(
            s,
            "  first-class: {}  second-class: {}  |det C|^(1/2): {:.6e}",
            self.n_fcc, self.n_scc, self.gram_det_abs
        );
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        if self.unused_gauges {
            let _ = writeln!(s, "  note: no first-class constraints; gauge conditions ignored");
        }
        for g in &self.gauge_conditions {
            let _ = writeln!(s, "  gauge: {g} = 0");
        }
        let Some(r) = &self.reduced else {
            let _ = writeln!(
                s,
                "\n{} first-class constraint{}; supply --gauge",
                self.n_fcc,
                if self.n_fcc == 1 { "" } else { "s" }
            );
            return s;
        };
        let _ = writeln!(s, "\nreduced phase space: {}", r.kept.join(", "));
        for (label, expr) in &r.eliminated {
            let _ = writeln!(s, "  {label} = {expr}");
        }
        let _ = writeln!(s, "\nreduced Hamiltonian H = ½ zᵀ A z + bᵀ z, z = ({}):", r.kept.join(", "));
        let cells: Vec<Vec<String>> =
            r.hamiltonian.iter().map(|row| row.iter().map(|e| fmt_scalar(e.value())).collect()).collect();
        let w = cells.iter().flatten().map(|c| c.len()).max().unwrap_or(1);
        for row in &cells {
            let line: Vec<String> = row.iter().map(|c| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "  [ {} ]", line.join("  "));
        }
        if r.linear.iter().any(|e| e.value().norm() != 0.0) {
            let b: Vec<String> = r.linear.iter().map(|e| fmt_scalar(e.value())).collect();
            let _ = writeln!(s, "  b = ({})", b.join(", "));
        }
        let _ = writeln!(s, "\nspectrum:");
        let _ = writeln!(s, "  {:<10}  {:<24}  {:>4}  real", "kind", "omega", "mult");
        for m in &r.modes {
            let w = fmt_scalar(Scalar::new(m.re_omega, m.im_omega));
            let _ = writeln!(s, "  {:<10}  {:<24}  {:>4}  {}", m.kind, w, m.multiplicity, if m.real { "yes" } else { "no" });
        }
        let _ = writeln!(s, "\nDOF: {}", r.dof);
        s
    }
}

fn expression_in(grad: &dirac_ladder::algebra::CVector, constant: Scalar, labels: &[String]) -> String {
    let mut parts = Vec::new();
    for (c, l) in grad.iter().zip(labels) {
        let c = clean(*c);
        if c.norm() == 0.0 {
            continue;
        }
        let coef = fmt_scalar(c);
        parts.push(match coef.as_str() {
            "1" => l.clone(),
            "-1" => format!("-{l}"),
            _ => format!("{coef} {l}"),
        });
    }
    let k = clean(constant);
    if k.norm() != 0.0 || parts.is_empty() {
        parts.push(fmt_scalar(k));
    }
    parts.join(" + ").replace("+ -", "- ")
}
