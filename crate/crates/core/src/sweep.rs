//! Parameter scans running the full engine pipeline at every grid point.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{re, Scalar, DEFAULT_REL_TOL};
use crate::engine::{analyze, Analysis, AnalysisOptions, Outcome};
use crate::error::{Error, Result};
use crate::zoo::{reality_locus, ModelId, ModelParams};

/// Exact CSV header of sweep output.
pub const CSV_COLUMNS: [&str; 13] = [
    "model",
    "param1",
    "param2",
    "re_omega_plus",
    "im_omega_plus",
    "re_omega_minus",
    "im_omega_minus",
    "n_fcc",
    "n_scc",
    "dof",
    "gram_det_abs",
    "on_locus",
    "status",
];

/// Tolerance used for the reality-locus flag.
pub const LOCUS_TOL: f64 = 1e-9;

/// Sets one named parameter. `a` takes a complex value; `a0`/`a1` set its
/// real/imaginary part; `k` means the wavenumber for `csm-mode` and the
/// spring constant otherwise.
pub fn set_param(p: &mut ModelParams, model: ModelId, name: &str, value: Scalar) -> Result<()> {
    let real = |v: Scalar| {
        if v.im == 0.0 {
            Ok(v.re)
        } else {
            Err(Error::InvalidParameter(format!("parameter `{name}` must be real")))
        }
    };
    match name {
        "a" => p.a = value,
        "a0" => p.a.re = real(value)?,
        "a1" => p.a.im = real(value)?,
        "e" => p.e = real(value)?,
        "B" | "b" => p.b = real(value)?,
        "k" if model == ModelId::CsmMode => p.k_mode = real(value)?,
        "k" | "k_spring" => p.k_spring = real(value)?,
        "k_mode" => p.k_mode = real(value)?,
        other => return Err(Error::InvalidParameter(format!("unknown parameter `{other}`"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(param: impl Into<String>, start: f64, stop: f64, count: usize) -> Result<Self> {
        let axis = Self { param: param.into(), start, stop, count };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::InvalidParameter(format!("axis `{}` needs at least 2 points", self.param)));
        }
        if self.start == self.stop || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::InvalidParameter(format!("axis `{}` needs distinct finite end points", self.param)));
        }
        Ok(())
    }

    /// Evenly spaced values including both end points.
    pub fn values(&self) -> Vec<f64> {
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.stop } else { self.start + step * i as f64 })
            .collect()
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start).abs() / (self.count - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelId,
    pub axis1: Axis,
    pub axis2: Option<Axis>,
    pub fixed: BTreeMap<String, Scalar>,
    /// Subset of [`CSV_COLUMNS`] to emit; all when empty.
    pub outputs: Vec<String>,
    pub rel_tol: f64,
}

impl SweepSpec {
    pub fn new(model: ModelId, axis1: Axis) -> Self {
        Self { model, axis1, axis2: None, fixed: BTreeMap::new(), outputs: Vec::new(), rel_tol: DEFAULT_REL_TOL }
    }

    pub fn with_axis2(mut self, axis: Axis) -> Self {
        self.axis2 = Some(axis);
        self
    }

    pub fn fix(mut self, name: impl Into<String>, value: Scalar) -> Self {
        self.fixed.insert(name.into(), value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.axis1.validate()?;
        if let Some(a2) = &self.axis2 {
            a2.validate()?;
        }
        let mut probe = ModelParams::default();
        for (k, v) in &self.fixed {
            set_param(&mut probe, self.model, k, *v)?;
        }
        set_param(&mut probe, self.model, &self.axis1.param, re(self.axis1.start))?;
        if let Some(a2) = &self.axis2 {
            set_param(&mut probe, self.model, &a2.param, re(a2.start))?;
        }
        for c in &self.outputs {
            if !CSV_COLUMNS.contains(&c.as_str()) {
                return Err(Error::InvalidParameter(format!("unknown output column `{c}`")));
            }
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!("tolerance {} outside (0, 1)", self.rel_tol)));
        }
        Ok(())
    }

    /// Grid points in output order (axis 2 varies fastest).
    pub fn grid(&self) -> Vec<(f64, Option<f64>)> {
        let v1 = self.axis1.values();
        match &self.axis2 {
            None => v1.into_iter().map(|x| (x, None)).collect(),
            Some(a2) => {
                let v2 = a2.values();
                v1.iter().flat_map(|&x| v2.iter().map(move |&y| (x, Some(y)))).collect()
            }
        }
    }

    fn params_at(&self, p1: f64, p2: Option<f64>) -> Result<ModelParams> {
        let mut p = ModelParams::default();
        for (k, v) in &self.fixed {
            set_param(&mut p, self.model, k, *v)?;
        }
        set_param(&mut p, self.model, &self.axis1.param, re(p1))?;
        if let (Some(a2), Some(y)) = (&self.axis2, p2) {
            set_param(&mut p, self.model, &a2.param, re(y))?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: ModelId,
    pub param1: f64,
    pub param2: Option<f64>,
    /// Largest-|ω| oscillator, `Re ω ≥ 0` branch; `None` without oscillators.
    pub omega_plus: Option<Scalar>,
    pub omega_minus: Option<Scalar>,
    pub n_fcc: usize,
    pub n_scc: usize,
    pub dof: usize,
    pub gram_det_abs: f64,
    pub on_locus: bool,
    pub status: String,
}

/// Full pipeline at one parameter point; first-class constraints are fixed
/// with the model's default gauges.
pub fn analyze_point(model: ModelId, p: &ModelParams, rel_tol: f64) -> Result<Analysis> {
    p.validate()?;
    let l = model.build(p)?;
    let opts = AnalysisOptions { rel_tol, ..Default::default() };
    let an = analyze(&l, None, &opts)?;
    match an.outcome {
        Outcome::GaugeRequired { .. } => {
            let gauges = model.default_gauges(l.space());
            analyze(&l, Some(&gauges), &opts)
        }
        Outcome::Reduced(_) => Ok(an),
    }
}

fn row_at(spec: &SweepSpec, p1: f64, p2: Option<f64>) -> SweepRow {
    let mut row = SweepRow {
        model: spec.model,
        param1: p1,
        param2: p2,
        omega_plus: None,
        omega_minus: None,
        n_fcc: 0,
        n_scc: 0,
        dof: 0,
        gram_det_abs: f64::NAN,
        on_locus: false,
        status: String::new(),
    };
    let params = match spec.params_at(p1, p2) {
        Ok(p) => p,
        Err(e) => {
            row.status = format!("error: {e}");
            return row;
        }
    };
    if spec.model == ModelId::Csm {
        row.on_locus = reality_locus(params.a.re, params.a.im, LOCUS_TOL);
    }
    match analyze_point(spec.model, &params, spec.rel_tol) {
        Ok(an) => {
            row.n_fcc = an.n_first();
            row.n_scc = an.n_second();
            row.gram_det_abs = an.gram_det_abs;
            if let Some(sp) = an.spectrum() {
                row.dof = sp.dof_count;
                row.omega_plus = sp.dominant();
                row.omega_minus = row.omega_plus.map(|w| -w);
            }
            row.status = if row.n_fcc > 0 { "ok (gauge fixed)".into() } else { "ok".into() };
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Runs the sweep on the global rayon pool; rows follow grid order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    Ok(spec.grid().into_par_iter().map(|(x, y)| row_at(spec, x, y)).collect())
}

/// As [`run_sweep`] with at most `jobs` worker threads.
pub fn run_sweep_with_jobs(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| run_sweep(spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofPoint {
    pub param: f64,
    pub n_fcc: usize,
    pub n_scc: usize,
    pub dof: usize,
}

/// Constraint counts and degrees of freedom along one parameter.
pub fn dof_profile(model: ModelId, base: &ModelParams, param: &str, values: &[f64]) -> Result<Vec<DofPoint>> {
    values
        .iter()
        .map(|&v| {
            let mut p = *base;
            set_param(&mut p, model, param, re(v))?;
            let an = analyze_point(model, &p, DEFAULT_REL_TOL)?;
            let dof = an.spectrum().map(|s| s.dof_count).unwrap_or(0);
            Ok(DofPoint { param: v, n_fcc: an.n_first(), n_scc: an.n_second(), dof })
        })
        .collect()
}

fn cell(row: &SweepRow, col: &str) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    match col {
        "model" => row.model.to_string(),
        "param1" => row.param1.to_string(),
        "param2" => opt(row.param2),
        "re_omega_plus" => opt(row.omega_plus.map(|w| w.re)),
        "im_omega_plus" => opt(row.omega_plus.map(|w| w.im)),
        "re_omega_minus" => opt(row.omega_minus.map(|w| w.re)),
        "im_omega_minus" => opt(row.omega_minus.map(|w| w.im)),
        "n_fcc" => row.n_fcc.to_string(),
        "n_scc" => row.n_scc.to_string(),
        "dof" => row.dof.to_string(),
        "gram_det_abs" => {
            if row.gram_det_abs.is_nan() {
                String::new()
            } else {
                row.gram_det_abs.to_string()
            }
        }
        "on_locus" => row.on_locus.to_string(),
        "status" => row.status.clone(),
        _ => String::new(),
    }
}

/// Writes rows as CSV; `columns` empty means every column.
pub fn write_csv<W: Write>(rows: &[SweepRow], columns: &[String], w: W) -> Result<()> {
    let cols: Vec<&str> = if columns.is_empty() {
        CSV_COLUMNS.to_vec()
    } else {
        CSV_COLUMNS.iter().copied().filter(|c| columns.iter().any(|x| x == c)).collect()
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&cols)?;
    for r in rows {
        out.write_record(cols.iter().map(|c| cell(r, c)))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csm_a(start: f64, stop: f64, count: usize) -> SweepSpec {
        SweepSpec::new(ModelId::Csm, Axis::new("a", start, stop, count).unwrap()).fix("e", re(1.0))
    }

    #[test]
    fn axis_validation() {
        assert!(Axis::new("a", 1.0, 1.0, 5).is_err());
        assert!(Axis::new("a", 0.0, 1.0, 1).is_err());
        let ax = Axis::new("a", 0.0, 1.0, 5).unwrap();
        assert_eq!(ax.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let mut spec = csm_a(0.1, 2.0, 3);
        spec.outputs = vec!["bogus".into()];
        assert!(run_sweep(&spec).is_err());
        assert!(run_sweep(&csm_a(0.1, 2.0, 3).fix("zeta", re(1.0))).is_err());
    }

    #[test]
    fn real_a_above_one() {
        let rows = run_sweep(&csm_a(1.1, 5.0, 40)).unwrap();
        let (best, wmin) = rows
            .iter()
            .map(|r| (r.param1, r.omega_plus.unwrap().re))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((wmin - 2.0).abs() < 5e-3, "{wmin}");
        assert!((best - 2.0).abs() <= 0.1 + 1e-12);
        assert!(rows.iter().all(|r| r.omega_plus.unwrap().im.abs() < 1e-12));
        for r in &rows {
            assert_eq!(r.omega_minus.unwrap(), -r.omega_plus.unwrap());
            assert_eq!(r.n_scc % 2, 0);
        }
    }

    #[test]
    fn real_a_below_one_is_imaginary() {
        let rows = run_sweep(&csm_a(0.1, 0.9, 9)).unwrap();
        for r in &rows {
            let w = r.omega_plus.unwrap();
            assert!(w.re.abs() < 1e-12);
            let expect = r.param1 / (1.0 - r.param1).sqrt();
            assert!((w.im - expect).abs() < 1e-9);
        }
        let half = rows.iter().find(|r| (r.param1 - 0.5).abs() < 1e-12).unwrap();
        assert!((half.omega_plus.unwrap().im - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn locus_crossing_in_a1() {
        let s3 = 3f64.sqrt() / 2.0;
        let spec = SweepSpec::new(ModelId::Csm, Axis::new("a1", -s3, s3, 5).unwrap())
            .fix("e", re(1.0))
            .fix("a0", re(0.5));
        let rows = run_sweep(&spec).unwrap();
        for r in [&rows[0], &rows[4]] {
            let w = r.omega_plus.unwrap();
            assert!(w.im.abs() < 1e-8 && (w.re - 1.0).abs() < 1e-8);
            assert!(r.on_locus);
        }
        assert!(rows[1..4].iter().all(|r| !r.on_locus && r.omega_plus.unwrap().im.abs() > 1e-6));
    }

    #[test]
    fn critical_point_only_on_exact_hit() {
        let rows = run_sweep(&csm_a(0.5, 1.5, 3)).unwrap();
        assert_eq!(rows[1].param1, 1.0);
        assert_eq!(rows[1].dof, 1);
        assert!(rows[1].omega_plus.is_none());
        assert_eq!(rows[0].dof, 2);
        let rows = run_sweep(&csm_a(0.5, 1.5, 4)).unwrap();
        assert!(rows.iter().all(|r| r.dof == 2));
    }

    #[test]
    fn gram_vanishes_linearly_near_critical_point() {
        let rows = run_sweep(&csm_a(1.001, 1.01, 10)).unwrap();
        for r in &rows {
            let slope = r.gram_det_abs / (r.param1 - 1.0);
            assert!((slope - 1.0).abs() < 0.05, "{slope}");
        }
    }

    #[test]
    fn dof_profiles() {
        let base = ModelParams { e: 1.0, ..Default::default() };
        let prof = dof_profile(ModelId::Csm, &base, "a", &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(prof.iter().map(|p| p.dof).collect::<Vec<_>>(), vec![2, 1, 2]);
        let prof = dof_profile(ModelId::Cranking, &ModelParams { b: 1.5, ..base }, "k", &[0.0, 0.5, 2.0]).unwrap();
        assert!(prof.iter().all(|p| p.n_fcc == 0 && p.n_scc == 0 && p.dof == 2));
        let prof = dof_profile(ModelId::McspPoint, &ModelParams { b: 0.7, ..base }, "k", &[0.3, 1.0, 3.0]).unwrap();
        assert!(prof.iter().all(|p| p.n_scc == 2 && p.dof == 2));
    }

    #[test]
    fn two_axis_grid_order_and_parallel_determinism() {
        let spec = SweepSpec::new(ModelId::Csm, Axis::new("a0", 0.2, 1.8, 5).unwrap())
            .with_axis2(Axis::new("a1", -0.5, 0.5, 3).unwrap())
            .fix("e", re(1.0));
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!((rows[1].param1, rows[1].param2), (0.2, Some(0.0)));
        let one = run_sweep_with_jobs(&spec, 1).unwrap();
        assert_eq!(rows, one);
    }

    #[test]
    fn csv_header_and_empty_cells() {
        let rows = run_sweep(&csm_a(0.5, 1.0, 2)).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let last = lines.nth(1).unwrap();
        assert!(last.starts_with("csm,1,,,,,,0,4,1,"), "{last}");
        let mut buf = Vec::new();
        write_csv(&rows, &["status".into(), "param1".into()], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("param1,status\n"));
        let mut buf = Vec::new();
        write_json(&rows, &mut buf).unwrap();
        let back: Vec<SweepRow> = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn errors_are_recorded_per_row() {
        let spec = SweepSpec::new(ModelId::McspPoint, Axis::new("k", -1.0, 1.0, 3).unwrap());
        let rows = run_sweep(&spec).unwrap();
        assert!(rows[0].status.starts_with("error"));
        assert!(rows[1].status.starts_with("error"));
        assert_eq!(rows[2].status, "ok");
    }
}
