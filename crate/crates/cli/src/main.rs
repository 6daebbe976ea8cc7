mod parse;
mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dirac_ladder::algebra::{re, AffinePhaseFn, DEFAULT_REL_TOL};
use dirac_ladder::engine::{analyze, Analysis, AnalysisOptions, Outcome, QuadLagrangian};
use dirac_ladder::model_file::{Entry, LoadedModel};
use dirac_ladder::oracle::{self, VerifyOptions};
use dirac_ladder::sweep::{self, Axis, SweepSpec};
use dirac_ladder::zoo::{ModelId, ModelParams};

use parse::{parse_assignments, parse_complex, parse_labels};
use report::AnalyzeReport;

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_GAUGE_REQUIRED: u8 = 2;

#[derive(Parser)]
#[command(name = "dirac-ladder", version, about = "Dirac-Bergmann constraint analysis and normal modes of quadratic Lagrangians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Constraint ledger, reduced Hamiltonian and spectrum of one model.
    Analyze(AnalyzeArgs),
    /// Parameter scan written as CSV (or JSON).
    Sweep(SweepArgs),
    /// Time-evolve the constrained system and compare Fourier peaks with the spectrum.
    Verify(VerifyArgs),
    /// Built-in models.
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
}

#[derive(Subcommand)]
enum ZooCommand {
    /// List built-in models and their parameters.
    List,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model name (see `zoo list`) or path to a JSON model file.
    model: String,
    /// Jackiw-Rajaraman parameter, e.g. `2` or `0.5+0.866i`.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    e: Option<f64>,
    /// Chern-Simons / cranking strength.
    #[arg(long = "B", allow_hyphen_values = true)]
    b: Option<f64>,
    /// Spring constant (cranking, mcsp-point) or wavenumber (csm-mode).
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    /// Comma-separated coordinate labels used as gauge conditions `label = 0`.
    #[arg(long)]
    gauge: Option<String>,
    /// Relative rank tolerance (default: $DIRAC_LADDER_TOL or 1e-9).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Evolution time.
    #[arg(long, default_value_t = 100.0)]
    time: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Seed for the initial state and observable.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the trajectory as CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: String,
    /// Swept parameter: a, a0, a1, e, B, k, k_mode, k_spring.
    #[arg(long, default_value = "a")]
    param: String,
    #[arg(long, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Second swept parameter (varies fastest).
    #[arg(long)]
    param2: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    from2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    to2: Option<f64>,
    #[arg(long)]
    points2: Option<usize>,
    /// Scan complex a: the first axis is a0, the second a1 (defaults to the first axis' range).
    #[arg(long)]
    complex_grid: bool,
    /// Fixed parameters, e.g. `e=1,a0=0.5`.
    #[arg(long, default_value = "")]
    fixed: String,
    /// Comma-separated subset of output columns.
    #[arg(long)]
    columns: Option<String>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Sweep(s) => cmd_sweep(&s),
        Command::Verify(v) => cmd_verify(&v),
        Command::Zoo { command: ZooCommand::List } => cmd_zoo_list(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) if is_broken_pipe(&e) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// A closed downstream pipe (`| head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().is_some_and(|x| x.kind() == io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<dirac_ladder::Error>().is_some_and(|x| x.to_string().contains("Broken pipe"))
    })
}

fn tolerance(flag: Option<f64>) -> Result<f64> {
    let tol = match flag {
        Some(t) => t,
        None => match std::env::var("DIRAC_LADDER_TOL") {
            Ok(v) => v.trim().parse().with_context(|| format!("DIRAC_LADDER_TOL=`{v}` is not a number"))?,
            Err(_) => DEFAULT_REL_TOL,
        },
    };
    if !(tol > 0.0 && tol < 1.0) {
        bail!("tolerance {tol} outside (0, 1)");
    }
    Ok(tol)
}

struct Resolved {
    name: String,
    lagrangian: QuadLagrangian,
    gauges: Option<Vec<AffinePhaseFn>>,
    params: BTreeMap<String, Entry>,
}

fn resolve(args: &ModelArgs) -> Result<Resolved> {
    let (name, lagrangian, file_gauges, params) = match args.model.parse::<ModelId>() {
        Ok(id) => {
            let mut p = ModelParams::default();
            let mut given: Vec<(&str, dirac_ladder::algebra::Scalar)> = Vec::new();
            if let Some(a) = &args.a {
                given.push(("a", parse_complex(a)?));
            }
            if let Some(e) = args.e {
                given.push(("e", re(e)));
            }
            if let Some(b) = args.b {
                given.push(("B", re(b)));
            }
            if let Some(k) = args.k {
                given.push(("k", re(k)));
            }
            for (n, v) in &given {
                if !id.parameters().contains(n) {
                    bail!("model `{id}` takes parameters {}; `--{n}` does not apply", id.parameters().join(", "));
                }
                sweep::set_param(&mut p, id, n, *v)?;
            }
            p.validate()?;
            let lag = id.build(&p)?;
            let params = id
                .parameters()
                .iter()
                .map(|&n| {
                    let v = match n {
                        "a" => p.a,
                        "e" => re(p.e),
                        "B" => re(p.b),
                        _ if id == ModelId::CsmMode => re(p.k_mode),
                        _ => re(p.k_spring),
                    };
                    (n.to_string(), Entry::from(v))
                })
                .collect();
            (id.name().to_string(), lag, None, params)
        }
        Err(_) => {
            let path = Path::new(&args.model);
            if !path.exists() {
                bail!("unknown model `{}` (see `dirac-ladder zoo list`, or pass a JSON model file)", args.model);
            }
            if args.a.is_some() || args.e.is_some() || args.b.is_some() || args.k.is_some() {
                bail!("model parameters apply to built-in models only");
            }
            let LoadedModel { lagrangian, gauges, warnings } = LoadedModel::from_path(path)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            (args.model.clone(), lagrangian, gauges, BTreeMap::new())
        }
    };
    let gauges = match &args.gauge {
        Some(list) => Some(
            parse_labels(list)
                .iter()
                .map(|l| lagrangian.space().coordinate(l).map_err(|_| anyhow!("unknown coordinate `{l}` in --gauge")))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => file_gauges,
    };
    Ok(Resolved { name, lagrangian, gauges, params })
}

fn run_analysis(args: &ModelArgs) -> Result<(Resolved, Analysis, f64)> {
    let tol = tolerance(args.tol)?;
    let r = resolve(args)?;
    let opts = AnalysisOptions { rel_tol: tol, ..Default::default() };
    let an = analyze(&r.lagrangian, r.gauges.as_deref(), &opts)?;
    Ok((r, an, tol))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let (r, an, tol) = run_analysis(&args.model)?;
    let rep = AnalyzeReport::new(&r.name, r.params, tol, &an);
    if args.json {
        println!("{}", rep.to_json());
    } else {
        print!("{}", rep.render());
    }
    Ok(match an.outcome {
        Outcome::GaugeRequired { .. } => EXIT_GAUGE_REQUIRED,
        Outcome::Reduced(_) => EXIT_OK,
    })
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let (r, an, _) = run_analysis(&args.model)?;
    if let Outcome::GaugeRequired { first_class } = an.outcome {
        eprintln!("{first_class} first-class constraint(s); supply --gauge");
        return Ok(EXIT_GAUGE_REQUIRED);
    }
    if !(args.dt > 0.0 && args.time > 0.0) {
        bail!("--dt and --time must be positive");
    }
    let opts = VerifyOptions { dt: args.dt, time: args.time, seed: args.seed, ..Default::default() };
    let rep = oracle::cross_check(&an, &opts)?;
    if let Some(path) = &args.trajectory {
        let red = an.reduction().expect("reduced");
        let space = an.ledger.space();
        let z0 = oracle::random_surface_point(space.dim(), &red.fixed.functions(), opts.seed);
        let steps = (opts.time / opts.dt).round() as usize;
        let traj = oracle::evolve(&red.total_hamiltonian, &space.symplectic(), &red.fixed.functions(), &z0, opts.dt, steps)?;
        let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        traj.write_csv(BufWriter::new(f), space)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rep)?);
    } else {
        let fmt_list = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
        println!("model: {}", r.name);
        println!("frequency bin: {:.4}", rep.bin);
        println!("engine oscillators: [{}]  free modes: {}", fmt_list(&rep.engine), rep.free_modes);
        println!("fourier peaks: [{}]", fmt_list(&rep.peaks.iter().map(|p| p.omega).collect::<Vec<_>>()));
        if !rep.unresolved.is_empty() {
            println!("below resolution: [{}]", fmt_list(&rep.unresolved));
        }
        let tag = |ok: bool| if ok { "PASS" } else { "FAIL" };
        println!("{} constraint drift {:.3e}", tag(rep.drift_ok), rep.constraint_drift);
        println!("{} energy drift {:.3e} (H0 = {:.6})", tag(rep.energy_ok), rep.energy_drift, rep.initial_energy);
        let mut detail = String::new();
        if !rep.unmatched_engine.is_empty() {
            detail += &format!(" missing peaks at [{}]", fmt_list(&rep.unmatched_engine));
        }
        if !rep.unmatched_peaks.is_empty() {
            detail += &format!(" unexplained peaks at [{}]", fmt_list(&rep.unmatched_peaks));
        }
        println!("{} peaks vs spectrum{detail}", tag(rep.peaks_ok));
        println!("{}", tag(rep.pass()));
    }
    Ok(if rep.pass() { EXIT_OK } else { EXIT_ERROR })
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let model: ModelId = args.model.parse()?;
    let (p1, p2) = if args.complex_grid { ("a0".to_string(), Some("a1".to_string())) } else { (args.param.clone(), args.param2.clone()) };
    let axis1 = Axis::new(p1, args.from, args.to, args.points)?;
    let mut spec = SweepSpec::new(model, axis1);
    if let Some(p2) = p2 {
        let axis2 = Axis::new(
            p2,
            args.from2.unwrap_or(args.from),
            args.to2.unwrap_or(args.to),
            args.points2.unwrap_or(args.points),
        )?;
        spec = spec.with_axis2(axis2);
    }
    for (k, v) in parse_assignments(&args.fixed)? {
        spec = spec.fix(k, v);
    }
    spec.rel_tol = tolerance(args.tol)?;
    if let Some(cols) = &args.columns {
        spec.outputs = parse_labels(cols);
    }
    let rows = match args.jobs {
        Some(j) => sweep::run_sweep_with_jobs(&spec, j)?,
        None => sweep::run_sweep(&spec)?,
    };
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let sink = BufWriter::new(sink);
    if args.json {
        sweep::write_json(&rows, sink)?;
    } else {
        sweep::write_csv(&rows, &spec.outputs, sink)?;
    }
    if let Some(path) = &args.out {
        eprintln!("wrote {} rows to {}", rows.len(), path.display());
    }
    Ok(EXIT_OK)
}

fn cmd_zoo_list() -> Result<u8> {
    for m in ModelId::ALL {
        println!("{:<11} {:<10} {}", m.name(), m.parameters().join(","), m.description());
    }
    Ok(EXIT_OK)
}
