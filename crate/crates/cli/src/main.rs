//! `radiocast`: generate and validate instances, run scenario sweeps, report on traces.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 parse or parameter error, 3 validation failure.

mod scenario;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use radiocast::dynamics::{hop_metrics, validate_schedule, AdversarySchedule, ValidateOptions};
use radiocast::engine::{completion_metrics, replay_verify, summary_csv, summary_rows, Problem, SimulationTrace};
use radiocast::experiments::{InstanceSpec, Shape};
use radiocast::instance::Instance;
use radiocast::Error;

use scenario::{materialize, run_sweep, Scenario};

#[derive(Parser)]
#[command(name = "radiocast", version, about = "Radio broadcast simulator on quasi-metric path-loss instances")]
struct Cli {
    /// Seed for generators, and for `run` when the scenario has no seed axis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (`gen`, `report`) or directory (`run`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Euclidean,
    Lowerbound,
    Big,
    Grid,
    Line,
    Clique,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance file and print its validation summary.
    Gen {
        kind: GenKind,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        side: Option<f64>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long = "radius", default_value_t = 1.0)]
        r: f64,
    },
    /// Validate an instance, a schedule (with `--instance`) or a scenario file.
    Validate {
        file: PathBuf,
        /// Instance a schedule refers to.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Radius multiples probed by the independence check.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        q: Vec<f64>,
    },
    /// Run every point of a scenario sweep.
    Run { scenario: PathBuf },
    /// Check a trace and write its per-node summary CSV.
    Report {
        trace: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        /// Re-run the trace's config and compare hashes.
        #[arg(long)]
        replay: bool,
        #[arg(long, default_value_t = 1.0)]
        stable_c: f64,
    },
}

/// Error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::IntegrityFailure(_) => 3,
            Error::Io(_) | Error::MissingScript { .. } | Error::NotATransmitter(_) => 1,
            _ => 2,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(2, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(1, e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match &cli.cmd {
        Cmd::Gen { .. } => cmd_gen(&cli),
        Cmd::Validate { file, instance, q } => cmd_validate(file, instance.as_deref(), q),
        Cmd::Run { scenario } => cmd_run(scenario, cli.seed, cli.out.as_deref()),
        Cmd::Report {
            trace,
            instance,
            replay,
            stable_c,
        } => cmd_report(trace, instance, *replay, *stable_c, cli.out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn need<T>(x: Option<T>, flag: &str) -> Result<T, Failure> {
    x.ok_or_else(|| Failure::new(2, format!("--{flag} is required for this kind")))
}

fn cmd_gen(cli: &Cli) -> CliResult {
    let Cmd::Gen {
        kind,
        n,
        w,
        h,
        spacing,
        side,
        density,
        zeta,
        epsilon,
        r,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let zeta = zeta.unwrap_or(3.0);
    let shape = match kind {
        GenKind::Euclidean => Shape::Euclidean {
            n: need(*n, "n")?,
            side: *side,
            density: if side.is_none() && density.is_none() { Some(4.0) } else { *density },
            zeta,
        },
        GenKind::Line => Shape::Line {
            n: need(*n, "n")?,
            spacing: spacing.unwrap_or(0.7),
            zeta,
        },
        GenKind::Grid => Shape::Grid {
            w: need(*w, "w")?,
            h: need(*h, "h")?,
            spacing: spacing.unwrap_or(0.7),
            zeta,
        },
        GenKind::Clique => Shape::Clique {
            n: need(*n, "n")?,
            side: side.unwrap_or(0.3),
        },
        GenKind::Lowerbound => Shape::LowerBound { n: need(*n, "n")? },
        GenKind::Big => Shape::Big {
            w: need(*w, "w")?,
            h: need(*h, "h")?,
        },
    };
    let spec = InstanceSpec {
        shape,
        r: *r,
        epsilon: *epsilon,
        seed: None,
    };
    let (inst, source) = spec.build(cli.seed.unwrap_or(0))?;
    match &cli.out {
        Some(p) => inst.save(p)?,
        None => println!("{}", inst.to_json()?),
    }
    let rep = inst.validate(&[1.0, 2.0, 4.0]);
    let hops = hop_metrics(&inst.space, &inst.radii);
    let mut summary = json!({
        "n": rep.n,
        "zeta": rep.zeta,
        "metricity": rep.metricity,
        "independence_pass": rep.independence.as_ref().map(|i| i.pass),
        "hop_diameter": hops.diameter,
        "strongly_connected": hops.strongly_connected,
        "warnings": rep.warnings,
        "pass": rep.pass,
    });
    if let Some(s) = source {
        summary["source"] = json!(s);
    }
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    Ok(Instance::from_json(&fs::read_to_string(path)?)?)
}

fn verdict(pass: bool, report: Value) -> CliResult {
    println!("{}", serde_json::to_string_pretty(&report)?);
    if pass {
        Ok(())
    } else {
        Err(Failure::new(3, "validation failed"))
    }
}

fn cmd_validate(file: &Path, instance: Option<&Path>, q: &[f64]) -> CliResult {
    let text = fs::read_to_string(file)?;
    let value: Value = serde_json::from_str(&text)?;
    if value.get("schema_version").is_some() {
        let scenario: Scenario = serde_json::from_value(value)?;
        let points = Scenario::load(file)?.points(None)?;
        let mut reports = Vec::new();
        let mut pass = true;
        for p in &points {
            let (inst, _) = materialize(p, scenario.dynamics.as_ref())?;
            let rep = inst.validate(q);
            pass &= rep.pass;
            reports.push(json!({"point": p.key.label(), "pass": rep.pass, "warnings": rep.warnings}));
        }
        return verdict(pass, json!({"kind": "scenario", "points": reports, "pass": pass}));
    }
    if value.get("losses").is_some() {
        let inst = Instance::from_json(&text)?;
        let rep = inst.validate(q);
        return verdict(rep.pass, serde_json::to_value(&rep)?);
    }
    let schedule: AdversarySchedule = serde_json::from_value(value)?;
    let path = instance.ok_or_else(|| Failure::new(2, "validating a schedule needs --instance"))?;
    let inst = load_instance(path)?;
    let rep = validate_schedule(&schedule, &inst.space, &inst.radii, &ValidateOptions::default())?;
    verdict(rep.pass, serde_json::to_value(&rep)?)
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<&Path>) -> CliResult {
    let scenario = Scenario::load(path)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| scenario.output.clone())
        .ok_or_else(|| Failure::new(2, "no output directory: pass --out or set `output`"))?;
    let outcome = run_sweep(&scenario, seed, &dir)?;
    eprintln!("{} points, {} failed; aggregate in {}", outcome.points, outcome.failures.len(), dir.join("aggregate.csv").display());
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        for (label, msg) in &outcome.failures {
            eprintln!("  {label}: {msg}");
        }
        Err(Failure::new(1, format!("{} sweep point(s) failed", outcome.failures.len())))
    }
}

fn cmd_report(trace_path: &Path, instance: &Path, replay: bool, stable_c: f64, out: Option<&Path>) -> CliResult {
    let trace = SimulationTrace::read_jsonl(BufReader::new(fs::File::open(trace_path)?))?;
    let inst = load_instance(instance)?;
    if trace.header.instance_digest != inst.digest()? {
        return Err(Failure::new(3, "instance does not match the trace's instance digest"));
    }
    let cfg = trace.header.config.clone();
    if replay && !replay_verify(&trace, &inst, &cfg)? {
        return Err(Failure::new(3, "replay produced a different trace hash"));
    }
    let rows = summary_rows(&trace, &inst, stable_c)?;
    let csv = summary_csv(&rows);
    let problem = if cfg.protocol.kind.is_global() { Problem::Global } else { Problem::Local };
    let rep = completion_metrics(&trace, &inst, problem)?;
    let summary = json!({
        "protocol": cfg.protocol.kind.to_string(),
        "rounds": trace.footer.rounds,
        "completed_at": trace.footer.completed_at,
        "completion": rep.completion,
        "hash": trace.footer.hash,
        "replayed": replay,
    });
    match out {
        Some(p) => {
            fs::write(p, csv)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        None => {
            print!("{csv}");
            eprintln!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}
