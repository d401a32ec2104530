//! Scenario files: one instance spec and simulation config, swept over seeds, sizes and
//! reception models.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use radiocast::engine::{completion_metrics, prepare, run, summary_csv, summary_rows, Problem, SimulationConfig, SCHEMA_VERSION};
use radiocast::experiments::{dynamic_schedule, InstanceSpec};
use radiocast::instance::Instance;
use radiocast::models::ModelKind;
use radiocast::stats::{median, quantile};
use radiocast::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub instance: InstanceSpec,
    pub config: SimulationConfig,
    #[serde(default)]
    pub sweep: Sweep,
    /// Generated drift and churn, validated before each run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<Dynamics>,
    /// Hop-length factor of the stable distance used in global bound ratios.
    #[serde(default = "one")]
    pub stable_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Absent: the config's seed only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    /// Node counts; empty keeps the instance spec's size.
    #[serde(default)]
    pub n: Vec<usize>,
    /// Reception models; empty keeps the config's model.
    #[serde(default)]
    pub models: Vec<ModelKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    /// Half-open `[start, end)`.
    Range { start: u64, end: u64 },
}

impl Seeds {
    fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { start, end } => (*start..*end).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(default)]
    pub drift_speed: f64,
    #[serde(default)]
    pub churn_rate: f64,
}

/// One sweep point, ordered by `(n, model, seed)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PointKey {
    pub n: Option<usize>,
    pub model: String,
    pub seed: u64,
}

impl PointKey {
    pub fn label(&self) -> String {
        match self.n {
            Some(n) => format!("n{n}_{}_s{}", self.model, self.seed),
            None => format!("{}_s{}", self.model, self.seed),
        }
    }
}

pub struct Point {
    pub key: PointKey,
    pub spec: InstanceSpec,
    pub config: SimulationConfig,
}

pub fn model_name(kind: ModelKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let s: Scenario = serde_json::from_str(&fs::read_to_string(path)?)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::ConfigInvalid {
                locator: "schema_version".into(),
                reason: format!("expected {SCHEMA_VERSION}, got {}", s.schema_version),
            });
        }
        Ok(s)
    }

    /// All sweep points, sorted. `seed_override` replaces the config seed when no seed axis is set.
    pub fn points(&self, seed_override: Option<u64>) -> Result<Vec<Point>> {
        let seeds = match &self.sweep.seeds {
            Some(s) => s.expand(),
            None => vec![seed_override.unwrap_or(self.config.seed)],
        };
        let sizes: Vec<Option<usize>> = if self.sweep.n.is_empty() {
            vec![None]
        } else {
            self.sweep.n.iter().map(|&n| Some(n)).collect()
        };
        let models = if self.sweep.models.is_empty() {
            vec![self.config.model.kind]
        } else {
            self.sweep.models.clone()
        };
        let mut out = Vec::new();
        for &n in &sizes {
            let spec = match n {
                Some(n) => self.instance.with_n(n)?,
                None => self.instance.clone(),
            };
            for &model in &models {
                for &seed in &seeds {
                    let mut config = self.config.clone();
                    config.seed = seed;
                    config.model.kind = model;
                    out.push(Point {
                        key: PointKey {
                            n,
                            model: model_name(model),
                            seed,
                        },
                        spec: spec.clone(),
                        config,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out.dedup_by(|a, b| a.key == b.key);
        Ok(out)
    }
}

/// Instance and final config of a sweep point, with the schedule generated if asked for.
pub fn materialize(point: &Point, dynamics: Option<&Dynamics>) -> Result<(Instance, SimulationConfig)> {
    let (inst, source) = point.spec.build(point.config.seed)?;
    let mut cfg = point.config.clone();
    if let Some(s) = source {
        cfg.source = s;
    }
    if let Some(d) = dynamics {
        let setup = dynamic_schedule(&inst, d.drift_speed, d.churn_rate, cfg.horizon, cfg.seed)?;
        if !setup.report.pass {
            return Err(Error::ConfigInvalid {
                locator: "dynamics".into(),
                reason: format!("generated schedule fails validation: {}", serde_json::to_string(&setup.report)?),
            });
        }
        cfg.schedule = Some(setup.schedule);
    }
    prepare(&inst, &cfg)?;
    Ok((inst, cfg))
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub nodes: usize,
    pub protocol: String,
    pub rounds: u64,
    pub completed_at: Option<u64>,
    pub completion: Option<u64>,
    pub ratios: Vec<f64>,
    pub hash: String,
}

fn run_point(point: &Point, scenario: &Scenario, out: &Path) -> Result<PointResult> {
    let (inst, cfg) = materialize(point, scenario.dynamics.as_ref())?;
    let label = point.key.label();
    inst.save(out.join("instances").join(format!("{label}.json")))?;
    let trace = run(&inst, &cfg)?;
    trace.save(out.join("traces").join(format!("{label}.jsonl")))?;
    let rows = summary_rows(&trace, &inst, scenario.stable_c)?;
    fs::write(out.join("summaries").join(format!("{label}.csv")), summary_csv(&rows))?;
    let problem = if cfg.protocol.kind.is_global() { Problem::Global } else { Problem::Local };
    let rep = completion_metrics(&trace, &inst, problem)?;
    Ok(PointResult {
        nodes: inst.n(),
        protocol: cfg.protocol.kind.to_string(),
        rounds: trace.footer.rounds,
        completed_at: trace.footer.completed_at,
        completion: rep.completion,
        ratios: rows.iter().filter_map(|r| r.bound_ratio).collect(),
        hash: trace.footer.hash,
    })
}

pub const AGGREGATE_COLUMNS: &str =
    "key,n,model,seed,protocol,nodes,rounds,completed_at,completion,median_bound_ratio,max_bound_ratio,trace_hash,error";
pub const GROUP_COLUMNS: &str = "n,model,runs,failed,completed,median_completion,ratio_q10,ratio_q50,ratio_q90";

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub struct SweepOutcome {
    pub points: usize,
    pub failures: Vec<(String, String)>,
}

/// Runs every point (in parallel when the pool allows) and writes the per-point files plus
/// `aggregate.csv` and `groups.csv` under `out`. Failed points keep an error row.
pub fn run_sweep(scenario: &Scenario, seed_override: Option<u64>, out: &Path) -> Result<SweepOutcome> {
    let points = scenario.points(seed_override)?;
    for dir in ["instances", "traces", "summaries"] {
        fs::create_dir_all(out.join(dir))?;
    }
    fs::write(out.join("scenario.json"), serde_json::to_string_pretty(scenario)? + "\n")?;
    let results: Vec<(PointKey, Result<PointResult>)> = points
        .par_iter()
        .map(|p| (p.key.clone(), run_point(p, scenario, out)))
        .collect();

    let mut agg = String::from(AGGREGATE_COLUMNS);
    agg.push('\n');
    let mut groups: BTreeMap<(Option<usize>, String), Vec<&Result<PointResult>>> = BTreeMap::new();
    let mut failures = Vec::new();
    for (key, res) in &results {
        groups.entry((key.n, key.model.clone())).or_default().push(res);
        let prefix = format!("{},{},{},{}", key.label(), opt(key.n), key.model, key.seed);
        match res {
            Ok(r) => agg.push_str(&format!(
                "{prefix},{},{},{},{},{},{},{},{},\n",
                r.protocol,
                r.nodes,
                r.rounds,
                opt(r.completed_at),
                opt(r.completion),
                num(median(&r.ratios)),
                num(r.ratios.iter().copied().reduce(f64::max)),
                r.hash
            )),
            Err(e) => {
                failures.push((key.label(), e.to_string()));
                agg.push_str(&format!("{prefix},,,,,,,,,{}\n", csv_field(&e.to_string())));
            }
        }
    }
    fs::write(out.join("aggregate.csv"), agg)?;

    let mut grp = String::from(GROUP_COLUMNS);
    grp.push('\n');
    for ((n, model), rs) in &groups {
        let ok: Vec<&PointResult> = rs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let completions: Vec<f64> = ok.iter().filter_map(|r| r.completion.map(|c| (c + 1) as f64)).collect();
        let ratios: Vec<f64> = ok.iter().flat_map(|r| r.ratios.iter().copied()).collect();
        grp.push_str(&format!(
            "{},{model},{},{},{},{},{},{},{}\n",
            opt(*n),
            rs.len(),
            rs.len() - ok.len(),
            completions.len(),
            num(median(&completions)),
            num(quantile(&ratios, 0.1)),
            num(quantile(&ratios, 0.5)),
            num(quantile(&ratios, 0.9)),
        ));
    }
    fs::write(out.join("groups.csv"), grp)?;
    Ok(SweepOutcome {
        points: results.len(),
        failures,
    })
}
