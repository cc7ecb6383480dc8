//! Command-line interface: single runs, parameter sweeps and CSV comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::engine::{self, SimConfig, TaskParams};
use crate::error::{Result, SimError};
use crate::graph::{NodeId, Topology, TopologyModel};
use crate::metrics::{self, ConfigKey, Metrics};
use crate::protocol::{Method, MethodConfig};

#[derive(Debug, Parser)]
#[command(name = "gridwalk", about = "Simulates distributed task management on a p2p grid")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a single configuration and print its metrics.
    Run(RunArgs),
    /// Run a grid of configurations and emit one CSV row per run.
    Sweep(SweepArgs),
    /// Compare methods against the `active` baseline in an existing CSV.
    Compare(CompareArgs),
}

#[derive(Debug, Parser, Default, Clone)]
pub struct RunArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// active, ds, df or dm.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-task circulation allowance c_r.
    #[arg(long)]
    pub cr: Option<f64>,
    /// Hop-count ceiling m_r.
    #[arg(long)]
    pub mr: Option<f64>,
    /// Feedback timeout; defaults to 2n.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// ring, complete or random:<p>.
    #[arg(long)]
    pub topology: Option<String>,
    /// Log-space mean of task lengths.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Log-space std-dev of task lengths.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Crash node <id> at time <t>, written t@node; repeatable.
    #[arg(long)]
    pub crash: Vec<String>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-event trace to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub max_time: Option<f64>,
}

#[derive(Debug, Parser, Default, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated list, e.g. active,dm.
    #[arg(long)]
    pub methods: Option<String>,
    /// Single value or inclusive range start:stop:step.
    #[arg(long)]
    pub nodes: Option<String>,
    /// Single value or inclusive range start:stop:step.
    #[arg(long)]
    pub tasks: Option<String>,
    /// Repetitions per cell; rep i uses seed base+i.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cr: Option<f64>,
    #[arg(long)]
    pub mr: Option<f64>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_time: Option<f64>,
}

#[derive(Debug, Parser)]
pub struct CompareArgs {
    /// CSV produced by `sweep`.
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Inclusive `start:stop:step` range; a bare number is a singleton.
pub fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = |msg: &str| SimError::InvalidParameter(format!("range `{s}`: {msg}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => Ok(vec![parts[0].trim().parse().map_err(|_| bad("not a number"))?]),
        3 => {
            let start: usize = parts[0].trim().parse().map_err(|_| bad("bad start"))?;
            let stop: usize = parts[1].trim().parse().map_err(|_| bad("bad stop"))?;
            let step: usize = parts[2].trim().parse().map_err(|_| bad("bad step"))?;
            if step == 0 {
                return Err(bad("step must be positive"));
            }
            if stop < start {
                return Err(bad("stop must be >= start"));
            }
            Ok((start..=stop).step_by(step).collect())
        }
        _ => Err(bad("expected value or start:stop:step")),
    }
}

/// Crash spec `t@node`, e.g. `120.5@3`.
pub fn parse_crash(s: &str) -> Result<(f64, NodeId)> {
    let bad = |msg: &str| SimError::InvalidParameter(format!("crash `{s}`: {msg}"));
    let (t, node) = s.split_once('@').ok_or_else(|| bad("expected t@node"))?;
    let t: f64 = t.trim().parse().map_err(|_| bad("bad time"))?;
    let node: NodeId = node.trim().parse().map_err(|_| bad("bad node id"))?;
    if !t.is_finite() || t < 0.0 {
        return Err(bad("time must be finite and non-negative"));
    }
    Ok((t, node))
}

pub fn parse_topology(s: &str) -> Result<TopologyModel> {
    let s = s.trim();
    if s == "ring" {
        Ok(TopologyModel::Ring)
    } else if s == "complete" {
        Ok(TopologyModel::Complete)
    } else if let Some(p) = s.strip_prefix("random:") {
        let p: f64 = p.parse().map_err(|_| {
            SimError::InvalidParameter(format!("topology `{s}`: bad edge probability"))
        })?;
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::InvalidParameter(format!(
                "topology `{s}`: probability must be in [0, 1]"
            )));
        }
        Ok(TopologyModel::Random { p })
    } else {
        Err(SimError::InvalidParameter(format!(
            "topology `{s}`: expected ring, complete or random:<p>"
        )))
    }
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn read_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| SimError::Parse {
            line: i + 1,
            msg: format!("expected key=value, got `{raw}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn conf_parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| {
            SimError::InvalidParameter(format!("config key {key}: bad value `{v}`"))
        }),
    }
}

/// Seed from flag, else the GRIDWALK_SEED environment variable, else 1.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("GRIDWALK_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| {
            SimError::InvalidParameter(format!("GRIDWALK_SEED: bad value `{v}`"))
        }),
        Err(_) => Ok(1),
    }
}

/// Fully resolved parameters shared by `run` and each sweep cell.
#[derive(Debug, Clone)]
struct Resolved {
    nodes: usize,
    tasks: usize,
    seed: u64,
    c_r: f64,
    m_r: f64,
    timeout: Option<f64>,
    topology: TopologyModel,
    mu: f64,
    sigma: f64,
    max_time: Option<f64>,
}

impl Default for Resolved {
    fn default() -> Self {
        Resolved {
            nodes: 10,
            tasks: 100,
            seed: 1,
            c_r: 1000.0,
            m_r: 1500.0,
            timeout: None,
            topology: TopologyModel::Random { p: 0.1 },
            mu: 100.0f64.ln(),
            sigma: 0.5,
            max_time: None,
        }
    }
}

/// Builds the engine config for one (method, n, tasks, seed) cell.
fn build_sim(method: Method, r: &Resolved) -> Result<SimConfig> {
    // The topology seed folds in n so sweeps over n do not reuse graphs.
    let topo_seed = r.seed ^ (r.nodes as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let topology = Topology::generate(r.nodes, r.topology, topo_seed)?;
    let timeout = r.timeout.unwrap_or(2.0 * r.nodes as f64);
    let mut cfg = SimConfig::new(
        topology,
        TaskParams { count: r.tasks, mu: r.mu, sigma: r.sigma, seed: r.seed },
        MethodConfig { method, c_r: r.c_r, m_r: r.m_r, timeout_feedback: timeout },
        r.seed,
    );
    if let Some(t) = r.max_time {
        cfg.max_time = t;
    }
    Ok(cfg)
}

fn write_output(out: &Option<PathBuf>, data: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, data)?,
        None => print!("{data}"),
    }
    Ok(())
}

pub fn execute_run(args: &RunArgs) -> Result<()> {
    let conf = match &args.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let method_str = args
        .method
        .clone()
        .or_else(|| conf.get("method").cloned())
        .unwrap_or_else(|| "dm".to_string());
    let method = Method::parse(&method_str)?;
    let mut r = Resolved::default();
    r.nodes = args.nodes.or(conf_parse(&conf, "nodes")?).unwrap_or(r.nodes);
    r.tasks = args.tasks.or(conf_parse(&conf, "tasks")?).unwrap_or(r.tasks);
    r.seed = resolve_seed(args.seed.or(conf_parse(&conf, "seed")?))?;
    r.c_r = args.cr.or(conf_parse(&conf, "cr")?).unwrap_or(r.c_r);
    r.m_r = args.mr.or(conf_parse(&conf, "mr")?).unwrap_or(r.m_r);
    r.timeout = args.timeout.or(conf_parse(&conf, "timeout")?);
    if let Some(t) = args.topology.clone().or_else(|| conf.get("topology").cloned()) {
        r.topology = parse_topology(&t)?;
    }
    r.mu = args.mu.or(conf_parse(&conf, "mu")?).unwrap_or(r.mu);
    r.sigma = args.sigma.or(conf_parse(&conf, "sigma")?).unwrap_or(r.sigma);
    r.max_time = args.max_time.or(conf_parse(&conf, "max_time")?);

    let mut cfg = build_sim(method, &r)?;
    let mut crashes = args.crash.clone();
    if let Some(c) = conf.get("crash") {
        if args.crash.is_empty() {
            crashes = c.split(',').map(str::to_string).collect();
        }
    }
    for spec in &crashes {
        cfg.crash_plan.push(parse_crash(spec)?);
    }
    cfg.capture_trace = args.trace.is_some();

    let result = engine::run(&cfg)?;
    if let Some(path) = &args.trace {
        let trace = result.trace.as_deref().unwrap_or(&[]);
        fs::write(path, trace.join("\n") + "\n")?;
    }
    let m = Metrics::from_run(method, r.seed, r.c_r, r.m_r, &result)?;
    eprintln!(
        "method={} n={} tasks={} t_dist={:.2} efficiency={:.2}% msgs={} replicated={} divergence={}",
        method.as_str(),
        m.n,
        m.tasks,
        m.t_distributed,
        m.efficiency_pct,
        m.total_msgs(),
        m.replicated,
        result.divergence,
    );
    let csv = format!("{}\n{}\n", Metrics::CSV_HEADER, m.csv_row());
    write_output(&args.out, &csv)
}

pub fn execute_sweep(args: &SweepArgs) -> Result<()> {
    let conf = match &args.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    let methods_str = args
        .methods
        .clone()
        .or_else(|| conf.get("methods").cloned())
        .unwrap_or_else(|| "active,dm".to_string());
    let methods: Vec<Method> = methods_str
        .split(',')
        .map(Method::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(SimError::InvalidParameter("no methods given".into()));
    }
    let nodes = parse_range(
        &args.nodes.clone().or_else(|| conf.get("nodes").cloned()).unwrap_or_else(|| "10".into()),
    )?;
    let tasks = parse_range(
        &args.tasks.clone().or_else(|| conf.get("tasks").cloned()).unwrap_or_else(|| "100".into()),
    )?;
    let reps = args.reps.or(conf_parse(&conf, "reps")?).unwrap_or(1);
    if reps == 0 {
        return Err(SimError::InvalidParameter("reps must be >= 1".into()));
    }
    let base = Resolved {
        seed: resolve_seed(args.seed.or(conf_parse(&conf, "seed")?))?,
        c_r: args.cr.or(conf_parse(&conf, "cr")?).unwrap_or(1000.0),
        m_r: args.mr.or(conf_parse(&conf, "mr")?).unwrap_or(1500.0),
        timeout: args.timeout.or(conf_parse(&conf, "timeout")?),
        topology: match args.topology.clone().or_else(|| conf.get("topology").cloned()) {
            Some(t) => parse_topology(&t)?,
            None => TopologyModel::Random { p: 0.1 },
        },
        mu: args.mu.or(conf_parse(&conf, "mu")?).unwrap_or(100.0f64.ln()),
        sigma: args.sigma.or(conf_parse(&conf, "sigma")?).unwrap_or(0.5),
        max_time: args.max_time.or(conf_parse(&conf, "max_time")?),
        ..Resolved::default()
    };

    let mut cells = Vec::new();
    for &method in &methods {
        for &n in &nodes {
            for &t in &tasks {
                for rep in 0..reps {
                    cells.push((method, n, t, rep));
                }
            }
        }
    }
    let rows: Result<Vec<Metrics>> = cells
        .par_iter()
        .map(|&(method, n, t, rep)| {
            let mut r = base.clone();
            r.nodes = n;
            r.tasks = t;
            r.seed = base.seed + rep as u64;
            let result = engine::run(&build_sim(method, &r)?)?;
            Metrics::from_run(method, r.seed, r.c_r, r.m_r, &result)
        })
        .collect();
    let mut rows = rows?;
    rows.sort_by(|a, b| {
        (ConfigKey::of(a), a.seed).cmp(&(ConfigKey::of(b), b.seed))
    });

    let summaries = metrics::summarize(&rows)?;
    eprint!("{}", metrics::summary_table(&summaries));

    let mut csv = String::from(Metrics::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    write_output(&args.out, &csv)
}

pub fn execute_compare(args: &CompareArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        rows.push(Metrics::parse_csv_row(line, i + 1)?);
    }
    if rows.is_empty() {
        return Err(SimError::InvalidParameter("no data rows in input CSV".into()));
    }
    let summaries = metrics::summarize(&rows)?;

    // Index baselines by the method-independent part of the key.
    let mut baselines: BTreeMap<(usize, usize, u64, u64), &metrics::Summary> = BTreeMap::new();
    for s in &summaries {
        if s.key.method == Method::Active {
            baselines.insert(
                (s.key.n, s.key.tasks, s.key.c_r_milli, s.key.m_r_milli),
                s,
            );
        }
    }

    let mut out = String::from(
        "method      n   tasks     eff_delta    msg_ratio   repl_ratio\n",
    );
    for s in &summaries {
        if s.key.method == Method::Active {
            continue;
        }
        let key = (s.key.n, s.key.tasks, s.key.c_r_milli, s.key.m_r_milli);
        let base = baselines.get(&key).ok_or_else(|| {
            SimError::InvalidParameter(format!(
                "missing baseline: no active rows for n={} tasks={}",
                s.key.n, s.key.tasks
            ))
        })?;
        let repl_ratio = if base.replicated_mean > 0.0 {
            s.replicated_mean / base.replicated_mean
        } else {
            f64::NAN
        };
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>7} {:>13.3} {:>12.3} {:>12.3}",
            s.key.method.as_str(),
            s.key.n,
            s.key.tasks,
            s.efficiency_mean - base.efficiency_mean,
            s.msgs_mean / base.msgs_mean,
            repl_ratio,
        );
    }
    write_output(&args.out, &out)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Run(args) => execute_run(&args),
        Command::Sweep(args) => execute_sweep(&args),
        Command::Compare(args) => execute_compare(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("7").unwrap(), vec![7]);
        assert_eq!(parse_range("2:10:4").unwrap(), vec![2, 6, 10]);
        assert_eq!(parse_range("5:5:1").unwrap(), vec![5]);
        assert!(parse_range("5:2:1").is_err());
        assert!(parse_range("1:9:0").is_err());
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("x").is_err());
    }

    #[test]
    fn crash_parsing() {
        assert_eq!(parse_crash("120.5@3").unwrap(), (120.5, 3));
        assert_eq!(parse_crash("0@0").unwrap(), (0.0, 0));
        assert!(parse_crash("120.5").is_err());
        assert!(parse_crash("-1@3").is_err());
        assert!(parse_crash("1@x").is_err());
    }

    #[test]
    fn topology_parsing() {
        assert_eq!(parse_topology("ring").unwrap(), TopologyModel::Ring);
        assert_eq!(parse_topology("complete").unwrap(), TopologyModel::Complete);
        assert_eq!(
            parse_topology("random:0.25").unwrap(),
            TopologyModel::Random { p: 0.25 }
        );
        assert!(parse_topology("random:1.5").is_err());
        assert!(parse_topology("mesh").is_err());
    }

    #[test]
    fn config_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.conf");
        fs::write(&path, "nodes = 20 # comment\n\n# full-line comment\ntasks=50\n").unwrap();
        let map = read_config_file(&path).unwrap();
        assert_eq!(map.get("nodes").map(String::as_str), Some("20"));
        assert_eq!(map.get("tasks").map(String::as_str), Some("50"));

        fs::write(&path, "no-equals-here\n").unwrap();
        match read_config_file(&path) {
            Err(SimError::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error on line 1, got {other:?}"),
        }
    }

    #[test]
    fn sweep_produces_sorted_complete_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rows.csv");
        let args = SweepArgs {
            methods: Some("active,ds".into()),
            nodes: Some("4:6:2".into()),
            tasks: Some("8".into()),
            reps: Some(2),
            seed: Some(11),
            topology: Some("ring".into()),
            out: Some(out.clone()),
            ..SweepArgs::default()
        };
        execute_sweep(&args).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // header + 2 methods * 2 node counts * 1 task count * 2 reps
        assert_eq!(lines.len(), 1 + 8);
        assert_eq!(lines[0], Metrics::CSV_HEADER);

        // Identical invocation reproduces identical bytes.
        let out2 = dir.path().join("rows2.csv");
        let mut args2 = args.clone();
        args2.out = Some(out2.clone());
        execute_sweep(&args2).unwrap();
        assert_eq!(text, fs::read_to_string(&out2).unwrap());
    }

    #[test]
    fn compare_requires_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("rows.csv");
        let args = SweepArgs {
            methods: Some("active,dm".into()),
            nodes: Some("5".into()),
            tasks: Some("10".into()),
            reps: Some(1),
            seed: Some(3),
            topology: Some("ring".into()),
            out: Some(csv.clone()),
            ..SweepArgs::default()
        };
        execute_sweep(&args).unwrap();
        let report = dir.path().join("cmp.txt");
        execute_compare(&CompareArgs { input: csv.clone(), out: Some(report.clone()) }).unwrap();
        let text = fs::read_to_string(&report).unwrap();
        assert!(text.contains("dm"));

        // Strip the baseline rows and expect a clear error.
        let filtered: String = fs::read_to_string(&csv)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("active,"))
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&csv, filtered).unwrap();
        match execute_compare(&CompareArgs { input: csv, out: None }) {
            Err(SimError::InvalidParameter(msg)) => assert!(msg.contains("missing baseline")),
            other => panic!("expected missing-baseline error, got {other:?}"),
        }
    }
}
