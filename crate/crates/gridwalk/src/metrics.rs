//! Evaluation quantities computed from run results: efficiency, message
//! counts by class, replicated tasks and the sequential baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::engine::RunResult;
use crate::error::{Result, SimError};
use crate::protocol::Method;

/// One CSV row worth of measurements for a single run.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub method: Method,
    pub n: usize,
    pub tasks: usize,
    pub seed: u64,
    pub c_r: f64,
    pub m_r: f64,
    pub t_sequential: f64,
    pub t_distributed: f64,
    pub efficiency_pct: f64,
    pub msg_token: u64,
    pub msg_down: u64,
    pub msg_feedback: u64,
    pub msg_final: u64,
    pub replicated: u64,
    pub t_propagate: Option<f64>,
}

/// `e = t_seq / (t_dist * n) * 100`; 100% means perfect speedup.
pub fn efficiency(t_seq: f64, t_dist: f64, n: usize) -> Result<f64> {
    if t_dist <= 0.0 {
        return Err(SimError::InvalidParameter(format!(
            "distributed time must be positive, got {t_dist}"
        )));
    }
    if n < 1 {
        return Err(SimError::InvalidParameter("node count must be >= 1".into()));
    }
    Ok(t_seq / (t_dist * n as f64) * 100.0)
}

/// Total completions beyond the first per task, over the whole run.
pub fn count_replicated(result: &RunResult) -> u64 {
    result
        .completions
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c - 1)
        .sum()
}

impl Metrics {
    pub fn from_run(
        method: Method,
        seed: u64,
        c_r: f64,
        m_r: f64,
        result: &RunResult,
    ) -> Result<Metrics> {
        let t_distributed = result.t_distributed.ok_or_else(|| {
            SimError::InvalidState("run hit max_time before completing the workload".into())
        })?;
        Ok(Metrics {
            method,
            n: result.n,
            tasks: result.task_count,
            seed,
            c_r,
            m_r,
            t_sequential: result.t_sequential,
            t_distributed,
            efficiency_pct: efficiency(result.t_sequential, t_distributed, result.n)?,
            msg_token: result.msgs.token_hops,
            msg_down: result.msgs.down,
            msg_feedback: result.msgs.feedback,
            msg_final: result.msgs.final_down,
            replicated: count_replicated(result),
            t_propagate: result.t_propagate,
        })
    }

    pub fn total_msgs(&self) -> u64 {
        self.msg_token + self.msg_down + self.msg_feedback + self.msg_final
    }

    pub const CSV_HEADER: &'static str = "method,n,tasks,seed,c_r,m_r,t_dist,efficiency_pct,\
                                          msg_token,msg_down,msg_feedback,msg_final,replicated,t_propagate";

    pub fn csv_row(&self) -> String {
        let t_prop = self
            .t_propagate
            .map(|t| format!("{t:.4}"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{},{},{},{},{},{}",
            self.method.as_str(),
            self.n,
            self.tasks,
            self.seed,
            self.c_r,
            self.m_r,
            self.t_distributed,
            self.efficiency_pct,
            self.msg_token,
            self.msg_down,
            self.msg_feedback,
            self.msg_final,
            self.replicated,
            t_prop,
        )
    }

    /// Parses one data row of the CSV schema; `line` is 1-based and only
    /// used for error reporting.
    pub fn parse_csv_row(row: &str, line: usize) -> Result<Metrics> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 14 {
            return Err(SimError::Parse {
                line,
                msg: format!("expected 14 fields, got {}", fields.len()),
            });
        }
        fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| SimError::Parse { line, msg: format!("bad {what}: `{s}`") })
        }
        let t_distributed: f64 = num(fields[6], line, "t_dist")?;
        let efficiency_pct: f64 = num(fields[7], line, "efficiency_pct")?;
        let n: usize = num(fields[1], line, "n")?;
        Ok(Metrics {
            method: Method::parse(fields[0])
                .map_err(|e| SimError::Parse { line, msg: e.to_string() })?,
            n,
            tasks: num(fields[2], line, "tasks")?,
            seed: num(fields[3], line, "seed")?,
            c_r: num(fields[4], line, "c_r")?,
            m_r: num(fields[5], line, "m_r")?,
            t_sequential: efficiency_pct / 100.0 * t_distributed * n as f64,
            t_distributed,
            efficiency_pct,
            msg_token: num(fields[8], line, "msg_token")?,
            msg_down: num(fields[9], line, "msg_down")?,
            msg_feedback: num(fields[10], line, "msg_feedback")?,
            msg_final: num(fields[11], line, "msg_final")?,
            replicated: num(fields[12], line, "replicated")?,
            t_propagate: if fields[13].trim().is_empty() {
                None
            } else {
                Some(num(fields[13], line, "t_propagate")?)
            },
        })
    }
}

/// Grouping key for aggregation: one experimental configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConfigKey {
    pub method: Method,
    pub n: usize,
    pub tasks: usize,
    /// c_r and m_r in fixed-point so the key stays Ord.
    pub c_r_milli: u64,
    pub m_r_milli: u64,
}

impl ConfigKey {
    pub fn of(m: &Metrics) -> ConfigKey {
        ConfigKey {
            method: m.method,
            n: m.n,
            tasks: m.tasks,
            c_r_milli: (m.c_r * 1000.0).round() as u64,
            m_r_milli: (m.m_r * 1000.0).round() as u64,
        }
    }
}

/// Mean and standard deviation per configuration over repeated runs.
#[derive(Debug, Clone)]
pub struct Summary {
    pub key: ConfigKey,
    pub runs: usize,
    pub efficiency_mean: f64,
    pub efficiency_std: f64,
    pub t_dist_mean: f64,
    pub msgs_mean: f64,
    pub replicated_mean: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stable, order-independent aggregation of per-run metrics.
pub fn summarize(runs: &[Metrics]) -> Result<Vec<Summary>> {
    if runs.is_empty() {
        return Err(SimError::InvalidParameter("no runs to summarize".into()));
    }
    let mut groups: BTreeMap<ConfigKey, Vec<&Metrics>> = BTreeMap::new();
    for m in runs {
        groups.entry(ConfigKey::of(m)).or_default().push(m);
    }
    let mut out = Vec::new();
    for (key, mut members) in groups {
        members.sort_by_key(|m| m.seed);
        let eff: Vec<f64> = members.iter().map(|m| m.efficiency_pct).collect();
        let (efficiency_mean, efficiency_std) = mean_std(&eff);
        let t_dist: Vec<f64> = members.iter().map(|m| m.t_distributed).collect();
        let msgs: Vec<f64> = members.iter().map(|m| m.total_msgs() as f64).collect();
        let repl: Vec<f64> = members.iter().map(|m| m.replicated as f64).collect();
        out.push(Summary {
            key,
            runs: members.len(),
            efficiency_mean,
            efficiency_std,
            t_dist_mean: mean_std(&t_dist).0,
            msgs_mean: mean_std(&msgs).0,
            replicated_mean: mean_std(&repl).0,
        });
    }
    Ok(out)
}

/// Renders summaries as an aligned text table.
pub fn summary_table(rows: &[Summary]) -> String {
    let mut out = String::from(
        "method      n   tasks      c_r      m_r  runs   eff_mean    eff_std  t_dist_mean    msgs_mean  repl_mean\n",
    );
    for s in rows {
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>7} {:>8.1} {:>8.1} {:>5} {:>10.3} {:>10.3} {:>12.2} {:>12.1} {:>10.2}",
            s.key.method.as_str(),
            s.key.n,
            s.key.tasks,
            s.key.c_r_milli as f64 / 1000.0,
            s.key.m_r_milli as f64 / 1000.0,
            s.runs,
            s.efficiency_mean,
            s.efficiency_std,
            s.t_dist_mean,
            s.msgs_mean,
            s.replicated_mean,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(method: Method, seed: u64, eff: f64, repl: u64) -> Metrics {
        Metrics {
            method,
            n: 10,
            tasks: 100,
            seed,
            c_r: 1000.0,
            m_r: 1500.0,
            t_sequential: 1000.0,
            t_distributed: 1000.0 / (eff / 100.0) / 10.0,
            efficiency_pct: eff,
            msg_token: 100,
            msg_down: 10,
            msg_feedback: 5,
            msg_final: 5,
            replicated: repl,
            t_propagate: None,
        }
    }

    #[test]
    fn efficiency_arithmetic() {
        assert_eq!(efficiency(1000.0, 100.0, 10).unwrap(), 100.0);
        assert_eq!(efficiency(1000.0, 1000.0, 1).unwrap(), 100.0);
        assert_eq!(efficiency(1000.0, 125.0, 10).unwrap(), 80.0);
        assert!(efficiency(1000.0, 0.0, 10).is_err());
    }

    #[test]
    fn efficiency_is_monotone_decreasing_in_t_dist_and_n() {
        let base = efficiency(1000.0, 100.0, 10).unwrap();
        assert!(efficiency(1000.0, 101.0, 10).unwrap() < base);
        assert!(efficiency(1000.0, 100.0, 11).unwrap() < base);
    }

    #[test]
    fn replicated_counting() {
        use crate::engine::{MessageCounts, RunResult};
        let result = RunResult {
            n: 3,
            task_count: 3,
            t_sequential: 10.0,
            t_distributed: Some(5.0),
            t_propagate: None,
            completed: true,
            msgs: MessageCounts::default(),
            completions: vec![1, 3, 1],
            replicated: 2,
            divergence: 0,
            diffusions: Vec::new(),
            event_count: 0,
            timeout_closures_total: 0,
            timeout_closures_max: 0,
            end_time: 5.0,
            trace_hash: String::new(),
            trace: None,
            final_sets: None,
        };
        assert_eq!(count_replicated(&result), 2);
        let mut once = result.clone();
        once.completions = vec![1, 1, 1];
        assert_eq!(count_replicated(&once), 0);
    }

    #[test]
    fn summarize_single_and_identical_runs() {
        let one = summarize(&[metrics(Method::Active, 1, 80.0, 3)]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].efficiency_mean, 80.0);
        assert_eq!(one[0].efficiency_std, 0.0);

        let two = summarize(&[
            metrics(Method::Active, 1, 80.0, 3),
            metrics(Method::Active, 2, 80.0, 3),
        ])
        .unwrap();
        assert_eq!(two[0].runs, 2);
        assert_eq!(two[0].efficiency_std, 0.0);
    }

    #[test]
    fn summarize_is_order_independent() {
        let a = metrics(Method::Active, 1, 80.0, 3);
        let b = metrics(Method::Dm, 2, 90.0, 1);
        let c = metrics(Method::Active, 3, 70.0, 5);
        let fwd = summarize(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let rev = summarize(&[c, b, a]).unwrap();
        assert_eq!(fwd.len(), rev.len());
        for (x, y) in fwd.iter().zip(&rev) {
            assert_eq!(x.key, y.key);
            assert_eq!(x.efficiency_mean, y.efficiency_mean);
            assert_eq!(x.efficiency_std, y.efficiency_std);
        }
    }

    #[test]
    fn summarize_rejects_empty() {
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = metrics(Method::Dm, 7, 85.5, 2);
        let parsed = Metrics::parse_csv_row(&m.csv_row(), 2).unwrap();
        assert_eq!(parsed.method, Method::Dm);
        assert_eq!(parsed.seed, 7);
        assert!((parsed.efficiency_pct - 85.5).abs() < 1e-3);
        assert_eq!(parsed.replicated, 2);
        assert_eq!(parsed.t_propagate, None);
    }

    #[test]
    fn csv_parse_reports_line_numbers() {
        match Metrics::parse_csv_row("bad,row", 5) {
            Err(SimError::Parse { line: 5, .. }) => {}
            other => panic!("expected parse error with line 5, got {other:?}"),
        }
    }
}
