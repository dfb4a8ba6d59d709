//! Evaluation harness: policy wirings, scenario suites, per-episode
//! metrics, latency sweeps, directive compliance, and report emission.
//!
//! Every cell of a suite is one episode keyed by (mode, scenario, seed,
//! latency level), run under the deterministic virtual clock. Raw rows are
//! the source of truth; aggregates are a pure fold over them, so a report
//! can always be recomputed from its own CSV.

mod compliance;
mod modes;
mod report;
mod suite;

pub use compliance::{directive_compliance, pass_compliance, reference_path, signed_lateral_offset};
pub use modes::{run_episode, ChunkShippingBase, ModelSet, PolicyMode};
pub use report::{emit_report, ReportPaths};
pub use suite::{latency_sweep, run_suite, SuiteConfig, LATENCY_LEVELS_S};

use crate::runtime::EpisodeOutcome;
use crate::scenario::Scenario;
use crate::world::{CollisionKind, Termination, TIME_LIMIT_S};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mode {0} needs a trained checkpoint that was not provided")]
    MissingCheckpoint(&'static str),
    #[error(transparent)]
    Sim(#[from] crate::world::SimError),
    #[error("suite config selects nothing to run")]
    EmptySuite,
    #[error("refusing to report an empty table")]
    EmptyTable,
    #[error("malformed metrics CSV: {0}")]
    MalformedTable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scores for one episode. An episode succeeds only when the robot reaches
/// the goal without touching anything; failures are charged the full time
/// budget so mean times stay comparable across modes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub success: bool,
    /// Seconds to the goal; [`TIME_LIMIT_S`] when the episode failed.
    pub time_to_goal_s: f64,
    pub static_collisions: usize,
    pub dynamic_collisions: usize,
    /// Whether the logged behaviour honoured the goal directive; vacuously
    /// true when the scenario carries none.
    pub compliance: bool,
}

impl EpisodeMetrics {
    pub fn from_outcome(outcome: &EpisodeOutcome, scenario: &Scenario) -> EpisodeMetrics {
        let statics =
            outcome.collisions.iter().filter(|c| c.kind == CollisionKind::Static).count();
        let dynamics = outcome.collisions.len() - statics;
        let success =
            outcome.termination == Termination::Success && statics == 0 && dynamics == 0;
        EpisodeMetrics {
            success,
            time_to_goal_s: if success { outcome.duration_s } else { TIME_LIMIT_S },
            static_collisions: statics,
            dynamic_collisions: dynamics,
            compliance: directive_compliance(outcome, scenario),
        }
    }
}

/// One raw table row: the episode's cell key plus its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: PolicyMode,
    pub scenario: String,
    pub seed: u64,
    pub latency_s: f64,
    pub metrics: EpisodeMetrics,
}

/// Downsampled robot path through one episode, kept for trajectory plots.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub mode: PolicyMode,
    pub scenario: String,
    pub seed: u64,
    pub latency_s: f64,
    pub path: Vec<(f64, f64)>,
}

/// Aggregate scores over every row sharing a (mode, latency) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: PolicyMode,
    pub latency_s: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_time_to_goal_s: f64,
    pub mean_static_collisions: f64,
    pub mean_dynamic_collisions: f64,
    pub compliance_rate: f64,
}

/// Raw per-episode rows plus optional trajectory traces. Row order is the
/// suite's generation order and serialization is deterministic, so two runs
/// with the same config produce byte-identical CSVs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// Side channel for plots; never serialized into the CSV.
    pub traces: Vec<Trace>,
}

const CSV_HEADER: &str = "mode,scenario,seed,latency_s,success,time_to_goal_s,\
static_collisions,dynamic_collisions,compliance";

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.mode.label(),
                r.scenario,
                r.seed,
                r.latency_s,
                r.metrics.success as u8,
                r.metrics.time_to_goal_s,
                r.metrics.static_collisions,
                r.metrics.dynamic_collisions,
                r.metrics.compliance as u8,
            ));
        }
        out
    }

    /// Parse rows back out of [`Self::to_csv`] output. Traces do not travel
    /// through the CSV.
    pub fn from_csv(text: &str) -> Result<MetricsTable, EvalError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            other => {
                return Err(EvalError::MalformedTable(format!(
                    "unrecognized header {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| {
                EvalError::MalformedTable(format!("data row {}: {what}: {line:?}", i + 1))
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(bad("expected 9 fields"));
            }
            let flag = |s: &str, what: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(what)),
            };
            rows.push(MetricsRow {
                mode: PolicyMode::parse(f[0]).ok_or_else(|| bad("unknown mode"))?,
                scenario: f[1].to_string(),
                seed: f[2].parse().map_err(|_| bad("bad seed"))?,
                latency_s: f[3].parse().map_err(|_| bad("bad latency"))?,
                metrics: EpisodeMetrics {
                    success: flag(f[4], "bad success flag")?,
                    time_to_goal_s: f[5].parse().map_err(|_| bad("bad time"))?,
                    static_collisions: f[6].parse().map_err(|_| bad("bad static count"))?,
                    dynamic_collisions: f[7].parse().map_err(|_| bad("bad dynamic count"))?,
                    compliance: flag(f[8], "bad compliance flag")?,
                },
            });
        }
        Ok(MetricsTable { rows, traces: Vec::new() })
    }

    /// Fold the rows into per-(mode, latency) aggregates, ordered by mode
    /// then latency. Pure: depends only on row contents, not row order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(PolicyMode, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|k| k.0 == r.mode && k.1 == r.latency_s) {
                keys.push((r.mode, r.latency_s));
            }
        }
        keys.sort_by(|a, b| a.0.order().cmp(&b.0.order()).then(a.1.total_cmp(&b.1)));
        keys.iter()
            .map(|&(mode, latency_s)| {
                let cell: Vec<&MetricsRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.mode == mode && r.latency_s == latency_s)
                    .collect();
                let n = cell.len() as f64;
                let count = |f: &dyn Fn(&MetricsRow) -> f64| {
                    cell.iter().map(|r| f(r)).sum::<f64>() / n
                };
                Aggregate {
                    mode,
                    latency_s,
                    episodes: cell.len(),
                    success_rate: count(&|r| r.metrics.success as u8 as f64),
                    mean_time_to_goal_s: count(&|r| r.metrics.time_to_goal_s),
                    mean_static_collisions: count(&|r| r.metrics.static_collisions as f64),
                    mean_dynamic_collisions: count(&|r| r.metrics.dynamic_collisions as f64),
                    compliance_rate: count(&|r| r.metrics.compliance as u8 as f64),
                }
            })
            .collect()
    }

    /// Success rate of one (mode, latency) cell; 0 when the cell is absent.
    pub fn success_rate(&self, mode: PolicyMode, latency_s: f64) -> f64 {
        self.aggregates()
            .into_iter()
            .find(|a| a.mode == mode && a.latency_s == latency_s)
            .map_or(0.0, |a| a.success_rate)
    }

    /// Append every row and trace of `other`.
    pub fn extend(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
        self.traces.extend(other.traces);
    }
}
