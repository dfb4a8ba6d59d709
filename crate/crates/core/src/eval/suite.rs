//! Suite execution: the (mode × scenario × seed × latency) grid.

use super::{EpisodeMetrics, EvalError, MetricsRow, MetricsTable, ModelSet, PolicyMode, Trace};
use crate::eval::modes::{run_episode, ALL_MODES};
use crate::runtime::{DelayModel, RunConfig};
use crate::scenario::{self, Scenario, SUITE_IDS};
use serde::{Deserialize, Serialize};

/// The standard workstation-latency levels swept in reports, seconds.
pub const LATENCY_LEVELS_S: [f64; 3] = [0.2, 2.0, 5.0];

/// Which cells to run and under what timing. Serializable so suites can be
/// described in JSON config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Scenario ids, resolved against the embedded catalog.
    pub scenarios: Vec<String>,
    /// World seeds; pedestrian motion inside a (scenario, seed) cell is
    /// identical for every mode and latency.
    pub seeds: Vec<u64>,
    pub modes: Vec<PolicyMode>,
    /// Fixed link-delay levels, seconds.
    pub latency_levels_s: Vec<f64>,
    /// Also run each pedestrian scenario with its pedestrians removed.
    #[serde(default)]
    pub include_static_variants: bool,
    /// Keep downsampled robot paths for trajectory plots.
    #[serde(default)]
    pub keep_traces: bool,
    #[serde(default = "d_edge_hz")]
    pub edge_hz: f64,
    #[serde(default = "d_base_hz")]
    pub base_hz: f64,
    #[serde(default = "d_pd_hz")]
    pub pd_hz: f64,
    /// Base compute time added on top of the link delay, seconds.
    #[serde(default)]
    pub inference_s: f64,
}

fn d_edge_hz() -> f64 {
    8.0
}
fn d_base_hz() -> f64 {
    5.0
}
fn d_pd_hz() -> f64 {
    10.0
}

impl SuiteConfig {
    /// The standard evaluation suite: the full ten-scenario catalog with
    /// pedestrians live, four seeds, every mode, the standard sweep levels.
    pub fn standard() -> SuiteConfig {
        SuiteConfig {
            scenarios: SUITE_IDS.iter().map(|s| s.to_string()).collect(),
            seeds: vec![0, 1, 2, 3],
            modes: ALL_MODES.to_vec(),
            latency_levels_s: LATENCY_LEVELS_S.to_vec(),
            include_static_variants: false,
            keep_traces: false,
            edge_hz: d_edge_hz(),
            base_hz: d_base_hz(),
            pd_hz: d_pd_hz(),
            inference_s: 0.0,
        }
    }

    /// The directive scenarios, scored for compliance rather than speed.
    pub fn directives() -> SuiteConfig {
        SuiteConfig {
            scenarios: scenario::DIRECTIVE_IDS.iter().map(|s| s.to_string()).collect(),
            ..SuiteConfig::standard()
        }
    }

    fn run_config(&self, latency_s: f64, seed: u64) -> RunConfig {
        RunConfig {
            edge_hz: self.edge_hz,
            base_hz: self.base_hz,
            pd_hz: self.pd_hz,
            inference_s: self.inference_s,
            delay: DelayModel::Fixed(latency_s),
            seed,
            record_edge: false,
        }
    }
}

/// Run every cell of the suite. Fails before any episode when a requested
/// mode is missing its checkpoint or a scenario id is unknown.
pub fn run_suite(cfg: &SuiteConfig, models: &ModelSet) -> Result<MetricsTable, EvalError> {
    if cfg.scenarios.is_empty()
        || cfg.seeds.is_empty()
        || cfg.modes.is_empty()
        || cfg.latency_levels_s.is_empty()
    {
        return Err(EvalError::EmptySuite);
    }
    for &mode in &cfg.modes {
        models.require(mode)?;
    }
    let mut scenarios: Vec<Scenario> = Vec::new();
    for id in &cfg.scenarios {
        let s = scenario::find(id)?;
        let static_variant = (cfg.include_static_variants && !s.pedestrians.is_empty())
            .then(|| s.without_pedestrians());
        scenarios.push(s);
        scenarios.extend(static_variant);
    }

    let mut table = MetricsTable::default();
    for sc in &scenarios {
        for &seed in &cfg.seeds {
            for &latency_s in &cfg.latency_levels_s {
                for &mode in &cfg.modes {
                    let run = cfg.run_config(latency_s, seed);
                    let outcome = run_episode(mode, sc, seed, &run, models)?;
                    let metrics = EpisodeMetrics::from_outcome(&outcome, sc);
                    if cfg.keep_traces {
                        let path: Vec<(f64, f64)> = outcome
                            .log
                            .poses_for("pd")
                            .iter()
                            .step_by(5)
                            .map(|&(_, x, y, _)| (x, y))
                            .collect();
                        table.traces.push(Trace {
                            mode,
                            scenario: sc.id.clone(),
                            seed,
                            latency_s,
                            path,
                        });
                    }
                    table.rows.push(MetricsRow {
                        mode,
                        scenario: sc.id.clone(),
                        seed,
                        latency_s,
                        metrics,
                    });
                }
            }
        }
    }
    Ok(table)
}

/// Sweep the given modes across fixed latency levels on an existing suite
/// shape (its scenarios, seeds, and timing; modes and levels overridden).
pub fn latency_sweep(
    modes: &[PolicyMode],
    levels_s: &[f64],
    suite: &SuiteConfig,
    models: &ModelSet,
) -> Result<MetricsTable, EvalError> {
    let mut cfg = suite.clone();
    cfg.modes = modes.to_vec();
    cfg.latency_levels_s = levels_s.to_vec();
    run_suite(&cfg, models)
}
