//! Report emission: raw CSV, aggregate JSON, and SVG plots.
//!
//! Everything written here is recomputable from the CSV alone; the JSON and
//! the plots are conveniences layered on the same fold. The SVGs are plain
//! hand-assembled XML with no external assets.

use super::{Aggregate, EvalError, MetricsTable, PolicyMode, Trace};
use crate::scenario;
use crate::world::GridMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Where [`emit_report`] put each artifact.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub raw_csv: PathBuf,
    pub aggregates_json: PathBuf,
    pub sr_plot_svg: PathBuf,
    /// One overlay per scenario, present only when the table kept traces.
    pub trajectory_svgs: Vec<PathBuf>,
}

/// Write the full report for a table into `outdir` (created if missing):
/// `metrics.csv` (raw rows), `aggregates.json` (the per-cell fold, stable
/// field order), `sr_vs_latency.svg` (success rate per mode across latency
/// levels), and `trajectory_<scenario>.svg` overlays for kept traces.
pub fn emit_report(table: &MetricsTable, outdir: &Path) -> Result<ReportPaths, EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    std::fs::create_dir_all(outdir)?;

    let raw_csv = outdir.join("metrics.csv");
    std::fs::write(&raw_csv, table.to_csv())?;

    let aggregates = table.aggregates();
    let aggregates_json = outdir.join("aggregates.json");
    let json = serde_json::to_string_pretty(&aggregates).expect("aggregates serialize");
    std::fs::write(&aggregates_json, json)?;

    let sr_plot_svg = outdir.join("sr_vs_latency.svg");
    std::fs::write(&sr_plot_svg, sr_plot(&aggregates))?;

    let mut trajectory_svgs = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for t in &table.traces {
        if !seen.contains(&t.scenario.as_str()) {
            seen.push(&t.scenario);
        }
    }
    for id in seen {
        let traces: Vec<&Trace> = table.traces.iter().filter(|t| t.scenario == id).collect();
        let svg = trajectory_plot(id, &traces);
        let path = outdir.join(format!("trajectory_{}.svg", id.replace('~', "_")));
        std::fs::write(&path, svg)?;
        trajectory_svgs.push(path);
    }

    Ok(ReportPaths { raw_csv, aggregates_json, sr_plot_svg, trajectory_svgs })
}

/// Line colour for a mode, stable across plots.
fn mode_color(mode: PolicyMode) -> &'static str {
    match mode {
        PolicyMode::EdgeOnly => "#999999",
        PolicyMode::MonolithicDelayed => "#d62728",
        PolicyMode::NoE2E => "#ff9f1c",
        PolicyMode::AsyncFull => "#1f77b4",
        PolicyMode::OracleRefiner => "#2ca02c",
    }
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n"
    )
}

/// Success rate (y, 0..1) against latency level (x, seconds), one polyline
/// and one marker per (mode, level) aggregate.
fn sr_plot(aggregates: &[Aggregate]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 24.0, 40.0, 56.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let max_lat = aggregates.iter().map(|a| a.latency_s).fold(0.0_f64, f64::max).max(1e-9);
    let x_of = |lat: f64| ml + pw * (lat / (max_lat * 1.05));
    let y_of = |sr: f64| mt + ph * (1.0 - sr);

    let mut s = svg_open(w, h);
    let _ = write!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">Success rate \
         across link latency</text>\n",
        w / 2.0
    );
    // Axes.
    let _ = write!(
        s,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph
    );
    let _ = write!(
        s,
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw
    );
    for i in 0..=4 {
        let sr = i as f64 / 4.0;
        let y = y_of(sr);
        let _ = write!(
            s,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ml - 4.0
        );
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{sr}</text>\n",
            ml - 8.0,
            y + 4.0
        );
    }
    let mut levels: Vec<f64> = aggregates.iter().map(|a| a.latency_s).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for &lat in &levels {
        let x = x_of(lat);
        let _ = write!(
            s,
            "<line x1=\"{x}\" y1=\"{0}\" x2=\"{x}\" y2=\"{1}\" stroke=\"black\"/>\n",
            mt + ph,
            mt + ph + 4.0
        );
        let _ = write!(
            s,
            "<text x=\"{x}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{lat}</text>\n",
            mt + ph + 18.0
        );
    }
    let _ = write!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">link latency \
         (s)</text>\n",
        ml + pw / 2.0,
        h - 16.0
    );
    let _ = write!(
        s,
        "<text x=\"18\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {0})\">success rate</text>\n",
        mt + ph / 2.0
    );

    let mut modes: Vec<PolicyMode> = aggregates.iter().map(|a| a.mode).collect();
    modes.sort_by_key(|m| m.order());
    modes.dedup();
    for (mi, &mode) in modes.iter().enumerate() {
        let color = mode_color(mode);
        let mut pts: Vec<(f64, f64)> = aggregates
            .iter()
            .filter(|a| a.mode == mode)
            .map(|a| (a.latency_s, a.success_rate))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() > 1 {
            let poly: Vec<String> =
                pts.iter().map(|&(l, sr)| format!("{},{}", x_of(l), y_of(sr))).collect();
            let _ = write!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"2\"/>\n",
                poly.join(" ")
            );
        }
        for &(l, sr) in &pts {
            let _ = write!(
                s,
                "<circle class=\"pt\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\"/>\n",
                x_of(l),
                y_of(sr)
            );
        }
        // Legend entry.
        let ly = mt + 14.0 * mi as f64 + 4.0;
        let lx = ml + pw - 150.0;
        let _ = write!(
            s,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"3\"/>\n",
            lx + 18.0
        );
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>\n",
            lx + 24.0,
            ly + 4.0,
            mode.label()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Map occupancy plus every kept robot path for one scenario, coloured by
/// mode. World y points up; SVG y points down, so rows are flipped.
fn trajectory_plot(scenario_id: &str, traces: &[&Trace]) -> String {
    let scale = 40.0; // px per metre
    let (map, start, goal) = match scenario::find(scenario_id.trim_end_matches("~static")) {
        Ok(sc) => (
            GridMap::from_rows(sc.cell_size_m, &sc.rows).ok(),
            Some(sc.start_pose()),
            Some(sc.goal_spec().pose),
        ),
        Err(_) => (None, None, None),
    };
    let (wm, hm) = map.as_ref().map_or((16.0, 8.0), |m| m.size_m());
    let (w, h) = (wm * scale, hm * scale + 24.0);
    let px = |x: f64| x * scale;
    let py = |y: f64| (hm - y) * scale + 24.0;

    let mut s = svg_open(w, h);
    let _ = write!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n");
    let _ = write!(
        s,
        "<text x=\"8\" y=\"16\" font-size=\"13\">{scenario_id}</text>\n"
    );
    if let Some(m) = &map {
        let cell = m.cell_size * scale;
        for iy in 0..m.height {
            for ix in 0..m.width {
                if m.occupied_cell(ix as i64, iy as i64) {
                    let _ = write!(
                        s,
                        "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" \
                         fill=\"#444444\"/>\n",
                        px(ix as f64 * m.cell_size),
                        py((iy + 1) as f64 * m.cell_size),
                    );
                }
            }
        }
    }
    if let Some(g) = goal {
        let _ = write!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"#2ca02c\" \
             stroke-dasharray=\"4 3\"/>\n",
            px(g.x),
            py(g.y),
            crate::world::GOAL_RADIUS * scale
        );
    }
    if let Some(st) = start {
        let _ = write!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#2ca02c\"/>\n",
            px(st.x),
            py(st.y)
        );
    }
    for t in traces {
        if t.path.is_empty() {
            continue;
        }
        let pts: Vec<String> =
            t.path.iter().map(|&(x, y)| format!("{},{}", px(x), py(y))).collect();
        let _ = write!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" \
             stroke-opacity=\"0.75\"/>\n",
            pts.join(" "),
            mode_color(t.mode)
        );
    }
    s.push_str("</svg>\n");
    s
}
