//! Simulation, tracking and evaluation entry points used by the binary.
//!
//! Outputs written to the output directory:
//!
//! * `<scenario>.scans.jsonl`: scan log, see [`crate::scanlog`].
//! * `tracks.tsv`: one row per frame, track and hypothesis. Columns:
//!   `frame timestamp track_id hypothesis selected model inlier_fraction
//!   noise_scale s0..s5 var0..var5 length width score missed
//!   px1 py1 .. pxN pyN`, where `s*` is the model state (ISM
//!   `x xdot y ydot theta thetadot`, VASM `x y L v theta thetadot`), `var*`
//!   the covariance diagonal and `px/py` the predicted center trajectory.
//! * `metrics.json`: [`MetricsReport`].

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsConfig, MetricsReport};
use crate::scanlog::{read_frames, write_frames};
use crate::simulator::{cluster_points, simulate, ScanFrame, ScenarioConfig};
use crate::tracker::{TrackManager, TrackReport, TrackerConfig};

/// Link distance used to cluster scan points [m].
pub const CLUSTER_GAP: f64 = 0.7;

const BUILTIN: &[(&str, &str)] = &[
    ("turn90", include_str!("../scenarios/turn90.toml")),
    ("stationary", include_str!("../scenarios/stationary.toml")),
    ("following", include_str!("../scenarios/following.toml")),
    ("corruption", include_str!("../scenarios/corruption.toml")),
    ("crowd", include_str!("../scenarios/crowd.toml")),
];

pub fn builtin_scenario_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|b| b.0)
}

fn toml_error(path: &str, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
    Error::Data { path: path.to_string(), line, message: e.message().to_string() }
}

pub fn parse_scenario(text: &str, path: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    cfg.validate().map_err(|e| Error::Config { path: path.to_string(), message: e.to_string() })?;
    Ok(cfg)
}

/// Loads a scenario from a file, or a bundled scenario by name when no such file exists.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    if !Path::new(spec).exists() {
        if let Some((_, text)) = BUILTIN.iter().find(|b| b.0 == spec) {
            return parse_scenario(text, spec);
        }
    }
    let text = fs::read_to_string(spec).map_err(|e| Error::Config { path: spec.to_string(), message: e.to_string() })?;
    parse_scenario(&text, spec)
}

/// Parses a TOML tracker configuration; missing keys take their defaults.
pub fn parse_tracker_config(text: &str, path: &str) -> Result<TrackerConfig> {
    let cfg: TrackerConfig = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    cfg.validate().map_err(|e| Error::Config { path: path.to_string(), message: e.to_string() })?;
    Ok(cfg)
}

pub fn load_tracker_config(path: Option<&Path>) -> Result<TrackerConfig> {
    let Some(path) = path else { return Ok(TrackerConfig::default()) };
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Config { path: name.clone(), message: e.to_string() })?;
    parse_tracker_config(&text, &name)
}

/// Runs the tracker over every frame and returns the reports of each frame.
pub fn track_frames(frames: &[ScanFrame], config: &TrackerConfig) -> Result<Vec<Vec<TrackReport>>> {
    let mut manager = TrackManager::new(config.clone())?;
    let mut out = Vec::with_capacity(frames.len());
    let mut prev: Option<f64> = None;
    for frame in frames {
        let dt = prev.map_or(config.prediction_dt, |p| frame.timestamp - p);
        prev = Some(frame.timestamp);
        let clusters = cluster_points(frame, CLUSTER_GAP);
        out.push(manager.step(&clusters, dt)?);
    }
    Ok(out)
}

pub fn write_tracks<W: Write>(mut out: W, frames: &[ScanFrame], reports: &[Vec<TrackReport>], steps: usize) -> Result<()> {
    let mut header: Vec<String> = ["frame", "timestamp", "track_id", "hypothesis", "selected", "model", "inlier_fraction", "noise_scale"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..6).map(|i| format!("s{i}")));
    header.extend((0..6).map(|i| format!("var{i}")));
    header.extend(["length", "width", "score", "missed"].iter().map(|s| s.to_string()));
    for k in 1..=steps {
        header.push(format!("px{k}"));
        header.push(format!("py{k}"));
    }
    writeln!(out, "{}", header.join("\t"))?;
    for (k, (frame, reps)) in frames.iter().zip(reports).enumerate() {
        for rep in reps {
            for (i, h) in rep.hypotheses.iter().enumerate() {
                let mut row = vec![
                    k.to_string(),
                    frame.timestamp.to_string(),
                    rep.id.to_string(),
                    i.to_string(),
                    ((i == rep.best) as u8).to_string(),
                    h.model.to_string(),
                    h.params.inlier_fraction.to_string(),
                    h.params.noise_scale.to_string(),
                ];
                row.extend(h.state.iter().map(f64::to_string));
                row.extend(h.cov_diag.iter().map(f64::to_string));
                row.push(rep.shape.length.to_string());
                row.push(rep.shape.width.to_string());
                row.push(h.score.map_or("nan".into(), |s| s.to_string()));
                row.push(h.missed_frames.to_string());
                for p in &h.predicted {
                    row.push(p.x.to_string());
                    row.push(p.y.to_string());
                }
                writeln!(out, "{}", row.join("\t"))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config { path: dir.display().to_string(), message: e.to_string() })
}

/// Simulates a scenario and writes its scan log. Returns the log path.
pub fn run_simulate(scenario: &str, seed: Option<u64>, out_dir: &Path) -> Result<PathBuf> {
    let mut cfg = load_scenario(scenario)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let frames = simulate(&cfg)?;
    create_out_dir(out_dir)?;
    let stem = if cfg.name.is_empty() { "scenario" } else { cfg.name.as_str() };
    let path = out_dir.join(format!("{stem}.scans.jsonl"));
    write_frames(BufWriter::new(fs::File::create(&path)?), &frames)?;
    log::info!("wrote {} frames to {}", frames.len(), path.display());
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrackOutput {
    pub tracks_path: PathBuf,
    pub metrics_path: PathBuf,
    pub frames: usize,
    pub metrics: MetricsReport,
}

/// Tracks a scan log, writing `tracks.tsv` and `metrics.json`.
pub fn run_track(log_path: &Path, config: &TrackerConfig, out_dir: &Path) -> Result<TrackOutput> {
    let name = log_path.display().to_string();
    let file = fs::File::open(log_path).map_err(|e| Error::Config { path: name.clone(), message: e.to_string() })?;
    let log = read_frames(BufReader::new(file), &name)?;
    if log.truncated {
        log::warn!("{name}: log is truncated, processed {} complete frames", log.frames.len());
    }
    let reports = track_frames(&log.frames, config)?;
    create_out_dir(out_dir)?;
    let tracks_path = out_dir.join("tracks.tsv");
    write_tracks(BufWriter::new(fs::File::create(&tracks_path)?), &log.frames, &reports, config.prediction_steps)?;
    let metrics = evaluate(&log.frames, &reports, config.prediction_dt, &MetricsConfig::default());
    let metrics_path = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&metrics).map_err(std::io::Error::from)?;
    fs::write(&metrics_path, json + "\n")?;
    Ok(TrackOutput { tracks_path, metrics_path, frames: log.frames.len(), metrics })
}

/// Simulates and tracks in one go.
pub fn run_eval(scenario: &str, seed: Option<u64>, config: &TrackerConfig, out_dir: &Path) -> Result<TrackOutput> {
    let log = run_simulate(scenario, seed, out_dir)?;
    run_track(&log, config, out_dir)
}
