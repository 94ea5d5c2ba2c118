//! Tracking quality against simulator ground truth.

use nalgebra::Vector2;
use serde::Serialize;
use std::collections::BTreeMap;

use crate::fitting::{axis_diff, Pose2};
use crate::simulator::{ObjectKind, ScanFrame, TruthState};
use crate::tracker::{HypothesisReport, ModelKind, TrackReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsConfig {
    /// Maximum distance between a track and a truth center to count as tracked [m].
    pub match_radius: f64,
    /// Returns an object needs in a frame to count as visible.
    pub min_returns: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { match_radius: 2.0, min_returns: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectMetrics {
    pub object_id: u32,
    pub kind: ObjectKind,
    pub frames_visible: usize,
    pub frames_tracked: usize,
    /// Track id matched most often.
    pub primary_track: Option<u64>,
    /// Percentage of visible frames matched to the primary track.
    pub continuity: f64,
    pub position_rmse: f64,
    /// Heading error taken modulo a half turn [rad].
    pub heading_rmse: f64,
    /// Mean k-step-ahead center error of the selected hypothesis, k = 1..=horizon [m].
    pub prediction_error: Vec<f64>,
    /// Same, per model, using that model's best-scoring hypothesis.
    pub prediction_error_by_model: BTreeMap<ModelKind, Vec<f64>>,
    /// Model of the selected hypothesis in each frame (`None` when untracked).
    pub model_timeline: Vec<Option<ModelKind>>,
    /// Matched track id in each frame.
    pub track_timeline: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct MetricsReport {
    pub frames: usize,
    pub objects: Vec<ObjectMetrics>,
}

impl MetricsReport {
    pub fn object(&self, id: u32) -> Option<&ObjectMetrics> {
        self.objects.iter().find(|o| o.object_id == id)
    }
}

fn visible_counts(frame: &ScanFrame) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    if let Some(labels) = &frame.labels {
        for &id in labels {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    counts
}

fn dist(p: &Pose2, t: &TruthState) -> f64 {
    (Vector2::new(p.x, p.y) - Vector2::new(t.x, t.y)).norm()
}

/// Greedy one-to-one matching of visible truth objects to tracks by center distance.
pub fn match_frame(frame: &ScanFrame, reports: &[TrackReport], config: &MetricsConfig) -> BTreeMap<u32, usize> {
    let counts = visible_counts(frame);
    let visible: Vec<&TruthState> =
        frame.truth.iter().filter(|t| frame.labels.is_none() || counts.get(&t.id).copied().unwrap_or(0) >= config.min_returns).collect();
    let mut pairs: Vec<(f64, u32, usize)> = Vec::new();
    for t in &visible {
        for (r, rep) in reports.iter().enumerate() {
            let d = dist(&rep.best().pose, t);
            if d <= config.match_radius {
                pairs.push((d, t.id, r));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = BTreeMap::new();
    let mut used = vec![false; reports.len()];
    for (_, id, r) in pairs {
        if !used[r] && !out.contains_key(&id) {
            used[r] = true;
            out.insert(id, r);
        }
    }
    out
}

fn truth_at(frames: &[ScanFrame], t: f64, id: u32) -> Option<&TruthState> {
    let k = frames.partition_point(|f| f.timestamp < t - 1e-6);
    let f = frames.get(k)?;
    if (f.timestamp - t).abs() > 1e-6 {
        return None;
    }
    f.truth.iter().find(|s| s.id == id)
}

/// Best-scoring hypothesis of the given model.
pub fn best_of_model(report: &TrackReport, model: ModelKind) -> Option<&HypothesisReport> {
    report.hypotheses.iter().filter(|h| h.model == model).min_by(|a, b| {
        let sa = a.score.unwrap_or(f64::INFINITY) + a.missed_frames as f64 * 1e6;
        let sb = b.score.unwrap_or(f64::INFINITY) + b.missed_frames as f64 * 1e6;
        sa.total_cmp(&sb)
    })
}

#[derive(Default, Clone)]
struct Curve {
    sum: Vec<f64>,
    n: Vec<usize>,
}

impl Curve {
    fn add(&mut self, frames: &[ScanFrame], t0: f64, dt: f64, id: u32, predicted: &[Pose2]) {
        if self.sum.len() < predicted.len() {
            self.sum.resize(predicted.len(), 0.0);
            self.n.resize(predicted.len(), 0);
        }
        for (k, p) in predicted.iter().enumerate() {
            if let Some(truth) = truth_at(frames, t0 + (k + 1) as f64 * dt, id) {
                self.sum[k] += dist(p, truth);
                self.n[k] += 1;
            }
        }
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.n).map(|(s, &n)| if n > 0 { s / n as f64 } else { f64::NAN }).collect()
    }
}

/// Scores per-frame tracker output against the truth stored in `frames`.
/// `prediction_dt` is the step of the predicted trajectories.
pub fn evaluate(frames: &[ScanFrame], reports: &[Vec<TrackReport>], prediction_dt: f64, config: &MetricsConfig) -> MetricsReport {
    assert_eq!(frames.len(), reports.len(), "one report set per frame");
    let mut ids: Vec<(u32, ObjectKind)> = frames.iter().flat_map(|f| f.truth.iter().map(|t| (t.id, t.kind))).collect();
    ids.sort_by_key(|x| x.0);
    ids.dedup_by_key(|x| x.0);

    let matches: Vec<BTreeMap<u32, usize>> = frames.iter().zip(reports).map(|(f, r)| match_frame(f, r, config)).collect();
    let visible: Vec<BTreeMap<u32, usize>> = frames.iter().map(visible_counts).collect();

    let objects = ids
        .into_iter()
        .map(|(id, kind)| {
            let mut frames_visible = 0;
            let mut tally: BTreeMap<u64, usize> = BTreeMap::new();
            let mut sq_pos = 0.0;
            let mut sq_head = 0.0;
            let mut n = 0usize;
            let mut best_curve = Curve::default();
            let mut model_curves: BTreeMap<ModelKind, Curve> = BTreeMap::new();
            let mut model_timeline = Vec::with_capacity(frames.len());
            let mut track_timeline = Vec::with_capacity(frames.len());
            for (k, frame) in frames.iter().enumerate() {
                let is_visible = frame.truth.iter().any(|t| t.id == id)
                    && (frame.labels.is_none() || visible[k].get(&id).copied().unwrap_or(0) >= config.min_returns);
                frames_visible += is_visible as usize;
                let Some(&r) = matches[k].get(&id) else {
                    model_timeline.push(None);
                    track_timeline.push(None);
                    continue;
                };
                let rep = &reports[k][r];
                let truth = frame.truth.iter().find(|t| t.id == id).expect("matched objects have truth");
                *tally.entry(rep.id).or_insert(0) += 1;
                let best = rep.best();
                sq_pos += dist(&best.pose, truth).powi(2);
                sq_head += axis_diff(best.pose.theta, truth.theta).powi(2);
                n += 1;
                best_curve.add(frames, frame.timestamp, prediction_dt, id, &best.predicted);
                for model in [ModelKind::Ism, ModelKind::Vasm] {
                    if let Some(h) = best_of_model(rep, model) {
                        model_curves.entry(model).or_default().add(frames, frame.timestamp, prediction_dt, id, &h.predicted);
                    }
                }
                model_timeline.push(Some(best.model));
                track_timeline.push(Some(rep.id));
            }
            let primary = tally.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&t, _)| t);
            let on_primary = track_timeline.iter().filter(|t| t.is_some() && **t == primary).count();
            let rmse = |s: f64| if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
            ObjectMetrics {
                object_id: id,
                kind,
                frames_visible,
                frames_tracked: n,
                primary_track: primary,
                continuity: if frames_visible > 0 { (100.0 * on_primary as f64 / frames_visible as f64).min(100.0) } else { 0.0 },
                position_rmse: rmse(sq_pos),
                heading_rmse: rmse(sq_head),
                prediction_error: best_curve.mean(),
                prediction_error_by_model: model_curves.into_iter().map(|(m, c)| (m, c.mean())).collect(),
                model_timeline,
                track_timeline,
            }
        })
        .collect();
    MetricsReport { frames: frames.len(), objects }
}
