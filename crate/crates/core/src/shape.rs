//! Adaptive length/width estimation from decayed histograms.
//!
//! Partial occlusion only ever shortens an observed extent, so among the
//! significant histogram peaks the longest one is taken as the true size.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DEFAULT_LENGTH: f64 = 4.5;
pub const DEFAULT_WIDTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramConfig {
    pub bin_width: f64,
    /// Number of observations after which a weight has halved.
    pub half_life: f64,
    /// Accumulated weight needed before an estimate is reported.
    pub maturity: f64,
    /// Weight fraction trimmed from the long end before peak picking.
    pub trim_fraction: f64,
    /// Minimum peak weight relative to the strongest peak.
    pub peak_fraction: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { bin_width: 0.2, half_life: 50.0, maturity: 3.0, trim_fraction: 0.05, peak_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionHistogram {
    config: HistogramConfig,
    bins: BTreeMap<i64, f64>,
    total_weight: f64,
}

impl Default for DimensionHistogram {
    fn default() -> Self {
        Self::new(HistogramConfig::default())
    }
}

impl DimensionHistogram {
    pub fn new(config: HistogramConfig) -> Self {
        Self { config, bins: BTreeMap::new(), total_weight: 0.0 }
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn config(&self) -> &HistogramConfig {
        &self.config
    }

    pub fn bin_index(&self, value: f64) -> i64 {
        (value / self.config.bin_width).floor() as i64
    }

    pub fn bin_center(&self, index: i64) -> f64 {
        (index as f64 + 0.5) * self.config.bin_width
    }

    pub fn weight(&self, index: i64) -> f64 {
        self.bins.get(&index).copied().unwrap_or(0.0)
    }

    pub fn bins(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.bins.iter().map(|(&k, &v)| (k, v))
    }

    /// Decays all weights by `2^(-1/half_life)` and adds a unit weight at `value`.
    /// Non-positive or non-finite values are rejected and leave the histogram unchanged.
    pub fn observe(&mut self, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::invalid(format!("dimension must be positive, got {value}")));
        }
        let decay = (-1.0 / self.config.half_life).exp2();
        for w in self.bins.values_mut() {
            *w *= decay;
        }
        *self.bins.entry(self.bin_index(value)).or_insert(0.0) += 1.0;
        self.total_weight = self.total_weight * decay + 1.0;
        Ok(())
    }

    /// Longest significant peak after trimming the top of the distribution.
    /// `None` until the histogram is mature.
    pub fn estimate(&self) -> Option<f64> {
        if self.total_weight < self.config.maturity {
            return None;
        }
        let trim = self.config.trim_fraction * self.total_weight;
        let mut cumulative = 0.0;
        let mut cutoff = i64::MAX;
        for (&k, &w) in self.bins.iter().rev() {
            cumulative += w;
            if cumulative > trim {
                break;
            }
            cutoff = k;
        }
        let kept: Vec<(i64, f64)> = self.bins.range(..cutoff).map(|(&k, &w)| (k, w)).collect();
        let weight_of = |k: i64| -> f64 {
            if k >= cutoff {
                0.0
            } else {
                self.weight(k)
            }
        };
        let peaks: Vec<(i64, f64)> =
            kept.iter().copied().filter(|&(k, w)| w > 0.0 && w >= weight_of(k - 1) && w >= weight_of(k + 1)).collect();
        let strongest = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
        peaks.iter().rev().find(|p| p.1 >= self.config.peak_fraction * strongest).map(|p| self.bin_center(p.0))
    }
}

/// Current size estimate of a tracked object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub length: f64,
    pub width: f64,
    pub length_confidence: f64,
    pub width_confidence: f64,
    pub length_mature: bool,
    pub width_mature: bool,
}

impl Default for ShapeEstimate {
    fn default() -> Self {
        Self::with_dims(DEFAULT_LENGTH, DEFAULT_WIDTH)
    }
}

impl ShapeEstimate {
    /// Fixed dimensions with no accumulated evidence.
    pub fn with_dims(length: f64, width: f64) -> Self {
        Self { length, width, length_confidence: 0.0, width_confidence: 0.0, length_mature: false, width_mature: false }
    }
}

/// Length and width histograms of one track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapeTracker {
    pub length: DimensionHistogram,
    pub width: DimensionHistogram,
}

impl ShapeTracker {
    pub fn new(config: HistogramConfig) -> Self {
        Self { length: DimensionHistogram::new(config), width: DimensionHistogram::new(config) }
    }

    pub fn observe(&mut self, length: Option<f64>, width: Option<f64>) {
        // extents come from fitted inliers and are always positive unless the fit is a single point
        if let Some(l) = length {
            let _ = self.length.observe(l);
        }
        if let Some(w) = width {
            let _ = self.width.observe(w);
        }
    }

    pub fn estimate(&self) -> ShapeEstimate {
        let l = self.length.estimate();
        let w = self.width.estimate();
        ShapeEstimate {
            length: l.unwrap_or(DEFAULT_LENGTH),
            width: w.unwrap_or(DEFAULT_WIDTH),
            length_confidence: self.length.total_weight(),
            width_confidence: self.width.total_weight(),
            length_mature: l.is_some(),
            width_mature: w.is_some(),
        }
    }
}
