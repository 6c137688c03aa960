//! Class-stratified metrics and CNN introspection.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{self, Mode, ModelSpec, Params};
use crate::raster::Raster;
use crate::tensor::Tensor;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "label arrays differ in length: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("confusion matrix of zero samples"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::invalid(format!("label pair ({t}, {p}) out of range")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn col_sums(&self) -> [u64; NUM_CLASSES] {
        let mut out = [0; NUM_CLASSES];
        for row in &self.counts {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    /// CSV with a header row of predicted class names and one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in CLASS_NAMES {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in CLASS_NAMES.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEntry {
    pub class: String,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub classes: Vec<ClassEntry>,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1; every 0/0 is reported as 0.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    if cm.total() == 0 {
        return Err(Error::invalid("classification report of an empty confusion matrix"));
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let classes = (0..NUM_CLASSES)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cols[c]);
            let recall = ratio(tp, rows[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassEntry {
                class: CLASS_NAMES[c].to_string(),
                metrics: ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: rows[c],
                },
            }
        })
        .collect();
    Ok(ClassReport {
        classes,
        accuracy: cm.accuracy(),
        total: cm.total(),
    })
}

/// One channel of a layer output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    pub fn is_active(&self) -> bool {
        self.values.iter().any(|&v| v != 0.0)
    }

    /// Min-max normalized 8-bit gray values; a constant map renders black.
    pub fn to_gray(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMaps {
    pub name: &'static str,
    pub maps: Vec<FeatureMap>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub layers: Vec<LayerMaps>,
}

/// Splits one `[1, H, W, C]` activation into C maps.
fn split_channels(name: &'static str, t: &Tensor) -> LayerMaps {
    let &[_, h, w, c] = t.shape() else {
        unreachable!("activation traces are 4-D")
    };
    let maps: Vec<FeatureMap> = (0..c)
        .map(|ch| FeatureMap {
            height: h,
            width: w,
            values: t.data().iter().skip(ch).step_by(c).copied().collect(),
        })
        .collect();
    let active = maps.iter().map(FeatureMap::is_active).collect();
    LayerMaps { name, maps, active }
}

/// Eval-mode activations of both convolution and pooling layers for one image.
pub fn extract_feature_maps(spec: &ModelSpec, params: &Params<f32>, image: &Tensor) -> Result<FeatureMapSet> {
    let batch = image.clone().reshape([&[1usize][..], image.shape()].concat())?;
    let (_, trace) = nn::forward(spec, params, &batch, Mode::Eval, 0)?;
    let kept = |a: Option<Tensor>| a.expect("forward keeps convolution outputs");
    Ok(FeatureMapSet {
        layers: vec![
            split_channels("conv1", &kept(trace.conv1)),
            split_channels("pool1", &trace.pool1),
            split_channels("conv2", &kept(trace.conv2)),
            split_channels("pool2", &trace.pool2),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InactiveCount {
    pub layer: String,
    pub inactive: usize,
    pub total: usize,
}

impl fmt::Display for InactiveCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}/{} inactive", self.layer, self.inactive, self.total)
    }
}

/// Display label: convolution layers are "layer N", pooling layers "pool N".
fn layer_label(name: &str) -> String {
    match name.strip_prefix("conv") {
        Some(n) => format!("layer {n}"),
        None => match name.strip_prefix("pool") {
            Some(n) => format!("pool {n}"),
            None => name.to_string(),
        },
    }
}

pub fn count_inactive_filters(set: &FeatureMapSet) -> Vec<InactiveCount> {
    set.layers
        .iter()
        .map(|l| InactiveCount {
            layer: layer_label(l.name),
            inactive: l.active.iter().filter(|a| !**a).count(),
            total: l.active.len(),
        })
        .collect()
}

/// Grid columns used when tiling feature maps.
pub const GRID_COLUMNS: usize = 8;

impl LayerMaps {
    /// Tiles the maps 8 per row with 1-pixel white separators.
    pub fn grid(&self) -> Result<Raster> {
        let first = self
            .maps
            .first()
            .ok_or_else(|| Error::invalid(format!("layer {} has no maps", self.name)))?;
        let (h, w) = (first.height, first.width);
        let cols = GRID_COLUMNS.min(self.maps.len());
        let rows = self.maps.len().div_ceil(GRID_COLUMNS);
        let gw = cols * w + cols - 1;
        let gh = rows * h + rows - 1;
        let mut px = vec![255u8; gw * gh * 3];
        for (i, map) in self.maps.iter().enumerate() {
            let (ox, oy) = ((i % GRID_COLUMNS) * (w + 1), (i / GRID_COLUMNS) * (h + 1));
            for (j, g) in map.to_gray().into_iter().enumerate() {
                let (x, y) = (ox + j % w, oy + j / w);
                let at = (y * gw + x) * 3;
                px[at..at + 3].fill(g);
            }
        }
        Raster::new(gw, gh, px)
    }

    pub fn save_grid(&self, path: impl AsRef<Path>) -> Result<()> {
        self.grid()?.save_png(path)
    }
}
