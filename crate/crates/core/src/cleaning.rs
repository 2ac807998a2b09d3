//! Training-pair filtering with a logistic probe on embedding differences,
//! and zeroing of building footprints.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Grid;
use crate::stats::pairwise_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    e_pred: Vec<f64>,
    e_label: Vec<f64>,
}

impl EmbeddingPair {
    pub fn new(e_pred: Vec<f64>, e_label: Vec<f64>) -> Result<Self> {
        if e_pred.len() != e_label.len() {
            return Err(Error::Dimension(format!(
                "embedding dimensions differ: {} vs {}",
                e_pred.len(),
                e_label.len()
            )));
        }
        if e_pred.iter().chain(&e_label).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("embedding contains a non-finite value".into()));
        }
        Ok(Self { e_pred, e_label })
    }

    pub fn dim(&self) -> usize {
        self.e_pred.len()
    }

    /// Element-wise `|e_pred - e_label|`.
    pub fn features(&self) -> Vec<f64> {
        self.e_pred
            .iter()
            .zip(&self.e_label)
            .map(|(a, b)| (a - b).abs())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl ProbeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("probe has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn keeps(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainParams {
    pub l2: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub threshold: f64,
}

impl Default for ProbeTrainParams {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            iters: 500,
            learning_rate: 0.1,
            threshold: 0.5,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    let terms: Vec<f64> = w.iter().zip(x).map(|(a, b)| a * b).collect();
    pairwise_sum(&terms)
}

/// Mean logistic loss plus `l2 / 2 * |w|^2` (bias unpenalized).
pub fn probe_objective(model: &ProbeModel, features: &[Vec<f64>], labels: &[bool], l2: f64) -> f64 {
    let terms: Vec<f64> = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let z = dot(&model.weights, x) + model.bias;
            if y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .collect();
    let w2: Vec<f64> = model.weights.iter().map(|w| w * w).collect();
    pairwise_sum(&terms) / terms.len() as f64 + 0.5 * l2 * pairwise_sum(&w2)
}

/// Fits the probe by full-batch proximal gradient descent from zero
/// weights. Samples are put in a canonical order first, so the result does
/// not depend on the order of the input.
pub fn train_probe(
    pairs: &[EmbeddingPair],
    labels: &[bool],
    params: &ProbeTrainParams,
) -> Result<ProbeModel> {
    Ok(train_probe_with_history(pairs, labels, params)?.0)
}

/// As [`train_probe`], also returning the objective before each iteration
/// and after the last one.
pub fn train_probe_with_history(
    pairs: &[EmbeddingPair],
    labels: &[bool],
    params: &ProbeTrainParams,
) -> Result<(ProbeModel, Vec<f64>)> {
    if pairs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} samples but {} labels",
            pairs.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|l| *l) || labels.iter().all(|l| *l) {
        return Err(Error::Training("both keep and discard samples are required".into()));
    }
    if !(params.l2 >= 0.0) || !(params.learning_rate > 0.0) {
        return Err(Error::Parameter("l2 must be >= 0 and learning rate > 0".into()));
    }
    let dim = pairs[0].dim();
    if let Some(bad) = pairs.iter().find(|p| p.dim() != dim) {
        return Err(Error::Dimension(format!(
            "embedding dimension {} differs from {dim}",
            bad.dim()
        )));
    }

    let mut samples: Vec<(Vec<f64>, bool)> = pairs
        .iter()
        .map(EmbeddingPair::features)
        .zip(labels.iter().copied())
        .collect();
    samples.sort_by(|a, b| {
        a.1.cmp(&b.1).then_with(|| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let (features, ys): (Vec<Vec<f64>>, Vec<bool>) = samples.into_iter().unzip();

    let mut model = ProbeModel {
        weights: vec![0.0; dim],
        bias: 0.0,
        threshold: params.threshold,
    };
    model.validate()?;
    let n = features.len() as f64;
    let (lr, l2) = (params.learning_rate, params.l2);
    let mut history = Vec::with_capacity(params.iters + 1);
    let mut residuals = vec![0.0; features.len()];
    let mut column = vec![0.0; features.len()];
    for _ in 0..params.iters {
        history.push(probe_objective(&model, &features, &ys, l2));
        for (r, (x, &y)) in residuals.iter_mut().zip(features.iter().zip(&ys)) {
            *r = sigmoid(dot(&model.weights, x) + model.bias) - if y { 1.0 } else { 0.0 };
        }
        for j in 0..dim {
            for (c, (x, r)) in column.iter_mut().zip(features.iter().zip(&residuals)) {
                *c = x[j] * r;
            }
            let g = pairwise_sum(&column) / n;
            model.weights[j] = (model.weights[j] - lr * g) / (1.0 + lr * l2);
        }
        model.bias -= lr * pairwise_sum(&residuals) / n;
    }
    history.push(probe_objective(&model, &features, &ys, l2));
    Ok((model, history))
}

/// Largest f64 strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `sigmoid(w . |e_pred - e_label| + b)`, kept strictly inside (0, 1).
pub fn keep_score(model: &ProbeModel, pair: &EmbeddingPair) -> Result<f64> {
    if pair.dim() != model.weights.len() {
        return Err(Error::Dimension(format!(
            "embedding dimension {} but probe expects {}",
            pair.dim(),
            model.weights.len()
        )));
    }
    let z = dot(&model.weights, &pair.features()) + model.bias;
    Ok(sigmoid(z).clamp(f64::MIN_POSITIVE, BELOW_ONE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC curve treating "keep" as the positive class. One point per distinct
/// score (keep iff score >= threshold), preceded by the empty selection.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("ROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: s,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(out)
}

pub fn write_roc_csv(path: impl AsRef<Path>, points: &[RocPoint]) -> Result<()> {
    crate::formats::write_csv(path, points)
}

/// Closed ring in pixel-corner coordinates: pixel `(i, j)` spans
/// `[i, i+1) x [j, j+1)` and its center is `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub id: String,
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    /// Drops a repeated closing vertex.
    pub fn new(id: impl Into<String>, mut vertices: Vec<(f64, f64)>) -> Self {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        Self {
            id: id.into(),
            vertices,
        }
    }

    /// Even-odd containment; left/top edges inclusive, right/bottom exclusive.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let crossings = self.row_crossings(py);
        crossings.iter().filter(|&&x| x > px).count() % 2 == 1
    }

    fn row_crossings(&self, py: f64) -> Vec<f64> {
        let v = &self.vertices;
        let mut xs = Vec::new();
        for i in 0..v.len() {
            let (x0, y0) = v[i];
            let (x1, y1) = v[(i + 1) % v.len()];
            if (y0 > py) != (y1 > py) {
                xs.push(x0 + (py - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        xs
    }
}

/// Reads `id,x0,y0,x1,y1,...` lines. A first line starting with `id` is
/// treated as a header.
pub fn read_polygons(path: impl AsRef<Path>) -> Result<Vec<Polygon>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let Some(id) = record.get(0) else { continue };
        if line == 0 && id.eq_ignore_ascii_case("id") {
            continue;
        }
        let coords: Vec<f64> = record
            .iter()
            .skip(1)
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("line {}: bad coordinate `{f}`", line + 1)))
            })
            .collect::<Result<_>>()?;
        if !coords.len().is_multiple_of(2) {
            return Err(Error::format(
                path,
                format!("line {}: odd number of coordinates", line + 1),
            ));
        }
        let vertices = coords.chunks(2).map(|c| (c[0], c[1])).collect();
        out.push(Polygon::new(id, vertices));
    }
    Ok(out)
}

/// Sets every valid pixel whose center lies inside any polygon to 0 m.
/// Nodata pixels stay nodata.
pub fn zero_buildings(chm: &Grid, polygons: &[Polygon]) -> Result<Grid> {
    if let Some((index, p)) = polygons.iter().enumerate().find(|(_, p)| p.vertices.len() < 3) {
        return Err(Error::DegeneratePolygon {
            index,
            vertices: p.vertices.len(),
        });
    }
    let mut out = chm.clone();
    let w = chm.width() as i64;
    for poly in polygons {
        let (ymin, ymax) = poly
            .vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.1), b.max(v.1)));
        let row0 = ((ymin - 0.5).ceil().max(0.0)) as usize;
        let row1 = ((ymax - 0.5).floor().min(chm.height() as f64 - 1.0)).max(-1.0);
        if row1 < 0.0 {
            continue;
        }
        for y in row0..=row1 as usize {
            let xs = poly.row_crossings(y as f64 + 0.5);
            for span in xs.chunks_exact(2) {
                // centers x + 0.5 in [span[0], span[1])
                let x0 = ((span[0] - 0.5).ceil() as i64).max(0);
                let x1 = ((span[1] - 0.5).ceil() as i64).min(w);
                for x in x0..x1 {
                    if out.is_valid(x as usize, y) {
                        out.set(x as usize, y, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parses a keep/discard label: `1`/`0`, `true`/`false` or `keep`/`discard`.
pub fn parse_keep_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "keep" => Some(true),
        "0" | "false" | "discard" => Some(false),
        _ => None,
    }
}
