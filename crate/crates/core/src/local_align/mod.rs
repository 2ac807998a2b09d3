//! Dense non-rigid alignment driven by tree boxes.
//!
//! Each box yields one or more height-weighted centers of mass; their offsets
//! from the box center are clustered, summarised by per-cluster medians and
//! interpolated into a dense field with a thin-plate spline. The loop warps
//! the CHM, re-measures, and composes damped increments until the median
//! offset drops below one pixel.

mod dbscan;
mod tps;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dbscan::dbscan;
pub use tps::TpsModel;

use crate::error::{Error, Result};
use crate::raster::{compose_displacement, warp_apply, DisplacementField, Grid};
use crate::stats;

/// Connected components smaller than this are ignored.
pub const MIN_COMPONENT_AREA: usize = 4;

/// Axis-aligned tree box in pixel coordinates. The box covers pixel indices
/// `ceil(x_min)..=floor(x_max)` (same for rows); its center is the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl TreeBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Parameter(format!("invalid tree box {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Inclusive pixel ranges after clipping, or `None` if the box misses
    /// the raster.
    fn pixel_span(&self, w: usize, h: usize) -> Option<((usize, usize), (usize, usize))> {
        let x0 = self.x_min.ceil().max(0.0);
        let y0 = self.y_min.ceil().max(0.0);
        let x1 = self.x_max.floor().min((w - 1) as f64);
        let y1 = self.y_max.floor().min((h - 1) as f64);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some(((x0 as usize, x1 as usize), (y0 as usize, y1 as usize)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffsetSample {
    /// Box center in pixels.
    pub anchor: [f64; 2],
    /// Center of mass minus box center, in pixels.
    pub offset: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlPoint {
    pub location: [f64; 2],
    pub displacement: [f64; 2],
}

/// Centers of mass of the crown components inside each box.
///
/// Pixels at or above `rel_threshold` times the box maximum are split into
/// 8-connected components; each component of at least
/// [`MIN_COMPONENT_AREA`] pixels gives one sample. Boxes whose maximum is not
/// positive are skipped.
pub fn tree_offsets(chm: &Grid, boxes: &[TreeBox], rel_threshold: f64) -> Result<Vec<OffsetSample>> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "rel_threshold {rel_threshold} outside (0, 1)"
        )));
    }
    let (w, h) = (chm.width(), chm.height());
    let mut out = Vec::new();
    let mut label = Vec::new();
    let mut stack = Vec::new();
    for b in boxes {
        b.validate()?;
        let Some(((x0, x1), (y0, y1))) = b.pixel_span(w, h) else {
            continue;
        };
        let bw = x1 - x0 + 1;
        let bh = y1 - y0 + 1;
        let box_max = (y0..=y1)
            .flat_map(|y| (x0..=x1).filter_map(move |x| chm.get(x, y)))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(box_max > 0.0) {
            continue;
        }
        let threshold = rel_threshold * box_max;
        let inside = |lx: usize, ly: usize| chm.get(x0 + lx, y0 + ly).is_some_and(|v| v >= threshold);

        label.clear();
        label.resize(bw * bh, false);
        let center = b.center();
        for sy in 0..bh {
            for sx in 0..bw {
                if label[sy * bw + sx] || !inside(sx, sy) {
                    continue;
                }
                label[sy * bw + sx] = true;
                stack.clear();
                stack.push((sx, sy));
                let (mut area, mut mass, mut mx, mut my) = (0usize, 0.0, 0.0, 0.0);
                while let Some((cx, cy)) = stack.pop() {
                    let v = chm.values()[chm.index(x0 + cx, y0 + cy)];
                    area += 1;
                    mass += v;
                    mx += v * (x0 + cx) as f64;
                    my += v * (y0 + cy) as f64;
                    for ny in cy.saturating_sub(1)..=(cy + 1).min(bh - 1) {
                        for nx in cx.saturating_sub(1)..=(cx + 1).min(bw - 1) {
                            let k = ny * bw + nx;
                            if !label[k] && inside(nx, ny) {
                                label[k] = true;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
                if area >= MIN_COMPONENT_AREA && mass > 0.0 {
                    out.push(OffsetSample {
                        anchor: center,
                        offset: [mx / mass - center[0], my / mass - center[1]],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// DBSCAN in offset space; every cluster becomes one control point at the
/// median anchor carrying the component-wise median offset. Noise is dropped.
pub fn cluster_offsets(samples: &[OffsetSample], eps: f64, min_pts: usize) -> Result<Vec<ControlPoint>> {
    Ok(cluster_with_labels(samples, eps, min_pts)?.0)
}

fn cluster_with_labels(
    samples: &[OffsetSample],
    eps: f64,
    min_pts: usize,
) -> Result<(Vec<ControlPoint>, Vec<Option<usize>>)> {
    if !(eps > 0.0) || min_pts < 1 {
        return Err(Error::Parameter(format!(
            "DBSCAN needs eps > 0 and min_pts >= 1 (got {eps}, {min_pts})"
        )));
    }
    let offsets: Vec<[f64; 2]> = samples.iter().map(|s| s.offset).collect();
    let labels = dbscan(&offsets, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<&OffsetSample>> = vec![Vec::new(); n_clusters];
    for (s, l) in samples.iter().zip(&labels) {
        if let Some(c) = l {
            members[*c].push(s);
        }
    }
    let med = |v: Vec<f64>| stats::median(&v).expect("clusters are non-empty");
    let points = members
        .into_iter()
        .map(|m| ControlPoint {
            location: [
                med(m.iter().map(|s| s.anchor[0]).collect()),
                med(m.iter().map(|s| s.anchor[1]).collect()),
            ],
            displacement: [
                med(m.iter().map(|s| s.offset[0]).collect()),
                med(m.iter().map(|s| s.offset[1]).collect()),
            ],
        })
        .collect();
    Ok((points, labels))
}

/// Dense field from a thin-plate spline fit per displacement component.
pub fn tps_warp_field(
    points: &[ControlPoint],
    width: usize,
    height: usize,
    regularization: f64,
) -> Result<DisplacementField> {
    let loc: Vec<[f64; 2]> = points.iter().map(|p| p.location).collect();
    let disp: Vec<[f64; 2]> = points.iter().map(|p| p.displacement).collect();
    let model = TpsModel::fit(&loc, &disp, regularization)?;
    Ok(DisplacementField::from_fn(width, height, |x, y| {
        model.eval(x as f64, y as f64)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalAlignParams {
    pub rel_threshold: f64,
    pub eps: f64,
    pub min_pts: usize,
    /// Step factor for composing each increment.
    pub alpha: f64,
    pub max_iters: usize,
    /// Control points with a larger displacement (pixels) are discarded.
    pub displacement_cap: f64,
    /// Side of the square cells within which offsets are clustered;
    /// 0 clusters the whole tile at once.
    pub cell_size: usize,
    /// Ridge term of the thin-plate fit, in normalised coordinates.
    pub regularization: f64,
    /// Stop once the median measured offset falls below this (pixels).
    pub tolerance: f64,
}

impl Default for LocalAlignParams {
    fn default() -> Self {
        Self {
            rel_threshold: 0.5,
            eps: 2.0,
            min_pts: 3,
            alpha: 0.5,
            max_iters: 10,
            displacement_cap: 16.0,
            cell_size: 64,
            regularization: 1e-3,
            tolerance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LocalAlignDiagnostics {
    /// Median measured offset magnitude at each iteration (pixels).
    pub median_offsets: Vec<f64>,
    /// Control points used per iteration (0 when converged before fitting).
    pub control_points: Vec<usize>,
    /// Whether the iteration fell back to a global median translation.
    pub fallback: Vec<bool>,
    pub converged: bool,
    /// No offset samples could be measured on the input.
    pub no_samples: bool,
}

impl LocalAlignDiagnostics {
    pub fn iterations(&self) -> usize {
        self.median_offsets.len()
    }
}

/// Iteratively estimates the field that warps `chm` onto the box frame.
pub fn local_align(
    chm: &Grid,
    boxes: &[TreeBox],
    params: &LocalAlignParams,
) -> Result<(DisplacementField, LocalAlignDiagnostics)> {
    let (w, h) = (chm.width(), chm.height());
    if params.max_iters == 0 {
        return Err(Error::Parameter("max_iters must be >= 1".into()));
    }
    let mut field = DisplacementField::zeros(w, h);
    let mut diag = LocalAlignDiagnostics::default();
    for iter in 0..params.max_iters {
        let warped = if iter == 0 {
            chm.clone()
        } else {
            warp_apply(chm, &field)?
        };
        let samples = tree_offsets(&warped, boxes, params.rel_threshold)?;
        if samples.is_empty() {
            diag.no_samples = iter == 0;
            break;
        }
        let (points, inliers) = control_points(&samples, params)?;
        let magnitudes: Vec<f64> = inliers.iter().map(|s| s.offset[0].hypot(s.offset[1])).collect();
        let median = stats::median(&magnitudes).unwrap_or(0.0);
        diag.median_offsets.push(median);
        if median < params.tolerance {
            diag.converged = true;
            diag.control_points.push(0);
            diag.fallback.push(false);
            break;
        }
        let fitted = if points.len() >= 3 {
            tps_warp_field(&points, w, h, params.regularization).ok()
        } else {
            None
        };
        diag.control_points.push(points.len());
        diag.fallback.push(fitted.is_none());
        let increment = match fitted {
            Some(f) => f,
            None => {
                let mx = stats::median(&inliers.iter().map(|s| s.offset[0]).collect::<Vec<_>>());
                let my = stats::median(&inliers.iter().map(|s| s.offset[1]).collect::<Vec<_>>());
                DisplacementField::constant(w, h, mx.unwrap_or(0.0), my.unwrap_or(0.0))
            }
        };
        field = compose_displacement(&field, &increment, params.alpha)?;
    }
    Ok((field, diag))
}

/// Clusters offsets per spatial cell. Returns the capped control points and
/// the samples that belong to some cluster (all samples when none does).
fn control_points<'a>(
    samples: &'a [OffsetSample],
    params: &LocalAlignParams,
) -> Result<(Vec<ControlPoint>, Vec<&'a OffsetSample>)> {
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = if params.cell_size == 0 {
            (0, 0)
        } else {
            let c = params.cell_size as f64;
            ((s.anchor[0] / c).floor() as i64, (s.anchor[1] / c).floor() as i64)
        };
        cells.entry(key).or_default().push(i);
    }
    let mut points = Vec::new();
    let mut is_inlier = vec![false; samples.len()];
    for idx in cells.values() {
        let group: Vec<OffsetSample> = idx.iter().map(|&i| samples[i]).collect();
        let (cps, labels) = cluster_with_labels(&group, params.eps, params.min_pts)?;
        points.extend(cps.into_iter().filter(|p| {
            p.displacement[0].hypot(p.displacement[1]) <= params.displacement_cap
        }));
        for (&i, l) in idx.iter().zip(labels) {
            is_inlier[i] = l.is_some();
        }
    }
    let inliers: Vec<&OffsetSample> = if is_inlier.iter().any(|b| *b) {
        samples.iter().zip(&is_inlier).filter(|(_, k)| **k).map(|(s, _)| s).collect()
    } else {
        samples.iter().collect()
    };
    Ok((points, inliers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(w: usize, h: usize, trees: &[(f64, f64)], amp: f64, sigma: f64) -> Grid {
        Grid::from_fn(w, h, 0.6, |x, y| {
            trees
                .iter()
                .map(|&(cx, cy)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    amp * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn centered_bump_has_zero_offset() {
        let g = scene(40, 40, &[(20.0, 20.0)], 20.0, 3.0);
        let b = TreeBox::new(12.0, 12.0, 28.0, 28.0).unwrap();
        let s = tree_offsets(&g, &[b], 0.5).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].offset[0].abs() < 1e-12 && s[0].offset[1].abs() < 1e-12);
    }

    #[test]
    fn displaced_bump_offset() {
        let g = scene(48, 48, &[(24.0, 21.0)], 20.0, 3.0);
        let b = TreeBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        let s = tree_offsets(&g, &[b], 0.5).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].offset[0] - 4.0).abs() < 0.25);
        assert!((s[0].offset[1] - 1.0).abs() < 0.25);
    }

    #[test]
    fn two_bumps_two_samples() {
        let g = scene(60, 40, &[(14.0, 20.0), (40.0, 20.0)], 20.0, 2.5);
        let b = TreeBox::new(4.0, 8.0, 50.0, 32.0).unwrap();
        assert_eq!(tree_offsets(&g, &[b], 0.5).unwrap().len(), 2);
    }

    #[test]
    fn nonpositive_box_yields_nothing() {
        let g = Grid::filled(20, 20, 1.0, 0.0).unwrap();
        let b = TreeBox::new(2.0, 2.0, 10.0, 10.0).unwrap();
        assert!(tree_offsets(&g, &[b], 0.5).unwrap().is_empty());
        assert!(tree_offsets(&g, &[b], 1.0).is_err());
        assert!(TreeBox::new(5.0, 2.0, 5.0, 10.0).is_err());
    }

    fn sample(ax: f64, ay: f64, dx: f64, dy: f64) -> OffsetSample {
        OffsetSample {
            anchor: [ax, ay],
            offset: [dx, dy],
        }
    }

    #[test]
    fn cluster_drops_outlier() {
        let s = vec![
            sample(10.0, 10.0, 2.0, 0.0),
            sample(30.0, 12.0, 2.1, 0.1),
            sample(50.0, 40.0, 1.9, -0.1),
            sample(20.0, 60.0, 2.0, 0.05),
            sample(70.0, 20.0, 2.05, -0.05),
            sample(40.0, 40.0, 9.0, 9.0),
        ];
        let cps = cluster_offsets(&s, 2.0, 3).unwrap();
        assert_eq!(cps.len(), 1);
        assert!((cps[0].displacement[0] - 2.0).abs() < 1e-12);
        assert!(cps[0].displacement[1].abs() < 1e-12);
        assert_eq!(cps[0].location, [30.0, 20.0]);
    }

    #[test]
    fn identical_samples_one_cluster() {
        let s = vec![sample(1.0, 2.0, 0.5, -0.5); 4];
        let cps = cluster_offsets(&s, 2.0, 3).unwrap();
        assert_eq!(cps.len(), 1);
        assert_eq!(cps[0].displacement, [0.5, -0.5]);
        assert!(cluster_offsets(&s, 0.0, 3).is_err());
        assert!(cluster_offsets(&[], 2.0, 3).unwrap().is_empty());
    }

    #[test]
    fn tps_constant_field() {
        let cps = [
            ControlPoint {
                location: [5.0, 5.0],
                displacement: [2.0, 0.0],
            },
            ControlPoint {
                location: [25.0, 8.0],
                displacement: [2.0, 0.0],
            },
            ControlPoint {
                location: [12.0, 28.0],
                displacement: [2.0, 0.0],
            },
        ];
        let f = tps_warp_field(&cps, 32, 32, 0.0).unwrap();
        assert!(f.dx().iter().all(|v| (v - 2.0).abs() < 1e-9));
        assert!(f.dy().iter().all(|v| v.abs() < 1e-9));
        assert!(tps_warp_field(&cps[..2], 32, 32, 0.0).is_err());
    }

    #[test]
    fn aligned_input_converges_immediately() {
        let trees: Vec<(f64, f64)> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (12.0 + 20.0 * i as f64, 12.0 + 20.0 * j as f64)))
            .collect();
        let g = scene(84, 84, &trees, 20.0, 2.5);
        let boxes: Vec<TreeBox> = trees
            .iter()
            .map(|&(x, y)| TreeBox::new(x - 7.0, y - 7.0, x + 7.0, y + 7.0).unwrap())
            .collect();
        let (f, d) = local_align(&g, &boxes, &LocalAlignParams::default()).unwrap();
        assert!(d.converged);
        assert_eq!(d.iterations(), 1);
        assert_eq!(f, DisplacementField::zeros(84, 84));
    }

    #[test]
    fn no_boxes_gives_identity_with_flag() {
        let g = Grid::filled(16, 16, 1.0, 3.0).unwrap();
        let (f, d) = local_align(&g, &[], &LocalAlignParams::default()).unwrap();
        assert!(d.no_samples);
        assert_eq!(f, DisplacementField::zeros(16, 16));
    }

    #[test]
    fn constant_shift_is_recovered() {
        let trees: Vec<(f64, f64)> = (0..5)
            .flat_map(|i| (0..5).map(move |j| (14.0 + 22.0 * i as f64, 14.0 + 22.0 * j as f64)))
            .collect();
        let truth = scene(128, 128, &trees, 20.0, 2.5);
        // Label content sits 3 px right of the boxes.
        let label = warp_apply(&truth, &DisplacementField::constant(128, 128, -3.0, 0.0)).unwrap();
        let boxes: Vec<TreeBox> = trees
            .iter()
            .map(|&(x, y)| TreeBox::new(x - 8.0, y - 8.0, x + 8.0, y + 8.0).unwrap())
            .collect();
        let (f, d) = local_align(&label, &boxes, &LocalAlignParams::default()).unwrap();
        assert!(d.converged, "{d:?}");
        let (dx, dy) = f.at(64, 64);
        assert!((dx - 3.0).abs() < 1.0 && dy.abs() < 0.5, "({dx}, {dy})");
    }
}
