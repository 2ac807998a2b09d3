//! Rigid per-tile translation between a weak-model prediction and a CHM
//! label: peak masks are cross-correlated with an FFT, the best candidate is
//! refined by a small grid search, and the shift is only kept when it beats
//! the zero-shift baseline on IoU or height lift.

use std::cmp::Ordering;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_dims, translate, BitMask, Grid};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    /// Absolute height floor in meters.
    pub min_height: f64,
    /// Per-tile percentile used as a second floor.
    pub percentile_floor: f64,
    /// Odd suppression window in pixels.
    pub nms_window: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            min_height: 5.0,
            percentile_floor: 80.0,
            nms_window: 11,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakSet {
    pub points: Vec<(usize, usize)>,
    pub heights: Vec<f64>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PeakDetection {
    pub peaks: PeakSet,
    /// Pixels at or above `threshold`.
    pub mask: BitMask,
    /// `None` for an all-nodata tile.
    pub threshold: Option<f64>,
}

/// Thresholds the CHM at `max(min_height, percentile)` and keeps local maxima
/// that survive greedy non-maximum suppression: accepted peaks are at least
/// `nms_window` pixels apart in Chebyshev distance.
pub fn peak_detect(chm: &Grid, params: &PeakParams) -> Result<PeakDetection> {
    let nms = params.nms_window;
    if nms < 3 || nms.is_multiple_of(2) {
        return Err(Error::Parameter(format!("nms_window {nms} must be odd and >= 3")));
    }
    let (w, h) = (chm.width(), chm.height());
    let valid = chm.valid_values();
    let Some(pct) = stats::percentile(&valid, params.percentile_floor) else {
        return Ok(PeakDetection {
            peaks: PeakSet::default(),
            mask: BitMask::filled(w, h, false),
            threshold: None,
        });
    };
    let threshold = params.min_height.max(pct);
    let mask = BitMask::from_fn(w, h, |x, y| chm.get(x, y).is_some_and(|v| v >= threshold));

    let r = nms / 2;
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let v = chm.values()[chm.index(x, y)];
            let is_max = (y.saturating_sub(r)..(y + r + 1).min(h)).all(|yy| {
                (x.saturating_sub(r)..(x + r + 1).min(w))
                    .all(|xx| chm.get(xx, yy).is_none_or(|n| n <= v))
            });
            if is_max {
                candidates.push((x, y, v));
            }
        }
    }
    // Highest first; raster order breaks ties.
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    let mut peaks = PeakSet::default();
    for (x, y, v) in candidates {
        let clear = peaks
            .points
            .iter()
            .all(|&(px, py)| px.abs_diff(x).max(py.abs_diff(y)) >= nms);
        if clear {
            peaks.points.push((x, y));
            peaks.heights.push(v);
        }
    }
    Ok(PeakDetection {
        peaks,
        mask,
        threshold: Some(threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct XcorrShift {
    pub dx: i32,
    pub dy: i32,
    /// Number of overlapping set pixels at the winning shift.
    pub overlap: u64,
    /// Set when either mask is empty or no shift overlaps at all.
    pub degenerate: bool,
}

/// Translation `s` of `b` relative to `a` maximising
/// `sum_p a(p) * b(p + s)` over `|dx|, |dy| <= max_shift`.
///
/// The correlation surface is computed with a zero-padded FFT and rounded
/// back to integer overlap counts, so the argmax matches direct spatial
/// correlation exactly. Ties go to the smallest shift magnitude, then to the
/// lexicographically smallest `(dx, dy)`.
pub fn xcorr_shift(a: &BitMask, b: &BitMask, max_shift: usize) -> Result<XcorrShift> {
    check_dims(a.width(), a.height(), b.width(), b.height())?;
    let (w, h) = (a.width(), a.height());
    if 2 * max_shift >= w.min(h) {
        return Err(Error::Parameter(format!(
            "max_shift {max_shift} must be below half of {w}x{h}"
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(XcorrShift {
            dx: 0,
            dy: 0,
            overlap: 0,
            degenerate: true,
        });
    }
    let surface = CorrelationSurface::compute(a, b, max_shift);
    let mut best: Option<(u64, i32, i32)> = None;
    let m = max_shift as i32;
    for dy in -m..=m {
        for dx in -m..=m {
            let c = surface.at(dx, dy);
            let better = match best {
                None => true,
                Some((bc, bx, by)) => shift_order((c, dx, dy), (bc, bx, by)) == Ordering::Less,
            };
            if better {
                best = Some((c, dx, dy));
            }
        }
    }
    let (overlap, dx, dy) = best.expect("search window is never empty");
    Ok(XcorrShift {
        dx,
        dy,
        overlap,
        degenerate: overlap == 0,
    })
}

/// Ordering where `Less` means "preferred": larger count, then smaller
/// squared magnitude, then lexicographic `(dx, dy)`.
fn shift_order(a: (u64, i32, i32), b: (u64, i32, i32)) -> Ordering {
    b.0.cmp(&a.0)
        .then((a.1 * a.1 + a.2 * a.2).cmp(&(b.1 * b.1 + b.2 * b.2)))
        .then((a.1, a.2).cmp(&(b.1, b.2)))
}

struct CorrelationSurface {
    nw: usize,
    nh: usize,
    values: Vec<f64>,
}

impl CorrelationSurface {
    fn compute(a: &BitMask, b: &BitMask, max_shift: usize) -> Self {
        let nw = smooth_size(a.width() + max_shift);
        let nh = smooth_size(a.height() + max_shift);
        let mut planner = FftPlanner::<f64>::new();
        let row = planner.plan_fft_forward(nw);
        let col = planner.plan_fft_forward(nh);
        let row_inv = planner.plan_fft_inverse(nw);
        let col_inv = planner.plan_fft_inverse(nh);

        let fa = forward_2d(a, nw, nh, &row, &col);
        let fb = forward_2d(b, nw, nh, &row, &col);
        // Layout is transposed (nw rows of nh) after the forward pass.
        let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
        col_inv.process(&mut prod);
        let mut back = transpose(&prod, nh, nw);
        row_inv.process(&mut back);
        let scale = 1.0 / (nw * nh) as f64;
        Self {
            nw,
            nh,
            values: back.iter().map(|c| c.re * scale).collect(),
        }
    }

    fn at(&self, dx: i32, dy: i32) -> u64 {
        let x = dx.rem_euclid(self.nw as i32) as usize;
        let y = dy.rem_euclid(self.nh as i32) as usize;
        self.values[y * self.nw + x].round().max(0.0) as u64
    }
}

fn forward_2d(
    m: &BitMask,
    nw: usize,
    nh: usize,
    row: &Arc<dyn Fft<f64>>,
    col: &Arc<dyn Fft<f64>>,
) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); nw * nh];
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                buf[y * nw + x].re = 1.0;
            }
        }
    }
    row.process(&mut buf);
    let mut t = transpose(&buf, nw, nh);
    col.process(&mut t);
    t
}

/// Transposes a row-major `rows x cols` matrix given as (`cols` wide).
fn transpose(src: &[Complex<f64>], cols: usize, rows: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Smallest integer >= n whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k.is_multiple_of(p) {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftScore {
    pub iou: f64,
    pub lift: f64,
    /// False when no label peak could be sampled; `lift` is then 0.
    pub lift_defined: bool,
}

/// IoU of `{pred >= threshold}` against the shifted label
/// (`label(p + shift)`), and the median height lift at label peaks.
///
/// The IoU is taken over the pixels where both rasters are defined after the
/// shift. The lift at a label peak `q` is `pred(q - shift) - pred(q)`.
pub fn score_shift(
    pred: &Grid,
    label: &Grid,
    shift: (i32, i32),
    threshold: f64,
    peak_params: &PeakParams,
) -> Result<ShiftScore> {
    check_dims(pred.width(), pred.height(), label.width(), label.height())?;
    let peaks = peak_detect(label, peak_params)?.peaks;
    Ok(score_with_peaks(pred, label, shift, threshold, &peaks))
}

fn score_with_peaks(
    pred: &Grid,
    label: &Grid,
    shift: (i32, i32),
    threshold: f64,
    label_peaks: &PeakSet,
) -> ShiftScore {
    let shifted = translate(label, shift);
    let mut inter = 0u64;
    let mut union = 0u64;
    for (i, (pv, lv)) in pred.values().iter().zip(shifted.values()).enumerate() {
        if !(pred.validity()[i] && shifted.validity()[i]) {
            continue;
        }
        let a = *pv >= threshold;
        let b = *lv >= threshold;
        inter += (a && b) as u64;
        union += (a || b) as u64;
    }
    let iou = if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    };

    let (w, h) = (pred.width() as i64, pred.height() as i64);
    let deltas: Vec<f64> = label_peaks
        .points
        .iter()
        .filter_map(|&(qx, qy)| {
            let sx = qx as i64 - shift.0 as i64;
            let sy = qy as i64 - shift.1 as i64;
            if sx < 0 || sy < 0 || sx >= w || sy >= h {
                return None;
            }
            let after = pred.get(sx as usize, sy as usize)?;
            let before = pred.get(qx, qy)?;
            Some(after - before)
        })
        .collect();
    match stats::median(&deltas) {
        Some(lift) => ShiftScore {
            iou,
            lift,
            lift_defined: true,
        },
        None => ShiftScore {
            iou,
            lift: 0.0,
            lift_defined: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalAlignParams {
    pub max_shift: usize,
    pub refine_radius: usize,
    pub peaks: PeakParams,
}

impl Default for GlobalAlignParams {
    fn default() -> Self {
        Self {
            max_shift: 16,
            refine_radius: 3,
            peaks: PeakParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignResult {
    /// Shift applied to the label: the aligned label is `label(p + shift)`.
    pub shift: (i32, i32),
    pub iou_before: f64,
    pub iou_after: f64,
    pub lift: f64,
    pub accepted: bool,
    /// Best refined candidate, kept for diagnostics even when rejected.
    pub candidate: (i32, i32),
    pub degenerate: bool,
}

impl AlignResult {
    pub fn shift_magnitude(&self) -> f64 {
        (self.shift.0 as f64).hypot(self.shift.1 as f64)
    }

    fn rejected(iou_before: f64, candidate: (i32, i32), degenerate: bool) -> Self {
        Self {
            shift: (0, 0),
            iou_before,
            iou_after: iou_before,
            lift: 0.0,
            accepted: false,
            candidate,
            degenerate,
        }
    }
}

pub fn global_align(pred: &Grid, label: &Grid, params: &GlobalAlignParams) -> Result<AlignResult> {
    check_dims(pred.width(), pred.height(), label.width(), label.height())?;
    let det_pred = peak_detect(pred, &params.peaks)?;
    let det_label = peak_detect(label, &params.peaks)?;
    let Some(threshold) = det_pred.threshold else {
        return Ok(AlignResult::rejected(0.0, (0, 0), true));
    };
    let baseline = score_with_peaks(pred, label, (0, 0), threshold, &det_label.peaks);
    if det_label.peaks.is_empty() || det_pred.mask.is_empty() || det_label.mask.is_empty() {
        return Ok(AlignResult::rejected(baseline.iou, (0, 0), true));
    }

    let coarse = xcorr_shift(&det_pred.mask, &det_label.mask, params.max_shift)?;
    if coarse.degenerate {
        return Ok(AlignResult::rejected(baseline.iou, (0, 0), true));
    }
    let m = params.max_shift as i32;
    let r = params.refine_radius as i32;
    let mut best: Option<((i32, i32), ShiftScore)> = None;
    for dy in (coarse.dy - r).max(-m)..=(coarse.dy + r).min(m) {
        for dx in (coarse.dx - r).max(-m)..=(coarse.dx + r).min(m) {
            let s = score_with_peaks(pred, label, (dx, dy), threshold, &det_label.peaks);
            let better = match &best {
                None => true,
                Some((bs, bsc)) => candidate_order(((dx, dy), &s), (*bs, bsc)) == Ordering::Less,
            };
            if better {
                best = Some(((dx, dy), s));
            }
        }
    }
    let (shift, score) = best.expect("refinement window is never empty");
    let improves = score.iou > baseline.iou || score.lift > 0.0;
    if shift == (0, 0) || !improves {
        return Ok(AlignResult::rejected(baseline.iou, shift, false));
    }
    Ok(AlignResult {
        shift,
        iou_before: baseline.iou,
        iou_after: score.iou,
        lift: score.lift,
        accepted: true,
        candidate: shift,
        degenerate: false,
    })
}

/// IoU first, then lift, then smaller magnitude, then lexicographic shift.
fn candidate_order(a: ((i32, i32), &ShiftScore), b: ((i32, i32), &ShiftScore)) -> Ordering {
    let mag = |s: (i32, i32)| s.0 * s.0 + s.1 * s.1;
    b.1.iou
        .total_cmp(&a.1.iou)
        .then(b.1.lift.total_cmp(&a.1.lift))
        .then(mag(a.0).cmp(&mag(b.0)))
        .then(a.0.cmp(&b.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(w: usize, h: usize, centers: &[(f64, f64, f64)], sigma: f64) -> Grid {
        Grid::from_fn(w, h, 0.6, |x, y| {
            centers
                .iter()
                .map(|&(cx, cy, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * sigma * sigma)).exp()
                })
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn flat_tile_has_no_peaks() {
        let g = Grid::filled(32, 32, 0.6, 0.0).unwrap();
        let det = peak_detect(&g, &PeakParams::default()).unwrap();
        assert!(det.peaks.is_empty());
        assert!(det.mask.is_empty());
    }

    #[test]
    fn all_nodata_tile_is_empty_not_error() {
        let g = Grid::new(8, 8, 1.0, vec![f64::NAN; 64]).unwrap();
        let det = peak_detect(&g, &PeakParams::default()).unwrap();
        assert!(det.peaks.is_empty());
        assert_eq!(det.threshold, None);
    }

    #[test]
    fn single_bump_single_peak() {
        let g = bump(40, 40, &[(17.0, 22.0, 20.0)], 3.0);
        let det = peak_detect(&g, &PeakParams::default()).unwrap();
        assert_eq!(det.peaks.points, vec![(17, 22)]);
        assert!((det.peaks.heights[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn two_separated_bumps() {
        let g = bump(64, 40, &[(12.0, 20.0, 20.0), (40.0, 20.0, 18.0)], 3.0);
        let det = peak_detect(&g, &PeakParams::default()).unwrap();
        assert_eq!(det.peaks.points, vec![(12, 20), (40, 20)]);
    }

    #[test]
    fn even_nms_window_rejected() {
        let g = Grid::filled(8, 8, 1.0, 0.0).unwrap();
        let p = PeakParams {
            nms_window: 4,
            ..PeakParams::default()
        };
        assert!(peak_detect(&g, &p).is_err());
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(528), 540);
        assert_eq!(smooth_size(64), 64);
        assert_eq!(smooth_size(7), 8);
    }

    #[test]
    fn xcorr_identity_and_shift() {
        let a = BitMask::from_fn(32, 32, |x, y| (x * 7 + y * 13) % 11 == 0 && x > 4 && y > 4);
        let r = xcorr_shift(&a, &a, 8).unwrap();
        assert_eq!((r.dx, r.dy), (0, 0));
        // b(p) = a(p - (3, -2))
        let b = BitMask::from_fn(32, 32, |x, y| {
            let (sx, sy) = (x as i32 - 3, y as i32 + 2);
            sx >= 0 && sy >= 0 && sx < 32 && sy < 32 && a.get(sx as usize, sy as usize)
        });
        let r = xcorr_shift(&a, &b, 4).unwrap();
        assert_eq!((r.dx, r.dy), (3, -2));
    }

    #[test]
    fn xcorr_empty_is_degenerate() {
        let a = BitMask::filled(16, 16, false);
        let b = BitMask::from_fn(16, 16, |x, _| x == 3);
        let r = xcorr_shift(&a, &b, 4).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.dx, r.dy), (0, 0));
        assert!(xcorr_shift(&b, &b, 8).is_err());
    }

    #[test]
    fn score_identity_and_disjoint() {
        let g = bump(48, 48, &[(20.0, 20.0, 20.0)], 3.0);
        let s = score_shift(&g, &g, (0, 0), 10.0, &PeakParams::default()).unwrap();
        assert_eq!((s.iou, s.lift), (1.0, 0.0));
        let s = score_shift(&g, &g, (15, 0), 10.0, &PeakParams::default()).unwrap();
        assert_eq!(s.iou, 0.0);
    }

    #[test]
    fn score_prefers_true_shift() {
        let pred = bump(64, 64, &[(20.0, 30.0, 20.0), (40.0, 25.0, 15.0)], 3.0);
        let label = translate(&pred, (-5, 0)); // label(p) = pred(p - (5, 0))
        let at_true = score_shift(&pred, &label, (5, 0), 8.0, &PeakParams::default()).unwrap();
        let at_zero = score_shift(&pred, &label, (0, 0), 8.0, &PeakParams::default()).unwrap();
        assert!(at_true.iou > at_zero.iou);
        assert!(at_true.lift > 0.0);
    }

    #[test]
    fn aligned_pair_not_accepted() {
        let pred = bump(64, 64, &[(20.0, 30.0, 20.0), (44.0, 20.0, 15.0)], 3.0);
        let r = global_align(&pred, &pred, &GlobalAlignParams::default()).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.shift, (0, 0));
    }

    #[test]
    fn recovers_diagonal_shift() {
        let pred = bump(
            96,
            96,
            &[(20.0, 30.0, 20.0), (50.0, 60.0, 15.0), (70.0, 25.0, 25.0)],
            3.0,
        );
        let label = translate(&pred, (-5, -5));
        let r = global_align(&pred, &label, &GlobalAlignParams::default()).unwrap();
        assert!(r.accepted);
        assert_eq!(r.shift, (5, 5));
        assert!(r.iou_after > r.iou_before);
    }
}
