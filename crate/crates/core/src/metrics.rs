//! Evaluation metrics: pixel error statistics, block-R², edge error,
//! crop percentile pairs and footprint comparison against point references.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_dims, sobel_gradients, BitMask, Grid};
use crate::stats::{mean, pairwise_sum, percentile, r_squared};

/// Heights at or above this many meters count as "high" for `high_mbe`.
pub const HIGH_HEIGHT_M: f64 = 30.0;

/// Divisor applied to heights before Sobel magnitudes in [`edge_error`].
pub const EDGE_HEIGHT_DIVISOR: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub mae: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Mean error over pixels whose target is >= 30 m; `None` if there are none.
    pub high_mbe: Option<f64>,
    pub n_valid: usize,
    pub n_high: usize,
}

fn paired_indices(pred: &Grid, target: &Grid, mask: Option<&BitMask>) -> Result<Vec<usize>> {
    check_dims(pred.width(), pred.height(), target.width(), target.height())?;
    if let Some(m) = mask {
        check_dims(pred.width(), pred.height(), m.width(), m.height())?;
    }
    Ok((0..pred.len())
        .filter(|&i| {
            pred.validity()[i] && target.validity()[i] && mask.is_none_or(|m| m.bits()[i])
        })
        .collect())
}

pub fn pixel_stats(pred: &Grid, target: &Grid, mask: Option<&BitMask>) -> Result<PixelStats> {
    let idx = paired_indices(pred, target, mask)?;
    if idx.is_empty() {
        return Err(Error::Undefined("no valid pixels"));
    }
    let (p, t) = (pred.values(), target.values());
    let d: Vec<f64> = idx.iter().map(|&i| p[i] - t[i]).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let high: Vec<f64> = idx
        .iter()
        .filter(|&&i| t[i] >= HIGH_HEIGHT_M)
        .map(|&i| p[i] - t[i])
        .collect();
    let n = d.len() as f64;
    Ok(PixelStats {
        mae: pairwise_sum(&abs) / n,
        bias: pairwise_sum(&d) / n,
        rmse: (pairwise_sum(&sq) / n).sqrt(),
        high_mbe: mean(&high),
        n_valid: d.len(),
        n_high: high.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStatistic {
    Mean,
    P95,
}

impl std::str::FromStr for BlockStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "p95" => Ok(Self::P95),
            other => Err(Error::Parameter(format!("unknown block statistic `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    pub block_size: usize,
    pub statistic: BlockStatistic,
}

impl Default for BlockStat {
    fn default() -> Self {
        Self {
            block_size: 50,
            statistic: BlockStatistic::Mean,
        }
    }
}

impl BlockStatistic {
    fn apply(self, values: &[f64]) -> Option<f64> {
        match self {
            Self::Mean => mean(values),
            Self::P95 => percentile(values, 95.0),
        }
    }
}

/// Valid values of every full, non-overlapping `block x block` tile, row-major.
fn blocks(g: &Grid, block: usize) -> Vec<Vec<f64>> {
    let (bw, bh) = (g.width() / block, g.height() / block);
    (0..bw * bh)
        .into_par_iter()
        .map(|b| {
            let (x0, y0) = ((b % bw) * block, (b / bw) * block);
            let mut out = Vec::with_capacity(block * block);
            for y in y0..y0 + block {
                for x in x0..x0 + block {
                    if let Some(v) = g.get(x, y) {
                        out.push(v);
                    }
                }
            }
            out
        })
        .collect()
}

fn check_block(g: &Grid, block: usize) -> Result<()> {
    if block < 2 {
        return Err(Error::Parameter(format!("block size {block} must be >= 2")));
    }
    if g.width() < block || g.height() < block {
        return Err(Error::Dimension(format!(
            "{}x{} raster smaller than block {block}",
            g.width(),
            g.height()
        )));
    }
    Ok(())
}

/// Per-block statistic pairs `(target, pred)`; blocks with no valid pixel
/// in either raster are skipped.
pub fn block_stat_pairs(pred: &Grid, target: &Grid, cfg: &BlockStat) -> Result<Vec<(f64, f64)>> {
    check_dims(pred.width(), pred.height(), target.width(), target.height())?;
    check_block(pred, cfg.block_size)?;
    let pb = blocks(pred, cfg.block_size);
    let tb = blocks(target, cfg.block_size);
    Ok(tb
        .iter()
        .zip(&pb)
        .filter_map(|(t, p)| Some((cfg.statistic.apply(t)?, cfg.statistic.apply(p)?)))
        .collect())
}

/// Coefficient of determination over block statistics (not clamped below).
pub fn block_r2(pred: &Grid, target: &Grid, cfg: &BlockStat) -> Result<f64> {
    let pairs = block_stat_pairs(pred, target, cfg)?;
    let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    r_squared(&t, &p).ok_or(Error::Undefined("target block statistics have zero variance"))
}

/// Mean absolute difference of Sobel magnitudes on heights divided by 8.
pub fn edge_error(pred: &Grid, target: &Grid, mask: Option<&BitMask>) -> Result<f64> {
    let idx = paired_indices(pred, target, mask)?;
    let magnitude = |g: &Grid| -> Result<Grid> {
        let (gx, gy) = sobel_gradients(&g.map(|v| v / EDGE_HEIGHT_DIVISOR))?;
        let values = gx.values().iter().zip(gy.values()).map(|(a, b)| a.hypot(*b)).collect();
        Grid::with_mask(g.width(), g.height(), g.pixel_size(), values, gx.validity().to_vec())
    };
    let mp = magnitude(pred)?;
    let mt = magnitude(target)?;
    let diffs: Vec<f64> = idx
        .into_iter()
        .filter(|&i| mp.validity()[i] && mt.validity()[i])
        .map(|i| (mp.values()[i] - mt.values()[i]).abs())
        .collect();
    mean(&diffs).ok_or(Error::Undefined("no pixel with a defined gradient"))
}

/// `(target percentile, pred percentile)` per full non-overlapping block.
pub fn crop_percentile_pairs(
    pred: &Grid,
    target: &Grid,
    block: usize,
    p: f64,
) -> Result<Vec<(f64, f64)>> {
    check_dims(pred.width(), pred.height(), target.width(), target.height())?;
    check_block(pred, block)?;
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Parameter(format!("percentile {p} outside [0, 100]")));
    }
    let pb = blocks(pred, block);
    let tb = blocks(target, block);
    Ok(tb
        .iter()
        .zip(&pb)
        .filter_map(|(t, q)| Some((percentile(t, p)?, percentile(q, p)?)))
        .collect())
}

/// A point reference in pixel coordinates (pixel centers at integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintRef {
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintPair {
    /// Position of the reference in the input list.
    pub index: usize,
    pub reference: f64,
    pub chm: f64,
    pub n_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintComparison {
    /// `None` when the reference heights have zero variance.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub pairs: Vec<FootprintPair>,
    /// References whose footprint held no valid CHM pixel.
    pub skipped: usize,
}

/// Percentile of CHM pixels whose centers lie within `radius_m` (inclusive)
/// of each reference, compared against the reference heights.
pub fn footprint_compare(
    chm: &Grid,
    refs: &[FootprintRef],
    radius_m: f64,
    p: f64,
) -> Result<FootprintComparison> {
    if !(radius_m > 0.0) {
        return Err(Error::Parameter(format!("radius {radius_m} must be > 0")));
    }
    let r = radius_m / chm.pixel_size();
    if r < 1.0 {
        return Err(Error::Parameter(format!(
            "radius {radius_m} m is below one pixel ({} m)",
            chm.pixel_size()
        )));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Parameter(format!("percentile {p} outside [0, 100]")));
    }
    let results: Vec<Option<FootprintPair>> = refs
        .par_iter()
        .enumerate()
        .map(|(index, f)| {
            let values = disc_values(chm, f.x, f.y, r);
            Some(FootprintPair {
                index,
                reference: f.height,
                chm: percentile(&values, p)?,
                n_pixels: values.len(),
            })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let pairs: Vec<FootprintPair> = results.into_iter().flatten().collect();
    if pairs.is_empty() {
        return Err(Error::Undefined("no footprint contains a valid pixel"));
    }
    let reference: Vec<f64> = pairs.iter().map(|q| q.reference).collect();
    let estimate: Vec<f64> = pairs.iter().map(|q| q.chm).collect();
    let abs: Vec<f64> = pairs.iter().map(|q| (q.chm - q.reference).abs()).collect();
    let sq: Vec<f64> = abs.iter().map(|v| v * v).collect();
    let n = pairs.len() as f64;
    Ok(FootprintComparison {
        r2: r_squared(&reference, &estimate),
        mae: pairwise_sum(&abs) / n,
        rmse: (pairwise_sum(&sq) / n).sqrt(),
        pairs,
        skipped,
    })
}

fn disc_values(g: &Grid, cx: f64, cy: f64, r: f64) -> Vec<f64> {
    let x0 = (cx - r).ceil().max(0.0);
    let y0 = (cy - r).ceil().max(0.0);
    let x1 = (cx + r).floor().min(g.width() as f64 - 1.0);
    let y1 = (cy + r).floor().min(g.height() as f64 - 1.0);
    let mut out = Vec::new();
    if x1 < x0 || y1 < y0 {
        return out;
    }
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy <= r * r {
                if let Some(v) = g.get(x, y) {
                    out.push(v);
                }
            }
        }
    }
    out
}
