//! Hexbin scatter rendering for metric pairs.

use std::path::Path;

use anyhow::{bail, Result};
use image::{Rgb, RgbImage};

const SIZE: u32 = 480;
const MARGIN: f64 = 24.0;
/// Hexagons across the plot width.
const GRID: f64 = 40.0;

/// Pointy-top hexagon containing `(x, y)` for hexagons of circumradius `r`.
fn hex_of(x: f64, y: f64, r: f64) -> (i64, i64) {
    let q = (3f64.sqrt() / 3.0 * x - y / 3.0) / r;
    let s = (2.0 / 3.0 * y) / r;
    let (cx, cz) = (q, s);
    let cy = -cx - cz;
    let (mut rx, ry, mut rz) = (cx.round(), cy.round(), cz.round());
    let (dx, dy, dz) = ((rx - cx).abs(), (ry - cy).abs(), (rz - cz).abs());
    if dx > dy && dx > dz {
        rx = -ry - rz;
    } else if dy <= dz {
        rz = -rx - ry;
    }
    (rx as i64, rz as i64)
}

/// Blue through yellow ramp for `t` in [0, 1].
fn ramp(t: f64) -> Rgb<u8> {
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let x = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |u: f64, v: f64| (u + f * (v - u)).round() as u8;
    Rgb([mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2)])
}

/// Writes a hexbin PNG of `(x, y)` pairs on a shared square axis with the
/// `y = x` line drawn in grey. Counts are log-scaled.
pub fn hexbin(pairs: &[(f64, f64)], path: &Path) -> Result<()> {
    if pairs.is_empty() {
        bail!("nothing to plot");
    }
    let lo = pairs.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
    let mut hi = pairs.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let span = SIZE as f64 - 2.0 * MARGIN;
    let to_px = |v: f64| MARGIN + (v - lo) / (hi - lo) * span;
    let r = span / GRID / 3f64.sqrt();

    let mut counts = std::collections::HashMap::new();
    for &(x, y) in pairs {
        // image rows grow downwards
        *counts.entry(hex_of(to_px(x), SIZE as f64 - to_px(y), r)).or_insert(0u32) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(1) as f64;

    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    for py in 0..SIZE {
        for px in 0..SIZE {
            if let Some(&c) = counts.get(&hex_of(px as f64 + 0.5, py as f64 + 0.5, r)) {
                let t = if max > 1.0 { (c as f64).ln() / max.ln() } else { 1.0 };
                img.put_pixel(px, py, ramp(t));
            }
        }
    }
    let (a, b) = (MARGIN as u32, SIZE - MARGIN as u32);
    for i in a..b {
        img.put_pixel(i, SIZE - 1 - i, Rgb([120, 120, 120]));
        img.put_pixel(i, b, Rgb([0, 0, 0]));
        img.put_pixel(a, i, Rgb([0, 0, 0]));
    }
    img.save(path)?;
    Ok(())
}
