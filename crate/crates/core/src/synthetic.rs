//! Synthetic forest scenes with known shifts and warps, for tests and
//! benchmarks.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::formats::write_ras1;
use crate::local_align::TreeBox;
use crate::raster::{translate, warp_apply, DisplacementField, Grid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    /// Spacing of the jittered tree lattice, in pixels.
    pub spacing: f64,
    pub jitter: f64,
    pub heights: (f64, f64),
    pub sigmas: (f64, f64),
    /// Half side of the square box drawn around each tree.
    pub box_half: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            pixel_size: 0.6,
            spacing: 20.0,
            jitter: 3.0,
            heights: (12.0, 38.0),
            sigmas: (2.2, 3.2),
            box_half: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tree {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub chm: Grid,
    pub trees: Vec<Tree>,
    pub boxes: Vec<TreeBox>,
}

/// Gaussian crowns on a jittered lattice; overlapping crowns take the max.
pub fn forest(params: &ForestParams, rng: &mut ChaCha8Rng) -> Forest {
    let mut trees = Vec::new();
    let s = params.spacing;
    let mut y = s / 2.0;
    while y < params.height as f64 {
        let mut x = s / 2.0;
        while x < params.width as f64 {
            trees.push(Tree {
                x: x + rng.gen_range(-params.jitter..=params.jitter),
                y: y + rng.gen_range(-params.jitter..=params.jitter),
                height: rng.gen_range(params.heights.0..params.heights.1),
                sigma: rng.gen_range(params.sigmas.0..params.sigmas.1),
            });
            x += s;
        }
        y += s;
    }
    let (w, h) = (params.width, params.height);
    let mut values = vec![0.0f64; w * h];
    for t in &trees {
        let r = 4.0 * t.sigma;
        let x0 = (t.x - r).floor().max(0.0) as usize;
        let y0 = (t.y - r).floor().max(0.0) as usize;
        let x1 = ((t.x + r).ceil() as usize).min(w - 1);
        let y1 = ((t.y + r).ceil() as usize).min(h - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let d2 = (px as f64 - t.x).powi(2) + (py as f64 - t.y).powi(2);
                let v = t.height * (-d2 / (2.0 * t.sigma * t.sigma)).exp();
                let cell = &mut values[py * w + px];
                *cell = cell.max(v);
            }
        }
    }
    let chm = Grid::new(w, h, params.pixel_size, values).expect("dimensions match");
    let b = params.box_half;
    let boxes = trees
        .iter()
        .filter_map(|t| TreeBox::new(t.x - b, t.y - b, t.x + b, t.y + b).ok())
        .collect();
    Forest { chm, trees, boxes }
}

/// Smooth field made of two sinusoid modes per component, scaled so the
/// largest displacement on the grid is `max_displacement`.
pub fn smooth_field(
    width: usize,
    height: usize,
    max_displacement: f64,
    rng: &mut ChaCha8Rng,
) -> DisplacementField {
    let extent = width.max(height) as f64;
    let mut modes = Vec::new();
    for _ in 0..4 {
        modes.push((
            rng.gen_range(1.2..2.5) * extent,
            rng.gen_range(1.2..2.5) * extent,
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.5..1.0),
        ));
    }
    let eval = |m: &[(f64, f64, f64, f64, f64)], x: f64, y: f64| -> f64 {
        m.iter()
            .map(|(lx, ly, px, py, a)| a * (TAU * x / lx + px).sin() * (TAU * y / ly + py).cos())
            .sum()
    };
    let raw = DisplacementField::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        (eval(&modes[..2], x, y), eval(&modes[2..], x, y))
    });
    let peak = raw
        .dx()
        .iter()
        .zip(raw.dy())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let k = if peak > 0.0 { max_displacement / peak } else { 0.0 };
    let dx = raw.dx().iter().map(|v| v * k).collect();
    let dy = raw.dy().iter().map(|v| v * k).collect();
    DisplacementField::new(width, height, dx, dy).expect("dimensions match")
}

/// A prediction/label pair: the label is the forest warped by `field`
/// (`label(p) = forest(p + field(p))`) and then translated so that
/// `global_align` should report `shift`.
#[derive(Debug, Clone)]
pub struct TilePair {
    pub pred: Grid,
    pub label: Grid,
    pub boxes: Vec<TreeBox>,
    pub shift: (i32, i32),
    pub field: DisplacementField,
}

pub fn tile_pair(
    params: &ForestParams,
    shift: (i32, i32),
    max_warp: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TilePair> {
    let f = forest(params, rng);
    let field = if max_warp > 0.0 {
        smooth_field(params.width, params.height, max_warp, rng)
    } else {
        DisplacementField::zeros(params.width, params.height)
    };
    let warped = warp_apply(&f.chm, &field)?;
    // translate reads label(p) = warped(p - shift), so shifting back by
    // `shift` restores the warped scene.
    let label = translate(&warped, (-shift.0, -shift.1));
    Ok(TilePair {
        pred: f.chm,
        label,
        boxes: f.boxes,
        shift,
        field,
    })
}

/// Writes `pred/<id>.ras`, `label/<id>.ras` and `boxes/<id>.csv` under `root`.
pub fn write_tile(root: &Path, id: &str, pair: &TilePair) -> Result<()> {
    for dir in ["pred", "label", "boxes"] {
        std::fs::create_dir_all(root.join(dir))?;
    }
    write_ras1(root.join("pred").join(format!("{id}.ras")), &pair.pred)?;
    write_ras1(root.join("label").join(format!("{id}.ras")), &pair.label)?;
    let mut w = csv::Writer::from_path(root.join("boxes").join(format!("{id}.csv")))?;
    for b in &pair.boxes {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}
