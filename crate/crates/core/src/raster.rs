//! Raster containers and the numeric kernels shared by every stage.
//!
//! Pixel `(x, y)` is column `x`, row `y`; continuous coordinates put pixel
//! centers on integers. All convolutions replicate edges and propagate nodata
//! pessimistically: any nodata pixel inside a kernel support makes the output
//! pixel nodata.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-band raster of heights in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    pixel_size: f64,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl Grid {
    /// Builds a grid from row-major values. Non-finite values become nodata.
    pub fn new(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Self::with_mask(width, height, pixel_size, values, valid)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        pixel_size: f64,
        mut values: Vec<f64>,
        mut valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty raster {width}x{height}")));
        }
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values / {} mask entries for a {width}x{height} raster",
                values.len(),
                valid.len()
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::Parameter(format!("pixel size {pixel_size} must be > 0")));
        }
        for (v, ok) in values.iter_mut().zip(valid.iter_mut()) {
            if !v.is_finite() {
                *ok = false;
            }
            if !*ok {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            values,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, pixel_size: f64, value: f64) -> Result<Self> {
        Self::new(width, height, pixel_size, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_size: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, pixel_size, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Raw row-major values. Nodata pixels hold 0.0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        let i = self.index(x, y);
        if value.is_finite() {
            self.values[i] = value;
            self.valid[i] = true;
        } else {
            self.values[i] = 0.0;
            self.valid[i] = false;
        }
    }

    pub fn set_nodata(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.values[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Values of all valid pixels in row-major order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(v, ok)| ok.then_some(*v))
            .collect()
    }

    /// Applies `f` to every valid pixel; nodata stays nodata.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Grid {
        let mut out = self.clone();
        for (v, ok) in out.values.iter_mut().zip(out.valid.iter_mut()) {
            if *ok {
                *v = f(*v);
                if !v.is_finite() {
                    *v = 0.0;
                    *ok = false;
                }
            }
        }
        out
    }

    /// Marks pixels nodata wherever `mask` is false.
    pub fn masked(&self, mask: &BitMask) -> Result<Grid> {
        check_dims(self.width, self.height, mask.width(), mask.height())?;
        let mut out = self.clone();
        for (i, keep) in mask.bits().iter().enumerate() {
            if !keep {
                out.values[i] = 0.0;
                out.valid[i] = false;
            }
        }
        Ok(out)
    }

    pub fn validity_mask(&self) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            bits: self.valid.clone(),
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn and(&self, other: &BitMask) -> Result<BitMask> {
        check_dims(self.width, self.height, other.width, other.height)?;
        Ok(BitMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

/// Dense per-pixel offsets in pixels. A pixel `p` of the warped raster reads
/// the source at `p + (dx, dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::Dimension(format!(
                "field components of length {}/{} for {width}x{height}",
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite displacement".into()));
        }
        Ok(Self {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                dx.push(a);
                dy.push(b);
            }
        }
        Self {
            width,
            height,
            dx,
            dy,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    /// Splits the field into two rasters (dx, dy) for storage.
    pub fn to_grids(&self, pixel_size: f64) -> Result<(Grid, Grid)> {
        Ok((
            Grid::new(self.width, self.height, pixel_size, self.dx.clone())?,
            Grid::new(self.width, self.height, pixel_size, self.dy.clone())?,
        ))
    }

    pub fn from_grids(dx: &Grid, dy: &Grid) -> Result<Self> {
        if !dx.same_shape(dy) {
            return Err(Error::Dimension("dx/dy rasters differ in size".into()));
        }
        if dx.valid_count() != dx.len() || dy.valid_count() != dy.len() {
            return Err(Error::Parameter("displacement rasters contain nodata".into()));
        }
        Self::new(dx.width(), dx.height(), dx.values().to_vec(), dy.values().to_vec())
    }

    /// Bilinear lookup with coordinates clamped into the field.
    pub fn sample_clamped(&self, x: f64, y: f64) -> (f64, f64) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, fx) = split_coord(xc, self.width);
        let (y0, fy) = split_coord(yc, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let lerp = |c: &[f64]| {
            let a = c[y0 * self.width + x0];
            let b = c[y0 * self.width + x1];
            let d = c[y1 * self.width + x0];
            let e = c[y1 * self.width + x1];
            let top = a + fx * (b - a);
            let bottom = d + fx * (e - d);
            top + fy * (bottom - top)
        };
        (lerp(&self.dx), lerp(&self.dy))
    }
}

/// Height scaling applied before the losses see a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    pub height_divisor: f64,
    pub max_height: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            height_divisor: 8.0,
            max_height: 96.0,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_divisor > 0.0) || !(self.max_height > 0.0) {
            return Err(Error::Parameter(format!(
                "normalization needs positive divisor and ceiling, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Meters to normalized units: `min(h, max_height) / height_divisor`.
    pub fn normalize(&self, g: &Grid) -> Grid {
        g.map(|v| v.min(self.max_height) / self.height_divisor)
    }
}

pub(crate) fn check_dims(w0: usize, h0: usize, w1: usize, h1: usize) -> Result<()> {
    if w0 != w1 || h0 != h1 {
        return Err(Error::Dimension(format!("{w0}x{h0} vs {w1}x{h1}")));
    }
    Ok(())
}

/// Integer base and fractional part of a coordinate already inside
/// `[0, n - 1]`; the base never exceeds `n - 2` so the right neighbour exists.
#[inline]
fn split_coord(c: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let base = (c.floor() as usize).min(n - 2);
    (base, c - base as f64)
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Horizontal and vertical derivatives with the unnormalized 3x3 Sobel
/// kernels. `gx` grows with increasing column, `gy` with increasing row.
pub fn sobel_gradients(g: &Grid) -> Result<(Grid, Grid)> {
    let (w, h) = (g.width, g.height);
    if w < 3 || h < 3 {
        return Err(Error::Dimension(format!("Sobel needs at least 3x3, got {w}x{h}")));
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut valid = vec![true; w * h];
    for y in 0..h {
        let ym = clamp_index(y as isize - 1, h);
        let yp = clamp_index(y as isize + 1, h);
        for x in 0..w {
            let xm = clamp_index(x as isize - 1, w);
            let xp = clamp_index(x as isize + 1, w);
            let i = y * w + x;
            let support = [ym, y, yp]
                .iter()
                .all(|&yy| [xm, x, xp].iter().all(|&xx| g.valid[yy * w + xx]));
            if !support {
                valid[i] = false;
                continue;
            }
            let v = |xx: usize, yy: usize| g.values[yy * w + xx];
            // Differences first: constants cancel exactly.
            gx[i] = (v(xp, ym) - v(xm, ym)) + 2.0 * (v(xp, y) - v(xm, y)) + (v(xp, yp) - v(xm, yp));
            gy[i] = (v(xm, yp) - v(xm, ym)) + 2.0 * (v(x, yp) - v(x, ym)) + (v(xp, yp) - v(xp, ym));
        }
    }
    Ok((
        Grid::with_mask(w, h, g.pixel_size, gx, valid.clone())?,
        Grid::with_mask(w, h, g.pixel_size, gy, valid)?,
    ))
}

/// Euclidean norm of a gradient pair.
pub fn gradient_magnitude(gx: &Grid, gy: &Grid) -> Result<Grid> {
    check_dims(gx.width, gx.height, gy.width, gy.height)?;
    let values = gx
        .values
        .iter()
        .zip(&gy.values)
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let valid = gx.valid.iter().zip(&gy.valid).map(|(a, b)| *a && *b).collect();
    Grid::with_mask(gx.width, gx.height, gx.pixel_size, values, valid)
}

/// Bilinear interpolation at `(x, y)`. Returns `Ok(None)` when a neighbour
/// that carries non-zero weight is nodata.
pub fn bilinear_sample(g: &Grid, x: f64, y: f64) -> Result<Option<f64>> {
    let (w, h) = (g.width, g.height);
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: w,
            height: h,
        });
    }
    Ok(bilinear_unchecked(g, x, y))
}

#[inline]
fn bilinear_unchecked(g: &Grid, x: f64, y: f64) -> Option<f64> {
    let (x0, fx) = split_coord(x, g.width);
    let (y0, fy) = split_coord(y, g.height);
    let w = g.width;
    let mut acc = 0.0;
    for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let i = yy * w + xx;
            if !g.valid[i] {
                return None;
            }
            acc += wy * wx * g.values[i];
        }
    }
    Some(acc)
}

/// `out(x, y) = g(x + dx, y + dy)`, nodata where the sample leaves the grid.
pub fn warp_apply(g: &Grid, d: &DisplacementField) -> Result<Grid> {
    check_dims(g.width, g.height, d.width, d.height)?;
    let (w, h) = (g.width, g.height);
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (d.dx[i], d.dy[i]);
            if dx == 0.0 && dy == 0.0 {
                values[i] = g.values[i];
                valid[i] = g.valid[i];
                continue;
            }
            let sx = x as f64 + dx;
            let sy = y as f64 + dy;
            if sx < 0.0 || sy < 0.0 || sx > xmax || sy > ymax {
                continue;
            }
            if let Some(v) = bilinear_unchecked(g, sx, sy) {
                values[i] = v;
                valid[i] = true;
            }
        }
    }
    Grid::with_mask(w, h, g.pixel_size, values, valid)
}

/// `d'(p) = d(p) + alpha * u(p + d(p))`, with `u` sampled bilinearly and
/// lookups outside the field clamped to the nearest edge sample.
pub fn compose_displacement(
    d: &DisplacementField,
    u: &DisplacementField,
    alpha: f64,
) -> Result<DisplacementField> {
    check_dims(d.width, d.height, u.width, u.height)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha {alpha} outside (0, 1]")));
    }
    let mut out = d.clone();
    for y in 0..d.height {
        for x in 0..d.width {
            let i = y * d.width + x;
            let (ux, uy) = u.sample_clamped(x as f64 + d.dx[i], y as f64 + d.dy[i]);
            out.dx[i] += alpha * ux;
            out.dy[i] += alpha * uy;
        }
    }
    Ok(out)
}

/// Area average over `factor x factor` blocks of valid pixels. Dimensions not
/// divisible by `factor` are padded by edge replication.
pub fn downsample(g: &Grid, factor: usize) -> Result<Grid> {
    if factor < 1 {
        return Err(Error::Parameter("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let ow = g.width.div_ceil(factor);
    let oh = g.height.div_ceil(factor);
    let mut values = vec![0.0; ow * oh];
    let mut valid = vec![false; ow * oh];
    for by in 0..oh {
        for bx in 0..ow {
            // deviations from the first valid value keep constant blocks exact
            let mut anchor = None;
            let mut sum = 0.0;
            let mut n = 0usize;
            for dy in 0..factor {
                let y = (by * factor + dy).min(g.height - 1);
                for dx in 0..factor {
                    let x = (bx * factor + dx).min(g.width - 1);
                    let i = y * g.width + x;
                    if g.valid[i] {
                        let a = *anchor.get_or_insert(g.values[i]);
                        sum += g.values[i] - a;
                        n += 1;
                    }
                }
            }
            if let Some(a) = anchor {
                values[by * ow + bx] = a + sum / n as f64;
                valid[by * ow + bx] = true;
            }
        }
    }
    Grid::with_mask(ow, oh, g.pixel_size * factor as f64, values, valid)
}

/// Block-wise OR of a mask, matching [`downsample`]'s block layout.
pub fn downsample_mask(m: &BitMask, factor: usize) -> Result<BitMask> {
    if factor < 1 {
        return Err(Error::Parameter("downsample factor must be >= 1".into()));
    }
    let ow = m.width.div_ceil(factor);
    let oh = m.height.div_ceil(factor);
    Ok(BitMask::from_fn(ow, oh, |bx, by| {
        (0..factor).any(|dy| {
            let y = (by * factor + dy).min(m.height - 1);
            (0..factor).any(|dx| {
                let x = (bx * factor + dx).min(m.width - 1);
                m.get(x, y)
            })
        })
    }))
}

/// Integer translation: `out(p) = g(p + shift)`; pixels reading outside the
/// source become nodata.
pub fn translate(g: &Grid, shift: (i32, i32)) -> Grid {
    let (w, h) = (g.width as i64, g.height as i64);
    let mut values = vec![0.0; g.len()];
    let mut valid = vec![false; g.len()];
    for y in 0..h {
        let sy = y + shift.1 as i64;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = x + shift.0 as i64;
            if sx < 0 || sx >= w {
                continue;
            }
            let src = (sy * w + sx) as usize;
            let dst = (y * w + x) as usize;
            values[dst] = g.values[src];
            valid[dst] = g.valid[src];
        }
    }
    Grid {
        width: g.width,
        height: g.height,
        pixel_size: g.pixel_size,
        values,
        valid,
    }
}

/// Pooling reduction used by the range operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pool {
    Max,
    Min,
    /// Temperature-weighted softmax average (`exp(t * v)` weights).
    SoftMax(f64),
    /// Temperature-weighted softmin average (`exp(-t * v)` weights).
    SoftMin(f64),
}

/// Sliding `window x window` pooling with edge replication; nodata inside the
/// support yields nodata.
pub fn pool(g: &Grid, window: usize, op: Pool) -> Result<Grid> {
    if window < 1 || window.is_multiple_of(2) {
        return Err(Error::Parameter(format!("pool window {window} must be odd")));
    }
    let r = (window / 2) as isize;
    let (w, h) = (g.width, g.height);
    let mut values = vec![0.0; w * h];
    let mut valid = vec![true; w * h];
    let mut buf = Vec::with_capacity(window * window);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            let mut ok = true;
            'support: for dy in -r..=r {
                let yy = clamp_index(y as isize + dy, h);
                for dx in -r..=r {
                    let xx = clamp_index(x as isize + dx, w);
                    let i = yy * w + xx;
                    if !g.valid[i] {
                        ok = false;
                        break 'support;
                    }
                    buf.push(g.values[i]);
                }
            }
            let i = y * w + x;
            if !ok {
                valid[i] = false;
                continue;
            }
            values[i] = reduce(&buf, op);
        }
    }
    Grid::with_mask(w, h, g.pixel_size, values, valid)
}

fn reduce(buf: &[f64], op: Pool) -> f64 {
    match op {
        Pool::Max => buf.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Pool::Min => buf.iter().copied().fold(f64::INFINITY, f64::min),
        Pool::SoftMax(t) => soft_average(buf, t),
        Pool::SoftMin(t) => soft_average(buf, -t),
    }
}

/// `sum v * exp(t v) / sum exp(t v)`, shifted by the extreme for stability.
fn soft_average(buf: &[f64], t: f64) -> f64 {
    let pivot = if t >= 0.0 {
        buf.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        buf.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for &v in buf {
        let e = (t * (v - pivot)).exp();
        num += v * e;
        den += e;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, v: &[f64]) -> Grid {
        Grid::new(w, h, 1.0, v.to_vec()).unwrap()
    }

    #[test]
    fn sobel_constant_is_zero() {
        let g = Grid::filled(6, 5, 1.0, 5.0).unwrap();
        let (gx, gy) = sobel_gradients(&g).unwrap();
        assert!(gx.values().iter().all(|v| *v == 0.0));
        assert!(gy.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobel_ramps() {
        let col = Grid::from_fn(7, 6, 1.0, |x, _| x as f64).unwrap();
        let (gx, gy) = sobel_gradients(&col).unwrap();
        for y in 1..5 {
            for x in 1..6 {
                assert_eq!(gx.get(x, y), Some(8.0));
                assert_eq!(gy.get(x, y), Some(0.0));
            }
        }
        let row = Grid::from_fn(7, 6, 1.0, |_, y| y as f64).unwrap();
        let (gx, gy) = sobel_gradients(&row).unwrap();
        for y in 1..5 {
            for x in 1..6 {
                assert_eq!(gy.get(x, y), Some(8.0));
                assert_eq!(gx.get(x, y), Some(0.0));
            }
        }
    }

    #[test]
    fn sobel_rejects_small_and_propagates_nodata() {
        let g = Grid::filled(2, 5, 1.0, 1.0).unwrap();
        assert!(matches!(sobel_gradients(&g), Err(Error::Dimension(_))));

        let mut g = Grid::filled(7, 7, 1.0, 1.0).unwrap();
        g.set_nodata(3, 3);
        let (gx, _) = sobel_gradients(&g).unwrap();
        for y in 0..7usize {
            for x in 0..7usize {
                let near = x.abs_diff(3usize) <= 1 && y.abs_diff(3usize) <= 1;
                assert_eq!(gx.is_valid(x, y), !near, "({x},{y})");
            }
        }
    }

    #[test]
    fn bilinear_examples() {
        let g = grid(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(bilinear_sample(&g, 0.5, 0.5).unwrap(), Some(1.5));
        assert_eq!(bilinear_sample(&g, 1.0, 0.0).unwrap(), Some(1.0));
        assert_eq!(bilinear_sample(&g, 1.0, 1.0).unwrap(), Some(3.0));
        assert!(matches!(
            bilinear_sample(&g, 1.5, 0.0),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn bilinear_nodata_neighbour() {
        let mut g = grid(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        g.set_nodata(1, 1);
        assert_eq!(bilinear_sample(&g, 0.5, 0.5).unwrap(), None);
        // Zero-weight neighbours do not poison node samples.
        assert_eq!(bilinear_sample(&g, 0.0, 0.0).unwrap(), Some(0.0));
    }

    #[test]
    fn warp_zero_field_is_identity() {
        let g = Grid::from_fn(5, 4, 0.6, |x, y| (x * 3 + y) as f64 * 0.37).unwrap();
        let out = warp_apply(&g, &DisplacementField::zeros(5, 4)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn warp_constant_shift_and_back() {
        let g = Grid::from_fn(5, 3, 1.0, |x, y| (10 * y + x) as f64).unwrap();
        let shifted = warp_apply(&g, &DisplacementField::constant(5, 3, 1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(shifted.get(x, y), g.get(x + 1, y));
            }
            assert_eq!(shifted.get(4, y), None);
        }
        let back = warp_apply(&shifted, &DisplacementField::constant(5, 3, -1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 1..4 {
                assert_eq!(back.get(x, y), g.get(x, y));
            }
        }
    }

    #[test]
    fn warp_dimension_mismatch() {
        let g = Grid::filled(4, 4, 1.0, 0.0).unwrap();
        assert!(matches!(
            warp_apply(&g, &DisplacementField::zeros(3, 4)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn compose_constant_fields() {
        let zero = DisplacementField::zeros(6, 5);
        let u = DisplacementField::constant(6, 5, 2.0, 0.0);
        let c = compose_displacement(&zero, &u, 1.0).unwrap();
        assert!(c.dx().iter().all(|v| *v == 2.0) && c.dy().iter().all(|v| *v == 0.0));
        let c = compose_displacement(&zero, &u, 0.5).unwrap();
        assert!(c.dx().iter().all(|v| *v == 1.0));
        let d = DisplacementField::constant(6, 5, 1.0, 0.0);
        let u = DisplacementField::constant(6, 5, 1.0, 0.0);
        let c = compose_displacement(&d, &u, 1.0).unwrap();
        assert!(c.dx().iter().all(|v| *v == 2.0));
        assert!(compose_displacement(&d, &u, 0.0).is_err());
        assert!(compose_displacement(&d, &DisplacementField::zeros(5, 5), 1.0).is_err());
    }

    #[test]
    fn downsample_examples() {
        let g = grid(2, 2, &[0.0, 2.0, 4.0, 6.0]);
        let d = downsample(&g, 2).unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        assert_eq!(d.get(0, 0), Some(3.0));

        let mut g = grid(2, 2, &[0.0, 2.0, 4.0, 99.0]);
        g.set_nodata(1, 1);
        assert_eq!(downsample(&g, 2).unwrap().get(0, 0), Some(2.0));

        let c = Grid::filled(8, 8, 1.0, 7.25).unwrap();
        let d = downsample(&c, 4).unwrap();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert!(d.values().iter().all(|v| *v == 7.25));

        assert!(downsample(&c, 0).is_err());
    }

    #[test]
    fn downsample_pads_by_replication() {
        let g = Grid::from_fn(5, 3, 1.0, |x, _| x as f64).unwrap();
        let d = downsample(&g, 2).unwrap();
        assert_eq!((d.width(), d.height()), (3, 2));
        assert_eq!(d.get(2, 0), Some(4.0));
    }

    #[test]
    fn translate_reads_shifted_source() {
        let g = Grid::from_fn(4, 4, 1.0, |x, y| (10 * y + x) as f64).unwrap();
        let t = translate(&g, (1, -1));
        assert_eq!(t.get(0, 1), g.get(1, 0));
        assert_eq!(t.get(0, 0), None);
        assert_eq!(t.get(3, 2), None);
    }

    #[test]
    fn hard_and_soft_pool() {
        let g = Grid::from_fn(5, 5, 1.0, |x, y| (x + 5 * y) as f64).unwrap();
        let mx = pool(&g, 3, Pool::Max).unwrap();
        let mn = pool(&g, 3, Pool::Min).unwrap();
        assert_eq!(mx.get(2, 2), Some(18.0));
        assert_eq!(mn.get(2, 2), Some(6.0));
        assert_eq!(mx.get(0, 0), Some(6.0));
        let smx = pool(&g, 3, Pool::SoftMax(1e4)).unwrap();
        assert!((smx.get(2, 2).unwrap() - 18.0).abs() < 1e-9);
        let smn = pool(&g, 3, Pool::SoftMin(1e4)).unwrap();
        assert!((smn.get(2, 2).unwrap() - 6.0).abs() < 1e-9);
        assert!(pool(&g, 4, Pool::Max).is_err());
    }

    #[test]
    fn normalization_scales_and_caps() {
        let g = grid(3, 1, &[8.0, 96.0, 120.0]);
        let n = NormalizationConfig::default().normalize(&g);
        assert_eq!(n.values(), &[1.0, 12.0, 12.0]);
    }
}
