//! Reference implementations of the SiLog, Charbonnier and Patch Gradient
//! losses, the multi-scale wrapper and the curriculum that blends them.
//!
//! All losses take heights already divided by the normalization divisor.
//! The mask argument is optional; `None` means every pixel that is valid in
//! both rasters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    check_dims, downsample, downsample_mask, pool, sobel_gradients, BitMask, Grid, Pool,
};
use crate::stats::{mean, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradLossWeights {
    pub lambda_mag: f64,
    pub lambda_rng: f64,
    pub lambda_dir: f64,
}

impl Default for GradLossWeights {
    fn default() -> Self {
        Self {
            lambda_mag: 0.3,
            lambda_rng: 0.6,
            lambda_dir: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Exact max/min pooling.
    Hard,
    /// Temperature-weighted softmax/softmin pooling (differentiable).
    Soft,
}

/// How gradient vectors are turned into unit directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionGuard {
    /// `g / max(|g|, eps)`: exact unit vectors wherever `|g| >= eps`.
    Floor,
    /// `g / (|g| + eps)`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub epsilon: f64,
    pub silog_variance_weight: f64,
    pub scales: Vec<f64>,
    pub range_windows: Vec<usize>,
    pub pooling_mode: PoolingMode,
    pub soft_temperature: f64,
    pub direction_guard: DirectionGuard,
    pub grad_weights: GradLossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            silog_variance_weight: 0.85,
            scales: vec![1.0, 0.5, 0.25],
            range_windows: vec![3, 5],
            pooling_mode: PoolingMode::Soft,
            soft_temperature: 10.0,
            direction_guard: DirectionGuard::Floor,
            grad_weights: GradLossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be > 0", self.epsilon));
        }
        if !(self.silog_variance_weight >= 0.0) {
            return bad("silog_variance_weight must be >= 0".into());
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return bad(format!("scales {:?} must lie in (0, 1]", self.scales));
        }
        if self.range_windows.is_empty()
            || self.range_windows.iter().any(|k| *k < 3 || k % 2 == 0)
        {
            return bad(format!("range windows {:?} must be odd and >= 3", self.range_windows));
        }
        if !(self.soft_temperature > 0.0) {
            return bad("soft_temperature must be > 0".into());
        }
        let w = self.grad_weights;
        if [w.lambda_mag, w.lambda_rng, w.lambda_dir].iter().any(|v| !(*v >= 0.0)) {
            return bad("gradient loss weights must be >= 0".into());
        }
        Ok(())
    }
}

/// Pixels valid in both rasters and selected by the optional mask.
fn effective_mask(pred: &Grid, target: &Grid, mask: Option<&BitMask>) -> Result<Vec<bool>> {
    check_dims(pred.width(), pred.height(), target.width(), target.height())?;
    if let Some(m) = mask {
        check_dims(pred.width(), pred.height(), m.width(), m.height())?;
    }
    Ok((0..pred.len())
        .map(|i| {
            pred.validity()[i] && target.validity()[i] && mask.is_none_or(|m| m.bits()[i])
        })
        .collect())
}

/// Scale-invariant log loss:
/// `sqrt(mean(d^2) - lambda * mean(d)^2)` with `d = log(max(p, eps)) - log(max(t, eps))`.
pub fn silog(pred: &Grid, target: &Grid, mask: Option<&BitMask>, cfg: &LossConfig) -> Result<f64> {
    let m = effective_mask(pred, target, mask)?;
    let eps = cfg.epsilon;
    let d: Vec<f64> = (0..pred.len())
        .filter(|&i| m[i])
        .map(|i| pred.values()[i].max(eps).ln() - target.values()[i].max(eps).ln())
        .collect();
    let mean_d = mean(&d).ok_or(Error::LossUndefined("empty mask"))?;
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    let centered: Vec<f64> = d.iter().map(|v| (v - mean_d) * (v - mean_d)).collect();
    let mean_sq = pairwise_sum(&sq) / d.len() as f64;
    let var = pairwise_sum(&centered) / d.len() as f64;
    // mean(d^2) - l * mean(d)^2 == (1 - l) * mean(d^2) + l * var(d)
    let lambda = cfg.silog_variance_weight;
    Ok(((1.0 - lambda) * mean_sq + lambda * var).max(0.0).sqrt())
}

/// Smooth L1: `mean(sqrt(d^2 + eps^2))`.
pub fn charbonnier(
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    cfg: &LossConfig,
) -> Result<f64> {
    let m = effective_mask(pred, target, mask)?;
    let eps2 = cfg.epsilon * cfg.epsilon;
    let terms: Vec<f64> = (0..pred.len())
        .filter(|&i| m[i])
        .map(|i| {
            let d = pred.values()[i] - target.values()[i];
            (d * d + eps2).sqrt()
        })
        .collect();
    mean(&terms).ok_or(Error::LossUndefined("empty mask"))
}

/// `log(max(v, eps))` minus its mean over the selected pixels.
fn log_mean_center(g: &Grid, selected: &[bool], eps: f64) -> Result<Grid> {
    let logged = g.map(|v| v.max(eps).ln());
    let chosen: Vec<f64> = logged
        .values()
        .iter()
        .zip(selected)
        .filter_map(|(v, s)| s.then_some(*v))
        .collect();
    let mu = mean(&chosen).ok_or(Error::LossUndefined("empty mask"))?;
    Ok(logged.map(|v| v - mu))
}

/// Per-term values of the patch gradient loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradLossTerms {
    pub magnitude: f64,
    pub range: f64,
    pub direction: f64,
    pub total: f64,
}

/// Patch gradient loss: log mean-centering, Sobel gradients, then
/// magnitude, patch range and direction terms combined with `w`.
pub fn grad_loss(
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    w: &GradLossWeights,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(grad_loss_terms(pred, target, mask, w, cfg)?.total)
}

pub fn grad_loss_terms(
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    w: &GradLossWeights,
    cfg: &LossConfig,
) -> Result<GradLossTerms> {
    cfg.validate()?;
    let selected = effective_mask(pred, target, mask)?;
    let eps = cfg.epsilon;

    // (1) log mean-center
    let p_hat = log_mean_center(pred, &selected, eps)?;
    let t_hat = log_mean_center(target, &selected, eps)?;

    // (2) gradients
    let (pgx, pgy) = sobel_gradients(&p_hat)?;
    let (tgx, tgy) = sobel_gradients(&t_hat)?;
    let n = pred.len();
    let mut keep = selected;
    let mut m_p = vec![0.0; n];
    let mut m_t = vec![0.0; n];
    for i in 0..n {
        keep[i] &= pgx.validity()[i] && tgx.validity()[i];
        m_p[i] = pgx.values()[i].hypot(pgy.values()[i]);
        m_t[i] = tgx.values()[i].hypot(tgy.values()[i]);
    }
    if !keep.iter().any(|k| *k) {
        return Err(Error::LossUndefined("no pixel with a defined gradient"));
    }
    let masked_mean = |f: &dyn Fn(usize) -> f64, sel: &[bool]| -> Result<f64> {
        let v: Vec<f64> = (0..n).filter(|&i| sel[i]).map(f).collect();
        mean(&v).ok_or(Error::LossUndefined("empty mask"))
    };

    // (3) pixel magnitude
    let l_mag = masked_mean(&|i| (m_p[i] - m_t[i]).abs(), &keep)?;

    // (4) patch range over each configured window, averaged
    let (width, height, ps) = (pred.width(), pred.height(), pred.pixel_size());
    let mag_p = Grid::with_mask(width, height, ps, m_p.clone(), pgx.validity().to_vec())?;
    let mag_t = Grid::with_mask(width, height, ps, m_t.clone(), tgx.validity().to_vec())?;
    let (hi, lo) = match cfg.pooling_mode {
        PoolingMode::Hard => (Pool::Max, Pool::Min),
        PoolingMode::Soft => (
            Pool::SoftMax(cfg.soft_temperature),
            Pool::SoftMin(cfg.soft_temperature),
        ),
    };
    let mut range_terms = Vec::with_capacity(cfg.range_windows.len());
    for &k in &cfg.range_windows {
        let r_p = range_map(&mag_p, k, hi, lo)?;
        let r_t = range_map(&mag_t, k, hi, lo)?;
        let sel: Vec<bool> = (0..n)
            .map(|i| keep[i] && r_p.validity()[i] && r_t.validity()[i])
            .collect();
        range_terms.push(masked_mean(
            &|i| (r_p.values()[i] - r_t.values()[i]).abs(),
            &sel,
        )?);
    }
    let l_rng = pairwise_sum(&range_terms) / range_terms.len() as f64;

    // (5) direction consistency
    let unit = |gx: f64, gy: f64, m: f64| {
        let denom = match cfg.direction_guard {
            DirectionGuard::Floor => m.max(eps),
            DirectionGuard::Additive => m + eps,
        };
        (gx / denom, gy / denom)
    };
    let l_dir = masked_mean(
        &|i| {
            let (upx, upy) = unit(pgx.values()[i], pgy.values()[i], m_p[i]);
            let (utx, uty) = unit(tgx.values()[i], tgy.values()[i], m_t[i]);
            1.0 - (upx * utx + upy * uty).clamp(-1.0, 1.0)
        },
        &keep,
    )?;

    // (6) combine
    Ok(GradLossTerms {
        magnitude: l_mag,
        range: l_rng,
        direction: l_dir,
        total: w.lambda_mag * l_mag + w.lambda_rng * l_rng + w.lambda_dir * l_dir,
    })
}

fn range_map(g: &Grid, window: usize, hi: Pool, lo: Pool) -> Result<Grid> {
    let mx = pool(g, window, hi)?;
    let mn = pool(g, window, lo)?;
    let values = mx.values().iter().zip(mn.values()).map(|(a, b)| a - b).collect();
    let valid = mx
        .validity()
        .iter()
        .zip(mn.validity())
        .map(|(a, b)| *a && *b)
        .collect();
    Grid::with_mask(g.width(), g.height(), g.pixel_size(), values, valid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiScaleGradLoss {
    /// Mean of the per-scale losses that could be evaluated.
    pub value: f64,
    /// `(scale, loss)` for every evaluated scale.
    pub per_scale: Vec<(f64, f64)>,
    /// Scales skipped because the downsampled raster is below 3x3.
    pub dropped_scales: Vec<f64>,
}

/// Average of [`grad_loss`] over `cfg.scales`, each evaluated on
/// area-downsampled inputs (factor `round(1 / scale)`).
pub fn multiscale_grad_loss(
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    w: &GradLossWeights,
    cfg: &LossConfig,
) -> Result<MultiScaleGradLoss> {
    cfg.validate()?;
    check_dims(pred.width(), pred.height(), target.width(), target.height())?;
    let mut per_scale = Vec::new();
    let mut dropped = Vec::new();
    for &s in &cfg.scales {
        let factor = (1.0 / s).round().max(1.0) as usize;
        if pred.width().div_ceil(factor) < 3 || pred.height().div_ceil(factor) < 3 {
            log::warn!("dropping scale {s}: {}x{} too small", pred.width(), pred.height());
            dropped.push(s);
            continue;
        }
        let p = downsample(pred, factor)?;
        let t = downsample(target, factor)?;
        let m = mask.map(|m| downsample_mask(m, factor)).transpose()?;
        per_scale.push((s, grad_loss(&p, &t, m.as_ref(), w, cfg)?));
    }
    if per_scale.is_empty() {
        return Err(Error::LossUndefined("raster too small for every scale"));
    }
    let values: Vec<f64> = per_scale.iter().map(|(_, v)| *v).collect();
    Ok(MultiScaleGradLoss {
        value: pairwise_sum(&values) / values.len() as f64,
        per_scale,
        dropped_scales: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumWeights {
    pub w_silog: f64,
    pub w_charb: f64,
    pub w_grad: f64,
}

/// Linear ramps of the training curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    /// Iteration at which Charbonnier has fully replaced SiLog.
    pub charb_ramp_end: i64,
    pub grad_warmup_start: i64,
    pub grad_warmup_end: i64,
    pub grad_max: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            charb_ramp_end: 30_000,
            grad_warmup_start: 5_000,
            grad_warmup_end: 50_000,
            grad_max: 0.075,
        }
    }
}

pub const DEFAULT_TOTAL_ITERS: i64 = 100_000;

impl CurriculumSchedule {
    pub fn weights(&self, iter: i64, total: i64) -> Result<CurriculumWeights> {
        if iter < 0 {
            return Err(Error::Parameter(format!("iteration {iter} is negative")));
        }
        if iter > total {
            return Err(Error::Parameter(format!("iteration {iter} beyond total {total}")));
        }
        let w_charb = (iter as f64 / self.charb_ramp_end as f64).clamp(0.0, 1.0);
        let warm = (iter - self.grad_warmup_start) as f64
            / (self.grad_warmup_end - self.grad_warmup_start) as f64;
        Ok(CurriculumWeights {
            w_silog: 1.0 - w_charb,
            w_charb,
            w_grad: self.grad_max * warm.clamp(0.0, 1.0),
        })
    }
}

/// Weights of the default schedule at `iter`.
pub fn curriculum_weights(iter: i64, total: i64) -> Result<CurriculumWeights> {
    CurriculumSchedule::default().weights(iter, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub silog: f64,
    pub charbonnier: f64,
    pub grad: f64,
    pub weights: CurriculumWeights,
}

/// Curriculum-weighted sum of SiLog, Charbonnier and multi-scale gradient
/// loss at training iteration `iter`.
pub fn combined_loss(
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    iter: i64,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let weights = curriculum_weights(iter, DEFAULT_TOTAL_ITERS.max(iter))?;
    let s = silog(pred, target, mask, cfg)?;
    let c = charbonnier(pred, target, mask, cfg)?;
    let g = multiscale_grad_loss(pred, target, mask, &cfg.grad_weights, cfg)?.value;
    Ok(LossBreakdown {
        total: weights.w_silog * s + weights.w_charb * c + weights.w_grad * g,
        silog: s,
        charbonnier: c,
        grad: g,
        weights,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Silog,
    Charbonnier,
    Grad,
    MultiScaleGrad,
    Combined(i64),
}

pub fn evaluate(
    kind: LossKind,
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    cfg: &LossConfig,
) -> Result<f64> {
    match kind {
        LossKind::Silog => silog(pred, target, mask, cfg),
        LossKind::Charbonnier => charbonnier(pred, target, mask, cfg),
        LossKind::Grad => grad_loss(pred, target, mask, &cfg.grad_weights, cfg),
        LossKind::MultiScaleGrad => {
            Ok(multiscale_grad_loss(pred, target, mask, &cfg.grad_weights, cfg)?.value)
        }
        LossKind::Combined(iter) => Ok(combined_loss(pred, target, mask, iter, cfg)?.total),
    }
}

/// Default pixel cap for [`numeric_gradient`] (a 32x32 raster).
pub const NUMERIC_GRADIENT_CAP: usize = 32 * 32;

/// Central finite-difference gradient of a loss with respect to each valid
/// prediction pixel, perturbing one pixel at a time in raster order.
pub fn numeric_gradient(
    kind: LossKind,
    pred: &Grid,
    target: &Grid,
    mask: Option<&BitMask>,
    cfg: &LossConfig,
    h: f64,
    cap: usize,
) -> Result<Grid> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step {h} must be > 0")));
    }
    if pred.len() > cap {
        return Err(Error::TooLarge {
            pixels: pred.len(),
            cap,
        });
    }
    let mut out = Grid::new(
        pred.width(),
        pred.height(),
        pred.pixel_size(),
        vec![f64::NAN; pred.len()],
    )?;
    let mut work = pred.clone();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            let Some(v) = pred.get(x, y) else { continue };
            work.set(x, y, v + h);
            let up = evaluate(kind, &work, target, mask, cfg)?;
            work.set(x, y, v - h);
            let down = evaluate(kind, &work, target, mask, cfg)?;
            work.set(x, y, v);
            out.set(x, y, (up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(w: usize, h: usize, phase: f64) -> Grid {
        Grid::from_fn(w, h, 1.0, |x, y| {
            let (x, y) = (x as f64, y as f64);
            2.0 + (0.45 * x + phase).sin() + 0.8 * (0.3 * y - 0.2 * x).cos() + 0.05 * x
        })
        .unwrap()
    }

    fn hard() -> LossConfig {
        LossConfig {
            pooling_mode: PoolingMode::Hard,
            ..LossConfig::default()
        }
    }

    #[test]
    fn silog_examples() {
        let t = smooth(8, 8, 0.0);
        let cfg = LossConfig::default();
        assert_eq!(silog(&t, &t, None, &cfg).unwrap(), 0.0);
        let p = t.map(|v| v * std::f64::consts::E);
        assert!((silog(&p, &t, None, &cfg).unwrap() - 0.15f64.sqrt()).abs() < 1e-12);
        let cfg1 = LossConfig {
            silog_variance_weight: 1.0,
            ..cfg
        };
        assert!(silog(&p, &t, None, &cfg1).unwrap() < 1e-12);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let t = smooth(8, 8, 0.0);
        let m = BitMask::filled(8, 8, false);
        let cfg = LossConfig::default();
        assert!(matches!(silog(&t, &t, Some(&m), &cfg), Err(Error::LossUndefined(_))));
        assert!(matches!(charbonnier(&t, &t, Some(&m), &cfg), Err(Error::LossUndefined(_))));
        assert!(matches!(
            grad_loss(&t, &t, Some(&m), &GradLossWeights::default(), &cfg),
            Err(Error::LossUndefined(_))
        ));
    }

    #[test]
    fn charbonnier_examples() {
        let cfg = LossConfig::default();
        let t = smooth(6, 6, 0.0);
        assert!((charbonnier(&t, &t, None, &cfg).unwrap() - 1e-3).abs() < 1e-18);
        let p = t.map(|v| v + 3.0);
        let expected = (9.0f64 + 1e-6).sqrt();
        assert!((charbonnier(&p, &t, None, &cfg).unwrap() - expected).abs() < 1e-12);
        let mut q = p.clone();
        q.set(2, 2, q.get(2, 2).unwrap() + 0.5);
        assert!(charbonnier(&q, &t, None, &cfg).unwrap() > charbonnier(&p, &t, None, &cfg).unwrap());
    }

    #[test]
    fn grad_loss_constant_inputs_equal_lambda_dir() {
        let c = Grid::filled(12, 12, 1.0, 2.5).unwrap();
        let w = GradLossWeights::default();
        for cfg in [hard(), LossConfig::default()] {
            assert_eq!(grad_loss(&c, &c, None, &w, &cfg).unwrap(), 0.4);
        }
        let additive = LossConfig {
            direction_guard: DirectionGuard::Additive,
            ..hard()
        };
        assert_eq!(grad_loss(&c, &c, None, &w, &additive).unwrap(), 0.4);
    }

    #[test]
    fn grad_loss_identical_varying_inputs() {
        let t = smooth(16, 16, 0.3);
        let w = GradLossWeights::default();
        let terms = grad_loss_terms(&t, &t, None, &w, &hard()).unwrap();
        assert_eq!(terms.magnitude, 0.0);
        assert_eq!(terms.range, 0.0);
        assert!(terms.total < 1e-12, "{terms:?}");
    }

    #[test]
    fn additive_guard_matches_closed_form() {
        // With g/(m + eps), identical inputs leave 1 - m^2 / (m + eps)^2 per pixel.
        let t = smooth(10, 10, 0.7);
        let cfg = LossConfig {
            direction_guard: DirectionGuard::Additive,
            ..hard()
        };
        let got = grad_loss_terms(&t, &t, None, &GradLossWeights::default(), &cfg).unwrap();
        let logged = t.map(f64::ln);
        let (gx, gy) = sobel_gradients(&logged).unwrap();
        let eps = cfg.epsilon;
        let per_pixel: Vec<f64> = gx
            .values()
            .iter()
            .zip(gy.values())
            .map(|(a, b)| {
                let m = a.hypot(*b);
                1.0 - (m * m) / ((m + eps) * (m + eps))
            })
            .collect();
        let expected = per_pixel.iter().sum::<f64>() / per_pixel.len() as f64;
        assert!((got.direction - expected).abs() < 1e-12);
        assert!(got.direction > 1e-5);
    }

    #[test]
    fn grad_loss_is_scale_invariant() {
        let p = smooth(16, 16, 0.1);
        let t = smooth(16, 16, 0.9);
        let w = GradLossWeights::default();
        for cfg in [hard(), LossConfig::default()] {
            let base = grad_loss(&p, &t, None, &w, &cfg).unwrap();
            for a in [0.5, 2.0, 10.0] {
                for b in [0.5, 2.0, 10.0] {
                    let v = grad_loss(&p.map(|x| a * x), &t.map(|x| b * x), None, &w, &cfg).unwrap();
                    assert!((v - base).abs() < 1e-9, "a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn multiscale_examples() {
        let w = GradLossWeights::default();
        let c = Grid::filled(16, 16, 1.0, 3.0).unwrap();
        let ms = multiscale_grad_loss(&c, &c, None, &w, &hard()).unwrap();
        assert_eq!(ms.per_scale.len(), 3);
        assert!((ms.value - 0.4).abs() < 1e-15);

        let p = smooth(16, 16, 0.1);
        let t = smooth(16, 16, 0.6);
        let single = LossConfig {
            scales: vec![1.0],
            ..LossConfig::default()
        };
        assert_eq!(
            multiscale_grad_loss(&p, &t, None, &w, &single).unwrap().value,
            grad_loss(&p, &t, None, &w, &single).unwrap()
        );

        let small = smooth(8, 8, 0.0);
        let ms = multiscale_grad_loss(&small, &small, None, &w, &hard()).unwrap();
        assert_eq!(ms.dropped_scales, vec![0.25]);
    }

    #[test]
    fn curriculum_examples() {
        let w = curriculum_weights(0, 100_000).unwrap();
        assert_eq!((w.w_silog, w.w_charb, w.w_grad), (1.0, 0.0, 0.0));
        let w = curriculum_weights(50_000, 100_000).unwrap();
        assert_eq!((w.w_silog, w.w_charb, w.w_grad), (0.0, 1.0, 0.075));
        let w = curriculum_weights(15_000, 100_000).unwrap();
        assert_eq!((w.w_silog, w.w_charb), (0.5, 0.5));
        assert!((w.w_grad - 0.075 / 4.5).abs() < 1e-15);
        assert!(curriculum_weights(-1, 100_000).is_err());
    }

    #[test]
    fn combined_loss_parts() {
        let t = smooth(16, 16, 0.2);
        let cfg = LossConfig::default();
        let b = combined_loss(&t, &t, None, 0, &cfg).unwrap();
        assert_eq!(b.total, 0.0);
        let b = combined_loss(&t, &t, None, 60_000, &cfg).unwrap();
        assert!((b.total - 1e-3).abs() < 1e-9);
        let p = smooth(16, 16, 1.1);
        for iter in [0, 7_000, 20_000, 42_000, 100_000] {
            let b = combined_loss(&p, &t, None, iter, &cfg).unwrap();
            let w = b.weights;
            let sum = w.w_silog * b.silog + w.w_charb * b.charbonnier + w.w_grad * b.grad;
            assert!((b.total - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn numeric_gradient_charbonnier() {
        let t = smooth(6, 6, 0.0);
        let cfg = LossConfig::default();
        let g = numeric_gradient(LossKind::Charbonnier, &t, &t, None, &cfg, 1e-4, NUMERIC_GRADIENT_CAP)
            .unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-9));

        let mut p = t.clone();
        p.set(3, 2, t.get(3, 2).unwrap() + 3.0);
        let g = numeric_gradient(LossKind::Charbonnier, &p, &t, None, &cfg, 1e-4, NUMERIC_GRADIENT_CAP)
            .unwrap();
        let n = 36.0;
        assert!((g.get(3, 2).unwrap() * n - 1.0).abs() < 1e-6);

        let big = Grid::filled(40, 40, 1.0, 1.0).unwrap();
        assert!(matches!(
            numeric_gradient(LossKind::Charbonnier, &big, &big, None, &cfg, 1e-4, NUMERIC_GRADIENT_CAP),
            Err(Error::TooLarge { .. })
        ));
    }
}
