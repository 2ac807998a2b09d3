//! Batch alignment over a directory of tiles: global shift, then dense
//! local warp, with per-tile failure isolation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_csv, read_ras1, write_ras1};
use crate::global_align::{global_align, GlobalAlignParams, PeakParams};
use crate::local_align::{local_align, LocalAlignParams, TreeBox};
use crate::losses::{DirectionGuard, GradLossWeights, LossConfig, PoolingMode};
use crate::raster::{translate, warp_apply, NormalizationConfig};
use crate::stats::mean;

/// Flat TOML configuration. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pred_dir: PathBuf,
    pub label_dir: PathBuf,
    pub boxes_dir: PathBuf,
    pub out_dir: PathBuf,

    pub max_shift: usize,
    pub refine_radius: usize,
    pub peak_min_height: f64,
    pub peak_percentile: f64,
    pub nms_window: usize,

    pub rel_threshold: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub displacement_cap: f64,
    pub cell_size: usize,
    pub tps_regularization: f64,
    pub tolerance_px: f64,

    pub loss_epsilon: f64,
    pub silog_variance_weight: f64,
    pub grad_scales: Vec<f64>,
    pub range_windows: Vec<usize>,
    pub pooling_mode: PoolingMode,
    pub soft_temperature: f64,
    pub direction_guard: DirectionGuard,
    pub lambda_mag: f64,
    pub lambda_rng: f64,
    pub lambda_dir: f64,

    pub height_divisor: f64,
    pub max_height: f64,

    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GlobalAlignParams::default();
        let l = LocalAlignParams::default();
        let loss = LossConfig::default();
        let n = NormalizationConfig::default();
        Self {
            pred_dir: "pred".into(),
            label_dir: "label".into(),
            boxes_dir: "boxes".into(),
            out_dir: "out".into(),
            max_shift: g.max_shift,
            refine_radius: g.refine_radius,
            peak_min_height: g.peaks.min_height,
            peak_percentile: g.peaks.percentile_floor,
            nms_window: g.peaks.nms_window,
            rel_threshold: l.rel_threshold,
            eps: l.eps,
            min_pts: l.min_pts,
            alpha: l.alpha,
            max_iters: l.max_iters,
            displacement_cap: l.displacement_cap,
            cell_size: l.cell_size,
            tps_regularization: l.regularization,
            tolerance_px: l.tolerance,
            loss_epsilon: loss.epsilon,
            silog_variance_weight: loss.silog_variance_weight,
            grad_scales: loss.scales,
            range_windows: loss.range_windows,
            pooling_mode: loss.pooling_mode,
            soft_temperature: loss.soft_temperature,
            direction_guard: loss.direction_guard,
            lambda_mag: loss.grad_weights.lambda_mag,
            lambda_rng: loss.grad_weights.lambda_rng,
            lambda_dir: loss.grad_weights.lambda_dir,
            height_divisor: n.height_divisor,
            max_height: n.max_height,
            workers: 4,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn global_params(&self) -> GlobalAlignParams {
        GlobalAlignParams {
            max_shift: self.max_shift,
            refine_radius: self.refine_radius,
            peaks: PeakParams {
                min_height: self.peak_min_height,
                percentile_floor: self.peak_percentile,
                nms_window: self.nms_window,
            },
        }
    }

    pub fn local_params(&self) -> LocalAlignParams {
        LocalAlignParams {
            rel_threshold: self.rel_threshold,
            eps: self.eps,
            min_pts: self.min_pts,
            alpha: self.alpha,
            max_iters: self.max_iters,
            displacement_cap: self.displacement_cap,
            cell_size: self.cell_size,
            regularization: self.tps_regularization,
            tolerance: self.tolerance_px,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            epsilon: self.loss_epsilon,
            silog_variance_weight: self.silog_variance_weight,
            scales: self.grad_scales.clone(),
            range_windows: self.range_windows.clone(),
            pooling_mode: self.pooling_mode,
            soft_temperature: self.soft_temperature,
            direction_guard: self.direction_guard,
            grad_weights: GradLossWeights {
                lambda_mag: self.lambda_mag,
                lambda_rng: self.lambda_rng,
                lambda_dir: self.lambda_dir,
            },
        }
    }

    pub fn normalization(&self) -> NormalizationConfig {
        NormalizationConfig {
            height_divisor: self.height_divisor,
            max_height: self.max_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.rel_threshold > 0.0 && self.rel_threshold < 1.0) {
            return Err(Error::Config(format!(
                "rel_threshold {} outside (0, 1)",
                self.rel_threshold
            )));
        }
        if self.nms_window == 0 || self.nms_window.is_multiple_of(2) {
            return Err(Error::Config(format!("nms_window {} must be odd", self.nms_window)));
        }
        self.loss_config()
            .validate()
            .and_then(|_| self.normalization().validate())
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses a TOML config. Missing keys take their defaults; unknown keys are
/// reported by name.
pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let known = toml::Table::try_from(PipelineConfig::default())
        .map_err(|e| Error::Config(e.to_string()))?;
    if let Some(key) = table.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::UnknownKey(key.clone()));
    }
    let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub shift: (i32, i32),
    pub magnitude: f64,
    pub accepted: bool,
    pub iou_before: f64,
    pub iou_after: f64,
    pub lift: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSummary {
    pub iterations: usize,
    pub converged: bool,
    pub fallback_iterations: usize,
    pub final_median_offset: Option<f64>,
    pub max_displacement: f64,
    pub no_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileReport {
    pub id: String,
    pub ok: bool,
    pub error: Option<String>,
    pub global: Option<GlobalSummary>,
    pub local: Option<LocalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_tiles: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_accepted: usize,
    /// Accepted shifts over successfully processed tiles.
    pub accepted_fraction: f64,
    pub mean_iou_before: Option<f64>,
    pub mean_iou_after: Option<f64>,
    pub tiles: Vec<TileReport>,
}

impl RunReport {
    /// 0 when every tile succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.n_failed == 0 {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: RunReport,
    pub wall_time: Duration,
}

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

fn stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(s.to_owned());
            }
        }
    }
    Ok(out)
}

/// Tile ids: the union of `.ras` stems in the prediction and label
/// directories, sorted.
pub fn discover_tiles(cfg: &PipelineConfig) -> Result<Vec<String>> {
    for dir in [&cfg.pred_dir, &cfg.label_dir, &cfg.boxes_dir] {
        if !dir.is_dir() {
            return Err(Error::Config(format!("directory {} does not exist", dir.display())));
        }
    }
    let mut ids = stems(&cfg.pred_dir, "ras")?;
    ids.extend(stems(&cfg.label_dir, "ras")?);
    Ok(ids.into_iter().collect())
}

/// Runs global then local alignment on every tile and writes
/// `<id>.aligned.ras`, `<id>.dx.ras`, `<id>.dy.ras`, `report.json` and
/// `timing.json` into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let ids = discover_tiles(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let tiles: Vec<TileReport> = pool.install(|| {
        ids.par_iter()
            .map(|id| match process_tile(cfg, id) {
                Ok((global, local)) => TileReport {
                    id: id.clone(),
                    ok: true,
                    error: None,
                    global: Some(global),
                    local: Some(local),
                },
                Err(e) => {
                    log::warn!("tile {id} failed: {e}");
                    TileReport {
                        id: id.clone(),
                        ok: false,
                        error: Some(e.to_string()),
                        global: None,
                        local: None,
                    }
                }
            })
            .collect()
    });
    let report = summarize(cfg.seed, tiles);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(cfg.out_dir.join(REPORT_FILE), json)?;
    let wall_time = start.elapsed();
    let timing = serde_json::json!({ "wall_time_s": wall_time.as_secs_f64(), "workers": cfg.workers });
    std::fs::write(cfg.out_dir.join(TIMING_FILE), format!("{timing}\n"))?;
    Ok(PipelineOutcome { report, wall_time })
}

fn summarize(seed: u64, tiles: Vec<TileReport>) -> RunReport {
    let ok: Vec<&GlobalSummary> = tiles.iter().filter_map(|t| t.global.as_ref()).collect();
    let n_accepted = ok.iter().filter(|g| g.accepted).count();
    let before: Vec<f64> = ok.iter().map(|g| g.iou_before).collect();
    let after: Vec<f64> = ok.iter().map(|g| g.iou_after).collect();
    RunReport {
        seed,
        n_tiles: tiles.len(),
        n_ok: ok.len(),
        n_failed: tiles.len() - ok.len(),
        n_accepted,
        accepted_fraction: if ok.is_empty() {
            0.0
        } else {
            n_accepted as f64 / ok.len() as f64
        },
        mean_iou_before: mean(&before),
        mean_iou_after: mean(&after),
        tiles,
    }
}

fn process_tile(cfg: &PipelineConfig, id: &str) -> Result<(GlobalSummary, LocalSummary)> {
    let pred = read_ras1(cfg.pred_dir.join(format!("{id}.ras")))?;
    let label = read_ras1(cfg.label_dir.join(format!("{id}.ras")))?;
    let boxes: Vec<TreeBox> = read_csv(cfg.boxes_dir.join(format!("{id}.csv")))?;
    for b in &boxes {
        b.validate()?;
    }

    let g = global_align(&pred, &label, &cfg.global_params())?;
    let shifted = if g.accepted {
        translate(&label, g.shift)
    } else {
        label
    };
    let (field, diag) = local_align(&shifted, &boxes, &cfg.local_params())?;
    let aligned = warp_apply(&shifted, &field)?;

    let (dx, dy) = field.to_grids(shifted.pixel_size())?;
    write_ras1(cfg.out_dir.join(format!("{id}.aligned.ras")), &aligned)?;
    write_ras1(cfg.out_dir.join(format!("{id}.dx.ras")), &dx)?;
    write_ras1(cfg.out_dir.join(format!("{id}.dy.ras")), &dy)?;

    let max_displacement = field
        .dx()
        .iter()
        .zip(field.dy())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    Ok((
        GlobalSummary {
            shift: g.shift,
            magnitude: g.shift_magnitude(),
            accepted: g.accepted,
            iou_before: g.iou_before,
            iou_after: g.iou_after,
            lift: g.lift,
            degenerate: g.degenerate,
        },
        LocalSummary {
            iterations: diag.iterations(),
            converged: diag.converged,
            fallback_iterations: diag.fallback.iter().filter(|f| **f).count(),
            final_median_offset: diag.median_offsets.last().copied(),
            max_displacement,
            no_samples: diag.no_samples,
        },
    ))
}
