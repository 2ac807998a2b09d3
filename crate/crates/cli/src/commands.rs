use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use chmreg::cleaning::{
    keep_score, parse_keep_label, read_polygons, roc_curve, train_probe, write_roc_csv,
    zero_buildings, EmbeddingPair, ProbeModel, ProbeTrainParams,
};
use chmreg::formats::{read_csv, read_emb1, read_ras1, write_csv, write_ras1, Embeddings};
use chmreg::global_align::global_align;
use chmreg::local_align::{local_align, TreeBox};
use chmreg::losses::{combined_loss, CurriculumSchedule};
use chmreg::metrics::{
    block_r2, crop_percentile_pairs, edge_error, footprint_compare, pixel_stats, BlockStat,
    FootprintRef, PixelStats,
};
use chmreg::pipeline::{parse_config, run_pipeline, PipelineConfig};
use chmreg::raster::{translate, warp_apply};
use chmreg::sampler::{categorize_all, plan_batches, CategoryRule, QuotaPlan, SampleStats};
use chmreg::Error;

use crate::{plot, AlignArgs, Cli, Command};

/// 2 for configuration and startup problems, 1 for everything else.
pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::UnknownKey(_)) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<u8> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::AlignGlobal { pred, label, out_label, out } => {
            let pred = read_ras1(pred)?;
            let label = read_ras1(label)?;
            let r = global_align(&pred, &label, &cfg.global_params())?;
            if let Some(path) = out_label {
                let shifted = if r.accepted { translate(&label, r.shift) } else { label };
                write_ras1(path, &shifted)?;
            }
            emit_json(&r, out.as_deref())?;
        }
        Command::AlignLocal { chm, boxes, out_aligned, out_dx, out_dy, out } => {
            let chm = read_ras1(chm)?;
            let boxes: Vec<TreeBox> = read_csv(boxes)?;
            let (field, diag) = local_align(&chm, &boxes, &cfg.local_params())?;
            if let Some(path) = out_aligned {
                write_ras1(path, &warp_apply(&chm, &field)?)?;
            }
            let (dx, dy) = field.to_grids(chm.pixel_size())?;
            if let Some(path) = out_dx {
                write_ras1(path, &dx)?;
            }
            if let Some(path) = out_dy {
                write_ras1(path, &dy)?;
            }
            emit_json(&diag, out.as_deref())?;
        }
        Command::Align(args) => return align(cfg, args),
        Command::Metrics { pred, target, block, stat, out, plot: png } => {
            let pred = read_ras1(pred)?;
            let target = read_ras1(target)?;
            let cfg_block = BlockStat { block_size: *block, statistic: stat.parse()? };
            let report = MetricsReport {
                pixel: pixel_stats(&pred, &target, None)?,
                block_r2: block_r2(&pred, &target, &cfg_block).ok(),
                block_size: *block,
                block_statistic: stat.clone(),
                edge_error: edge_error(&pred, &target, None)?,
            };
            if let Some(path) = png {
                let pairs = crop_percentile_pairs(&pred, &target, *block, 95.0)?;
                plot::hexbin(&pairs, path)?;
            }
            emit_json(&report, out.as_deref())?;
        }
        Command::FootprintCompare { chm, refs, radius_m, percentile, out, plot: png } => {
            let chm = read_ras1(chm)?;
            let refs: Vec<FootprintRef> = read_csv(refs)?;
            let cmp = footprint_compare(&chm, &refs, *radius_m, *percentile)?;
            if let Some(path) = out {
                write_csv(path, &cmp.pairs)?;
            }
            if let Some(path) = png {
                let pairs: Vec<(f64, f64)> = cmp.pairs.iter().map(|p| (p.reference, p.chm)).collect();
                plot::hexbin(&pairs, path)?;
            }
            let summary = serde_json::json!({
                "r2": cmp.r2,
                "mae": cmp.mae,
                "rmse": cmp.rmse,
                "n_pairs": cmp.pairs.len(),
                "skipped": cmp.skipped,
            });
            emit_json(&summary, None)?;
        }
        Command::Loss { pred, target, iter, normalized, out } => {
            let mut pred = read_ras1(pred)?;
            let mut target = read_ras1(target)?;
            if !normalized {
                let n = cfg.normalization();
                pred = n.normalize(&pred);
                target = n.normalize(&target);
            }
            let b = combined_loss(&pred, &target, None, *iter, &cfg.loss_config())?;
            emit_json(&b, out.as_deref())?;
        }
        Command::Schedule { total, every } => {
            if *every <= 0 {
                bail!("--every must be positive");
            }
            let schedule = CurriculumSchedule::default();
            println!("iter,w_silog,w_charb,w_grad");
            let mut it = 0;
            while it <= *total {
                let w = schedule.weights(it, *total)?;
                println!("{it},{},{},{}", w.w_silog, w.w_charb, w.w_grad);
                it += every;
            }
        }
        Command::CleanTrain { pred_emb, label_emb, labels, l2, iters, lr, out, roc } => {
            let pairs = load_pairs(pred_emb, label_emb)?;
            let rows: Vec<LabelRow> = read_csv(labels)?;
            let mut sel_pairs = Vec::with_capacity(rows.len());
            let mut sel_labels = Vec::with_capacity(rows.len());
            for r in &rows {
                let pair = pairs
                    .get(r.sample_id)
                    .ok_or_else(|| anyhow!("sample_id {} has no embedding row", r.sample_id))?;
                let keep = parse_keep_label(&r.keep)
                    .ok_or_else(|| anyhow!("sample_id {}: bad keep label `{}`", r.sample_id, r.keep))?;
                sel_pairs.push(pair.clone());
                sel_labels.push(keep);
            }
            let params = ProbeTrainParams { l2: *l2, iters: *iters, learning_rate: *lr, threshold: 0.5 };
            let model = train_probe(&sel_pairs, &sel_labels, &params)?;
            if let Some(path) = roc {
                let scores = sel_pairs
                    .iter()
                    .map(|p| keep_score(&model, p))
                    .collect::<chmreg::Result<Vec<f64>>>()?;
                write_roc_csv(path, &roc_curve(&scores, &sel_labels)?)?;
            }
            emit_json(&model, Some(out))?;
        }
        Command::CleanScore { model, pred_emb, label_emb, threshold, out } => {
            let text = std::fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
            let mut model: ProbeModel = serde_json::from_str(&text)?;
            if let Some(t) = threshold {
                model.threshold = *t;
            }
            model.validate()?;
            let pairs = load_pairs(pred_emb, label_emb)?;
            let mut rows = Vec::with_capacity(pairs.len());
            for (i, p) in pairs.iter().enumerate() {
                let score = keep_score(&model, p)?;
                rows.push(ScoreRow { sample_id: i, score, keep: u8::from(model.keeps(score)) });
            }
            write_csv(out, &rows)?;
            let kept = rows.iter().filter(|r| r.keep == 1).count();
            log::info!("kept {kept} of {} samples", rows.len());
        }
        Command::MaskBuildings { chm, polygons, out } => {
            let chm = read_ras1(chm)?;
            let polys = read_polygons(polygons)?;
            write_ras1(out, &zero_buildings(&chm, &polys)?)?;
        }
        Command::SampleBatches {
            stats,
            batch_size,
            low,
            high,
            n_batches,
            tall_threshold,
            low_fraction,
            out,
        } => {
            let stats: Vec<SampleStats> = read_csv(stats)?;
            let rule = CategoryRule { low_min_fraction: *low_fraction, tall_threshold: *tall_threshold };
            let cats = categorize_all(&stats, &rule)?;
            let plan = QuotaPlan { batch_size: *batch_size, low_ratio: *low, high_ratio: *high };
            let seed = cli.seed.unwrap_or(cfg.seed);
            let batches = plan_batches(&cats, &plan, *n_batches, seed)?;
            if !batches.fallback_batches.is_empty() {
                log::warn!(
                    "{} batches filled their mid share from other categories",
                    batches.fallback_batches.len()
                );
            }
            emit_json(&batches.batches, out.as_deref())?;
        }
    }
    Ok(0)
}

fn align(mut cfg: PipelineConfig, args: &AlignArgs) -> Result<u8> {
    if let Some(d) = &args.pred_dir {
        cfg.pred_dir = d.clone();
    }
    if let Some(d) = &args.label_dir {
        cfg.label_dir = d.clone();
    }
    if let Some(d) = &args.boxes_dir {
        cfg.boxes_dir = d.clone();
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    let outcome = run_pipeline(&cfg)?;
    let r = &outcome.report;
    eprintln!(
        "{} tiles: {} ok, {} failed, {} shifts accepted ({:.1} s)",
        r.n_tiles,
        r.n_ok,
        r.n_failed,
        r.n_accepted,
        outcome.wall_time.as_secs_f64()
    );
    Ok(r.exit_code() as u8)
}

fn load_pairs(pred: &Path, label: &Path) -> Result<Vec<EmbeddingPair>> {
    let p: Embeddings = read_emb1(pred)?;
    let l: Embeddings = read_emb1(label)?;
    if p.rows.len() != l.rows.len() {
        bail!("{} prediction rows but {} label rows", p.rows.len(), l.rows.len());
    }
    p.rows
        .into_iter()
        .zip(l.rows)
        .map(|(a, b)| Ok(EmbeddingPair::new(a, b)?))
        .collect()
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    sample_id: usize,
    keep: String,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    sample_id: usize,
    score: f64,
    keep: u8,
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    pixel: PixelStats,
    /// Absent when the target block statistics have zero variance.
    block_r2: Option<f64>,
    block_size: usize,
    block_statistic: String,
    edge_error: f64,
}
