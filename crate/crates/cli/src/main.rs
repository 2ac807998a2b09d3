//! `chmreg` command-line front-end.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "chmreg", version, about = "Canopy height label registration, losses and evaluation")]
pub struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for tile-parallel commands.
    #[arg(long, global = true, env = "CHMREG_WORKERS")]
    pub workers: Option<usize>,

    /// Seed for batch planning; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate and apply the per-tile integer shift of a label.
    AlignGlobal {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        label: PathBuf,
        /// Shifted label (written only when the shift is accepted, else a copy).
        #[arg(long)]
        out_label: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the dense warp of a CHM onto tree boxes.
    AlignLocal {
        #[arg(long)]
        chm: PathBuf,
        /// CSV with columns x_min,y_min,x_max,y_max in pixels.
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        out_aligned: Option<PathBuf>,
        #[arg(long)]
        out_dx: Option<PathBuf>,
        #[arg(long)]
        out_dy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global then local alignment over tile directories.
    Align(AlignArgs),
    /// Pixel, block and edge metrics of a prediction against a target.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 50)]
        block: usize,
        /// Block statistic: mean or p95.
        #[arg(long, default_value = "mean")]
        stat: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Hexbin PNG of per-block p95 pairs.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Compare CHM percentiles within footprints to reference heights.
    FootprintCompare {
        #[arg(long)]
        chm: PathBuf,
        /// CSV with columns x,y,height (pixel coordinates, metres).
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value_t = 12.0)]
        radius_m: f64,
        #[arg(long, default_value_t = 98.0)]
        percentile: f64,
        /// Per-footprint pairs CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Evaluate the training losses on a prediction/target pair.
    Loss {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        iter: i64,
        /// Inputs are already divided by the height divisor.
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print curriculum weights as CSV.
    Schedule {
        #[arg(long, default_value_t = 100_000)]
        total: i64,
        #[arg(long, default_value_t = 5_000)]
        every: i64,
    },
    /// Train the keep/discard probe on embedding differences.
    CleanTrain {
        #[arg(long)]
        pred_emb: PathBuf,
        #[arg(long)]
        label_emb: PathBuf,
        /// CSV with columns sample_id,keep; sample_id is the embedding row.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        l2: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        /// ROC curve of the training scores.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Score pairs with a trained probe.
    CleanScore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pred_emb: PathBuf,
        #[arg(long)]
        label_emb: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Set building footprints to zero height.
    MaskBuildings {
        #[arg(long)]
        chm: PathBuf,
        /// CSV lines id,x0,y0,x1,y1,... in pixel-corner coordinates.
        #[arg(long)]
        polygons: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan quota-constrained training batches.
    SampleBatches {
        /// CSV with columns sample_id,frac_below_1m,p95_height.
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.10)]
        low: f64,
        #[arg(long, default_value_t = 0.20)]
        high: f64,
        #[arg(long, default_value_t = 1000)]
        n_batches: usize,
        #[arg(long, default_value_t = 35.0)]
        tall_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        low_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub label_dir: Option<PathBuf>,
    #[arg(long)]
    pub boxes_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code_for(&e))
        }
    }
}
