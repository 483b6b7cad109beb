use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use confbench::explain::{ExplainContext, Method};
use confbench::harness::{
    emit_csv, evaluate_artifacts, load_csv, render_heatmaps, run_sweep, summary_csv, summary_text, EvalReport,
    SweepConfig,
};
use confbench::nnlite::{load_checkpoint, save_checkpoint, train, TrainConfig};
use confbench::rng::derive_seed;
use confbench::synthgen::{build_dataset, load_dataset, save_dataset, ConfounderKind, DatasetSpec};
use confbench::{ImageGrid, Result};

/// Confounder-detection benchmark for visual explanation methods.
#[derive(Parser)]
#[command(name = "confbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for `train`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// tag | lines | obstruction
    #[arg(long, default_value = "tag")]
    confounder: ConfounderKind,
    /// Percentage of positives carrying the confounder.
    #[arg(long, default_value_t = 100)]
    p: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one dataset as PGM files plus manifest.csv.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a classifier on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Explain one image with one method; writes the map and a PGM rendering.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "shap")]
        method: Method,
        /// Reference image for LIME/SHAP; mid-gray when absent.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Metrics for one cell from a saved dataset and model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Full confounder x p x seed sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute summaries from a results CSV.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results CSV; defaults to `<out>/results.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<SweepConfig> {
    match &common.config {
        Some(path) => SweepConfig::load(path),
        None => Ok(SweepConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &SweepConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output.clone())
}

fn dataset_spec(common: &Common, cfg: &SweepConfig) -> DatasetSpec {
    DatasetSpec {
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        n_test: cfg.n_test,
        image_size: cfg.image_size,
        p: common.p,
        confounder: common.confounder.clone(),
        seed: common.seed,
        ..DatasetSpec::default()
    }
}

fn write_summaries(report: &EvalReport, dir: &Path) -> Result<()> {
    let text = summary_text(&report.summary);
    std::fs::write(dir.join("summary.txt"), &text)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&report.summary))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, &cfg);
            let ds = build_dataset(&dataset_spec(&common, &cfg))?;
            save_dataset(&ds, &dir)?;
            println!(
                "wrote {} train / {} val / {} test images to {}",
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                dir.display()
            );
        }
        Command::Train { common, data } => {
            let cfg = load_config(&common)?;
            let ds = load_dataset(&data)?;
            let size = ds.train.first().map_or(cfg.image_size, |e| e.image.height());
            let mut sized = cfg.clone();
            sized.image_size = size;
            let tc = TrainConfig {
                seed: common.seed,
                ..cfg.train.clone()
            };
            let model = train(sized.model_spec(), &ds, &tc)?;
            let path = common.out.clone().unwrap_or_else(|| cfg.output.join("model.bin"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            save_checkpoint(&model, &path)?;
            let auc = model.val_auc.map_or_else(|| "undefined".into(), |a| format!("{a:.4}"));
            println!(
                "trained {} epochs, validation AUC {auc}, saved {}",
                model.history.len(),
                path.display()
            );
        }
        Command::Explain {
            common,
            model,
            image,
            method,
            baseline,
        } => {
            let cfg = load_config(&common)?;
            let model = load_checkpoint(&model)?;
            let img = ImageGrid::load_pgm(&image)?;
            let base = match baseline {
                Some(p) => ImageGrid::load_pgm(&p)?,
                None => ImageGrid::filled(img.height(), img.width(), 0.5),
            };
            let mut ctx = ExplainContext::new(base);
            ctx.segments_per_side = cfg.segments_per_side;
            ctx.shap = cfg.shap.clone();
            ctx.lime = cfg.lime.clone();
            ctx.lime.seed = derive_seed(common.seed, &["explain".into()]);
            let map = ctx.explain(method, &model, &img)?;
            let dir = out_dir(&common, &cfg);
            std::fs::create_dir_all(&dir)?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let base_name = format!("{stem}_{}", method.name());
            map.save(&dir.join(format!("{base_name}.attr")))?;
            map.save_pgm(&dir.join(format!("{base_name}.pgm")))?;
            println!("wrote {}/{base_name}.attr and .pgm", dir.display());
        }
        Command::Eval { common, data, model } => {
            let cfg = load_config(&common)?;
            let ds = load_dataset(&data)?;
            let model = load_checkpoint(&model)?;
            let out = evaluate_artifacts(model, &ds, &common.confounder, common.p, common.seed, &cfg);
            if let Some(err) = &out.error {
                return Err(confbench::Error::Cell {
                    cell: format!("{}/p{}/s{}", out.confounder, out.p, out.seed),
                    source: Box::new(confbench::Error::Internal(err.clone())),
                });
            }
            let dir = out_dir(&common, &cfg);
            std::fs::create_dir_all(&dir)?;
            let report = EvalReport::from_rows(out.rows.clone());
            emit_csv(&report, &dir.join("eval.csv"))?;
            if cfg.heatmaps {
                render_heatmaps(std::slice::from_ref(&out), &dir.join("heatmaps"))?;
            }
            print!("{}", confbench::harness::csv_string(&report.rows));
        }
        Command::Sweep { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, &cfg);
            std::fs::create_dir_all(&dir)?;
            let (report, outputs) = run_sweep(&cfg)?;
            emit_csv(&report, &dir.join("results.csv"))?;
            if cfg.heatmaps {
                render_heatmaps(&outputs, &dir.join("heatmaps"))?;
            }
            for o in outputs.iter().filter(|o| o.error.is_some()) {
                eprintln!("warning: {}", o.error.as_deref().unwrap_or_default());
            }
            write_summaries(&report, &dir)?;
        }
        Command::Report { common, csv } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&common, &cfg);
            let path = csv.unwrap_or_else(|| dir.join("results.csv"));
            let report = EvalReport::from_rows(load_csv(&path)?);
            let summary_dir = path.parent().map(Path::to_path_buf).unwrap_or(dir);
            write_summaries(&report, &summary_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("confbench: {e}");
            ExitCode::FAILURE
        }
    }
}
