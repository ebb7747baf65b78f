//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{load_and_resize, DiskSource, ImageSource, Manifest, Split};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate, predict, tta_predict, tta_rng, write_predictions_file, EvaluationReport,
};
use crate::model::build_model;
use crate::schedule::{restart_steps, ScheduleRow, SchedulePlan};
use crate::taxonomy::Category;
use crate::trainer::{load_checkpoint, load_model, read_loss_csv, run_recipe, Trainer};

#[derive(Debug, Parser)]
#[command(name = "dermclass", version, about = "Dermoscopy lesion classifier: train, evaluate, predict")]
pub struct Cli {
    /// Run configuration (TOML). Defaults give the full two-phase recipe.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the top-level random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate every configured split and cache the manifests.
    Ingest {
        /// Only parse the ground-truth files; do not open the images.
        #[arg(long)]
        skip_image_check: bool,
    },
    /// Run the training program.
    Train {
        /// Print the schedule plan and exit without training.
        #[arg(long)]
        dry_run: bool,
        /// Continue from a checkpoint written by an identical configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Training-set size for --dry-run when no manifest is configured.
        #[arg(long)]
        n_train: Option<usize>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Also evaluate with test-time augmentation.
        #[arg(long)]
        tta: bool,
    },
    /// Classify a single image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        #[arg(long)]
        tta: bool,
    },
    /// Write tidy figure data for the loss and learning-rate curves.
    Plot {
        /// Loss CSV (`step,epoch,phase,loss`); defaults to `<output>/loss.csv`.
        #[arg(long)]
        loss: Option<PathBuf>,
        /// Schedule CSV; recomputed from the config when absent.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Training-set size used to recompute the schedule.
        #[arg(long)]
        n_train: Option<usize>,
    },
    /// Write a synthetic toy dataset and a matching config.
    Fixture { dir: PathBuf },
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

/// Runs the parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Command::Fixture { dir } = &cli.command {
        return cmd_fixture(dir, out);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { skip_image_check } => cmd_ingest(&cfg, !skip_image_check, out),
        Command::Train {
            dry_run,
            resume,
            n_train,
        } => {
            if *dry_run {
                cmd_dry_run(&cfg, *n_train, out)
            } else {
                cmd_train(&cfg, resume.as_deref(), out)
            }
        }
        Command::Evaluate {
            checkpoint,
            split,
            tta,
        } => cmd_evaluate(&cfg, checkpoint, *split, *tta, out),
        Command::Predict {
            checkpoint,
            image,
            tta,
        } => cmd_predict(&cfg, checkpoint, image, *tta, out),
        Command::Plot {
            loss,
            schedule,
            n_train,
        } => cmd_plot(&cfg, loss.as_deref(), schedule.as_deref(), *n_train, out),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn source_for(cfg: &RunConfig) -> Arc<dyn ImageSource> {
    if cfg.data.cache_images {
        Arc::new(DiskSource::cached(cfg.data.image_size))
    } else {
        Arc::new(DiskSource::new(cfg.data.image_size))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub split: Split,
    pub n_records: usize,
    pub category_counts: [usize; 7],
}

/// Parses every configured split and, when asked, decodes every image.
pub fn ingest(cfg: &RunConfig, check_images: bool) -> Result<Vec<(Manifest, SplitSummary)>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        if cfg.data.split(split).is_none() {
            continue;
        }
        let manifest = cfg.data.read_manifest(split)?;
        if check_images {
            let mut missing: Vec<String> = manifest
                .records
                .par_iter()
                .filter(|r| image::open(&r.image_path).is_err())
                .map(|r| r.image_id.clone())
                .collect();
            if !missing.is_empty() {
                missing.sort();
                return Err(Error::MissingImages(missing));
            }
        }
        let summary = SplitSummary {
            split,
            n_records: manifest.len(),
            category_counts: manifest.category_counts(),
        };
        out.push((manifest, summary));
    }
    if out.is_empty() {
        return Err(Error::Config("no data splits configured".into()));
    }
    Ok(out)
}

fn cmd_ingest(cfg: &RunConfig, check_images: bool, out: &mut dyn Write) -> Result<()> {
    let splits = ingest(cfg, check_images)?;
    let dir = cfg.output.dir.join("manifests");
    mkdir(&dir)?;
    for (manifest, s) in &splits {
        let path = dir.join(format!("{}.csv", s.split));
        std::fs::write(&path, manifest.to_csv()).map_err(|e| Error::io(&path, e))?;
        writeln!(out, "{}: {} records", s.split, s.n_records).map_err(io_err)?;
        let counts: Vec<String> = Category::ALL
            .iter()
            .zip(s.category_counts)
            .map(|(c, n)| format!("{}={n}", c.code()))
            .collect();
        writeln!(out, "  {}", counts.join(" ")).map_err(io_err)?;
    }
    Ok(())
}

fn describe_plan(plan: &SchedulePlan, out: &mut dyn Write) -> Result<()> {
    let spe = plan.steps_per_epoch();
    let restarts: Vec<String> = restart_steps(plan)
        .iter()
        .map(|s| (s / spe).to_string())
        .collect();
    writeln!(out, "steps per epoch: {spe}").map_err(io_err)?;
    for (i, p) in plan.phases().iter().enumerate() {
        let lens: Vec<String> = crate::schedule::cycle_boundaries(p)
            .iter()
            .map(|l| l.to_string())
            .collect();
        writeln!(
            out,
            "phase {i}: cycles [{}] epochs, frozen groups {:?}, peak lr per group {:?}",
            lens.join(", "),
            p.frozen_groups,
            std::array::from_fn::<f64, 3, _>(|g| if p.is_frozen(g) { 0.0 } else { p.base_lr / p.group_divisors[g] })
        )
        .map_err(io_err)?;
    }
    writeln!(out, "total epochs: {}", plan.total_epochs()).map_err(io_err)?;
    writeln!(out, "total cycles: {}", plan.cycles().len()).map_err(io_err)?;
    writeln!(out, "total steps: {}", plan.total_steps()).map_err(io_err)?;
    writeln!(out, "restart epochs: {{{}}}", restarts.join(",")).map_err(io_err)?;
    Ok(())
}

fn train_size(cfg: &RunConfig, n_train: Option<usize>) -> Result<usize> {
    match n_train {
        Some(n) if n > 0 => Ok(n),
        Some(_) => Err(Error::Config("--n-train must be positive".into())),
        None if cfg.data.train.is_some() => Ok(cfg.data.read_manifest(Split::Train)?.len()),
        None => Err(Error::Config(
            "no training manifest configured; pass --n-train to size the plan".into(),
        )),
    }
}

fn cmd_dry_run(cfg: &RunConfig, n_train: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let plan = cfg.train.plan(train_size(cfg, n_train)?)?;
    describe_plan(&plan, out)
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let manifest = cfg.data.read_manifest(Split::Train)?;
    let model = build_model(&cfg.model.backbone, &cfg.model.head, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.seed, manifest, source_for(cfg))?;
    if let Some(path) = resume {
        trainer = trainer.resume(load_checkpoint(path)?)?;
        writeln!(out, "resumed at step {}", trainer.state().global_step).map_err(io_err)?;
    }
    describe_plan(trainer.plan(), out)?;
    let outputs = run_recipe(&mut trainer, &cfg.output.dir)?;
    let state = trainer.state();
    writeln!(
        out,
        "final training loss: {:.4} (last step), {:.4} (last-epoch mean)",
        state.final_loss().unwrap_or(f64::NAN),
        state.final_epoch_mean_loss().unwrap_or(f64::NAN)
    )
    .map_err(io_err)?;
    for (i, s) in outputs.phase_seconds.iter().enumerate() {
        writeln!(out, "phase {i} time: {s:.1}s").map_err(io_err)?;
    }
    writeln!(out, "loss log: {}", outputs.loss_csv.display()).map_err(io_err)?;
    writeln!(out, "schedule: {}", outputs.schedule_csv.display()).map_err(io_err)?;
    writeln!(out, "checkpoint: {}", outputs.final_checkpoint.display()).map_err(io_err)?;
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    tta: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let manifest = cfg.data.read_manifest(split)?;
    let source = source_for(cfg);
    mkdir(&cfg.output.dir)?;
    let mut variants = vec![false];
    if tta {
        variants.push(true);
    }
    for use_tta in variants {
        let eval = evaluate(&model, &manifest, source.as_ref(), &cfg.eval_settings(use_tta))?;
        let tag = if use_tta { "tta" } else { "plain" };
        let report_path = cfg.output.dir.join(format!("report_{split}_{tag}.json"));
        eval.report.write_json(&report_path)?;
        let pred_path = cfg.output.dir.join(format!("predictions_{split}_{tag}.csv"));
        write_predictions_file(&eval.predictions, &pred_path)?;
        print_report(&eval.report, tag, out)?;
    }
    Ok(())
}

fn print_report(report: &EvaluationReport, tag: &str, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{tag}: balanced accuracy {:.4} over {} records",
        report.balanced_accuracy, report.n_records
    )
    .map_err(io_err)
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: &Path,
    image_path: &Path,
    tta: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let raw = load_and_resize(image_path, cfg.data.image_size)?;
    let pred = if tta {
        let id = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut rng = tta_rng(cfg.seed, &id);
        tta_predict(&model, &raw, cfg.eval.n_aug, &cfg.train.augmentation, &mut rng)?
    } else {
        predict(&model, &crate::dataset::imagenet_normalize(&raw)?)?
    };
    for (c, p) in Category::ALL.iter().zip(pred.probs) {
        writeln!(out, "{}\t{p:.6}", c.code()).map_err(io_err)?;
    }
    writeln!(out, "predicted\t{}", pred.category().code()).map_err(io_err)?;
    Ok(())
}

fn read_schedule_csv(path: &Path) -> Result<Vec<ScheduleRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ScheduleRow>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

/// Number of cycle starts visible in a schedule table: the first row plus
/// every row where the top-group rate jumps upward.
pub fn count_restarts(rows: &[ScheduleRow]) -> usize {
    let jumps = rows.windows(2).filter(|w| w[1].lr_g2 > w[0].lr_g2 && w[1].cycle != w[0].cycle).count();
    usize::from(!rows.is_empty()) + jumps
}

fn cmd_plot(
    cfg: &RunConfig,
    loss: Option<&Path>,
    schedule: Option<&Path>,
    n_train: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let fig_dir = cfg.output.dir.join("figures");
    mkdir(&fig_dir)?;
    let fmt = |e: csv::Error| Error::Format(e.to_string());

    let loss_path = loss
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.join("loss.csv"));
    if loss.is_some() || loss_path.exists() {
        let text = std::fs::read_to_string(&loss_path).map_err(|e| Error::io(&loss_path, e))?;
        let history = read_loss_csv(&text)?;
        let path = fig_dir.join("loss.csv");
        crate::trainer::write_loss_file(&history, &path)?;
        writeln!(out, "loss curve: {} ({} points)", path.display(), history.len()).map_err(io_err)?;
    }

    let rows = match schedule {
        Some(p) => read_schedule_csv(p)?,
        None => crate::schedule::emit_schedule_table(&cfg.train.plan(train_size(cfg, n_train)?)?),
    };
    let n_phases = rows.iter().map(|r| r.phase).max().unwrap_or(0) + 1;
    for phase in 0..n_phases {
        let sel: Vec<&ScheduleRow> = rows.iter().filter(|r| r.phase == phase).collect();
        let Some(first) = sel.first() else { continue };
        let path = fig_dir.join(format!("lr_phase{}.csv", phase + 1));
        let mut w = csv::Writer::from_path(&path).map_err(fmt)?;
        w.write_record(["step", "phase_step", "group", "lr"]).map_err(fmt)?;
        for r in &sel {
            for (g, lr) in [r.lr_g0, r.lr_g1, r.lr_g2].into_iter().enumerate() {
                w.write_record(&[
                    r.step.to_string(),
                    (r.step - first.step).to_string(),
                    g.to_string(),
                    lr.to_string(),
                ])
                .map_err(fmt)?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let owned: Vec<ScheduleRow> = sel.iter().map(|r| **r).collect();
        let max = |f: fn(&ScheduleRow) -> f64| owned.iter().map(f).fold(0.0, f64::max);
        writeln!(
            out,
            "phase {} learning rates: {} ({} restarts, max per group [{:e}, {:e}, {:e}])",
            phase + 1,
            path.display(),
            count_restarts(&owned),
            max(|r| r.lr_g0),
            max(|r| r.lr_g1),
            max(|r| r.lr_g2)
        )
        .map_err(io_err)?;
    }
    writeln!(out, "total restarts: {}", count_restarts(&rows)).map_err(io_err)?;
    Ok(())
}

fn cmd_fixture(dir: &Path, out: &mut dyn Write) -> Result<()> {
    let fixtures = crate::toy::write_toy_dataset(dir, 0)?;
    let mut cfg = crate::toy::toy_config(dir, &fixtures);
    // Store paths relative to the config file so the directory can move.
    let rel = |p: &Path| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    cfg.data.image_root = rel(&cfg.data.image_root);
    for s in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.data.test]
        .into_iter()
        .flatten()
    {
        s.manifest = rel(&s.manifest);
    }
    cfg.output.dir = rel(&cfg.output.dir);
    let path = dir.join("toy.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    writeln!(out, "wrote {} images and {}", 3 * 14, path.display()).map_err(io_err)?;
    Ok(())
}
