//! Command-line entry point: dataset generation, pretraining, evaluation,
//! and ablation sweeps. Anything that affects results lives in the config
//! file; flags only carry paths. Exit codes: 2 config/usage, 3 I/O,
//! 4 numeric failure.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::time::Instant;
use tubesink::config::RunConfig;
use tubesink::data_io::{export_dataset, load_dataset};
use tubesink::error::{Error, Result};
use tubesink::eval::probe::{probe_encoder, ProbeReport};
use tubesink::eval::segmentation::{segmentation_benchmark, Regime, SegmentationReport};
use tubesink::nets::PhiArch;
use tubesink::synthetic::generate_dataset;
use tubesink::trainer::{train, write_metrics_csv, Objective, TrainState};

#[derive(Parser)]
#[command(name = "tubesink", version, about = "Masked video pretraining with optimal-transport cluster targets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on a dataset; writes checkpoint.ckpt and metrics.csv.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: linear probe or unsupervised segmentation.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Report JSON destination.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV summary destination.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Optional config overriding the default eval options.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Ablation sweep over one axis; writes a summary CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Probe,
    Segment,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    Prototypes,
    PhiArch,
    Loss,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TUBESINK_LOG")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => cmd_gen(&config, &out),
        Command::Pretrain { config, data, out } => cmd_pretrain(&config, &data, &out),
        Command::Eval { checkpoint, data, mode, out, csv, config } => {
            cmd_eval(&checkpoint, &data, mode, &out, csv.as_deref(), config.as_deref())
        }
        Command::Sweep { config, data, axis, out } => cmd_sweep(&config, &data, axis, &out),
    }
}

fn cmd_gen(config_path: &std::path::Path, out: &std::path::Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let clips = generate_dataset(&config.data.generator, config.data.clips)?;
    export_dataset(out, &config.data.generator, &clips)?;
    println!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn cmd_pretrain(config_path: &std::path::Path, data: &std::path::Path, out: &std::path::Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let (generator, clips) = load_dataset(data)?;
    std::fs::create_dir_all(out)?;

    let started = Instant::now();
    let (state, metrics) = train(&generator, &clips, config.train.clone())?;
    let elapsed = started.elapsed();

    let last = metrics.last().expect("training produced at least one step");
    if config.train.objective == Objective::FeatureL2 && last.feat_variance < 1e-4 {
        log::warn!("feature variance {} below 1e-4", last.feat_variance);
        eprintln!(
            "collapse warning: batch feature variance {:.3e} fell below 1e-4; \
             the raw feature-regression objective has found the trivial solution",
            last.feat_variance
        );
    }

    state.save(&out.join("checkpoint.ckpt"))?;
    write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    println!(
        "trained {} steps ({} epochs) in {:.1}s; final loss {:.6}",
        state.step,
        config.train.epochs,
        elapsed.as_secs_f64(),
        last.loss
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalReportDoc {
    schema_version: u32,
    mode: String,
    train_config: tubesink::trainer::TrainConfig,
    eval_config: tubesink::config::EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe: Option<ProbeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clustering: Option<SegmentationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overclustering: Option<SegmentationReport>,
}

fn cmd_eval(
    checkpoint: &std::path::Path,
    data: &std::path::Path,
    mode: EvalMode,
    out: &std::path::Path,
    csv: Option<&std::path::Path>,
    config_path: Option<&std::path::Path>,
) -> Result<()> {
    let state = TrainState::load(checkpoint)?;
    let (generator, clips) = load_dataset(data)?;
    if generator.channels != state.config.channels {
        return Err(Error::Config(format!(
            "checkpoint expects {} channels, dataset has {}",
            state.config.channels, generator.channels
        )));
    }
    state.config.geometry.validate_for(generator.frames, generator.height, generator.width)?;
    let eval_config = match config_path {
        Some(p) => RunConfig::load(p)?.eval,
        None => Default::default(),
    };

    let mut doc = EvalReportDoc {
        schema_version: 1,
        mode: match mode {
            EvalMode::Probe => "probe".into(),
            EvalMode::Segment => "segment".into(),
        },
        train_config: state.config.clone(),
        eval_config: eval_config.clone(),
        probe: None,
        clustering: None,
        overclustering: None,
    };
    let mut csv_text = String::new();

    match mode {
        EvalMode::Probe => {
            let report = probe_encoder(&clips, &state, &eval_config.probe, eval_config.test_every)?;
            csv_text.push_str("accuracy,train_clips,test_clips,classes\n");
            csv_text.push_str(&format!(
                "{},{},{},{}\n",
                report.accuracy, report.train_clips, report.test_clips, report.classes
            ));
            println!("probe accuracy: {:.4}", report.accuracy);
            doc.probe = Some(report);
        }
        EvalMode::Segment => {
            let mut seg = eval_config.segmentation.clone();
            seg.regime = Regime::Clustering;
            let clustering = segmentation_benchmark(&clips, &state, &seg)?;
            seg.regime = Regime::Overclustering;
            let overclustering = segmentation_benchmark(&clips, &state, &seg)?;
            csv_text.push_str("regime,clip_id,k_used,hungarian_miou,precision_miou\n");
            for (regime, report) in
                [("clustering", &clustering), ("overclustering", &overclustering)]
            {
                for c in &report.per_clip {
                    csv_text.push_str(&format!(
                        "{},{},{},{},{}\n",
                        regime, c.clip_id, c.k_used, c.hungarian_miou, c.precision_miou
                    ));
                }
            }
            println!(
                "segmentation mIoU (hungarian): clustering {:.4}, overclustering {:.4}",
                clustering.mean_hungarian_miou, overclustering.mean_hungarian_miou
            );
            doc.clustering = Some(clustering);
            doc.overclustering = Some(overclustering);
        }
    }

    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Parse(format!("report serialization failed: {e}")))?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, json)?;
    if let Some(csv_path) = csv {
        std::fs::write(csv_path, csv_text)?;
    }
    Ok(())
}

fn cmd_sweep(
    config_path: &std::path::Path,
    data: &std::path::Path,
    axis: SweepAxis,
    out: &std::path::Path,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let (generator, clips) = load_dataset(data)?;
    std::fs::create_dir_all(out)?;

    let mut rows = vec!["axis,cell,probe_accuracy,final_loss,final_feat_variance".to_string()];
    let mut run_cell = |axis_name: &str, cell: String, train_config: tubesink::trainer::TrainConfig| -> Result<()> {
        let (state, metrics) = train(&generator, &clips, train_config)?;
        let report = probe_encoder(&clips, &state, &config.eval.probe, config.eval.test_every)?;
        let last = metrics.last().expect("non-empty training run");
        println!("{axis_name}={cell}: probe accuracy {:.4}", report.accuracy);
        rows.push(format!(
            "{axis_name},{cell},{},{},{}",
            report.accuracy, last.loss, last.feat_variance
        ));
        Ok(())
    };

    match axis {
        SweepAxis::Prototypes => {
            for &k in &config.sweep.prototype_grid {
                let mut t = config.train.clone();
                t.objective = Objective::Sigma;
                t.prototype_count = k;
                run_cell("prototypes", k.to_string(), t)?;
            }
        }
        SweepAxis::PhiArch => {
            for arch in [PhiArch::Base, PhiArch::Shallower, PhiArch::Deeper, PhiArch::Wider] {
                let mut t = config.train.clone();
                t.objective = Objective::Sigma;
                t.phi.arch = arch;
                let name = format!("{arch:?}").to_lowercase();
                run_cell("phi_arch", name, t)?;
            }
        }
        SweepAxis::Loss => {
            for objective in [Objective::Sigma, Objective::PixelL2, Objective::FeatureL2] {
                let mut t = config.train.clone();
                t.objective = objective;
                let name = match objective {
                    Objective::Sigma => "sigma",
                    Objective::PixelL2 => "pixel_l2",
                    Objective::FeatureL2 => "feature_l2",
                };
                run_cell("loss", name.to_string(), t)?;
            }
        }
    }

    let csv_path = out.join("sweep.csv");
    std::fs::write(&csv_path, rows.join("\n") + "\n")?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
