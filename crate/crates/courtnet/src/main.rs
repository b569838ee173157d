//! Command-line surface: dataset generation, training, evaluation,
//! detection, gradient checking, and the probe/FFT analysis tools.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use courtnet::analysis::{
    collect_feature_series, dft_power, dump_attention, read_series_csv, write_heatmap_pgm,
    write_series_csv, write_spectrum_csv, write_summary_csv,
};
use courtnet::checks::run_grad_suite;
use courtnet::config::RunConfig;
use courtnet::data::{
    generate_dataset, generate_probe_set, load_dataset, read_pgm, write_dataset, write_pgm,
};
use courtnet::metrics::dataset_metrics;
use courtnet::model::{binarize, CourtNet};
use courtnet::train::{load_checkpoint, save_checkpoint, Trainer};
use courtnet::{Error, Result};

#[derive(Parser)]
#[command(name = "courtnet", about = "Three-network infrared small-target detector")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (random scenes or the ordered probe set)
    Generate {
        /// key=value config file (defaults when omitted)
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// emit the ordered probe set instead of random scenes
        #[arg(long, conflicts_with = "random")]
        probe: bool,
        #[arg(long)]
        random: bool,
        /// number of random scenes
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// overrides scene.seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the three networks on a manifested dataset
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// manifest.tsv of the training set
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// overrides loss.gamma
        #[arg(long)]
        gamma: Option<u32>,
        /// overrides train.epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// resume from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// train prosecution and defendant only; fusion falls back to the mean
        #[arg(long)]
        no_jury: bool,
    },
    /// Evaluate a checkpoint against a manifested dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// binarization threshold (checkpoint default when omitted)
        #[arg(long)]
        threshold: Option<f64>,
        /// metrics CSV destination
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Emit the binary detection mask for one image
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite
    Gradcheck,
    /// Attention dumps and the feature series over the probe set
    ProbeAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// manifest.tsv of a probe set (frame order defines patch/slot)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Power spectrum and dominant period of a feature series
    Fft {
        /// series CSV as written by probe-attention
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Data(_) | Error::Io(_) => 3,
                Error::Numeric(_) => 4,
            })
        }
    }
}

fn load_run_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_effective_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective_config.txt"), cfg.echo())?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate {
            spec,
            out,
            probe,
            random,
            count,
            seed,
        } => {
            let mut cfg = load_run_config(&spec)?;
            if let Some(s) = seed {
                cfg.scene.seed = s;
            }
            if !probe && !random {
                return Err(Error::Config("pass --probe or --random".into()));
            }
            let samples = if probe {
                generate_probe_set(&cfg.probe)?
            } else {
                generate_dataset(&cfg.scene, count)?
            };
            let manifest = write_dataset(&out, &samples)?;
            write_effective_config(&out, &cfg)?;
            let targets: usize = samples
                .iter()
                .map(|s| s.mask.data().iter().filter(|&&v| v == 1.0).count())
                .sum();
            println!(
                "wrote {} frames ({} target pixels) to {}",
                samples.len(),
                targets,
                manifest.display()
            );
            Ok(())
        }
        Cmd::Train {
            config,
            data,
            out,
            gamma,
            epochs,
            resume,
            no_jury,
        } => {
            let mut cfg = load_run_config(&config)?;
            if let Some(g) = gamma {
                cfg.loss.gamma = g;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if no_jury {
                cfg.use_jury = false;
            }
            let dataset = load_dataset(&data)?;
            if dataset.is_empty() {
                return Err(Error::Data(format!("{}: empty dataset", data.display())));
            }
            let mut trainer = match &resume {
                Some(p) => load_checkpoint(p, cfg.train())?,
                None => Trainer::new(CourtNet::new(cfg.model()?, cfg.seed)?, cfg.train()),
            };
            std::fs::create_dir_all(&out)?;
            write_effective_config(&out, &cfg)?;
            let log = out.join("log.csv");
            let ckpt = out.join("checkpoint.cnt");
            while trainer.epoch < cfg.epochs as u64 {
                let stats = trainer.train_epoch(&dataset)?;
                stats.append_log(&log)?;
                save_checkpoint(&ckpt, &trainer)?;
                println!(
                    "epoch {} loss_p {:.4} loss_d {:.4} loss_j {:.4} pr {:.3} re {:.3} lr {:.2e}",
                    stats.epoch, stats.loss_p, stats.loss_d, stats.loss_j, stats.soft_pr,
                    stats.soft_re, stats.lr
                );
            }
            println!("checkpoint: {}", ckpt.display());
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            data,
            threshold,
            report,
        } => {
            let trainer = load_checkpoint(&checkpoint, Default::default())?;
            let net = &trainer.net;
            let thresh = threshold.unwrap_or(net.cfg.threshold);
            let dataset = load_dataset(&data)?;
            if dataset.is_empty() {
                return Err(Error::Data(format!("{}: empty dataset", data.display())));
            }
            let (h, w) = (net.cfg.embed.image_h, net.cfg.embed.image_w);
            let mut items = Vec::with_capacity(dataset.len());
            for (i, s) in dataset.iter().enumerate() {
                let x = s.image.reshape(vec![1, 1, h, w]);
                let det = net.detect(&x, trainer.cfg.use_jury);
                items.push((
                    format!("{i:05}"),
                    binarize(&det.fused, thresh).reshape(vec![h, w]),
                    s.mask.clone(),
                ));
            }
            let rep = dataset_metrics(&items, false)?;
            if let Some(p) = &report {
                rep.write_csv(p)?;
            }
            println!(
                "mean precision {:.4} recall {:.4} f1 {:.4}",
                rep.mean_precision, rep.mean_recall, rep.mean_f1
            );
            Ok(())
        }
        Cmd::Detect {
            checkpoint,
            image,
            out,
        } => {
            let trainer = load_checkpoint(&checkpoint, Default::default())?;
            let net = &trainer.net;
            let img = read_pgm(&image)?;
            let (h, w) = (net.cfg.embed.image_h, net.cfg.embed.image_w);
            if img.shape() != [h, w] {
                return Err(Error::Data(format!(
                    "{}: image is {:?}, model wants {}x{}",
                    image.display(),
                    img.shape(),
                    h,
                    w
                )));
            }
            let det = net.detect(&img.reshape(vec![1, 1, h, w]), trainer.cfg.use_jury);
            write_pgm(&out, &det.mask.reshape(vec![h, w]))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Gradcheck => {
            let results = run_grad_suite();
            let mut worst: Option<&courtnet::checks::CheckResult> = None;
            let mut failed = 0;
            for res in &results {
                println!(
                    "{:35} rel err {:.3e} (tol {:.0e}) {}",
                    res.name,
                    res.err,
                    res.tol,
                    if res.passed() { "ok" } else { "FAIL" }
                );
                if !res.passed() {
                    failed += 1;
                }
                if worst.map_or(true, |w| res.err / res.tol > w.err / w.tol) {
                    worst = Some(res);
                }
            }
            if let Some(w) = worst {
                println!("worst: {} at {:.3e}", w.name, w.err);
            }
            if failed > 0 {
                return Err(Error::Numeric(format!(
                    "{failed} of {} gradient checks failed",
                    results.len()
                )));
            }
            Ok(())
        }
        Cmd::ProbeAttention {
            checkpoint,
            data,
            out,
        } => {
            let trainer = load_checkpoint(&checkpoint, Default::default())?;
            let net = &trainer.net;
            let mut frames = load_dataset(&data)?;
            let expect = net.cfg.embed.patch_count() * 9;
            if frames.len() != expect {
                return Err(Error::Data(format!(
                    "{}: {} frames, probe set for this model has {}",
                    data.display(),
                    frames.len(),
                    expect
                )));
            }
            // manifests carry no metadata; probe order defines it
            for (t, f) in frames.iter_mut().enumerate() {
                f.probe_pos = Some((t / 9, t % 9));
            }
            std::fs::create_dir_all(&out)?;
            let series = collect_feature_series(net, &frames)?;
            write_series_csv(&out.join("series.csv"), &series)?;
            let (h, w) = (net.cfg.embed.image_h, net.cfg.embed.image_w);
            let mut argmax_rows = String::from("frame,target_patch,summary_argmax\n");
            for (t, f) in frames.iter().enumerate() {
                let dump = dump_attention(net, &f.image.reshape(vec![1, 1, h, w]));
                if t == 0 {
                    write_summary_csv(&out.join("summary_frame0.csv"), &dump.summary)?;
                    write_heatmap_pgm(&out.join("summary_frame0.pgm"), &dump.summary)?;
                }
                let am = dump
                    .summary
                    .data()
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                argmax_rows.push_str(&format!("{},{},{}\n", t, t / 9, am));
            }
            std::fs::write(out.join("summary_argmax.csv"), argmax_rows)?;
            println!("wrote probe analysis to {}", out.display());
            Ok(())
        }
        Cmd::Fft { series, out } => {
            let s = read_series_csv(&series)?;
            let spec = dft_power(&s.features)?;
            write_spectrum_csv(&out, &spec)?;
            match spec.dominant_period {
                Some(p) => println!("dominant period: {p}"),
                None => println!("dominant period: none"),
            }
            Ok(())
        }
    }
}
