use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use digitrec::audio::read_wav;
use digitrec::augmentation::{expand_dataset, NoiseBank, NoiseCategory};
use digitrec::config::RunConfig;
use digitrec::data::{load_manifest, load_noise_dir, save_manifest, synth_digit_dataset, Manifest, Split};
use digitrec::features::{add_deltas, write_features, Mfcc};
use digitrec::model::{load_checkpoint, predict, save_checkpoint, Checkpoint, CheckpointMeta};
use digitrec::training::{
    assign_splits, evaluate, load_clips, snr_sweep, train, write_report, Dataset, Datasets,
};
use digitrec::{Error, Result};

/// Spoken digit recognition pipeline.
#[derive(Parser)]
#[command(name = "digitrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic digit corpus with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16_000)]
        rate: u32,
    },
    /// Expand a manifest with noise, speed and room augmentations.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config whose `policy` section is used.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Dump 39-coefficient feature files (MFCC + deltas) per entry.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint with reports.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Accuracy and confusion matrix of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write the confusion matrix here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one WAV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        file: PathBuf,
    },
    /// Accuracy under added noise per category and SNR level.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated SNR levels in dB.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        snr: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<NoiseCategory>>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (default: CHECKPOINT/snr_sweep.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        noise: NoiseArgs,
    },
}

#[derive(Args)]
struct NoiseArgs {
    /// Directory of recorded noise, `<category>/*.wav`.
    #[arg(long)]
    noise_dir: Option<PathBuf>,
}

impl NoiseArgs {
    fn bank(&self) -> Result<NoiseBank> {
        match &self.noise_dir {
            Some(dir) => load_noise_dir(dir),
            None => Ok(NoiseBank::synthetic()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Entries of `split`, recomputing the assignment from the checkpoint when
/// the manifest carries none.
fn split_of(manifest: &Manifest, meta: &CheckpointMeta, split: Split) -> Result<Manifest> {
    let assigned = if manifest.has_splits() {
        manifest.clone()
    } else {
        assign_splits(manifest, meta.split_ratios, meta.seed)?
    };
    let part = assigned.filter_split(split);
    if part.is_empty() {
        return Err(Error::InvalidConfig(format!("manifest has no {split} entries")));
    }
    Ok(part)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            per_class,
            seed,
            rate,
        } => {
            if per_class == 0 {
                return Err(Error::InvalidConfig("--per-class must be at least 1".into()));
            }
            let m = synth_digit_dataset(per_class, rate, seed, &out)?;
            println!("wrote {} clips to {}", m.len(), out.join("manifest.jsonl").display());
        }
        Command::Augment {
            manifest,
            out,
            factor,
            seed,
            policy,
            noise,
        } => {
            let m = load_manifest(&manifest)?;
            let policy = load_config(policy.as_deref())?.policy;
            let expanded = expand_dataset(&m, &policy, factor, &out, seed, &noise.bank()?)?;
            let path = out.join("manifest.jsonl");
            save_manifest(&path, &expanded)?;
            println!("wrote {} entries to {}", expanded.len(), path.display());
        }
        Command::Featurize { manifest, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let m = load_manifest(&manifest)?;
            let mfcc = Mfcc::new(&cfg.mfcc)?;
            for e in &m.entries {
                let src = m.resolve(e);
                let dest = out.join(Path::new(&e.path).with_extension("mfcc"));
                if let Some(parent) = dest.parent() {
                    std::fs::create_dir_all(parent).map_err(|err| Error::Io {
                        path: parent.to_path_buf(),
                        source: err,
                    })?;
                }
                read_wav(&src)
                    .and_then(|clip| {
                        let clip = if clip.rate == cfg.mfcc.rate {
                            clip
                        } else {
                            digitrec::audio::resample(&clip, cfg.mfcc.rate)?
                        };
                        write_features(&dest, &add_deltas(&mfcc.compute(&clip)?))
                    })
                    .map_err(|err| err.in_entry(src.display().to_string()))?;
            }
            println!("wrote {} feature files to {}", m.len(), out.display());
        }
        Command::Train {
            manifest,
            config,
            out,
            seed,
            epochs,
            batch_size,
            lr,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.hyper.seed = s;
            }
            if let Some(e) = epochs {
                cfg.hyper.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.hyper.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.hyper.lr = l;
            }
            cfg.validate()?;
            let m = load_manifest(&manifest)?;
            let meta = CheckpointMeta {
                seed: cfg.hyper.seed,
                split_ratios: cfg.hyper.split_ratios,
                ..Default::default()
            };
            let mfcc = Mfcc::new(&cfg.mfcc)?;
            let load = |s| -> Result<Dataset> {
                let part = if m.has_splits() {
                    m.filter_split(s)
                } else {
                    assign_splits(&m, meta.split_ratios, meta.seed)?.filter_split(s)
                };
                Dataset::from_manifest(&part, &mfcc)
            };
            let (tr, va, te) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
            let outcome = train(
                &cfg,
                &Datasets {
                    train: &tr,
                    val: &va,
                    test: Some(&te),
                },
            )?;
            let report = &outcome.report;
            let best = &report.epochs[report.best_epoch - 1];
            let mut meta = meta;
            meta.epoch = report.best_epoch;
            meta.metrics.insert("train_acc".into(), best.train_acc);
            meta.metrics.insert("val_acc".into(), best.val_acc);
            let confusion_set = if te.is_empty() { &va } else { &te };
            let eval = evaluate(&outcome.params, &cfg.model, confusion_set)?;
            if let Some(t) = report.test_acc {
                meta.metrics.insert("test_acc".into(), t);
            }
            save_checkpoint(&out, &outcome.params, &cfg.model, &cfg.mfcc, &meta)?;
            write_report(&out, report)?;
            write_text(&out.join("confusion.csv"), &eval.confusion.to_csv())?;
            println!(
                "best epoch {} val_acc={} test_acc={}",
                report.best_epoch,
                best.val_acc,
                report.test_acc.map_or("n/a".into(), |t| t.to_string())
            );
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let Checkpoint {
                params,
                config,
                mfcc,
                meta,
            } = load_checkpoint(&checkpoint)?;
            let part = split_of(&load_manifest(&manifest)?, &meta, split)?;
            let data = Dataset::from_manifest(&part, &Mfcc::new(&mfcc)?)?;
            let eval = evaluate(&params, &config, &data)?;
            println!("split={split} n={} accuracy={}", data.len(), eval.accuracy);
            print!("{}", eval.confusion.to_csv());
            if let Some(path) = out {
                write_text(&path, &eval.confusion.to_csv())?;
            }
        }
        Command::Predict { checkpoint, file } => {
            let ck = load_checkpoint(&checkpoint)?;
            let clip = read_wav(&file).map_err(|e| e.in_entry(file.display().to_string()))?;
            let p = predict(&ck.params, &ck.config, &Mfcc::new(&ck.mfcc)?, &clip)?;
            let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
            println!("digit={} probs=[{}]", p.digit, probs.join(","));
        }
        Command::Sweep {
            checkpoint,
            manifest,
            snr,
            categories,
            split,
            seed,
            out,
            noise,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let part = split_of(&load_manifest(&manifest)?, &ck.meta, split)?;
            let clips = load_clips(&part)?;
            let levels = snr.unwrap_or_else(|| vec![0.0, 5.0, 10.0, 15.0, 20.0]);
            let categories = categories.unwrap_or_else(|| NoiseCategory::ALL.to_vec());
            let table = snr_sweep(
                &ck.params,
                &ck.config,
                &Mfcc::new(&ck.mfcc)?,
                &clips,
                &categories,
                &levels,
                &noise.bank()?,
                seed.unwrap_or(ck.meta.seed),
            )?;
            let path = out.unwrap_or_else(|| checkpoint.join("snr_sweep.csv"));
            write_text(&path, &table.to_csv())?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
