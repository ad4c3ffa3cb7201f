use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use epir::config::RunConfig;
use epir::data::{cache_features, generate_synthetic, SynthSpec};
use epir::error::{Error, Result};
use epir::run::{load_dataset, load_features, train_run, LoadedRun};
use epir::train::{cost_report, instrumented_flops, prepare_samples, sweep, write_sweep_csv, SweepAxis};

#[derive(Parser)]
#[command(name = "epir", version, about = "Micro-expression recognition: feature caching, LOSO training, evaluation and cost reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=40`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute optical-flow features for a manifest and store them on disk
    Cache {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cache_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one model per held-out subject and write reports
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse and fill a feature cache instead of computing in memory
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-evaluate the checkpoints of a trained run
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Report directory, default `<run>/eval`
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Train and score a series of block counts or integration rates
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// num_blocks or integration_rate
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// CSV destination, default stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Parameter count and per-stage FLOPs of one forward pass
    Cost {
        /// Also count the operations of a real forward pass
        #[arg(long)]
        instrumented: bool,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic onset/apex dataset and its manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 6)]
        subjects: usize,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Dump the merge trace and selected tokens of a trained run
    Visualize {
        #[arg(long)]
        run: PathBuf,
        /// Sample to trace; without it only the selection dump is written
        #[arg(long)]
        sample: Option<String>,
        /// Output JSON, default stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write selected token indices for every sample here
        #[arg(long)]
        selected: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cache { manifest, cache_dir, config } => {
            let cfg = config.resolve()?;
            let m = load_dataset(&manifest, &cfg)?;
            let s = cache_features(&m, &cfg.feature, &cache_dir)?;
            println!("{}: {} written, {} already cached, {} failed", s.dir.display(), s.written, s.skipped, s.failures.len());
            for (id, ch) in &s.degenerate {
                println!("warning: {id}: constant channels {ch:?}");
            }
            for (id, msg) in &s.failures {
                println!("failed: {id}: {msg}");
            }
            if !s.failures.is_empty() && s.written + s.skipped == 0 {
                return Err(Error::Input("no sample could be processed".into()));
            }
        }
        Command::Train { manifest, out, cache_dir, config } => {
            let cfg = config.resolve()?;
            let r = train_run(&manifest, &cfg, &out, cache_dir.as_deref())?;
            println!("UF1 {:.4}  UAR {:.4}  ({})", r.uf1, r.uar, out.display());
        }
        Command::Eval { run, out, cache_dir } => {
            let loaded = LoadedRun::open(&run)?;
            let out = out.unwrap_or_else(|| run.join("eval"));
            let r = loaded.evaluate(&out, cache_dir.as_deref())?;
            println!("UF1 {:.4}  UAR {:.4}  ({})", r.uf1, r.uar, out.display());
        }
        Command::Sweep { manifest, axis, values, out, cache_dir, config } => {
            let mut cfg = config.resolve()?;
            let m = load_dataset(&manifest, &cfg)?;
            cfg.model.num_classes = m.num_classes();
            let features = load_features(&m, &cfg, cache_dir.as_deref())?;
            let samples = prepare_samples(&m, &features, &cfg.model.dnspt)?;
            let rows = sweep(axis, &values, &cfg.model, &cfg.train, &samples)?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))?;
        }
        Command::Cost { instrumented, json, config } => {
            let cfg = config.resolve()?;
            let report = cost_report(&cfg.model)?;
            let counted = if instrumented { Some(instrumented_flops(&cfg.model, cfg.train.seed)?) } else { None };
            if json {
                let mut v = serde_json::to_value(&report)?;
                if let Some(c) = counted {
                    v["instrumented_flops"] = c.total().into();
                }
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                println!("{:<28} {:>7} {:>14} {:>12}", "stage", "tokens", "matmul", "other");
                for s in &report.stages {
                    println!("{:<28} {:>7} {:>14} {:>12}", s.name, s.tokens, s.matmul_flops, s.other_flops);
                }
                println!("parameters          {}", report.param_count);
                println!("flops per sample    {}", report.flops_per_sample);
                println!("encoder flops       {}", report.encoder_flops());
                if let Some(c) = counted {
                    println!("instrumented flops  {}", c.total());
                }
            }
        }
        Command::Synth { out, classes, subjects, samples, seed, size } => {
            let spec = SynthSpec { size, ..SynthSpec::new(classes, subjects, samples, seed) };
            let m = generate_synthetic(&spec, &out)?;
            println!("{} samples, classes {:?}, manifest {}", m.len(), m.class_names, out.join("manifest.csv").display());
        }
        Command::Visualize { run, sample, out, selected, cache_dir } => {
            let loaded = LoadedRun::open(&run)?;
            if sample.is_none() && selected.is_none() {
                return Err(Error::Config("give --sample, --selected, or both".into()));
            }
            if let Some(id) = sample {
                let v = loaded.visualize(&id, cache_dir.as_deref())?;
                emit(out.as_deref(), &(serde_json::to_string_pretty(&v)? + "\n"))?;
            }
            if let Some(path) = selected {
                let dump = loaded.selected_tokens(cache_dir.as_deref())?;
                emit(Some(&path), &(serde_json::to_string_pretty(&dump)? + "\n"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
