use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcpmod::datakit::{
    apply_missing, inject_outliers, load_dataset, save_dataset, synthesize, OutlierRatios,
};
use rcpmod::detection::{histogram_csv, score_histogram};
use rcpmod::training::{
    check_fixture, load_scores, run_experiment, score_dataset, sweep, write_artifacts,
    CheckedTerm, Checkpoint, TrainConfig,
};
use rcpmod::{Error, RngStream};

#[derive(Parser)]
#[command(name = "rcpmod", version, about = "Outlier detection in partial multi-view data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set eta=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> rcpmod::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clean synthetic dataset from the `synth_*` keys.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject attribute, class and class-attribute outliers.
    Inject {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        rho1: f64,
        #[arg(long, default_value_t = 0.05)]
        rho2: f64,
        #[arg(long, default_value_t = 0.05)]
        rho3: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip min-max scaling (data already lies in [0, 1]).
        #[arg(long)]
        no_normalize: bool,
    },
    /// Drop one view from a fraction of the instances.
    Mask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train, score and write all artifacts.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// AUC of a scores.csv that carries labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// One experiment per value of a config key.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(command: Command) -> rcpmod::Result<bool> {
    match command {
        Command::Synth { config, out } => {
            let cfg = config.resolve()?;
            let ds = synthesize(
                cfg.synth_clusters,
                &cfg.synth_dims,
                cfg.synth_n,
                cfg.synth_noise,
                &mut RngStream::new(cfg.seed),
            )?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote {} instances to {}", ds.num_instances(), out.display());
        }
        Command::Inject {
            data,
            out,
            rho1,
            rho2,
            rho3,
            seed,
            no_normalize,
        } => {
            let mut ds = load_dataset(&data)?;
            if !no_normalize {
                ds.normalize();
            }
            inject_outliers(&mut ds, OutlierRatios::new(rho1, rho2, rho3)?, &RngStream::new(seed))?;
            save_dataset(&ds, &out)?;
        }
        Command::Mask {
            data,
            out,
            rate,
            seed,
        } => {
            let mut ds = load_dataset(&data)?;
            apply_missing(&mut ds, rate, &mut RngStream::new(seed))?;
            save_dataset(&ds, &out)?;
        }
        Command::Train { config, out } => {
            let cfg = config.resolve()?;
            let result = run_experiment(&cfg)?;
            write_artifacts(&result, &out)?;
            print_json(&rcpmod::training::Metrics::from_result(&result));
        }
        Command::Score {
            checkpoint,
            data,
            out,
        } => score(&checkpoint, &data, &out)?,
        Command::Eval { scores } => {
            let report = load_scores(&scores)?;
            print_json(&serde_json::json!({
                "auc": report.auc,
                "per_type_auc": report.per_type_auc,
                "instances": report.rows.len(),
            }));
        }
        Command::Sweep {
            config,
            key,
            values,
            out,
        } => {
            let rows = sweep(&config.resolve()?, &key, &values, Some(&out))?;
            print!("{}", rcpmod::training::sweep_csv(&key, &rows));
        }
        Command::Gradcheck {
            seeds,
            step,
            tolerance,
        } => {
            let mut ok = true;
            for term in CheckedTerm::ALL {
                let mut worst = 0.0f64;
                for seed in 0..seeds {
                    worst = worst.max(check_fixture(term, seed, &[3], step)?.max_rel_error);
                }
                let pass = worst <= tolerance;
                ok &= pass;
                println!("{:<16} max relative error {worst:.3e} {}", term.name(), if pass { "ok" } else { "FAIL" });
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn score(checkpoint: &Path, data: &Path, out: &Path) -> rcpmod::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = ck.train_config()?;
    let mut ds = load_dataset(data)?;
    if cfg.normalize {
        ds.normalize();
    }
    let (report, _) = score_dataset(&ck.stack, &ds, cfg.k, cfg.tau)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    };
    write("scores.csv", report.to_csv())?;
    write("histogram.csv", histogram_csv(&score_histogram(&report, 20)))?;
    print_json(&serde_json::json!({
        "auc": report.auc,
        "per_type_auc": report.per_type_auc,
        "config_hash": ck.config_hash,
        "instances": report.rows.len(),
    }));
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
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
