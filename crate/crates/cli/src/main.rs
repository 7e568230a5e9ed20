use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use skrleak_core::experiment::config::{seeds_from_root, ExperimentConfig, HistogramMode};
use skrleak_core::experiment::histogram::{write_histogram_file, CacheKey, HistogramCache};
use skrleak_core::experiment::sweep::{to_csv, Cutoffs};
use skrleak_core::experiment::{run_oracle_suite, run_sweep_with_cache};

/// Secret key rates with multi-photon leakage accounting.
#[derive(Parser, Debug)]
#[command(name = "skrleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep distances and write the rate CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Directory for histogram cache files.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Run the leakage-model oracle suite; exits non-zero on any violation.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Measure one Cascade block-length histogram.
    Histogram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        qber: f64,
        #[arg(long, default_value_t = 100_000)]
        n_bits: usize,
        /// Number of Cascade runs to average.
        #[arg(long, default_value_t = 4)]
        runs: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; replaces the seed list with one derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Histogram mode: `measured` or `normalized-f1`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<HistogramMode>,
}

fn parse_mode(s: &str) -> std::result::Result<HistogramMode, String> {
    s.parse().map_err(|e: skrleak_core::error::Error| e.to_string())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let Some(path) = &self.config else { bail!("--config is required") };
        let mut config =
            ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seeds = seeds_from_root(seed, config.seeds.len());
        }
        if let Some(mode) = self.mode {
            config.histogram_mode = mode;
        }
        if let Some(out) = &self.out {
            config.output_path = Some(out.clone());
        }
    }
}

fn write_output(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sweep { common, cache_dir } => {
            let config = common.load()?;
            let cache = match cache_dir {
                Some(dir) => HistogramCache::with_dir(dir),
                None => HistogramCache::new(),
            };
            let rows = run_sweep_with_cache(&config, &cache)?;
            if config.output_path.is_none() {
                print!("{}", to_csv(&rows));
            }
            let cut = Cutoffs::of(&rows);
            info!(
                "cutoff original={:?} km improved={:?} km",
                cut.original_km, cut.improved_km
            );
            Ok(true)
        }
        Command::Oracle { common } => {
            let config = common.load()?;
            let report = run_oracle_suite(&config, common.seed.unwrap_or(0))?;
            write_output(config.output_path.as_ref(), &format!("{report}\n"))?;
            Ok(report.passed())
        }
        Command::Histogram { common, qber, n_bits, runs } => {
            // A config supplies n_bits, seeds and mode; flags override it.
            let (n_bits, seeds, mode) = match &common.config {
                Some(_) => {
                    let c = common.load()?;
                    (c.n_bits, c.seeds, c.histogram_mode)
                }
                None => (
                    n_bits,
                    seeds_from_root(common.seed.unwrap_or(0), runs),
                    common.mode.unwrap_or(HistogramMode::NormalizedF1),
                ),
            };
            let key = CacheKey::new(qber, n_bits, &seeds, mode);
            let hist = HistogramCache::new().get_or_measure(&key)?;
            let mut buf = Vec::new();
            write_histogram_file(&mut buf, &key, &hist)?;
            write_output(common.out.as_ref(), &String::from_utf8(buf)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
