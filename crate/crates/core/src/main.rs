use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use superfeed::harness::{self, ExperimentConfig, OneOrMany, Which};
use superfeed::pipeline::Scheme;
use superfeed::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "superfeed", version, about = "Superimposed 1-bit CSI feedback simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a channel-pair dataset.
    Gen(Common),
    /// Train one of the amplitude networks.
    Train {
        #[arg(long, value_enum)]
        which: WhichArg,
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte-Carlo parameter sweep and write a CSV.
    Sweep(Common),
    /// Time single-threaded recoveries and write a CSV.
    Bench(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WhichArg {
    Ampl,
    Ampf,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "snr-db", value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    /// proposed, ref_y1 or ref_r1_tdm; comma separated.
    #[arg(long, value_delimiter = ',')]
    scheme: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the sweep (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn many<T>(mut v: Vec<T>) -> OneOrMany<T> {
    if v.len() == 1 {
        OneOrMany::One(v.remove(0))
    } else {
        OneOrMany::Many(v)
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.snr_db {
            cfg.snr_db = v.clone();
        }
        if let Some(v) = &self.rho {
            cfg.rho = many(v.clone());
        }
        if let Some(v) = &self.c {
            cfg.c = many(v.clone());
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = &self.scheme {
            let parsed = v.iter().map(|s| Scheme::parse(s)).collect::<Result<Vec<_>>>()?;
            cfg.scheme = many(parsed);
        }
        if let Some(v) = self.trials {
            cfg.n_trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }

    fn install_threads(&self) -> Result<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => {
            common.install_threads()?;
            let cfg = common.config()?;
            let s = harness::cmd_gen(&cfg, &common.out)?;
            println!(
                "wrote {} channel pairs to {} (seed {}, sha256 {})",
                s.count,
                common.out.display(),
                s.seed,
                s.digest
            );
        }
        Command::Train { which, common } => {
            common.install_threads()?;
            let cfg = common.config()?;
            let which = match which {
                WhichArg::Ampl => Which::Ampl,
                WhichArg::Ampf => Which::Ampf,
            };
            let r = harness::cmd_train(&cfg, which, &common.out)?;
            println!(
                "trained {:?}: train loss {:.4e} -> {:.4e}, val loss {:.4e} -> {:.4e} (best epoch {}), saved {}",
                which,
                r.initial_train_loss,
                r.train_loss.last().copied().unwrap_or(f64::NAN),
                r.initial_val_loss.unwrap_or(f64::NAN),
                r.val_loss.last().copied().unwrap_or(f64::NAN),
                r.best_epoch,
                common.out.display()
            );
        }
        Command::Sweep(common) => {
            common.install_threads()?;
            let cfg = common.config()?;
            let result = harness::cmd_sweep(&cfg, &common.out)?;
            print!("{}", harness::describe_sweep(&result));
            println!("wrote {}", common.out.display());
        }
        Command::Bench(common) => {
            common.install_threads()?;
            let cfg = common.config()?;
            let report = harness::cmd_bench(&cfg, &common.out)?;
            for r in &report.records {
                println!(
                    "{:<11} c={:<4} it={:<3} mean {:>10.0} ns  {} flops",
                    r.scheme.name(),
                    r.c,
                    r.alpha_or_beta,
                    r.mean_recon_ns,
                    r.flops_per_recovery
                );
            }
            println!("wrote {}", common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
