use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use vlstm_cli::{
    cmd_baseline, cmd_fit_kernel, cmd_report, cmd_select, cmd_sweep, cmd_synth, cmd_train,
    ExperimentConfig, TrainArgs,
};
use vlstm_core::cells::{Architecture, BiasMode, GateCoupling};
use vlstm_core::sweep::Variant;
use vlstm_core::synthetic::VolPanel;

#[derive(Parser)]
#[command(name = "vlstm", version, about = "Multi-timescale LSTM volatility experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Realized-variance CSV (`date,symbol,rv[,ret]`).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a sum of exponentials to a power-law kernel; writes `tau,weight`.
    FitKernel {
        #[arg(long, value_parser = positive)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        lo: f64,
        #[arg(long, default_value_t = 1000.0, value_parser = positive)]
        hi: f64,
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// CSV path (default: `<out>/kernel.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a single model.
    Train {
        #[arg(long, default_value = "vlstm")]
        arch: Architecture,
        /// Timescales per dimension (default 1 for lstm, 2 otherwise).
        #[arg(long)]
        n_scales: Option<usize>,
        #[arg(long, default_value = "independent")]
        coupling: GateCoupling,
        #[arg(long, default_value_t = 3)]
        hidden: usize,
        #[arg(long, default_value_t = 40)]
        t_seq: usize,
        #[arg(long, default_value = "off")]
        bias: BiasMode,
        /// Run index combined with the base seed.
        #[arg(long, default_value_t = 0)]
        run: u64,
    },
    /// Run or resume the configured grid.
    Sweep,
    /// Apply the selection rule to the run log.
    Select,
    /// Write summary, ECDF and slice CSVs for the run log.
    Report,
    /// Score persistence and EMA-regression baselines.
    Baseline {
        /// Window length (default: config `baseline_t_seq`).
        #[arg(long)]
        t_seq: Option<usize>,
    },
    /// Write a synthetic long-memory volatility panel CSV.
    Synth {
        #[arg(long, default_value_t = 4)]
        symbols: usize,
        /// Also emit a `ret` column.
        #[arg(long)]
        returns: bool,
        /// CSV path (default: `<out>/synthetic_panel.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(_) => Err("must be a finite positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.parallelism {
        cfg.parallelism = p;
    }
    if let Some(lr) = common.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(e) = common.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(p) = common.patience {
        cfg.train.patience = p;
    }
    if let Some(b) = common.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.5}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    match cli.command {
        Command::FitKernel { alpha, lo, hi, n, csv } => {
            let path = csv.unwrap_or_else(|| cfg.output_dir.join("kernel.csv"));
            let fit = cmd_fit_kernel(alpha, lo, hi, n, &path)?;
            println!("sup relative error: {:.6e}", fit.sup_error);
            println!("wrote {}", path.display());
        }
        Command::Train { arch, n_scales, coupling, hidden, t_seq, bias, run } => {
            let variant = match (arch, n_scales) {
                (Architecture::Lstm, None | Some(1)) => Variant::lstm(),
                (Architecture::Lstm, Some(n)) => bail!("lstm has one timescale, got --n-scales {n}"),
                (Architecture::Vlstm, n) => Variant::vlstm(n.unwrap_or(2), coupling),
                (Architecture::MsGru, n) => Variant::msgru(n.unwrap_or(2)),
            };
            let rec = cmd_train(&cfg, &TrainArgs { variant, hidden, t_seq, bias, run })?;
            println!(
                "{}: epochs {} (best {}), stop {:?}, train {} val {} test {}",
                rec.run_id,
                rec.epochs_run,
                rec.best_epoch,
                rec.stop_reason,
                opt(rec.train_loss),
                opt(rec.val_loss),
                opt(rec.test_loss)
            );
        }
        Command::Sweep => {
            let recs = cmd_sweep(&cfg)?;
            let failed = recs.iter().filter(|r| r.val_loss.is_none()).count();
            println!("{} runs in {} ({failed} without a model)", recs.len(), cfg.run_log().display());
        }
        Command::Select => {
            for g in cmd_select(&cfg)? {
                println!(
                    "{} bias={}: {}/{} selected, threshold {}",
                    g.variant,
                    g.bias,
                    g.selected.len(),
                    g.runs,
                    opt(g.threshold)
                );
            }
        }
        Command::Report => {
            let s = cmd_report(&cfg)?;
            println!("model bias runs selected mean_test std_test best_by_val_test");
            for r in &s.table {
                println!(
                    "{} {} {} {} {} {} {}",
                    r.variant,
                    r.bias,
                    r.runs,
                    r.selected,
                    opt(r.mean_test),
                    opt(r.std_test),
                    opt(r.best_by_val_test)
                );
            }
            println!("wrote {}", cfg.output_dir.join("report").display());
        }
        Command::Baseline { t_seq } => {
            let b = cmd_baseline(&cfg, t_seq.unwrap_or(cfg.baseline_t_seq))?;
            println!("persistence:   val {:.5} test {}", b.persistence_val, opt(b.persistence_test));
            println!("linear kernel: val {:.5} test {}", b.linear_val, opt(b.linear_test));
        }
        Command::Synth { symbols, returns, csv } => {
            let path = csv.unwrap_or_else(|| cfg.output_dir.join("synthetic_panel.csv"));
            let panel = VolPanel {
                symbols,
                emit_returns: returns,
                ..VolPanel::default()
            };
            cmd_synth(&panel, cfg.seed, &path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
