//! `cyclestudy`: simulate election-cycle county panels and estimate
//! cycle effects on them.
//!
//! Exit codes: 0 on success, 2 for input problems (missing files, malformed
//! configs or flags), 3 for estimation problems (degenerate designs,
//! undefined quantities).

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cyclestudy", version, about = "Election-cycle panel estimators and simulator")]
struct Cli {
    /// Cap on worker threads; the CYCLESTUDY_THREADS variable is honored
    /// when the flag is absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic county panel plus its ground-truth sidecar.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative-time regressions: the dynamic coefficient path or the
    /// static election-year contrast.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "admissions_per_1000")]
        outcome: String,
        #[arg(long, value_enum, default_value_t = Mode::Dynamic)]
        mode: Mode,
        /// Fixed effects: `state,year` or `county,year`.
        #[arg(long, default_value = "state,year")]
        fe: String,
        /// Omitted relative time (annual runs).
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        normalize: i64,
        /// Estimate on ln(1 + outcome) instead of the level.
        #[arg(long)]
        log1p: bool,
        /// Comma-separated control columns.
        #[arg(long)]
        controls: Option<String>,
        /// Clustering dimension; district is the only supported unit.
        #[arg(long, default_value = "district")]
        cluster: String,
        #[arg(long, value_enum, default_value_t = Weights::Population)]
        weights: Weights,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cohort interaction-weighted aggregate with bootstrap standard errors.
    Iw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated outcome columns; all of them by default.
        #[arg(long)]
        outcomes: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate an effect into standard-deviation units and a percentile
    /// of the officeholder behavior distribution.
    Magnitude {
        /// Effect in log points (mapping mode).
        #[arg(long, allow_hyphen_values = true)]
        effect: Option<f64>,
        /// Signal variance (mapping mode).
        #[arg(long = "gamma-sq")]
        gamma_sq: Option<f64>,
        /// Estimate both the effect and the signal variance from a panel.
        #[arg(long = "from-panel")]
        from_panel: Option<PathBuf>,
        /// Tenure-span CSV `district_id,start_year,end_year,da_id`; tenures
        /// are derived from the election calendar when omitted.
        #[arg(long = "da-map")]
        da_map: Option<PathBuf>,
        #[arg(long, default_value = "admissions_per_1000")]
        outcome: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cycle-shape fits: smoothed relative-time path and the fixed-period
    /// sinusoid.
    Cycle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        frequency: FrequencyArg,
        #[arg(long, default_value_t = 0.3)]
        span: f64,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value = "admissions_per_1000")]
        outcome: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
pub enum Mode {
    Dynamic,
    Static,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum Weights {
    Population,
    Unit,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum FrequencyArg {
    Annual,
    Monthly,
}

/// Input problems exit 2; estimation problems exit 3.
pub enum CliError {
    Input(String),
    Estimation(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

fn thread_cap(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("CYCLESTUDY_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    })
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = thread_cap(cli.threads) {
        // Ignore failure: the pool can only be configured once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out),
        Command::Estimate {
            input,
            outcome,
            mode,
            fe,
            normalize,
            log1p,
            controls,
            cluster,
            weights,
            out,
        } => commands::estimate(commands::EstimateArgs {
            input,
            outcome,
            mode,
            fe,
            normalize,
            log1p,
            controls,
            cluster,
            weights,
            out,
        }),
        Command::Iw { input, reps, seed, outcomes, out } => {
            commands::iw(&input, reps, seed, outcomes.as_deref(), &out)
        }
        Command::Magnitude { effect, gamma_sq, from_panel, da_map, outcome, out } => {
            commands::magnitude(effect, gamma_sq, from_panel.as_deref(), da_map.as_deref(), &outcome, out.as_deref())
        }
        Command::Cycle { input, frequency, span, degree, outcome, out } => {
            commands::cycle(&input, frequency, span, degree, &outcome, &out)
        }
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            let (code, msg) = match &err {
                CliError::Input(m) | CliError::Estimation(m) => (err.exit_code(), m),
            };
            eprintln!("error: {msg}");
            std::process::exit(code);
        }
    }
}
