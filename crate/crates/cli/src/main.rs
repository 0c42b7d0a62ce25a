//! `dispersal`: command-line driver for the slow-dispersal competition
//! laboratory. Every subcommand reads a scenario (JSON config plus
//! overrides), runs one experiment family from the core crate, writes a
//! report JSON and plot-ready CSV series, and prints a one-line verdict.
//! Exit codes: 0 decided/ok, 2 undecided, 1 error.

mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use run::{Emitter, Outcome};
use scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "dispersal",
    version,
    about = "Numerical laboratory for competing species that differ only in diffusion rate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario config file (JSON); defaults apply for missing fields
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for the report and CSV series
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed (sweep sampling, separation-rate trials)
    #[arg(long)]
    seed: Option<u64>,

    /// Worker pool size for the sweep subcommand
    #[arg(long)]
    workers: Option<usize>,

    /// Leave the timestamp out of the report for byte-stable output
    #[arg(long)]
    no_timestamp: bool,

    /// Scenario field overrides, e.g. dt=0.0005 or diffusions=0.1,0.3
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single-species steady profiles for each diffusion rate
    Steady {
        /// Compute for this rate only
        #[arg(long)]
        d: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Principal eigenpairs of the dispersal operator weighted by the habitat
    Eigen {
        /// Compute for this rate only
        #[arg(long)]
        d: Option<f64>,
        /// Weight expression, replacing the scenario habitat
        #[arg(long, value_name = "EXPR")]
        m: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Track the leading profile and growth rate along a coefficient path
    Bundle {
        /// Diffusion rate to track
        #[arg(long)]
        d: Option<f64>,
        /// Start of the recording window
        #[arg(long)]
        t0: Option<f64>,
        /// End of the recording window
        #[arg(long)]
        t1: Option<f64>,
        /// Settling time before the window
        #[arg(long)]
        spinup: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Long-horizon competition run with an exclusion verdict
    Exclusion {
        /// End-state distance that counts as decided
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Gap between nearly-equal-rate blocks and their idealized system
    Closeness {
        /// Block rates, one per partition group
        #[arg(long, value_delimiter = ',', value_name = "R1,R2,...")]
        hat: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise invasion growth rates at single-species steady states
    Invasion {
        #[command(flatten)]
        common: Common,
    },
    /// Attractor layout check for the two-species system
    Morse2 {
        /// End-state distance that counts as reached
        #[arg(long)]
        tolerance: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Exclusion runs over random rate sets near the configured anchors
    Sweep {
        /// Anchor rates the sampled sets stay close to
        #[arg(long, value_delimiter = ',', value_name = "R1,R2,...")]
        around: Option<Vec<f64>>,
        /// Largest sampled offset from an anchor
        #[arg(long)]
        radius: Option<f64>,
        /// Number of rate sets
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Steady { common, .. }
            | Cmd::Eigen { common, .. }
            | Cmd::Bundle { common, .. }
            | Cmd::Exclusion { common, .. }
            | Cmd::Closeness { common, .. }
            | Cmd::Invasion { common }
            | Cmd::Morse2 { common, .. }
            | Cmd::Sweep { common, .. } => common,
        }
    }

    /// Folds subcommand flags into the scenario so the embedded config
    /// reflects exactly what ran.
    fn apply(&self, sc: &mut Scenario) {
        match self {
            Cmd::Steady { d, .. } | Cmd::Eigen { d, m: None, .. } => {
                if let Some(d) = d {
                    sc.diffusions = vec![*d];
                    sc.initial.clear();
                }
            }
            Cmd::Eigen { d, m: Some(m), .. } => {
                sc.habitat = m.clone();
                if let Some(d) = d {
                    sc.diffusions = vec![*d];
                    sc.initial.clear();
                }
            }
            Cmd::Bundle {
                d,
                t0,
                t1,
                spinup,
                ..
            } => {
                if d.is_some() {
                    sc.bundle.d = *d;
                }
                if let Some(t0) = t0 {
                    sc.bundle.t0 = *t0;
                }
                if t1.is_some() {
                    sc.bundle.t1 = *t1;
                }
                if let Some(s) = spinup {
                    sc.bundle.spinup = *s;
                }
            }
            Cmd::Exclusion { tolerance, .. } | Cmd::Morse2 { tolerance, .. } => {
                if let Some(tol) = tolerance {
                    sc.tolerance = *tol;
                }
            }
            Cmd::Closeness { hat, .. } => {
                if let Some(hat) = hat {
                    sc.block_rates = Some(hat.clone());
                }
            }
            Cmd::Sweep {
                around,
                radius,
                count,
                ..
            } => {
                if let Some(a) = around {
                    sc.sweep.around = a.clone();
                }
                if let Some(r) = radius {
                    sc.sweep.radius = *r;
                }
                if let Some(c) = count {
                    sc.sweep.count = *c;
                }
            }
            Cmd::Invasion { .. } => {}
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.cmd) {
        Ok(out) => {
            println!("{}", out.line);
            ExitCode::from(out.exit as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: &Cmd) -> Result<Outcome> {
    let common = cmd.common();
    let mut sc = Scenario::load(common.config.as_deref(), &common.set)?;
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    if let Some(w) = common.workers {
        sc.workers = Some(w);
    }
    cmd.apply(&mut sc);
    sc.fill_initial();
    sc.validate()?;

    let out_dir = common
        .out
        .clone()
        .or_else(|| sc.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let timestamp = if common.no_timestamp {
        None
    } else {
        Some(
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    };
    let em = Emitter {
        out_dir: &out_dir,
        timestamp,
    };

    match cmd {
        Cmd::Steady { .. } => run::steady(&sc, &em),
        Cmd::Eigen { .. } => run::eigen(&sc, &em),
        Cmd::Bundle { .. } => run::bundle(&sc, &em),
        Cmd::Exclusion { .. } => run::exclusion(&sc, &em),
        Cmd::Closeness { .. } => run::closeness(&sc, &em),
        Cmd::Invasion { .. } => run::invasion(&sc, &em),
        Cmd::Morse2 { .. } => run::morse2(&sc, &em),
        Cmd::Sweep { .. } => run::sweep(&sc, &em),
    }
}
