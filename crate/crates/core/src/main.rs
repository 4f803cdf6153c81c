use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heat_recon::config::{ExperimentConfig, SolverMethod};
use heat_recon::experiment::{convergence_sweep, run_diagnose, run_experiment, run_forward, run_observe};
use heat_recon::problem::Formulation;
use heat_recon::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "heat-recon", version, about = "Reconstruct parabolic solutions from partial interior observations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mixed forward solve; writes forward.csv at the grid nodes.
    Forward(Common),
    /// Truth and synthetic observation.
    Observe(Common),
    /// Full reconstruction with report and diagnostics.
    Reconstruct(Common),
    /// Norms and constants per refinement level.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Nested refinements against a fixed truth.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Sectioned key = value config; a run manifest is accepted as well.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    formulation: Option<Formulation>,
    #[arg(long)]
    solver: Option<SolverMethod>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(s) = self.seed {
            cfg.observation.seed = s;
        }
        if let Some(f) = self.formulation {
            // the multiplier default follows the formulation unless it was set
            if cfg.formulation.name != f {
                cfg.formulation.multiplier = None;
            }
            cfg.formulation.name = f;
        }
        if let Some(m) = self.solver {
            cfg.solver.method = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Forward(c) => {
            let cfg = c.load()?;
            run_forward(&cfg, &cfg.output)
        }
        Cmd::Observe(c) => {
            let cfg = c.load()?;
            run_observe(&cfg, &cfg.output).map(|_| ())
        }
        Cmd::Reconstruct(c) => {
            let cfg = c.load()?;
            let (_, s) = run_experiment(&cfg, &cfg.output)?;
            log::info!("misfit {:.3e}, l2 error {:.3e}", s.misfit, s.l2_error);
            Ok(())
        }
        Cmd::Diagnose { common, levels } => {
            let cfg = common.load()?;
            run_diagnose(&cfg, levels, &cfg.output).map(|_| ())
        }
        Cmd::Sweep { common, levels } => {
            let cfg = common.load()?;
            convergence_sweep(&cfg, levels, &cfg.output).map(|_| ())
        }
    }
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e.category() {
        ErrorCategory::Config => (2, "config"),
        ErrorCategory::Io => (3, "io"),
        ErrorCategory::Solver => (4, "solver"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version are not failures
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprintln!("error: category=config code=2 message={:?}", msg.lines().next().unwrap_or(""));
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, cat) = exit_code(&e);
            eprintln!("error: category={cat} code={code} message={:?}", e.to_string());
            ExitCode::from(code)
        }
    }
}
