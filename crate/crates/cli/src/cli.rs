//! Command-line front end: argument parsing, thread pool and exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::checks::{grad_check_suite, kl_check, kl_default_settings, qp_check};
use crate::data::write_trajectory_csv;
use crate::{parse_config, run_experiment, write_outputs, CliError, EXIT_ACCEPTANCE, EXIT_OK, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "shield", version, about = "Constricting CBF safety filter for diffusion sampling")]
struct Cli {
    /// Worker threads; falls back to SHIELD_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form against dual-ascent QP solutions on random instances.
    QpCheck {
        #[arg(long, default_value_t = 1000)]
        single: usize,
        #[arg(long, default_value_t = 200)]
        multi: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Girsanov KL estimate against its closed form for constant controls.
    KlCheck {
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every barrier gradient.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the Lorenz training trajectories to CSV.
    ExportLorenz {
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SHIELD_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("SHIELD_THREADS={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

/// Writes `v` to stdout; a closed pipe is not an error.
fn print_json<T: serde::Serialize>(v: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("serializable report");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn execute(command: Command) -> Result<i32, CliError> {
    let verdict = |ok: bool| if ok { EXIT_OK } else { EXIT_ACCEPTANCE };
    match command {
        Command::Run { config, seed, paths, steps, out } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = paths {
                cfg.n_paths = Some(p);
            }
            if let Some(k) = steps {
                cfg.steps = Some(k);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg)?;
            write_outputs(&outcome, &cfg.output_dir)?;
            match &outcome.guided {
                Some(arm) => print_json(&arm.summary),
                None => print_json(&outcome.report),
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            Ok(verdict(outcome.passed))
        }
        Command::QpCheck { single, multi, seed } => {
            let r = qp_check(single, multi, seed)?;
            print_json(&r);
            Ok(verdict(r.passed))
        }
        Command::KlCheck { paths, steps, seed } => {
            let rows = kl_check(&kl_default_settings(), paths, steps, seed)?;
            print_json(&rows);
            Ok(verdict(rows.iter().all(|r| r.passed)))
        }
        Command::GradCheck { trials, seed } => {
            let rows = grad_check_suite(trials, seed)?;
            print_json(&rows);
            Ok(verdict(rows.iter().all(|r| r.passed)))
        }
        Command::ExportLorenz { out, count, seed } => {
            let data = cbf_shield::lorenz_dataset(&cbf_shield::LorenzParams::default(), count, seed)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_trajectory_csv(&data, &out)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = threads(cli.threads).and_then(|n| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = n {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| CliError::Validation(e.to_string()))?;
        pool.install(|| execute(cli.command))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
