use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opo_tomography::io::commands::{self, OracleParams, RunOutcome};
use opo_tomography::io::config::RunConfig;
use opo_tomography::io::{quote, IoError};

#[derive(Parser)]
#[command(
    name = "opo-tomo",
    version,
    about = "Phase-space tomography with a biased degenerate OPO"
)]
struct Cli {
    /// Worker threads for trajectory ensembles; defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["fig2", "fig3"])]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate closed-form probabilities, displacements and widths.
    Oracle {
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "2"
        )]
        lambda: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "0"
        )]
        tau0: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Option<Vec<f64>>,
        /// Also write oracle.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure bias-probability curves over angles and delays.
    Sweep(RunArgs),
    /// Delay scan of the transition width from the vacuum.
    Dynamics(RunArgs),
    /// Reconstruct the Q function from curve or sinogram files.
    Reconstruct {
        /// Directory holding curve_*.csv files or a sinogram.csv.
        #[arg(long)]
        input: PathBuf,
        /// Directory with vacuum curves or sinogram; the analytic vacuum otherwise.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig, IoError> {
    let mut c = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(IoError::Config {
                field: "config".into(),
                reason: "pass --config <path> or --preset <fig2|fig3>".into(),
            })
        }
    };
    if let Some(seed) = args.seed {
        c.seed = Some(seed);
    }
    if let Some(out) = &args.out {
        c.out = Some(out.clone());
    }
    Ok(c)
}

fn out_dir(c: &RunConfig) -> Result<PathBuf, IoError> {
    c.out.clone().ok_or_else(|| IoError::Config {
        field: "out".into(),
        reason: "no output directory; pass --out <dir> or set out in the config".into(),
    })
}

fn report(o: &RunOutcome) {
    for w in &o.warnings {
        eprintln!("warning message={}", quote(w));
    }
    println!(
        "wrote {} files to {}",
        o.files.len() + 1,
        o.out_dir.display()
    );
}

fn run(cli: Cli) -> Result<(), IoError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(IoError::Config {
                field: "workers".into(),
                reason: "must be >= 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| IoError::Input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Oracle {
            lambda,
            tau0,
            b,
            out,
        } => {
            let p = OracleParams {
                lambda,
                tau0,
                b: b.unwrap_or_else(|| OracleParams::default().b),
            };
            print!("{}", commands::cmd_oracle(&p, out.as_deref())?);
        }
        Command::Sweep(args) => {
            let c = load_config(&args)?;
            report(&commands::cmd_sweep(&c, &out_dir(&c)?)?);
        }
        Command::Dynamics(args) => {
            let c = load_config(&args)?;
            let d = commands::cmd_dynamics(&c, &out_dir(&c)?)?;
            for g in &d.growth {
                println!(
                    "theta={} growth_rate={:.4} growth_rate_se={:.4}",
                    g.theta, g.rate, g.rate_se
                );
            }
            report(&d.run);
        }
        Command::Reconstruct {
            input,
            reference,
            run,
        } => {
            let c = if run.config.is_some() || run.preset.is_some() {
                load_config(&run)?
            } else {
                RunConfig {
                    out: run.out.clone(),
                    ..Default::default()
                }
            };
            let settings = c.reconstruct_settings()?;
            let snapshot = serde_json::json!({
                "input": input.display().to_string(),
                "reference": reference.as_deref().map(Path::display).map(|d| d.to_string()),
                "reconstruct": c.reconstruct,
            });
            let (o, r) = commands::cmd_reconstruct(
                &input,
                reference.as_deref(),
                &settings,
                snapshot,
                &out_dir(&c)?,
            )?;
            println!(
                "max_db={:.3} at theta={:.4} min_db={:.3} at theta={:.4}",
                r.report.max_db, r.report.max_db_angle, r.report.min_db, r.report.min_db_angle
            );
            report(&o);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or(&msg)
                .trim_start_matches("error: ");
            eprintln!("error code=usage message={}", quote(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.error_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
