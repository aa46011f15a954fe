use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mdfn_cli::commands::{self, Grid, Report};
use mdfn_cli::verify::{self, Suite, VerifyOptions};

#[derive(Parser)]
#[command(name = "mdfn", version, about = "Stability analysis and simulation of multi-commodity flow networks")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Contraction,
    Jacobian,
    Regions,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario's network against the model requirements.
    Validate { scenario: PathBuf },
    /// Membership of an inflow in the stability and bounded regions.
    Regions {
        scenario: PathBuf,
        /// Inflow rates, on-ramps in file order, commodities within each.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda: Option<Vec<f64>>,
        /// Sweep a two-commodity inflow grid: a0,a1,b0,b1,n.
        #[arg(long)]
        grid: Option<Grid>,
        /// Write grid CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Free-flow equilibrium and its stability certificate.
    Equilibrium {
        scenario: PathBuf,
        /// Write the equilibrium as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate every experiment and write one CSV per initial state.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run numerical self-checks against the scenario.
    Verify {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled states or pairs per check.
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Sampling radius for the contraction suite (defaults to δ̄).
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.02)]
        dt: f64,
    },
}

fn run(command: Command) -> commands::CommandResult {
    match command {
        Command::Validate { scenario } => commands::validate(&scenario),
        Command::Regions { scenario, lambda, grid, out } => {
            commands::regions(&scenario, lambda.as_deref(), grid, out.as_deref())
        }
        Command::Equilibrium { scenario, out } => commands::equilibrium(&scenario, out.as_deref()),
        Command::Simulate { scenario, out } => commands::simulate(&scenario, &out),
        Command::Verify { scenario, suite, seed, samples, radius, horizon, dt } => {
            let suite = match suite {
                SuiteArg::Contraction => Suite::Contraction,
                SuiteArg::Jacobian => Suite::Jacobian,
                SuiteArg::Regions => Suite::Regions,
                SuiteArg::All => Suite::All,
            };
            verify::verify(&scenario, &VerifyOptions { suite, seed, samples, radius, horizon, dt })
        }
    }
}

fn print(report: &Report, format: Format) {
    match format {
        Format::Text => print!("{}", report.text),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report.json).expect("report serializes")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDFN_LOG", "off")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(report) => {
            print(&report, cli.format);
            if report.success { ExitCode::SUCCESS } else { ExitCode::from(1) }
        }
        Err(e) => {
            match cli.format {
                Format::Text => eprintln!("error: {}", e.message()),
                Format::Json => println!("{}", serde_json::json!({ "error": e.message(), "exit_code": e.exit_code() })),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

