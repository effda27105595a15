//! Command-line driver: `run <config>` for a single case, `refine <config>
//! --factors 1,2,4` for a mesh-refinement sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use toposplit::cli::{
    load_config, refine_report_text, refine_sweep, run_case, EXIT_FAILURE, EXIT_ITERATION_CAP,
};

#[derive(Parser)]
#[command(name = "toposplit", about = "2-D density-based topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a TOML run configuration.
    config: PathBuf,
    /// Dotted-path config overrides, e.g. `optimizer.tau0=2.0`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single benchmark case and write its artifacts.
    Run(CommonArgs),
    /// Run the same case at several mesh refinements and compare designs.
    Refine {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated integer refinement factors.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        factors: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(common) => match load_config(&common.config, &common.overrides)
            .and_then(|config| run_case(&config))
        {
            Ok(outcome) => {
                let summary = common_summary(&outcome);
                println!("{summary}");
                outcome.exit_code
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_FAILURE
            }
        },
        Command::Refine { common, factors } => {
            match load_config(&common.config, &common.overrides)
                .and_then(|config| refine_sweep(&config, &factors))
            {
                Ok(report) => {
                    print!("{}", refine_report_text(&report));
                    let all_converged = report
                        .levels
                        .iter()
                        .all(|l| matches!(&l.outcome, Ok(d) if d.converged));
                    let any_failed = report.levels.iter().any(|l| l.outcome.is_err());
                    if any_failed {
                        EXIT_FAILURE
                    } else if all_converged {
                        0
                    } else {
                        EXIT_ITERATION_CAP
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILURE
                }
            }
        }
    };
    ExitCode::from(code as u8)
}

fn common_summary(outcome: &toposplit::cli::CaseOutcome) -> String {
    let r = &outcome.result;
    format!(
        "converged={} iterations={} Jtilde={:.6} V={:.6}",
        r.converged,
        r.records.len(),
        r.final_eval.j_tilde,
        r.final_eval.volume_fraction
    )
}
