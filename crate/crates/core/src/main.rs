use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use superhedge::cli::{run, RunOptions};

#[derive(Parser)]
#[command(
    name = "superhedge",
    version,
    about = "Superhedging prices of American options with default risk"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price the option described by a JSON job file.
    Price {
        config: PathBuf,
        /// Exit with status 4 if any verification check fails.
        #[arg(long)]
        strict: bool,
        /// Also write the tree to tree.json.
        #[arg(long)]
        dump_tree: bool,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let Command::Price {
        config,
        strict,
        dump_tree,
        out,
    } = Args::parse().command;
    let options = RunOptions {
        config,
        strict,
        dump_tree,
        out,
    };
    match run(&options) {
        Ok(summary) => {
            println!("u0 = {:.10}", summary.u0);
            println!("v0 = {:.10}", summary.v0);
            if let Some(passed) = summary.verification_passed {
                println!("verification: {}", if passed { "passed" } else { "FAILED" });
            }
            println!("wrote {}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
