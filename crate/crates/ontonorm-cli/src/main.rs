use clap::Parser;
use ontonorm_cli::args::{Cli, Command};
use ontonorm_cli::run::{self, UsageError};

/// Exit codes: 0 success, 1 data errors, 2 usage errors (clap parse errors
/// already exit 2 on their own).
fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::IngestOmim(args) => run::ingest_omim(args),
        Command::Extract(args) => run::extract(args),
        Command::BuildIndex(args) => run::build_index(args),
        Command::Normalize(args) => run::normalize(args),
        Command::Evaluate(args) => run::evaluate(args),
        Command::Sweep(args) => run::sweep(args),
        Command::Report(args) => run::report(args),
        Command::JudgeExport(args) => run::judge_export(args),
        Command::JudgeImport(args) => run::judge_import(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            if error.is::<UsageError>() {
                std::process::ExitCode::from(2)
            } else {
                std::process::ExitCode::from(1)
            }
        }
    }
}
