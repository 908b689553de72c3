use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use pastiche::commands::{self, Cli, Command};
use pastiche::service::{self, AppState};
use pastiche::{CliError, Result};
use pastiche_core::Checkpoint;

fn serve(args: commands::ServeArgs) -> Result<()> {
    let state = AppState::new(Checkpoint::load(&args.ckpt)?, &args.styles)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::BadRequest(format!("runtime: {e}")))?;
    runtime.block_on(service::serve(state, &args.bind))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => serve(args).map(|()| String::new()),
        command => commands::run(command),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
