use std::net::SocketAddr;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitlens::commands::{self, AuditArgs, ExportArgs, IngestArgs, OptimizeArgs};
use splitlens::data::{resolve_split, DataArgs};
use splitlens::server::{router, AppState};
use splitlens::CliError;

/// Audit train/validation/test splits of surgical workflow datasets.
#[derive(Debug, Parser)]
#[command(name = "splitlens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report unrepresented cases and set sizes for one split.
    Audit(AuditArgs),
    /// Search for a split with fewer unrepresented cases.
    Optimize(OptimizeArgs),
    /// Write the explorer view model for a split as JSON.
    ExportViewmodel(ExportArgs),
    /// Convert annotations to the generic JSON or CSV layout.
    Ingest(IngestArgs),
    /// Serve the HTTP/JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Split every new session starts from.
    #[arg(long)]
    split: String,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "SPLITLENS_PORT", default_value_t = 8080)]
    port: u16,
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let loaded = args.data.load()?;
    let (name, assignment) = resolve_split(&args.split, &loaded.dataset)?;
    let state = AppState::new(loaded.dataset, assignment).map_err(|violations| CliError::Validation {
        message: format!("split {name} does not partition the dataset"),
        violations,
    })?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::validation(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, split = %name, "listening");
        axum::serve(listener, router(state)).await
    })
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Audit(a) => commands::audit(a),
        Command::Optimize(a) => commands::optimize_cmd(a),
        Command::ExportViewmodel(a) => commands::export_viewmodel(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
