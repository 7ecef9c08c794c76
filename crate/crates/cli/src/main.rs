//! `risk`: batch VaR/ES reports, leverage tables, margin checks, backtests,
//! and the HTTP service.
//!
//! Exit codes: 0 success, 2 input error, 3 trade denied, 1 service failure.

mod commands;
mod input;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{BacktestArgs, Format, LeverageArgs, MarginArgs, RiskArgs};
use input::Failure;
use levmargin_core::margin::Verdict;

#[derive(Debug, Parser)]
#[command(name = "risk", version, about = "Portfolio risk, leverage and margin engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value-at-Risk report (JSON).
    Var(RiskArgs),
    /// Expected Shortfall report (JSON, same fields as `var`).
    Es(RiskArgs),
    /// Leverage table per asset.
    Leverage(LeverageArgs),
    /// Margin factor, availability and verdict for a proposed trade.
    Margin(MarginArgs),
    /// Calibrate on the first part of the history and test on the rest.
    Backtest(BacktestArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Storage root; `RISK_DATA_DIR` or `./risk-data` when omitted.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure { code: 1, message: e.to_string() })
}

fn run(cli: Cli) -> Result<(String, u8), Failure> {
    match cli.command {
        Command::Var(args) | Command::Es(args) => Ok((json(&commands::risk(&args)?)?, 0)),
        Command::Leverage(args) => {
            let table = commands::leverage(&args)?;
            let out = match args.format {
                Format::Json => json(&table)?,
                Format::Text => table.to_text().trim_end().to_owned(),
            };
            Ok((out, 0))
        }
        Command::Margin(args) => {
            let view = commands::margin(&args)?;
            let code = if view.verdict == Verdict::Denied { 3 } else { 0 };
            Ok((json(&view)?, code))
        }
        Command::Backtest(args) => Ok((json(&commands::backtest(&args)?)?, 0)),
        Command::Serve { port, data_dir } => {
            let dir = data_dir.unwrap_or_else(levmargin_service::data_dir);
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Failure { code: 1, message: e.to_string() })?;
            runtime
                .block_on(levmargin_service::serve(port, dir))
                .map_err(|e| Failure { code: 1, message: e.to_string() })?;
            Ok((String::new(), 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok((out, code)) => {
            if !out.is_empty() {
                let _ = writeln!(std::io::stdout(), "{out}");
            }
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
