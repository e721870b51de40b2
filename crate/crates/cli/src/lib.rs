//! Command-line front end: `score`, `explain`, `evaluate` and `bank`.

pub mod commands;
pub mod config;
pub mod explain;

use anyhow::Result;
use iqa_core::eval::ManifestColumns;

pub use commands::Outcome;
pub use config::{Backend, Cli, Command, Format, RunArgs, RunConfig};
pub use explain::{Explanation, Finding};

/// Joins an error chain with `: `, skipping causes whose text the previous
/// message already contains.
pub fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let config = RunConfig::from_args(&cli.run)?;
    match &cli.command {
        Command::Score { images } => commands::cmd_score(&config, images),
        Command::Explain { image } => commands::cmd_explain(&config, image),
        Command::Evaluate {
            manifest,
            images_dir,
            id_column,
            mos_column,
        } => {
            let columns = ManifestColumns {
                image_id: id_column.clone(),
                mos: mos_column.clone(),
            };
            commands::cmd_evaluate(&config, manifest, images_dir, &columns)
        }
        Command::Bank => commands::cmd_bank(&config),
    }
}
