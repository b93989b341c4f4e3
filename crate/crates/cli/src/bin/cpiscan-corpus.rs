//! Rebuilds and verifies the fixture corpus.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use cpiscan_core::corpus::{build_fixtures, load_manifest, verify_fixtures, write_manifest};
use cpiscan_core::report::ScanConfig;

#[derive(Parser)]
#[command(name = "cpiscan-corpus")]
struct Cli {
    /// Corpus directory holding manifest.json.
    #[arg(long, default_value = "corpus")]
    corpus: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble every fixture and report drift against the manifest hashes.
    Build {
        /// Output directory; defaults to the corpus directory itself.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record the rebuilt hashes in the manifest.
        #[arg(long)]
        update: bool,
    },
    /// Check hashes and scan every fixture against its expectation.
    Verify,
}

fn run(cli: Cli) -> Result<bool> {
    let mut manifest = load_manifest(&cli.corpus)?;
    match cli.command {
        Command::Build { out, update } => {
            let out = out.unwrap_or_else(|| cli.corpus.clone());
            let built = build_fixtures(&cli.corpus, &manifest, &out)?;
            for b in &built {
                println!(
                    "{:<20} {} {}",
                    b.name,
                    b.sha256,
                    if b.drift { "drift" } else { "same" }
                );
            }
            if update {
                for (entry, b) in manifest.fixtures.iter_mut().zip(&built) {
                    entry.sha256 = b.sha256.clone();
                }
                write_manifest(&cli.corpus, &manifest)?;
            }
            Ok(true)
        }
        Command::Verify => {
            let checks = verify_fixtures(&cli.corpus, &manifest, &ScanConfig::default());
            let mut ok = true;
            for c in &checks {
                match &c.result {
                    Ok(()) => println!("pass {}", c.name),
                    Err(e) => {
                        ok = false;
                        println!("FAIL {}: {e:?}", c.name);
                    }
                }
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CPISCAN_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
