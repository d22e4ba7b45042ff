mod args;
mod output;
mod run;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use sha2::{Digest, Sha256};

use args::Cli;
use run::{CliError, Inputs};

/// Worker cap for the rayon pool.
const THREADS_VAR: &str = "QSTOCH_THREADS";

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    configure_threads()?;
    let mut inputs = Inputs::default();
    let report = run::dispatch(cli, &mut inputs)?;

    let mut hasher = Sha256::new();
    hasher.update(format!("{:?}|seed={}|format={:?}", cli.command, cli.seed, cli.format));
    for (path, text) in &inputs.files {
        hasher.update(path.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(text.as_bytes());
    }
    let hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();

    let mut meta = vec![
        ("tool".to_string(), "qstoch".to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed".to_string(), cli.seed.to_string()),
        ("config_sha256".to_string(), hash),
        ("args".to_string(), rerun_args(argv)),
    ];
    meta.extend(report.meta.iter().cloned());
    let report = output::Report { meta, ..report };
    let text = report.render(cli.format);

    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Domain(qstoch_core::Error::InvalidArgument(format!("writing {}: {e}", path.display())))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Domain(qstoch_core::Error::InvalidArgument(format!("writing stdout: {e}"))))
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR}={raw} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("{THREADS_VAR}: {e}")))
}

/// Command line without the program name and output path, enough to re-run
/// the computation.
fn rerun_args(argv: &[String]) -> String {
    let mut kept = Vec::new();
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--out" || a == "-o" {
            it.next();
        } else if !a.starts_with("--out=") {
            kept.push(quote(a));
        }
    }
    kept.join(" ")
}

fn quote(a: &str) -> String {
    let plain = a.chars().all(|c| c.is_ascii_alphanumeric() || "-_.,:=/+".contains(c));
    if plain && !a.is_empty() {
        a.to_string()
    } else {
        format!("'{}'", a.replace('\'', r"'\''"))
    }
}
