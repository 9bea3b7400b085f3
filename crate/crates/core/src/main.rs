use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use eafem::cli::{apply_override, exit_code, options_from_entries, parse_entries, parse_entry, run_with_progress};
use eafem::problem::EXPERIMENTS;
use eafem::{Error, Result};

/// Energy-driven adaptive P1 finite elements for semilinear
/// diffusion-reaction problems.
#[derive(Parser, Debug)]
#[command(name = "eafem", version)]
struct Args {
    /// Configuration file with `key = value` lines.
    #[arg(required_unless_present = "list")]
    config: Option<PathBuf>,

    /// Output directory for records.csv, summary.txt and VTK files.
    #[arg(short, long, default_value = "output")]
    out: PathBuf,

    /// Overrides a configuration key, e.g. `--set max_dof=2e4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Suppresses the per-level progress lines.
    #[arg(short, long)]
    quiet: bool,

    /// Lists the built-in experiments and exits.
    #[arg(long)]
    list: bool,
}

fn execute(args: &Args) -> Result<()> {
    let path = args.config.as_ref().expect("clap enforces a config path");
    let text = std::fs::read_to_string(path)?;
    let mut entries = parse_entries(&text)?;
    for s in &args.set {
        let entry = parse_entry(s, None)?.ok_or_else(|| Error::Config(format!("empty override '{s}'")))?;
        apply_override(&mut entries, entry);
    }
    let opts = options_from_entries(&entries)?;
    let quiet = args.quiet;
    let summary = run_with_progress(&opts, &args.out, |r| {
        if !quiet {
            println!("N={:<3} dof={:<8} n*={:<3} E={:.12e} residual={:.3e}", r.generation, r.dof, r.n_star, r.energy, r.residual);
        }
    })?;
    if !quiet {
        if let Some(s) = summary.error_slope {
            println!("error slope {s:.3}");
        }
        if let Some(s) = summary.energy_error_slope {
            println!("energy-error slope {s:.3}");
        }
        println!("results in {}", args.out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list {
        for id in EXPERIMENTS {
            println!("{id}");
        }
        return ExitCode::SUCCESS;
    }
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
