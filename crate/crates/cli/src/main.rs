use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use opvsim_cli::{parse_config, parse_morphology_spec, run_generate_morphology, run_simulate, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "opvsim", version, about = "Organic solar cell drift-diffusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured voltage sweep and write iv.csv, snapshots and report.json.
    Simulate {
        config: PathBuf,
        /// Root for relative output directories (default: $OPVSIM_OUTPUT_ROOT, else the config directory).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Generate a synthetic morphology and write it as a PHF file.
    Morphology {
        /// Morphology file: mesh, synthetic kind and optional output path.
        input: PathBuf,
        /// Output path; overrides `output` in the input file.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Validate a run configuration without solving.
    Check { config: PathBuf },
}

/// Exit status when the run finished but some voltage point did not converge.
const EXIT_NOT_CONVERGED: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, output_root } => {
            let cfg = parse_config(&config)?;
            let root = output_root.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from));
            let summary = run_simulate(&cfg, root.as_deref())?;
            for p in &summary.outputs {
                println!("wrote {}", p.display());
            }
            if let Some(f) = &summary.failure {
                eprintln!("sweep incomplete: {f}");
            }
            if summary.all_converged {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_NOT_CONVERGED))
            }
        }
        Command::Morphology { input, out } => {
            let s = parse_morphology_spec(&input)?;
            let base = input.parent().map(PathBuf::from).unwrap_or_default();
            let out = out
                .or_else(|| s.output.as_ref().map(|o| base.join(o)))
                .context("no output path: pass --out or set `output` in the input file")?;
            let phase = run_generate_morphology(&s, &out)?;
            println!("wrote {} ({} nodes)", out.display(), phase.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { config } => {
            let cfg = parse_config(&config)?;
            let mesh = cfg.mesh.build()?;
            println!(
                "ok: {}D mesh with {} nodes, method {}, {} sweep points",
                mesh.dim(),
                mesh.n_nodes(),
                cfg.solver.method.name(),
                cfg.sweep.voltages().len()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
