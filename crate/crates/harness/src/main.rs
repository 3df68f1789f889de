use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mace_core::image::Image;
use mace_core::metrics::{nrmse, speedup};
use mace_core::phantom::make_phantom;
use mace_core::io;
use mace_harness::{run, RunConfig};

#[derive(Parser)]
#[command(name = "mace", version, about = "Distributed CT reconstruction by multi-agent consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set mace.n_subsets=8`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RequiredConfig {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

impl RequiredConfig {
    fn load(&self) -> Result<RunConfig> {
        ConfigArgs {
            config: Some(self.config.clone()),
            overrides: self.overrides.clone(),
        }
        .load()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured phantom.
    Phantom {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write a 16-bit PGM preview.
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Simulate noisy measurements and their weights.
    Project {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured reconstruction.
    Reconstruct {
        #[command(flatten)]
        cfg: RequiredConfig,
    },
    /// Equilibrium residuals of a candidate image.
    Residuals {
        #[command(flatten)]
        cfg: RequiredConfig,
        #[arg(long)]
        image: PathBuf,
    },
    /// Iteration-matrix spectra for a small problem.
    Eigreport {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Equits to a target NRMSE over a grid of rho, N and sigma.
    Sweep {
        #[command(flatten)]
        cfg: RequiredConfig,
    },
    /// NRMSE between two images, and optionally the algorithmic speedup.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, requires_all = ["equits_mace", "n_subsets"])]
        equits_central: Option<f64>,
        #[arg(long)]
        equits_mace: Option<f64>,
        #[arg(long)]
        n_subsets: Option<usize>,
    },
}

fn load_image(path: &Path) -> Result<Image> {
    io::load_image(path).with_context(|| format!("reading {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { cfg, out, pgm } => {
            let cfg = cfg.load()?;
            let img = make_phantom(cfg.phantom_kind()?, &cfg.geometry()?)?;
            io::save_image(&out, &img)?;
            if let Some(p) = pgm {
                io::save_pgm(&p, &img)?;
            }
            println!("phantom {}x{} written to {}", img.side, img.side, out.display());
        }
        Command::Project { cfg, out } => {
            let sino = run::project(&cfg.load()?)?;
            io::save_sinogram(&out, &sino)?;
            println!("sinogram {}x{} written to {}", sino.n_views(), sino.n_channels(), out.display());
        }
        Command::Reconstruct { cfg } => {
            let s = run::reconstruct(&cfg.load()?)?;
            println!("iterations = {}", s.iterations);
            println!("equits = {}", s.equits);
            println!("sigma = {:e}", s.sigma);
            if let Some(e) = s.final_nrmse {
                println!("nrmse vs reference = {e:e}");
            }
            println!("output in {}", s.output_dir.display());
        }
        Command::Residuals { cfg, image } => {
            let report = run::residuals_for_image(&cfg.load()?, &load_image(&image)?)?;
            print!("{}", report.to_text());
        }
        Command::Eigreport { cfg } => {
            print!("{}", run::eigreport(&cfg.load()?)?.summary());
        }
        Command::Sweep { cfg } => {
            print!("{}", run::sweep(&cfg.load()?)?.to_text());
        }
        Command::Metrics {
            image,
            reference,
            equits_central,
            equits_mace,
            n_subsets,
        } => {
            let (x, r) = (load_image(&image)?, load_image(&reference)?);
            println!("nrmse = {:e}", nrmse(&x.data, &r.data)?);
            if let (Some(c), Some(m), Some(n)) = (equits_central, equits_mace, n_subsets) {
                println!("speedup = {}", speedup(c, m, n)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
