use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pixcue::harness::{
    cmd_experiment, cmd_reconstruct, cmd_report, cmd_simulate, cmd_train, cmd_uncertainty, obtain_model,
    ExperimentConfig, ExperimentId, UncertaintyInput, UncertaintyMethod,
};
use pixcue::uncertainty::McConfig;
use pixcue::Result;

#[derive(Parser)]
#[command(name = "pixcue", version, about = "Pixel-classification MRI reconstruction with per-pixel uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; the standard desk setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-derives every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::standard(0),
        };
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms, undersampled k-space, and masks.
    Simulate(Common),
    /// Train a model and write its checkpoint and loss history.
    Train(Common),
    /// Reconstruct an image and class-probability volume.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute an uncertainty map.
    Uncertainty {
        /// pixcue-exact, pixcue-fast, mc, or mc-meandist.
        #[arg(long)]
        method: UncertaintyMethod,
        /// Probability volume (.pxp); alternative to checkpoint + k-space + mask.
        #[arg(long, conflicts_with_all = ["checkpoint", "kspace", "mask"])]
        probs: Option<PathBuf>,
        #[arg(long, requires_all = ["kspace", "mask"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        kspace: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Monte Carlo passes.
        #[arg(long, default_value_t = 50)]
        passes: usize,
        /// Monte Carlo dropout fraction.
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run experiments exp1..exp6, or all of them.
    Experiment {
        /// exp1..exp6 or "all".
        id: String,
        #[command(flatten)]
        common: Common,
        /// Exit with status 1 when any acceptance check fails.
        #[arg(long)]
        check: bool,
    },
    /// Summarize a report directory and rasterize its maps.
    Report {
        dir: PathBuf,
        /// Skip writing PGM rasters.
        #[arg(long)]
        no_rasters: bool,
    },
}

fn experiment(id: &str, common: &Common, check: bool) -> Result<bool> {
    let cfg = common.load()?;
    let ids: Vec<ExperimentId> = if id == "all" {
        ExperimentId::ALL.to_vec()
    } else {
        vec![id.parse()?]
    };
    eprintln!("preparing model");
    let model = obtain_model(&cfg, &common.out)?;
    let validation = cfg.validation.generate()?;
    let mut all_passed = true;
    for id in ids {
        eprintln!("running {}", id.label());
        let outcome = cmd_experiment(id, &cfg, &model.params, &validation, &common.out)?;
        for c in &outcome.checks {
            println!("{} {} {}: {}", id.label(), if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        all_passed &= outcome.passed();
    }
    Ok(all_passed || !check)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(common) => {
            let m = cmd_simulate(&common.load()?, &common.out)?;
            println!("wrote {} files to {}", m.files.len(), common.out.display());
        }
        Command::Train(common) => {
            let (ck, _) = cmd_train(&common.load()?, &common.out)?;
            println!(
                "trained {} epochs; best validation loss {:.5}; checkpoint {}",
                ck.history.len(),
                ck.best_validation_loss,
                common.out.join("model.pxc").display()
            );
        }
        Command::Reconstruct { checkpoint, kspace, mask, out } => {
            cmd_reconstruct(&checkpoint, &kspace, &mask, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Uncertainty { method, probs, checkpoint, kspace, mask, passes, dropout, seed, out } => {
            let input = match (probs, checkpoint, kspace, mask) {
                (Some(p), ..) => UncertaintyInput::Volume(p),
                (None, Some(checkpoint), Some(kspace), Some(mask)) => UncertaintyInput::Model { checkpoint, kspace, mask },
                _ => {
                    return Err(pixcue::PixcueError::Config(
                        "give --probs, or --checkpoint with --kspace and --mask".into(),
                    ))
                }
            };
            let mc = McConfig { passes, dropout_fraction: dropout, seed };
            cmd_uncertainty(&input, method, &mc, &out)?;
            println!("wrote {}", out.join("uncertainty.pxi").display());
        }
        Command::Experiment { id, common, check } => return experiment(&id, &common, check),
        Command::Report { dir, no_rasters } => print!("{}", cmd_report(Path::new(&dir), !no_rasters)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
