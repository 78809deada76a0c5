use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sraw::harness::{self, config::SeedConfig, ExperimentConfig};
use sraw::{Error, Result};

#[derive(Parser)]
#[command(name = "sraw", version, about = "Mesh-warp adversarial attacks on SAR target chips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Derive every stage seed from this value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root, overriding `output.root`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset manifest, overriding `data.manifest`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train every configured model variant.
    Train(Common),
    /// Attack the test split.
    Attack {
        #[command(flatten)]
        common: Common,
        /// sraw, fgsm, pgd, mifgsm or randwarp; all configured methods when omitted.
        #[arg(long)]
        method: Option<String>,
        /// Variant name or weights path; all variants when omitted.
        #[arg(long)]
        model: Vec<String>,
    },
    /// Cross-model accuracy on stored adversarial images.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        model: Vec<String>,
    },
    /// Aggregate records into tables and comparison images.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Vec<String>,
        #[arg(long)]
        model: Vec<String>,
    },
    /// Grad-CAM heatmap for one image.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: String,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        class: usize,
        /// Output PGM; defaults to `{root}/gradcam/{image stem}_class{class}.pgm`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// gen-data, train, attack, transfer and report in one go.
    Pipeline(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = SeedConfig::from_master(seed);
    }
    if let Some(out) = &common.out {
        cfg.output.root = out.clone();
    }
    if let Some(data) = &common.data {
        cfg.data.manifest = Some(data.clone());
    }
    Ok(cfg)
}

fn or_all(given: Vec<String>, all: Vec<String>) -> Vec<String> {
    if given.is_empty() { all } else { given }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => {
            let manifest = harness::gen_data(&load(&c)?)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train(c) => {
            for m in harness::train_models(&load(&c)?)? {
                println!("{}: test accuracy {}", m.name, harness::format_float(m.test_accuracy));
            }
        }
        Command::Attack { common, method, model } => {
            let cfg = load(&common)?;
            let methods = method.map_or_else(|| cfg.eval.methods.clone(), |m| vec![m]);
            let models = or_all(model, harness::model_names(&cfg));
            for method in &methods {
                for s in harness::attack(&cfg, method, &models)? {
                    let asr = s.asr.map_or("n/a".into(), harness::format_float);
                    println!("{} on {}: ASR {asr} over {} samples", s.method, s.model, s.samples);
                }
            }
        }
        Command::Transfer { common, method, model } => {
            let cfg = load(&common)?;
            let method = method.unwrap_or_else(|| cfg.eval.transfer_method.clone());
            let models = or_all(model, harness::model_names(&cfg));
            let t = harness::transfer(&cfg, &method, &models)?;
            for (name, row) in t.models.iter().zip(&t.accuracy) {
                let cells: Vec<String> = row.iter().map(|&v| harness::format_float(v)).collect();
                println!("{name}: {}", cells.join(" "));
            }
        }
        Command::Report { common, method, model } => {
            let cfg = load(&common)?;
            let methods = or_all(method, cfg.eval.methods.clone());
            let models = or_all(model, harness::model_names(&cfg));
            for r in harness::report(&cfg, &methods, &models)? {
                println!(
                    "{} {}: ASR {} PSNR {} SSIM {}",
                    r.method,
                    r.model,
                    r.asr.map_or("n/a".into(), harness::format_float),
                    harness::format_float(r.mean_psnr),
                    harness::format_float(r.mean_ssim)
                );
            }
        }
        Command::Gradcam { common, model, image, class, output } => {
            let cfg = load(&common)?;
            let out = output.unwrap_or_else(|| {
                let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                harness::Layout::new(&cfg).gradcam_dir().join(format!("{stem}_class{class}.pgm"))
            });
            harness::gradcam(&harness::resolve_model(&cfg, &model), &image, class, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Pipeline(c) => {
            let cfg = load(&c)?;
            harness::pipeline(&cfg)?;
            println!("pipeline complete under {}", cfg.output.root.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
