use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use regsynth::metrics::{self, EvalWindow};
use regsynth::phantom::{self, PhantomConfig};
use regsynth::trainer::{self, Checkpoint, TrainConfig};
use regsynth::volume::{self, Dims};
use regsynth::Error;

/// Registration-guided cross-modality 3D synthesis experiments.
#[derive(Parser, Debug)]
#[command(name = "regsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded phantom dataset (MIVOL volumes + manifest.json).
    GenPhantoms {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 55)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Edge length, or `D,H,W`.
        #[arg(long, default_value = "64", value_parser = parse_dims)]
        dims: Dims,
        /// Maximum misalignment displacement in voxels.
        #[arg(long, default_value_t = 3.0)]
        amplitude: f32,
        /// Smoothing σ of the misalignment field in voxels.
        #[arg(long, default_value_t = 8.0)]
        sigma: f32,
    },
    /// Train the variant named in a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Translate a source volume (or a directory of them) to the target modality.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Masked MAE / PSNR / SSIM of predicted volumes against references.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score several variants on the same data and seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "BEF,AFT,BOTH,BOTH+ACDS")]
        variants: Vec<String>,
    },
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [d, h, w] => Ok([d, h, w]),
        _ => Err("expected N or D,H,W".into()),
    }
}

fn gen_phantoms(out: &Path, count: usize, seed: u64, dims: Dims, amplitude: f32, sigma: f32) -> regsynth::Result<()> {
    if count == 0 {
        return Err(Error::Parameter("count must be >= 1".into()));
    }
    let cfg = PhantomConfig {
        dims,
        misalign_amplitude: amplitude,
        misalign_smoothness: sigma,
        ..PhantomConfig::default()
    };
    let split = phantom::default_split(count);
    let manifest = phantom::write_dataset(out, &cfg, seed, split)?;
    println!(
        "wrote {} cases to {} (train {}, val {}, test {})",
        manifest.cases.len(),
        out.display(),
        split.0,
        split.1,
        split.2
    );
    Ok(())
}

fn train(config: &Path) -> regsynth::Result<()> {
    let cfg = TrainConfig::load(config)?;
    print!("{}", cfg.to_text());
    let run_dir = TrainConfig::run_dir_for(config);
    let outcome = trainer::train(&cfg, &run_dir)?;
    let last = outcome.losses.last().map(|r| r.report.total).unwrap_or(f64::NAN);
    println!(
        "checkpoint {} ({} steps, final total loss {last:.4}, final val MAE {:?} HU)",
        outcome.checkpoint.display(),
        outcome.losses.len(),
        outcome.validation.last().map(|v| v.1)
    );
    Ok(())
}

fn synthesize(checkpoint: &Path, input: &Path, output: &Path) -> regsynth::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if input.is_dir() {
        fs::create_dir_all(output).map_err(|source| Error::Io {
            path: output.to_path_buf(),
            source,
        })?;
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|source| Error::Io {
                path: input.to_path_buf(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "mivol"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!("no .mivol files in {}", input.display())));
        }
        for f in &files {
            let dest = output.join(f.file_name().expect("file has a name"));
            synthesize_file(&ckpt, f, &dest)?;
        }
        println!("synthesized {} volumes into {}", files.len(), output.display());
    } else {
        synthesize_file(&ckpt, input, output)?;
        println!("synthesized {}", output.display());
    }
    Ok(())
}

fn synthesize_file(ckpt: &Checkpoint, input: &Path, output: &Path) -> regsynth::Result<()> {
    let src = volume::load_volume(input)?;
    let out = trainer::infer(&src, ckpt)?;
    if let Some(p) = out.padded {
        log::info!("{}: reflect-padded {:?} -> {p:?}", input.display(), src.dims());
    }
    volume::save_volume(&out.volume, output)
}

fn evaluate(pred: &Path, reference: &Path, mask: &Path, out: &Path) -> regsynth::Result<()> {
    let report = metrics::evaluate_dataset(pred, reference, mask, EvalWindow::default())?;
    report.write(out)?;
    let s = &report.summary;
    println!(
        "{} cases: MAE {:.2} ± {:.2} HU, PSNR {}, SSIM {:.4} ± {:.4}",
        s.cases,
        s.mae_hu.mean,
        s.mae_hu.std,
        s.psnr_db
            .map(|p| format!("{:.2} ± {:.2} dB", p.mean, p.std))
            .unwrap_or_else(|| "inf".into()),
        s.ssim.mean,
        s.ssim.std
    );
    Ok(())
}

fn ablate(config: &Path, variants: &[String]) -> regsynth::Result<()> {
    let cfg = TrainConfig::load(config)?;
    print!("{}", cfg.to_text());
    let run_dir = TrainConfig::run_dir_for(config).join("ablation");
    let rows = trainer::ablate(&cfg, variants, &run_dir)?;
    print!("{}", trainer::ablation_csv(&rows));
    Ok(())
}

fn run(cli: Cli) -> regsynth::Result<()> {
    match cli.command {
        Command::GenPhantoms {
            out,
            count,
            seed,
            dims,
            amplitude,
            sigma,
        } => gen_phantoms(&out, count, seed, dims, amplitude, sigma),
        Command::Train { config } => train(&config),
        Command::Synthesize {
            checkpoint,
            input,
            output,
        } => synthesize(&checkpoint, &input, &output),
        Command::Evaluate {
            pred,
            reference,
            mask,
            out,
        } => evaluate(&pred, &reference, &mask, &out),
        Command::Ablate { config, variants } => ablate(&config, &variants),
    }
}

/// Prints a clap error; unknown flags additionally list the valid ones.
fn report_usage_error(e: clap::Error, args: &[OsString]) -> ExitCode {
    let _ = e.print();
    if e.kind() == ErrorKind::UnknownArgument {
        let mut cmd = Cli::command();
        let sub = args.iter().skip(1).filter_map(|a| a.to_str()).find(|a| !a.starts_with('-'));
        let help = match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
            Some(sc) => sc.render_help(),
            None => cmd.render_help(),
        };
        eprintln!("\n{help}");
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<OsString> = std::env::args_os().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_usage_error(e, &args),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
