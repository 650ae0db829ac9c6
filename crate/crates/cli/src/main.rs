//! Command-line surface: train, compress, decompress, eval, gradcheck.
//!
//! Exit codes: 0 success, 1 usage/IO/format error, 2 verification failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use cprc_core::codec::{bits_per_pixel, read_pgm, write_pgm, Bitstream};
use cprc_core::gradcheck::{run_suite, SuiteOptions};
use cprc_core::metrics;
use cprc_core::models::{load_model, pipeline_compress, pipeline_decompress, save_model, ModelKind};
use cprc_core::training::{algorithm1, load_images, TrainConfig};
use cprc_core::Result;

#[derive(Parser)]
#[command(
    name = "cprc",
    version,
    about = "Compact-representation image compression: a CNN pair around a block-transform codec"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train both networks on a directory of PGM images
    Train {
        /// Directory of .pgm training images
        #[arg(long)]
        data: PathBuf,
        /// key = value config file (desk-scale defaults when omitted)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoints and CSV reports
        #[arg(long)]
        out: PathBuf,
        /// Suppress progress output
        #[arg(long)]
        quiet: bool,
    },
    /// Compress a PGM image to a .cprc stream (prints bits per pixel)
    Compress {
        #[arg(long = "in")]
        input: PathBuf,
        /// ComCNN checkpoint
        #[arg(long)]
        comcnn: PathBuf,
        /// Quality factor 1..=100
        #[arg(long)]
        qf: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompress a .cprc stream back to a PGM image
    Decompress {
        #[arg(long = "in")]
        input: PathBuf,
        /// RecCNN checkpoint
        #[arg(long)]
        reccnn: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a metrics CSV (psnr/ssim) for image pairs
    Eval {
        /// CSV of `original,reconstruction` path pairs
        #[arg(long, conflicts_with_all = ["orig", "recon"])]
        pairs: Option<PathBuf>,
        /// Directory of originals, matched to --recon by filename
        #[arg(long, requires = "recon")]
        orig: Option<PathBuf>,
        #[arg(long, requires = "orig")]
        recon: Option<PathBuf>,
    },
    /// Verify every analytic gradient against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately corrupt one gradient (self-test of the checker)
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.cmd {
        Command::Train {
            data,
            config,
            out,
            quiet,
        } => cmd_train(&data, config.as_deref(), &out, quiet).map(|_| 0),
        Command::Compress {
            input,
            comcnn,
            qf,
            out,
        } => cmd_compress(&input, &comcnn, qf, &out).map(|_| 0),
        Command::Decompress { input, reccnn, out } => {
            cmd_decompress(&input, &reccnn, &out).map(|_| 0)
        }
        Command::Eval { pairs, orig, recon } => {
            cmd_eval(pairs.as_deref(), orig.as_deref(), recon.as_deref())
        }
        Command::Gradcheck { seed, inject_fault } => Ok(cmd_gradcheck(seed, inject_fault)),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path, quiet: bool) -> Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::desk(),
    };
    cfg.verbose = !quiet;
    let images = load_images(data)?;
    if images.is_empty() {
        return Err(cprc_core::Error::Param(format!(
            "no .pgm images found in {}",
            data.display()
        )));
    }
    fs::create_dir_all(out)?;
    let trained = algorithm1(&images, &cfg, Some(out))?;
    save_model(&trained.comcnn, &out.join("comcnn.bin"))?;
    save_model(&trained.reccnn, &out.join("reccnn.bin"))?;
    fs::write(out.join("train_report.csv"), trained.report.epochs_csv())?;
    fs::write(out.join("summary.csv"), trained.report.summary_csv())?;
    if !quiet {
        eprintln!("wrote checkpoints and reports to {}", out.display());
    }
    Ok(())
}

fn cmd_compress(input: &Path, comcnn: &Path, qf: u8, out: &Path) -> Result<()> {
    let img = read_pgm(input)?;
    let model = load_model(comcnn, ModelKind::ComCnn)?;
    let bs = pipeline_compress(&img, &model, qf)?;
    bs.write_to(out)?;
    let bpp = bits_per_pixel(&bs, img.width(), img.height())?;
    println!("{bpp}");
    Ok(())
}

fn cmd_decompress(input: &Path, reccnn: &Path, out: &Path) -> Result<()> {
    let bs = Bitstream::read_from(input)?;
    let model = load_model(reccnn, ModelKind::RecCnn)?;
    let img = pipeline_decompress(&bs, &model)?;
    write_pgm(&img, out)?;
    Ok(())
}

fn cmd_eval(pairs: Option<&Path>, orig: Option<&Path>, recon: Option<&Path>) -> Result<u8> {
    let pair_list: Vec<(String, PathBuf, PathBuf)> = match (pairs, orig, recon) {
        (Some(csv), None, None) => read_pairs_csv(csv)?,
        (None, Some(orig), Some(recon)) => match_dirs(orig, recon)?,
        _ => {
            return Err(cprc_core::Error::Usage(
                "eval needs either --pairs or both --orig and --recon".to_string(),
            ))
        }
    };
    if pair_list.is_empty() {
        return Err(cprc_core::Error::Param("no image pairs to evaluate".to_string()));
    }
    println!("name,psnr,ssim");
    let mut had_errors = false;
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for (name, a_path, b_path) in &pair_list {
        let row = (|| -> Result<(f64, f64)> {
            let a = read_pgm(a_path)?;
            let b = read_pgm(b_path)?;
            Ok((metrics::psnr(&a, &b)?, metrics::ssim(&a, &b)?))
        })();
        match row {
            Ok((p, s)) => {
                println!("{name},{p},{s}");
                psnrs.push(p);
                ssims.push(s);
            }
            Err(e) => {
                eprintln!("error: {name}: {e}");
                println!("{name},error,error");
                had_errors = true;
            }
        }
    }
    // the average covers finite PSNR rows only; lossless pairs would
    // otherwise swallow the mean
    let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
    let avg_psnr = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let avg_ssim = if ssims.is_empty() {
        f64::NAN
    } else {
        ssims.iter().sum::<f64>() / ssims.len() as f64
    };
    println!("average,{avg_psnr},{avg_ssim}");
    Ok(if had_errors { 1 } else { 0 })
}

fn read_pairs_csv(path: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| cprc_core::Error::Ingest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| {
            cprc_core::Error::Format(format!(
                "{}:{}: expected `original,reconstruction`",
                path.display(),
                lineno + 1
            ))
        })?;
        let a = PathBuf::from(a.trim());
        let name = a
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("pair{}", lineno + 1));
        out.push((name, a, PathBuf::from(b.trim())));
    }
    Ok(out)
}

/// Pairs files of the same name across the two directories, sorted.
fn match_dirs(orig: &Path, recon: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let list = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        let mut map = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(|e| cprc_core::Error::Ingest {
            path: dir.to_path_buf(),
            msg: e.to_string(),
        })? {
            let path = entry?.path();
            if path
                .extension()
                .map(|e| e.eq_ignore_ascii_case("pgm"))
                .unwrap_or(false)
            {
                if let Some(name) = path.file_name() {
                    map.insert(name.to_string_lossy().into_owned(), path);
                }
            }
        }
        Ok(map)
    };
    let originals = list(orig)?;
    let recons = list(recon)?;
    Ok(originals
        .into_iter()
        .filter_map(|(name, a)| {
            recons.get(&name).map(|b| {
                let stem = Path::new(&name)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| name.clone());
                (stem, a, b.clone())
            })
        })
        .collect())
}

fn cmd_gradcheck(seed: u64, inject_fault: bool) -> u8 {
    let rows = run_suite(&SuiteOptions { seed, inject_fault });
    let mut failures = Vec::new();
    for row in &rows {
        println!(
            "{:<18} max_rel_err {:>12.3e}  tolerance {:>8.0e}  {}",
            row.name,
            row.max_rel_err,
            row.tolerance,
            if row.passed() { "ok" } else { "FAIL" }
        );
        if !row.passed() {
            failures.push(row.name);
        }
    }
    if failures.is_empty() {
        println!("all {} gradient checks passed", rows.len());
        0
    } else {
        eprintln!("gradient checks failed: {}", failures.join(", "));
        2
    }
}
