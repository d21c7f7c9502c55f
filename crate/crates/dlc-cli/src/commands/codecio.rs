//! compress / decompress subcommands.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dlc_core::checkpoint::{digest_hex, Checkpoint};
use dlc_core::coding::{self, Bitstream};
use dlc_core::Result;

use super::{ensure_dir, input_files, load_image, save_image};
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct CompressArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image file or directory.
    pub input: PathBuf,
    /// Output directory for .dlc bitstreams.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ResolvedCompress {
    checkpoint: String,
    model_digest: String,
    lambda_d: f64,
}

pub fn run_compress(args: CompressArgs) -> Result<()> {
    let (ckpt, digest) = Checkpoint::load(&args.checkpoint)?;
    ensure_dir(&args.out)?;
    let lambda_idx = coding::lambda_index(ckpt.config.lambda_d);
    let files = input_files(&args.input)?;
    let mut outputs = Vec::new();
    for path in &files {
        let image = load_image(path)?;
        let stream = coding::encode_image(&image, &ckpt.params, digest, lambda_idx)?;
        let out_path = args
            .out
            .join(path.file_stem().unwrap_or_default())
            .with_extension(coding::EXTENSION);
        std::fs::write(&out_path, stream.to_bytes())?;
        log::info!(
            "{} -> {} ({} bytes, {:.4} bpp)",
            path.display(),
            out_path.display(),
            stream.total_bytes(),
            stream.bpp()
        );
        outputs.push(out_path.display().to_string());
    }
    write_manifest(
        &args.out,
        "compress",
        ResolvedCompress {
            checkpoint: args.checkpoint.display().to_string(),
            model_digest: digest_hex(&digest),
            lambda_d: ckpt.config.lambda_d,
        },
        files.iter().map(|p| p.display().to_string()).collect(),
        outputs,
    )
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    /// Checkpoint matching the streams' model digest.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Bitstream file or directory of .dlc files.
    pub input: PathBuf,
    /// Output directory for reconstructed PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_decompress(args: DecompressArgs) -> Result<()> {
    let (ckpt, digest) = Checkpoint::load(&args.checkpoint)?;
    ensure_dir(&args.out)?;
    let files = input_files(&args.input)?;
    let mut outputs = Vec::new();
    for path in &files {
        let bytes = std::fs::read(path)?;
        let stream = Bitstream::from_bytes(&bytes)?;
        let decoded = coding::decode_image(&stream, &ckpt.params, digest)?;
        let out_path = args
            .out
            .join(path.file_stem().unwrap_or_default())
            .with_extension("png");
        save_image(&decoded.image, &out_path)?;
        log::info!("{} -> {}", path.display(), out_path.display());
        outputs.push(out_path.display().to_string());
    }
    write_manifest(
        &args.out,
        "decompress",
        ResolvedCompress {
            checkpoint: args.checkpoint.display().to_string(),
            model_digest: digest_hex(&digest),
            lambda_d: ckpt.config.lambda_d,
        },
        files.iter().map(|p| p.display().to_string()).collect(),
        outputs,
    )
}
