use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use dlc_core::metrics::{bd_quality, bd_rate, read_curve_csv};
use dlc_core::Result;

use super::ensure_dir;
use crate::manifest::write_manifest;

#[derive(Args, Debug)]
pub struct BdrateArgs {
    /// Reference curve CSV (bpp,quality).
    #[arg(long)]
    pub reference: PathBuf,
    /// Test curve CSV (bpp,quality).
    #[arg(long)]
    pub test: PathBuf,
    /// Optional output directory for bd.csv and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedBd {
    reference: String,
    test: String,
}

pub fn run(args: BdrateArgs) -> Result<()> {
    let reference = read_curve_csv(&args.reference, "reference")?;
    let test = read_curve_csv(&args.test, "test")?;
    let rate = bd_rate(&reference, &test)?;
    let quality = bd_quality(&reference, &test)?;
    println!("bd_rate_pct,{rate}");
    println!("bd_quality,{quality}");

    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let csv = format!("metric,value\nbd_rate_pct,{rate}\nbd_quality,{quality}\n");
        std::fs::write(out.join("bd.csv"), csv)?;
        write_manifest(
            out,
            "bdrate",
            ResolvedBd {
                reference: args.reference.display().to_string(),
                test: args.test.display().to_string(),
            },
            vec![
                args.reference.display().to_string(),
                args.test.display().to_string(),
            ],
            vec![out.join("bd.csv").display().to_string()],
        )?;
    }
    Ok(())
}
