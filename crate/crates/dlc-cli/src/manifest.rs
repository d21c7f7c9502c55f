//! Run manifests: every subcommand writes one capturing the resolved
//! configuration, seed and format versions. Timestamps live only here.

use std::path::Path;

use serde::Serialize;

use dlc_core::Result;

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub checkpoint_format_version: u32,
    pub bitstream_format_version: u8,
    pub resolved: C,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timestamp_unix: u64,
}

pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    command: &str,
    resolved: C,
    inputs: Vec<String>,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        checkpoint_format_version: dlc_core::checkpoint::FORMAT_VERSION,
        bitstream_format_version: dlc_core::coding::FORMAT_VERSION,
        resolved,
        inputs,
        outputs,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(out_dir.join("manifest.json"), json)?;
    Ok(())
}
