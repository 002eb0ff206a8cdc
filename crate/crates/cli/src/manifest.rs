use serde::{Deserialize, Serialize};

/// Written as `manifest.json` into every output directory. Replaying `args`
/// with a new `--out` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub input: Option<String>,
    /// Command line after the program name, without `--out`.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Drop `--out X` / `--out=X` from an argument list.
pub fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" || a == "-o" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}
