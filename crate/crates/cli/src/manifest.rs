use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clarity_stein::config::ConfigFile;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsRecord {
    pub envs: Vec<u32>,
    pub n: usize,
    pub duration: f64,
    /// Base environment files before randomization.
    pub configs: Vec<(u32, ConfigFile)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRecord {
    pub cases: usize,
    pub tol: f64,
}

/// Everything needed to reproduce a command invocation, plus what it
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: RunStatus,
    pub seed: Option<u64>,
    pub env_id: Option<u32>,
    pub config_path: Option<String>,
    pub out_dir: String,
    pub threads: usize,
    /// Resolved configuration with every default written out.
    pub config: Option<ConfigFile>,
    pub trials: Option<TrialsRecord>,
    pub grad_check: Option<GradCheckRecord>,
    /// Wall-clock seconds per planning call.
    pub plan_seconds: Vec<f64>,
    pub wall_seconds: Option<f64>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            status: RunStatus::Incomplete,
            seed: None,
            env_id: None,
            config_path: None,
            out_dir: out_dir.display().to_string(),
            threads: rayon::current_num_threads(),
            config: None,
            trials: None,
            grad_check: None,
            plan_seconds: Vec::new(),
            wall_seconds: None,
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn path(&self) -> PathBuf {
        Path::new(&self.out_dir).join(MANIFEST_FILE)
    }

    /// Writes the manifest through a temporary file so a reader never sees
    /// a half-written document.
    pub fn write(&self) -> std::io::Result<()> {
        let path = self.path();
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, self).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
