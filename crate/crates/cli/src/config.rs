//! File-backed settings. Precedence: flags, then the file, then defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use threadkb::baselines::ChunkConfig;
use threadkb::gateway::GatewayConfig;
use threadkb::pipeline::PipelineConfig;
use threadkb::session::SessionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkSettings {
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkSettings {
    fn default() -> Self {
        let c = ChunkConfig::howto();
        Self { size: c.chunk_size, overlap: c.overlap }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Knowledge-base file read by query/session/export/stats and written by
    /// ingest/build.
    pub kb: PathBuf,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineConfig,
    pub session: SessionConfig,
    pub chunk: ChunkSettings,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            kb: PathBuf::from("threadkb.kb"),
            gateway: GatewayConfig::default(),
            pipeline: PipelineConfig::new(),
            session: SessionConfig::default(),
            chunk: ChunkSettings::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.kb.is_relative() {
            cfg.kb = base.join(&cfg.kb);
        }
        if let Some(s) = cfg.gateway.script.as_mut() {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    /// The file named by `--config`/THREADKB_CONFIG, or defaults.
    pub fn resolve(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}
