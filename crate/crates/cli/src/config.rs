//! The TOML configuration file and how command-line flags override it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use refguard::provider::HttpProviderConfig;
use refguard::verifier::VerifierConfig;
use refguard::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

/// Everything a command may need. Every field is optional in the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub provider: ProviderKind,
    /// Scripted replies for the mock provider.
    pub script: Option<PathBuf>,
    /// Guidance records loaded into the static memory tier.
    pub static_seed: Option<PathBuf>,
    /// Dynamic-memory snapshot restored before a command and, for `fix`,
    /// written back afterwards.
    pub memory: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    pub jobs: usize,
    pub run: RunConfig,
    pub verifier: VerifierConfig,
    pub http: HttpProviderConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            script: None,
            static_seed: None,
            memory: None,
            embedding_dim: None,
            jobs: 1,
            run: RunConfig::default(),
            verifier: VerifierConfig::default(),
            http: HttpProviderConfig::default(),
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
