//! Settings resolution. Each value comes from the first of: command-line
//! flag, environment variable, config file, built-in default.

use std::path::{Path, PathBuf};

use anyhow::Context;
use biasgpt_core::engine::{EngineKind, DEFAULT_ENDPOINT};
use biasgpt_core::StoreDir;
use clap::Args;
use serde::Deserialize;

pub const DEFAULT_STORE: &str = "biasgpt-store";
pub const DEFAULT_CREDENTIAL_ENV: &str = "OPENAI_API_KEY";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file; its values sit below flags and environment
    #[arg(long, env = "BIASGPT_CONFIG", global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Store directory holding ratings.jsonl, finetune_jobs.json and registry.toml
    #[arg(long, env = "BIASGPT_STORE", global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,

    /// Routing lexicon (TOML); the shipped lexicon is used when unset
    #[arg(long, env = "BIASGPT_LEXICON", global = true, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,

    /// Registry override file; defaults to <store>/registry.toml
    #[arg(long, env = "BIASGPT_REGISTRY", global = true, value_name = "FILE")]
    pub registry: Option<PathBuf>,

    /// Generation engine: mock or live
    #[arg(long, env = "BIASGPT_ENGINE", global = true)]
    pub engine: Option<EngineKind>,

    /// Fine-tune provider: mock or live
    #[arg(long, env = "BIASGPT_PROVIDER", global = true)]
    pub provider: Option<EngineKind>,

    /// Base URL of the OpenAI-compatible service
    #[arg(long, env = "BIASGPT_ENDPOINT", global = true, value_name = "URL")]
    pub endpoint: Option<String>,

    /// Name of the environment variable holding the API credential
    #[arg(long, env = "BIASGPT_CREDENTIAL_ENV", global = true, value_name = "NAME")]
    pub credential_env: Option<String>,
}

/// Shape of the optional config file. Relative paths are resolved against
/// the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub engine: Option<String>,
    pub provider: Option<String>,
    pub endpoint: Option<String>,
    pub credential_env: Option<String>,
    pub cors_origins: Option<Vec<String>>,
    pub duel_capacity: Option<usize>,
    pub fallback_message: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.store, &mut cfg.lexicon, &mut cfg.registry].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub store: StoreDir,
    pub lexicon: Option<PathBuf>,
    pub registry: PathBuf,
    pub engine: EngineKind,
    pub provider: EngineKind,
    pub endpoint: String,
    pub credential_env: String,
    pub cors_origins: Vec<String>,
    pub duel_capacity: Option<usize>,
    pub fallback_message: Option<String>,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> anyhow::Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let kind = |flag: Option<EngineKind>, file: &Option<String>, what: &str| -> anyhow::Result<EngineKind> {
            match (flag, file) {
                (Some(k), _) => Ok(k),
                (None, Some(s)) => s
                    .parse()
                    .map_err(|e: String| anyhow::anyhow!("config file {what}: {e}")),
                (None, None) => Ok(EngineKind::Mock),
            }
        };
        let store = StoreDir::new(
            args.store
                .clone()
                .or(file.store)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
        );
        let lexicon = args.lexicon.clone().or(file.lexicon);
        if let Some(p) = &lexicon {
            anyhow::ensure!(p.is_file(), "lexicon file {} does not exist", p.display());
        }
        let registry = args
            .registry
            .clone()
            .or(file.registry)
            .unwrap_or_else(|| store.registry());
        Ok(Self {
            engine: kind(args.engine, &file.engine, "engine")?,
            provider: kind(args.provider, &file.provider, "provider")?,
            endpoint: args
                .endpoint
                .clone()
                .or(file.endpoint)
                .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
            credential_env: args
                .credential_env
                .clone()
                .or(file.credential_env)
                .unwrap_or_else(|| DEFAULT_CREDENTIAL_ENV.to_string()),
            cors_origins: file.cors_origins.unwrap_or_default(),
            duel_capacity: file.duel_capacity,
            fallback_message: file.fallback_message,
            store,
            lexicon,
            registry,
        })
    }

    /// The credential, read from the configured variable. Empty counts as unset.
    pub fn credential(&self) -> Option<String> {
        std::env::var(&self.credential_env).ok().filter(|v| !v.trim().is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_and_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("biasgpt.toml");
        std::fs::write(&cfg, "store = \"data\"\nengine = \"live\"\nendpoint = \"http://file\"\n").unwrap();
        let args = GlobalArgs {
            config: Some(cfg),
            endpoint: Some("http://flag".into()),
            ..Default::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.endpoint, "http://flag");
        assert_eq!(s.engine, EngineKind::Live);
        assert_eq!(s.provider, EngineKind::Mock);
        assert_eq!(s.store.root(), dir.path().join("data"));
        assert_eq!(s.registry, dir.path().join("data").join("registry.toml"));
        assert_eq!(s.credential_env, DEFAULT_CREDENTIAL_ENV);
    }

    #[test]
    fn bad_config_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "engine = \"remote\"\n").unwrap();
        let args = GlobalArgs {
            config: Some(cfg.clone()),
            ..Default::default()
        };
        assert!(Settings::resolve(&args).is_err());
        std::fs::write(&cfg, "colour = \"red\"\n").unwrap();
        assert!(Settings::resolve(&args).is_err());
        let missing = GlobalArgs {
            lexicon: Some(dir.path().join("nope.toml")),
            ..Default::default()
        };
        assert!(Settings::resolve(&missing).is_err());
    }
}
