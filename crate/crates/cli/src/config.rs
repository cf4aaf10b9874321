//! TOML configuration shared by every subcommand.
//!
//! ```toml
//! generations = "data/generations.jsonl"
//! annotations = "data/annotations.jsonl"
//! store_dir = "store"
//! annotations_per_generation = 10
//! seed = 0
//! prng = "chacha8"
//! port = 8080
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use errspan_core::rng::PRNG_NAME;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub generations: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub answer_key: Option<PathBuf>,
    pub annotations_per_generation: usize,
    pub seed: u64,
    pub prng: String,
    pub bind: String,
    pub port: u16,
    pub open_enrollment: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            generations: None,
            annotations: None,
            store_dir: PathBuf::from("store"),
            answer_key: None,
            annotations_per_generation: 10,
            seed: 0,
            prng: PRNG_NAME.to_string(),
            bind: "127.0.0.1".to_string(),
            port: 8080,
            open_enrollment: false,
        }
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut config: Config = toml::from_str(text)?;
        if config.prng != PRNG_NAME {
            bail!("unsupported prng {:?}, only {PRNG_NAME:?} is available", config.prng);
        }
        if config.annotations_per_generation == 0 {
            bail!("annotations_per_generation must be positive");
        }
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.generations.as_mut().map(resolve);
        config.annotations.as_mut().map(resolve);
        config.answer_key.as_mut().map(resolve);
        resolve(&mut config.store_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }
}
