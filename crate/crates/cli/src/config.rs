use std::fs;
use std::path::Path;

use clap::ValueEnum;
use serde::Deserialize;
use voxset::detect::ToyConfig;
use voxset::pcio::SceneSpec;

use crate::commands::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub n_list: Vec<usize>,
    pub k: usize,
    pub d: usize,
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            n_list: vec![50_000, 100_000, 200_000],
            k: 8,
            d: 16,
            repeats: 5,
        }
    }
}

/// Contents of `--config`. Command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub precision: Option<Precision>,
    pub scene: Option<SceneSpec>,
    pub toy: Option<ToyConfig>,
    pub bench: Option<BenchSettings>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        if let Some(scene) = &cfg.scene {
            scene.validate()?;
        }
        if let Some(toy) = &cfg.toy {
            toy.model.validate()?;
            toy.scene.validate()?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse(
            "seed = 3\nprecision = \"f32\"\n[bench]\nn_list = [10, 20]\n[toy.train]\nsteps = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.precision, Some(Precision::F32));
        assert_eq!(cfg.bench.unwrap().n_list, vec![10, 20]);
        assert_eq!(cfg.toy.unwrap().train.steps, 5);
        assert!(RunConfig::parse("sede = 3\n").is_err());
        assert!(RunConfig::parse("[toy.train]\nstepz = 5\n").is_err());
    }
}
