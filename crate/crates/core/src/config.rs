//! JSON experiment configuration with sections `data`, `model`, `loss`,
//! `train` and `eval`. Unknown keys are rejected and absent keys take their
//! defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, procedural_scene, CleanSource, DatasetManifest, Split, SynthesisConfig};
use crate::error::{Error, Result};
use crate::haze_physics::PhysicsConstants;
use crate::model::{derive_seed, ModelConfig};
use crate::objectives::LossWeights;
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 200,
            val: 20,
            test: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding one sub-directory per split.
    pub root: PathBuf,
    pub beta_range: [f64; 2],
    #[serde(alias = "A_range")]
    pub airlight_range: [f64; 2],
    pub depth_max: f64,
    pub seed: u64,
    pub counts: SplitCounts,
    /// `[height, width]` of generated scenes.
    pub image_size: [usize; 2],
    /// Clean images to synthesize haze for; procedural scenes when absent.
    pub clean_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthesisConfig::default();
        Self {
            root: PathBuf::from("data"),
            beta_range: s.beta_range,
            airlight_range: s.airlight_range,
            depth_max: s.depth_max,
            seed: s.seed,
            counts: SplitCounts::default(),
            image_size: [96, 96],
            clean_dir: None,
        }
    }
}

impl DataConfig {
    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            beta_range: self.beta_range,
            airlight_range: self.airlight_range,
            depth_max: self.depth_max,
            seed: self.seed,
        }
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        self.root.join(split.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.counts.train,
            Split::Val => self.counts.val,
            Split::Test => self.counts.test,
        }
    }

    /// Clean images of every split. PNG files of `clean_dir` are taken in
    /// name order and dealt out train, val, test; without `clean_dir` each
    /// split gets seeded procedural scenes of `image_size`.
    pub fn clean_sources(&self) -> Result<Vec<(Split, Vec<CleanSource>)>> {
        let Some(dir) = &self.clean_dir else {
            let [h, w] = self.image_size;
            return Ok(Split::ALL
                .iter()
                .enumerate()
                .map(|(s, &split)| {
                    let base = derive_seed(self.seed, 16 + s as u64);
                    let sources = (0..self.count(split))
                        .map(|i| CleanSource::Memory {
                            id: format!("{i:05}"),
                            image: procedural_scene(base.wrapping_add(i as u64), h, w),
                        })
                        .collect();
                    (split, sources)
                })
                .collect());
        };
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let mut rest = files.into_iter();
        Ok(Split::ALL
            .iter()
            .map(|&split| {
                let take: Vec<CleanSource> = rest.by_ref().take(self.count(split)).map(CleanSource::File).collect();
                if take.len() < self.count(split) {
                    log::warn!("{}: only {} clean images for the {split} split", dir.display(), take.len());
                }
                (split, take)
            })
            .collect())
    }

    /// Writes every split with a nonzero count under `root/<split>`.
    pub fn synthesize(&self, k: &PhysicsConstants) -> Result<Vec<DatasetManifest>> {
        let mut out = Vec::new();
        for (split, sources) in self.clean_sources()? {
            if self.count(split) == 0 {
                continue;
            }
            let ds = generate_synthetic(&sources, split, &self.split_dir(split), &self.synthesis(), k)?;
            log::info!("{split}: {} samples in {}", ds.count(), ds.root.display());
            out.push(ds);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub out: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthesis().validate()?;
        if self.data.image_size.contains(&0) {
            return Err(Error::Config("data.image_size must be positive".into()));
        }
        self.model.validate()?;
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration always serializes")
    }

    /// Writes the fully resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.model.iterations, 3);
        assert_eq!(c.train.learning_rate, 2e-4);
    }

    #[test]
    fn aliases_and_partial_sections() {
        let c = ExperimentConfig::from_json(r#"{"model": {"K": 2, "eps_A": 0.02}, "data": {"A_range": [0.8, 0.9]}}"#).unwrap();
        assert_eq!(c.model.iterations, 2);
        assert_eq!(c.model.eps_a, 0.02);
        assert_eq!(c.data.airlight_range, [0.8, 0.9]);
        assert_eq!(c.model.widths, [16, 32, 64]);
    }

    #[test]
    fn unknown_keys_and_bad_json_are_rejected() {
        let e = ExperimentConfig::from_json(r#"{"train": {"lr": 1.0}}"#).unwrap_err();
        assert!(e.to_string().contains("lr"), "{e}");
        let e = ExperimentConfig::from_json("{\n  \"train\": {\n    \"steps\": ,\n  }\n}").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(ExperimentConfig::from_json(r#"{"train": {"steps": 0}}"#).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_value(c.to_value()).unwrap();
        assert_eq!(back, c);
    }
}
