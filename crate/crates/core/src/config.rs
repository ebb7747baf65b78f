//! Declarative run configuration (TOML).
//!
//! Every section has defaults, so an empty file describes the full two-phase
//! recipe on 224-pixel inputs. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Split, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::inference::EvalSettings;
use crate::model::{BackboneSpec, HeadSpec};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    /// One-hot ground-truth CSV.
    pub manifest: PathBuf,
    /// Image directory for this split; defaults to `data.image_root`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub image_root: PathBuf,
    pub image_size: usize,
    /// Keep decoded images in memory across epochs.
    pub cache_images: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<SplitPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<SplitPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitPaths>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_root: PathBuf::from("data/images"),
            image_size: IMAGE_SIDE,
            cache_images: false,
            train: None,
            val: None,
            test: None,
        }
    }
}

impl DataConfig {
    pub fn split(&self, split: Split) -> Option<&SplitPaths> {
        match split {
            Split::Train => self.train.as_ref(),
            Split::Val => self.val.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }

    pub fn read_manifest(&self, split: Split) -> Result<Manifest> {
        let paths = self
            .split(split)
            .ok_or_else(|| Error::Config(format!("no manifest configured for split `{split}`")))?;
        let root = paths.images.as_deref().unwrap_or(&self.image_root);
        Manifest::read(&paths.manifest, split, root)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tta: bool,
    pub n_aug: usize,
    /// Records per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tta: false,
            n_aug: 4,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.image_root);
        for s in [&mut self.data.train, &mut self.data.val, &mut self.data.test]
            .into_iter()
            .flatten()
        {
            fix(&mut s.manifest);
            if let Some(i) = &mut s.images {
                fix(i);
            }
        }
        if let Some(w) = &mut self.model.backbone.pretrained_weights {
            fix(w);
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.image_size < 32 {
            return Err(Error::Config(format!(
                "image_size {} is too small",
                self.data.image_size
            )));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be at least 1".into()));
        }
        self.model.head.validate()?;
        self.train.validate()
    }

    pub fn eval_settings(&self, use_tta: bool) -> EvalSettings {
        EvalSettings {
            use_tta,
            n_aug: self.eval.n_aug,
            policy: self.train.augmentation,
            seed: self.seed,
            batch_size: self.eval.batch_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerSpec;
    use crate::schedule::Shape;

    #[test]
    fn defaults_are_the_reference_recipe() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.data.image_size, 224);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.base_lr, 1e-2);
        assert_eq!(cfg.train.shape, Shape::Cosine);
        let p = &cfg.train.phases;
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].n_cycles, p[0].first_cycle_epochs, p[0].cycle_mult), (4, 1, 1));
        assert_eq!(p[0].frozen_groups, [0, 1]);
        assert_eq!((p[1].n_cycles, p[1].first_cycle_epochs, p[1].cycle_mult), (4, 1, 2));
        assert!(p[1].frozen_groups.is_empty());
        for phase in p {
            assert_eq!(phase.group_divisors, [9.0, 3.0, 1.0]);
        }
        assert_eq!(cfg.train.augmentation.zoom_max, 1.1);
        assert_eq!(cfg.model.backbone.name, "resnet50");
        assert_eq!(cfg.eval.n_aug, 4);
        assert!(matches!(cfg.train.optimizer, OptimizerSpec::Sgd { momentum, .. } if momentum == 0.9));
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = r#"
            seed = 7
            [data]
            image_root = "imgs"
            cache_images = true
            [data.train]
            manifest = "train.csv"
            [data.test]
            manifest = "test.csv"
            images = "test_imgs"
            [model.backbone]
            name = "toy"
            feature_channels = 16
            [model.head]
            hidden_widths = [32, 16]
            dropout_ps = [0.1, 0.1, 0.2]
            n_outputs = 7
            [train]
            batch_size = 4
            base_lr = 0.05
            shape = "triangular"
            [train.optimizer]
            kind = "adam"
            [[train.phases]]
            n_cycles = 2
            first_cycle_epochs = 3
            cycle_mult = 1
            group_divisors = [4.0, 2.0, 1.0]
            frozen_groups = [0]
        "#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.phases.len(), 1);
        assert!(matches!(cfg.train.optimizer, OptimizerSpec::Adam { beta2, .. } if beta2 == 0.999));
        let once = cfg.to_toml().unwrap();
        let again = RunConfig::parse(&once).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml().unwrap(), once);

        let default_text = RunConfig::default().to_toml().unwrap();
        assert_eq!(RunConfig::parse(&default_text).unwrap(), RunConfig::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("[train]\nbatch_size = 0\nbase_lr = 0.01\nphases = []").is_err());
        assert!(RunConfig::parse("unknown_key = 1").is_err());
        assert!(RunConfig::parse("[model.head]\nhidden_widths=[8]\ndropout_ps=[0.1,0.1]\nn_outputs=7").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = RunConfig::parse("[data.train]\nmanifest = \"gt.csv\"").unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.data.train.unwrap().manifest, Path::new("/base/gt.csv"));
        assert_eq!(cfg.output.dir, Path::new("/base/runs/default"));
    }
}
