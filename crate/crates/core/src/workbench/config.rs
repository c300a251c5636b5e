use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitFile};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::kg::GraphOptions;
use crate::meta::{Method, TrainConfig};
use crate::model::{Model, ModelDims, EMBEDDING_STD};
use crate::synthetic::{gen_synthetic, SyntheticSpec};

/// Triple files plus a relation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub split: PathBuf,
    /// Fraction of each held-out relation's triples used as queries when no test file is given.
    pub eval_fraction: f64,
    pub inverse_edges: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub embedding_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 64,
            mlp_hidden: 64,
            embedding_std: EMBEDDING_STD,
        }
    }
}

/// Which adaptation-step defaults apply per method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptProfile {
    /// `[train]` values apply unchanged to every method.
    #[default]
    Fixed,
    /// Path k = 1; other methods k = 1 (alpha 0.01).
    Nell,
    /// Path k = 1; other methods k = 5 (alpha 0.001).
    Fb15k237,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub shots: Vec<usize>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            shots: vec![1, 2, 5, 10, 20, 50],
            methods: vec![Method::Neighbor, Method::Path],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Support sizes for the encoder rows; a no-encoder row is always added.
    pub shots: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { shots: vec![1, 50] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seeds: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { seeds: 10 }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub adapt_profile: AdaptProfile,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub files: Option<FilesConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            method: Method::Neighbor,
            out: None,
            adapt_profile: AdaptProfile::Fixed,
            synthetic: Some(SyntheticSpec::default()),
            files: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            ablate: AblateConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths are resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(files), Some(dir)) = (cfg.files.as_mut(), path.parent()) {
            for p in [&mut files.train, &mut files.split] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let Some(t) = files.test.as_mut().filter(|t| t.is_relative()) {
                *t = dir.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.files) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("exactly one of [synthetic] and [files] is required".into())),
        }
        if self.model.dim == 0 || self.model.hidden == 0 || self.model.mlp_hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.eval.beam_width == 0 || self.eval.shots == 0 {
            return Err(Error::Config("beam_width and shots must be positive".into()));
        }
        self.train.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Training hyper-parameters of `method` after applying the adaptation profile.
    pub fn train_for(&self, method: Method) -> TrainConfig {
        match self.adapt_profile {
            AdaptProfile::Fixed => self.train.clone(),
            AdaptProfile::Nell => self.train.clone().with_method_defaults(method, 1),
            AdaptProfile::Fb15k237 => self.train.clone().with_method_defaults(method, 5),
        }
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match (&self.synthetic, &self.files) {
            (Some(spec), _) => Ok(gen_synthetic(spec)?.dataset),
            (None, Some(f)) => {
                let split = SplitFile::load(&f.split)?;
                Dataset::from_files(
                    &f.train,
                    f.test.as_deref(),
                    &split,
                    f.eval_fraction,
                    GraphOptions {
                        inverse_edges: f.inverse_edges,
                        stop_edges: true,
                    },
                    self.seed,
                )
            }
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }

    pub fn new_model(&self, data: &Dataset, seed: u64) -> Result<Model<f32>> {
        let dims = ModelDims::for_graph(&data.graph, self.model.dim, self.model.hidden, self.model.mlp_hidden);
        Model::with_embedding_std(dims, seed, self.model.embedding_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::default().to_toml().unwrap();
        text = text.replace("[train]\n", "[train]\nbogus = 3\n");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn needs_exactly_one_dataset() {
        let cfg = ExperimentConfig {
            synthetic: None,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn profiles() {
        let cfg = ExperimentConfig {
            adapt_profile: AdaptProfile::Fb15k237,
            ..Default::default()
        };
        assert_eq!(cfg.train_for(Method::Maml).adapt_steps, 5);
        assert_eq!(cfg.train_for(Method::Path).adapt_steps, 1);
    }
}
