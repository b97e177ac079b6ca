use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{generation_backend, GenerationParams, PromptTemplate};
use crate::backends::{ScorerKind, ScorerSpec};
use crate::cda::CdaMode;
use crate::data::{sha256_hex, StereoSetVariant, GENDER};
use crate::entropy::{entailment_judge, FilterPolicy};
use crate::error::{Error, Result};
use crate::finetune::TrainConfig;

use super::Variant;

fn default_bias_type() -> Option<String> {
    Some(GENDER.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    /// Defaults to the bundled lexicon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    pub stereoset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crows: Option<PathBuf>,
    #[serde(default)]
    pub stereoset_variant: StereoSetVariant,
    /// Benchmark items of other bias types are ignored; `None` keeps all.
    #[serde(default = "default_bias_type")]
    pub bias_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdaConfig {
    pub mode: CdaMode,
    /// Fail on ambiguous words instead of resolving them by rule.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub generator: String,
    pub judge: String,
    /// The model being debiased; must be a `local:` checkpoint to train.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_retries: usize,
    pub drop_ceiling: f64,
    pub max_in_flight: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            drop_ceiling: 0.2,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub k_values: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            k_values: vec![20.0, 30.0, 40.0],
        }
    }
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Cda, Variant::ContextCda]
}

/// Whole-run configuration, read from TOML. Relative paths resolve against
/// the config file's directory. The top-level `seed` drives generation and
/// training and overrides their own `seed` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub cda: CdaConfig,
    pub backends: BackendConfig,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default)]
    pub train: TrainConfig,
    /// Fine-tuned variants to produce; the vanilla model is always reported.
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.generation.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Canonical TOML form, independent of formatting in the source file.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn target_spec(&self) -> Result<ScorerSpec> {
        let mut spec: ScorerSpec = self.backends.target.parse()?;
        if spec.kind == ScorerKind::Local {
            spec.model_id = self
                .resolve(Path::new(&spec.model_id))
                .to_string_lossy()
                .into_owned();
        }
        Ok(spec)
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        match &self.backends.template {
            Some(p) => PromptTemplate::load(self.resolve(p)),
            None => Ok(PromptTemplate::default()),
        }
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let mut paths = vec![
            ("data.corpus", &self.data.corpus),
            ("data.stereoset", &self.data.stereoset),
        ];
        if let Some(p) = &self.data.lexicon {
            paths.push(("data.lexicon", p));
        }
        if let Some(p) = &self.data.crows {
            paths.push(("data.crows", p));
        }
        if let Some(p) = &self.backends.template {
            paths.push(("backends.template", p));
        }
        for (key, p) in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(Error::Config(format!(
                    "{key}: {} does not exist",
                    full.display()
                )));
            }
        }

        let template = self.template()?;
        generation_backend(&self.backends.generator, &template)?;
        entailment_judge(&self.backends.judge)?;
        let target = self.target_spec()?;
        let trains = self.variants.iter().any(|v| *v != Variant::Vanilla);
        if trains && target.kind != ScorerKind::Local {
            return Err(Error::Config(format!(
                "backends.target {:?} is not trainable; fine-tuning needs a local checkpoint",
                self.backends.target
            )));
        }
        if target.kind == ScorerKind::Local && !Path::new(&target.model_id).is_dir() {
            return Err(Error::Config(format!(
                "backends.target: no checkpoint directory at {}",
                target.model_id
            )));
        }

        self.generation.validate()?;
        self.filter.validate()?;
        self.train.validate()?;
        for &k in &self.ablation.k_values {
            FilterPolicy::new(k)?;
        }
        if !(0.0..=1.0).contains(&self.augment.drop_ceiling) {
            return Err(Error::Config(
                "augment.drop_ceiling must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
out_dir = "run"
[data]
corpus = "corpus.jsonl"
stereoset = "ss.jsonl"
[backends]
generator = "mock"
judge = "mock"
target = "local:vanilla"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::parse(MINIMAL, "/base").unwrap();
        assert_eq!(cfg.filter.k_percent, 30.0);
        assert_eq!(cfg.generation.num_samples, 5);
        assert_eq!(cfg.cda.mode, CdaMode::TwoSided);
        assert_eq!(cfg.data.bias_type.as_deref(), Some("gender"));
        assert_eq!(cfg.variants, vec![Variant::Cda, Variant::ContextCda]);
        assert_eq!(cfg.out_dir(), PathBuf::from("/base/run"));
        assert_eq!(cfg.target_spec().unwrap().model_id, "/base/vanilla");
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        let bad = format!("{MINIMAL}\n[filter]\nk = 3\n");
        assert!(matches!(
            PipelineConfig::parse(&bad, "/"),
            Err(Error::Config(_))
        ));
        let cfg = PipelineConfig::parse(MINIMAL, "/nonexistent").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("data.corpus"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = PipelineConfig::parse(MINIMAL, "/b").unwrap();
        let b = PipelineConfig::parse(&MINIMAL.replace(" = ", "="), "/b").unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
