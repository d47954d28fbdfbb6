//! Pipeline configuration, stage hashes and seed derivation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::ProsodyConfig;
use crate::classifier::SvmConfig;
use crate::codebook::{GmmParams, Pooling};
use crate::corpus::{Modality, Split};
use crate::error::{Error, Result};
use crate::fusion::{theta_grid, FusionMode};
use crate::video::TrofConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    /// Gaussians per modality codebook.
    pub components: usize,
    /// Descriptors sampled for codebook training, half from each class.
    pub budget: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub kmeans_iters: usize,
    pub variance_floor_ratio: f64,
    pub pooling: Pooling,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        let g = GmmParams::default();
        CodebookConfig {
            components: g.components,
            budget: 1_000_000,
            max_iters: g.max_iters,
            tol: g.tol,
            kmeans_iters: g.kmeans_iters,
            variance_floor_ratio: g.variance_floor_ratio,
            pooling: Pooling::Average,
        }
    }
}

impl CodebookConfig {
    pub fn gmm_params(&self) -> GmmParams {
        GmmParams {
            components: self.components,
            max_iters: self.max_iters,
            tol: self.tol,
            kmeans_iters: self.kmeans_iters,
            variance_floor_ratio: self.variance_floor_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub theta_step: f64,
    /// Fixed weight; when absent it is grid-searched on `theta_split`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub theta_split: Split,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Score,
            theta_step: 0.2,
            theta: None,
            theta_split: Split::Validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub prosody: ProsodyConfig,
    pub video: TrofConfig,
    pub codebook: CodebookConfig,
    pub classifier: SvmConfig,
    pub fusion: FusionConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 20180715,
            prosody: ProsodyConfig::default(),
            video: TrofConfig::default(),
            codebook: CodebookConfig::default(),
            classifier: SvmConfig::default(),
            fusion: FusionConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.prosody.validate()?;
        self.video.validate()?;
        self.classifier.validate()?;
        let cb = &self.codebook;
        if cb.components == 0 {
            return Err(Error::Config("codebook.components must be positive".into()));
        }
        if cb.budget == 0 || cb.budget % 2 != 0 {
            return Err(Error::Config("codebook.budget must be positive and even".into()));
        }
        if !(cb.tol > 0.0) || !(cb.variance_floor_ratio > 0.0) {
            return Err(Error::Config("codebook tolerances must be positive".into()));
        }
        theta_grid(self.fusion.theta_step)?;
        if let Some(t) = self.fusion.theta {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fusion.theta {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Hash of everything that shapes a modality's descriptor files.
    pub fn descriptor_hash(&self, modality: Modality) -> String {
        match modality {
            Modality::Audio => hash_parts(&[&json(&self.prosody)]),
            Modality::Video => hash_parts(&[&json(&self.video)]),
        }
    }

    /// Hash covering descriptors, codebook and classifier of a modality.
    pub fn model_hash(&self, modality: Modality) -> String {
        hash_parts(&[
            &self.descriptor_hash(modality),
            &json(&self.codebook),
            &json(&self.classifier),
            &self.seed.to_string(),
        ])
    }

    /// Stage seed derived from the root seed and a label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

fn hash_parts(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.codebook.components, 256);
        assert_eq!(cfg.codebook.budget, 1_000_000);
        assert_eq!(cfg.classifier.folds, 5);
        assert_eq!((cfg.classifier.c_exp_min, cfg.classifier.c_exp_max), (-3, 15));
        assert_eq!(cfg.fusion.theta_step, 0.2);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[codebook]\ncomponents = 16\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.codebook.components, 16);
        assert_eq!(cfg.codebook.budget, 1_000_000);
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[codebook]\nbudget = 3\n").is_err());
    }

    #[test]
    fn hashes_track_relevant_sections() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.video.threshold = 2e-4;
        assert_eq!(a.descriptor_hash(Modality::Audio), b.descriptor_hash(Modality::Audio));
        assert_ne!(a.descriptor_hash(Modality::Video), b.descriptor_hash(Modality::Video));
        assert_ne!(a.model_hash(Modality::Video), b.model_hash(Modality::Video));
        b.fusion.mode = FusionMode::Output;
        b.paths.out_dir = Some("elsewhere".into());
        assert_eq!(a.model_hash(Modality::Audio), b.model_hash(Modality::Audio));
    }

    #[test]
    fn seeds_are_label_specific() {
        assert_eq!(derive_seed(1, "gmm/audio"), derive_seed(1, "gmm/audio"));
        assert_ne!(derive_seed(1, "gmm/audio"), derive_seed(1, "gmm/video"));
        assert_ne!(derive_seed(1, "gmm/audio"), derive_seed(2, "gmm/audio"));
    }
}
