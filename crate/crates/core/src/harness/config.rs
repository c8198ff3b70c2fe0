//! Experiment specification: a flat key=value config format, CLI override
//! merging, canonical serialization, and the spec hash that stamps run
//! manifests.

use crate::error::NnError;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, NnError>;

/// Which dataset a run draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn parse(token: &str) -> Result<DatasetKind> {
        match token {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(NnError::config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// Attack selection token, materialized into an AttackKind once the input
/// shape is known. Written forms: `rand`, `topk`, `topk:K`, `center`,
/// `target:R0:C0:R1:C1` (top-left inclusive, bottom-right exclusive).
#[derive(Debug, Clone, PartialEq)]
pub enum AttackChoice {
    Rand,
    TopK(Option<usize>),
    Center,
    Target {
        r0: usize,
        c0: usize,
        r1: usize,
        c1: usize,
    },
}

impl AttackChoice {
    pub fn parse(token: &str) -> Result<AttackChoice> {
        let parts: Vec<&str> = token.split(':').collect();
        match parts.as_slice() {
            ["rand"] => Ok(AttackChoice::Rand),
            ["topk"] => Ok(AttackChoice::TopK(None)),
            ["topk", k] => {
                let k = k
                    .parse::<usize>()
                    .map_err(|_| NnError::config(format!("bad top-k count '{k}'")))?;
                Ok(AttackChoice::TopK(Some(k)))
            }
            ["center"] => Ok(AttackChoice::Center),
            ["target", r0, c0, r1, c1] => {
                let num = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| NnError::config(format!("bad mask bound '{s}'")))
                };
                Ok(AttackChoice::Target {
                    r0: num(r0)?,
                    c0: num(c0)?,
                    r1: num(r1)?,
                    c1: num(c1)?,
                })
            }
            _ => Err(NnError::config(format!("unknown attack token '{token}'"))),
        }
    }

    /// The canonical written form (inverse of `parse`).
    pub fn token(&self) -> String {
        match self {
            AttackChoice::Rand => "rand".to_string(),
            AttackChoice::TopK(None) => "topk".to_string(),
            AttackChoice::TopK(Some(k)) => format!("topk:{k}"),
            AttackChoice::Center => "center".to_string(),
            AttackChoice::Target { r0, c0, r1, c1 } => format!("target:{r0}:{c0}:{r1}:{c1}"),
        }
    }

    /// Short label used in CSV rows.
    pub fn label(&self) -> &'static str {
        match self {
            AttackChoice::Rand => "rand",
            AttackChoice::TopK(_) => "topk",
            AttackChoice::Center => "center",
            AttackChoice::Target { .. } => "target",
        }
    }
}

/// Full description of a campaign. Epsilon and alpha are in 1/255 units to
/// match a pixel-valued budget axis; they are divided by 255 at attack time.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset: DatasetKind,
    pub model_preset: super::presets::Preset,
    pub attacks: Vec<AttackChoice>,
    pub epsilons: Vec<f64>,
    pub n_images: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub alpha: f64,
    pub iters: usize,
    pub ig_steps: usize,
    pub beta: f64,
    pub metric_k: usize,
    pub checkpoint: Option<PathBuf>,
    pub train_epochs: Option<usize>,
    pub data_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            dataset: DatasetKind::Synthetic,
            model_preset: super::presets::Preset::MlpSmall,
            attacks: vec![
                AttackChoice::Rand,
                AttackChoice::TopK(None),
                AttackChoice::Center,
            ],
            epsilons: vec![8.0],
            n_images: 50,
            seed: 0,
            output_dir: PathBuf::from("out"),
            alpha: 0.5,
            iters: 300,
            ig_steps: 100,
            beta: 10.0,
            metric_k: 100,
            checkpoint: None,
            train_epochs: None,
            data_dir: None,
        }
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(value: &str, f: F) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

impl ExperimentSpec {
    /// Applies one key=value assignment; shared by file parsing and CLI
    /// overrides so both go through identical validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| NnError::config(format!("bad integer '{v}' for key '{key}'")))
        };
        let float = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| NnError::config(format!("bad number '{v}' for key '{key}'")))
        };
        match key {
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "model_preset" => self.model_preset = super::presets::Preset::parse(value)?,
            "attacks" => self.attacks = parse_list(value, AttackChoice::parse)?,
            "epsilons" => self.epsilons = parse_list(value, |s| float(s))?,
            "n_images" => self.n_images = int(value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| NnError::config(format!("bad seed '{value}'")))?
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "alpha" => self.alpha = float(value)?,
            "iters" => self.iters = int(value)?,
            "ig_steps" => self.ig_steps = int(value)?,
            "beta" => self.beta = float(value)?,
            "metric_k" => self.metric_k = int(value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "train_epochs" => self.train_epochs = Some(int(value)?),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            other => return Err(NnError::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a flat key=value file: one assignment per line, '#' comments.
    pub fn from_file(path: &Path) -> Result<ExperimentSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(NnError::io(format!("reading {}", path.display())))?;
        let mut spec = ExperimentSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(NnError::config(format!(
                    "line {}: expected key=value, got '{line}'",
                    lineno + 1
                )));
            };
            spec.set(key.trim(), value.trim())?;
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attacks.is_empty() {
            return Err(NnError::config("attacks list is empty"));
        }
        if self.epsilons.is_empty() {
            return Err(NnError::config("epsilons list is empty"));
        }
        for &e in &self.epsilons {
            if !e.is_finite() || e < 0.0 {
                return Err(NnError::config(format!("bad epsilon {e}")));
            }
        }
        if self.n_images == 0 {
            return Err(NnError::config("n_images must be positive"));
        }
        if !(self.alpha > 0.0) || self.iters == 0 {
            return Err(NnError::config("alpha and iters must be positive"));
        }
        Ok(())
    }

    /// Canonical textual form: fixed key order, list values comma-joined.
    /// Identical specs always canonicalize to identical strings.
    pub fn canonical_string(&self) -> String {
        let attacks: Vec<String> = self.attacks.iter().map(|a| a.token()).collect();
        let eps: Vec<String> = self.epsilons.iter().map(|e| format!("{e:?}")).collect();
        format!(
            "dataset={}\nmodel_preset={}\nattacks={}\nepsilons={}\nn_images={}\nseed={}\n\
             alpha={:?}\niters={}\nig_steps={}\nbeta={:?}\nmetric_k={}\ntrain_epochs={}\n",
            self.dataset.name(),
            self.model_preset.name(),
            attacks.join(","),
            eps.join(","),
            self.n_images,
            self.seed,
            self.alpha,
            self.iters,
            self.ig_steps,
            self.beta,
            self.metric_k,
            self.train_epochs.map(|e| e.to_string()).unwrap_or_default(),
        )
    }

    /// SHA-256 of the canonical form, hex-encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parsing_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(
            &path,
            "# campaign\ndataset = synthetic\nattacks = topk:50,center # iterated\n\
             epsilons = 2,4,8\nn_images = 5\nseed = 42\noutput_dir = /tmp/o\n",
        )
        .unwrap();
        let mut spec = ExperimentSpec::from_file(&path).unwrap();
        assert_eq!(spec.dataset, DatasetKind::Synthetic);
        assert_eq!(
            spec.attacks,
            vec![AttackChoice::TopK(Some(50)), AttackChoice::Center]
        );
        assert_eq!(spec.epsilons, vec![2.0, 4.0, 8.0]);
        assert_eq!(spec.n_images, 5);
        assert_eq!(spec.seed, 42);
        // CLI-style override wins over the file value.
        spec.set("n_images", "9").unwrap();
        assert_eq!(spec.n_images, 9);
        spec.validate().unwrap();
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        let mut spec = ExperimentSpec::default();
        assert!(spec.set("batch", "4").is_err());
        assert!(spec.set("epsilons", "2,x").is_err());
        assert!(spec.set("dataset", "imagenet").is_err());
        assert!(AttackChoice::parse("blur").is_err());
        assert!(AttackChoice::parse("target:1:2").is_err());
    }

    #[test]
    fn attack_tokens_roundtrip() {
        for token in ["rand", "topk", "topk:50", "center", "target:4:4:12:12"] {
            let parsed = AttackChoice::parse(token).unwrap();
            assert_eq!(parsed.token(), token);
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentSpec::default();
        let mut b = ExperimentSpec::default();
        assert_eq!(a.hash(), b.hash());
        b.set("seed", "1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_catches_empties() {
        let mut spec = ExperimentSpec::default();
        spec.epsilons.clear();
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::default();
        spec.attacks.clear();
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::default();
        spec.n_images = 0;
        assert!(spec.validate().is_err());
    }
}
