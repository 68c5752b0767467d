//! The experiment config: one TOML file with every knob pre-filled, so the
//! binary runs the default experiment with no file at all. Angles are degrees
//! here and converted to radians at the boundary; nothing inside the library
//! ever sees degrees.

use crate::error::{CliError, CliResult};
use crate::steps::parse_pipeline;
use pointblank::trigger::{BallTriggerParams, RotationTriggerParams, TriggerSpec, WltParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// one seed pins generation, poisoning, training, and evaluation
    pub seed: u64,
    pub out_dir: String,
    pub dataset: DatasetSection,
    pub poison: PoisonSection,
    pub wlt: WltSection,
    pub ball: BallSection,
    pub rotation: RotationSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: "runs/default".into(),
            dataset: DatasetSection::default(),
            poison: PoisonSection::default(),
            wlt: WltSection::default(),
            ball: BallSection::default(),
            rotation: RotationSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// "synthetic", or a path to a manifest CSV (path,label,split)
    pub source: String,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// points per cloud; also the sampling budget for OFF meshes
    pub points: usize,
    pub noise_sigma: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: "synthetic".into(),
            train_per_class: 40,
            test_per_class: 20,
            points: 512,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisonSection {
    /// poisoned fraction of the train set; 0 skips poisoning entirely
    pub rate: f64,
    pub target: usize,
    /// "wlt" | "ball" | "rotation"
    pub trigger: String,
}

impl Default for PoisonSection {
    fn default() -> Self {
        PoisonSection { rate: 0.1, target: 0, trigger: "wlt".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WltSection {
    pub w: usize,
    pub alpha_deg: f64,
    pub s: f64,
    pub h: f64,
}

impl Default for WltSection {
    fn default() -> Self {
        WltSection { w: 16, alpha_deg: 5.0, s: 5.0, h: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallSection {
    pub center: [f64; 3],
    pub radius: f64,
    pub ratio: f64,
}

impl Default for BallSection {
    fn default() -> Self {
        let d = BallTriggerParams::default();
        BallSection { center: d.center, radius: d.radius, ratio: d.ratio }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSection {
    pub angle_deg: f64,
}

impl Default for RotationSection {
    fn default() -> Self {
        RotationSection { angle_deg: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// training-time pre-processing, e.g. ["sor:30:50", "rotate_z:20"]
    pub pipeline: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { epochs: 60, batch_size: 32, lr: 1e-3, pipeline: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// inference-time pre-processing applied before every prediction
    pub pipeline: Vec<String>,
}

/// Command-line overrides folded into the file (or default) config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub trigger: Option<String>,
    pub pipeline: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, over: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = over.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &over.out {
            cfg.out_dir = out.clone();
        }
        if let Some(trigger) = &over.trigger {
            cfg.poison.trigger = trigger.clone();
        }
        if let Some(pipeline) = &over.pipeline {
            cfg.train.pipeline = if pipeline == "none" {
                vec![]
            } else {
                pipeline.split(',').map(|s| s.trim().to_string()).collect()
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Everything checkable without touching the filesystem.
    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        if d.source == "synthetic" && (d.train_per_class == 0 || d.test_per_class == 0) {
            return Err(CliError::config("per-class sample counts must be at least 1"));
        }
        if d.points < 2 {
            return Err(CliError::config("dataset.points must be at least 2"));
        }
        if !d.noise_sigma.is_finite() || d.noise_sigma < 0.0 {
            return Err(CliError::config("dataset.noise_sigma must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.poison.rate) {
            return Err(CliError::config("poison.rate must lie in [0, 1)"));
        }
        self.trigger_spec()?.apply_validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(CliError::config("train.epochs and train.batch_size must be at least 1"));
        }
        if !self.train.lr.is_finite() || self.train.lr <= 0.0 {
            return Err(CliError::config("train.lr must be positive"));
        }
        parse_pipeline(&self.train.pipeline)?;
        parse_pipeline(&self.eval.pipeline)?;
        Ok(())
    }

    pub fn trigger_spec(&self) -> CliResult<TriggerSpec> {
        match self.poison.trigger.as_str() {
            "wlt" => Ok(TriggerSpec::Wlt(WltParams {
                w: self.wlt.w,
                alpha: self.wlt.alpha_deg.to_radians(),
                s: self.wlt.s,
                h: self.wlt.h,
                seed: 0,
            })),
            "ball" => Ok(TriggerSpec::Ball(BallTriggerParams {
                center: self.ball.center,
                radius: self.ball.radius,
                ratio: self.ball.ratio,
            })),
            "rotation" => Ok(TriggerSpec::Rotation(RotationTriggerParams {
                angle_z: self.rotation.angle_deg.to_radians(),
            })),
            other => Err(CliError::config(format!(
                "poison.trigger must be wlt, ball, or rotation (got `{other}`)"
            ))),
        }
    }

    /// Short stable id: hash of the effective config's canonical TOML, with
    /// the output location blanked so re-homing a run keeps its identity.
    pub fn run_id(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = String::new();
        let text = toml::to_string(&keyed).expect("config always serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..6])
    }

    /// The pipeline column used in reports: training steps joined by `+`.
    pub fn pipeline_label(&self) -> String {
        if self.train.pipeline.is_empty() {
            "none".into()
        } else {
            self.train.pipeline.join("+")
        }
    }
}

pub(crate) trait ValidateSpec {
    fn apply_validate(&self) -> CliResult<()>;
}

impl ValidateSpec for TriggerSpec {
    fn apply_validate(&self) -> CliResult<()> {
        match self {
            TriggerSpec::Wlt(p) => p.validate().map_err(|e| CliError::config(e.to_string())),
            TriggerSpec::Ball(p) => {
                if !p.radius.is_finite() || p.radius <= 0.0 || !(p.ratio > 0.0 && p.ratio < 1.0) {
                    return Err(CliError::config("ball needs radius > 0 and ratio in (0, 1)"));
                }
                if p.center.iter().any(|c| !c.is_finite()) {
                    return Err(CliError::config("ball center must be finite"));
                }
                Ok(())
            }
            TriggerSpec::Rotation(p) => {
                if !p.angle_z.is_finite() {
                    return Err(CliError::config("rotation angle must be finite"));
                }
                Ok(())
            }
        }
    }
}
