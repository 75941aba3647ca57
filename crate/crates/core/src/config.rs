//! The harness configuration document.
//!
//! A single JSON object; unknown keys are rejected at every level so that a
//! misspelt hyperparameter fails loudly instead of silently taking its
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetSpec, ForgetTarget, LabelMode};
use crate::error::{Error, Result};
use crate::nncore::{Architecture, TrainConfig};
use crate::seedkit::Seed;
use crate::sweep::{plan_common_practice, plan_recommended, Experiment, SweepPlan};
use crate::unlearners::{MethodKind, UnlearnMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub hidden_dims: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_dims: vec![32, 32],
        }
    }
}

fn default_common_j() -> usize {
    11
}

fn default_recommended_i() -> usize {
    11
}

fn one() -> usize {
    1
}

/// Which evaluation protocol(s) to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    CommonPractice {
        #[serde(default = "default_common_j")]
        j: usize,
    },
    Recommended {
        #[serde(default = "default_recommended_i")]
        i: usize,
        #[serde(default = "one")]
        j: usize,
    },
    Both {
        #[serde(default = "default_common_j")]
        common_j: usize,
        #[serde(default = "default_recommended_i")]
        recommended_i: usize,
        #[serde(default = "one")]
        recommended_j: usize,
    },
}

fn default_targets() -> Vec<ForgetTarget> {
    vec![ForgetTarget::full_class(0)]
}

fn default_methods() -> Vec<UnlearnMethod> {
    MethodKind::ALL.into_iter().map(UnlearnMethod::with_defaults).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub dataset_seed: Seed,
    #[serde(default = "default_targets")]
    pub targets: Vec<ForgetTarget>,
    #[serde(default)]
    pub label_mode: LabelMode,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<UnlearnMethod>,
    pub protocol: ProtocolConfig,
    pub root_seed: Seed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl HarnessConfig {
    /// Desk-scale configuration running both protocols on the reference
    /// full-class target (class 3).
    pub fn desk_scale(root_seed: Seed) -> Self {
        HarnessConfig {
            dataset: DatasetSpec::default(),
            dataset_seed: Seed(1),
            targets: vec![ForgetTarget::full_class(3)],
            label_mode: LabelMode::Superclass,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            methods: default_methods(),
            protocol: ProtocolConfig::Both {
                common_j: default_common_j(),
                recommended_i: default_recommended_i(),
                recommended_j: one(),
            },
            root_seed,
            output_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(
            self.dataset.dim,
            self.arch.hidden_dims.clone(),
            self.dataset.n_classes(self.label_mode),
        )
    }

    pub fn experiment(&self, target: ForgetTarget) -> Result<Experiment> {
        Ok(Experiment {
            dataset: self.dataset.clone(),
            dataset_seed: self.dataset_seed,
            target,
            label_mode: self.label_mode,
            arch: self.architecture()?,
            train: self.train.clone(),
            methods: self.methods.clone(),
        })
    }

    /// Checks every nested invariant by building the plans.
    pub fn validate(&self) -> Result<()> {
        self.plans().map(|_| ())
    }

    /// One plan per (target, protocol), targets outermost, common practice
    /// before recommended.
    pub fn plans(&self) -> Result<Vec<SweepPlan>> {
        self.dataset.validate().map_err(|e| prefix("dataset", e))?;
        if self.targets.is_empty() {
            return Err(Error::config("targets", "at least one target is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        for (k, m) in self.methods.iter().enumerate() {
            m.validate(&format!("methods[{k}]"))?;
            if m.kind() == MethodKind::Unsir {
                if let Some(t) = self
                    .targets
                    .iter()
                    .position(|t| t.kind != crate::datagen::TargetKind::FullClass)
                {
                    return Err(Error::config(
                        format!("targets[{t}]"),
                        "unsir supports full_class targets only; drop unsir or the sub_class target",
                    ));
                }
            }
        }
        self.train.validate()?;
        self.architecture()?;
        let mut plans = Vec::new();
        for (k, &target) in self.targets.iter().enumerate() {
            target
                .validate(&self.dataset)
                .map_err(|e| prefix(&format!("targets[{k}]"), e))?;
            let e = self.experiment(target)?;
            let root = self.root_seed;
            match self.protocol {
                ProtocolConfig::CommonPractice { j } => {
                    plans.push(plan_common_practice(j, root, e).map_err(|e| prefix("protocol.common_practice", e))?)
                }
                ProtocolConfig::Recommended { i, j } => {
                    plans.push(plan_recommended(i, j, root, e).map_err(|e| prefix("protocol.recommended", e))?)
                }
                ProtocolConfig::Both {
                    common_j,
                    recommended_i,
                    recommended_j,
                } => {
                    plans
                        .push(plan_common_practice(common_j, root, e.clone()).map_err(|e| prefix("protocol.both", e))?);
                    plans.push(
                        plan_recommended(recommended_i, recommended_j, root, e)
                            .map_err(|e| prefix("protocol.both", e))?,
                    );
                }
            }
        }
        Ok(plans)
    }
}

/// Re-roots a config error's field path under `outer`, dropping the inner
/// path's own first segment when it names the same object (`target.id` under
/// `targets[0]`, `protocol.i` under `protocol.recommended`).
fn prefix(outer: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => {
            let inner = ["protocol.", "target."]
                .iter()
                .find_map(|p| path.strip_prefix(p))
                .unwrap_or(&path);
            let path = if inner.is_empty() {
                outer.to_owned()
            } else {
                format!("{outer}.{inner}")
            };
            Error::Config { path, message }
        }
        other => other,
    }
}
