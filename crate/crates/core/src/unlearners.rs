//! Unlearning methods: each maps a trained model, a retain/forget split and an
//! unlearning seed to an unlearned model.
//!
//! SSD and LFSSD consume no randomness: their output depends only on the
//! trained model, the split and their hyperparameters. The other methods
//! derive every random choice from labelled streams of the unlearning seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{ForgetSplit, LabelMode, LabeledExample, TargetKind};
use crate::error::{Error, Result};
use crate::nncore::{
    self, example_grad, input_grad, log_softmax, objective_and_grad, run_sgd, Architecture, ModelParams, Sgd, Target,
    TrainConfig,
};
use crate::seedkit::{derive_stream, fnv1a64, Seed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Retrain,
    RandomLabels,
    Unsir,
    BadTeacher,
    Ssd,
    Lfssd,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Retrain,
        MethodKind::RandomLabels,
        MethodKind::Unsir,
        MethodKind::BadTeacher,
        MethodKind::Ssd,
        MethodKind::Lfssd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Retrain => "retrain",
            MethodKind::RandomLabels => "random_labels",
            MethodKind::Unsir => "unsir",
            MethodKind::BadTeacher => "bad_teacher",
            MethodKind::Ssd => "ssd",
            MethodKind::Lfssd => "lfssd",
        }
    }

    /// True for methods whose output ignores the unlearning seed.
    pub fn is_deterministic(self) -> bool {
        matches!(self, MethodKind::Ssd | MethodKind::Lfssd)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("method.kind", format!("unknown unlearning method `{s}`")))
    }
}

/// Fine-tuning budget shared by Random-Labels and Bad-Teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneHyper {
    pub epochs_u: usize,
    pub lr_u: f64,
    pub batch: usize,
}

impl Default for FinetuneHyper {
    fn default() -> Self {
        FinetuneHyper {
            epochs_u: 5,
            lr_u: 0.02,
            batch: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsirHyper {
    pub noise_steps: usize,
    pub noise_lr: f64,
    pub n_noise: usize,
    pub impair_epochs: usize,
    pub repair_epochs: usize,
    pub lr_u: f64,
    pub batch: usize,
}

impl Default for UnsirHyper {
    fn default() -> Self {
        UnsirHyper {
            noise_steps: 20,
            noise_lr: 0.1,
            n_noise: 64,
            impair_epochs: 1,
            repair_epochs: 1,
            lr_u: 0.02,
            batch: 32,
        }
    }
}

/// Reference set for the full-data importance in SSD/LFSSD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceBaseline {
    /// retain ∪ forget
    #[default]
    Full,
    RetainOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DampeningHyper {
    /// Selection threshold: dampen where forget importance exceeds `alpha`
    /// times the baseline importance.
    pub alpha: f64,
    /// Dampening strength.
    pub lam: f64,
    pub baseline: ImportanceBaseline,
}

impl Default for DampeningHyper {
    fn default() -> Self {
        DampeningHyper {
            alpha: 2.0,
            lam: 1.0,
            baseline: ImportanceBaseline::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnlearnMethod {
    Retrain,
    RandomLabels(FinetuneHyper),
    Unsir(UnsirHyper),
    BadTeacher(FinetuneHyper),
    Ssd(DampeningHyper),
    Lfssd(DampeningHyper),
}

impl UnlearnMethod {
    /// The method with default hyperparameters.
    pub fn with_defaults(kind: MethodKind) -> Self {
        match kind {
            MethodKind::Retrain => UnlearnMethod::Retrain,
            MethodKind::RandomLabels => UnlearnMethod::RandomLabels(FinetuneHyper::default()),
            MethodKind::Unsir => UnlearnMethod::Unsir(UnsirHyper::default()),
            MethodKind::BadTeacher => UnlearnMethod::BadTeacher(FinetuneHyper::default()),
            MethodKind::Ssd => UnlearnMethod::Ssd(DampeningHyper::default()),
            MethodKind::Lfssd => UnlearnMethod::Lfssd(DampeningHyper::default()),
        }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            UnlearnMethod::Retrain => MethodKind::Retrain,
            UnlearnMethod::RandomLabels(_) => MethodKind::RandomLabels,
            UnlearnMethod::Unsir(_) => MethodKind::Unsir,
            UnlearnMethod::BadTeacher(_) => MethodKind::BadTeacher,
            UnlearnMethod::Ssd(_) => MethodKind::Ssd,
            UnlearnMethod::Lfssd(_) => MethodKind::Lfssd,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind().is_deterministic()
    }

    /// 16-hex-digit digest of the method's hyperparameters together with the
    /// training configuration (which Retrain and the fine-tuning optimiser use).
    pub fn hyper_digest(&self, train_config: &TrainConfig) -> String {
        let doc = serde_json::json!({ "method": self, "train": train_config });
        format!("{:016x}", fnv1a64(&doc.to_string()))
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("{path}.{name}"),
                    format!("must be a positive real, got {v}"),
                ))
            }
        };
        let nonzero = |name: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.{name}"), "must be at least 1"))
            }
        };
        match self {
            UnlearnMethod::Retrain => Ok(()),
            UnlearnMethod::RandomLabels(h) | UnlearnMethod::BadTeacher(h) => {
                positive("lr_u", h.lr_u)?;
                nonzero("batch", h.batch)
            }
            UnlearnMethod::Unsir(h) => {
                positive("lr_u", h.lr_u)?;
                positive("noise_lr", h.noise_lr)?;
                nonzero("n_noise", h.n_noise)?;
                nonzero("batch", h.batch)
            }
            UnlearnMethod::Ssd(h) | UnlearnMethod::Lfssd(h) => {
                positive("alpha", h.alpha)?;
                positive("lam", h.lam)
            }
        }
    }
}

/// Applies `method` to `trained`. SSD and LFSSD ignore `seed`.
pub fn unlearn(
    method: &UnlearnMethod,
    trained: &ModelParams,
    split: &ForgetSplit,
    arch: &Architecture,
    train_config: &TrainConfig,
    seed: Seed,
) -> Result<ModelParams> {
    if trained.arch() != arch {
        return Err(Error::config("arch", "trained model does not match the architecture"));
    }
    method.validate("method")?;
    match method {
        UnlearnMethod::Retrain => retrain(split, arch, train_config, seed),
        UnlearnMethod::RandomLabels(h) => random_labels(trained, split, train_config, seed, h),
        UnlearnMethod::Unsir(h) => unsir(trained, split, train_config, seed, h),
        UnlearnMethod::BadTeacher(h) => bad_teacher(trained, split, train_config, seed, h),
        UnlearnMethod::Ssd(h) => ssd(trained, split, h),
        UnlearnMethod::Lfssd(h) => lfssd(trained, split, h),
    }
}

/// Trains from scratch on the retain set.
pub fn retrain(split: &ForgetSplit, arch: &Architecture, config: &TrainConfig, seed: Seed) -> Result<ModelParams> {
    if split.retain_train.is_empty() {
        return Err(Error::UndefinedMetric("retrain on an empty retain set".into()));
    }
    nncore::train(arch, &split.retain_train, config, split.label_mode, seed)
}

fn require_forget(split: &ForgetSplit) -> Result<()> {
    if split.forget_train.is_empty() {
        return Err(Error::UndefinedMetric("empty forget set".into()));
    }
    Ok(())
}

/// Draws a class uniformly from `0..n_classes` excluding `exclude`.
pub(crate) fn other_label(stream: &mut crate::seedkit::RngStream, n_classes: usize, exclude: usize) -> usize {
    let r = stream.below(n_classes - 1);
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

/// Fine-tunes on retain data with true labels plus forget data whose labels
/// are redrawn every epoch from the wrong classes (stream `labels`).
pub fn random_labels(
    trained: &ModelParams,
    split: &ForgetSplit,
    config: &TrainConfig,
    seed: Seed,
    hyper: &FinetuneHyper,
) -> Result<ModelParams> {
    require_forget(split)?;
    let n_classes = trained.arch().n_classes;
    if n_classes < 2 {
        return Err(Error::Unsupported("random labels needs at least two classes".into()));
    }
    let mode = split.label_mode;
    let items: Vec<&LabeledExample> = split.retain_train.iter().chain(&split.forget_train).collect();
    let n_retain = split.retain_train.len();
    let mut labels: Vec<usize> = items.iter().map(|e| e.label(mode)).collect();
    let mut label_rng = derive_stream(seed, "labels");
    let mut current_epoch = None;

    let mut params = trained.clone();
    let mut sgd = Sgd::new(params.len(), hyper.lr_u, config.momentum);
    let mut order = derive_stream(seed, "order");
    run_sgd(
        &mut params,
        items.len(),
        hyper.epochs_u,
        hyper.batch,
        &mut sgd,
        &mut order,
        |p, epoch, idx| {
            if current_epoch != Some(epoch) {
                current_epoch = Some(epoch);
                for (label, e) in labels[n_retain..].iter_mut().zip(&items[n_retain..]) {
                    *label = other_label(&mut label_rng, n_classes, e.label(mode));
                }
            }
            objective_and_grad(
                p,
                idx.iter()
                    .map(|&i| (items[i].features.as_slice(), Target::Class(labels[i]))),
                config.l2,
            )
            .map(|(_, g)| g)
        },
    )?;
    Ok(params)
}

/// Error-maximising inputs for UNSIR: Gaussian starts (stream `noise`) moved
/// by gradient ascent on the trained model's loss against `forget_label`.
/// Returns `(initial, learned)`.
/// Noise inputs before and after ascent.
pub type NoiseBatch = (Vec<Vec<f64>>, Vec<Vec<f64>>);

pub fn learn_noise(trained: &ModelParams, forget_label: usize, seed: Seed, hyper: &UnsirHyper) -> Result<NoiseBatch> {
    let dim = trained.arch().input_dim;
    let mut rng = derive_stream(seed, "noise");
    let init: Vec<Vec<f64>> = (0..hyper.n_noise).map(|_| rng.draw_gaussian(dim)).collect();
    let mut learned = init.clone();
    for x in &mut learned {
        for _ in 0..hyper.noise_steps {
            let (_, g) = input_grad(trained, x, Target::Class(forget_label))?;
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi += hyper.noise_lr * gi;
            }
        }
    }
    Ok((init, learned))
}

/// Impair on retain data plus forget-labelled noise, then repair on retain
/// data alone. Class removal only.
pub fn unsir(
    trained: &ModelParams,
    split: &ForgetSplit,
    config: &TrainConfig,
    seed: Seed,
    hyper: &UnsirHyper,
) -> Result<ModelParams> {
    if split.target.kind != TargetKind::FullClass {
        return Err(Error::Unsupported(
            "UNSIR is defined for full-class targets only".into(),
        ));
    }
    if split.label_mode != LabelMode::Superclass {
        return Err(Error::Unsupported(
            "UNSIR needs the forgotten class to be a predicted label (label_mode = superclass)".into(),
        ));
    }
    require_forget(split)?;
    let forget_label = split.target.id;
    let mode = split.label_mode;
    let (_, noise) = learn_noise(trained, forget_label, seed, hyper)?;

    let mut params = trained.clone();
    let impair: Vec<(&[f64], usize)> = split
        .retain_train
        .iter()
        .map(|e| (e.features.as_slice(), e.label(mode)))
        .chain(noise.iter().map(|x| (x.as_slice(), forget_label)))
        .collect();
    let mut sgd = Sgd::new(params.len(), hyper.lr_u, config.momentum);
    run_sgd(
        &mut params,
        impair.len(),
        hyper.impair_epochs,
        hyper.batch,
        &mut sgd,
        &mut derive_stream(seed, "impair"),
        |p, _, idx| {
            objective_and_grad(
                p,
                idx.iter().map(|&i| (impair[i].0, Target::Class(impair[i].1))),
                config.l2,
            )
            .map(|(_, g)| g)
        },
    )?;

    let retain = &split.retain_train;
    let mut sgd = Sgd::new(params.len(), hyper.lr_u, config.momentum);
    run_sgd(
        &mut params,
        retain.len(),
        hyper.repair_epochs,
        hyper.batch,
        &mut sgd,
        &mut derive_stream(seed, "repair"),
        |p, _, idx| {
            objective_and_grad(
                p,
                idx.iter()
                    .map(|&i| (retain[i].features.as_slice(), Target::Class(retain[i].label(mode)))),
                config.l2,
            )
            .map(|(_, g)| g)
        },
    )?;
    Ok(params)
}

/// Distils the trained model (competent teacher) on retain data and a freshly
/// initialised model (incompetent teacher, stream `bad`) on forget data by
/// minimising `KL(student ‖ teacher)`.
pub fn bad_teacher(
    trained: &ModelParams,
    split: &ForgetSplit,
    config: &TrainConfig,
    seed: Seed,
    hyper: &FinetuneHyper,
) -> Result<ModelParams> {
    require_forget(split)?;
    let incompetent = nncore::init_params(trained.arch(), &mut derive_stream(seed, "bad"));
    let items: Vec<(&[f64], Vec<f64>)> = split
        .retain_train
        .iter()
        .map(|e| (e, trained))
        .chain(split.forget_train.iter().map(|e| (e, &incompetent)))
        .map(|(e, teacher)| {
            let logits = nncore::forward(teacher, &e.features)?;
            Ok((e.features.as_slice(), log_softmax(&logits)))
        })
        .collect::<Result<_>>()?;

    let mut params = trained.clone();
    let mut sgd = Sgd::new(params.len(), hyper.lr_u, config.momentum);
    let mut order = derive_stream(seed, "order");
    run_sgd(
        &mut params,
        items.len(),
        hyper.epochs_u,
        hyper.batch,
        &mut sgd,
        &mut order,
        |p, _, idx| {
            objective_and_grad(
                p,
                idx.iter().map(|&i| (items[i].0, Target::KlTo(&items[i].1))),
                config.l2,
            )
            .map(|(_, g)| g)
        },
    )?;
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceSource {
    /// Squared gradients of the per-example cross-entropy at the true label.
    FisherLoss,
    /// Squared gradients of `½‖logits‖²`.
    OutputNorm,
}

/// Per-parameter importance, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceDiagonal {
    pub values: Vec<f64>,
    pub source: ImportanceSource,
}

pub fn importance_diagonal(
    params: &ModelParams,
    examples: &[LabeledExample],
    label_mode: LabelMode,
    source: ImportanceSource,
) -> Result<ImportanceDiagonal> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("importance over an empty set".into()));
    }
    let mut acc = vec![0.0; params.len()];
    for e in examples {
        let target = match source {
            ImportanceSource::FisherLoss => Target::Class(e.label(label_mode)),
            ImportanceSource::OutputNorm => Target::OutputNorm,
        };
        let (_, g) = example_grad(params, &e.features, target)?;
        for (a, gi) in acc.iter_mut().zip(g.values()) {
            *a += gi * gi;
        }
    }
    let inv = 1.0 / examples.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(ImportanceDiagonal { values: acc, source })
}

/// Scales parameter `p` by `min(lam·D_full[p]/D_f[p], 1)` wherever
/// `D_f[p] > alpha·D_full[p]`; leaves every other parameter untouched.
pub fn dampen(
    trained: &ModelParams,
    full: &ImportanceDiagonal,
    forget: &ImportanceDiagonal,
    alpha: f64,
    lam: f64,
) -> Result<ModelParams> {
    if full.values.len() != trained.len() || forget.values.len() != trained.len() {
        return Err(Error::DimensionMismatch {
            expected: trained.len(),
            got: full.values.len().min(forget.values.len()),
        });
    }
    let mut out = trained.clone();
    for ((p, &d_full), &d_f) in out.values_mut().iter_mut().zip(&full.values).zip(&forget.values) {
        if d_f > alpha * d_full {
            let beta = (lam * d_full / d_f).min(1.0);
            *p *= beta;
        }
    }
    Ok(out)
}

fn selective_dampening(
    trained: &ModelParams,
    split: &ForgetSplit,
    hyper: &DampeningHyper,
    source: ImportanceSource,
) -> Result<ModelParams> {
    require_forget(split)?;
    if !(hyper.alpha > 0.0 && hyper.lam > 0.0) {
        return Err(Error::config("method", "alpha and lam must be positive"));
    }
    let baseline = match hyper.baseline {
        ImportanceBaseline::Full => split.full_train(),
        ImportanceBaseline::RetainOnly => split.retain_train.clone(),
    };
    let full = importance_diagonal(trained, &baseline, split.label_mode, source)?;
    let forget = importance_diagonal(trained, &split.forget_train, split.label_mode, source)?;
    dampen(trained, &full, &forget, hyper.alpha, hyper.lam)
}

/// Selective synaptic dampening with loss-gradient (Fisher) importance.
pub fn ssd(trained: &ModelParams, split: &ForgetSplit, hyper: &DampeningHyper) -> Result<ModelParams> {
    selective_dampening(trained, split, hyper, ImportanceSource::FisherLoss)
}

/// Label-free variant: importance from the output-norm gradient.
pub fn lfssd(trained: &ModelParams, split: &ForgetSplit, hyper: &DampeningHyper) -> Result<ModelParams> {
    selective_dampening(trained, split, hyper, ImportanceSource::OutputNorm)
}
