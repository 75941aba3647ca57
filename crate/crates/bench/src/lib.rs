//! Shared fixtures for the benchmarks.

use unlbench_core::datagen::{generate, ForgetSplit};
use unlbench_core::nncore::{init_params, train};
use unlbench_core::seedkit::derive_stream;
use unlbench_core::{Architecture, DatasetSpec, ForgetTarget, LabelMode, ModelParams, Seed, TrainConfig};

pub struct Fixture {
    pub arch: Architecture,
    pub train_config: TrainConfig,
    pub split: ForgetSplit,
    pub full_train: Vec<unlbench_core::LabeledExample>,
    pub untrained: ModelParams,
}

/// Desk-scale data and architecture; `trained` runs a full training.
pub fn desk_fixture() -> Fixture {
    let spec = DatasetSpec::default();
    let ds = generate(&spec, Seed(1)).expect("default spec is valid");
    let split = ds
        .split_forget(ForgetTarget::full_class(3), LabelMode::Superclass)
        .expect("class 3 exists");
    let arch = Architecture::new(spec.dim, vec![32, 32], spec.superclasses).expect("valid architecture");
    let untrained = init_params(&arch, &mut derive_stream(Seed(0), "init"));
    Fixture {
        arch,
        train_config: TrainConfig::default(),
        split,
        full_train: ds.train,
        untrained,
    }
}

impl Fixture {
    pub fn trained(&self) -> ModelParams {
        train(
            &self.arch,
            &self.full_train,
            &self.train_config,
            LabelMode::Superclass,
            Seed(0),
        )
        .expect("training succeeds")
    }
}
