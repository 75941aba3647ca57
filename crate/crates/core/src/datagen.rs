//! Synthetic superclass/subclass blobs and retain/forget splits.
//!
//! Every subclass is an isotropic Gaussian cluster around its own center;
//! subclasses are grouped `M` at a time into superclasses, so subclass `k`
//! belongs to superclass `k / M`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seedkit::{derive_stream, Seed};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub superclass: usize,
    pub subclass: usize,
}

impl LabeledExample {
    pub fn label(&self, mode: LabelMode) -> usize {
        match mode {
            LabelMode::Superclass => self.superclass,
            LabelMode::Subclass => self.subclass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub dim: usize,
    pub superclasses: usize,
    pub subclasses_per_superclass: usize,
    pub n_per_subclass_train: usize,
    pub n_per_subclass_test: usize,
    pub cluster_spread: f64,
    pub center_scale: f64,
}

impl Default for DatasetSpec {
    /// Desk-scale default: 4 superclasses of 5 subclasses in 8 dimensions.
    fn default() -> Self {
        DatasetSpec {
            dim: 8,
            superclasses: 4,
            subclasses_per_superclass: 5,
            n_per_subclass_train: 40,
            n_per_subclass_test: 20,
            cluster_spread: 0.15,
            center_scale: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn n_subclasses(&self) -> usize {
        self.superclasses * self.subclasses_per_superclass
    }

    pub fn n_classes(&self, mode: LabelMode) -> usize {
        match mode {
            LabelMode::Superclass => self.superclasses,
            LabelMode::Subclass => self.n_subclasses(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("superclasses", self.superclasses),
            ("subclasses_per_superclass", self.subclasses_per_superclass),
            ("n_per_subclass_train", self.n_per_subclass_train),
            ("n_per_subclass_test", self.n_per_subclass_test),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.n_subclasses() < 2 {
            return Err(Error::config(
                "superclasses",
                "superclasses * subclasses_per_superclass must be at least 2",
            ));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("center_scale", self.center_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be a positive real, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which label the classifier predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Superclass,
    Subclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    FullClass,
    SubClass,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::FullClass => "full_class",
            TargetKind::SubClass => "sub_class",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full_class" => Some(TargetKind::FullClass),
            "sub_class" => Some(TargetKind::SubClass),
            _ => None,
        }
    }
}

/// The data to be forgotten: one whole superclass or one subclass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetTarget {
    pub kind: TargetKind,
    pub id: usize,
}

impl ForgetTarget {
    pub fn full_class(id: usize) -> Self {
        ForgetTarget {
            kind: TargetKind::FullClass,
            id,
        }
    }

    pub fn sub_class(id: usize) -> Self {
        ForgetTarget {
            kind: TargetKind::SubClass,
            id,
        }
    }

    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        let bound = match self.kind {
            TargetKind::FullClass => spec.superclasses,
            TargetKind::SubClass => spec.n_subclasses(),
        };
        if self.id >= bound {
            return Err(Error::config(
                "target.id",
                format!("{} id {} out of range [0, {bound})", self.kind.as_str(), self.id),
            ));
        }
        Ok(())
    }

    pub fn matches(&self, ex: &LabeledExample) -> bool {
        match self.kind {
            TargetKind::FullClass => ex.superclass == self.id,
            TargetKind::SubClass => ex.subclass == self.id,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgetSplit {
    pub retain_train: Vec<LabeledExample>,
    pub forget_train: Vec<LabeledExample>,
    pub retain_test: Vec<LabeledExample>,
    pub forget_test: Vec<LabeledExample>,
    pub label_mode: LabelMode,
    pub target: ForgetTarget,
}

impl ForgetSplit {
    /// Retain followed by forget training examples: the original training set
    /// up to order.
    pub fn full_train(&self) -> Vec<LabeledExample> {
        self.retain_train.iter().chain(&self.forget_train).cloned().collect()
    }
}

/// Draws a dataset. Centers, train points and test points use the stream
/// labels `centers`, `train` and `test`; examples are emitted subclass by
/// subclass.
pub fn generate(spec: &DatasetSpec, seed: Seed) -> Result<Dataset> {
    spec.validate()?;
    let mut center_rng = derive_stream(seed, "centers");
    let centers: Vec<Vec<f64>> = (0..spec.n_subclasses())
        .map(|_| {
            center_rng
                .draw_gaussian(spec.dim)
                .into_iter()
                .map(|z| spec.center_scale * z)
                .collect()
        })
        .collect();

    let draw = |label: &str, per_subclass: usize| {
        let mut rng = derive_stream(seed, label);
        let mut out = Vec::with_capacity(per_subclass * centers.len());
        for (subclass, center) in centers.iter().enumerate() {
            for _ in 0..per_subclass {
                let noise = rng.draw_gaussian(spec.dim);
                out.push(LabeledExample {
                    features: center
                        .iter()
                        .zip(noise)
                        .map(|(c, z)| c + spec.cluster_spread * z)
                        .collect(),
                    superclass: subclass / spec.subclasses_per_superclass,
                    subclass,
                });
            }
        }
        out
    };

    Ok(Dataset {
        spec: spec.clone(),
        train: draw("train", spec.n_per_subclass_train),
        test: draw("test", spec.n_per_subclass_test),
    })
}

impl Dataset {
    /// Partitions train and test sets around `target`, preserving order.
    pub fn split_forget(&self, target: ForgetTarget, label_mode: LabelMode) -> Result<ForgetSplit> {
        target.validate(&self.spec)?;
        let (forget_train, retain_train) = self.train.iter().cloned().partition(|e| target.matches(e));
        let (forget_test, retain_test) = self.test.iter().cloned().partition(|e| target.matches(e));
        Ok(ForgetSplit {
            retain_train,
            forget_train,
            retain_test,
            forget_test,
            label_mode,
            target,
        })
    }
}

/// Writes examples as CSV with header `x0..x{d-1},superclass,subclass`.
pub fn write_csv<W: Write>(examples: &[LabeledExample], dim: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    header.push("superclass".into());
    header.push("subclass".into());
    w.write_record(&header)?;
    for ex in examples {
        if ex.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: ex.features.len(),
            });
        }
        let mut row: Vec<String> = ex.features.iter().map(|x| x.to_string()).collect();
        row.push(ex.superclass.to_string());
        row.push(ex.subclass.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<LabeledExample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let n = header.len();
    let dim = n
        .checked_sub(2)
        .ok_or_else(|| Error::Results("dataset header too short".into()))?;
    let expected_ok = header.iter().take(dim).enumerate().all(|(k, h)| h == format!("x{k}"))
        && header.get(dim) == Some("superclass")
        && header.get(dim + 1) == Some("subclass");
    if !expected_ok {
        return Err(Error::Results(format!("unexpected dataset header: {header:?}")));
    }
    let bad = |line: usize, what: &str| Error::Results(format!("dataset row {line}: bad {what}"));
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let features = (0..dim)
            .map(|k| rec[k].parse::<f64>().map_err(|_| bad(line, "feature")))
            .collect::<Result<Vec<_>>>()?;
        out.push(LabeledExample {
            features,
            superclass: rec[dim].parse().map_err(|_| bad(line, "superclass"))?,
            subclass: rec[dim + 1].parse().map_err(|_| bad(line, "subclass"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(c: usize, m: usize, n_train: usize, n_test: usize) -> DatasetSpec {
        DatasetSpec {
            superclasses: c,
            subclasses_per_superclass: m,
            n_per_subclass_train: n_train,
            n_per_subclass_test: n_test,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn counts() {
        let ds = generate(&small(2, 1, 10, 3), Seed(1)).unwrap();
        assert_eq!(ds.train.len(), 20);
        assert_eq!(ds.test.len(), 6);
        assert!(ds.train.iter().all(|e| e.subclass == e.superclass));
    }

    #[test]
    fn deterministic() {
        let spec = DatasetSpec::default();
        assert_eq!(generate(&spec, Seed(9)).unwrap(), generate(&spec, Seed(9)).unwrap());
        assert_ne!(generate(&spec, Seed(9)).unwrap(), generate(&spec, Seed(10)).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        let s = DatasetSpec {
            dim: 0,
            ..DatasetSpec::default()
        };
        assert!(generate(&s, Seed(0)).is_err());
        let s = small(1, 1, 1, 1);
        assert!(s.validate().is_err());
        let s = DatasetSpec {
            cluster_spread: 0.0,
            ..DatasetSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn nearest_centroid_separates_default_spec() {
        // Oracle: classify each test point by the nearest empirical subclass
        // centroid of the training set.
        let spec = DatasetSpec::default();
        let ds = generate(&spec, Seed(2024)).unwrap();
        let k = spec.n_subclasses();
        let mut sums = vec![vec![0.0; spec.dim]; k];
        let mut counts = vec![0usize; k];
        for e in &ds.train {
            counts[e.subclass] += 1;
            for (s, x) in sums[e.subclass].iter_mut().zip(&e.features) {
                *s += x;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        let correct = ds
            .test
            .iter()
            .filter(|e| {
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = centroids[a].iter().zip(&e.features).map(|(c, x)| (c - x).powi(2)).sum();
                        let db: f64 = centroids[b].iter().zip(&e.features).map(|(c, x)| (c - x).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                best / spec.subclasses_per_superclass == e.superclass
            })
            .count();
        let acc = correct as f64 / ds.test.len() as f64;
        assert!(acc >= 0.95, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn full_class_split_counts() {
        let ds = generate(&small(10, 1, 10, 2), Seed(3)).unwrap();
        let split = ds
            .split_forget(ForgetTarget::full_class(3), LabelMode::Superclass)
            .unwrap();
        assert_eq!(split.forget_train.len(), 10);
        assert_eq!(split.retain_train.len(), 90);
        assert!(split.forget_train.iter().all(|e| e.superclass == 3));
        assert!(split.retain_test.iter().all(|e| e.superclass != 3));
    }

    #[test]
    fn sub_class_split_fraction() {
        let spec = small(4, 5, 10, 2);
        let ds = generate(&spec, Seed(3)).unwrap();
        let split = ds
            .split_forget(ForgetTarget::sub_class(0), LabelMode::Superclass)
            .unwrap();
        assert_eq!(split.forget_train.len() * spec.n_subclasses(), ds.train.len());
        assert!(split.forget_test.iter().all(|e| e.subclass == 0 && e.superclass == 0));
        // superclass 0 stays visible through its other subclasses
        assert!(split.retain_train.iter().any(|e| e.superclass == 0));
    }

    #[test]
    fn split_is_a_partition_preserving_order() {
        let ds = generate(&small(3, 2, 4, 2), Seed(5)).unwrap();
        let split = ds
            .split_forget(ForgetTarget::sub_class(4), LabelMode::Subclass)
            .unwrap();
        let mut merged: Vec<_> = split.full_train();
        assert_eq!(merged.len(), ds.train.len());
        merged.sort_by_key(|e| e.subclass);
        let mut orig = ds.train.clone();
        orig.sort_by_key(|e| e.subclass);
        assert_eq!(merged, orig);
        let retained: Vec<_> = ds.train.iter().filter(|e| e.subclass != 4).cloned().collect();
        assert_eq!(split.retain_train, retained);
    }

    #[test]
    fn out_of_range_target() {
        let ds = generate(&small(2, 2, 1, 1), Seed(0)).unwrap();
        assert!(matches!(
            ds.split_forget(ForgetTarget::full_class(2), LabelMode::Superclass),
            Err(Error::Config { .. })
        ));
        assert!(ds
            .split_forget(ForgetTarget::sub_class(3), LabelMode::Superclass)
            .is_ok());
        assert!(ds
            .split_forget(ForgetTarget::sub_class(4), LabelMode::Superclass)
            .is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = generate(&small(2, 2, 3, 1), Seed(77)).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds.train, ds.spec.dim, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,x2,x3,x4,x5,x6,x7,superclass,subclass\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), ds.train);
    }
}
