//! Analysis summary: per (target, method, protocol, metric) variance
//! decomposition, box-plot quantiles and, when both protocols are present,
//! the 2-Wasserstein distance between them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::{ForgetTarget, TargetKind};
use crate::error::{Error, Result};
use crate::seedkit::Seed;
use crate::stats::{self, BoxSummary, EmpiricalDistribution};
use crate::sweep::{MetricName, MetricRecord, Protocol};
use crate::unlearners::MethodKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub variance: String,
    pub quantiles: String,
    pub accuracy_scale: String,
    pub sub_class_forget_accuracy: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            variance: "population (divide by N); v_total = v_between + v_within".into(),
            quantiles: "linear interpolation between order statistics at (n-1)q".into(),
            accuracy_scale: "fractions in [0, 1]; W2 is computed on this scale".into(),
            sub_class_forget_accuracy: "forget-set accuracy for sub_class targets is scored against the \
                                        superclass label, which other subclasses keep predictable"
                .into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub target_kind: TargetKind,
    pub target_id: usize,
    pub method: MethodKind,
    pub hyper_digest: String,
    pub protocol: Protocol,
    pub metric: MetricName,
    pub n_train_seeds: usize,
    pub n_unlearn_seeds: usize,
    pub v_total: f64,
    pub v_between: f64,
    pub v_within: f64,
    pub row_conditionals: Vec<f64>,
    pub quantiles: BoxSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2_vs_other_protocol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub conventions: Conventions,
    pub entries: Vec<AnalysisEntry>,
}

impl AnalysisSummary {
    pub fn find(
        &self,
        target: ForgetTarget,
        method: MethodKind,
        protocol: Protocol,
        metric: MetricName,
    ) -> Option<&AnalysisEntry> {
        self.entries.iter().find(|e| {
            e.target_kind == target.kind
                && e.target_id == target.id
                && e.method == method
                && e.protocol == protocol
                && e.metric == metric
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct GroupKey {
    pub target: ForgetTarget,
    pub method: MethodKind,
    pub hyper_digest: String,
    pub protocol: Protocol,
}

/// A (target, method, protocol) group's records arranged as a grid: rows
/// are training seeds in order of first appearance.
pub(crate) struct Group<'a> {
    pub rows: Vec<Vec<&'a MetricRecord>>,
}

impl Group<'_> {
    pub fn grid(&self, metric: MetricName) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|rec| rec.metric(metric)).collect())
            .collect()
    }

    pub fn values(&self, metric: MetricName) -> Vec<f64> {
        self.rows.iter().flatten().map(|r| r.metric(metric)).collect()
    }
}

/// Groups records. Rows tagged [`Protocol::Custom`] are labelled by shape:
/// one training seed reads as common practice, several as recommended.
pub(crate) fn group_records(records: &[MetricRecord]) -> Result<BTreeMap<GroupKey, Group<'_>>> {
    let mut raw: BTreeMap<GroupKey, Vec<(Seed, Vec<&MetricRecord>)>> = BTreeMap::new();
    for r in records {
        let key = GroupKey {
            target: r.target,
            method: r.method,
            hyper_digest: r.hyper_digest.clone(),
            protocol: r.protocol,
        };
        let rows = raw.entry(key).or_default();
        match rows.iter_mut().find(|(s, _)| *s == r.train_seed) {
            Some((_, row)) => row.push(r),
            None => rows.push((r.train_seed, vec![r])),
        }
    }
    let mut out = BTreeMap::new();
    for (mut key, rows) in raw {
        let j = rows[0].1.len();
        if rows.iter().any(|(_, row)| row.len() != j) {
            return Err(Error::Results(format!(
                "ragged grid for method {} on {} {}: training seeds have differing unlearning-seed counts",
                key.method,
                key.target.kind.as_str(),
                key.target.id
            )));
        }
        if key.protocol == Protocol::Custom {
            key.protocol = if rows.len() == 1 {
                Protocol::CommonPractice
            } else {
                Protocol::Recommended
            };
        }
        let group = Group {
            rows: rows.into_iter().map(|(_, row)| row).collect(),
        };
        if out.insert(key.clone(), group).is_some() {
            return Err(Error::Results(format!(
                "method {} on {} {} appears both with and without a protocol tag",
                key.method,
                key.target.kind.as_str(),
                key.target.id
            )));
        }
    }
    Ok(out)
}

fn other_protocol(p: Protocol) -> Option<Protocol> {
    match p {
        Protocol::CommonPractice => Some(Protocol::Recommended),
        Protocol::Recommended => Some(Protocol::CommonPractice),
        Protocol::Custom => None,
    }
}

pub fn analyze(records: &[MetricRecord]) -> Result<AnalysisSummary> {
    if records.is_empty() {
        return Err(Error::Results("no result rows to analyse".into()));
    }
    let groups = group_records(records)?;
    let mut entries = Vec::new();
    for (key, group) in &groups {
        let partner = other_protocol(key.protocol).and_then(|p| {
            groups.get(&GroupKey {
                protocol: p,
                ..key.clone()
            })
        });
        for metric in MetricName::ALL {
            let grid = group.grid(metric);
            let decomposition = stats::decompose(&grid)?;
            let dist = EmpiricalDistribution::new(group.values(metric))?;
            let w2 = partner
                .map(|other| -> Result<f64> {
                    let theirs = EmpiricalDistribution::new(other.values(metric))?;
                    Ok(stats::wasserstein2(&dist, &theirs))
                })
                .transpose()?;
            entries.push(AnalysisEntry {
                target_kind: key.target.kind,
                target_id: key.target.id,
                method: key.method,
                hyper_digest: key.hyper_digest.clone(),
                protocol: key.protocol,
                metric,
                n_train_seeds: grid.len(),
                n_unlearn_seeds: grid[0].len(),
                v_total: decomposition.total,
                v_between: decomposition.between,
                v_within: decomposition.within,
                row_conditionals: decomposition.row_conditionals,
                quantiles: BoxSummary::of(&dist),
                w2_vs_other_protocol: w2,
            });
        }
    }
    Ok(AnalysisSummary {
        conventions: Conventions::default(),
        entries,
    })
}
