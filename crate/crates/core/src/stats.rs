//! Variance decomposition across training seeds, interpolated quantiles and
//! the 2-Wasserstein distance between one-dimensional empirical samples.
//!
//! All variances are population moments (divide by N), which makes
//! `total = between + within` an identity on any rectangular grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonempty sample, stored sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::UndefinedMetric("empirical distribution of no samples".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::UndefinedMetric("non-finite sample".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }
}

/// Mean shifted by the first element: a constant slice returns that constant
/// exactly.
fn mean(xs: &[f64]) -> f64 {
    let shift = xs[0];
    shift + xs.iter().map(|x| x - shift).sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Population variance of one training seed's row of metric values.
pub fn conditional_variance(row: &[f64]) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::UndefinedMetric("variance of an empty row".into()));
    }
    Ok(population_variance(row))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    /// Variance over all I·J cells.
    pub total: f64,
    /// Variance of the I row means.
    pub between: f64,
    /// Mean of the I row variances.
    pub within: f64,
    /// Per-row variances, one per training seed.
    pub row_conditionals: Vec<f64>,
}

/// Splits the variance of an I×J grid (rows = training seeds) into
/// between-row and within-row parts.
pub fn decompose(grid: &[Vec<f64>]) -> Result<VarianceDecomposition> {
    let Some(first) = grid.first() else {
        return Err(Error::UndefinedMetric("decomposition of an empty grid".into()));
    };
    let j = first.len();
    if j == 0 {
        return Err(Error::UndefinedMetric("decomposition of empty rows".into()));
    }
    if let Some(bad) = grid.iter().position(|r| r.len() != j) {
        return Err(Error::Results(format!(
            "ragged grid: row {bad} has {} entries, expected {j}",
            grid[bad].len()
        )));
    }
    let all: Vec<f64> = grid.iter().flatten().copied().collect();
    let row_means: Vec<f64> = grid.iter().map(|r| mean(r)).collect();
    let row_conditionals: Vec<f64> = grid.iter().map(|r| population_variance(r)).collect();
    Ok(VarianceDecomposition {
        total: population_variance(&all),
        between: population_variance(&row_means),
        within: row_conditionals.iter().sum::<f64>() / row_conditionals.len() as f64,
        row_conditionals,
    })
}

/// Linearly interpolated sample quantile at position `(n − 1)·q`.
pub fn quantile(dist: &EmpiricalDistribution, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config("q", format!("quantile level {q} outside [0, 1]")));
    }
    let xs = dist.samples();
    let pos = (xs.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return Ok(xs[lo]);
    }
    let frac = pos - lo as f64;
    Ok(xs[lo] + frac * (xs[hi] - xs[lo]))
}

pub fn quantiles(dist: &EmpiricalDistribution, qs: &[f64]) -> Result<Vec<f64>> {
    qs.iter().map(|&q| quantile(dist, q)).collect()
}

/// Five-number summary drawn in the box plots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

impl BoxSummary {
    pub fn of(dist: &EmpiricalDistribution) -> Self {
        let q = |p| quantile(dist, p).expect("level in range");
        BoxSummary {
            min: dist.min(),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            max: dist.max(),
        }
    }
}

/// Which closed form produced a W2 value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingForm {
    /// Equal sizes: RMS difference of matched order statistics.
    SortedPairs,
    /// Unequal sizes: integral over the merged inverse-CDF breakpoints.
    QuantileCoupling,
}

pub fn wasserstein2(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    wasserstein2_with_form(a, b).0
}

pub fn wasserstein2_with_form(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> (f64, CouplingForm) {
    if a.len() == b.len() {
        let sum: f64 = a
            .samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        ((sum / a.len() as f64).sqrt(), CouplingForm::SortedPairs)
    } else {
        (
            quantile_coupling(a.samples(), b.samples()),
            CouplingForm::QuantileCoupling,
        )
    }
}

/// `sqrt(∫₀¹ (F_a⁻¹(t) − F_b⁻¹(t))² dt)` for step inverse CDFs. Breakpoints
/// `k/n` and `l/m` are compared as integers over the common denominator
/// `n·m`, so interval widths are exact.
pub fn quantile_coupling(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: u128 = 0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let cur = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += (cur - prev) as f64 * d * d;
        prev = cur;
        if next_a == cur {
            i += 1;
        }
        if next_b == cur {
            j += 1;
        }
    }
    (acc / (n * m) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub n_train_seeds: usize,
    pub n_unlearn_seeds: usize,
    pub variance: VarianceDecomposition,
    pub quantiles: BoxSummary,
}

impl ProtocolSummary {
    pub fn of(grid: &[Vec<f64>]) -> Result<Self> {
        let variance = decompose(grid)?;
        let dist = EmpiricalDistribution::new(grid.iter().flatten().copied().collect())?;
        Ok(ProtocolSummary {
            n_train_seeds: grid.len(),
            n_unlearn_seeds: grid[0].len(),
            variance,
            quantiles: BoxSummary::of(&dist),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolComparison {
    pub w2: f64,
    pub form: CouplingForm,
    pub common_practice: ProtocolSummary,
    pub recommended: ProtocolSummary,
}

/// Compares one metric's grid under the single-training-seed protocol with
/// its grid under the multi-training-seed protocol.
pub fn compare_protocols(grid_a: &[Vec<f64>], grid_b: &[Vec<f64>]) -> Result<ProtocolComparison> {
    let common_practice = ProtocolSummary::of(grid_a)?;
    let recommended = ProtocolSummary::of(grid_b)?;
    let a = EmpiricalDistribution::new(grid_a.iter().flatten().copied().collect())?;
    let b = EmpiricalDistribution::new(grid_b.iter().flatten().copied().collect())?;
    let (w2, form) = wasserstein2_with_form(&a, &b);
    Ok(ProtocolComparison {
        w2,
        form,
        common_practice,
        recommended,
    })
}
