use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// p-values at or above this are consistent with the prediction.
pub const PASS_P_VALUE: f64 = 1e-3;
/// p-values at or below this reject the prediction.
pub const REJECT_P_VALUE: f64 = 1e-6;
/// Expected counts below this are pooled before the chi-square test.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Reject,
}

impl Verdict {
    pub fn from_p_value(p: f64) -> Self {
        if p >= PASS_P_VALUE {
            Self::Pass
        } else if p <= REJECT_P_VALUE {
            Self::Reject
        } else {
            Self::Inconclusive
        }
    }
}

/// Two-sided normal quantile for a central `level` interval.
pub fn normal_quantile(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + 0.5 * level)
}

/// Wilson score interval for `successes` out of `trials` at confidence `level`.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let m = trials as f64;
    let p = successes as f64 / m;
    let z = normal_quantile(level);
    let z2 = z * z;
    let denom = 1.0 + z2 / m;
    let center = (p + z2 / (2.0 * m)) / denom;
    let half = z / denom * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Binomial standard error of a proportion estimated from `trials`.
pub fn standard_error(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Category groups actually compared after pooling small expectations.
    pub groups: Vec<Vec<usize>>,
}

impl ChiSquare {
    pub fn verdict(&self) -> Verdict {
        Verdict::from_p_value(self.p_value)
    }
}

fn upper_tail(statistic: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Ok(if statistic > 0.0 { 0.0 } else { 1.0 });
    }
    if statistic.is_infinite() {
        return Ok(0.0);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(dist.sf(statistic).clamp(0.0, 1.0))
}

/// Pools categories whose expected count is below [`MIN_EXPECTED_COUNT`]
/// into one group, merging that group with the smallest remaining category
/// if it is still too small.
fn pool(expected: &[f64]) -> Vec<Vec<usize>> {
    let mut small: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (k, e) in expected.iter().enumerate() {
        if *e < MIN_EXPECTED_COUNT {
            small.push(k);
        } else {
            groups.push(vec![k]);
        }
    }
    if small.is_empty() {
        return groups;
    }
    let small_total: f64 = small.iter().map(|k| expected[*k]).sum();
    if small_total < MIN_EXPECTED_COUNT && !groups.is_empty() {
        let (pos, _) = groups
            .iter()
            .enumerate()
            .min_by(|a, b| expected[a.1[0]].total_cmp(&expected[b.1[0]]))
            .expect("non-empty");
        let mut g = groups.remove(pos);
        g.extend(small);
        g.sort_unstable();
        groups.push(g);
    } else {
        groups.push(small);
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Pearson goodness-of-fit of vertex counts against predicted probabilities.
pub fn chi_square_test(counts: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    if counts.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            found: counts.len(),
        });
    }
    if probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("predicted probabilities must be non-negative".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config("no observations".into()));
    }
    let m = total as f64;
    let expected: Vec<f64> = probs.iter().map(|p| p * m).collect();
    let groups = pool(&expected);
    // An outcome predicted to be impossible rejects outright, pooled or not.
    if probs.iter().zip(counts).any(|(p, c)| *p == 0.0 && *c > 0) {
        return Ok(ChiSquare {
            statistic: f64::INFINITY,
            dof: groups.len().saturating_sub(1),
            p_value: 0.0,
            groups,
        });
    }
    let mut statistic = 0.0;
    for g in &groups {
        let e: f64 = g.iter().map(|k| expected[*k]).sum();
        let o: f64 = g.iter().map(|k| counts[*k] as f64).sum();
        if e == 0.0 {
            if o > 0.0 {
                statistic = f64::INFINITY;
            }
            continue;
        }
        statistic += (o - e) * (o - e) / e;
    }
    let dof = groups.len().saturating_sub(1);
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof)?,
        groups,
    })
}

/// Chi-square test that two count vectors come from the same distribution
/// (2 × k contingency table); empty columns are dropped.
pub fn homogeneity_test(a: &[u64], b: &[u64]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Config("no observations".into()));
    }
    let n = na + nb;
    let mut statistic = 0.0;
    let mut groups = Vec::new();
    for k in 0..a.len() {
        let col = (a[k] + b[k]) as f64;
        if col == 0.0 {
            continue;
        }
        groups.push(vec![k]);
        for (obs, row) in [(a[k] as f64, na), (b[k] as f64, nb)] {
            let e = row * col / n;
            statistic += (obs - e) * (obs - e) / e;
        }
    }
    let dof = groups.len().saturating_sub(1);
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof)?,
        groups,
    })
}
