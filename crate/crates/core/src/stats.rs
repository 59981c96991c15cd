//! Run-time comparison statistics.
//!
//! [`mann_whitney_u`] ranks the pooled samples (average ranks for ties) and
//! reports `U` for the first sample with a two-sided p-value. Small samples
//! without ties (both sizes ≤ [`EXACT_MAX_N`]) get the exact null
//! distribution, computed with the standard counting recurrence. Everything
//! else uses the normal approximation with tie-corrected variance and a
//! continuity correction.

use statrs::function::erf::erfc;

use crate::error::StatsError;

/// Significance level used throughout.
pub const ALPHA: f64 = 0.05;

/// Largest sample size for which the exact distribution is used.
pub const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    /// Exact when possible, otherwise normal.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UTestResult {
    /// `U` of the first sample: the number of pairs (a, b) with a > b,
    /// counting ties as one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, plus the tie term `Σ (t³ - t)`.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    (ranks, tie_term)
}

/// Number of rank arrangements giving each `U` value, for sizes `n1`, `n2`
/// without ties. Index `u` holds the count for `U = u`.
fn u_frequencies(n1: usize, n2: usize) -> Vec<f64> {
    // table[i][j] = distribution for sizes (i, j); built up over j for each i
    let max_u = n1 * n2;
    let mut prev_row: Vec<Vec<f64>> = (0..=n2).map(|_| vec![1.0]).collect(); // i = 0
    for i in 1..=n1 {
        let mut row: Vec<Vec<f64>> = Vec::with_capacity(n2 + 1);
        row.push(vec![1.0]); // j = 0
        for j in 1..=n2 {
            // f(i, j, u) = f(i - 1, j, u - j) + f(i, j - 1, u)
            let mut dist = vec![0.0; i * j + 1];
            for (u, &c) in prev_row[j].iter().enumerate() {
                dist[u + j] += c;
            }
            for (u, &c) in row[j - 1].iter().enumerate() {
                dist[u] += c;
            }
            row.push(dist);
        }
        prev_row = row;
    }
    let dist = prev_row.swap_remove(n2);
    debug_assert_eq!(dist.len(), max_u + 1);
    dist
}

fn exact_p(u: f64, n1: usize, n2: usize) -> f64 {
    let freq = u_frequencies(n1, n2);
    let total: f64 = freq.iter().sum();
    let mean = (n1 * n2) as f64 / 2.0;
    let d = (u - mean).abs();
    let tail: f64 = freq
        .iter()
        .enumerate()
        .filter(|(k, _)| (*k as f64 - mean).abs() >= d - 1e-9)
        .map(|(_, c)| c)
        .sum();
    (tail / total).min(1.0)
}

fn normal_p(u: f64, n1: usize, n2: usize, tie_term: f64) -> f64 {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let mean = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTestResult, StatsError> {
    mann_whitney_u_with(a, b, PValueMethod::Auto)
}

/// Mann-Whitney U with an explicit p-value method. `Exact` falls back to
/// the normal approximation when the samples contain ties.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: PValueMethod) -> Result<UTestResult, StatsError> {
    if a.is_empty() {
        return Err(StatsError::EmptySample("a"));
    }
    if b.is_empty() {
        return Err(StatsError::EmptySample("b"));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = average_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    let small = n1 <= EXACT_MAX_N && n2 <= EXACT_MAX_N;
    let exact = tie_term == 0.0
        && match method {
            PValueMethod::Auto => small,
            PValueMethod::Exact => true,
            PValueMethod::Normal => false,
        };
    let p_value = if exact { exact_p(u, n1, n2) } else { normal_p(u, n1, n2, tie_term) };
    Ok(UTestResult { u_statistic: u, p_value, significant: p_value < ALPHA, exact })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sorted middle third of `runs`: indices `[n/3, 2n/3)`.
pub fn trim_middle_third(runs: &[f64]) -> Result<Vec<f64>, StatsError> {
    if runs.len() < 3 {
        return Err(StatsError::TooFewRuns(runs.len()));
    }
    let mut v = runs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(v[n / 3..2 * n / 3].to_vec())
}

/// Divides every run by the median of `reference`.
pub fn normalize_to_median(runs: &[f64], reference: &[f64]) -> Result<Vec<f64>, StatsError> {
    let m = median(reference).ok_or(StatsError::EmptySample("reference"))?;
    if m == 0.0 {
        return Err(StatsError::ZeroReference);
    }
    Ok(runs.iter().map(|r| r / m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_separation() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert!(r.exact);
        // exact two-sided: 2 of C(6,3) = 20 arrangements are this extreme
        assert!((r.p_value - 0.1).abs() < 1e-12);
        let r = mann_whitney_u(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u_statistic, 9.0);
    }

    #[test]
    fn identical_samples() {
        let a = [3.0, 1.0, 4.0, 1.5, 5.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u_statistic, 12.5);
        assert!(r.p_value > 0.95);
        assert!(!r.significant);
    }

    #[test]
    fn ties_use_average_ranks() {
        let (ranks, tie) = average_ranks(&[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(ranks, vec![1.5, 3.5, 1.5, 3.5]);
        assert_eq!(tie, 12.0);
        let r = mann_whitney_u(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.u_statistic, 2.0);
        assert!(!r.exact);
    }

    #[test]
    fn all_tied_has_p_one() {
        let r = mann_whitney_u(&[5.0; 4], &[5.0; 6]).unwrap();
        assert_eq!(r.u_statistic, 12.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_sample_errors() {
        assert_eq!(mann_whitney_u(&[], &[1.0]).unwrap_err(), StatsError::EmptySample("a"));
        assert_eq!(mann_whitney_u(&[1.0], &[]).unwrap_err(), StatsError::EmptySample("b"));
    }

    #[test]
    fn frequencies_sum_to_binomial() {
        let f = u_frequencies(3, 4);
        assert_eq!(f.iter().sum::<f64>(), 35.0);
        assert_eq!(f, vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0, 5.0, 4.0, 4.0, 3.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn large_separated_samples_are_significant() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = (100..120).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-6);
        assert!(r.significant);
    }

    #[test]
    fn normal_matches_reference_value() {
        // n1 = n2 = 10, U = 10, no ties:
        // z = (|10 - 50| - 0.5) / sqrt(10*10*21/12) = 39.5 / 13.2288 = 2.98592
        let a: Vec<f64> = vec![1., 2., 3., 4., 5., 6., 7., 8., 14., 15.];
        let b: Vec<f64> = vec![9., 10., 11., 12., 13., 16., 17., 18., 19., 20.];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u_statistic, 10.0);
        assert!((r.p_value - 0.0028273).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn trimming() {
        let runs: Vec<f64> = (1..=9).rev().map(f64::from).collect();
        assert_eq!(trim_middle_third(&runs).unwrap(), vec![4.0, 5.0, 6.0]);
        assert_eq!(trim_middle_third(&[3.0, 1.0, 2.0]).unwrap(), vec![2.0]);
        assert_eq!(trim_middle_third(&[1.0, 2.0]).unwrap_err(), StatsError::TooFewRuns(2));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_to_median(&[2.0, 4.0, 6.0], &[1.0, 2.0, 9.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(normalize_to_median(&[1.0], &[0.0]).unwrap_err(), StatsError::ZeroReference);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }
}
