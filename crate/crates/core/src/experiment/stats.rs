//! Cumulative-return arithmetic and the one-sided Welch t-test used in the
//! significance tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One-sided Welch test outcome. The sign convention follows the published
/// tables: `t = (mean_baseline - mean_method) / se`, so a small p-value (in
/// percent) means the method beats the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    /// `100 * StudentCDF(t, df)`, in percent.
    pub p_value_pct: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
}

pub fn sample_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator; 0 for n < 2.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = sample_mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Welch test from raw samples.
pub fn welch_one_sided(baseline: &[f64], method: &[f64]) -> Result<TTestResult> {
    if baseline.len() < 2 || method.len() < 2 {
        return Err(Error::Domain(
            "welch test needs at least 2 samples per side".into(),
        ));
    }
    welch_one_sided_from_stats(
        sample_mean(baseline),
        sample_std(baseline),
        baseline.len(),
        sample_mean(method),
        sample_std(method),
        method.len(),
    )
}

/// Welch test from summary statistics (mean, sample std, n).
pub fn welch_one_sided_from_stats(
    mean_baseline: f64,
    std_baseline: f64,
    n_baseline: usize,
    mean_method: f64,
    std_method: f64,
    n_method: usize,
) -> Result<TTestResult> {
    if n_baseline < 2 || n_method < 2 {
        return Err(Error::Domain(
            "welch test needs at least 2 samples per side".into(),
        ));
    }
    let va = std_baseline * std_baseline / n_baseline as f64;
    let vm = std_method * std_method / n_method as f64;
    let se2 = va + vm;
    if se2 == 0.0 {
        if mean_baseline == mean_method {
            // both sides constant and equal: no evidence either way
            return Ok(TTestResult {
                t_stat: 0.0,
                p_value_pct: 50.0,
                df: (n_baseline + n_method - 2) as f64,
            });
        }
        return Err(Error::Numeric(
            "zero variance on both sides with different means".into(),
        ));
    }
    let t = (mean_baseline - mean_method) / se2.sqrt();
    let df = se2 * se2 / (va * va / (n_baseline as f64 - 1.0) + vm * vm / (n_method as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("student t with df {df}: {e}")))?;
    let p = 100.0 * dist.cdf(t);
    Ok(TTestResult {
        t_stat: t,
        p_value_pct: p,
        df,
    })
}

/// Percent cumulative return implied by a sequence of log returns.
pub fn cumulative_return(log_rewards: &[f64]) -> f64 {
    (log_rewards.iter().sum::<f64>().exp() - 1.0) * 100.0
}

/// Per-step percent cumulative return path.
pub fn cumulative_path(log_rewards: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_rewards
        .iter()
        .map(|r| {
            acc += r;
            (acc.exp() - 1.0) * 100.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn reproduces_published_t_statistics() {
        // baseline (29.440 +/- 51.712) vs distilled (-1.762 +/- 19.492), n=50
        let r = welch_one_sided_from_stats(29.440, 51.712, 50, -1.762, 19.492, 50).unwrap();
        assert_abs_diff_eq!(r.t_stat, 3.99, epsilon = 0.02);
        assert_abs_diff_eq!(r.p_value_pct, 99.99, epsilon = 0.02);

        // baseline vs smoothed (104.599 +/- 44.225), n=50
        let r = welch_one_sided_from_stats(29.440, 51.712, 50, 104.599, 44.225, 50).unwrap();
        assert_abs_diff_eq!(r.t_stat, -7.81, epsilon = 0.02);
        assert!(r.p_value_pct <= 0.005, "p = {}", r.p_value_pct);
    }

    #[test]
    fn identical_samples_are_a_coin_flip() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let r = welch_one_sided(&xs, &xs).unwrap();
        assert_eq!(r.t_stat, 0.0);
        assert_abs_diff_eq!(r.p_value_pct, 50.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_cases() {
        let constant = vec![2.0, 2.0, 2.0];
        let r = welch_one_sided(&constant, &constant).unwrap();
        assert_eq!((r.t_stat, r.p_value_pct), (0.0, 50.0));

        let other = vec![3.0, 3.0];
        assert!(matches!(
            welch_one_sided(&constant, &other),
            Err(Error::Numeric(_))
        ));
        assert!(welch_one_sided(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cumulative_return_reference_cases() {
        assert_eq!(cumulative_return(&[]), 0.0);
        // two +10% steps compound to 21%
        let r = cumulative_return(&[1.1f64.ln(), 1.1f64.ln()]);
        assert_relative_eq!(r, 21.0, max_relative = 1e-12);
        // doubling then halving nets out to zero
        let r = cumulative_return(&[2.0f64.ln(), 0.5f64.ln()]);
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cumulative_return_compounds_over_concatenation() {
        let a = [0.01, -0.03, 0.02];
        let b = [0.005, 0.007];
        let joined: Vec<f64> = a.iter().chain(&b).cloned().collect();
        let ra = cumulative_return(&a) / 100.0;
        let rb = cumulative_return(&b) / 100.0;
        let rj = cumulative_return(&joined) / 100.0;
        assert_relative_eq!(1.0 + rj, (1.0 + ra) * (1.0 + rb), max_relative = 1e-12);
    }

    #[test]
    fn path_ends_at_the_total_return() {
        let rewards = [0.01, 0.02, -0.005];
        let path = cumulative_path(&rewards);
        assert_eq!(path.len(), 3);
        assert_eq!(*path.last().unwrap(), cumulative_return(&rewards));
    }

    proptest! {
        #[test]
        fn welch_is_antisymmetric(
            a in proptest::collection::vec(-100.0f64..100.0, 3..30),
            b in proptest::collection::vec(-100.0f64..100.0, 3..30),
        ) {
            let ab = welch_one_sided(&a, &b).unwrap();
            let ba = welch_one_sided(&b, &a).unwrap();
            prop_assert!((ab.t_stat + ba.t_stat).abs() < 1e-9);
            prop_assert!((ab.p_value_pct + ba.p_value_pct - 100.0).abs() < 1e-6);
            prop_assert!((0.0..=100.0).contains(&ab.p_value_pct));
        }
    }
}
