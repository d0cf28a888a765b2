//! Curriculum-learning data transforms: EMA smoothing, return rounding, and
//! inverse-smoothing schedules.
//!
//! Two inverse-smoothing modes are shipped. `staged` re-smooths the whole
//! training range per stage with a decreasing window and assigns each stage
//! an equal share of parameter updates; `positional` cuts the training range
//! into contiguous partitions smoothed once with decreasing windows. Both
//! end with an unsmoothed final stage (window 1). Validation and test data
//! are never smoothed.

use serde::{Deserialize, Serialize};

use crate::data::ProcessedSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum SmoothingMethod {
    None,
    /// Exponential moving average with lagging window `w_l`.
    Ema {
        w_l: u32,
    },
    /// Round every return to `d` decimal places, half away from zero.
    Round {
        d: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    /// Whole training range re-smoothed per stage; default.
    Staged,
    /// Contiguous dataset partitions smoothed once.
    Positional,
}

/// Inverse-smoothing curriculum over `stages` stages of decreasing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub stages: u32,
    pub mode: CurriculumMode,
}

impl CurriculumSchedule {
    pub fn new(stages: u32, mode: CurriculumMode) -> Result<Self> {
        if stages < 1 {
            return Err(Error::Domain("curriculum needs at least one stage".into()));
        }
        Ok(Self { stages, mode })
    }
}

/// Smoothing factor `2 / (w_l + 1)`.
pub fn alpha(w_l: u32) -> f64 {
    2.0 / (w_l as f64 + 1.0)
}

/// Exponential moving average, seeded with the first input value. A window
/// of 1 is the identity.
pub fn ema(series: &[f64], w_l: u32) -> Result<Vec<f64>> {
    if w_l < 1 {
        return Err(Error::Domain(format!("EMA window must be >= 1, got {w_l}")));
    }
    if series.is_empty() {
        return Err(Error::Domain("EMA input must be non-empty".into()));
    }
    if w_l == 1 {
        return Ok(series.to_vec());
    }
    let a = alpha(w_l);
    let mut out = Vec::with_capacity(series.len());
    let mut prev = series[0];
    out.push(prev);
    for &x in &series[1..] {
        prev = a * x + (1.0 - a) * prev;
        out.push(prev);
    }
    Ok(out)
}

/// Rounds each value to `d` decimal places, half away from zero.
pub fn round_returns(series: &[f64], d: u32) -> Vec<f64> {
    let scale = 10f64.powi(d as i32);
    series
        .iter()
        .map(|&x| (x * scale).round() / scale)
        .collect()
}

/// Applies a smoothing method columnwise to a whole series.
pub fn apply(series: &ProcessedSeries, method: SmoothingMethod) -> Result<ProcessedSeries> {
    let mut out = series.clone();
    match method {
        SmoothingMethod::None => {}
        SmoothingMethod::Ema { w_l } => {
            for col in &mut out.columns {
                col.values = ema(&col.values, w_l)?;
            }
        }
        SmoothingMethod::Round { d } => {
            for col in &mut out.columns {
                col.values = round_returns(&col.values, d);
            }
        }
    }
    Ok(out)
}

/// Positional inverse smoothing: `stages` contiguous partitions of
/// `floor(len / stages)` rows (remainder joins the last partition), partition
/// `i` smoothed columnwise with window `stages - i`. The final partition has
/// window 1 and is untouched.
pub fn inverse_smooth_positional(series: &ProcessedSeries, stages: u32) -> Result<ProcessedSeries> {
    let len = series.len();
    if stages < 1 || stages as usize > len {
        return Err(Error::Domain(format!(
            "stage count {stages} must be in 1..={len} for a series of length {len}"
        )));
    }
    let s = stages as usize;
    let partition = len / s;
    let mut out = series.clone();
    for i in 0..s {
        let start = i * partition;
        let end = if i == s - 1 { len } else { (i + 1) * partition };
        let w_l = (s - i) as u32;
        if w_l == 1 {
            continue;
        }
        for col in &mut out.columns {
            let smoothed = ema(&col.values[start..end], w_l)?;
            col.values[start..end].copy_from_slice(&smoothed);
        }
    }
    Ok(out)
}

/// Update budget per staged-curriculum stage: windows `stages, stages-1, ..., 1`
/// with budgets that differ by at most one and sum to `total_updates`
/// (remainder assigned to the earliest stages).
pub fn stage_schedule(stages: u32, total_updates: usize) -> Result<Vec<(u32, usize)>> {
    if stages < 1 {
        return Err(Error::Domain("stage count must be >= 1".into()));
    }
    if total_updates < stages as usize {
        return Err(Error::Domain(format!(
            "total_updates {total_updates} must be >= stage count {stages}"
        )));
    }
    let s = stages as usize;
    let base = total_updates / s;
    let rem = total_updates % s;
    Ok((0..s)
        .map(|i| {
            let w_l = (s - i) as u32;
            let budget = base + usize::from(i < rem);
            (w_l, budget)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_for_window_five_is_one_third() {
        assert_eq!(alpha(5), 1.0 / 3.0);
        assert_eq!(alpha(1), 1.0);
    }

    #[test]
    fn constant_sequence_is_fixed_point() {
        for w_l in [1, 2, 5, 16] {
            let out = ema(&[0.7, 0.7, 0.7], w_l).unwrap();
            assert_eq!(out, vec![0.7, 0.7, 0.7]);
        }
    }

    #[test]
    fn hand_evaluated_recursion() {
        // w_l = 3 gives alpha = 0.5: out = [0, 0.5*1 + 0.5*0] = [0, 0.5]
        assert_eq!(ema(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn ema_rejects_bad_input() {
        assert!(ema(&[1.0], 0).is_err());
        assert!(ema(&[], 2).is_err());
    }

    #[test]
    fn rounding_cases() {
        assert_eq!(round_returns(&[0.01234], 2), vec![0.01]);
        assert_eq!(round_returns(&[0.015], 2), vec![0.02]);
        assert_eq!(round_returns(&[-0.015], 2), vec![-0.02]);
        // the default d = 2 matches rounding returns to whole percent
        assert_eq!(round_returns(&[0.0949, -0.001], 2), vec![0.09, -0.0]);
    }

    #[test]
    fn positional_inverse_smoothing_partitions() {
        let (series, _) = generate_synthetic(&SyntheticSpec {
            n_assets: 1,
            length: 100,
            ar_coeff: 0.5,
            signal_scale: 0.01,
            noise_scale: 0.02,
            seed: 3,
        })
        .unwrap();

        let out = inverse_smooth_positional(&series, 4).unwrap();
        // partitions of 25 rows with windows 4, 3, 2, 1
        for (i, w_l) in [(0usize, 4u32), (1, 3), (2, 2)] {
            let start = i * 25;
            let expect = ema(&series.columns[0].values[start..start + 25], w_l).unwrap();
            assert_eq!(&out.columns[0].values[start..start + 25], &expect[..]);
        }
        // final partition untouched
        assert_eq!(
            &out.columns[0].values[75..100],
            &series.columns[0].values[75..100]
        );

        // S = 1 is the identity
        assert_eq!(inverse_smooth_positional(&series, 1).unwrap(), series);
        // the IS8 configuration is accepted on data of this size
        assert!(inverse_smooth_positional(&series, 8).is_ok());
        assert!(inverse_smooth_positional(&series, 0).is_err());
        assert!(inverse_smooth_positional(&series, 101).is_err());
    }

    #[test]
    fn stage_schedule_budgets() {
        assert_eq!(
            stage_schedule(4, 1000).unwrap(),
            vec![(4, 250), (3, 250), (2, 250), (1, 250)]
        );
        assert_eq!(stage_schedule(1, 17).unwrap(), vec![(1, 17)]);
        assert_eq!(stage_schedule(3, 10).unwrap(), vec![(3, 4), (2, 3), (1, 3)]);
        assert!(stage_schedule(0, 10).is_err());
        assert!(stage_schedule(4, 3).is_err());
    }

    #[test]
    fn ema_reduces_iid_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let ys = ema(&xs, 5).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&ys) < var(&xs));
    }

    proptest! {
        #[test]
        fn window_one_is_identity(xs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            prop_assert_eq!(ema(&xs, 1).unwrap(), xs);
        }

        #[test]
        fn ema_stays_within_input_bounds(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..200),
            w_l in 1u32..20,
        ) {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for y in ema(&xs, w_l).unwrap() {
                prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
            }
        }

        #[test]
        fn stage_budgets_sum_to_total(stages in 1u32..12, extra in 0usize..5000) {
            let total = stages as usize + extra;
            let sched = stage_schedule(stages, total).unwrap();
            prop_assert_eq!(sched.iter().map(|(_, b)| b).sum::<usize>(), total);
            prop_assert!(sched.windows(2).all(|w| w[0].1 >= w[1].1 && w[0].1 - w[1].1 <= 1));
            prop_assert_eq!(sched.last().unwrap().0, 1);
            prop_assert_eq!(sched[0].0, stages);
        }
    }
}
