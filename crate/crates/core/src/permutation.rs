//! The placebo test: enumerate or sample placebo assignments, evaluate the
//! placebo statistics, and compare the observed statistic to their quantile.
//!
//! Quantiles use ascending order statistics. With `N` placebo statistics the
//! critical value is the `ceil(N (1 - alpha))`-th smallest, so the test has
//! no power when that rank is `N`.

use alloc::vec;
use alloc::vec::Vec;

use crate::combinations::{random_combination, Combinations};
use crate::error::{Error, Result};
use crate::model::{
    check_alpha, Adjustment, Assignment, ClusterLayout, EstimateVector, Side, TestConfig,
    TestResult, Warning,
};
use crate::rng;
use crate::stats::{PlaceboEvaluator, PlaceboValue};

/// Largest assignment set that is enumerated in full.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: u128 = 1 << 14;

/// All `C(q, q1)` assignments, identity first, lexicographic thereafter.
pub fn enumerate_assignments(layout: ClusterLayout) -> Result<Vec<Assignment>> {
    enumerate_assignments_capped(layout, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_assignments_capped(layout: ClusterLayout, cap: u64) -> Result<Vec<Assignment>> {
    check_cap(layout, cap)?;
    Ok(Combinations::new(layout.q(), layout.q1())
        .map(Assignment::from_sorted_unchecked)
        .collect())
}

fn check_cap(layout: ClusterLayout, cap: u64) -> Result<()> {
    let count = layout.assignment_count();
    if count > u128::from(cap) {
        return Err(Error::TooManyAssignments { count, cap });
    }
    Ok(())
}

/// The identity assignment followed by `m` uniform draws (with replacement)
/// from the assignment set.
pub fn subsample_assignments(
    layout: ClusterLayout,
    m: usize,
    seed: u64,
) -> Result<Vec<Assignment>> {
    if m == 0 {
        return Err(Error::ZeroDraws);
    }
    let mut rng = rng::stream(seed, &[0x5ab5]);
    let mut out = Vec::with_capacity(m + 1);
    out.push(Assignment::identity(layout));
    out.extend((0..m).map(|_| {
        Assignment::from_sorted_unchecked(random_combination(&mut rng, layout.q(), layout.q1()))
    }));
    Ok(out)
}

/// Largest `j` with `j / n <= alpha` in floating point.
///
/// Deciding through this count is what makes `observed > critical value`
/// and `p <= alpha` agree exactly.
fn exceedance_budget(n: usize, alpha: f64) -> usize {
    let nf = n as f64;
    let mut j = libm::floor(nf * alpha).clamp(0.0, nf) as usize;
    while j > 0 && j as f64 / nf > alpha {
        j -= 1;
    }
    while j < n && (j + 1) as f64 / nf <= alpha {
        j += 1;
    }
    j
}

/// One-based ascending rank of the critical value, `ceil(n (1 - alpha))`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    n - exceedance_budget(n, alpha)
}

fn sorted(stats: &[f64]) -> Vec<f64> {
    let mut v = stats.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The `ceil(N (1 - alpha))`-th smallest element of `stats`.
pub fn permutation_quantile(stats: &[f64], alpha: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyStatistics);
    }
    check_alpha(alpha)?;
    let k = quantile_rank(stats.len(), alpha);
    Ok(sorted(stats)[k - 1])
}

/// Fraction of `stats` at or above `observed`.
pub fn p_value(observed: f64, stats: &[f64]) -> f64 {
    let hits = stats.iter().filter(|&&s| s >= observed).count();
    hits as f64 / stats.len() as f64
}

/// Critical value and the tie-splitting probability
/// `delta = (N alpha - #{s > c}) / #{s = c}`.
pub fn randomized_threshold(stats: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let c = permutation_quantile(stats, alpha)?;
    Ok((c, tie_probability(stats, c, alpha)))
}

fn tie_probability(stats: &[f64], c: f64, alpha: f64) -> f64 {
    let above = stats.iter().filter(|&&s| s > c).count();
    let ties = stats.iter().filter(|&&s| s == c).count();
    (stats.len() as f64 * alpha - above as f64) / ties as f64
}

/// Where the placebo statistics are evaluated.
enum ReferenceSet {
    Full,
    Sampled(Vec<Assignment>),
}

impl ReferenceSet {
    fn choose(layout: ClusterLayout, cfg: &TestConfig) -> Result<Self> {
        match cfg.max_assignments {
            Some(m) if layout.assignment_count() > m as u128 => {
                Ok(Self::Sampled(subsample_assignments(layout, m, cfg.seed)?))
            }
            _ => {
                check_cap(layout, DEFAULT_ENUMERATION_CAP)?;
                Ok(Self::Full)
            }
        }
    }

    fn evaluate(&self, eval: &PlaceboEvaluator<'_>, layout: ClusterLayout) -> Vec<PlaceboValue> {
        match self {
            Self::Sampled(list) => list.iter().map(|a| eval.evaluate(a)).collect(),
            Self::Full => {
                let combos = Combinations::new(layout.q(), layout.q1());
                #[cfg(feature = "parallel")]
                if layout.assignment_count() >= PARALLEL_THRESHOLD {
                    use rayon::iter::{ParallelBridge, ParallelIterator};
                    // order is lost here; everything downstream is order-free
                    return combos
                        .par_bridge()
                        .map(|t| eval.evaluate(&Assignment::from_sorted_unchecked(t)))
                        .collect();
                }
                combos
                    .map(|t| eval.evaluate(&Assignment::from_sorted_unchecked(t)))
                    .collect()
            }
        }
    }
}

/// Outcome of the right-sided test on one estimate vector.
struct OneSided {
    statistic: f64,
    critical_value: f64,
    p_value: f64,
    reject: bool,
    delta: f64,
    zero_power: bool,
    degenerate: usize,
    n: usize,
}

fn right_sided(
    x: &EstimateVector,
    adjustment: Adjustment,
    set: &ReferenceSet,
    alpha: f64,
) -> Result<OneSided> {
    let eval = match adjustment {
        Adjustment::Adjusted => PlaceboEvaluator::adjusted(x)?,
        Adjustment::Unadjusted => PlaceboEvaluator::unadjusted(x),
    };
    let layout = x.layout();
    let values = set.evaluate(&eval, layout);
    let degenerate = values.iter().filter(|v| v.degenerate).count();
    let stats: Vec<f64> = values.into_iter().map(|v| v.value).collect();
    let statistic = eval.evaluate(&Assignment::identity(layout)).value;

    let n = stats.len();
    let k = quantile_rank(n, alpha);
    let critical_value = sorted(&stats)[k - 1];
    let p = p_value(statistic, &stats);
    Ok(OneSided {
        statistic,
        critical_value,
        p_value: p,
        reject: statistic > critical_value,
        delta: tie_probability(&stats, critical_value, alpha),
        zero_power: k == n,
        degenerate,
        n,
    })
}

/// Runs the placebo test on per-cluster estimates.
///
/// `Side::Less` is the right-sided test applied to `-x`, so the reported
/// statistic and critical value are those of `-x`. `Side::TwoSided` rejects
/// when either one-sided test rejects at `alpha / 2`; its p-value is
/// `min(1, 2 min(p(x), p(-x)))` and it reports the statistic and critical
/// value of `x`.
pub fn run_placebo_test(x: &EstimateVector, cfg: &TestConfig) -> Result<TestResult> {
    cfg.validate()?;
    let layout = x.layout();
    if cfg.adjustment == Adjustment::Adjusted && (layout.q1() < 2 || layout.q0() < 2) {
        return Err(Error::GroupTooSmall {
            q1: layout.q1(),
            q0: layout.q0(),
        });
    }
    let set = ReferenceSet::choose(layout, cfg)?;

    let (main, p_value, reject, delta, zero_power, degenerate) = match cfg.side {
        Side::Greater | Side::Less => {
            let input = if cfg.side == Side::Less {
                x.negated()
            } else {
                x.clone()
            };
            let r = right_sided(&input, cfg.adjustment, &set, cfg.alpha)?;
            let (p, reject, delta, zp, dg) =
                (r.p_value, r.reject, r.delta, r.zero_power, r.degenerate);
            (r, p, reject, Some(delta), zp, dg)
        }
        Side::TwoSided => {
            let half = cfg.alpha / 2.0;
            let up = right_sided(x, cfg.adjustment, &set, half)?;
            let down = right_sided(&x.negated(), cfg.adjustment, &set, half)?;
            let p = (2.0 * up.p_value.min(down.p_value)).min(1.0);
            let reject = up.reject || down.reject;
            let zp = up.zero_power;
            let dg = up.degenerate.max(down.degenerate);
            (up, p, reject, None, zp, dg)
        }
    };

    let mut warnings = vec![];
    if zero_power {
        warnings.push(Warning::ZeroPower);
    }
    if degenerate > 0 {
        warnings.push(Warning::DegeneratePlaceboVariance { count: degenerate });
    }
    Ok(TestResult {
        statistic: main.statistic,
        critical_value: main.critical_value,
        p_value,
        reject,
        n_assignments: main.n,
        randomized_threshold: delta,
        side: cfg.side,
        adjustment: Some(cfg.adjustment),
        randomized: false,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn layout(q1: usize, q0: usize) -> ClusterLayout {
        ClusterLayout::new(q1, q0).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_assignments(layout(3, 3)).unwrap().len(), 20);
        assert_eq!(enumerate_assignments(layout(6, 6)).unwrap().len(), 924);
        let two = enumerate_assignments(layout(1, 1)).unwrap();
        assert_eq!(two[0].treated(), &[0]);
        assert_eq!(two[1].treated(), &[1]);
    }

    #[test]
    fn enumeration_is_distinct_and_identity_first() {
        let all = enumerate_assignments(layout(4, 3)).unwrap();
        assert!(all[0].is_identity());
        let distinct: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(distinct.len(), all.len());
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn enumeration_cap() {
        assert!(matches!(
            enumerate_assignments_capped(layout(6, 6), 923),
            Err(Error::TooManyAssignments {
                count: 924,
                cap: 923
            })
        ));
        assert!(matches!(
            enumerate_assignments(layout(20, 20)),
            Err(Error::TooManyAssignments { .. })
        ));
    }

    #[test]
    fn subsample_rejects_zero_draws_and_is_deterministic() {
        assert_eq!(
            subsample_assignments(layout(3, 3), 0, 1),
            Err(Error::ZeroDraws)
        );
        let a = subsample_assignments(layout(3, 3), 50, 9).unwrap();
        let b = subsample_assignments(layout(3, 3), 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 51);
        assert!(a[0].is_identity());
    }

    #[test]
    fn quantile_examples() {
        let one_to_twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(permutation_quantile(&one_to_twenty, 0.05).unwrap(), 19.0);
        let worked = [-2.0, -1.0, 0.0, 0.0, 1.0, 2.0];
        assert_eq!(permutation_quantile(&worked, 0.05).unwrap(), 2.0);
        assert_eq!(
            permutation_quantile(&[4.0, 2.0, 3.0, 1.0], 0.5).unwrap(),
            2.0
        );
        assert_eq!(permutation_quantile(&[], 0.5), Err(Error::EmptyStatistics));
        assert_eq!(
            permutation_quantile(&[1.0], 1.0),
            Err(Error::InvalidAlpha(1.0))
        );
    }

    #[test]
    fn quantile_rank_is_ceiling() {
        assert_eq!(quantile_rank(20, 0.05), 19);
        assert_eq!(quantile_rank(20, 0.075), 19);
        assert_eq!(quantile_rank(6, 0.05), 6);
        assert_eq!(quantile_rank(924, 0.05), 878);
        assert_eq!(quantile_rank(10, 0.999), 1);
    }

    #[test]
    fn p_value_examples() {
        let stats = [1.0, 2.0, 0.0, 0.0, -1.0, -2.0];
        assert_eq!(p_value(1.0, &stats), 2.0 / 6.0);
        assert_eq!(p_value(5.0, &[5.0, 1.0, 2.0, 3.0]), 0.25);
        assert_eq!(p_value(3.0, &[3.0; 7]), 1.0);
    }

    #[test]
    fn randomized_threshold_examples() {
        let one_to_twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        let (c, d) = randomized_threshold(&one_to_twenty, 0.05).unwrap();
        assert_eq!(c, 19.0);
        assert!(d.abs() < 1e-12);
        let (c, d) = randomized_threshold(&one_to_twenty, 0.075).unwrap();
        assert_eq!(c, 19.0);
        assert!((d - 0.5).abs() < 1e-12);
        let (c, d) = randomized_threshold(&[4.0; 20], 0.05).unwrap();
        assert_eq!(c, 4.0);
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn unique_maximum_rejects_at_five_percent() {
        let x = EstimateVector::new(vec![5.0, 4.0, 6.0, 1.0, 0.0, 2.0], layout(3, 3)).unwrap();
        let cfg = TestConfig::new(0.05).adjustment(Adjustment::Unadjusted);
        let r = run_placebo_test(&x, &cfg).unwrap();
        assert_eq!(r.statistic, 4.0);
        assert_eq!(r.n_assignments, 20);
        assert_eq!(r.p_value, 0.05);
        assert!(r.reject);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn too_few_assignments_have_zero_power() {
        let x = EstimateVector::new(vec![3.0, 1.0, 2.0, 0.0], layout(2, 2)).unwrap();
        for adjustment in [Adjustment::Adjusted, Adjustment::Unadjusted] {
            let cfg = TestConfig::new(0.05).adjustment(adjustment);
            let r = run_placebo_test(&x, &cfg).unwrap();
            assert_eq!(r.n_assignments, 6);
            assert!(!r.reject);
            assert!(r.warnings.contains(&Warning::ZeroPower));
        }
        let cfg = TestConfig::new(0.05).adjustment(Adjustment::Unadjusted);
        let r = run_placebo_test(&x, &cfg).unwrap();
        assert_eq!(r.p_value, 2.0 / 6.0);
    }

    #[test]
    fn adjusted_needs_two_per_group() {
        let x = EstimateVector::new(vec![1.0, 2.0, 3.0], layout(1, 2)).unwrap();
        assert_eq!(
            run_placebo_test(&x, &TestConfig::new(0.1)),
            Err(Error::GroupTooSmall { q1: 1, q0: 2 })
        );
        let cfg = TestConfig::new(0.1).adjustment(Adjustment::Unadjusted);
        assert_eq!(run_placebo_test(&x, &cfg).unwrap().n_assignments, 3);
    }

    #[test]
    fn left_side_is_right_side_of_negation() {
        let x = EstimateVector::new(vec![0.0, 1.0, 2.0, 6.0, 4.0, 5.0], layout(3, 3)).unwrap();
        let base = TestConfig::new(0.05).adjustment(Adjustment::Unadjusted);
        let less = run_placebo_test(&x, &base.side(Side::Less)).unwrap();
        let flipped = run_placebo_test(&x.negated(), &base).unwrap();
        assert_eq!(less.statistic, flipped.statistic);
        assert_eq!(less.p_value, flipped.p_value);
        assert!(less.reject);
    }

    #[test]
    fn two_sided_caps_p_at_one() {
        let x = EstimateVector::new(vec![1.0, 2.0, 2.0, 1.0], layout(2, 2)).unwrap();
        let cfg = TestConfig::new(0.05)
            .adjustment(Adjustment::Unadjusted)
            .side(Side::TwoSided);
        let r = run_placebo_test(&x, &cfg).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.reject);
    }

    #[test]
    fn small_assignment_sets_are_enumerated_even_with_a_draw_budget() {
        let x = EstimateVector::new(vec![5.0, 4.0, 6.0, 1.0, 0.0, 2.0], layout(3, 3)).unwrap();
        let cfg = TestConfig::new(0.05)
            .adjustment(Adjustment::Unadjusted)
            .max_assignments(Some(100));
        assert_eq!(run_placebo_test(&x, &cfg).unwrap().n_assignments, 20);
        let cfg = cfg.max_assignments(Some(10));
        assert_eq!(run_placebo_test(&x, &cfg).unwrap().n_assignments, 11);
    }
}
