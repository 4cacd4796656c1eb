//! Comparison of means, two-sample variance, and the adjusted placebo statistic.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Assignment, EstimateVector};
use crate::numeric::{mean, pairwise_sum};

/// Splits `x` into (treated, untreated) values under `a`, each in index order.
fn split(x: &EstimateVector, a: &Assignment) -> (Vec<f64>, Vec<f64>) {
    let layout = x.layout();
    assert!(
        a.treated().len() == layout.q1() && a.treated().iter().all(|&k| k < layout.q()),
        "assignment does not match the estimate layout"
    );
    let mask = a.mask(layout.q());
    let mut treated = Vec::with_capacity(layout.q1());
    let mut untreated = Vec::with_capacity(layout.q0());
    for (&value, &is_treated) in x.values().iter().zip(&mask) {
        if is_treated {
            treated.push(value);
        } else {
            untreated.push(value);
        }
    }
    (treated, untreated)
}

/// Sum of squared deviations from the group mean.
fn centered_ss(values: &[f64]) -> f64 {
    let center = mean(values);
    let squares: Vec<f64> = values.iter().map(|v| (v - center) * (v - center)).collect();
    pairwise_sum(&squares)
}

fn variance_of_split(treated: &[f64], untreated: &[f64]) -> Result<f64> {
    let (q1, q0) = (treated.len(), untreated.len());
    if q1 < 2 || q0 < 2 {
        return Err(Error::GroupTooSmall { q1, q0 });
    }
    let q1f = q1 as f64;
    let q0f = q0 as f64;
    Ok(centered_ss(treated) / (q1f * (q1f - 1.0)) + centered_ss(untreated) / (q0f * (q0f - 1.0)))
}

/// Mean of `x` over the placebo-treated clusters minus the mean over the rest.
///
/// # Panics
/// If `a` does not have `q1` indices below `q`.
pub fn comparison_of_means(x: &EstimateVector, a: &Assignment) -> f64 {
    let (treated, untreated) = split(x, a);
    mean(&treated) - mean(&untreated)
}

/// Two-sample variance: each group's sample variance divided by its size, summed.
pub fn two_sample_variance(x: &EstimateVector, a: &Assignment) -> Result<f64> {
    let (treated, untreated) = split(x, a);
    variance_of_split(&treated, &untreated)
}

/// Two-sample variance rescaled by `q1 q0 / q`.
pub fn scaled_variance(x: &EstimateVector, a: &Assignment) -> Result<f64> {
    let layout = x.layout();
    let factor = (layout.q1() * layout.q0()) as f64 / layout.q() as f64;
    Ok(factor * two_sample_variance(x, a)?)
}

/// Placebo statistic `mean difference(a) * S(identity) / S(a)`.
///
/// At the identity assignment the ratio is taken to be exactly one, so the
/// result equals [`comparison_of_means`] bitwise.
pub fn adjusted_statistic(x: &EstimateVector, a: &Assignment) -> Result<f64> {
    let (treated, untreated) = split(x, a);
    let placebo_var = variance_of_split(&treated, &untreated)?;
    if placebo_var == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let diff = mean(&treated) - mean(&untreated);
    if a.is_identity() {
        return Ok(diff);
    }
    let reference_sd = libm::sqrt(two_sample_variance(x, &Assignment::identity(x.layout()))?);
    Ok(diff * reference_sd / libm::sqrt(placebo_var))
}

/// Evaluates placebo statistics for many assignments of one estimate vector.
///
/// This is the single code path the permutation engine uses, so identical
/// assignments always give bitwise-identical values.
#[derive(Debug, Clone)]
pub(crate) struct PlaceboEvaluator<'a> {
    x: &'a EstimateVector,
    /// Observed two-sample standard deviation; `None` means unadjusted.
    reference_sd: Option<f64>,
}

/// A placebo statistic plus whether its split had zero two-sample variance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PlaceboValue {
    pub value: f64,
    pub degenerate: bool,
}

impl<'a> PlaceboEvaluator<'a> {
    pub fn unadjusted(x: &'a EstimateVector) -> Self {
        Self {
            x,
            reference_sd: None,
        }
    }

    pub fn adjusted(x: &'a EstimateVector) -> Result<Self> {
        let var = two_sample_variance(x, &Assignment::identity(x.layout()))?;
        Ok(Self {
            x,
            reference_sd: Some(libm::sqrt(var)),
        })
    }

    pub fn evaluate(&self, a: &Assignment) -> PlaceboValue {
        let (treated, untreated) = split(self.x, a);
        let diff = mean(&treated) - mean(&untreated);
        let Some(reference_sd) = self.reference_sd else {
            return PlaceboValue {
                value: diff,
                degenerate: false,
            };
        };
        if a.is_identity() {
            return PlaceboValue {
                value: diff,
                degenerate: false,
            };
        }
        // group sizes were checked when the reference variance was computed
        let placebo_var = variance_of_split(&treated, &untreated).unwrap_or(0.0);
        if placebo_var == 0.0 {
            let value = if diff > 0.0 {
                f64::INFINITY
            } else if diff < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            };
            return PlaceboValue {
                value,
                degenerate: true,
            };
        }
        PlaceboValue {
            value: diff * reference_sd / libm::sqrt(placebo_var),
            degenerate: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterLayout;
    use alloc::vec;

    fn worked() -> EstimateVector {
        EstimateVector::new(vec![3.0, 1.0, 2.0, 0.0], ClusterLayout::new(2, 2).unwrap()).unwrap()
    }

    fn placebo_24(x: &EstimateVector) -> Assignment {
        // clusters 2 and 4 in one-based numbering
        Assignment::new(vec![1, 3], x.layout()).unwrap()
    }

    #[test]
    fn comparison_of_means_worked_values() {
        let x = worked();
        let id = Assignment::identity(x.layout());
        assert_eq!(comparison_of_means(&x, &id), 1.0);
        assert_eq!(comparison_of_means(&x, &placebo_24(&x)), -2.0);
        let c = EstimateVector::new(vec![4.5; 4], x.layout()).unwrap();
        assert_eq!(comparison_of_means(&c, &placebo_24(&c)), 0.0);
    }

    #[test]
    fn two_sample_variance_worked_values() {
        let x = worked();
        let id = Assignment::identity(x.layout());
        assert_eq!(two_sample_variance(&x, &id).unwrap(), 2.0);
        assert_eq!(two_sample_variance(&x, &placebo_24(&x)).unwrap(), 0.5);
        let c = EstimateVector::new(vec![-1.0; 4], x.layout()).unwrap();
        assert_eq!(two_sample_variance(&c, &id).unwrap(), 0.0);
    }

    #[test]
    fn scaled_variance_worked_values() {
        let x = worked();
        let id = Assignment::identity(x.layout());
        assert_eq!(scaled_variance(&x, &id).unwrap(), 2.0);
        assert_eq!(scaled_variance(&x, &placebo_24(&x)).unwrap(), 0.5);
        let c = EstimateVector::new(vec![7.0; 4], x.layout()).unwrap();
        assert_eq!(scaled_variance(&c, &id).unwrap(), 0.0);
    }

    #[test]
    fn adjusted_statistic_worked_values() {
        let x = worked();
        let id = Assignment::identity(x.layout());
        assert_eq!(adjusted_statistic(&x, &id).unwrap(), 1.0);
        let v = adjusted_statistic(&x, &placebo_24(&x)).unwrap();
        assert!((v + 4.0).abs() < 1e-12, "{v}");
        let c = EstimateVector::new(vec![2.0; 4], x.layout()).unwrap();
        assert_eq!(adjusted_statistic(&c, &id), Err(Error::DegenerateVariance));
        assert_eq!(
            adjusted_statistic(&c, &placebo_24(&c)),
            Err(Error::DegenerateVariance)
        );
    }

    #[test]
    fn small_groups_are_rejected() {
        let layout = ClusterLayout::new(1, 3).unwrap();
        let x = EstimateVector::new(vec![1.0, 2.0, 3.0, 4.0], layout).unwrap();
        assert_eq!(
            two_sample_variance(&x, &Assignment::identity(layout)),
            Err(Error::GroupTooSmall { q1: 1, q0: 3 })
        );
    }

    #[test]
    fn evaluator_maps_degenerate_splits_to_signed_infinity() {
        // placebo split {0,1} vs {2,3} is constant within groups
        let layout = ClusterLayout::new(2, 2).unwrap();
        let x = EstimateVector::new(vec![1.0, 2.0, 1.0, 2.0], layout).unwrap();
        let eval = PlaceboEvaluator::adjusted(&x).unwrap();
        let a = Assignment::new(vec![1, 3], layout).unwrap();
        let out = eval.evaluate(&a);
        assert!(out.degenerate);
        assert_eq!(out.value, f64::INFINITY);
        let b = Assignment::new(vec![0, 2], layout).unwrap();
        assert_eq!(eval.evaluate(&b).value, f64::NEG_INFINITY);
    }

    #[test]
    fn evaluator_agrees_with_public_statistic() {
        let x = worked();
        let eval = PlaceboEvaluator::adjusted(&x).unwrap();
        for treated in crate::combinations::Combinations::new(4, 2) {
            let a = Assignment::new(treated, x.layout()).unwrap();
            assert_eq!(eval.evaluate(&a).value, adjusted_statistic(&x, &a).unwrap());
        }
    }
}
