//! Competing few-cluster inference methods used as benchmarks for the placebo
//! test: the two-sample t test on cluster estimates, the sign-change test on
//! matched pairs, the pooled regression t test with a cluster-robust variance
//! (against `t(q - 1)` critical values or a wild cluster bootstrap).

use fewclusters_core::linalg::{Matrix, Qr};
use fewclusters_core::model::{Adjustment, Assignment, ClusterDataset, ClusterLayout};
use fewclusters_core::permutation::{p_value, quantile_rank};
use fewclusters_core::rng;
use fewclusters_core::stats::{comparison_of_means, two_sample_variance};
use fewclusters_core::{Error, EstimateVector, Result, Side, TestResult};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Default number of wild bootstrap draws.
pub const DEFAULT_BOOTSTRAP_REPS: usize = 199;

/// Six-point wild bootstrap weights: `+-sqrt(3/2), +-1, +-sqrt(1/2)`, each
/// with probability 1/6 (mean 0, variance 1).
pub const WEBB_WEIGHTS: [f64; 6] = [
    -1.224_744_871_391_589,
    -1.0,
    -core::f64::consts::FRAC_1_SQRT_2,
    core::f64::consts::FRAC_1_SQRT_2,
    1.0,
    1.224_744_871_391_589,
];

const SIGN_TEST_MAX_PAIRS: usize = 24;
const PAIRING_STREAM: u64 = 0x9a12;
const SIGN_TEST_STREAM: u64 = 0x5167;
const BOOTSTRAP_STREAM: u64 = 0xb007;

pub fn webb_weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    WEBB_WEIGHTS[rng.random_range(0..6u32) as usize]
}

fn student_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom are positive")
}

/// `p`-quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(df: f64, p: f64) -> f64 {
    student_t(df).inverse_cdf(p)
}

fn t_test_result(statistic: f64, df: f64, alpha: f64, side: Side) -> TestResult {
    let dist = student_t(df);
    let (critical_value, reject, p) = match side {
        Side::Greater => {
            let c = dist.inverse_cdf(1.0 - alpha);
            (c, statistic > c, dist.sf(statistic))
        }
        Side::Less => {
            let c = -dist.inverse_cdf(1.0 - alpha);
            (c, statistic < c, dist.cdf(statistic))
        }
        Side::TwoSided => {
            let c = dist.inverse_cdf(1.0 - alpha / 2.0);
            (
                c,
                statistic.abs() > c,
                (2.0 * dist.sf(statistic.abs())).min(1.0),
            )
        }
    };
    TestResult {
        statistic,
        critical_value,
        p_value: p,
        reject,
        n_assignments: 0,
        randomized_threshold: None,
        side,
        adjustment: None,
        randomized: false,
        warnings: vec![],
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Two-sample t test on cluster estimates: the mean difference over its
/// two-sample standard error, against `t(min(q1, q0) - 1)`.
pub fn im_t_test(x: &EstimateVector, alpha: f64, side: Side) -> Result<TestResult> {
    check_alpha(alpha)?;
    let layout = x.layout();
    let identity = Assignment::identity(layout);
    let variance = two_sample_variance(x, &identity)?;
    if variance == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let statistic = comparison_of_means(x, &identity) / variance.sqrt();
    let df = (layout.q1().min(layout.q0()) - 1) as f64;
    Ok(t_test_result(statistic, df, alpha, side))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Uniformly random perfect matching.
    Random { seed: u64 },
    /// Sort each group by cluster size and match rank to rank.
    BySize,
}

/// Matches each treated cluster to one untreated cluster.
///
/// `sizes` holds the cluster sizes in canonical order. Pairs are returned as
/// `(treated index, untreated index)`, ordered by treated index for random
/// matching and by treated size rank for size matching.
pub fn pair_clusters(
    layout: ClusterLayout,
    sizes: &[usize],
    strategy: Pairing,
) -> core::result::Result<Vec<(usize, usize)>, ComparatorError> {
    if !layout.is_balanced() {
        return Err(ComparatorError::Unbalanced {
            q1: layout.q1(),
            q0: layout.q0(),
        });
    }
    assert_eq!(sizes.len(), layout.q(), "one size per cluster");
    let q1 = layout.q1();
    let mut treated: Vec<usize> = (0..q1).collect();
    let mut untreated: Vec<usize> = (q1..layout.q()).collect();
    match strategy {
        Pairing::Random { seed } => {
            let mut rng = rng::stream(seed, &[PAIRING_STREAM]);
            untreated.shuffle(&mut rng);
        }
        Pairing::BySize => {
            treated.sort_by_key(|&k| sizes[k]);
            untreated.sort_by_key(|&k| sizes[k]);
        }
    }
    Ok(treated.into_iter().zip(untreated).collect())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComparatorError {
    #[error("matched pairs need as many treated as untreated clusters (q1 = {q1}, q0 = {q0})")]
    Unbalanced { q1: usize, q0: usize },
    #[error(transparent)]
    Core(#[from] Error),
}

/// `mean(b) / sqrt(sum (b - mean(b))^2)`; a zero denominator maps to signed infinity.
fn sign_statistic(b: &[f64]) -> f64 {
    let n = b.len() as f64;
    let mean = b.iter().sum::<f64>() / n;
    let ss: f64 = b.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss > 0.0 {
        mean / ss.sqrt()
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Sign-change randomization test on matched-pair effect estimates.
///
/// The statistic is recomputed under all `2^q1` sign vectors. The
/// nonrandomized decision uses the same ascending quantile rule as the
/// placebo test; the randomized variant rejects with probability one above
/// the critical value and with the tie probability `delta` at it, using one
/// uniform draw from `seed`.
pub fn crs_sign_test(
    beta_hats: &[f64],
    alpha: f64,
    side: Side,
    randomized: bool,
    seed: u64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    let q1 = beta_hats.len();
    if q1 < 2 {
        return Err(Error::GroupTooSmall { q1, q0: q1 });
    }
    if q1 > SIGN_TEST_MAX_PAIRS {
        return Err(Error::TooManyAssignments {
            count: 1u128 << q1,
            cap: 1 << SIGN_TEST_MAX_PAIRS,
        });
    }
    let (transform, level): (fn(f64) -> f64, f64) = match side {
        Side::Greater => (|s| s, alpha),
        Side::Less => (|s| -s, alpha),
        Side::TwoSided => (f64::abs, alpha),
    };
    let mut flipped = beta_hats.to_vec();
    let stats: Vec<f64> = (0u32..1 << q1)
        .map(|mask| {
            for (k, (out, &b)) in flipped.iter_mut().zip(beta_hats).enumerate() {
                *out = if mask >> k & 1 == 1 { -b } else { b };
            }
            transform(sign_statistic(&flipped))
        })
        .collect();
    let observed = stats[0];
    let n = stats.len();
    let mut sorted = stats.clone();
    sorted.sort_by(f64::total_cmp);
    let k = quantile_rank(n, level);
    let c = sorted[k - 1];
    let above = stats.iter().filter(|&&s| s > c).count();
    let ties = stats.iter().filter(|&&s| s == c).count();
    let delta = (n as f64 * level - above as f64) / ties as f64;
    let reject = if randomized {
        let phi = if observed > c {
            1.0
        } else if observed == c {
            delta
        } else {
            0.0
        };
        let u = 1.0 - rng::stream(seed, &[SIGN_TEST_STREAM]).random::<f64>();
        phi >= u
    } else {
        observed > c
    };
    let mut warnings = vec![];
    if k == n {
        warnings.push(fewclusters_core::Warning::ZeroPower);
    }
    Ok(TestResult {
        statistic: observed,
        critical_value: c,
        p_value: p_value(observed, &stats),
        reject,
        n_assignments: n,
        randomized_threshold: Some(delta),
        side,
        adjustment: None,
        randomized,
        warnings,
    })
}

/// Pooled least-squares fit of the outcome on `(1, D, x)` with a
/// cluster-robust standard error for the treatment coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledFit {
    pub beta_hat: f64,
    pub se_crve: f64,
    pub t_stat: f64,
    /// Observations.
    pub n: usize,
    /// Clusters.
    pub q: usize,
    /// Regressors, including the constant and the treatment dummy.
    pub d: usize,
}

/// Small-sample factor `(n - 1) q / ((n - d)(q - 1))` applied to the CRVE.
pub fn crve_dof_factor(n: usize, d: usize, q: usize) -> f64 {
    ((n - 1) * q) as f64 / ((n - d) * (q - 1)) as f64
}

/// Pooled regression design, factored once and refit for many outcome vectors.
#[derive(Debug, Clone)]
pub struct PooledDesign {
    x: Matrix,
    qr: Qr,
    /// Row of `(X'X)^{-1} X'` for the treatment coefficient, per observation.
    treatment_weights: Vec<f64>,
    /// Half-open row range of each cluster.
    bounds: Vec<(usize, usize)>,
    dof: f64,
    treatment_column: Option<usize>,
}

impl PooledDesign {
    /// Regressors `(1, D, x)`.
    pub fn unrestricted(data: &ClusterDataset) -> Result<Self> {
        Self::build(data, true)
    }

    /// Regressors `(1, x)`: the fit with the treatment effect set to zero.
    pub fn restricted(data: &ClusterDataset) -> Result<Self> {
        Self::build(data, false)
    }

    fn build(data: &ClusterDataset, with_treatment: bool) -> Result<Self> {
        let dim = data.clusters()[0].covariate_dim();
        let cols = dim + 1 + usize::from(with_treatment);
        let mut rows = Vec::with_capacity(data.n_observations() * cols);
        let mut bounds = Vec::with_capacity(data.clusters().len());
        let mut start = 0;
        for cluster in data.clusters() {
            if cluster.covariate_dim() != dim {
                return Err(Error::RaggedCovariates {
                    id: cluster.id.clone(),
                    expected: dim,
                    found: cluster.covariate_dim(),
                });
            }
            for obs in &cluster.observations {
                rows.push(1.0);
                if with_treatment {
                    rows.push(if cluster.treated { 1.0 } else { 0.0 });
                }
                rows.extend_from_slice(&obs.covariates);
            }
            bounds.push((start, start + cluster.size()));
            start += cluster.size();
        }
        let n = start;
        let x = Matrix::from_row_major(n, cols, rows);
        let qr = Qr::new(&x)?;
        let q = bounds.len();
        if n <= cols || q < 2 {
            return Err(Error::RankDeficient);
        }
        let treatment_column = with_treatment.then_some(1);
        let treatment_weights = match treatment_column {
            Some(col) => {
                let gram_inv = qr.inverse_gram();
                (0..n)
                    .map(|i| {
                        x.row(i)
                            .iter()
                            .enumerate()
                            .map(|(j, v)| gram_inv[(col, j)] * v)
                            .sum()
                    })
                    .collect()
            }
            None => vec![],
        };
        Ok(Self {
            dof: crve_dof_factor(n, cols, q),
            x,
            qr,
            treatment_weights,
            bounds,
            treatment_column,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn q(&self) -> usize {
        self.bounds.len()
    }

    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        self.qr.solve(y)
    }

    pub fn fitted(&self, y: &[f64]) -> Vec<f64> {
        self.x.mul_vec(&self.coefficients(y))
    }

    /// Fit with CRVE t statistic for the treatment coefficient.
    ///
    /// # Panics
    /// On a restricted design, which has no treatment coefficient.
    pub fn fit(&self, y: &[f64]) -> PooledFit {
        let col = self
            .treatment_column
            .expect("restricted design has no treatment coefficient");
        let coef = self.coefficients(y);
        let fitted = self.x.mul_vec(&coef);
        // V_DD = dof * sum_g (sum_{i in g} w_i e_i)^2
        let meat: f64 = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let score: f64 = (lo..hi)
                    .map(|i| self.treatment_weights[i] * (y[i] - fitted[i]))
                    .sum();
                score * score
            })
            .sum();
        let se_crve = (self.dof * meat).sqrt();
        let beta_hat = coef[col];
        PooledFit {
            beta_hat,
            se_crve,
            t_stat: beta_hat / se_crve,
            n: self.n(),
            q: self.q(),
            d: self.d(),
        }
    }
}

fn pooled_outcomes(data: &ClusterDataset) -> Vec<f64> {
    data.clusters()
        .iter()
        .flat_map(|c| c.observations.iter().map(|o| o.outcome))
        .collect()
}

pub fn pooled_ols_crve(data: &ClusterDataset) -> Result<PooledFit> {
    Ok(PooledDesign::unrestricted(data)?.fit(&pooled_outcomes(data)))
}

/// Pooled CRVE t statistic against `t(q - 1)` critical values.
pub fn bch_t_test(fit: &PooledFit, alpha: f64, side: Side) -> Result<TestResult> {
    check_alpha(alpha)?;
    Ok(t_test_result(fit.t_stat, (fit.q - 1) as f64, alpha, side))
}

/// Wild cluster bootstrap of the pooled CRVE t statistic with the null imposed.
///
/// Outcomes are rebuilt as restricted fitted values plus restricted
/// residuals multiplied by one six-point weight per cluster. The p-value is
/// the fraction of the `reps` bootstrap statistics at or beyond the observed
/// one (in absolute value for two-sided tests).
pub fn wild_cluster_bootstrap_test(
    data: &ClusterDataset,
    alpha: f64,
    side: Side,
    reps: usize,
    seed: u64,
) -> Result<TestResult> {
    check_alpha(alpha)?;
    if reps == 0 {
        return Err(Error::ZeroDraws);
    }
    let y = pooled_outcomes(data);
    let unrestricted = PooledDesign::unrestricted(data)?;
    let restricted = PooledDesign::restricted(data)?;
    let observed = unrestricted.fit(&y).t_stat;
    let fitted = restricted.fitted(&y);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();

    let draws: Vec<f64> = (0..reps)
        .into_par_iter()
        .with_min_len(16)
        .map(|b| {
            let mut rng = rng::stream(seed, &[BOOTSTRAP_STREAM, b as u64]);
            let mut y_star = fitted.clone();
            for &(lo, hi) in &unrestricted.bounds {
                let w = webb_weight(&mut rng);
                for i in lo..hi {
                    y_star[i] += w * residuals[i];
                }
            }
            unrestricted.fit(&y_star).t_stat
        })
        .collect();

    // orient so that large values favor the alternative
    let orient = |t: f64| match side {
        Side::Greater => t,
        Side::Less => -t,
        Side::TwoSided => t.abs(),
    };
    let oriented: Vec<f64> = draws.iter().map(|&t| orient(t)).collect();
    let obs = orient(observed);
    let p = p_value(obs, &oriented);
    let mut sorted = oriented.clone();
    sorted.sort_by(f64::total_cmp);
    let c = sorted[quantile_rank(reps, alpha) - 1];
    let critical_value = if side == Side::Less { -c } else { c };
    Ok(TestResult {
        statistic: observed,
        critical_value,
        p_value: p,
        reject: p <= alpha,
        n_assignments: reps,
        randomized_threshold: None,
        side,
        adjustment: None,
        randomized: false,
        warnings: vec![],
    })
}

/// Adjustment rule used for the placebo method in simulations: unadjusted
/// critical values for balanced designs, adjusted otherwise.
pub fn default_adjustment(layout: ClusterLayout) -> Adjustment {
    if layout.is_balanced() {
        Adjustment::Unadjusted
    } else {
        Adjustment::Adjusted
    }
}
