//! Per-cluster estimates: OLS intercept, difference-in-differences slope,
//! and the probit Z-estimate of the constant.
//!
//! Each fit uses data from a single cluster only.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};
use crate::model::{Cluster, ClusterDataset, EstimateVector};
use crate::numeric::{normal_cdf, normal_pdf};

pub const PROBIT_TOLERANCE: f64 = 1e-10;
pub const PROBIT_MAX_ITERATIONS: usize = 100;
const MAX_STEP_HALVINGS: usize = 30;
const SEPARATION_BOUND: f64 = 20.0;
const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    OlsIntercept,
    DidSlope,
    Probit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// The scalar that enters the estimate vector.
    pub theta: f64,
    /// Covariate slopes, followed by the cluster constant for the DiD fit.
    pub nuisance: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rows `(1, extra.., x..)` for every observation.
fn design<F>(cluster: &Cluster, extra: F) -> Result<Matrix>
where
    F: Fn(&crate::model::Observation) -> Result<Option<f64>>,
{
    cluster.check()?;
    let mut data = Vec::new();
    let mut cols = 0;
    for obs in &cluster.observations {
        let start = data.len();
        data.push(1.0);
        if let Some(v) = extra(obs)? {
            data.push(v);
        }
        data.extend_from_slice(&obs.covariates);
        cols = data.len() - start;
    }
    Ok(Matrix::from_row_major(cluster.size(), cols, data))
}

fn outcomes(cluster: &Cluster) -> Vec<f64> {
    cluster.observations.iter().map(|o| o.outcome).collect()
}

/// Intercept of the within-cluster least-squares fit of the outcome on `(1, x)`.
pub fn ols_intercept(cluster: &Cluster) -> Result<FitResult> {
    let x = design(cluster, |_| Ok(None))?;
    let coef = Qr::new(&x)?.solve(&outcomes(cluster));
    Ok(FitResult {
        theta: coef[0],
        nuisance: coef[1..].to_vec(),
        iterations: 1,
        converged: true,
    })
}

/// Coefficient on the post-period dummy in the within-cluster regression of
/// the outcome on `(1, post, x)`. The constant is the cluster fixed effect.
pub fn did_slope(cluster: &Cluster) -> Result<FitResult> {
    let x = design(cluster, |obs| match obs.period_post {
        Some(post) => Ok(Some(if post { 1.0 } else { 0.0 })),
        None => Err(Error::MissingPeriodFlag),
    })?;
    let coef = Qr::new(&x)?.solve(&outcomes(cluster));
    let mut nuisance = coef[2..].to_vec();
    nuisance.push(coef[0]);
    Ok(FitResult {
        theta: coef[1],
        nuisance,
        iterations: 1,
        converged: true,
    })
}

/// Sample moment function of the probit Z-estimator,
/// `Psi(b) = m^{-1} sum z_i (1{y_i > 0} - Phi(z_i' b))` with `z_i = (1, x_i)`.
#[derive(Debug, Clone)]
pub struct ProbitMoments {
    z: Matrix,
    success: Vec<f64>,
}

impl ProbitMoments {
    pub fn new(cluster: &Cluster) -> Result<Self> {
        let z = design(cluster, |_| Ok(None))?;
        let success = cluster
            .observations
            .iter()
            .map(|o| if o.outcome > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self { z, success })
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }

    fn index(&self, i: usize, b: &[f64]) -> f64 {
        self.z.row(i).iter().zip(b).map(|(z, b)| z * b).sum()
    }

    pub fn moment(&self, b: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut out = alloc::vec![0.0; p];
        for i in 0..self.z.rows() {
            let resid = self.success[i] - normal_cdf(self.index(i, b));
            for (o, z) in out.iter_mut().zip(self.z.row(i)) {
                *o += z * resid;
            }
        }
        let m = self.z.rows() as f64;
        out.iter_mut().for_each(|o| *o /= m);
        out
    }

    /// Exact Jacobian `-m^{-1} sum z_i z_i' phi(z_i' b)`.
    pub fn jacobian(&self, b: &[f64]) -> Matrix {
        let p = self.dim();
        let mut out = Matrix::zeros(p, p);
        for i in 0..self.z.rows() {
            let w = normal_pdf(self.index(i, b));
            let z = self.z.row(i);
            for r in 0..p {
                for c in 0..p {
                    out[(r, c)] -= w * z[r] * z[c];
                }
            }
        }
        let m = self.z.rows() as f64;
        for r in 0..p {
            for c in 0..p {
                out[(r, c)] /= m;
            }
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Zero of the probit moment function by damped Newton iteration from the
/// origin. `theta` is the constant, `nuisance` the covariate slopes.
pub fn probit_z_estimate(cluster: &Cluster) -> Result<FitResult> {
    let moments = ProbitMoments::new(cluster)?;
    let successes: f64 = moments.success.iter().sum();
    if successes == 0.0 || successes == moments.success.len() as f64 {
        return Err(Error::Separation);
    }
    let mut b = alloc::vec![0.0; moments.dim()];
    let mut psi = moments.moment(&b);
    let mut psi_norm = norm(&psi);
    for iteration in 0..PROBIT_MAX_ITERATIONS {
        if psi_norm < PROBIT_TOLERANCE {
            return Ok(FitResult {
                theta: b[0],
                nuisance: b[1..].to_vec(),
                iterations: iteration,
                converged: true,
            });
        }
        let neg_psi: Vec<f64> = psi.iter().map(|v| -v).collect();
        let step = Qr::new(&moments.jacobian(&b))?.solve(&neg_psi);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let trial: Vec<f64> = b.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let trial_psi = moments.moment(&trial);
            let trial_norm = norm(&trial_psi);
            if trial_norm < psi_norm {
                accepted = Some((trial, trial_psi, trial_norm));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_psi, next_norm)) = accepted else {
            return Err(Error::NoConvergence {
                iterations: iteration + 1,
            });
        };
        if next[0].abs() > SEPARATION_BOUND {
            return Err(Error::Separation);
        }
        if norm(&next) > DIVERGENCE_NORM {
            return Err(Error::NoConvergence {
                iterations: iteration + 1,
            });
        }
        b = next;
        psi = next_psi;
        psi_norm = next_norm;
    }
    if psi_norm < PROBIT_TOLERANCE {
        return Ok(FitResult {
            theta: b[0],
            nuisance: b[1..].to_vec(),
            iterations: PROBIT_MAX_ITERATIONS,
            converged: true,
        });
    }
    Err(Error::NoConvergence {
        iterations: PROBIT_MAX_ITERATIONS,
    })
}

pub fn fit_cluster(cluster: &Cluster, kind: EstimatorKind) -> Result<FitResult> {
    match kind {
        EstimatorKind::OlsIntercept => ols_intercept(cluster),
        EstimatorKind::DidSlope => did_slope(cluster),
        EstimatorKind::Probit => probit_z_estimate(cluster),
    }
}

/// Fits every cluster in canonical order. The first failing cluster (in
/// that order) is reported by id.
pub fn estimate_all(data: &ClusterDataset, kind: EstimatorKind) -> Result<EstimateVector> {
    let fit = |cluster: &Cluster| {
        fit_cluster(cluster, kind)
            .map(|f| f.theta)
            .map_err(|e| Error::ClusterFit {
                id: cluster.id.clone(),
                source: Box::new(e),
            })
    };
    #[cfg(feature = "parallel")]
    let fits: Vec<Result<f64>> = {
        use rayon::prelude::*;
        data.clusters().par_iter().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Result<f64>> = data.clusters().iter().map(fit).collect();
    let values = fits.into_iter().collect::<Result<Vec<f64>>>()?;
    EstimateVector::new(values, data.layout())
}
