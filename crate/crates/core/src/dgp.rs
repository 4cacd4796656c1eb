//! Simulation designs: a linear model with cluster-level treatment and
//! circularly h-dependent errors and covariates, its probit counterpart, and
//! a small difference-in-differences panel.
//!
//! Every (cluster, column) pair draws from its own stream keyed by the
//! dataset seed, so datasets do not depend on generation order.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Cluster, ClusterDataset, Observation};
use crate::rng::{self, StreamRng};

const SIZE_STREAM: u64 = 0;
const ERROR_STREAM: u64 = 1;
const FIRST_COVARIATE_STREAM: u64 = 2;

/// Law of the raw field before the moving average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldLaw {
    Normal {
        sd: f64,
    },
    /// Chi-square with two degrees of freedom minus two.
    CenteredChiSquare2,
}

impl FieldLaw {
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            FieldLaw::Normal { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            FieldLaw::CenteredChiSquare2 => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                a * a + b * b - 2.0
            }
        }
    }
}

/// `Y = theta0 + beta D + eta' X + U` with circular h-dependence in `U`
/// and in every column of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDesign {
    pub q1: usize,
    pub q0: usize,
    pub h: usize,
    pub beta: f64,
    pub theta0: f64,
    pub eta: Vec<f64>,
    /// Cluster sizes are uniform on `min_size..=max_size`.
    pub min_size: usize,
    pub max_size: usize,
    pub treated_errors: FieldLaw,
    pub untreated_errors: FieldLaw,
    pub treated_covariates: FieldLaw,
    pub untreated_covariates: FieldLaw,
}

impl LinearDesign {
    /// Default design: `h = 10`, `eta = (1, 1, 1, 1, 1)`, sizes on `15..=25`,
    /// errors N(0, 1) / N(0, 2) and covariates N(0, 1) / chi2(2) - 2 for
    /// treated / untreated clusters.
    pub fn new(q1: usize, q0: usize) -> Self {
        Self {
            q1,
            q0,
            h: 10,
            beta: 0.0,
            theta0: 0.0,
            eta: alloc::vec![1.0; 5],
            min_size: 15,
            max_size: 25,
            treated_errors: FieldLaw::Normal { sd: 1.0 },
            untreated_errors: FieldLaw::Normal {
                sd: core::f64::consts::SQRT_2,
            },
            treated_covariates: FieldLaw::Normal { sd: 1.0 },
            untreated_covariates: FieldLaw::CenteredChiSquare2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q1 == 0 {
            return Err(Error::NoTreated);
        }
        if self.q0 == 0 {
            return Err(Error::NoUntreated);
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::InvalidDesign("cluster size range is empty"));
        }
        if self.max_size > u32::MAX as usize {
            return Err(Error::InvalidDesign("cluster size too large"));
        }
        if self.h >= self.min_size {
            return Err(Error::HOutOfRange {
                h: self.h,
                m: self.min_size,
            });
        }
        Ok(())
    }
}

/// The linear design used as a latent model; only the sign of the latent
/// outcome is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitDesign {
    pub latent: LinearDesign,
}

impl ProbitDesign {
    /// As [`LinearDesign::new`] but with standard normal errors in every
    /// cluster and sizes on `350..=500`.
    pub fn new(q1: usize, q0: usize) -> Self {
        let mut latent = LinearDesign::new(q1, q0);
        latent.untreated_errors = FieldLaw::Normal { sd: 1.0 };
        latent.min_size = 350;
        latent.max_size = 500;
        Self { latent }
    }
}

/// Entry `i` is the mean of `source[i], .., source[i + h]` with indices
/// taken modulo `m`.
pub fn circular_ma(source: &[f64], h: usize) -> Result<Vec<f64>> {
    let m = source.len();
    if h >= m {
        return Err(Error::HOutOfRange { h, m });
    }
    let width = (h + 1) as f64;
    Ok((0..m)
        .map(|i| (i..=i + h).map(|j| source[j % m]).sum::<f64>() / width)
        .collect())
}

fn field(seed: u64, cluster: usize, stream: u64, law: FieldLaw, m: usize, h: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[cluster as u64, stream]);
    let raw: Vec<f64> = (0..m).map(|_| law.sample(&mut rng)).collect();
    circular_ma(&raw, h).expect("window checked against cluster size")
}

/// Treatment flag, latent outcomes and covariate rows of one cluster.
type LatentCluster = (bool, Vec<f64>, Vec<Vec<f64>>);

/// Per-cluster latent outcomes and covariates.
fn latent_clusters(design: &LinearDesign, seed: u64) -> Result<Vec<LatentCluster>> {
    design.validate()?;
    let q = design.q1 + design.q0;
    let mut out = Vec::with_capacity(q);
    for k in 0..q {
        let treated = k < design.q1;
        let mut size_rng = rng::stream(seed, &[k as u64, SIZE_STREAM]);
        let m = size_rng.random_range(design.min_size as u32..=design.max_size as u32) as usize;
        let (error_law, covariate_law) = if treated {
            (design.treated_errors, design.treated_covariates)
        } else {
            (design.untreated_errors, design.untreated_covariates)
        };
        let errors = field(seed, k, ERROR_STREAM, error_law, m, design.h);
        let columns: Vec<Vec<f64>> = (0..design.eta.len())
            .map(|c| {
                field(
                    seed,
                    k,
                    FIRST_COVARIATE_STREAM + c as u64,
                    covariate_law,
                    m,
                    design.h,
                )
            })
            .collect();
        let shift = design.theta0 + if treated { design.beta } else { 0.0 };
        let outcomes = (0..m)
            .map(|i| {
                let index: f64 = design
                    .eta
                    .iter()
                    .zip(&columns)
                    .map(|(eta, col)| eta * col[i])
                    .sum();
                shift + index + errors[i]
            })
            .collect();
        out.push((treated, outcomes, columns));
    }
    Ok(out)
}

fn cluster_id(treated: bool, k: usize, q1: usize) -> alloc::string::String {
    if treated {
        format!("t{}", k + 1)
    } else {
        format!("u{}", k - q1 + 1)
    }
}

fn assemble<F>(design: &LinearDesign, seed: u64, link: F) -> Result<ClusterDataset>
where
    F: Fn(f64) -> f64,
{
    let clusters = latent_clusters(design, seed)?
        .into_iter()
        .enumerate()
        .map(|(k, (treated, outcomes, columns))| {
            let observations = outcomes
                .iter()
                .enumerate()
                .map(|(i, &y)| Observation::new(link(y), columns.iter().map(|c| c[i]).collect()))
                .collect();
            Cluster::new(cluster_id(treated, k, design.q1), treated, observations)
        })
        .collect();
    ClusterDataset::new(clusters)
}

pub fn gen_linear(design: &LinearDesign, seed: u64) -> Result<ClusterDataset> {
    assemble(design, seed, |y| y)
}

/// Binary outcomes `1{Y* > 0}` from the latent linear model.
pub fn gen_probit(design: &ProbitDesign, seed: u64) -> Result<ClusterDataset> {
    assemble(&design.latent, seed, |y| if y > 0.0 { 1.0 } else { 0.0 })
}

/// One observation per period and cluster:
/// `Y_t = theta0 I_t + beta I_t D + zeta + U_t` with `I_t = 1{t > t0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DidPanelDesign {
    pub q1: usize,
    pub q0: usize,
    pub periods: usize,
    /// Last pre-intervention period (periods are numbered from 1).
    pub t0: usize,
    pub beta: f64,
    pub theta0: f64,
    pub noise_sd: f64,
    pub fixed_effect_sd: f64,
}

impl DidPanelDesign {
    pub fn new(q1: usize, q0: usize, periods: usize, t0: usize, beta: f64) -> Self {
        Self {
            q1,
            q0,
            periods,
            t0,
            beta,
            theta0: 0.0,
            noise_sd: 1.0,
            fixed_effect_sd: 1.0,
        }
    }
}

pub fn gen_did_panel(design: &DidPanelDesign, seed: u64) -> Result<ClusterDataset> {
    if design.t0 == 0 || design.t0 >= design.periods {
        return Err(Error::InvalidDesign(
            "panel needs pre and post periods (1 <= t0 < periods)",
        ));
    }
    let q = design.q1 + design.q0;
    let clusters = (0..q)
        .map(|k| {
            let treated = k < design.q1;
            let mut rng = rng::stream(seed, &[k as u64, ERROR_STREAM]);
            let zeta = design.fixed_effect_sd * rng.sample::<f64, _>(StandardNormal);
            let observations = (1..=design.periods)
                .map(|t| {
                    let post = t > design.t0;
                    let effect = if post {
                        design.theta0 + if treated { design.beta } else { 0.0 }
                    } else {
                        0.0
                    };
                    let noise = design.noise_sd * rng.sample::<f64, _>(StandardNormal);
                    Observation::with_period(effect + zeta + noise, alloc::vec![], post)
                })
                .collect();
            Cluster::new(cluster_id(treated, k, design.q1), treated, observations)
        })
        .collect();
    ClusterDataset::new(clusters)
}
