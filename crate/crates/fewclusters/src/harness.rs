//! Monte Carlo rejection-frequency experiments.
//!
//! Every replication draws one dataset from its own seed, computes the
//! per-cluster estimates once, and hands the same data to every method.
//! Seeds depend only on the master seed and the (sweep, replication)
//! indices, so tables do not depend on the worker count.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use fewclusters_core::dgp::{gen_linear, gen_probit, LinearDesign, ProbitDesign};
use fewclusters_core::estimators::{estimate_all, EstimatorKind};
use fewclusters_core::permutation::run_placebo_test;
use fewclusters_core::rng::{self, derive_seed};
use fewclusters_core::{Adjustment, ClusterDataset, EstimateVector, Side, TestConfig};
use rand::Rng;
use rayon::prelude::*;

use crate::comparators::{
    bch_t_test, crs_sign_test, default_adjustment, im_t_test, pair_clusters, pooled_ols_crve,
    wild_cluster_bootstrap_test, Pairing, DEFAULT_BOOTSTRAP_REPS,
};

const PAIRING_TAG: u64 = 1;
const CRS_UNIFORM_TAG: u64 = 2;
const BOOTSTRAP_TAG: u64 = 3;
const ORACLE_TAG: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Placebo test; unadjusted when `q1 = q0`, adjusted otherwise.
    Placebo,
    PlaceboUnadjusted,
    Im,
    Crs,
    CrsRandomized,
    WildBootstrap,
    BchT,
    /// Rejects with probability `alpha` regardless of the data.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Placebo,
        Method::PlaceboUnadjusted,
        Method::Im,
        Method::Crs,
        Method::CrsRandomized,
        Method::WildBootstrap,
        Method::BchT,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Placebo => "placebo",
            Method::PlaceboUnadjusted => "placebo_unadjusted",
            Method::Im => "im",
            Method::Crs => "crs",
            Method::CrsRandomized => "crs_randomized",
            Method::WildBootstrap => "wild_bootstrap",
            Method::BchT => "bch_t",
            Method::Oracle => "oracle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    fn is_pooled(self) -> bool {
        matches!(self, Method::WildBootstrap | Method::BchT)
    }

    fn is_paired(self) -> bool {
        matches!(self, Method::Crs | Method::CrsRandomized)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Linear(LinearDesign),
    Probit(ProbitDesign),
}

impl Design {
    fn linear(&self) -> &LinearDesign {
        match self {
            Design::Linear(d) => d,
            Design::Probit(p) => &p.latent,
        }
    }

    fn linear_mut(&mut self) -> &mut LinearDesign {
        match self {
            Design::Linear(d) => d,
            Design::Probit(p) => &mut p.latent,
        }
    }

    pub fn q1(&self) -> usize {
        self.linear().q1
    }

    pub fn q0(&self) -> usize {
        self.linear().q0
    }

    fn estimator(&self) -> EstimatorKind {
        match self {
            Design::Linear(_) => EstimatorKind::OlsIntercept,
            Design::Probit(_) => EstimatorKind::Probit,
        }
    }

    pub fn generate(&self, seed: u64) -> fewclusters_core::Result<ClusterDataset> {
        match self {
            Design::Linear(d) => gen_linear(d, seed),
            Design::Probit(p) => gen_probit(p, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    Beta,
    H,
    /// Balanced cluster count: value `v` means `q1 = q0 = v`.
    Q,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::H => "h",
            SweepParam::Q => "q",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    Random,
    BySize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub design: Design,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub bootstrap_reps: usize,
    pub pairing: PairingMode,
}

impl ExperimentSpec {
    pub fn new(design: Design, sweep: Sweep, methods: Vec<Method>, replications: usize) -> Self {
        Self {
            design,
            sweep,
            methods,
            replications,
            alpha: 0.05,
            master_seed: 0,
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
            pairing: PairingMode::Random,
        }
    }

    /// The design at one sweep value.
    pub fn design_at(&self, value: f64) -> Result<Design, HarnessError> {
        let mut design = self.design.clone();
        let d = design.linear_mut();
        match self.sweep.param {
            SweepParam::Beta => d.beta = value,
            SweepParam::H => d.h = integral(value, "sweep.values")?,
            SweepParam::Q => {
                let q = integral(value, "sweep.values")?;
                d.q1 = q;
                d.q0 = q;
            }
        }
        Ok(design)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(invalid("sweep.values", "must not be empty"));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.values", "must be finite"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "must not be empty"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", "must lie strictly between 0 and 1"));
        }
        if self.bootstrap_reps == 0 && self.methods.contains(&Method::WildBootstrap) {
            return Err(invalid("bootstrap_reps", "must be at least 1"));
        }
        for &value in &self.sweep.values {
            let design = self.design_at(value)?;
            design
                .linear()
                .validate()
                .map_err(|e| invalid("design", e.to_string()))?;
            for &method in &self.methods {
                check_applicable(method, &design)?;
            }
        }
        Ok(())
    }
}

fn integral(value: f64, field: &'static str) -> Result<usize, HarnessError> {
    if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(invalid(
            field,
            format!("{value} is not a nonnegative integer"),
        ))
    }
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_applicable(method: Method, design: &Design) -> Result<(), HarnessError> {
    let (q1, q0) = (design.q1(), design.q0());
    if method.is_paired() && q1 != q0 {
        return Err(HarnessError::MethodInapplicable {
            method,
            reason: format!("matched pairs need q1 = q0, got q1 = {q1}, q0 = {q0}"),
        });
    }
    if method.is_pooled() && matches!(design, Design::Probit(_)) {
        return Err(HarnessError::MethodInapplicable {
            method,
            reason: "pooled linear regression does not apply to the probit design".into(),
        });
    }
    if method == Method::Im && (q1 < 2 || q0 < 2) {
        return Err(HarnessError::MethodInapplicable {
            method,
            reason: format!("needs two clusters per group, got q1 = {q1}, q0 = {q0}"),
        });
    }
    if method == Method::Placebo && q1 != q0 && (q1 < 2 || q0 < 2) {
        return Err(HarnessError::MethodInapplicable {
            method,
            reason: format!(
                "the adjusted statistic needs two clusters per group, got q1 = {q1}, q0 = {q0}"
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("method {method} is inapplicable: {reason}")]
    MethodInapplicable { method: Method, reason: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub method: Method,
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub reject_rate: f64,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RejectionTable {
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    /// Rejection rate of `method` at each sweep value, in sweep order.
    pub fn series(&self, method: Method) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.sweep_value, r.reject_rate))
            .collect()
    }

    pub fn rate(&self, method: Method, sweep_value: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sweep_value == sweep_value)
            .map(|r| r.reject_rate)
    }
}

/// Seed of the dataset for one replication.
pub fn replication_seed(master_seed: u64, sweep_index: usize, replication: usize) -> u64 {
    derive_seed(master_seed, &[sweep_index as u64, replication as u64])
}

/// Hash of every value in the dataset, in canonical order.
pub fn dataset_fingerprint(data: &ClusterDataset) -> u64 {
    let mut h = DefaultHasher::new();
    for c in data.clusters() {
        c.id.hash(&mut h);
        c.treated.hash(&mut h);
        for o in &c.observations {
            o.outcome.to_bits().hash(&mut h);
            for x in &o.covariates {
                x.to_bits().hash(&mut h);
            }
            o.period_post.hash(&mut h);
        }
    }
    h.finish()
}

/// Decision of every method on one replication, plus the dataset fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub fingerprint: u64,
    pub rejections: Vec<bool>,
    pub failures: usize,
}

/// Runs every method of `spec` on the dataset of one replication.
///
/// Methods that fail on this dataset (a separated probit cluster, a zero
/// variance) count as non-rejections.
pub fn run_replication(
    spec: &ExperimentSpec,
    design: &Design,
    sweep_index: usize,
    replication: usize,
) -> ReplicationOutcome {
    let seed = replication_seed(spec.master_seed, sweep_index, replication);
    let data = match design.generate(seed) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("replication {replication}: generation failed: {e}");
            return ReplicationOutcome {
                fingerprint: 0,
                rejections: vec![false; spec.methods.len()],
                failures: spec.methods.len(),
            };
        }
    };
    let fingerprint = dataset_fingerprint(&data);
    log::debug!("sweep {sweep_index} replication {replication}: dataset {fingerprint:016x}");
    let estimates = estimate_all(&data, design.estimator());
    let mut failures = 0;
    let rejections = spec
        .methods
        .iter()
        .map(
            |&method| match decide(spec, design, method, &data, estimates.as_ref().ok(), seed) {
                Some(r) => r,
                None => {
                    failures += 1;
                    false
                }
            },
        )
        .collect();
    ReplicationOutcome {
        fingerprint,
        rejections,
        failures,
    }
}

fn decide(
    spec: &ExperimentSpec,
    design: &Design,
    method: Method,
    data: &ClusterDataset,
    estimates: Option<&EstimateVector>,
    seed: u64,
) -> Option<bool> {
    let alpha = spec.alpha;
    let side = Side::Greater;
    match method {
        Method::Oracle => {
            let u: f64 = rng::stream(seed, &[ORACLE_TAG]).random();
            Some(u < alpha)
        }
        Method::Placebo | Method::PlaceboUnadjusted => {
            let x = estimates?;
            let adjustment = if method == Method::Placebo {
                default_adjustment(x.layout())
            } else {
                Adjustment::Unadjusted
            };
            let cfg = TestConfig::new(alpha).adjustment(adjustment);
            run_placebo_test(x, &cfg).ok().map(|r| r.reject)
        }
        Method::Im => im_t_test(estimates?, alpha, side).ok().map(|r| r.reject),
        Method::Crs | Method::CrsRandomized => {
            let pairs = pair_estimates(spec, design, data, estimates, seed)?;
            let randomized = method == Method::CrsRandomized;
            let u_seed = derive_seed(seed, &[CRS_UNIFORM_TAG]);
            crs_sign_test(&pairs, alpha, side, randomized, u_seed)
                .ok()
                .map(|r| r.reject)
        }
        Method::BchT => {
            let fit = pooled_ols_crve(data).ok()?;
            bch_t_test(&fit, alpha, side).ok().map(|r| r.reject)
        }
        Method::WildBootstrap => {
            let b_seed = derive_seed(seed, &[BOOTSTRAP_TAG]);
            wild_cluster_bootstrap_test(data, alpha, side, spec.bootstrap_reps, b_seed)
                .ok()
                .map(|r| r.reject)
        }
    }
}

/// Effect estimate per matched pair: pooled least squares on the pair's data
/// for the linear design, difference of cluster estimates for the probit design.
fn pair_estimates(
    spec: &ExperimentSpec,
    design: &Design,
    data: &ClusterDataset,
    estimates: Option<&EstimateVector>,
    seed: u64,
) -> Option<Vec<f64>> {
    let sizes: Vec<usize> = data.clusters().iter().map(|c| c.size()).collect();
    let strategy = match spec.pairing {
        PairingMode::Random => Pairing::Random {
            seed: derive_seed(seed, &[PAIRING_TAG]),
        },
        PairingMode::BySize => Pairing::BySize,
    };
    let pairs = pair_clusters(data.layout(), &sizes, strategy).ok()?;
    match design {
        Design::Linear(_) => pairs
            .iter()
            .map(|&(t, u)| {
                let clusters = data.clusters();
                let pair =
                    ClusterDataset::new(vec![clusters[t].clone(), clusters[u].clone()]).ok()?;
                pooled_ols_crve(&pair).ok().map(|f| f.beta_hat)
            })
            .collect(),
        Design::Probit(_) => {
            let x = estimates?.values();
            Some(pairs.iter().map(|&(t, u)| x[t] - x[u]).collect())
        }
    }
}

/// Runs the experiment on the global rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RejectionTable, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.sweep.values.len() * spec.methods.len());
    for (sweep_index, &value) in spec.sweep.values.iter().enumerate() {
        let design = spec.design_at(value)?;
        let outcomes: Vec<ReplicationOutcome> = (0..spec.replications)
            .into_par_iter()
            .map(|rep| run_replication(spec, &design, sweep_index, rep))
            .collect();
        let failures: usize = outcomes.iter().map(|o| o.failures).sum();
        if failures > 0 {
            log::info!(
                "{} = {value}: {failures} method evaluations failed and count as non-rejections",
                spec.sweep.param.name()
            );
        }
        for (m, &method) in spec.methods.iter().enumerate() {
            let count = outcomes.iter().filter(|o| o.rejections[m]).count();
            rows.push(RejectionRow {
                method,
                sweep_param: spec.sweep.param,
                sweep_value: value,
                reject_rate: count as f64 / spec.replications as f64,
                reps: spec.replications,
                seed: spec.master_seed,
            });
        }
    }
    Ok(RejectionTable { rows })
}

/// Runs the experiment on a dedicated pool with `threads` workers.
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: usize,
) -> Result<RejectionTable, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_experiment(spec))
}
