//! Clustered data, cluster layout, placebo assignments, and test results.
//!
//! Clusters are stored treated-first. [`validate_dataset`] enforces that order
//! once at ingestion and every index computation downstream relies on it.
//! Indices are zero-based: `0..q1` are the treated clusters and `q1..q` the
//! untreated ones.

use alloc::string::String;
use alloc::vec::Vec;

use crate::combinations::binomial;
use crate::error::{Error, Result};

/// One row of cluster data.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub outcome: f64,
    pub covariates: Vec<f64>,
    /// Post-intervention indicator for difference-in-differences data.
    pub period_post: Option<bool>,
}

impl Observation {
    pub fn new(outcome: f64, covariates: Vec<f64>) -> Self {
        Self {
            outcome,
            covariates,
            period_post: None,
        }
    }

    pub fn with_period(outcome: f64, covariates: Vec<f64>, post: bool) -> Self {
        Self {
            outcome,
            covariates,
            period_post: Some(post),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub treated: bool,
    pub observations: Vec<Observation>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, treated: bool, observations: Vec<Observation>) -> Self {
        Self {
            id: id.into(),
            treated,
            observations,
        }
    }

    /// Number of observations in the cluster.
    pub fn size(&self) -> usize {
        self.observations.len()
    }

    /// Covariate dimension of the first observation (0 for an empty cluster).
    pub fn covariate_dim(&self) -> usize {
        self.observations
            .first()
            .map_or(0, |obs| obs.covariates.len())
    }

    /// Errors if the cluster is empty or its covariate dimension varies.
    pub fn check(&self) -> Result<()> {
        let Some(first) = self.observations.first() else {
            return Err(Error::EmptyCluster {
                id: self.id.clone(),
            });
        };
        let expected = first.covariates.len();
        if let Some(bad) = self
            .observations
            .iter()
            .find(|obs| obs.covariates.len() != expected)
        {
            return Err(Error::RaggedCovariates {
                id: self.id.clone(),
                expected,
                found: bad.covariates.len(),
            });
        }
        Ok(())
    }
}

/// Numbers of treated (`q1`) and untreated (`q0`) clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClusterLayout {
    q1: usize,
    q0: usize,
}

impl ClusterLayout {
    pub fn new(q1: usize, q0: usize) -> Result<Self> {
        if q1 == 0 {
            return Err(Error::NoTreated);
        }
        if q0 == 0 {
            return Err(Error::NoUntreated);
        }
        Ok(Self { q1, q0 })
    }

    pub fn q1(&self) -> usize {
        self.q1
    }

    pub fn q0(&self) -> usize {
        self.q0
    }

    pub fn q(&self) -> usize {
        self.q1 + self.q0
    }

    pub fn is_balanced(&self) -> bool {
        self.q1 == self.q0
    }

    /// `C(q, q1)`, the number of distinct placebo assignments.
    pub fn assignment_count(&self) -> u128 {
        binomial(self.q() as u64, self.q1 as u64)
    }
}

/// Validated clusters in canonical treated-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDataset {
    clusters: Vec<Cluster>,
    layout: ClusterLayout,
}

impl ClusterDataset {
    pub fn new(mut clusters: Vec<Cluster>) -> Result<Self> {
        let layout = validate_dataset(&mut clusters)?;
        Ok(Self { clusters, layout })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn layout(&self) -> ClusterLayout {
        self.layout
    }

    pub fn treated(&self) -> &[Cluster] {
        &self.clusters[..self.layout.q1]
    }

    pub fn untreated(&self) -> &[Cluster] {
        &self.clusters[self.layout.q1..]
    }

    /// Total number of observations across clusters.
    pub fn n_observations(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn into_clusters(self) -> Vec<Cluster> {
        self.clusters
    }
}

/// Checks every cluster and stably moves treated clusters to the front.
pub fn validate_dataset(clusters: &mut Vec<Cluster>) -> Result<ClusterLayout> {
    for cluster in clusters.iter() {
        cluster.check()?;
    }
    let (treated, untreated): (Vec<_>, Vec<_>) =
        clusters.drain(..).partition(|cluster| cluster.treated);
    let layout = ClusterLayout::new(treated.len(), untreated.len())?;
    clusters.extend(treated);
    clusters.extend(untreated);
    Ok(layout)
}

/// Per-cluster estimates in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateVector {
    values: Vec<f64>,
    layout: ClusterLayout,
}

impl EstimateVector {
    pub fn new(values: Vec<f64>, layout: ClusterLayout) -> Result<Self> {
        if values.len() != layout.q() {
            return Err(Error::LayoutMismatch {
                len: values.len(),
                expected: layout.q(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> ClusterLayout {
        self.layout
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            layout: self.layout,
        }
    }
}

/// A placebo treatment labeling: the sorted set of clusters called treated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    treated: Vec<usize>,
}

impl Assignment {
    pub fn new(mut treated: Vec<usize>, layout: ClusterLayout) -> Result<Self> {
        treated.sort_unstable();
        let distinct = treated.windows(2).all(|w| w[0] < w[1]);
        let in_range = treated.last().is_none_or(|&last| last < layout.q());
        if treated.len() != layout.q1() || !distinct || !in_range {
            return Err(Error::InvalidAssignment {
                q1: layout.q1(),
                q: layout.q(),
            });
        }
        Ok(Self { treated })
    }

    /// The observed labeling `{0, .., q1 - 1}`.
    pub fn identity(layout: ClusterLayout) -> Self {
        Self {
            treated: (0..layout.q1()).collect(),
        }
    }

    pub(crate) fn from_sorted_unchecked(treated: Vec<usize>) -> Self {
        Self { treated }
    }

    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    pub fn is_identity(&self) -> bool {
        self.treated.iter().enumerate().all(|(i, &k)| i == k)
    }

    /// Membership mask of length `q`.
    pub fn mask(&self, q: usize) -> Vec<bool> {
        let mut mask = alloc::vec![false; q];
        for &k in &self.treated {
            mask[k] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Alternative `beta > 0`.
    Greater,
    /// Alternative `beta < 0`.
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Adjustment {
    /// Rescale each placebo statistic by the ratio of two-sample standard deviations.
    Adjusted,
    /// Raw comparison of means; intended for balanced designs.
    Unadjusted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    pub side: Side,
    pub adjustment: Adjustment,
    /// Replace full enumeration with this many uniform draws from the assignment set.
    pub max_assignments: Option<usize>,
    pub seed: u64,
}

impl TestConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            side: Side::Greater,
            adjustment: Adjustment::Adjusted,
            max_assignments: None,
            seed: 0,
        }
    }

    pub fn side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }

    pub fn adjustment(mut self, adjustment: Adjustment) -> Self {
        self.adjustment = adjustment;
        self
    }

    pub fn max_assignments(mut self, m: Option<usize>) -> Self {
        self.max_assignments = m;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.max_assignments == Some(0) {
            return Err(Error::ZeroDraws);
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Warning {
    /// The critical value is the largest placebo statistic, so the test cannot reject.
    ZeroPower,
    /// Some placebo splits had zero two-sample variance and were mapped to signed infinity.
    DegeneratePlaceboVariance { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Size of the reference set: assignments, sign vectors, or bootstrap draws.
    pub n_assignments: usize,
    /// Tie-splitting probability of the randomized test function, when defined.
    pub randomized_threshold: Option<f64>,
    pub side: Side,
    pub adjustment: Option<Adjustment>,
    /// Whether `reject` came from an auxiliary uniform draw.
    pub randomized: bool,
    pub warnings: Vec<Warning>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cluster(id: &str, treated: bool) -> Cluster {
        Cluster::new(id, treated, vec![Observation::new(1.0, vec![])])
    }

    #[test]
    fn counts_groups() {
        let mut clusters: Vec<_> = (0..6)
            .map(|i| cluster(&alloc::format!("c{i}"), i < 3))
            .collect();
        let layout = validate_dataset(&mut clusters).unwrap();
        assert_eq!((layout.q1(), layout.q0()), (3, 3));
    }

    #[test]
    fn no_treated_is_an_error() {
        let mut clusters = vec![cluster("a", false), cluster("b", false)];
        assert_eq!(validate_dataset(&mut clusters), Err(Error::NoTreated));
        let mut clusters = vec![cluster("a", true)];
        assert_eq!(validate_dataset(&mut clusters), Err(Error::NoUntreated));
    }

    #[test]
    fn interleaved_clusters_are_stably_partitioned() {
        let data = ClusterDataset::new(vec![
            cluster("t1", true),
            cluster("u1", false),
            cluster("t2", true),
            cluster("u2", false),
        ])
        .unwrap();
        let ids: Vec<_> = data.clusters().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["t1", "t2", "u1", "u2"]);
        assert_eq!(data.layout(), ClusterLayout::new(2, 2).unwrap());
    }

    #[test]
    fn rejects_empty_and_ragged_clusters() {
        let mut clusters = vec![Cluster::new("e", true, vec![]), cluster("u", false)];
        assert!(matches!(
            validate_dataset(&mut clusters),
            Err(Error::EmptyCluster { .. })
        ));
        let ragged = Cluster::new(
            "r",
            true,
            vec![
                Observation::new(0.0, vec![1.0]),
                Observation::new(0.0, vec![1.0, 2.0]),
            ],
        );
        let mut clusters = vec![ragged, cluster("u", false)];
        assert!(matches!(
            validate_dataset(&mut clusters),
            Err(Error::RaggedCovariates {
                expected: 1,
                found: 2,
                ..
            })
        ));
    }

    #[test]
    fn estimate_vector_checks_length_and_finiteness() {
        let layout = ClusterLayout::new(2, 2).unwrap();
        assert!(EstimateVector::new(vec![1.0; 3], layout).is_err());
        assert_eq!(
            EstimateVector::new(vec![1.0, f64::NAN, 0.0, 0.0], layout),
            Err(Error::NonFinite { index: 1 })
        );
    }

    #[test]
    fn assignment_validation() {
        let layout = ClusterLayout::new(2, 3).unwrap();
        assert!(Assignment::new(vec![4, 1], layout).is_ok());
        assert!(Assignment::new(vec![1, 1], layout).is_err());
        assert!(Assignment::new(vec![1, 5], layout).is_err());
        assert!(Assignment::new(vec![1], layout).is_err());
        assert!(Assignment::identity(layout).is_identity());
        assert!(!Assignment::new(vec![0, 2], layout).unwrap().is_identity());
    }
}
