use fewclusters::comparators::{
    crs_sign_test, im_t_test, pooled_ols_crve, t_quantile, webb_weight, wild_cluster_bootstrap_test,
};
use fewclusters_core::dgp::{gen_linear, LinearDesign};
use fewclusters_core::rng;
use fewclusters_core::{Cluster, ClusterDataset, ClusterLayout, EstimateVector, Observation, Side};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                for j in 0..n {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

struct NormalEquations {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    gram_inv: Vec<Vec<f64>>,
    coef: Vec<f64>,
}

/// Pooled fit of `y` on `(1, D, x)` through the normal equations.
fn normal_equations(data: &ClusterDataset) -> NormalEquations {
    let mut rows = vec![];
    let mut y = vec![];
    for c in data.clusters() {
        for o in &c.observations {
            let mut r = vec![1.0, if c.treated { 1.0 } else { 0.0 }];
            r.extend_from_slice(&o.covariates);
            rows.push(r);
            y.push(o.outcome);
        }
    }
    let d = rows[0].len();
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| rows.iter().map(|r| r[i] * r[j]).sum())
                .collect()
        })
        .collect();
    let gram_inv = invert(gram);
    let xty: Vec<f64> = (0..d)
        .map(|i| rows.iter().zip(&y).map(|(r, v)| r[i] * v).sum())
        .collect();
    let coef = (0..d)
        .map(|i| (0..d).map(|j| gram_inv[i][j] * xty[j]).sum())
        .collect();
    NormalEquations {
        rows,
        y,
        gram_inv,
        coef,
    }
}

impl NormalEquations {
    fn residuals(&self) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.y)
            .map(|(r, y)| y - r.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Heteroskedasticity-robust (HC0) variance of the treatment coefficient.
    fn hc0(&self) -> f64 {
        let d = self.coef.len();
        let e = self.residuals();
        let mut meat = vec![vec![0.0; d]; d];
        for (r, e) in self.rows.iter().zip(&e) {
            for i in 0..d {
                for j in 0..d {
                    meat[i][j] += r[i] * r[j] * e * e;
                }
            }
        }
        let row = &self.gram_inv[1];
        (0..d)
            .map(|i| (0..d).map(|j| row[i] * meat[i][j] * row[j]).sum::<f64>())
            .sum()
    }

    fn classical(&self) -> f64 {
        let e = self.residuals();
        let (n, d) = (self.rows.len() as f64, self.coef.len() as f64);
        e.iter().map(|v| v * v).sum::<f64>() / (n - d) * self.gram_inv[1][1]
    }
}

fn singleton_dataset(seed: u64, n: usize) -> ClusterDataset {
    let mut rng = rng::stream(seed, &[]);
    let clusters = (0..n)
        .map(|i| {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let y = 0.5 + x + (1.0 + x.abs()) * e;
            Cluster::new(
                format!("c{i}"),
                i % 2 == 0,
                vec![Observation::new(y, vec![x])],
            )
        })
        .collect();
    ClusterDataset::new(clusters).unwrap()
}

#[test]
fn singleton_clusters_reduce_to_hc0() {
    for seed in 0..20 {
        let data = singleton_dataset(seed, 40);
        let fit = pooled_ols_crve(&data).unwrap();
        let oracle = normal_equations(&data);
        let (n, d) = (40.0, 3.0);
        let dof = (n - 1.0) * n / ((n - d) * (n - 1.0));
        let expected = dof * oracle.hc0();
        let got = fit.se_crve * fit.se_crve;
        assert!((got / expected - 1.0).abs() < 1e-10, "{got} vs {expected}");
        assert!((fit.beta_hat - oracle.coef[1]).abs() < 1e-10);
        assert_eq!(fit.t_stat, fit.beta_hat / fit.se_crve);
    }
}

#[test]
fn crve_tracks_classical_variance_under_homoskedasticity() {
    let mut rng = rng::stream(8, &[]);
    let (mut crve, mut classical) = (0.0, 0.0);
    for rep in 0..200 {
        let clusters = (0..60)
            .map(|k| {
                let obs = (0..10)
                    .map(|_| {
                        let x: f64 = rng.sample(StandardNormal);
                        let e: f64 = rng.sample(StandardNormal);
                        Observation::new(1.0 + 2.0 * x + e, vec![x])
                    })
                    .collect();
                Cluster::new(format!("r{rep}c{k}"), k < 30, obs)
            })
            .collect();
        let data = ClusterDataset::new(clusters).unwrap();
        crve += pooled_ols_crve(&data).unwrap().se_crve.powi(2);
        classical += normal_equations(&data).classical();
    }
    let ratio = crve / classical;
    assert!((ratio - 1.0).abs() < 0.2, "{ratio}");
}

#[test]
fn webb_weight_moments() {
    let mut rng = rng::stream(12, &[]);
    let n = 1_000_000;
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n {
        let w = webb_weight(&mut rng);
        s += w;
        ss += w * w;
    }
    let mean = s / n as f64;
    let var = ss / n as f64 - mean * mean;
    assert!(mean.abs() < 0.005, "{mean}");
    assert!((var - 1.0).abs() < 0.01, "{var}");
}

/// Sign-change p-value by direct enumeration.
fn oracle_sign_p(b: &[f64]) -> f64 {
    let stat = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let ss: f64 = v.iter().map(|a| (a - m) * (a - m)).sum();
        m / ss.sqrt()
    };
    let obs = stat(b);
    let q = b.len();
    let count = (0u32..1 << q)
        .filter(|mask| {
            let v: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(k, &x)| if mask >> k & 1 == 1 { -x } else { x })
                .collect();
            stat(&v) >= obs
        })
        .count();
    count as f64 / (1u64 << q) as f64
}

proptest! {
    #[test]
    fn positive_pairs_give_minimal_p(b in proptest::collection::vec(0.01f64..10.0, 5)) {
        let r = crs_sign_test(&b, 0.05, Side::Greater, false, 0).unwrap();
        prop_assert_eq!(r.n_assignments, 32);
        prop_assert_eq!(r.p_value, oracle_sign_p(&b));
        prop_assert_eq!(r.p_value, 1.0 / 32.0);
        prop_assert!(r.reject);
    }

    #[test]
    fn sign_test_matches_enumeration(b in proptest::collection::vec(-5.0f64..5.0, 2..9)) {
        let r = crs_sign_test(&b, 0.1, Side::Greater, false, 0).unwrap();
        prop_assert_eq!(r.p_value, oracle_sign_p(&b));
        prop_assert_eq!(r.reject, r.p_value <= 0.1);
    }

    #[test]
    fn decisions_are_scale_invariant(
        x in proptest::collection::vec(-5.0f64..5.0, 6),
        c in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let layout = ClusterLayout::new(3, 3).unwrap();
        let a = im_t_test(&EstimateVector::new(x.clone(), layout).unwrap(), 0.3, Side::Greater);
        let b = im_t_test(&EstimateVector::new(scaled.clone(), layout).unwrap(), 0.3, Side::Greater);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a.reject, b.reject);
        }
        let s = crs_sign_test(&x, 0.2, Side::Greater, false, 0).unwrap();
        let t = crs_sign_test(&scaled, 0.2, Side::Greater, false, 0).unwrap();
        prop_assert_eq!(s.reject, t.reject);
    }
}

#[test]
fn three_pairs_never_reject_without_randomization() {
    let mut rng = rng::stream(4, &[]);
    for _ in 0..200 {
        let b: Vec<f64> = (0..3)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 3.0)
            .collect();
        assert!(
            !crs_sign_test(&b, 0.05, Side::Greater, false, 0)
                .unwrap()
                .reject
        );
    }
}

#[test]
fn bootstrap_draw_count_and_determinism() {
    let data = gen_linear(&LinearDesign::new(3, 3), 5).unwrap();
    let a = wild_cluster_bootstrap_test(&data, 0.05, Side::Greater, 199, 77).unwrap();
    let b = wild_cluster_bootstrap_test(&data, 0.05, Side::Greater, 199, 77).unwrap();
    assert_eq!(a.n_assignments, 199);
    assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    assert_eq!(a.reject, a.p_value <= 0.05);
    let p = a.p_value * 199.0;
    assert!((p - p.round()).abs() < 1e-9);
}

#[test]
fn bootstrap_statistic_matches_pooled_fit() {
    let data = gen_linear(&LinearDesign::new(4, 4), 2).unwrap();
    let r = wild_cluster_bootstrap_test(&data, 0.05, Side::TwoSided, 99, 1).unwrap();
    assert_eq!(r.statistic, pooled_ols_crve(&data).unwrap().t_stat);
}

#[test]
fn t_quantiles() {
    assert!((t_quantile(5.0, 0.95) - 2.015).abs() < 1e-3);
    assert!((t_quantile(1.0, 0.95) - 6.314).abs() < 1e-3);
}
