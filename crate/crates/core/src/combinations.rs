//! Lexicographic enumeration and uniform sampling of `k`-subsets.

use alloc::vec::Vec;
use rand::Rng;

/// `C(n, k)` in exact integer arithmetic, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        let Some(next) = acc.checked_mul(u128::from(n - i)) else {
            return u128::MAX;
        };
        acc = next / u128::from(i + 1);
    }
    acc
}

/// Iterator over the `k`-subsets of `0..n` in lexicographic order, starting
/// at `{0, .., k - 1}`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = (k <= n).then(|| (0..k).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.current.as_mut()?;
        let out = current.clone();
        let k = current.len();
        // rightmost position that can still be incremented
        match (0..k).rev().find(|&i| current[i] < self.n - k + i) {
            Some(i) => {
                current[i] += 1;
                for j in i + 1..k {
                    current[j] = current[j - 1] + 1;
                }
            }
            None => self.current = None,
        }
        Some(out)
    }
}

/// Uniform draw of a sorted `k`-subset of `0..n` (partial Fisher-Yates).
pub fn random_combination<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i as u64..n as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(12, 6), 924);
        assert_eq!(binomial(2, 1), 2);
        assert_eq!(binomial(5, 7), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
        assert_eq!(binomial(400, 200), u128::MAX);
    }

    #[test]
    fn lexicographic_order() {
        let all: Vec<_> = Combinations::new(4, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        assert_eq!(Combinations::new(3, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
    }

    #[test]
    fn counts_match_binomial() {
        for n in 1..=12 {
            for k in 0..=n {
                assert_eq!(
                    Combinations::new(n, k).count() as u128,
                    binomial(n as u64, k as u64)
                );
            }
        }
    }
}
