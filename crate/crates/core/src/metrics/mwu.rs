//! Two-sided Mann-Whitney U test.
//!
//! Small samples (both sides ≤ 8) use the exact permutation distribution of U
//! over the pooled values, which handles ties without approximation. Larger
//! samples use the normal approximation with tie and continuity corrections.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use super::MetricsError;

const EXACT_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub method: UMethod,
}

fn pooled_ranks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    Data::new(pooled).ranks(RankTieBreaker::Average)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("Mann-Whitney sample"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let ranks = pooled_ranks(a, b);
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u = ranks[..n1].iter().sum::<f64>() - offset;
    let mean = (n1 * n2) as f64 / 2.0;
    let observed = (u - mean).abs();

    if n1 <= EXACT_MAX && n2 <= EXACT_MAX {
        let mut extreme = 0u64;
        let mut total = 0u64;
        let mut chosen = Vec::with_capacity(n1);
        for_each_combination(ranks.len(), n1, &mut chosen, &mut |idx| {
            let u_perm = idx.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            total += 1;
            if (u_perm - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        });
        return Ok(MannWhitney { u, p_value: extreme as f64 / total as f64, method: UMethod::Exact });
    }

    let n = (n1 + n2) as f64;
    let mut sorted: Vec<f64> = a.iter().chain(b).copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
    };
    Ok(MannWhitney { u, p_value, method: UMethod::Normal })
}

fn for_each_combination(n: usize, k: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if chosen.len() == k {
            f(chosen);
            return;
        }
        let need = k - chosen.len();
        for i in start..=(n - need) {
            chosen.push(i);
            rec(i + 1, n, k, chosen, f);
            chosen.pop();
        }
    }
    rec(0, n, k, chosen, f);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// U by direct pairwise comparison, ties counting one half.
    fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for x in a {
            for y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    /// Exact two-sided p by enumerating every assignment of the pooled values
    /// to the first sample via bitmasks.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let mean = (a.len() * b.len()) as f64 / 2.0;
        let observed = (pairwise_u(a, b) - mean).abs();
        let (mut hit, mut total) = (0u32, 0u32);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (i, v) in pooled.iter().enumerate() {
                    if mask & (1 << i) != 0 { xs.push(*v) } else { ys.push(*v) }
                }
                (xs, ys)
            };
            total += 1;
            if (pairwise_u(&xs, &ys) - mean).abs() >= observed - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn identical_samples_do_not_separate() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.2];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        let big: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let r = mann_whitney_u(&big, &big).unwrap();
        assert_eq!(r.method, UMethod::Normal);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_separation_is_significant() {
        let a: Vec<f64> = (1..=20).map(f64::from).collect();
        let b: Vec<f64> = (101..=120).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
        assert_eq!(r.u, 0.0);
    }

    #[test]
    fn exact_matches_enumeration_oracle() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0]),
            (&[1.2, 3.4, 0.5, 7.7, 2.2], &[2.0, 3.5, 9.1, 0.1, 4.4]),
            (&[1.0, 1.0, 2.0, 3.0, 3.0], &[1.0, 2.0, 2.0, 4.0, 0.0]),
            (&[0.0, 0.0, 0.0, 0.5, 1.0], &[0.0, 0.25, 0.5, 0.5, 1.0]),
        ];
        for (a, b) in cases {
            let r = mann_whitney_u(a, b).unwrap();
            assert_eq!(r.method, UMethod::Exact);
            assert!((r.u - pairwise_u(a, b)).abs() < 1e-12);
            assert!((r.p_value - brute_force_p(a, b)).abs() < 1e-9, "{a:?} {b:?}");
        }
        // Fully separated 5 vs 5: two extreme assignments out of C(10,5).
        let r = mann_whitney_u(cases[0].0, cases[0].1).unwrap();
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn p_value_is_symmetric(a in proptest::collection::vec(0u8..6, 1..30), b in proptest::collection::vec(0u8..6, 1..30)) {
                let a: Vec<f64> = a.into_iter().map(f64::from).collect();
                let b: Vec<f64> = b.into_iter().map(f64::from).collect();
                let ab = mann_whitney_u(&a, &b).unwrap();
                let ba = mann_whitney_u(&b, &a).unwrap();
                prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
                prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&ab.p_value));
            }
        }
    }
}
