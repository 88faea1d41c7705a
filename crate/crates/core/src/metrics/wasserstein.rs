//! Wasserstein-1 distances between uniform empirical measures of equal size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::rng::{StreamKey, StreamKind};

/// Largest sample size accepted by [`w1_assignment`].
pub const ASSIGNMENT_CAP: usize = 512;

fn check_sizes(na: usize, nb: usize) -> Result<()> {
    if na == 0 || nb == 0 {
        return Err(Error::invalid("W1 needs nonempty samples"));
    }
    if na != nb {
        return Err(Error::invalid(format!(
            "W1 between samples of unequal size ({na} vs {nb}) is not supported"
        )));
    }
    Ok(())
}

/// Exact W1 between two real samples: mean gap of the order statistics.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample value"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[inline]
fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact W1 under Euclidean cost, via an optimal assignment.
pub fn w1_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    w1_assignment_capped(a, b, ASSIGNMENT_CAP)
}

pub fn w1_assignment_capped(a: &EmpiricalMeasure, b: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    check_sizes(a.len(), b.len())?;
    if a.dim() != b.dim() {
        return Err(Error::invalid("samples live in different dimensions"));
    }
    if a.len() > cap {
        return Err(Error::OverCap { n: a.len(), cap });
    }
    // solve in a canonical orientation so that swapping the inputs gives
    // bit-identical totals even when several matchings are optimal
    let (a, b) = if lex_less(b.as_flat(), a.as_flat()) {
        (b, a)
    } else {
        (a, b)
    };
    let n = a.len();
    let (cost, _) = solve_assignment(n, |i, j| euclid(a.point(i), b.point(j)));
    Ok(cost / n as f64)
}

fn lex_less(x: &[f64], y: &[f64]) -> bool {
    x.iter()
        .zip(y)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .is_some_and(|o| o.is_lt())
}

/// Minimum-cost perfect matching on an `n × n` cost matrix given as a
/// closure. Shortest augmenting paths with dual potentials; ties go to the
/// lowest column index. Returns the total cost and `row → column`.
pub fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> (f64, Vec<usize>) {
    // 1-based with a virtual column 0, as in the classical formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    // summing sorted terms makes the total independent of the argument order
    let mut terms: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cost(i, j)).collect();
    terms.sort_by(f64::total_cmp);
    (terms.iter().sum(), assignment)
}

/// W1 estimate for samples above the assignment cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampledW1 {
    pub mean: f64,
    /// Spread of the estimate across repeats (0 when no subsampling was needed).
    pub std_dev: f64,
    pub repeats: usize,
    pub subsample_size: usize,
}

/// Indices `perm[0], perm[s], perm[2s], …` (`cap` of them) of a seeded
/// Fisher–Yates permutation of `0..n`, with stride `s = n / cap`.
pub fn subsample_indices(n: usize, cap: usize, seed: u64, tag: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut s = StreamKey::new(seed, tag, n as u64, StreamKind::Init).stream();
    for i in (1..n).rev() {
        let j = (s.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    if n <= cap {
        return perm;
    }
    let stride = n / cap;
    (0..cap).map(|k| perm[k * stride]).collect()
}

fn take(mu: &EmpiricalMeasure, idx: &[usize]) -> EmpiricalMeasure {
    let mut flat = Vec::with_capacity(idx.len() * mu.dim());
    for &i in idx {
        flat.extend_from_slice(mu.point(i));
    }
    EmpiricalMeasure::from_flat_unchecked(mu.dim(), flat)
}

/// W1 with exact solves when possible: sorting in 1-D, an assignment when
/// `n ≤ cap`, otherwise the mean over `repeats` deterministic subsamples.
pub fn w1_subsampled(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cap: usize,
    seed: u64,
    repeats: usize,
) -> Result<SubsampledW1> {
    check_sizes(a.len(), b.len())?;
    let n = a.len();
    if a.dim() == 1 {
        return Ok(SubsampledW1 {
            mean: w1_1d(a.as_flat(), b.as_flat())?,
            std_dev: 0.0,
            repeats: 1,
            subsample_size: n,
        });
    }
    if n <= cap {
        return Ok(SubsampledW1 {
            mean: w1_assignment_capped(a, b, cap)?,
            std_dev: 0.0,
            repeats: 1,
            subsample_size: n,
        });
    }
    let repeats = repeats.max(2);
    let mut vals = Vec::with_capacity(repeats);
    for r in 0..repeats as u64 {
        let ia = subsample_indices(n, cap, seed, 2 * r);
        let ib = subsample_indices(n, cap, seed, 2 * r + 1);
        vals.push(w1_assignment_capped(&take(a, &ia), &take(b, &ib), cap)?);
    }
    let mean = vals.iter().sum::<f64>() / repeats as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    Ok(SubsampledW1 {
        mean,
        std_dev: var.sqrt(),
        repeats,
        subsample_size: cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamState;
    use proptest::prelude::*;

    fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        fn rec(k: usize, perm: &mut Vec<usize>, a: &[Vec<f64>], b: &[Vec<f64>], best: &mut f64) {
            if k == perm.len() {
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| euclid(&a[i], &b[j])).sum();
                *best = best.min(c);
                return;
            }
            for s in k..perm.len() {
                perm.swap(k, s);
                rec(k + 1, perm, a, b, best);
                perm.swap(k, s);
            }
        }
        let mut perm: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        rec(0, &mut perm, a, b, &mut best);
        best / a.len() as f64
    }

    fn measure(pts: &[Vec<f64>]) -> EmpiricalMeasure {
        crate::measure::make_empirical(pts).unwrap()
    }

    fn random_points(s: &mut StreamState, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| 4.0 * s.next_f64() - 2.0).collect())
            .collect()
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(w1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((w1_1d(&[0.0, 0.0, 3.0], &[1.0, 1.0, 1.0]).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert!(w1_1d(&[0.0], &[0.0, 1.0]).is_err());
        assert!(w1_1d(&[], &[]).is_err());
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut s = StreamKey::new(5, 0, 0, StreamKind::Init).stream();
        for case in 0..60 {
            let n = 1 + case % 7;
            let d = 1 + case % 3;
            let a = random_points(&mut s, n, d);
            let b = random_points(&mut s, n, d);
            let got = w1_assignment(&measure(&a), &measure(&b)).unwrap();
            assert!((got - brute_force(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicates_and_identity() {
        let a = vec![vec![1.0, 1.0]; 5];
        assert_eq!(w1_assignment(&measure(&a), &measure(&a)).unwrap(), 0.0);
        let b = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![2.0, 2.0],
        ];
        let v = w1_assignment(&measure(&a), &measure(&b)).unwrap();
        assert!((v - brute_force(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn over_cap_is_rejected() {
        let a = measure(&vec![vec![0.0, 0.0]; 10]);
        assert!(matches!(
            w1_assignment_capped(&a, &a, 8),
            Err(Error::OverCap { n: 10, cap: 8 })
        ));
    }

    #[test]
    fn subsampling_is_deterministic_and_reports_spread() {
        let mut s = StreamKey::new(8, 0, 0, StreamKind::Init).stream();
        let a = measure(&random_points(&mut s, 100, 2));
        let b = measure(&random_points(&mut s, 100, 2));
        let x = w1_subsampled(&a, &b, 20, 3, 4).unwrap();
        let y = w1_subsampled(&a, &b, 20, 3, 4).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.subsample_size, 20);
        assert!(x.std_dev > 0.0);
        let exact = w1_subsampled(&a, &b, 512, 3, 4).unwrap();
        assert_eq!(exact.std_dev, 0.0);
        assert_eq!(exact.mean, w1_assignment(&a, &b).unwrap());
    }

    #[test]
    fn subsample_indices_are_distinct() {
        let idx = subsample_indices(1000, 100, 1, 0);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
    }

    fn pts(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, d), n)
    }

    proptest! {
        #[test]
        fn sorted_matching_equals_assignment(a in proptest::collection::vec(-10.0f64..10.0, 1..40),
                                             seed in any::<u64>()) {
            let mut s = StreamKey::new(seed, 0, 0, StreamKind::Init).stream();
            let b: Vec<f64> = a.iter().map(|_| 20.0 * s.next_f64() - 10.0).collect();
            let ma = EmpiricalMeasure::from_flat(1, a.clone()).unwrap();
            let mb = EmpiricalMeasure::from_flat(1, b.clone()).unwrap();
            let x = w1_1d(&a, &b).unwrap();
            let y = w1_assignment(&ma, &mb).unwrap();
            prop_assert!((x - y).abs() < 1e-9);
        }

        #[test]
        fn metric_axioms((a, b, c) in (1usize..12, 1usize..4).prop_flat_map(|(n, d)| (pts(n, d), pts(n, d), pts(n, d)))) {
            let (ma, mb, mc) = (measure(&a), measure(&b), measure(&c));
            let ab = w1_assignment(&ma, &mb).unwrap();
            let ba = w1_assignment(&mb, &ma).unwrap();
            let bc = w1_assignment(&mb, &mc).unwrap();
            let ac = w1_assignment(&ma, &mc).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
