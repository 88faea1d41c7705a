//! Rate fits, trend tests and tail tables.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::particle::{JumpLogEntry, PathRecordSet};

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_975(dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

/// Sample mean and its standard error.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std_error: f64::NAN,
            count: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    Summary {
        mean,
        std_error,
        count: n,
    }
}

/// Log-log fit `ln e = intercept + slope · ln N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    /// 95% t-interval for the slope.
    pub slope_ci: (f64, f64),
    pub points: usize,
    pub weighted: bool,
}

struct LineFit {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    slope_se: f64,
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (xi - xm) * (xi - xm);
        sxy += wi * (xi - xm) * (yi - ym);
        syy += wi * (yi - ym) * (yi - ym);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| wi * (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dof = x.len() as f64 - 2.0;
    let slope_se = if dof > 0.0 {
        (ss_res / dof / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        r_squared,
        slope_se,
    }
}

/// Weighted least squares on `(ln N, ln e)` with weights `(e / se)²`
/// (the inverse variance of `ln e`); plain least squares when standard
/// errors are missing or not all positive.
pub fn fit_rate(ns: &[usize], errors: &[f64], std_errors: Option<&[f64]>) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::invalid("N and error lists differ in length"));
    }
    let mut distinct = ns.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid("rate fit needs at least 3 distinct N values"));
    }
    if ns.contains(&0) {
        return Err(Error::invalid("N must be positive"));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid(format!("errors must be positive and finite, got {e}")));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let weights = match std_errors {
        Some(se) if se.len() == errors.len() && se.iter().all(|s| *s > 0.0 && s.is_finite()) => {
            Some(errors.iter().zip(se).map(|(e, s)| (e / s).powi(2)).collect::<Vec<_>>())
        }
        _ => None,
    };
    let weighted = weights.is_some();
    let w = weights.unwrap_or_else(|| vec![1.0; x.len()]);
    let fit = weighted_line(&x, &y, &w);
    let half = t_quantile_975(x.len() as f64 - 2.0) * fit.slope_se;
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        slope_std_error: fit.slope_se,
        slope_ci: (fit.slope - half, fit.slope + half),
        points: x.len(),
        weighted,
    })
}

/// Least-squares trend of a time series with a 95% t-interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub ci: (f64, f64),
    /// Mean of the series over the fitted window.
    pub mean: f64,
    pub points: usize,
}

pub fn trend(times: &[f64], values: &[f64]) -> Result<Trend> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::invalid("trend needs at least 3 paired points"));
    }
    let w = vec![1.0; times.len()];
    let fit = weighted_line(times, values, &w);
    let se = if fit.slope_se.is_finite() { fit.slope_se } else { 0.0 };
    let half = t_quantile_975(times.len() as f64 - 2.0) * se;
    Ok(Trend {
        slope: fit.slope,
        ci: (fit.slope - half, fit.slope + half),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        points: times.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub p: u32,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Trend over the second half of the horizon.
    pub trend: Trend,
}

/// `t ↦ ⟨μ^N(t), λ^p⟩` on the output grid, with a trend test on `[T/2, T]`.
pub fn moment_diagnostics(paths: &PathRecordSet, spec: &ModelSpec, p: u32) -> Result<MomentSeries> {
    if !(1..=4).contains(&p) {
        return Err(Error::invalid(format!("moment order must be in 1..=4, got {p}")));
    }
    let mut values = Vec::with_capacity(paths.grid.len());
    for pos in &paths.grid_positions {
        let mu = EmpiricalMeasure::from_flat(paths.d, pos.clone())?;
        values.push(mu.integrate(|x| (spec.rate)(x, &mu).powi(p as i32)));
    }
    moment_series(p, paths.grid.clone(), values)
}

pub fn moment_series(p: u32, times: Vec<f64>, values: Vec<f64>) -> Result<MomentSeries> {
    let horizon = times.last().copied().unwrap_or(0.0);
    let (tt, vv): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t >= horizon / 2.0)
        .map(|(t, v)| (*t, *v))
        .unzip();
    let trend = trend(&tt, &vv)?;
    Ok(MomentSeries {
        p,
        times,
        values,
        trend,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub threshold: f64,
    pub exceedances: usize,
    pub p_hat: f64,
    pub wilson: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTailTable {
    pub n: usize,
    pub horizon: f64,
    pub replicas: usize,
    /// `C_N(T) / N` per replica.
    pub per_particle_counts: Vec<f64>,
    pub rows: Vec<TailRow>,
}

/// `P̂(C_N(T)/N ≥ H)` across replicas, where `C_N(T)` counts the accepted
/// main jumps up to `T` in one replica's jump log.
pub fn jump_count_stats(
    jump_logs: &[Vec<JumpLogEntry>],
    n: usize,
    horizon: f64,
    thresholds: &[f64],
) -> Result<JumpTailTable> {
    if n == 0 {
        return Err(Error::invalid("N must be positive"));
    }
    if let Some(h) = thresholds.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::invalid(format!("thresholds must be positive, got {h}")));
    }
    let counts: Vec<f64> = jump_logs
        .iter()
        .map(|log| log.iter().filter(|e| e.time <= horizon).count() as f64 / n as f64)
        .collect();
    let r = counts.len();
    let rows = thresholds
        .iter()
        .map(|&h| {
            let k = counts.iter().filter(|&&c| c >= h).count();
            TailRow {
                threshold: h,
                exceedances: k,
                p_hat: if r == 0 { 0.0 } else { k as f64 / r as f64 },
                wilson: wilson_interval(k, r, 1.96),
            }
        })
        .collect();
    Ok(JumpTailTable {
        n,
        horizon,
        replicas: r,
        per_particle_counts: counts,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synthetic_rates() {
        let ns = [32usize, 64, 128, 256, 512];
        let e: Vec<f64> = ns.iter().map(|&n| 3.0 / (n as f64).sqrt()).collect();
        let f = fit_rate(&ns, &e, None).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c = fit_rate(&ns, &[0.7; 5], None).unwrap();
        assert!(c.slope.abs() < 1e-12);
        let e: Vec<f64> = ns.iter().map(|&n| 2.0 / n as f64).collect();
        assert!((fit_rate(&ns, &e, None).unwrap().slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_rate(&[1, 2, 3], &[1.0, 0.0, 1.0], None).is_err());
        assert!(fit_rate(&[1, 1, 2], &[1.0, 1.0, 1.0], None).is_err());
    }

    #[test]
    fn standard_errors_weight_the_fit() {
        let ns = [10usize, 20, 40, 80];
        let e = [1.0, 0.7, 0.5, 0.1];
        let tight = [1e-3, 1e-3, 1e-3, 1.0];
        let f = fit_rate(&ns, &e, Some(&tight)).unwrap();
        assert!(f.weighted);
        let g = fit_rate(&ns, &e[..3], None);
        assert!(g.is_err());
        // the noisy last point barely moves the slope away from the first three
        let three = fit_rate(&ns[..3], &e[..3], None).unwrap();
        assert!((f.slope - three.slope).abs() < 0.05);
    }

    #[test]
    fn wilson_brackets_the_estimate() {
        let (lo, hi) = wilson_interval(3, 10, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 10, 1.96).0, 0.0);
        // known value: 0 of 10 gives an upper bound of about 0.2775
        assert!((wilson_interval(0, 10, 1.96).1 - 0.2775).abs() < 1e-3);
    }

    #[test]
    fn tail_table_edge_cases() {
        let logs = vec![Vec::new(); 5];
        let t = jump_count_stats(&logs, 10, 1.0, &[0.5, f64::INFINITY]).unwrap();
        assert!(t.rows.iter().all(|r| r.p_hat == 0.0));
        assert!(jump_count_stats(&logs, 10, 1.0, &[0.0]).is_err());
        let e = JumpLogEntry {
            time: 0.5,
            jumper: 0,
            amplitude: 1.0,
        };
        let logs = vec![vec![e; 10], vec![e; 2]];
        let t = jump_count_stats(&logs, 2, 1.0, &[2.0, f64::INFINITY]).unwrap();
        assert_eq!(t.rows[0].exceedances, 1);
        assert_eq!(t.rows[1].exceedances, 0);
    }

    #[test]
    fn trend_of_a_line() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|x| 2.0 + 0.5 * x).collect();
        let tr = trend(&t, &v).unwrap();
        assert!((tr.slope - 0.5).abs() < 1e-12);
        assert!((tr.ci.1 - tr.ci.0).abs() < 1e-9);
    }

    #[test]
    fn moment_order_is_checked() {
        let spec = ModelSpec::new("m", 1, 1).with_rate(|_, _| 2.0);
        let mut rec = PathRecordSet::new(1, 1, crate::particle::RecordMode::GridOnly);
        for k in 0..5 {
            rec.push_grid(k as f64, &[0.0]);
        }
        let m = moment_diagnostics(&rec, &spec, 3).unwrap();
        assert!(m.values.iter().all(|v| *v == 8.0));
        assert!(moment_diagnostics(&rec, &spec, 5).is_err());
        assert!(moment_diagnostics(&rec, &spec, 0).is_err());
    }

    proptest! {
        #[test]
        fn fit_is_scale_equivariant(
            e in proptest::collection::vec(0.01f64..10.0, 4),
            se in proptest::collection::vec(0.001f64..1.0, 4),
            c in 0.01f64..100.0,
        ) {
            let ns = [16usize, 32, 64, 128];
            for weighted in [false, true] {
                let se1 = if weighted { Some(se.as_slice()) } else { None };
                let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
                let scaled_se: Vec<f64> = se.iter().map(|v| v * c).collect();
                let se2 = if weighted { Some(scaled_se.as_slice()) } else { None };
                let a = fit_rate(&ns, &e, se1).unwrap();
                let b = fit_rate(&ns, &scaled, se2).unwrap();
                prop_assert!((a.slope - b.slope).abs() < 1e-12 * (1.0 + a.slope.abs()) + 1e-12);
                prop_assert!((b.intercept - a.intercept - c.ln()).abs() < 1e-9);
            }
        }
    }
}
