//! Distances, rate fits and diagnostics.

mod report;
mod stats;
mod wasserstein;

pub use report::{
    write_distances_csv, CellFailure, ChaosReport, ChaosRow, Diagnostics, DistanceSummary, JumpMean, MomentRow,
    PicardSummary, RateFits,
};
pub use stats::{
    fit_rate, jump_count_stats, moment_diagnostics, moment_series, summarize, t_quantile_975, trend, wilson_interval,
    JumpTailTable, MomentSeries, RateFit, Summary, TailRow, Trend,
};
pub use wasserstein::{
    solve_assignment, subsample_indices, w1_1d, w1_assignment, w1_assignment_capped, w1_subsampled, SubsampledW1,
    ASSIGNMENT_CAP,
};

use crate::error::{Error, Result};
use crate::particle::{sup_between, Knot};

/// `sup_t ‖p(t) − q(t)‖` over both knot sets, using left limits and càdlàg
/// values at every knot.
pub fn path_sup_distance(p: &[Knot<'_>], q: &[Knot<'_>]) -> Result<f64> {
    let (Some(pl), Some(ql)) = (p.last(), q.last()) else {
        return Err(Error::invalid("empty path"));
    };
    if (pl.t - ql.t).abs() > 1e-12 * pl.t.abs().max(1.0) || (p[0].t - q[0].t).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "paths cover different horizons ([{}, {}] vs [{}, {}])",
            p[0].t, pl.t, q[0].t, ql.t
        )));
    }
    if pl.left.len() != ql.left.len() {
        return Err(Error::invalid("paths live in different dimensions"));
    }
    Ok(sup_between(p.iter().copied(), q.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k<'a>(t: f64, l: &'a [f64], r: &'a [f64]) -> Knot<'a> {
        Knot { t, left: l, right: r }
    }

    #[test]
    fn sup_distance_examples() {
        let z = [0.0];
        let one = [1.0];
        let p = [k(0.0, &z, &z), k(2.0, &z, &z)];
        let q = [k(0.0, &z, &z), k(1.0, &z, &one), k(2.0, &one, &one)];
        assert_eq!(path_sup_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(path_sup_distance(&p, &q).unwrap(), 1.0);
        let a = [0.5, 1.0];
        let b = [3.5, -3.0];
        let shifted_a = [k(0.0, &a, &a), k(1.0, &a, &a)];
        let shifted_b = [k(0.0, &b, &b), k(1.0, &b, &b)];
        assert!((path_sup_distance(&shifted_a, &shifted_b).unwrap() - 5.0).abs() < 1e-12);
        let short = [k(0.0, &z, &z), k(1.0, &z, &z)];
        assert!(path_sup_distance(&p, &short).is_err());
    }
}
