//! Aggregated results of a chaos sweep and their on-disk formats.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{fit_rate, summarize, JumpTailTable, MomentSeries, RateFit};
use crate::error::Result;
use crate::limit::{CoupledDistanceSample, LimitSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub n: usize,
    pub xy: DistanceSummary,
    pub ylim: DistanceSummary,
    pub xlim: DistanceSummary,
    /// Mean number of accepted main jumps per particle in the N-particle system.
    pub jumps_per_particle: f64,
}

/// Log-log fits of distance against N. A fit is absent when fewer than
/// three N values have two or more replicas, or when some mean is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateFits {
    pub xy: Option<RateFit>,
    pub ylim: Option<RateFit>,
    pub xlim: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardSummary {
    pub ensemble_size: usize,
    pub deltas: Vec<f64>,
    pub noise_floors: Vec<f64>,
    pub converged: bool,
    pub truncation: Option<f64>,
    pub truncation_doublings: usize,
}

impl PicardSummary {
    pub fn from_solution(sol: &LimitSolution) -> Self {
        Self {
            ensemble_size: sol.flow.ensemble_size(),
            deltas: sol.deltas.clone(),
            noise_floors: sol.noise_floors.clone(),
            converged: sol.converged,
            truncation: sol.truncation,
            truncation_doublings: sol.truncation_doublings,
        }
    }
}

/// Moment series `⟨μ^N(t), λ^p⟩`, averaged over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub replicas: usize,
    pub series: MomentSeries,
    /// Trend CI on the second half of the horizon contains zero or lies
    /// below it.
    pub bounded: bool,
}

/// Accepted main jumps per particle up to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMean {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub moments: Vec<MomentRow>,
    pub jump_means: Vec<JumpMean>,
    pub jump_tails: Vec<JumpTailTable>,
    /// Every tail probability is non-increasing in N.
    pub tails_non_increasing: Option<bool>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// Long format: `section,n,key,t,value,lo,hi`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# mfchaos-diagnostics v1")?;
        writeln!(w, "section,n,key,t,value,lo,hi")?;
        for m in &self.moments {
            let s = &m.series;
            for (t, v) in s.times.iter().zip(&s.values) {
                writeln!(w, "moment,{},{},{},{},,", m.n, s.p, t, v)?;
            }
            writeln!(
                w,
                "moment_trend,{},{},,{},{},{}",
                m.n, s.p, s.trend.slope, s.trend.ci.0, s.trend.ci.1
            )?;
        }
        for j in &self.jump_means {
            let half = 1.96 * j.std_error;
            writeln!(w, "jump_mean,{},,,{},{},{}", j.n, j.mean, j.mean - half, j.mean + half)?;
        }
        for t in &self.jump_tails {
            for r in &t.rows {
                writeln!(
                    w,
                    "jump_tail,{},{},,{},{},{}",
                    t.n, r.threshold, r.p_hat, r.wilson.0, r.wilson.1
                )?;
            }
        }
        Ok(())
    }
}

/// A cell of the sweep that errored; its samples are missing from `rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub replica: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    pub fits: RateFits,
    pub diagnostics: Diagnostics,
    pub picard: Option<PicardSummary>,
    /// Everything needed to rerun the sweep: config, seed, crate version.
    pub manifest: serde_json::Value,
    pub failures: Vec<CellFailure>,
    pub generated_at_unix: u64,
}

fn summary(values: &[f64]) -> DistanceSummary {
    let s = summarize(values);
    DistanceSummary {
        mean: s.mean,
        std_error: s.std_error,
        replicas: s.count,
    }
}

fn fit_column(rows: &[ChaosRow], pick: impl Fn(&ChaosRow) -> DistanceSummary) -> Option<RateFit> {
    let usable: Vec<&ChaosRow> = rows.iter().filter(|r| pick(r).replicas >= 2).collect();
    let ns: Vec<usize> = usable.iter().map(|r| r.n).collect();
    let means: Vec<f64> = usable.iter().map(|r| pick(r).mean).collect();
    let ses: Vec<f64> = usable.iter().map(|r| pick(r).std_error).collect();
    fit_rate(&ns, &means, Some(&ses)).ok()
}

impl ChaosReport {
    /// Groups samples by N (ascending) and fits the three decay rates.
    pub fn from_samples(samples: &[CoupledDistanceSample], manifest: serde_json::Value) -> Self {
        let mut by_n: BTreeMap<usize, Vec<&CoupledDistanceSample>> = BTreeMap::new();
        for s in samples {
            by_n.entry(s.n).or_default().push(s);
        }
        let rows: Vec<ChaosRow> = by_n
            .into_iter()
            .map(|(n, group)| {
                let col = |f: fn(&CoupledDistanceSample) -> f64| group.iter().map(|s| f(s)).collect::<Vec<_>>();
                let jumps = group.iter().map(|s| s.jumps_x as f64 / n as f64).sum::<f64>() / group.len() as f64;
                ChaosRow {
                    n,
                    xy: summary(&col(CoupledDistanceSample::mean_xy)),
                    ylim: summary(&col(CoupledDistanceSample::mean_ylim)),
                    xlim: summary(&col(CoupledDistanceSample::mean_xlim)),
                    jumps_per_particle: jumps,
                }
            })
            .collect();
        let fits = RateFits {
            xy: fit_column(&rows, |r| r.xy),
            ylim: fit_column(&rows, |r| r.ylim),
            xlim: fit_column(&rows, |r| r.xlim),
        };
        Self {
            rows,
            fits,
            diagnostics: Diagnostics::default(),
            picard: None,
            manifest,
            failures: Vec::new(),
            generated_at_unix: 0,
        }
    }

    pub fn row(&self, n: usize) -> Option<&ChaosRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// One row per N: `n,replicas,<kind>_mean,<kind>_se` for xy, ylim, xlim.
    pub fn write_summary_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# mfchaos-summary v1")?;
        writeln!(
            w,
            "n,replicas,xy_mean,xy_se,ylim_mean,ylim_se,xlim_mean,xlim_se,jumps_per_particle"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.xlim.replicas,
                r.xy.mean,
                r.xy.std_error,
                r.ylim.mean,
                r.ylim.std_error,
                r.xlim.mean,
                r.xlim.std_error,
                r.jumps_per_particle
            )?;
        }
        Ok(())
    }

    /// Writes `xy.dat`, `ylim.dat` and `xlim.dat` into `dir`: columns
    /// `log2(N) ln(mean) yerr`, with `yerr = se / mean`. Rows with a zero
    /// mean are left out.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        type Pick = fn(&ChaosRow) -> DistanceSummary;
        let kinds: [(&str, Pick); 3] = [("xy", |r| r.xy), ("ylim", |r| r.ylim), ("xlim", |r| r.xlim)];
        for (name, pick) in kinds {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.dat")))?);
            writeln!(f, "# mfchaos-plotdata v1")?;
            writeln!(f, "# log2_n ln_mean yerr")?;
            for r in &self.rows {
                let s = pick(r);
                if s.mean > 0.0 {
                    writeln!(f, "{} {} {}", (r.n as f64).log2(), s.mean.ln(), s.std_error / s.mean)?;
                }
            }
            f.flush()?;
        }
        Ok(())
    }
}

/// Per-cell distances in cell order: `n,replica,d_xy,d_ylim,d_xlim,jumps_x`.
/// Floats use the shortest representation that round-trips, so equal
/// samples always give equal bytes.
pub fn write_distances_csv(mut w: impl Write, samples: &[CoupledDistanceSample]) -> Result<()> {
    writeln!(w, "# mfchaos-distances v1")?;
    writeln!(w, "n,replica,d_xy,d_ylim,d_xlim,jumps_x")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.n,
            s.replica,
            s.mean_xy(),
            s.mean_ylim(),
            s.mean_xlim(),
            s.jumps_x
        )?;
    }
    Ok(())
}
