//! Experiment orchestration: sweeps over N and replicas, diagnostics, and
//! the on-disk layout of a run directory.

mod config;

pub use config::{DiagnosticsSection, LimitSection, ModelSection, RunSection, SimConfig, SweepSection, SCHEMA_VERSION};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::limit::{coupled_chaos_run, solve_limit, CoupledDistanceSample, FlowApproximation, LimitOptions};
use crate::measure::EmpiricalMeasure;
use crate::metrics::{
    jump_count_stats, moment_diagnostics, moment_series, summarize, w1_subsampled, write_distances_csv, CellFailure,
    ChaosReport, Diagnostics, JumpMean, MomentRow, PicardSummary, SubsampledW1, TailRow, ASSIGNMENT_CAP,
};
use crate::model::ModelSpec;
use crate::par::Parallelism;
use crate::particle::{simulate, DriverBundle, PathRecordSet, RecordMode, SystemKind};
use crate::validate::{validate_model, AssumptionReport, Verdict};
use crate::zoo;

/// Replica tag of cell `(N, r)` of a sweep. Distinct N use independent
/// streams; `simulate` uses the same tags so its paths are those of the sweep.
pub fn cell_replica(n: usize, r: usize) -> u64 {
    ((n as u64) << 32) | r as u64
}

fn diag_replica(n: usize, r: usize) -> u64 {
    (1 << 63) | cell_replica(n, r)
}

pub fn build_model(cfg: &SimConfig) -> Result<ModelSpec> {
    zoo::build(&cfg.model.id, &cfg.model.params).map_err(|e| e.context(format!("model {}", cfg.model.id)))
}

/// Probes the model; unless `force` is set anything but a pass is an error.
pub fn gate(spec: &ModelSpec, cfg: &SimConfig, force: bool) -> Result<AssumptionReport> {
    let rep = validate_model(spec, &cfg.probe);
    if rep.overall != Verdict::Pass {
        if !force {
            return Err(Error::Assumptions {
                indeterminate: rep.overall == Verdict::Indeterminate,
                report: rep.to_string(),
            });
        }
        eprintln!(
            "warning: proceeding with --force although assumption probes gave {}",
            rep.overall
        );
    }
    Ok(rep)
}

pub fn run_validate(
    model_id: &str,
    params: &toml::Table,
    probe: &crate::validate::ProbeConfig,
) -> Result<AssumptionReport> {
    let spec = zoo::build(model_id, params)?;
    Ok(validate_model(&spec, probe))
}

fn manifest(cfg: &SimConfig, validation: &AssumptionReport, force: bool) -> serde_json::Value {
    serde_json::json!({
        "format": "mfchaos-report v1",
        "crate_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "replica_tag": "(N << 32) | replica",
        "forced": force,
        "validation": validation.overall,
        "config": cfg,
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn prepare_out(cfg: &SimConfig) -> Result<Option<PathBuf>> {
    let Some(dir) = &cfg.out else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("config.echo"))?;
    writeln!(f, "# mfchaos-config v1")?;
    f.write_all(cfg.to_toml_string()?.as_bytes())?;
    Ok(Some(dir.clone()))
}

fn write_file(path: &Path, body: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Solves (or loads) the limit flow for the config's grid.
pub fn limit_flow(
    spec: &ModelSpec,
    cfg: &SimConfig,
    par: Parallelism,
) -> Result<(Arc<FlowApproximation>, Option<PicardSummary>)> {
    let settings = cfg.settings()?;
    if let Some(path) = &cfg.limit.flow_file {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(e).context(format!("flow file {}", path.display())))?;
        return Ok((Arc::new(FlowApproximation::read_from(f, spec)?), None));
    }
    let opts = LimitOptions {
        ensemble_size: cfg.ensemble_size(),
        tol: cfg.limit.tol,
        max_iter: cfg.limit.max_iter,
        seed: cfg.seed,
    };
    let sol = solve_limit(spec, &settings, &opts, par).map_err(|e| e.context("solving the limit"))?;
    let summary = PicardSummary::from_solution(&sol);
    Ok((sol.flow, Some(summary)))
}

/// Solves the limit once, runs every `(N, replica)` cell, aggregates and
/// fits. With `cfg.out` set, the run directory is written even when some
/// cells fail; the sweep then returns an error naming the first failure.
pub fn run_chaos_sweep(cfg: &SimConfig, force: bool) -> Result<ChaosReport> {
    let spec = build_model(cfg)?;
    let settings = cfg.settings()?;
    let par = Parallelism::from_workers(cfg.workers);
    let validation = gate(&spec, cfg, force)?;
    let out = prepare_out(cfg)?;
    let (flow, picard) = limit_flow(&spec, cfg, par)?;
    if let Some(dir) = &out {
        write_file(&dir.join("flow.bin"), |w| flow.write_to(w))?;
    }

    let cells: Vec<(usize, usize)> = cfg
        .sweep
        .n
        .iter()
        .flat_map(|&n| (0..cfg.sweep.replicas).map(move |r| (n, r)))
        .collect();
    let results = par.map(cells.clone(), |(n, r)| {
        let drivers = DriverBundle::new(cfg.seed, cell_replica(n, r));
        coupled_chaos_run(&spec, n, &settings, &flow, &drivers)
    });
    let mut samples: Vec<CoupledDistanceSample> = Vec::with_capacity(cells.len());
    let mut failures = Vec::new();
    let mut first_error = None;
    for ((n, r), res) in cells.into_iter().zip(results) {
        match res {
            Ok(s) => samples.push(s),
            Err(e) => {
                failures.push(CellFailure {
                    n,
                    replica: r as u64,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }

    let mut report = ChaosReport::from_samples(&samples, manifest(cfg, &validation, force));
    report.picard = picard;
    report.failures = failures;
    if cfg.diagnostics.enabled && first_error.is_none() {
        report.diagnostics = diagnostics_for(&spec, cfg, par)?;
    }
    report.generated_at_unix = unix_now();

    if let Some(dir) = &out {
        write_report(dir, &report, &samples)?;
    }
    if let Some(e) = first_error {
        let where_ = out.map_or(String::new(), |d| format!("; partial results in {}", d.display()));
        return Err(e.context(format!("{} sweep cell(s) failed{where_}", report.failures.len())));
    }
    Ok(report)
}

/// Writes `report.json`, `distances.csv`, `summary.csv`, `diagnostics.csv`
/// and `plotdata/*.dat` into `dir`.
pub fn write_report(dir: &Path, report: &ChaosReport, samples: &[CoupledDistanceSample]) -> Result<()> {
    write_file(&dir.join("report.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, report)?;
        writeln!(w)?;
        Ok(())
    })?;
    write_file(&dir.join("distances.csv"), |w| write_distances_csv(w, samples))?;
    write_file(&dir.join("summary.csv"), |w| report.write_summary_csv(w))?;
    write_file(&dir.join("diagnostics.csv"), |w| report.diagnostics.write_csv(w))?;
    report.write_plot_data(&dir.join("plotdata"))
}

/// Moment series and jump-count statistics of the N-particle system over
/// `cfg.diagnostics` replicas.
pub fn run_diagnostics(cfg: &SimConfig, force: bool) -> Result<Diagnostics> {
    let spec = build_model(cfg)?;
    gate(&spec, cfg, force)?;
    let out = prepare_out(cfg)?;
    let diag = diagnostics_for(&spec, cfg, Parallelism::from_workers(cfg.workers))?;
    if let Some(dir) = out {
        write_file(&dir.join("diagnostics.csv"), |w| diag.write_csv(w))?;
        write_file(&dir.join("diagnostics.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &diag)?;
            Ok(())
        })?;
    }
    Ok(diag)
}

pub fn diagnostics_for(spec: &ModelSpec, cfg: &SimConfig, par: Parallelism) -> Result<Diagnostics> {
    let d = &cfg.diagnostics;
    let ns = d.n.clone().unwrap_or_else(|| cfg.sweep.n.clone());
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Config("diagnostics.n entries must be positive".into()));
    }
    if d.replicas == 0 {
        return Err(Error::Config("diagnostics.replicas must be at least 1".into()));
    }
    let mut settings = cfg.settings()?;
    settings.record = RecordMode::GridOnly;
    let mut out = Diagnostics::default();
    if ns.contains(&1) {
        out.warnings
            .push("N = 1: the empirical measure is a single atom, mean-field quantities are degenerate".into());
    }

    let cells: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..d.replicas).map(move |r| (n, r))).collect();
    let runs = par.map(cells.clone(), |(n, r)| -> Result<PathRecordSet> {
        let drivers = DriverBundle::new(cfg.seed, diag_replica(n, r));
        simulate(SystemKind::X, spec, n, &settings, &drivers)
    });
    let mut by_n: Vec<(usize, Vec<PathRecordSet>)> = ns.iter().map(|&n| (n, Vec::new())).collect();
    for ((n, r), res) in cells.into_iter().zip(runs) {
        let rec = res.map_err(|e| e.context(format!("diagnostics run N = {n}, replica {r}")))?;
        if let Some((_, v)) = by_n.iter_mut().find(|(m, _)| *m == n) {
            v.push(rec);
        }
    }

    for (n, recs) in &by_n {
        for p in 1..=d.max_moment {
            let mut avg: Option<Vec<f64>> = None;
            for rec in recs {
                let s = moment_diagnostics(rec, spec, p)?;
                match &mut avg {
                    None => avg = Some(s.values),
                    Some(a) => a.iter_mut().zip(&s.values).for_each(|(x, y)| *x += y),
                }
            }
            let mut values = avg.unwrap_or_default();
            values.iter_mut().for_each(|v| *v /= recs.len() as f64);
            let series = moment_series(p, recs[0].grid.clone(), values)?;
            let bounded = series.trend.ci.0 <= 0.0;
            out.moments.push(MomentRow {
                n: *n,
                replicas: recs.len(),
                series,
                bounded,
            });
        }
        let counts: Vec<f64> = recs
            .iter()
            .map(|r| r.jump_log.iter().filter(|e| e.time <= settings.horizon).count() as f64 / *n as f64)
            .collect();
        let s = summarize(&counts);
        out.jump_means.push(JumpMean {
            n: *n,
            mean: s.mean,
            std_error: s.std_error,
            replicas: s.count,
        });
    }

    let thresholds = match &d.thresholds {
        Some(t) => t.clone(),
        None => {
            let m = out.jump_means.last().map_or(0.0, |j| j.mean);
            if m > 0.0 {
                vec![1.5 * m, 2.0 * m]
            } else {
                vec![1.0]
            }
        }
    };
    for (n, recs) in &by_n {
        let logs: Vec<_> = recs.iter().map(|r| r.jump_log.clone()).collect();
        out.jump_tails
            .push(jump_count_stats(&logs, *n, settings.horizon, &thresholds)?);
    }
    if out.jump_tails.len() >= 2 {
        let ok = (0..thresholds.len()).all(|k| {
            out.jump_tails
                .windows(2)
                .all(|w| tail_not_larger(&w[0].rows[k], &w[1].rows[k]))
        });
        out.tails_non_increasing = Some(ok);
    }
    Ok(out)
}

/// The larger-N tail estimate is no larger, or its Wilson interval overlaps
/// the smaller-N one.
pub fn tail_not_larger(small_n: &TailRow, large_n: &TailRow) -> bool {
    large_n.p_hat <= small_n.p_hat || large_n.wilson.0 <= small_n.wilson.1
}

/// Simulates the N-particle system for every N of the sweep (replica 0)
/// and writes `paths_N<n>.csv` and `jumps_N<n>.csv`.
pub fn run_simulate(cfg: &SimConfig, force: bool) -> Result<Vec<PathRecordSet>> {
    let spec = build_model(cfg)?;
    gate(&spec, cfg, force)?;
    let settings = cfg.settings()?;
    let out = prepare_out(cfg)?;
    let par = Parallelism::from_workers(cfg.workers);
    let runs = par.map(cfg.sweep.n.clone(), |n| {
        simulate(
            SystemKind::X,
            &spec,
            n,
            &settings,
            &DriverBundle::new(cfg.seed, cell_replica(n, 0)),
        )
        .map_err(|e| e.context(format!("simulate N = {n}")))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out {
        for rec in &runs {
            write_file(&dir.join(format!("paths_N{}.csv", rec.n)), |w| rec.write_paths_csv(w))?;
            write_file(&dir.join(format!("jumps_N{}.csv", rec.n)), |w| rec.write_jumps_csv(w))?;
        }
    }
    Ok(runs)
}

/// Reads a sample file: a `# mfchaos-samples v1` header line, then one
/// point per line with comma- or whitespace-separated coordinates. Blank
/// lines and further `#` lines are skipped.
pub fn read_samples(path: &Path) -> Result<EmpiricalMeasure> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("{}", path.display())))?;
    parse_samples(&text).map_err(|e| e.context(format!("{}", path.display())))
}

pub fn parse_samples(text: &str) -> Result<EmpiricalMeasure> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "# mfchaos-samples v1" => {}
        _ => return Err(Error::invalid("missing header line `# mfchaos-samples v1`")),
    }
    let mut flat = Vec::new();
    let mut d = None;
    for (k, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("line {}: {e}", k + 2)))?;
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::invalid(format!(
                    "line {}: {} coordinates, expected {d}",
                    k + 2,
                    row.len()
                )))
            }
            _ => {}
        }
        flat.extend(row);
    }
    EmpiricalMeasure::from_flat(d.unwrap_or(0).max(1), flat)
}

/// W1 between two sample files; exact up to the assignment cap, otherwise
/// averaged over subsamples.
pub fn wasserstein_files(a: &Path, b: &Path, seed: u64) -> Result<SubsampledW1> {
    let a = read_samples(a)?;
    let b = read_samples(b)?;
    w1_subsampled(&a, &b, ASSIGNMENT_CAP, seed, 8)
}
