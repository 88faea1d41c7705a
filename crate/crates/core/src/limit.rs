//! The nonlinear limit process: frozen-flow Picard iteration over an
//! ensemble of copies, and index-coupled copies for chaos experiments.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::metrics::{w1_subsampled, ASSIGNMENT_CAP};
use crate::model::{ClassTag, CollateralField, ModelSpec, RateArg};
use crate::par::Parallelism;
use crate::particle::{DriverBundle, Dynamics, FlowView, RunSettings, SupTracker, System, SystemState};

/// Replica tag of the ensemble streams, so they never collide with the
/// replicas of an N-particle experiment.
pub const ENSEMBLE_REPLICA: u64 = u64::MAX;
/// Ensemble copies are simulated in fixed-size blocks so results do not
/// depend on the worker count.
const BLOCK: usize = 256;
const SUBSAMPLE_REPEATS: usize = 4;

/// Time marginals of the limit law, one ensemble of `M` points per grid time.
#[derive(Clone)]
pub struct FlowApproximation {
    pub grid: Vec<f64>,
    pub d: usize,
    snapshots: Vec<EmpiricalMeasure>,
    /// `E[λ(X(t))]` at each grid time, without truncation.
    pub mean_rate: Vec<f64>,
    fields: Vec<CollateralField>,
    /// Cap `C` applied to the average rate in the collateral drift.
    pub truncation: Option<f64>,
}

impl std::fmt::Debug for FlowApproximation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowApproximation")
            .field("grid_points", &self.grid.len())
            .field("d", &self.d)
            .field("ensemble_size", &self.ensemble_size())
            .field("truncation", &self.truncation)
            .finish_non_exhaustive()
    }
}

impl FlowView for FlowApproximation {
    fn measure(&self, k: usize) -> &EmpiricalMeasure {
        &self.snapshots[k.min(self.snapshots.len() - 1)]
    }

    fn collateral(&self, k: usize) -> &CollateralField {
        &self.fields[k.min(self.fields.len() - 1)]
    }
}

#[derive(Serialize, Deserialize)]
struct FlowHeader {
    d: usize,
    ensemble_size: usize,
    grid: Vec<f64>,
    truncation: Option<f64>,
}

const FLOW_MAGIC: &str = "# mfchaos-flow v1";

impl FlowApproximation {
    /// Builds a flow from per-grid-time flat point buffers.
    pub fn from_snapshots(
        spec: &ModelSpec,
        grid: Vec<f64>,
        snapshots: Vec<Vec<f64>>,
        truncation: Option<f64>,
    ) -> Result<Self> {
        if grid.is_empty() || grid.len() != snapshots.len() {
            return Err(Error::invalid("flow needs one snapshot per grid time"));
        }
        let size = snapshots[0].len();
        if snapshots.iter().any(|s| s.len() != size) {
            return Err(Error::invalid("ensemble size must be constant over time"));
        }
        let snapshots = snapshots
            .into_iter()
            .map(|s| EmpiricalMeasure::from_flat(spec.d, s))
            .collect::<Result<Vec<_>>>()?;
        let mean_rate = snapshots
            .iter()
            .map(|mu| mu.integrate(|x| (spec.rate)(x, mu)))
            .collect();
        let mut flow = Self {
            grid,
            d: spec.d,
            snapshots,
            mean_rate,
            fields: Vec::new(),
            truncation: None,
        };
        flow.set_truncation(spec, truncation);
        Ok(flow)
    }

    /// The constant flow `t ↦ law of X(0)`, sampled from the ensemble streams.
    pub fn initial(spec: &ModelSpec, settings: &RunSettings, m: usize, seed: u64) -> Result<Self> {
        let drivers = DriverBundle::new(seed, ENSEMBLE_REPLICA);
        let x0 = SystemState::new(spec, settings, &drivers, m)?.positions;
        let grid: Vec<f64> = (0..=settings.n_steps()).map(|k| settings.grid_time(k)).collect();
        let snaps = vec![x0; grid.len()];
        Self::from_snapshots(spec, grid, snaps, None)
    }

    /// Recomputes the collateral drift with cap `C`.
    pub fn set_truncation(&mut self, spec: &ModelSpec, truncation: Option<f64>) {
        self.truncation = truncation;
        self.fields = self
            .snapshots
            .iter()
            .map(|mu| spec.collateral_field(mu, RateArg::Jumper, truncation))
            .collect();
    }

    pub fn ensemble_size(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.len())
    }

    pub fn snapshot(&self, k: usize) -> &EmpiricalMeasure {
        &self.snapshots[k]
    }

    pub fn snapshots(&self) -> &[EmpiricalMeasure] {
        &self.snapshots
    }

    /// Fraction of grid times at which `E[λ] > C`.
    pub fn saturation(&self, c: f64) -> f64 {
        let hits = self.mean_rate.iter().filter(|&&r| r > c).count();
        hits as f64 / self.mean_rate.len() as f64
    }

    /// Header line, one JSON metadata line, then the snapshots as
    /// little-endian f64 in grid order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{FLOW_MAGIC}")?;
        let header = FlowHeader {
            d: self.d,
            ensemble_size: self.ensemble_size(),
            grid: self.grid.clone(),
            truncation: self.truncation,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for s in &self.snapshots {
            for v in s.as_flat() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read, spec: &ModelSpec) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != FLOW_MAGIC {
            return Err(Error::invalid("not a flow file (bad header line)"));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: FlowHeader = serde_json::from_str(line.trim_end())?;
        if header.d != spec.d {
            return Err(Error::invalid(format!(
                "flow has dimension {}, model has {}",
                header.d, spec.d
            )));
        }
        let per = header.ensemble_size * header.d;
        let mut snaps = Vec::with_capacity(header.grid.len());
        let mut bytes = [0u8; 8];
        for _ in 0..header.grid.len() {
            let mut s = Vec::with_capacity(per);
            for _ in 0..per {
                r.read_exact(&mut bytes)?;
                s.push(f64::from_le_bytes(bytes));
            }
            snaps.push(s);
        }
        Self::from_snapshots(spec, header.grid, snaps, header.truncation)
    }

    fn check_grid(&self, settings: &RunSettings) -> Result<()> {
        let n = settings.n_steps();
        let ok = self.grid.len() == n + 1
            && self
                .grid
                .iter()
                .enumerate()
                .all(|(k, &t)| (t - settings.grid_time(k)).abs() <= 1e-12 * t.abs().max(1.0));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("flow grid does not match the run grid"))
        }
    }
}

/// Simulates `m` copies driven by `flow` and returns their positions at
/// every grid time.
pub fn simulate_ensemble(
    spec: &ModelSpec,
    settings: &RunSettings,
    flow: &Arc<FlowApproximation>,
    m: usize,
    seed: u64,
    par: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    flow.check_grid(settings)?;
    let blocks: Vec<(usize, usize)> = (0..m).step_by(BLOCK).map(|s| (s, BLOCK.min(m - s))).collect();
    let view: Arc<dyn FlowView> = flow.clone();
    let results = par.map(blocks, |(start, len)| -> Result<Vec<Vec<f64>>> {
        let drivers = DriverBundle::new(seed, ENSEMBLE_REPLICA).with_offset(start as u64);
        let mut sys = System::new(Dynamics::Limit(view.clone()), spec, settings, &drivers, len)?;
        let mut snaps = vec![sys.state().positions.clone()];
        while !sys.finished() {
            sys.step()?;
            snaps.push(sys.state().positions.clone());
        }
        Ok(snaps)
    });
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(m * spec.d); settings.n_steps() + 1];
    for block in results {
        for (k, s) in block?.into_iter().enumerate() {
            out[k].extend(s);
        }
    }
    Ok(out)
}

/// `sup_t W1(a(t), b(t))` over the common grid.
pub fn flow_distance(a: &FlowApproximation, b: &FlowApproximation, seed: u64) -> Result<f64> {
    if a.grid.len() != b.grid.len() {
        return Err(Error::invalid("flows live on different grids"));
    }
    let mut sup = 0.0f64;
    for (k, (x, y)) in a.snapshots.iter().zip(&b.snapshots).enumerate() {
        let w = w1_subsampled(x, y, ASSIGNMENT_CAP, seed ^ k as u64, SUBSAMPLE_REPEATS)?;
        sup = sup.max(w.mean);
    }
    Ok(sup)
}

/// Monte Carlo noise level of a flow: half of `sup_t W1` between its
/// even- and odd-indexed halves.
pub fn noise_floor(flow: &FlowApproximation, seed: u64) -> Result<f64> {
    let m = flow.ensemble_size();
    if m < 2 {
        return Ok(f64::INFINITY);
    }
    let d = flow.d;
    let half = m / 2;
    let mut sup = 0.0f64;
    for (k, s) in flow.snapshots.iter().enumerate() {
        let mut even = Vec::with_capacity(half * d);
        let mut odd = Vec::with_capacity(half * d);
        for j in 0..half {
            even.extend_from_slice(s.point(2 * j));
            odd.extend_from_slice(s.point(2 * j + 1));
        }
        let a = EmpiricalMeasure::from_flat_unchecked(d, even);
        let b = EmpiricalMeasure::from_flat_unchecked(d, odd);
        let w = w1_subsampled(&a, &b, ASSIGNMENT_CAP, seed ^ k as u64, SUBSAMPLE_REPEATS)?;
        sup = sup.max(w.mean);
    }
    Ok(sup / 2.0)
}

/// One Picard step: copies driven by `flow_k` give `flow_{k+1}`; returns it
/// with `sup_t W1(flow_k(t), flow_{k+1}(t))`. Every iteration reuses the
/// same ensemble streams.
pub fn picard_iterate(
    flow_k: &Arc<FlowApproximation>,
    spec: &ModelSpec,
    settings: &RunSettings,
    m: usize,
    seed: u64,
    par: Parallelism,
) -> Result<(FlowApproximation, f64)> {
    let snaps = simulate_ensemble(spec, settings, flow_k, m, seed, par)?;
    let next = FlowApproximation::from_snapshots(spec, flow_k.grid.clone(), snaps, flow_k.truncation)?;
    let delta = flow_distance(flow_k, &next, seed)?;
    if !delta.is_finite() {
        return Err(Error::NumericalBlowup {
            time: f64::NAN,
            particle: 0,
            snapshot: Vec::new(),
        }
        .context("Picard delta is not finite"));
    }
    Ok((next, delta))
}

#[derive(Debug, Clone, Copy)]
pub struct LimitOptions {
    pub ensemble_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LimitSolution {
    pub flow: Arc<FlowApproximation>,
    /// `deltas[k]` is the distance between iterates `k` and `k + 1`.
    pub deltas: Vec<f64>,
    pub noise_floors: Vec<f64>,
    pub converged: bool,
    pub truncation: Option<f64>,
    pub truncation_doublings: usize,
}

impl LimitSolution {
    pub fn final_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(f64::NAN)
    }

    /// Length of the longest run of strictly decreasing consecutive deltas.
    pub fn longest_decrease(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for w in self.deltas.windows(2) {
            if w[1] < w[0] {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }
}

/// Iterates [`picard_iterate`] from the constant initial flow until the
/// delta drops below `tol` or `max_iter` iterations have run. For the
/// superlinear-rate class the average rate in the collateral drift is
/// capped at `C`, initially 4× the largest mean rate of the starting flow
/// and doubled whenever more than 1% of grid times exceed it.
pub fn solve_limit(
    spec: &ModelSpec,
    settings: &RunSettings,
    opts: &LimitOptions,
    par: Parallelism,
) -> Result<LimitSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let mut flow0 = FlowApproximation::initial(spec, settings, opts.ensemble_size, opts.seed)?;
    let mut truncation = None;
    if spec.class == ClassTag::SuperlinearRate {
        let sup = flow0.mean_rate.iter().copied().fold(0.0f64, f64::max);
        if sup > 0.0 {
            truncation = Some(4.0 * sup);
        }
    }
    flow0.set_truncation(spec, truncation);
    let mut current = Arc::new(flow0);
    let mut deltas = Vec::new();
    let mut floors = Vec::new();
    let mut doublings = 0;
    let mut converged = false;
    let mut best: Option<(f64, Arc<FlowApproximation>)> = None;
    for it in 0..opts.max_iter {
        let (mut next, delta) = picard_iterate(&current, spec, settings, opts.ensemble_size, opts.seed, par)
            .map_err(|e| e.context(format!("Picard iteration {}", it + 1)))?;
        if let Some(c) = truncation {
            if next.saturation(c) > 0.01 {
                truncation = Some(2.0 * c);
                doublings += 1;
            }
        }
        next.set_truncation(spec, truncation);
        floors.push(noise_floor(&next, opts.seed)?);
        deltas.push(delta);
        let next = Arc::new(next);
        if best.as_ref().is_none_or(|(d, _)| delta <= *d) {
            best = Some((delta, next.clone()));
        }
        current = next;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    let flow = if converged {
        current
    } else {
        best.map(|(_, f)| f).unwrap_or(current)
    };
    Ok(LimitSolution {
        flow,
        deltas,
        noise_floors: floors,
        converged,
        truncation,
        truncation_doublings: doublings,
    })
}

/// Per-particle sup distances of one replica of the coupled triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledDistanceSample {
    pub n: usize,
    pub replica: u64,
    pub d_xy: Vec<f64>,
    pub d_ylim: Vec<f64>,
    pub d_xlim: Vec<f64>,
    /// Accepted main jumps of the N-particle system up to the horizon.
    pub jumps_x: usize,
}

impl CoupledDistanceSample {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn mean_xy(&self) -> f64 {
        Self::mean(&self.d_xy)
    }

    pub fn mean_ylim(&self) -> f64 {
        Self::mean(&self.d_ylim)
    }

    pub fn mean_xlim(&self) -> f64 {
        Self::mean(&self.d_xlim)
    }
}

/// Runs the N-particle system, the intermediate system and N copies of the
/// limit process on the same per-index drivers, tracking the three
/// pairwise sup distances of every particle along the way.
pub fn coupled_chaos_run(
    spec: &ModelSpec,
    n: usize,
    settings: &RunSettings,
    flow: &Arc<FlowApproximation>,
    drivers: &DriverBundle,
) -> Result<CoupledDistanceSample> {
    flow.check_grid(settings)?;
    let x0 = SystemState::new(spec, settings, drivers, n)?;
    let view: Arc<dyn FlowView> = flow.clone();
    let mut xs = System::from_state(Dynamics::X, spec, settings, x0.clone())?;
    let mut ys = System::from_state(Dynamics::Y(settings.rate_arg), spec, settings, x0.clone())?;
    let mut ls = System::from_state(Dynamics::Limit(view), spec, settings, x0)?;
    let mut xy = SupTracker::new(n);
    let mut ylim = SupTracker::new(n);
    let mut xlim = SupTracker::new(n);
    while !xs.finished() {
        let k = xs.state().interval;
        let ctx = |sys: &'static str| move |e: Error| e.context(format!("{sys} system, N = {n}, grid interval {k}"));
        xs.step().map_err(ctx("X"))?;
        ys.step().map_err(ctx("Y"))?;
        ls.step().map_err(ctx("limit"))?;
        xy.update(xs.trace(), ys.trace());
        ylim.update(ys.trace(), ls.trace());
        xlim.update(xs.trace(), ls.trace());
    }
    Ok(CoupledDistanceSample {
        n,
        replica: drivers.replica,
        d_xy: xy.sup,
        d_ylim: ylim.sup,
        d_xlim: xlim.sup,
        jumps_x: xs.state().jump_log.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CollateralMean, RateBound};
    use crate::particle::InitialLaw;

    fn decay_spec() -> ModelSpec {
        ModelSpec::new("decay", 1, 1).with_drift(|x, _, out| out[0] = -x[0])
    }

    #[test]
    fn deterministic_decay_converges_after_one_iteration() {
        let settings = RunSettings::new(1.0, 0.1, InitialLaw::Uniform { lo: 0.0, hi: 1.0 });
        let opts = LimitOptions {
            ensemble_size: 300,
            tol: 1e-12,
            max_iter: 3,
            seed: 4,
        };
        let sol = solve_limit(&decay_spec(), &settings, &opts, Parallelism::Sequential).unwrap();
        assert!(sol.deltas[0] > 0.0);
        assert_eq!(sol.deltas[1], 0.0);
        assert!(sol.converged);
        let f = &sol.flow;
        let m0 = f.snapshot(0).mean()[0];
        let m1 = f.snapshot(10).mean()[0];
        // explicit Euler with dt = 0.1 over ten steps
        assert!((m1 - m0 * 0.9f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn infinite_tolerance_stops_after_one_iteration() {
        let settings = RunSettings::new(0.5, 0.1, InitialLaw::Point { x: 1.0 });
        let opts = LimitOptions {
            ensemble_size: 10,
            tol: f64::INFINITY,
            max_iter: 5,
            seed: 0,
        };
        let sol = solve_limit(&decay_spec(), &settings, &opts, Parallelism::Sequential).unwrap();
        assert_eq!(sol.deltas.len(), 1);
        assert!(sol.converged);
    }

    #[test]
    fn constant_rate_summary_is_exact() {
        let spec = ModelSpec::new("const-rate", 1, 1)
            .with_rate(|_, _| 1.3)
            .with_rate_bound(RateBound::Global(1.3))
            .with_main_jump(|x, _, h, out| out[0] = h - x[0]);
        let settings = RunSettings::new(1.0, 0.1, InitialLaw::Uniform { lo: 0.0, hi: 1.0 });
        let flow = Arc::new(FlowApproximation::initial(&spec, &settings, 50, 1).unwrap());
        let (next, _) = picard_iterate(&flow, &spec, &settings, 50, 1, Parallelism::Sequential).unwrap();
        assert!(next.mean_rate.iter().all(|&r| (r - 1.3).abs() < 1e-14));
    }

    #[test]
    fn block_split_does_not_depend_on_workers() {
        let spec = ModelSpec::new("ou", 1, 1)
            .with_drift(|x, mu, out| out[0] = mu.mean()[0] - x[0])
            .with_diffusion(|_, _, out| out[0] = 0.3);
        let settings = RunSettings::new(0.5, 0.05, InitialLaw::Normal { mean: 0.0, sd: 1.0 });
        let flow = Arc::new(FlowApproximation::initial(&spec, &settings, 600, 2).unwrap());
        let a = simulate_ensemble(&spec, &settings, &flow, 600, 2, Parallelism::Sequential).unwrap();
        let b = simulate_ensemble(&spec, &settings, &flow, 600, 2, Parallelism::Threads(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flow_round_trips_through_bytes() {
        let spec = decay_spec();
        let settings = RunSettings::new(0.3, 0.1, InitialLaw::Uniform { lo: -1.0, hi: 1.0 });
        let mut flow = FlowApproximation::initial(&spec, &settings, 7, 9).unwrap();
        flow.set_truncation(&spec, Some(2.5));
        let mut buf = Vec::new();
        flow.write_to(&mut buf).unwrap();
        let back = FlowApproximation::read_from(buf.as_slice(), &spec).unwrap();
        assert_eq!(back.grid, flow.grid);
        assert_eq!(back.truncation, Some(2.5));
        for k in 0..flow.grid.len() {
            assert_eq!(back.snapshot(k).as_flat(), flow.snapshot(k).as_flat());
        }
        assert!(FlowApproximation::read_from(&b"nope\n"[..], &spec).is_err());
    }

    #[test]
    fn degenerate_couplings_give_zero_distances() {
        // measure-free coefficients and no collateral jumps: all three coincide
        let spec = ModelSpec::new("free", 1, 1)
            .with_drift(|x, _, out| out[0] = -0.5 * x[0])
            .with_diffusion(|_, _, out| out[0] = 0.4)
            .with_rate(|x, _| 1.0 + 0.5 * x[0].abs().min(2.0))
            .with_rate_bound(RateBound::Global(2.0))
            .with_main_jump(|x, _, h, out| out[0] = -0.5 * x[0] * h)
            .with_measure_free_jumps();
        let settings = RunSettings::new(1.0, 0.05, InitialLaw::Uniform { lo: -1.0, hi: 1.0 });
        let flow = Arc::new(FlowApproximation::initial(&spec, &settings, 16, 0).unwrap());
        let s = coupled_chaos_run(&spec, 16, &settings, &flow, &DriverBundle::new(3, 1)).unwrap();
        assert!(s.d_xy.iter().all(|&v| v == 0.0));
        assert!(s.d_ylim.iter().all(|&v| v == 0.0));
        assert!(s.jumps_x > 0);

        // collateral jumps only separate X from the other two
        let with_theta = spec.clone().with_collateral(
            |_, _, _, _, h2, out| out[0] = 2.0 * h2 - 1.0,
            CollateralMean::TargetFree(Arc::new(|_, _, out| out[0] = 0.0)),
        );
        let s = coupled_chaos_run(&with_theta, 16, &settings, &flow, &DriverBundle::new(3, 1)).unwrap();
        assert!(s.d_xy.iter().any(|&v| v > 0.0));
        assert!(s.d_ylim.iter().all(|&v| v == 0.0));
        for i in 0..16 {
            assert!(s.d_xlim[i] <= s.d_xy[i] + s.d_ylim[i] + 1e-12);
        }
    }
}
