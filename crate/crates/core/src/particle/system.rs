use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{CollateralField, ModelSpec, RateArg};
use crate::rng::{dyadic_increments, Candidate, MarkSource, PoissonMeasure, StreamKind, StreamState};

use super::path::{JumpLogEntry, PathRecordSet};
use super::trace::{EventScope, StepTrace, TraceEvent};
use super::{DriverBundle, RunSettings, SystemKind};

/// Frozen measure flow that drives copies of the limit process: the measure
/// and collateral drift in force on grid interval `k`.
pub trait FlowView: Send + Sync {
    fn measure(&self, k: usize) -> &EmpiricalMeasure;
    fn collateral(&self, k: usize) -> &CollateralField;
}

#[derive(Clone)]
pub enum Dynamics {
    /// Main jumps plus simultaneous collateral jumps `Θ/N`.
    X,
    /// Main jumps; collateral jumps replaced by their mean-field drift.
    Y(RateArg),
    /// Independent copies driven by a frozen flow.
    Limit(Arc<dyn FlowView>),
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::X => write!(f, "X"),
            Dynamics::Y(a) => write!(f, "Y({a:?})"),
            Dynamics::Limit(_) => write!(f, "Limit"),
        }
    }
}

/// Positions, stream cursors and jump log of an N-particle system.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    /// Index of the next grid interval to simulate.
    pub interval: usize,
    pub d: usize,
    /// Row-major `N × d`.
    pub positions: Vec<f64>,
    pub jump_log: Vec<JumpLogEntry>,
    pub(crate) ids: Vec<u64>,
    pub(crate) prms: Vec<PoissonMeasure>,
    pub(crate) marks: Vec<MarkSource>,
    pub(crate) brownian: Vec<StreamState>,
}

impl SystemState {
    /// Initial positions drawn from `settings.initial`, one init stream per particle.
    pub fn new(spec: &ModelSpec, settings: &RunSettings, drivers: &DriverBundle, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("need at least one particle"));
        }
        settings.initial.validate()?;
        let mut positions = Vec::with_capacity(n * spec.d);
        for i in 0..n {
            positions.extend(settings.initial.sample(spec.d, drivers.stream(i, StreamKind::Init)));
        }
        Self::from_positions(spec, drivers, positions)
    }

    pub fn from_positions(spec: &ModelSpec, drivers: &DriverBundle, positions: Vec<f64>) -> Result<Self> {
        let d = spec.d;
        if d == 0 || positions.is_empty() || !positions.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "{} coordinates do not form particles in R^{d}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial positions must be finite"));
        }
        let n = positions.len() / d;
        Ok(Self {
            t: 0.0,
            interval: 0,
            d,
            positions,
            jump_log: Vec::new(),
            ids: (0..n).map(|i| drivers.stream_id(i)).collect(),
            prms: (0..n).map(|i| drivers.poisson(i)).collect(),
            marks: (0..n).map(|i| drivers.marks(i)).collect(),
            brownian: (0..n).map(|i| drivers.stream(i, StreamKind::Brownian)).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat_unchecked(self.d, self.positions.clone())
    }
}

/// A particle system together with its model, dynamics and run settings.
pub struct System {
    spec: ModelSpec,
    dynamics: Dynamics,
    settings: RunSettings,
    state: SystemState,
    trace: StepTrace,
}

impl System {
    pub fn new(
        dynamics: Dynamics,
        spec: &ModelSpec,
        settings: &RunSettings,
        drivers: &DriverBundle,
        n: usize,
    ) -> Result<Self> {
        let state = SystemState::new(spec, settings, drivers, n)?;
        Self::from_state(dynamics, spec, settings, state)
    }

    pub fn from_state(
        dynamics: Dynamics,
        spec: &ModelSpec,
        settings: &RunSettings,
        state: SystemState,
    ) -> Result<Self> {
        settings.validate()?;
        spec.check_shapes()?;
        if state.d != spec.d {
            return Err(Error::invalid("state dimension does not match the model"));
        }
        check_event_driven(spec, settings)?;
        Ok(Self {
            spec: spec.clone(),
            dynamics,
            settings: settings.clone(),
            state,
            trace: StepTrace::default(),
        })
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn finished(&self) -> bool {
        self.state.interval >= self.settings.n_steps()
    }

    /// Trace of the most recent step.
    pub fn trace(&self) -> &StepTrace {
        &self.trace
    }

    /// Advances one grid interval.
    pub fn step(&mut self) -> Result<&StepTrace> {
        advance(
            &self.spec,
            &self.dynamics,
            &self.settings,
            &mut self.state,
            &mut self.trace,
        )?;
        Ok(&self.trace)
    }

    /// Applies an accepted jump of particle `i` at the current state, with
    /// marks taken from event `uid` of its mark stream.
    pub fn force_jump(&mut self, i: usize, uid: u64) -> Result<()> {
        let n = self.state.n();
        if i >= n {
            return Err(Error::invalid(format!("particle {i} out of range (N = {n})")));
        }
        let mu = self.state.measure();
        let pre = self.state.positions.clone();
        let collateral = matches!(self.dynamics, Dynamics::X) && self.spec.has_collateral();
        let mut jumps = vec![0.0; pre.len()];
        let amp = apply_jump(&self.spec, &self.state, &pre, &mu, i, uid, collateral, &mut jumps);
        for (x, j) in self.state.positions.iter_mut().zip(&jumps) {
            *x += j;
        }
        self.state.jump_log.push(JumpLogEntry {
            time: self.state.t,
            jumper: i,
            amplitude: amp,
        });
        Ok(())
    }
}

fn check_event_driven(spec: &ModelSpec, settings: &RunSettings) -> Result<()> {
    if settings.event_driven {
        if spec.event_driven.is_none() {
            return Err(Error::invalid(format!(
                "model '{}' has no event-driven form",
                spec.name
            )));
        }
        if spec.diffusion.is_some() {
            return Err(Error::invalid("event-driven integration requires σ ≡ 0"));
        }
    }
    Ok(())
}

/// One grid interval of the N-particle system with collateral jumps.
pub fn step_x(state: &mut SystemState, spec: &ModelSpec, settings: &RunSettings) -> Result<StepTrace> {
    settings.validate()?;
    check_event_driven(spec, settings)?;
    let mut trace = StepTrace::default();
    advance(spec, &Dynamics::X, settings, state, &mut trace)?;
    Ok(trace)
}

/// One grid interval of the intermediate system.
pub fn step_y(state: &mut SystemState, spec: &ModelSpec, settings: &RunSettings) -> Result<StepTrace> {
    settings.validate()?;
    check_event_driven(spec, settings)?;
    let mut trace = StepTrace::default();
    advance(spec, &Dynamics::Y(settings.rate_arg), settings, state, &mut trace)?;
    Ok(trace)
}

/// Full run of the X or Y system on the settings' grid.
pub fn simulate(
    kind: SystemKind,
    spec: &ModelSpec,
    n: usize,
    settings: &RunSettings,
    drivers: &DriverBundle,
) -> Result<PathRecordSet> {
    let dynamics = match kind {
        SystemKind::X => Dynamics::X,
        SystemKind::Y => Dynamics::Y(settings.rate_arg),
    };
    let mut sys = System::new(dynamics, spec, settings, drivers, n)?;
    let mut rec = PathRecordSet::new(n, spec.d, settings.record);
    rec.push_grid(0.0, &sys.state.positions);
    while !sys.finished() {
        let k = sys.state.interval;
        let trace = sys
            .step()
            .map_err(|e| e.context(format!("{kind:?} system, grid interval {k}")))?;
        rec.absorb(trace);
    }
    rec.jump_log = std::mem::take(&mut sys.state.jump_log);
    Ok(rec)
}

fn advance(
    spec: &ModelSpec,
    dynamics: &Dynamics,
    settings: &RunSettings,
    state: &mut SystemState,
    trace: &mut StepTrace,
) -> Result<()> {
    let k = state.interval;
    if k >= settings.n_steps() {
        return Err(Error::invalid("system already reached the horizon"));
    }
    let t0 = settings.grid_time(k);
    let t1 = settings.grid_time(k + 1);
    if settings.event_driven {
        trace.begin(t0, spec.d, &state.positions);
        let mut log = Vec::new();
        match dynamics {
            Dynamics::Limit(flow) => event_limit(spec, flow.as_ref(), state, trace, k, t0, t1, &mut log)?,
            _ => event_global(spec, dynamics, state, trace, t0, t1, &mut log)?,
        }
        state.jump_log.extend(log);
    } else {
        hybrid_interval(spec, dynamics, settings, state, trace, k, t0, t1)?;
    }
    trace.finish(t1, &state.positions);
    state.t = t1;
    state.interval = k + 1;
    Ok(())
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(positions: &[f64], d: usize, time: f64) -> Result<()> {
    if let Some(p) = positions.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup {
            time,
            particle: p / d,
            snapshot: positions.to_vec(),
        });
    }
    Ok(())
}

/// Adds the jump of particle `i` (and, if `collateral`, the collateral
/// jumps of every other particle) to `jumps`. `pre` holds all pre-jump
/// positions. Returns the main-jump amplitude.
#[allow(clippy::too_many_arguments)]
fn apply_jump(
    spec: &ModelSpec,
    state: &SystemState,
    pre: &[f64],
    mu: &EmpiricalMeasure,
    i: usize,
    uid: u64,
    collateral: bool,
    jumps: &mut [f64],
) -> f64 {
    let d = spec.d;
    let n = pre.len() / d;
    let marks = &state.marks[i];
    let h_i = marks.mark(uid, state.ids[i]);
    let xi = &pre[i * d..(i + 1) * d];
    let mut psi = vec![0.0; d];
    (spec.main_jump)(xi, mu, h_i, &mut psi);
    if collateral {
        if let Some(theta) = &spec.collateral {
            let mut buf = vec![0.0; d];
            let scale = 1.0 / n as f64;
            for j in (0..n).filter(|&j| j != i) {
                let h_j = marks.mark(uid, state.ids[j]);
                theta(xi, &pre[j * d..(j + 1) * d], mu, h_i, h_j, &mut buf);
                for c in 0..d {
                    jumps[j * d + c] += buf[c] * scale;
                }
            }
        }
    }
    for c in 0..d {
        jumps[i * d + c] += psi[c];
    }
    norm(&psi)
}

fn rate_checked(
    spec: &ModelSpec,
    x: &[f64],
    mu: &EmpiricalMeasure,
    bound: f64,
    time: f64,
    particle: usize,
) -> Result<f64> {
    let lam = (spec.rate)(x, mu);
    if !lam.is_finite() {
        return Err(Error::NumericalBlowup {
            time,
            particle,
            snapshot: x.to_vec(),
        });
    }
    if lam > bound {
        return Err(Error::RateBoundViolation {
            time,
            particle,
            rate: lam,
            bound,
        });
    }
    Ok(lam)
}

#[allow(clippy::too_many_arguments)]
fn hybrid_interval(
    spec: &ModelSpec,
    dynamics: &Dynamics,
    settings: &RunSettings,
    state: &mut SystemState,
    trace: &mut StepTrace,
    k: usize,
    t0: f64,
    t1: f64,
) -> Result<()> {
    for p in &mut state.prms {
        p.discard_until(t0);
    }
    let d = spec.d;
    let start = state.positions.clone();
    let max_bound = {
        let owned;
        let mu = match dynamics {
            Dynamics::Limit(f) => f.measure(k),
            _ => {
                owned = state.measure();
                &owned
            }
        };
        start
            .chunks_exact(d)
            .map(|x| spec.rate_bound_at(x, mu))
            .fold(0.0f64, f64::max)
    };
    let density = max_bound * (t1 - t0) / settings.density_threshold;
    let mut level = if density <= 1.0 {
        0
    } else {
        (density.log2().ceil() as u32).min(settings.max_refinements)
    };
    loop {
        trace.begin(t0, d, &start);
        state.positions.copy_from_slice(&start);
        let mut log = Vec::new();
        match hybrid_attempt(spec, dynamics, state, trace, k, t0, t1, level, &mut log) {
            Ok(()) => {
                state.jump_log.extend(log);
                return Ok(());
            }
            Err(e @ Error::RateBoundViolation { .. }) => {
                if level >= settings.max_refinements {
                    state.positions.copy_from_slice(&start);
                    return Err(e.context(format!("after {level} step halvings")));
                }
                level += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Euler increment from the sub-step start plus thinned jumps at their exact
/// times. Within a sub-step the continuous part moves linearly, so the
/// pre-jump state at fraction `s` is `x0 + s·inc + (jumps so far)`.
#[allow(clippy::too_many_arguments)]
fn hybrid_attempt(
    spec: &ModelSpec,
    dynamics: &Dynamics,
    state: &mut SystemState,
    trace: &mut StepTrace,
    k: usize,
    t0: f64,
    t1: f64,
    level: u32,
    log: &mut Vec<JumpLogEntry>,
) -> Result<()> {
    let n = state.n();
    let d = spec.d;
    let d1 = spec.d1;
    let steps = 1usize << level;
    let span = t1 - t0;
    let db: Option<Vec<Vec<f64>>> = spec.diffusion.as_ref().map(|_| {
        state
            .brownian
            .iter()
            .map(|s| dyadic_increments(s, k as u64, span, d1, level))
            .collect()
    });
    let is_limit = matches!(dynamics, Dynamics::Limit(_));
    let collateral_jumps = matches!(dynamics, Dynamics::X) && spec.has_collateral();
    let needs_all_pre = collateral_jumps || (spec.jumps_use_measure && !is_limit);

    let mut inc = vec![0.0; n * d];
    let mut jumps = vec![0.0; n * d];
    let mut bounds = vec![0.0; n];
    let mut fbuf = vec![0.0; d];
    let mut scratch = Vec::new();
    let mut pre_i = vec![0.0; d];
    let mut pre_all = vec![0.0; n * d];
    let mut cands: Vec<(Candidate, usize)> = Vec::new();
    let mut buf = Vec::new();

    for s in 0..steps {
        let ta = if s == 0 {
            t0
        } else {
            t0 + span * s as f64 / steps as f64
        };
        let tb = if s + 1 == steps {
            t1
        } else {
            t0 + span * (s + 1) as f64 / steps as f64
        };
        let hs = tb - ta;
        let owned_mu;
        let mu_a = match dynamics {
            Dynamics::Limit(f) => f.measure(k),
            _ => {
                owned_mu = state.measure();
                &owned_mu
            }
        };
        let owned_field;
        let field = match dynamics {
            Dynamics::X => {
                owned_field = CollateralField::Zero;
                &owned_field
            }
            Dynamics::Y(arg) => {
                owned_field = spec.collateral_field(mu_a, *arg, None);
                &owned_field
            }
            Dynamics::Limit(f) => f.collateral(k),
        };

        for i in 0..n {
            let x = &state.positions[i * d..(i + 1) * d];
            (spec.drift)(x, mu_a, &mut fbuf);
            field.add_to(spec, x, mu_a, &mut fbuf);
            let out = &mut inc[i * d..(i + 1) * d];
            for c in 0..d {
                out[c] = fbuf[c] * hs;
            }
            if let Some(db) = &db {
                spec.add_diffusion(x, mu_a, &db[i][s * d1..(s + 1) * d1], &mut scratch, out);
            }
            bounds[i] = spec.rate_bound_at(x, mu_a);
        }

        cands.clear();
        for (i, (prm, &bound)) in state.prms.iter_mut().zip(&bounds).enumerate() {
            buf.clear();
            prm.candidates_in(ta, tb, bound, &mut buf);
            cands.extend(buf.iter().map(|c| (*c, i)));
        }
        cands.sort_by(|a, b| a.0.time.total_cmp(&b.0.time).then(a.1.cmp(&b.1)));

        jumps.fill(0.0);
        for &(cand, i) in &cands {
            let frac = (cand.time - ta) / hs;
            let x = &state.positions;
            for (c, p) in pre_i.iter_mut().enumerate() {
                let idx = i * d + c;
                *p = x[idx] + frac * inc[idx] + jumps[idx];
            }
            if needs_all_pre {
                for idx in 0..n * d {
                    pre_all[idx] = x[idx] + frac * inc[idx] + jumps[idx];
                }
            }
            let owned_mu_c;
            let mu_c = if spec.jumps_use_measure && !is_limit {
                owned_mu_c = EmpiricalMeasure::from_flat_unchecked(d, pre_all.clone());
                &owned_mu_c
            } else {
                mu_a
            };
            let lam = rate_checked(spec, &pre_i, mu_c, bounds[i], cand.time, i)?;
            if cand.u > lam {
                continue;
            }
            if collateral_jumps {
                let before = jumps.clone();
                let amp = apply_jump(spec, state, &pre_all, mu_c, i, cand.uid, true, &mut jumps);
                let post: Vec<f64> = pre_all
                    .iter()
                    .zip(jumps.iter().zip(&before))
                    .map(|(p, (a, b))| p + (a - b))
                    .collect();
                trace.events.push(TraceEvent {
                    time: cand.time,
                    jumper: i,
                    scope: EventScope::All,
                    pre: pre_all.clone(),
                    post,
                    is_jump: true,
                });
                log.push(JumpLogEntry {
                    time: cand.time,
                    jumper: i,
                    amplitude: amp,
                });
            } else {
                let h_i = state.marks[i].mark(cand.uid, state.ids[i]);
                (spec.main_jump)(&pre_i, mu_c, h_i, &mut fbuf);
                let mut post = pre_i.clone();
                for c in 0..d {
                    jumps[i * d + c] += fbuf[c];
                    post[c] += fbuf[c];
                }
                trace.events.push(TraceEvent {
                    time: cand.time,
                    jumper: i,
                    scope: EventScope::One,
                    pre: pre_i.clone(),
                    post,
                    is_jump: true,
                });
                log.push(JumpLogEntry {
                    time: cand.time,
                    jumper: i,
                    amplitude: norm(&fbuf),
                });
            }
        }

        for ((x, a), j) in state.positions.iter_mut().zip(&inc).zip(&jumps) {
            *x += a + j;
        }
        check_finite(&state.positions, d, tb)?;
        if s + 1 < steps {
            trace.events.push(TraceEvent {
                time: tb,
                jumper: usize::MAX,
                scope: EventScope::All,
                pre: state.positions.clone(),
                post: state.positions.clone(),
                is_jump: false,
            });
        }
    }
    Ok(())
}

fn constant_drift(field: &CollateralField, d: usize) -> Result<Vec<f64>> {
    match field {
        CollateralField::Zero => Ok(vec![0.0; d]),
        CollateralField::Constant(v) => Ok(v.clone()),
        _ => Err(Error::invalid(
            "event-driven integration needs a position-independent collateral drift",
        )),
    }
}

#[inline]
fn flow_to(x: &[f64], c: &[f64], decay: f64, out: &mut [f64]) {
    for ((o, xv), cv) in out.iter_mut().zip(x).zip(c) {
        *o = cv + (xv - cv) * decay;
    }
}

/// Exact integration of `dx = (c − x) dt` between thinned events, for the X
/// and Y systems whose particles interact at every accepted event.
fn event_global(
    spec: &ModelSpec,
    dynamics: &Dynamics,
    state: &mut SystemState,
    trace: &mut StepTrace,
    t0: f64,
    t1: f64,
    log: &mut Vec<JumpLogEntry>,
) -> Result<()> {
    let ball = spec
        .event_driven
        .as_ref()
        .expect("checked at construction")
        .rate_on_ball
        .clone();
    let n = state.n();
    let d = spec.d;
    let collateral_jumps = matches!(dynamics, Dynamics::X) && spec.has_collateral();
    let center = |state: &SystemState| -> Result<Vec<f64>> {
        match dynamics {
            Dynamics::Y(arg) => constant_drift(&spec.collateral_field(&state.measure(), *arg, None), d),
            _ => Ok(vec![0.0; d]),
        }
    };
    let mut c = center(state)?;
    let y_field = matches!(dynamics, Dynamics::Y(_)) && spec.has_collateral();
    let mut t_sync = t0;
    let mut bounds = vec![0.0; n];
    let mut next: Vec<Option<Candidate>> = vec![None; n];
    let refresh =
        |state: &mut SystemState, c: &[f64], i: usize, t: f64, bounds: &mut [f64], next: &mut [Option<Candidate>]| {
            let r = norm(state.position(i)).max(norm(c));
            bounds[i] = ball(r);
            next[i] = state.prms[i].next_after(t, bounds[i], t1);
        };
    for i in 0..n {
        refresh(state, &c, i, t_sync, &mut bounds, &mut next);
    }
    let frozen_mu = state.measure();
    let mut pre_i = vec![0.0; d];
    let mut pre_all = vec![0.0; n * d];
    loop {
        let mut best: Option<(f64, usize)> = None;
        for (i, cand) in next.iter().enumerate() {
            if let Some(cd) = cand {
                if best.is_none_or(|(t, _)| cd.time < t) {
                    best = Some((cd.time, i));
                }
            }
        }
        let Some((tau, i)) = best else {
            break;
        };
        let cand = next[i].expect("selected candidate exists");
        let decay = (-(tau - t_sync)).exp();
        flow_to(state.position(i), &c, decay, &mut pre_i);
        let owned_mu;
        let mu = if spec.jumps_use_measure {
            for j in 0..n {
                flow_to(state.position(j), &c, decay, &mut pre_all[j * d..(j + 1) * d]);
            }
            owned_mu = EmpiricalMeasure::from_flat_unchecked(d, pre_all.clone());
            &owned_mu
        } else {
            &frozen_mu
        };
        let lam = rate_checked(spec, &pre_i, mu, bounds[i], tau, i)?;
        if cand.u > lam {
            let r = norm(&pre_i).max(norm(&c));
            bounds[i] = ball(r);
            next[i] = state.prms[i].next_after(tau, bounds[i], t1);
            continue;
        }
        for j in 0..n {
            flow_to(state.position(j), &c, decay, &mut pre_all[j * d..(j + 1) * d]);
        }
        t_sync = tau;
        let mut jumps = vec![0.0; n * d];
        let amp = apply_jump(spec, state, &pre_all, mu, i, cand.uid, collateral_jumps, &mut jumps);
        for ((x, p), j) in state.positions.iter_mut().zip(&pre_all).zip(&jumps) {
            *x = p + j;
        }
        check_finite(&state.positions, d, tau)?;
        if collateral_jumps {
            trace.events.push(TraceEvent {
                time: tau,
                jumper: i,
                scope: EventScope::All,
                pre: pre_all.clone(),
                post: state.positions.clone(),
                is_jump: true,
            });
        } else {
            trace.events.push(TraceEvent {
                time: tau,
                jumper: i,
                scope: EventScope::One,
                pre: pre_all[i * d..(i + 1) * d].to_vec(),
                post: state.position(i).to_vec(),
                is_jump: true,
            });
        }
        log.push(JumpLogEntry {
            time: tau,
            jumper: i,
            amplitude: amp,
        });
        if y_field {
            c = center(state)?;
        }
        if collateral_jumps || y_field {
            for j in 0..n {
                refresh(state, &c, j, t_sync, &mut bounds, &mut next);
            }
        } else {
            refresh(state, &c, i, t_sync, &mut bounds, &mut next);
        }
    }
    let decay = (-(t1 - t_sync)).exp();
    for j in 0..n {
        let x = state.position(j).to_vec();
        flow_to(&x, &c, decay, &mut state.positions[j * d..(j + 1) * d]);
    }
    check_finite(&state.positions, d, t1)
}

/// Event-driven integration of independent limit copies: each particle is
/// advanced on its own.
#[allow(clippy::too_many_arguments)]
fn event_limit(
    spec: &ModelSpec,
    flow: &dyn FlowView,
    state: &mut SystemState,
    trace: &mut StepTrace,
    k: usize,
    t0: f64,
    t1: f64,
    log: &mut Vec<JumpLogEntry>,
) -> Result<()> {
    let ball = spec
        .event_driven
        .as_ref()
        .expect("checked at construction")
        .rate_on_ball
        .clone();
    let d = spec.d;
    let n = state.n();
    let mu = flow.measure(k);
    let c = constant_drift(flow.collateral(k), d)?;
    let c_norm = norm(&c);
    let mut x = vec![0.0; d];
    let mut pre = vec![0.0; d];
    let mut psi = vec![0.0; d];
    for i in 0..n {
        x.copy_from_slice(state.position(i));
        let mut t = t0;
        loop {
            let bound = ball(norm(&x).max(c_norm));
            let Some(cand) = state.prms[i].next_after(t, bound, t1) else {
                let decay = (-(t1 - t)).exp();
                flow_to(&x, &c, decay, &mut pre);
                x.copy_from_slice(&pre);
                break;
            };
            let decay = (-(cand.time - t)).exp();
            flow_to(&x, &c, decay, &mut pre);
            let lam = rate_checked(spec, &pre, mu, bound, cand.time, i)?;
            t = cand.time;
            if cand.u <= lam {
                let h = state.marks[i].mark(cand.uid, state.ids[i]);
                (spec.main_jump)(&pre, mu, h, &mut psi);
                for ((xv, p), j) in x.iter_mut().zip(&pre).zip(&psi) {
                    *xv = p + j;
                }
                trace.events.push(TraceEvent {
                    time: t,
                    jumper: i,
                    scope: EventScope::One,
                    pre: pre.clone(),
                    post: x.clone(),
                    is_jump: true,
                });
                log.push(JumpLogEntry {
                    time: t,
                    jumper: i,
                    amplitude: norm(&psi),
                });
            } else {
                x.copy_from_slice(&pre);
            }
        }
        state.positions[i * d..(i + 1) * d].copy_from_slice(&x);
    }
    check_finite(&state.positions, d, t1)?;
    trace
        .events
        .sort_by(|a, b| a.time.total_cmp(&b.time).then(a.jumper.cmp(&b.jumper)));
    log.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.jumper.cmp(&b.jumper)));
    Ok(())
}
