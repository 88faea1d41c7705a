//! Particle systems: the N-particle process with collateral jumps, the
//! intermediate system with averaged collateral drift, and index-coupled
//! copies of the limit process.

mod generator;
mod path;
mod system;
mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RateArg;
use crate::rng::{MarkSource, PoissonMeasure, StreamKey, StreamKind, StreamState};

pub use generator::{generator_apply, AffineTest, GeneratorOptions, GeneratorValue, QuadraticTest, TestFunction};
pub use path::{write_jump_log, JumpLogEntry, PathRecord, PathRecordSet};
pub use system::{simulate, step_x, step_y, Dynamics, FlowView, System, SystemState};
pub use trace::{sup_between, EventScope, Knot, StepTrace, SupTracker, TraceEvent};

/// Seeds and particle-to-stream mapping for one replica.
#[derive(Debug, Clone)]
pub struct DriverBundle {
    pub seed: u64,
    pub replica: u64,
    /// Stream index of particle `i` is `offset + i` unless `perm` is set.
    pub offset: u64,
    pub perm: Option<Arc<Vec<u64>>>,
}

impl DriverBundle {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            seed,
            replica,
            offset: 0,
            perm: None,
        }
    }

    pub fn with_offset(mut self, offset: u64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_permutation(mut self, perm: Vec<u64>) -> Self {
        self.perm = Some(Arc::new(perm));
        self
    }

    pub fn stream_id(&self, i: usize) -> u64 {
        match &self.perm {
            Some(p) => p[i],
            None => self.offset + i as u64,
        }
    }

    pub fn stream(&self, i: usize, kind: StreamKind) -> StreamState {
        StreamKey::new(self.seed, self.replica, self.stream_id(i), kind).stream()
    }

    pub(crate) fn poisson(&self, i: usize) -> PoissonMeasure {
        PoissonMeasure::new(self.stream(i, StreamKind::Poisson))
    }

    pub(crate) fn marks(&self, i: usize) -> MarkSource {
        MarkSource::new(self.stream(i, StreamKind::Marks))
    }
}

/// Law of the i.i.d. initial positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Independent uniform coordinates.
    Uniform { lo: f64, hi: f64 },
    /// Independent normal coordinates.
    Normal { mean: f64, sd: f64 },
    /// Every coordinate equal to `x`.
    Point { x: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            InitialLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            InitialLaw::Point { x } => x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad initial law {self:?}")))
        }
    }

    /// Draws one point in R^d from the particle's init stream.
    pub fn sample(&self, d: usize, mut stream: StreamState) -> Vec<f64> {
        match *self {
            InitialLaw::Uniform { lo, hi } => (0..d).map(|_| lo + (hi - lo) * stream.next_f64()).collect(),
            InitialLaw::Normal { mean, sd } => {
                let mut z = vec![0.0; d];
                stream.fill_normals(&mut z);
                z.iter().map(|v| mean + sd * v).collect()
            }
            InitialLaw::Point { x } => vec![x; d],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Grid values and the jump log only.
    #[default]
    GridOnly,
    /// Also every path knot (jump pre/post values and refinement breakpoints).
    Full,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub horizon: f64,
    pub dt: f64,
    /// Use the exact event-driven integrator when the model supports it.
    pub event_driven: bool,
    pub initial: InitialLaw,
    pub rate_arg: RateArg,
    /// Target number of thinning candidates per particle per sub-step.
    pub density_threshold: f64,
    pub max_refinements: u32,
    pub record: RecordMode,
}

impl RunSettings {
    pub fn new(horizon: f64, dt: f64, initial: InitialLaw) -> Self {
        Self {
            horizon,
            dt,
            event_driven: false,
            initial,
            rate_arg: RateArg::Jumper,
            density_threshold: 1.0,
            max_refinements: 8,
            record: RecordMode::GridOnly,
        }
    }

    pub fn with_event_driven(mut self, on: bool) -> Self {
        self.event_driven = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.density_threshold > 0.0) {
            return Err(Error::invalid("density threshold must be positive"));
        }
        self.initial.validate()
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Grid time `t_k`; the last point is exactly the horizon.
    pub fn grid_time(&self, k: usize) -> f64 {
        if k >= self.n_steps() {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    X,
    Y,
}
