//! Coefficient bundle for one mean-field jump-diffusion model.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;

/// `(x, μ, out)`: writes a vector in R^d.
pub type VectorField = Arc<dyn Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync>;
/// `(x, μ, out)`: writes a row-major d × d1 matrix.
pub type MatrixField = Arc<dyn Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64], &EmpiricalMeasure) -> f64 + Send + Sync>;
/// `(x, μ, h, out)`
pub type MainJump = Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64, &mut [f64]) + Send + Sync>;
/// `(jumper, target, μ, h_jumper, h_target, out)`
pub type CollateralJump = Arc<dyn Fn(&[f64], &[f64], &EmpiricalMeasure, f64, f64, &mut [f64]) + Send + Sync>;
/// `(jumper, μ, out)`
pub type TargetFreeMean = Arc<dyn Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync>;
/// `(jumper, target, μ, out)`
pub type PairMean = Arc<dyn Fn(&[f64], &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync>;
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassTag {
    Lipschitz,
    ConvexPotential,
    SuperlinearRate,
}

/// How the mark average `∫ Θ(x, y, μ, h1, h2) ν₂(dh)` is obtained.
#[derive(Clone)]
pub enum CollateralMean {
    /// Closed form that does not depend on the target position.
    TargetFree(TargetFreeMean),
    /// Closed form depending on both positions.
    Pair(PairMean),
    /// Tensor midpoint rule with `nodes` points per mark coordinate.
    Quadrature { nodes: usize },
}

/// Which position the rate is evaluated at in the intermediate system's
/// collateral drift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateArg {
    #[default]
    Jumper,
    Target,
}

/// Thinning envelope used to bound the rate over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateBound {
    /// `sup λ` over the whole state space.
    Global(f64),
    /// `factor · λ(x, μ) + floor`, checked at every candidate.
    Local { factor: f64, floor: f64 },
}

/// Structure required by the exact event-driven integrator: drift `−x`
/// (plus a piecewise-constant mean-field term), no diffusion, and a bound on
/// the rate over balls around the origin.
#[derive(Clone)]
pub struct EventDrivenForm {
    pub rate_on_ball: RadialFn,
}

/// Extra ingredients for the convex-potential drift class.
#[derive(Clone)]
pub struct ConvexParts {
    pub grad_potential: GradientFn,
    /// Interaction part `b(x, α)` of the drift.
    pub interaction: VectorField,
    pub interaction_lipschitz: f64,
    pub interaction_bound: f64,
}

/// Declared constants, as checked by `validate_model`.
#[derive(Clone)]
pub struct AssumptionMeta {
    /// Global Lipschitz constant for drift, diffusion and the L¹ jump terms.
    pub lipschitz: Option<f64>,
    /// Radial part `b` of the superlinear rate, with its derivative.
    pub rate_radial: Option<(RadialFn, RadialFn)>,
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    /// Bound on the bounded part of the rate.
    pub h_bound: Option<f64>,
    pub mean_v_norm: Option<f64>,
    pub mean_u_norm: Option<f64>,
    /// Radii of the supports of the reset and collateral amplitudes.
    pub u_radius: Option<f64>,
    pub v_radius: Option<f64>,
    /// Factor K in `K·γ·E‖V‖ < 1`; 5 unless deliberately overridden.
    pub gamma_factor: f64,
    pub convex: Option<ConvexParts>,
}

impl Default for AssumptionMeta {
    fn default() -> Self {
        Self {
            lipschitz: None,
            rate_radial: None,
            gamma: None,
            c: None,
            h_bound: None,
            mean_v_norm: None,
            mean_u_norm: None,
            u_radius: None,
            v_radius: None,
            gamma_factor: 5.0,
            convex: None,
        }
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub d: usize,
    pub d1: usize,
    pub class: ClassTag,
    pub drift: VectorField,
    pub diffusion: Option<MatrixField>,
    pub rate: ScalarField,
    pub main_jump: MainJump,
    /// Closed-form `E_h ψ(x, μ, h)`, if available.
    pub main_jump_mean: Option<VectorField>,
    pub collateral: Option<CollateralJump>,
    pub collateral_mean: CollateralMean,
    pub rate_bound: RateBound,
    /// False when λ, ψ and Θ ignore their measure argument.
    pub jumps_use_measure: bool,
    pub event_driven: Option<EventDrivenForm>,
    pub meta: AssumptionMeta,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("d1", &self.d1)
            .field("class", &self.class)
            .field("has_diffusion", &self.diffusion.is_some())
            .field("has_collateral", &self.collateral.is_some())
            .field("rate_bound", &self.rate_bound)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// A model with zero coefficients everywhere; fill in with the setters.
    pub fn new(name: impl Into<String>, d: usize, d1: usize) -> Self {
        Self {
            name: name.into(),
            d,
            d1,
            class: ClassTag::Lipschitz,
            drift: Arc::new(|_, _, out| out.fill(0.0)),
            diffusion: None,
            rate: Arc::new(|_, _| 0.0),
            main_jump: Arc::new(|_, _, _, out| out.fill(0.0)),
            main_jump_mean: None,
            collateral: None,
            collateral_mean: CollateralMean::Quadrature { nodes: 16 },
            rate_bound: RateBound::Local {
                factor: 2.0,
                floor: 1.0,
            },
            jumps_use_measure: true,
            event_driven: None,
            meta: AssumptionMeta::default(),
        }
    }

    pub fn with_class(mut self, class: ClassTag) -> Self {
        self.class = class;
        self
    }

    pub fn with_drift(mut self, f: impl Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn with_rate(mut self, f: impl Fn(&[f64], &EmpiricalMeasure) -> f64 + Send + Sync + 'static) -> Self {
        self.rate = Arc::new(f);
        self
    }

    pub fn with_main_jump(
        mut self,
        f: impl Fn(&[f64], &EmpiricalMeasure, f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.main_jump = Arc::new(f);
        self
    }

    pub fn with_main_jump_mean(
        mut self,
        f: impl Fn(&[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.main_jump_mean = Some(Arc::new(f));
        self
    }

    pub fn with_collateral(
        mut self,
        f: impl Fn(&[f64], &[f64], &EmpiricalMeasure, f64, f64, &mut [f64]) + Send + Sync + 'static,
        mean: CollateralMean,
    ) -> Self {
        self.collateral = Some(Arc::new(f));
        self.collateral_mean = mean;
        self
    }

    /// Drops the collateral jumps entirely (Θ ≡ 0).
    pub fn without_collateral(mut self) -> Self {
        self.collateral = None;
        self
    }

    pub fn with_rate_bound(mut self, bound: RateBound) -> Self {
        self.rate_bound = bound;
        self
    }

    pub fn with_measure_free_jumps(mut self) -> Self {
        self.jumps_use_measure = false;
        self
    }

    pub fn with_event_driven(mut self, rate_on_ball: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.event_driven = Some(EventDrivenForm {
            rate_on_ball: Arc::new(rate_on_ball),
        });
        self
    }

    pub fn with_meta(mut self, meta: AssumptionMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn has_collateral(&self) -> bool {
        self.collateral.is_some()
    }

    /// Adds `σ(x, μ)·db` to `out`.
    pub fn add_diffusion(&self, x: &[f64], mu: &EmpiricalMeasure, db: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        let Some(sigma) = &self.diffusion else {
            return;
        };
        scratch.clear();
        scratch.resize(self.d * self.d1, 0.0);
        sigma(x, mu, scratch);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &scratch[r * self.d1..(r + 1) * self.d1];
            *o += row.iter().zip(db).map(|(s, b)| s * b).sum::<f64>();
        }
    }

    pub fn rate_bound_at(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
        match self.rate_bound {
            RateBound::Global(b) => b,
            RateBound::Local { factor, floor } => factor * (self.rate)(x, mu) + floor,
        }
    }

    /// `E_h ψ(x, μ, h)`, from the closed form or a 1-D midpoint rule.
    pub fn main_jump_mean_at(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        if let Some(m) = &self.main_jump_mean {
            m(x, mu, out);
            return;
        }
        const NODES: usize = 256;
        out.fill(0.0);
        let mut buf = vec![0.0; self.d];
        for k in 0..NODES {
            let h = (k as f64 + 0.5) / NODES as f64;
            (self.main_jump)(x, mu, h, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b / NODES as f64;
            }
        }
    }

    /// `∫ Θ(jumper, target, μ, h1, h2) ν₂(dh)`.
    pub fn collateral_mean_at(&self, jumper: &[f64], target: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
        let Some(theta) = &self.collateral else {
            return;
        };
        match &self.collateral_mean {
            CollateralMean::TargetFree(m) => m(jumper, mu, out),
            CollateralMean::Pair(m) => m(jumper, target, mu, out),
            CollateralMean::Quadrature { nodes } => {
                let q = (*nodes).max(1);
                let w = 1.0 / (q * q) as f64;
                let mut buf = vec![0.0; self.d];
                for a in 0..q {
                    let h1 = (a as f64 + 0.5) / q as f64;
                    for b in 0..q {
                        let h2 = (b as f64 + 0.5) / q as f64;
                        theta(jumper, target, mu, h1, h2, &mut buf);
                        for (o, v) in out.iter_mut().zip(&buf) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
    }

    /// Precomputes the mean-field collateral drift
    /// `⟨μ, λ(·, μ) ∫Θ(·, x, μ, h) ν₂(dh)⟩` for a fixed measure.
    /// `rate_cap` truncates the average rate (`⟨μ, λ⟩ ∧ C`).
    pub fn collateral_field(&self, mu: &EmpiricalMeasure, arg: RateArg, rate_cap: Option<f64>) -> CollateralField {
        if self.collateral.is_none() {
            return CollateralField::Zero;
        }
        let d = self.d;
        let n = mu.len() as f64;
        match (&self.collateral_mean, arg) {
            (CollateralMean::TargetFree(m), RateArg::Jumper) => {
                let mut acc = vec![0.0; d];
                let mut buf = vec![0.0; d];
                let mut rate_sum = 0.0;
                for z in mu.points() {
                    let lam = (self.rate)(z, mu);
                    rate_sum += lam;
                    m(z, mu, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += lam * b;
                    }
                }
                let mean_rate = rate_sum / n;
                let scale = match rate_cap {
                    Some(c) if mean_rate > c => c / mean_rate,
                    _ => 1.0,
                };
                acc.iter_mut().for_each(|a| *a = *a / n * scale);
                CollateralField::Constant(acc)
            }
            (CollateralMean::TargetFree(m), RateArg::Target) => {
                let mut acc = vec![0.0; d];
                let mut buf = vec![0.0; d];
                for z in mu.points() {
                    m(z, mu, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += b;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n);
                CollateralField::RateScaled(acc)
            }
            _ => CollateralField::General { arg, rate_cap },
        }
    }

    /// Checks shapes and basic sanity of the coefficients at one probe point.
    pub fn check_shapes(&self) -> Result<()> {
        if self.d == 0 || self.d1 == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        let mu = EmpiricalMeasure::from_flat_unchecked(self.d, vec![0.0; self.d]);
        let x = vec![0.1; self.d];
        let mut out = vec![f64::NAN; self.d];
        (self.drift)(&x, &mu, &mut out);
        if out.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("drift did not fill its output"));
        }
        if let Some(s) = &self.diffusion {
            let mut m = vec![f64::NAN; self.d * self.d1];
            s(&x, &mu, &mut m);
            if m.iter().any(|v| v.is_nan()) {
                return Err(Error::invalid("diffusion did not fill its d×d1 output"));
            }
        }
        if (self.rate)(&x, &mu) < 0.0 {
            return Err(Error::invalid("rate is negative at the probe point"));
        }
        Ok(())
    }
}

/// Mean-field collateral drift as a function of the target position.
#[derive(Debug, Clone)]
pub enum CollateralField {
    Zero,
    Constant(Vec<f64>),
    /// `λ(x, μ) · v`
    RateScaled(Vec<f64>),
    General {
        arg: RateArg,
        rate_cap: Option<f64>,
    },
}

impl CollateralField {
    /// Adds the drift at `target` to `out`.
    pub fn add_to(&self, spec: &ModelSpec, target: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        match self {
            CollateralField::Zero => {}
            CollateralField::Constant(v) => {
                for (o, a) in out.iter_mut().zip(v) {
                    *o += a;
                }
            }
            CollateralField::RateScaled(v) => {
                let lam = (spec.rate)(target, mu);
                for (o, a) in out.iter_mut().zip(v) {
                    *o += lam * a;
                }
            }
            CollateralField::General { arg, rate_cap } => {
                let d = spec.d;
                let n = mu.len() as f64;
                let mut acc = vec![0.0; d];
                let mut buf = vec![0.0; d];
                let mut rate_sum = 0.0;
                let target_rate = (spec.rate)(target, mu);
                for z in mu.points() {
                    let lam = match arg {
                        RateArg::Jumper => (spec.rate)(z, mu),
                        RateArg::Target => target_rate,
                    };
                    rate_sum += lam;
                    spec.collateral_mean_at(z, target, mu, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += lam * b;
                    }
                }
                let mean_rate = rate_sum / n;
                let scale = match rate_cap {
                    Some(c) if mean_rate > *c => c / mean_rate,
                    _ => 1.0,
                };
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o += a / n * scale;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CollateralField::Zero)
    }
}
