//! Built-in model families: a globally Lipschitz demo, a convex-potential
//! drift, and a neuronal model with a superlinear firing rate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssumptionMeta, ClassTag, CollateralMean, ConvexParts, ModelSpec, RateBound};

pub const MODEL_IDS: [&str; 3] = ["lipschitz-demo", "convex-potential", "neuronal"];

/// Parameters shared by the two Lipschitz-rate families: rate
/// `λ0 + λ1·min(‖x‖, R)`, main jump `−β·x·h` and collateral jump
/// `v0·(2h₂ − 1)` in every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub cap_radius: f64,
    pub beta: f64,
    pub v0: f64,
}

impl JumpParams {
    fn check(&self) -> Result<()> {
        let finite = [self.lambda0, self.lambda1, self.cap_radius, self.beta, self.v0]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("jump parameters must be finite"));
        }
        if self.lambda0 < 0.0 || self.lambda1 < 0.0 {
            return Err(Error::Constraint("rate parameters need λ0 ≥ 0 and λ1 ≥ 0".into()));
        }
        if self.cap_radius <= 0.0 {
            return Err(Error::Constraint("rate cap radius R must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Constraint(format!("β = {} must lie in [0, 1]", self.beta)));
        }
        Ok(())
    }

    fn max_rate(&self) -> f64 {
        self.lambda0 + self.lambda1 * self.cap_radius
    }

    /// L¹-Lipschitz constants of the main and collateral jump terms.
    fn lipschitz(&self, d: usize) -> (f64, f64) {
        let main = 0.5 * self.beta * self.max_rate() + self.lambda1 * self.beta * self.cap_radius;
        let coll = 0.5 * self.lambda1 * self.v0.abs() * (d as f64).sqrt();
        (main, coll)
    }

    fn install(&self, spec: ModelSpec) -> ModelSpec {
        let JumpParams {
            lambda0,
            lambda1,
            cap_radius,
            beta,
            v0,
        } = *self;
        let spec = spec
            .with_rate(move |x, _| lambda0 + lambda1 * norm(x).min(cap_radius))
            .with_rate_bound(RateBound::Global(self.max_rate()))
            .with_main_jump(move |x, _, h, out| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -beta * xi * h;
                }
            })
            .with_main_jump_mean(move |x, _, out| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -0.5 * beta * xi;
                }
            })
            .with_measure_free_jumps();
        if v0 == 0.0 {
            return spec.without_collateral();
        }
        spec.with_collateral(
            move |_, _, _, _, h2, out| out.fill(v0 * (2.0 * h2 - 1.0)),
            CollateralMean::TargetFree(Arc::new(|_, _, out| out.fill(0.0))),
        )
    }
}

macro_rules! jumps_of {
    ($p:expr) => {
        JumpParams {
            lambda0: $p.lambda0,
            lambda1: $p.lambda1,
            cap_radius: $p.cap_radius,
            beta: $p.beta,
            v0: $p.v0,
        }
    };
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LipschitzDemoParams {
    pub d: usize,
    /// Mean reversion towards the origin.
    pub a: f64,
    /// Attraction towards the empirical mean.
    pub k: f64,
    pub sigma0: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub cap_radius: f64,
    pub beta: f64,
    pub v0: f64,
}

impl Default for LipschitzDemoParams {
    fn default() -> Self {
        Self {
            d: 1,
            a: 1.0,
            k: 1.0,
            sigma0: 0.5,
            lambda0: 1.0,
            lambda1: 0.5,
            cap_radius: 2.0,
            beta: 0.5,
            v0: 0.5,
        }
    }
}

/// `F(x, μ) = −a·x + k·(mean(μ) − x)`, `σ = σ0·I`.
pub fn lipschitz_demo(p: &LipschitzDemoParams) -> Result<ModelSpec> {
    check_dim(p.d)?;
    jumps_of!(p).check()?;
    if !(p.a >= 0.0 && p.k >= 0.0 && p.sigma0 >= 0.0) {
        return Err(Error::Constraint("lipschitz-demo needs a ≥ 0, k ≥ 0 and σ0 ≥ 0".into()));
    }
    let (a, k) = (p.a, p.k);
    let mut spec = ModelSpec::new("lipschitz-demo", p.d, p.d).with_drift(move |x, mu, out| {
        let m = mu.mean();
        for ((o, xi), mi) in out.iter_mut().zip(x).zip(m) {
            *o = -a * xi + k * (mi - xi);
        }
    });
    spec = add_scalar_diffusion(spec, p.sigma0, p.d);
    spec = jumps_of!(p).install(spec);
    let (lm, lc) = jumps_of!(p).lipschitz(p.d);
    Ok(spec.with_meta(AssumptionMeta {
        lipschitz: Some((a + k).max(lm).max(lc)),
        ..AssumptionMeta::default()
    }))
}

fn add_scalar_diffusion(spec: ModelSpec, sigma0: f64, d: usize) -> ModelSpec {
    if sigma0 == 0.0 {
        return spec;
    }
    spec.with_diffusion(move |_, _, out| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = sigma0;
        }
    })
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        Err(Error::invalid("dimension d must be at least 1"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvexPotentialParams {
    pub d: usize,
    /// `U(x) = Σ_k |x_k|^{2m} / (2m)`.
    pub m: f64,
    /// Amplitude of the interaction `θ·tanh(mean(μ) − x)`.
    pub theta: f64,
    pub sigma0: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub cap_radius: f64,
    pub beta: f64,
    pub v0: f64,
}

impl Default for ConvexPotentialParams {
    fn default() -> Self {
        Self {
            d: 1,
            m: 2.0,
            theta: 1.0,
            sigma0: 0.5,
            lambda0: 1.0,
            lambda1: 0.5,
            cap_radius: 2.0,
            beta: 0.5,
            v0: 0.5,
        }
    }
}

/// `∂U/∂x_k = sign(x_k)·|x_k|^{2m−1}`.
pub fn convex_grad(m: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = v.signum() * v.abs().powf(2.0 * m - 1.0);
    }
    if m == 1.0 {
        out.copy_from_slice(x);
    }
}

pub fn convex_potential(p: &ConvexPotentialParams) -> Result<ModelSpec> {
    check_dim(p.d)?;
    jumps_of!(p).check()?;
    if !(p.m >= 1.0 && p.m.is_finite()) {
        return Err(Error::Constraint(format!("exponent m = {} must be ≥ 1", p.m)));
    }
    if !(p.theta >= 0.0 && p.sigma0 >= 0.0) {
        return Err(Error::Constraint("convex-potential needs θ ≥ 0 and σ0 ≥ 0".into()));
    }
    let (m, theta) = (p.m, p.theta);
    let interaction = move |x: &[f64], mu: &crate::EmpiricalMeasure, out: &mut [f64]| {
        let c = mu.mean();
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(c) {
            *o = theta * (ci - xi).tanh();
        }
    };
    let mut spec = ModelSpec::new("convex-potential", p.d, p.d)
        .with_class(ClassTag::ConvexPotential)
        .with_drift(move |x, mu, out| {
            let mut g = vec![0.0; x.len()];
            convex_grad(m, x, &mut g);
            interaction(x, mu, out);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o -= gi;
            }
        });
    spec = add_scalar_diffusion(spec, p.sigma0, p.d);
    spec = jumps_of!(p).install(spec);
    let (lm, lc) = jumps_of!(p).lipschitz(p.d);
    let sqrt_d = (p.d as f64).sqrt();
    Ok(spec.with_meta(AssumptionMeta {
        lipschitz: Some(lm.max(lc)),
        convex: Some(ConvexParts {
            grad_potential: Arc::new(move |x, out| convex_grad(m, x, out)),
            interaction: Arc::new(interaction),
            interaction_lipschitz: theta * sqrt_d,
            interaction_bound: theta * sqrt_d,
        }),
        ..AssumptionMeta::default()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronalParams {
    pub d: usize,
    /// Exponent of the radial rate `b(r) = r^α`.
    pub alpha: f64,
    /// Growth constant in `b' ≤ γ·b + c`; `c` is derived from it.
    pub gamma: f64,
    /// Bound of the bounded rate part `H / (1 + ‖x‖²)`, which keeps a
    /// spontaneous rate `H` at rest.
    pub h_bound: f64,
    /// Reset positions are uniform on `[0, u_max]^d`.
    pub u_max: f64,
    /// `E‖V‖` of the collateral kick `V(h₁, h₂) = E‖V‖·(h₁ + h₂)·e`,
    /// with `e` the unit diagonal direction.
    pub v_mean_norm: f64,
    /// Constant `K` in `K·γ·E‖V‖ < 1`. Values other than 5 are rejected
    /// unless `override_gamma_factor` is set.
    pub gamma_factor: f64,
    pub override_gamma_factor: bool,
}

impl Default for NeuronalParams {
    fn default() -> Self {
        Self {
            d: 1,
            alpha: 2.0,
            gamma: 0.1,
            h_bound: 0.5,
            u_max: 1.0,
            v_mean_norm: 0.5,
            gamma_factor: 5.0,
            override_gamma_factor: false,
        }
    }
}

/// Smallest `c` with `α·r^{α−1} ≤ γ·r^α + c` for all `r > 0`.
pub fn derived_c(alpha: f64, gamma: f64) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    ((alpha - 1.0) / gamma).powf(alpha - 1.0)
}

/// Maps one uniform mark to a point uniform on the dyadic grid of
/// `[0, 1]^d` by dealing its binary digits round-robin to the coordinates.
pub fn spread_mark(h: f64, out: &mut [f64]) {
    let d = out.len();
    if d == 1 {
        out[0] = h;
        return;
    }
    let bits = (h * (1u64 << 52) as f64) as u64;
    out.fill(0.0);
    let mut scale = vec![0.5; d];
    for b in 0..52 {
        let bit = (bits >> (51 - b)) & 1;
        let k = b % d;
        out[k] += bit as f64 * scale[k];
        scale[k] *= 0.5;
    }
}

pub fn neuronal(p: &NeuronalParams) -> Result<ModelSpec> {
    check_dim(p.d)?;
    if !(p.alpha >= 1.0 && p.alpha.is_finite()) {
        return Err(Error::Constraint(format!("α = {} must be ≥ 1", p.alpha)));
    }
    if !(p.gamma > 0.0 && p.h_bound >= 0.0 && p.u_max >= 0.0 && p.v_mean_norm >= 0.0) {
        return Err(Error::Constraint(
            "neuronal needs γ > 0, H ≥ 0, u_max ≥ 0 and E‖V‖ ≥ 0".into(),
        ));
    }
    if p.gamma_factor != 5.0 && !p.override_gamma_factor {
        return Err(Error::Constraint(format!(
            "gamma_factor = {} differs from 5; set override_gamma_factor = true to accept a model \
             that violates the growth condition as stated",
            p.gamma_factor
        )));
    }
    let k = p.gamma_factor;
    let lhs = k * p.gamma * p.v_mean_norm;
    if lhs >= 1.0 {
        return Err(Error::Constraint(format!(
            "{k}·γ·E‖V‖ = {k}·{}·{} = {lhs} must be < 1",
            p.gamma, p.v_mean_norm
        )));
    }
    let d = p.d;
    let (alpha, hb, u_max, vm) = (p.alpha, p.h_bound, p.u_max, p.v_mean_norm);
    let e = 1.0 / (d as f64).sqrt();
    let b = move |r: f64| r.powf(alpha);
    let db = move |r: f64| alpha * r.powf(alpha - 1.0);
    let spec = ModelSpec::new("neuronal", d, 1)
        .with_class(ClassTag::SuperlinearRate)
        .with_drift(|x, _, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -xi;
            }
        })
        .with_rate(move |x, _| {
            let r2 = x.iter().map(|v| v * v).sum::<f64>();
            b(r2.sqrt()) + hb / (1.0 + r2)
        })
        .with_rate_bound(RateBound::Local {
            factor: 2.0,
            floor: 1.0,
        })
        .with_main_jump(move |x, _, h, out| {
            spread_mark(h, out);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = u_max * *o - xi;
            }
        })
        .with_main_jump_mean(move |x, _, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = 0.5 * u_max - xi;
            }
        })
        .with_collateral(
            move |_, _, _, h1, h2, out| out.fill(vm * (h1 + h2) * e),
            CollateralMean::TargetFree(Arc::new(move |_, _, out| out.fill(vm * e))),
        )
        .with_measure_free_jumps()
        .with_event_driven(move |r| b(r) + hb);
    let mean_u = if d == 1 {
        0.5 * u_max
    } else {
        // upper bound through E‖U‖ ≤ (E‖U‖²)^{1/2}
        u_max * (d as f64 / 3.0).sqrt()
    };
    Ok(spec.with_meta(AssumptionMeta {
        rate_radial: Some((Arc::new(b), Arc::new(db))),
        gamma: Some(p.gamma),
        c: Some(derived_c(alpha, p.gamma)),
        h_bound: Some(hb),
        mean_v_norm: Some(vm),
        mean_u_norm: Some(mean_u),
        u_radius: Some(u_max * (d as f64).sqrt()),
        v_radius: Some(2.0 * vm),
        gamma_factor: k,
        ..AssumptionMeta::default()
    }))
}

fn parse<P: serde::de::DeserializeOwned>(id: &str, params: &toml::Table) -> Result<P> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e| Error::Config(format!("[model.params] for {id}: {e}")))
}

/// Builds a zoo model from its id and a parameter table; missing keys take
/// their defaults, unknown keys are errors.
pub fn build(model_id: &str, params: &toml::Table) -> Result<ModelSpec> {
    match model_id {
        "lipschitz-demo" => lipschitz_demo(&parse(model_id, params)?),
        "convex-potential" => convex_potential(&parse(model_id, params)?),
        "neuronal" => neuronal(&parse(model_id, params)?),
        other => Err(Error::invalid(format!(
            "unknown model id {other:?} (expected one of {})",
            MODEL_IDS.join(", ")
        ))),
    }
}
