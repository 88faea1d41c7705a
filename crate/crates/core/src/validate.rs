//! Numerical probes of the structural assumptions declared on a model.
//!
//! A `pass` only means that no violation was found among the probes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::measure::EmpiricalMeasure;
use crate::metrics::w1_assignment;
use crate::model::{ClassTag, ModelSpec};
use crate::rng::{StreamKey, StreamKind, StreamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Number of sampled probe pairs per condition.
    pub budget: usize,
    /// Probe points are drawn from the cube `[−radius, radius]^d`.
    pub radius: f64,
    /// Relative step of the central differences.
    pub fd_step: f64,
    /// Number of atoms of each probe measure.
    pub measure_size: usize,
    /// Points of the log-spaced radial grid on `[1e−3, 1e3]`.
    pub radial_grid: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            budget: 256,
            radius: 3.0,
            fd_step: 1e-6,
            measure_size: 6,
            radial_grid: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Indeterminate,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Indeterminate => "indeterminate",
            Verdict::Fail => "fail",
        })
    }
}

/// Concrete input at which a condition failed or could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    /// Atoms of the probe measures, flattened.
    pub mu: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; negative when violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub verdict: Verdict,
    pub declared: Option<f64>,
    /// Largest ratio or value seen over the probes.
    pub estimate: Option<f64>,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub class: ClassTag,
    pub overall: Verdict,
    pub conditions: Vec<Condition>,
    pub probe: ProbeConfig,
    /// Coefficient evaluations spent.
    pub evaluations: usize,
}

impl AssumptionReport {
    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model {} ({:?})", self.model, self.class)?;
        writeln!(
            f,
            "{} probes per condition, radius {}, {} evaluations; pass = no violation found",
            self.probe.budget, self.probe.radius, self.evaluations
        )?;
        for c in &self.conditions {
            write!(f, "  {:<28} {:<13}", c.name, c.verdict.to_string())?;
            if let Some(e) = c.estimate {
                write!(f, " estimate {e:.6}")?;
            }
            if let Some(d) = c.declared {
                write!(f, " declared {d:.6}")?;
            }
            writeln!(f)?;
            if let Some(w) = &c.witness {
                writeln!(
                    f,
                    "      {}: {} vs {} (margin {:.3e}) at x = {:?}",
                    w.inequality, w.lhs, w.rhs, w.margin, w.x
                )?;
            }
            if let Some(n) = &c.note {
                writeln!(f, "      note: {n}")?;
            }
        }
        write!(f, "overall: {}", self.overall)
    }
}

const PROBE_REPLICA: u64 = u64::MAX - 2;
const REL_TOL: f64 = 1e-9;

struct Prober<'a> {
    spec: &'a ModelSpec,
    cfg: ProbeConfig,
    evaluations: usize,
}

struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    w1: f64,
    h: f64,
}

/// Running worst case of one condition.
struct Tracker {
    name: &'static str,
    declared: Option<f64>,
    worst: f64,
    witness: Option<Witness>,
    failed: bool,
    indeterminate: Option<Witness>,
    note: Option<String>,
}

impl Tracker {
    fn new(name: &'static str, declared: Option<f64>) -> Self {
        Self {
            name,
            declared,
            worst: f64::NEG_INFINITY,
            witness: None,
            failed: false,
            indeterminate: None,
            note: None,
        }
    }

    /// Records `lhs ≤ rhs`; `ratio` is what goes into the estimate.
    fn check(&mut self, ratio: f64, lhs: f64, rhs: f64, what: &str, wit: impl FnOnce() -> Witness) {
        if !lhs.is_finite() || !rhs.is_finite() || ratio.is_nan() {
            if self.indeterminate.is_none() {
                let mut w = wit();
                w.inequality = format!("non-finite evaluation in {what}");
                w.lhs = lhs;
                w.rhs = rhs;
                w.margin = f64::NAN;
                self.indeterminate = Some(w);
            }
            return;
        }
        if ratio > self.worst {
            self.worst = ratio;
        }
        let violated = lhs > rhs + REL_TOL * rhs.abs().max(1.0);
        if violated && !self.failed {
            self.failed = true;
            let mut w = wit();
            w.inequality = what.to_string();
            w.lhs = lhs;
            w.rhs = rhs;
            w.margin = rhs - lhs;
            self.witness = Some(w);
        }
    }

    fn finish(self) -> Condition {
        let verdict = if self.failed {
            Verdict::Fail
        } else if self.indeterminate.is_some() {
            Verdict::Indeterminate
        } else {
            Verdict::Pass
        };
        Condition {
            name: self.name.to_string(),
            verdict,
            declared: self.declared,
            estimate: self.worst.is_finite().then_some(self.worst),
            witness: self.witness.or(self.indeterminate),
            note: self.note,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn undeclared(name: &str, what: &str) -> Condition {
    Condition {
        name: name.to_string(),
        verdict: Verdict::Indeterminate,
        declared: None,
        estimate: None,
        witness: None,
        note: Some(format!("{what} is not declared on the model")),
    }
}

impl<'a> Prober<'a> {
    fn point(&self, s: &mut StreamState) -> Vec<f64> {
        (0..self.spec.d)
            .map(|_| self.cfg.radius * (2.0 * s.next_f64() - 1.0))
            .collect()
    }

    fn measure(&self, s: &mut StreamState) -> EmpiricalMeasure {
        let flat: Vec<f64> = (0..self.cfg.measure_size.max(1)).flat_map(|_| self.point(s)).collect();
        EmpiricalMeasure::from_flat_unchecked(self.spec.d, flat)
    }

    /// The probe sequence for one condition; odd probes use a second
    /// measure, even probes reuse the first. Prefixes do not depend on the
    /// budget.
    fn samples(&self, tag: u64) -> impl Iterator<Item = Sample> + '_ {
        let mut s = StreamKey::new(self.cfg.seed, PROBE_REPLICA, tag, StreamKind::Init).stream();
        (0..self.cfg.budget).map(move |p| {
            let x = self.point(&mut s);
            let y = self.point(&mut s);
            let z = self.point(&mut s);
            let w = self.point(&mut s);
            let mu = self.measure(&mut s);
            let nu = if p % 2 == 1 { self.measure(&mut s) } else { mu.clone() };
            let h = s.next_f64();
            let w1 = w1_assignment(&mu, &nu).unwrap_or(f64::NAN);
            Sample {
                x,
                y,
                z,
                w,
                mu,
                nu,
                w1,
                h,
            }
        })
    }

    fn witness(s: &Sample) -> Witness {
        Witness {
            x: s.x.clone(),
            y: Some(s.y.clone()),
            mu: Some(s.mu.as_flat().to_vec()),
            nu: Some(s.nu.as_flat().to_vec()),
            inequality: String::new(),
            lhs: 0.0,
            rhs: 0.0,
            margin: 0.0,
        }
    }

    fn rate_nonnegative(&mut self) -> Condition {
        let spec = self.spec;
        let mut t = Tracker::new("rate_nonnegative", None);
        for s in self.samples(1).collect::<Vec<_>>() {
            let lam = (spec.rate)(&s.x, &s.mu);
            self.evaluations += 1;
            t.check(-lam, -lam, 0.0, "λ(x, μ) ≥ 0", || Self::witness(&s));
        }
        let mut c = t.finish();
        c.estimate = c.estimate.map(|v| -v);
        c
    }

    fn drift_lipschitz(&mut self, l: f64) -> Condition {
        let spec = self.spec;
        let d = spec.d;
        let mut t = Tracker::new("drift_lipschitz", Some(l));
        let (mut fx, mut fy) = (vec![0.0; d], vec![0.0; d]);
        for s in self.samples(2).collect::<Vec<_>>() {
            (spec.drift)(&s.x, &s.mu, &mut fx);
            (spec.drift)(&s.y, &s.nu, &mut fy);
            self.evaluations += 2;
            let lhs = dist(&fx, &fy);
            let gap = dist(&s.x, &s.y) + s.w1;
            t.check(
                lhs / gap,
                lhs,
                l * gap,
                "‖F(x,μ) − F(y,ν)‖ ≤ L(‖x − y‖ + W1(μ,ν))",
                || Self::witness(&s),
            );
        }
        t.finish()
    }

    fn diffusion_lipschitz(&mut self, l: f64) -> Condition {
        let spec = self.spec;
        let Some(sigma) = &spec.diffusion else {
            return Condition {
                name: "diffusion_lipschitz".into(),
                verdict: Verdict::Pass,
                declared: Some(l),
                estimate: Some(0.0),
                witness: None,
                note: Some("no diffusion".into()),
            };
        };
        let m = spec.d * spec.d1;
        let mut t = Tracker::new("diffusion_lipschitz", Some(l));
        let (mut sx, mut sy) = (vec![0.0; m], vec![0.0; m]);
        for s in self.samples(3).collect::<Vec<_>>() {
            sigma(&s.x, &s.mu, &mut sx);
            sigma(&s.y, &s.nu, &mut sy);
            self.evaluations += 2;
            let lhs = dist(&sx, &sy);
            let gap = dist(&s.x, &s.y) + s.w1;
            t.check(
                lhs / gap,
                lhs,
                l * gap,
                "‖σ(x,μ) − σ(y,ν)‖_F ≤ L(‖x − y‖ + W1(μ,ν))",
                || Self::witness(&s),
            );
        }
        t.finish()
    }

    /// `∫∫ ‖ψ(x,μ,h)1{u<λ(x,μ)} − ψ(y,ν,h)1{u<λ(y,ν)}‖ du dh` by a midpoint
    /// rule in `h` and exactly in `u`.
    fn main_jump_l1(&mut self, l: f64) -> Condition {
        const NODES: usize = 64;
        let spec = self.spec;
        let d = spec.d;
        let mut t = Tracker::new("main_jump_l1_lipschitz", Some(l));
        let (mut px, mut py) = (vec![0.0; d], vec![0.0; d]);
        for s in self.samples(4).collect::<Vec<_>>() {
            let lx = (spec.rate)(&s.x, &s.mu);
            let ly = (spec.rate)(&s.y, &s.nu);
            let mut lhs = 0.0;
            for k in 0..NODES {
                let h = (k as f64 + 0.5) / NODES as f64;
                (spec.main_jump)(&s.x, &s.mu, h, &mut px);
                (spec.main_jump)(&s.y, &s.nu, h, &mut py);
                let big = if lx >= ly { norm(&px) } else { norm(&py) };
                lhs += (lx.min(ly) * dist(&px, &py) + (lx - ly).abs() * big) / NODES as f64;
            }
            self.evaluations += 2 + 2 * NODES;
            let gap = dist(&s.x, &s.y) + s.w1;
            t.check(
                lhs / gap,
                lhs,
                l * gap,
                "L¹ distance of main jump terms ≤ L(‖x − y‖ + W1(μ,ν))",
                || Self::witness(&s),
            );
        }
        t.finish()
    }

    fn collateral_l1(&mut self, l: f64) -> Condition {
        const NODES: usize = 16;
        let spec = self.spec;
        let d = spec.d;
        let Some(theta) = &spec.collateral else {
            return Condition {
                name: "collateral_l1_lipschitz".into(),
                verdict: Verdict::Pass,
                declared: Some(l),
                estimate: Some(0.0),
                witness: None,
                note: Some("no collateral jumps".into()),
            };
        };
        let mut t = Tracker::new("collateral_l1_lipschitz", Some(l));
        let (mut ax, mut ay) = (vec![0.0; d], vec![0.0; d]);
        for s in self.samples(5).collect::<Vec<_>>() {
            let lx = (spec.rate)(&s.x, &s.mu);
            let ly = (spec.rate)(&s.y, &s.nu);
            let mut lhs = 0.0;
            let w = 1.0 / (NODES * NODES) as f64;
            for a in 0..NODES {
                let h1 = (a as f64 + 0.5) / NODES as f64;
                for b in 0..NODES {
                    let h2 = (b as f64 + 0.5) / NODES as f64;
                    theta(&s.x, &s.z, &s.mu, h1, h2, &mut ax);
                    theta(&s.y, &s.w, &s.nu, h1, h2, &mut ay);
                    let big = if lx >= ly { norm(&ax) } else { norm(&ay) };
                    lhs += w * (lx.min(ly) * dist(&ax, &ay) + (lx - ly).abs() * big);
                }
            }
            self.evaluations += 2 + 2 * NODES * NODES;
            let gap = dist(&s.x, &s.y) + dist(&s.z, &s.w) + s.w1;
            t.check(
                lhs / gap,
                lhs,
                l * gap,
                "L¹ distance of collateral terms ≤ L(‖x − y‖ + ‖z − w‖ + W1(μ,ν))",
                || Self::witness(&s),
            );
        }
        t.finish()
    }

    fn convex_conditions(&mut self, out: &mut Vec<Condition>) {
        let spec = self.spec;
        let d = spec.d;
        let Some(cp) = spec.meta.convex.clone() else {
            out.push(undeclared("potential_monotone", "the potential gradient"));
            return;
        };
        let mut mono = Tracker::new("potential_monotone", None);
        let mut bounded = Tracker::new("interaction_bounded", Some(cp.interaction_bound));
        let mut lip = Tracker::new("interaction_lipschitz", Some(cp.interaction_lipschitz));
        let (mut gx, mut gy) = (vec![0.0; d], vec![0.0; d]);
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        for s in self.samples(6).collect::<Vec<_>>() {
            (cp.grad_potential)(&s.x, &mut gx);
            (cp.grad_potential)(&s.y, &mut gy);
            (cp.interaction)(&s.x, &s.mu, &mut bx);
            (cp.interaction)(&s.y, &s.nu, &mut by);
            self.evaluations += 4;
            let inner: f64 = (0..d).map(|k| (s.x[k] - s.y[k]) * (gx[k] - gy[k])).sum();
            mono.check(-inner, -inner, 0.0, "(x − y)·(∇U(x) − ∇U(y)) ≥ 0", || {
                Self::witness(&s)
            });
            let nb = norm(&bx);
            bounded.check(nb, nb, cp.interaction_bound, "‖b(x, μ)‖ ≤ bound", || {
                Self::witness(&s)
            });
            let lhs = dist(&bx, &by);
            let gap = dist(&s.x, &s.y) + s.w1;
            lip.check(
                lhs / gap,
                lhs,
                cp.interaction_lipschitz * gap,
                "‖b(x,μ) − b(y,ν)‖ ≤ L_b(‖x − y‖ + W1(μ,ν))",
                || Self::witness(&s),
            );
        }
        let mut m = mono.finish();
        m.estimate = m.estimate.map(|v| -v);
        m.note = Some("estimate is the smallest inner product seen".into());
        out.push(m);
        let mut b = bounded.finish();
        b.note = Some(
            "the supremum over all probability measures is probed only over empirical measures inside the probe cube"
                .into(),
        );
        out.push(b);
        out.push(lip.finish());
    }

    fn superlinear_conditions(&mut self, out: &mut Vec<Condition>) {
        let spec = self.spec;
        let meta = &spec.meta;
        let d = spec.d;
        out.push(growth_constant(spec));

        match (&meta.rate_radial, meta.gamma, meta.c) {
            (Some((b, db)), Some(gamma), Some(c)) => {
                let n = self.cfg.radial_grid.max(2);
                let mut growth = Tracker::new("radial_growth", Some(c));
                let mut deriv = Tracker::new("radial_derivative", None);
                let mut monotone = Tracker::new("radial_monotone", None);
                let mut prev = f64::NEG_INFINITY;
                for k in 0..n {
                    let r = 1e-3 * 1e6f64.powf(k as f64 / (n - 1) as f64);
                    let (br, dbr) = (b(r), db(r));
                    self.evaluations += 4;
                    let wit = || Witness {
                        x: vec![r],
                        y: None,
                        mu: None,
                        nu: None,
                        inequality: String::new(),
                        lhs: 0.0,
                        rhs: 0.0,
                        margin: 0.0,
                    };
                    let rhs = gamma * br + c;
                    growth.check(dbr - gamma * br, dbr, rhs, "b'(r) ≤ γ·b(r) + c", wit);
                    let step = self.cfg.fd_step * r.max(1.0);
                    let fd = (b(r + step) - b((r - step).max(0.0))) / (r + step - (r - step).max(0.0));
                    let err = (fd - dbr).abs();
                    let allowed = 1e-4 * dbr.abs().max(1.0);
                    deriv.check(
                        err / dbr.abs().max(1.0),
                        err,
                        allowed,
                        "declared b' matches central differences",
                        wit,
                    );
                    if k > 0 {
                        monotone.check(prev - br, prev, br, "b nondecreasing", wit);
                    }
                    monotone.check(-br, 0.0, br, "b(r) > 0", wit);
                    prev = br;
                }
                let mut g = growth.finish();
                g.note = Some(format!(
                    "log-spaced grid of {n} radii on [1e-3, 1e3]; estimate is sup(b' − γ·b)"
                ));
                out.push(g);
                out.push(deriv.finish());
                out.push(monotone.finish());
            }
            _ => out.push(undeclared("radial_growth", "(b, b', γ, c)")),
        }

        if let (Some((b, _)), Some(hb)) = (&meta.rate_radial, meta.h_bound) {
            let mut t = Tracker::new("bounded_rate_part", Some(hb));
            for s in self.samples(7).collect::<Vec<_>>() {
                let h = (spec.rate)(&s.x, &s.mu) - b(norm(&s.x));
                self.evaluations += 2;
                t.check(h.abs(), h.abs(), hb, "|λ(x) − b(‖x‖)| ≤ H", || {
                    Self::witness(&s)
                });
            }
            out.push(t.finish());
        } else {
            out.push(undeclared("bounded_rate_part", "H"));
        }

        if let Some(ur) = meta.u_radius {
            let mut t = Tracker::new("reset_bounded", Some(ur));
            let mut psi = vec![0.0; d];
            for s in self.samples(8).collect::<Vec<_>>() {
                (spec.main_jump)(&s.x, &s.mu, s.h, &mut psi);
                self.evaluations += 1;
                let landed: Vec<f64> = s.x.iter().zip(&psi).map(|(a, b)| a + b).collect();
                let nl = norm(&landed);
                t.check(nl, nl, ur, "‖x + ψ(x, μ, h)‖ ≤ sup‖U‖", || {
                    Self::witness(&s)
                });
            }
            out.push(t.finish());
        } else {
            out.push(undeclared("reset_bounded", "the support radius of U"));
        }

        match (&spec.collateral, meta.v_radius) {
            (None, _) => {}
            (Some(theta), Some(vr)) => {
                let mut t = Tracker::new("collateral_bounded", Some(vr));
                let mut v = vec![0.0; d];
                for s in self.samples(9).collect::<Vec<_>>() {
                    let h2 = (s.h * 7919.0).fract();
                    theta(&s.x, &s.z, &s.mu, s.h, h2, &mut v);
                    self.evaluations += 1;
                    let nv = norm(&v);
                    t.check(nv, nv, vr, "‖V(h1, h2)‖ ≤ sup‖V‖", || Self::witness(&s));
                }
                out.push(t.finish());
            }
            (Some(_), None) => out.push(undeclared("collateral_bounded", "the support radius of V")),
        }
    }
}

/// `K·γ·E‖V‖ < 1`, checked exactly from the declared constants.
fn growth_constant(spec: &ModelSpec) -> Condition {
    let meta = &spec.meta;
    let (Some(gamma), Some(ev)) = (meta.gamma, meta.mean_v_norm) else {
        return undeclared("gamma_constraint", "γ or E‖V‖");
    };
    let k = meta.gamma_factor;
    let lhs = k * gamma * ev;
    let ok = lhs < 1.0;
    let note = if k < 5.0 {
        Some(format!(
            "factor K = {k} is below 5; the growth condition as stated is violated"
        ))
    } else {
        None
    };
    Condition {
        name: "gamma_constraint".into(),
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        declared: Some(lhs),
        estimate: Some(lhs),
        witness: (!ok).then(|| Witness {
            x: vec![gamma, ev],
            y: None,
            mu: None,
            nu: None,
            inequality: format!("{k}·γ·E‖V‖ < 1"),
            lhs,
            rhs: 1.0,
            margin: 1.0 - lhs,
        }),
        note,
    }
}

/// Probes every assumption relevant to the model's class.
pub fn validate_model(spec: &ModelSpec, probe: &ProbeConfig) -> AssumptionReport {
    let mut p = Prober {
        spec,
        cfg: *probe,
        evaluations: 0,
    };
    let mut conditions = vec![p.rate_nonnegative()];
    match spec.class {
        ClassTag::Lipschitz | ClassTag::ConvexPotential => {
            if let Some(l) = spec.meta.lipschitz {
                if spec.class == ClassTag::Lipschitz {
                    conditions.push(p.drift_lipschitz(l));
                }
                conditions.push(p.diffusion_lipschitz(l));
                conditions.push(p.main_jump_l1(l));
                conditions.push(p.collateral_l1(l));
            } else {
                conditions.push(undeclared("lipschitz", "a Lipschitz constant"));
            }
            if spec.class == ClassTag::ConvexPotential {
                p.convex_conditions(&mut conditions);
            }
        }
        ClassTag::SuperlinearRate => p.superlinear_conditions(&mut conditions),
    }
    let overall = conditions.iter().map(|c| c.verdict).max().unwrap_or(Verdict::Pass);
    AssumptionReport {
        model: spec.name.clone(),
        class: spec.class,
        overall,
        conditions,
        probe: *probe,
        evaluations: p.evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssumptionMeta, RateBound};
    use crate::zoo;
    use std::sync::Arc;

    fn linear() -> ModelSpec {
        ModelSpec::new("linear", 1, 1)
            .with_drift(|x, _, out| out[0] = -x[0])
            .with_diffusion(|_, _, out| out[0] = 0.5)
            .with_rate(|_, _| 1.0)
            .with_rate_bound(RateBound::Global(1.0))
            .with_main_jump(|_, _, _, out| out[0] = 0.1)
            .with_meta(AssumptionMeta {
                lipschitz: Some(1.0),
                ..Default::default()
            })
    }

    #[test]
    fn linear_model_passes_with_unit_drift_constant() {
        let rep = validate_model(&linear(), &ProbeConfig::default());
        assert_eq!(rep.overall, Verdict::Pass, "{rep}");
        let est = rep.condition("drift_lipschitz").unwrap().estimate.unwrap();
        assert!((est - 1.0).abs() < 1e-12, "{est}");
    }

    #[test]
    fn too_small_constant_fails_with_witness() {
        let mut spec = linear();
        spec.meta.lipschitz = Some(0.5);
        let rep = validate_model(&spec, &ProbeConfig::default());
        assert_eq!(rep.overall, Verdict::Fail);
        let c = rep.condition("drift_lipschitz").unwrap();
        let w = c.witness.as_ref().unwrap();
        assert!(w.margin < 0.0 && w.lhs > w.rhs);
    }

    #[test]
    fn gamma_violation_is_reported() {
        let mut spec = zoo::neuronal(&zoo::NeuronalParams::default()).unwrap();
        spec.meta.gamma = Some(1.0);
        spec.meta.mean_v_norm = Some(1.0);
        let rep = validate_model(&spec, &ProbeConfig::default());
        let c = rep.condition("gamma_constraint").unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        assert_eq!(c.witness.as_ref().unwrap().lhs, 5.0);
    }

    #[test]
    fn quadratic_growth_check() {
        let mut spec = zoo::neuronal(&zoo::NeuronalParams::default()).unwrap();
        spec.meta.gamma = Some(0.05);
        spec.meta.c = Some(20.0);
        let rep = validate_model(&spec, &ProbeConfig::default());
        assert_eq!(rep.condition("radial_growth").unwrap().verdict, Verdict::Pass);
        spec.meta.c = Some(19.0);
        let rep = validate_model(&spec, &ProbeConfig::default());
        assert_eq!(rep.condition("radial_growth").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn non_finite_is_indeterminate() {
        let spec = linear().with_rate(|x, _| if x[0] > 2.0 { f64::NAN } else { 1.0 });
        let rep = validate_model(&spec, &ProbeConfig::default());
        let c = rep.condition("rate_nonnegative").unwrap();
        assert_eq!(c.verdict, Verdict::Indeterminate);
        assert!(c.witness.as_ref().unwrap().x[0] > 2.0);
        assert_eq!(rep.overall, Verdict::Indeterminate);
    }

    #[test]
    fn zoo_models_pass_by_default() {
        let t = toml::Table::new();
        for id in zoo::MODEL_IDS {
            let spec = zoo::build(id, &t).unwrap();
            let rep = validate_model(&spec, &ProbeConfig::default());
            assert_eq!(rep.overall, Verdict::Pass, "{rep}");
        }
        let spec = zoo::build("lipschitz-demo", &"d = 2\nv0 = 0.0\nbeta = 0.0".parse().unwrap()).unwrap();
        assert_eq!(validate_model(&spec, &ProbeConfig::default()).overall, Verdict::Pass);
    }

    #[test]
    fn deterministic_and_monotone_in_budget() {
        let spec = zoo::build("lipschitz-demo", &"d = 2".parse().unwrap()).unwrap();
        let big = ProbeConfig {
            budget: 128,
            seed: 5,
            ..Default::default()
        };
        let small = ProbeConfig { budget: 32, ..big };
        let a = validate_model(&spec, &big);
        assert_eq!(a, validate_model(&spec, &big));
        let b = validate_model(&spec, &small);
        for (cb, ca) in b.conditions.iter().zip(&a.conditions) {
            if !cb.name.ends_with("lipschitz") {
                continue;
            }
            if let (Some(eb), Some(ea)) = (cb.estimate, ca.estimate) {
                assert!(eb <= ea);
            }
        }
        assert_eq!(b.overall, Verdict::Pass);
    }

    #[test]
    fn convex_monotonicity_failure() {
        let mut spec = zoo::build("convex-potential", &toml::Table::new()).unwrap();
        let mut cp = spec.meta.convex.clone().unwrap();
        cp.grad_potential = Arc::new(|x, out| out[0] = -x[0]);
        spec.meta.convex = Some(cp);
        let rep = validate_model(&spec, &ProbeConfig::default());
        assert_eq!(rep.condition("potential_monotone").unwrap().verdict, Verdict::Fail);
    }
}
