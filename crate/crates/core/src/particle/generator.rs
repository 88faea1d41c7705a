//! Action of the N-particle generator on smooth test functions.

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::rng::{StreamKey, StreamKind};

/// A function of the whole configuration `x ∈ R^{N·d}` (row-major).
pub trait TestFunction {
    fn eval(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
    /// `d × d` block `∂²φ / ∂x_i ∂x_i` for particle `i`.
    fn hessian_block(&self, x: &[f64], i: usize, d: usize, out: &mut [f64]);
    /// Affine functions let the jump term be computed from mark means alone.
    fn is_affine(&self) -> bool {
        false
    }
}

/// `φ(x) = c + ⟨a, x⟩`.
#[derive(Debug, Clone)]
pub struct AffineTest {
    pub coef: Vec<f64>,
    pub constant: f64,
}

impl AffineTest {
    /// `φ(x) = x_{i,c}`.
    pub fn coordinate(n: usize, d: usize, i: usize, c: usize) -> Self {
        let mut coef = vec![0.0; n * d];
        coef[i * d + c] = 1.0;
        Self { coef, constant: 0.0 }
    }

    pub fn constant(n: usize, d: usize, value: f64) -> Self {
        Self {
            coef: vec![0.0; n * d],
            constant: value,
        }
    }
}

impl TestFunction for AffineTest {
    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }

    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coef);
    }

    fn hessian_block(&self, _x: &[f64], _i: usize, _d: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// `φ(x) = Σ_k a_k x_k + ½ Σ_k b_k x_k²`.
#[derive(Debug, Clone)]
pub struct QuadraticTest {
    pub linear: Vec<f64>,
    pub diag: Vec<f64>,
}

impl TestFunction for QuadraticTest {
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.linear.iter().zip(&self.diag))
            .map(|(v, (a, b))| a * v + 0.5 * b * v * v)
            .sum()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.linear[k] + self.diag[k] * x[k];
        }
    }

    fn hessian_block(&self, _x: &[f64], i: usize, d: usize, out: &mut [f64]) {
        out.fill(0.0);
        for c in 0..d {
            out[c * d + c] = self.diag[i * d + c];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorValue {
    /// Exact up to quadrature, or a Monte Carlo estimate within tolerance.
    Determinate { value: f64, std_error: f64 },
    /// Monte Carlo over marks did not reach the tolerance.
    Indeterminate { value: f64, std_error: f64 },
}

impl GeneratorValue {
    pub fn value(&self) -> f64 {
        match *self {
            GeneratorValue::Determinate { value, .. } | GeneratorValue::Indeterminate { value, .. } => value,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorOptions {
    /// Target standard error of the Monte Carlo jump term.
    pub tol: f64,
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_samples: 1 << 18,
            seed: 0,
        }
    }
}

/// `L^N φ(x)`: drift and diffusion terms per particle, plus for each
/// particle the rate-weighted expected change of `φ` under its main jump
/// and the collateral jumps `Θ/N` it induces on the others.
pub fn generator_apply(
    spec: &ModelSpec,
    phi: &dyn TestFunction,
    x: &[f64],
    opts: &GeneratorOptions,
) -> Result<GeneratorValue> {
    let d = spec.d;
    if x.is_empty() || !x.len().is_multiple_of(d) {
        return Err(Error::invalid("configuration length is not a multiple of d"));
    }
    let n = x.len() / d;
    let mu = EmpiricalMeasure::from_flat(d, x.to_vec())?;
    let mut grad = vec![0.0; n * d];
    phi.grad(x, &mut grad);
    let mut hess = vec![0.0; d * d];
    let mut f = vec![0.0; d];
    let mut sigma = vec![0.0; d * spec.d1];
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    let mut var = 0.0;
    let mut converged = true;

    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let gi = &grad[i * d..(i + 1) * d];
        (spec.drift)(xi, &mu, &mut f);
        total += f.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();

        if let Some(s) = &spec.diffusion {
            s(xi, &mu, &mut sigma);
            phi.hessian_block(x, i, d, &mut hess);
            let d1 = spec.d1;
            let mut acc = 0.0;
            for r in 0..d {
                for c in 0..d {
                    let a_rc: f64 = (0..d1).map(|k| sigma[r * d1 + k] * sigma[c * d1 + k]).sum();
                    acc += a_rc * hess[r * d + c];
                }
            }
            total += 0.5 * acc;
        }

        let lam = (spec.rate)(xi, &mu);
        if lam == 0.0 {
            continue;
        }
        if phi.is_affine() {
            spec.main_jump_mean_at(xi, &mu, &mut buf);
            let mut jump = buf.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
            if spec.has_collateral() {
                for j in (0..n).filter(|&j| j != i) {
                    spec.collateral_mean_at(xi, &x[j * d..(j + 1) * d], &mu, &mut buf);
                    let gj = &grad[j * d..(j + 1) * d];
                    jump += buf.iter().zip(gj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                }
            }
            total += lam * jump;
        } else {
            let (mean, se, ok) = mc_jump_term(spec, phi, x, &mu, i, opts);
            total += lam * mean;
            var += (lam * se).powi(2);
            converged &= ok;
        }
    }
    let std_error = var.sqrt();
    Ok(if converged {
        GeneratorValue::Determinate {
            value: total,
            std_error,
        }
    } else {
        GeneratorValue::Indeterminate {
            value: total,
            std_error,
        }
    })
}

/// Monte Carlo estimate of `E_h[φ(x + Δ_i(h)) − φ(x)]`, doubling the sample
/// size until the standard error is below `opts.tol`.
fn mc_jump_term(
    spec: &ModelSpec,
    phi: &dyn TestFunction,
    x: &[f64],
    mu: &EmpiricalMeasure,
    i: usize,
    opts: &GeneratorOptions,
) -> (f64, f64, bool) {
    let d = spec.d;
    let n = x.len() / d;
    let base = phi.eval(x);
    let mut stream = StreamKey::new(opts.seed, u64::MAX - 1, i as u64, StreamKind::Marks).stream();
    let mut moved = x.to_vec();
    let mut buf = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut target = 256usize;
    loop {
        while count < target {
            moved.copy_from_slice(x);
            let h_i = stream.next_f64();
            let xi = &x[i * d..(i + 1) * d];
            (spec.main_jump)(xi, mu, h_i, &mut buf);
            for c in 0..d {
                moved[i * d + c] += buf[c];
            }
            if let Some(theta) = &spec.collateral {
                for j in (0..n).filter(|&j| j != i) {
                    let h_j = stream.next_f64();
                    theta(xi, &x[j * d..(j + 1) * d], mu, h_i, h_j, &mut buf);
                    for c in 0..d {
                        moved[j * d + c] += buf[c] / n as f64;
                    }
                }
            }
            let v = phi.eval(&moved) - base;
            sum += v;
            sum_sq += v * v;
            count += 1;
        }
        let mean = sum / count as f64;
        let var = ((sum_sq / count as f64) - mean * mean).max(0.0) * count as f64 / (count - 1) as f64;
        let se = (var / count as f64).sqrt();
        if se <= opts.tol {
            return (mean, se, true);
        }
        if target >= opts.max_samples {
            return (mean, se, false);
        }
        target = (target * 2).min(opts.max_samples);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CollateralMean;
    use std::sync::Arc;

    fn value(v: GeneratorValue) -> f64 {
        match v {
            GeneratorValue::Determinate { value, .. } => value,
            GeneratorValue::Indeterminate { .. } => panic!("indeterminate"),
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let spec = ModelSpec::new("m", 1, 1)
            .with_drift(|x, _, o| o[0] = -x[0])
            .with_diffusion(|_, _, o| o[0] = 1.0)
            .with_rate(|_, _| 2.0)
            .with_main_jump(|_, _, h, o| o[0] = h);
        let x = [0.3, -0.4, 1.2];
        let v = generator_apply(
            &spec,
            &AffineTest::constant(3, 1, 5.0),
            &x,
            &GeneratorOptions::default(),
        )
        .unwrap();
        assert_eq!(value(v), 0.0);
    }

    #[test]
    fn first_order_term_only() {
        let spec = ModelSpec::new("m", 1, 1).with_drift(|x, _, o| o[0] = -x[0]);
        let x = [0.7, 0.1];
        let v = generator_apply(
            &spec,
            &AffineTest::coordinate(2, 1, 0, 0),
            &x,
            &GeneratorOptions::default(),
        )
        .unwrap();
        assert!((value(v) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn constant_jumps_give_rate_times_amplitude() {
        let spec = ModelSpec::new("m", 1, 1)
            .with_rate(|_, _| 1.5)
            .with_main_jump(|_, _, _, o| o[0] = 0.4);
        let x = [0.0, 2.0, -1.0];
        let v = generator_apply(
            &spec,
            &AffineTest::coordinate(3, 1, 0, 0),
            &x,
            &GeneratorOptions::default(),
        )
        .unwrap();
        assert!((value(v) - 1.5 * 0.4).abs() < 1e-12);
    }

    #[test]
    fn quadratic_matches_affine_path_and_diffusion() {
        // φ = ½ x_1²: L φ = F x_1 + ½ σ² + λ E[(x_1+ψ)² − x_1²]/2, with ψ = h
        let spec = ModelSpec::new("m", 1, 1)
            .with_drift(|x, _, o| o[0] = -x[0])
            .with_diffusion(|_, _, o| o[0] = 0.5)
            .with_rate(|_, _| 1.0)
            .with_main_jump(|_, _, h, o| o[0] = h);
        let x = [0.8, 0.0];
        let phi = QuadraticTest {
            linear: vec![0.0, 0.0],
            diag: vec![1.0, 0.0],
        };
        let opts = GeneratorOptions {
            tol: 2e-3,
            ..Default::default()
        };
        let v = generator_apply(&spec, &phi, &x, &opts).unwrap();
        let exact = -0.64 + 0.125 + (0.8 * 0.5 + 1.0 / 6.0);
        let GeneratorValue::Determinate { value, std_error } = v else {
            panic!("indeterminate")
        };
        assert!((value - exact).abs() < 4.0 * std_error + 1e-9, "{value} vs {exact}");
    }

    #[test]
    fn collateral_means_enter_other_coordinates() {
        let spec = ModelSpec::new("m", 1, 1).with_rate(|_, _| 2.0).with_collateral(
            |_, _, _, _, _, o| o[0] = 1.0,
            CollateralMean::TargetFree(Arc::new(|_, _, o| o[0] = 1.0)),
        );
        let x = [0.0; 4];
        // φ = x_2: three jumpers each move particle 2 by 1/4 at rate 2
        let v = generator_apply(
            &spec,
            &AffineTest::coordinate(4, 1, 1, 0),
            &x,
            &GeneratorOptions::default(),
        )
        .unwrap();
        assert!((value(v) - 3.0 * 2.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn tiny_budget_is_indeterminate() {
        let spec = ModelSpec::new("m", 1, 1)
            .with_rate(|_, _| 1.0)
            .with_main_jump(|_, _, h, o| o[0] = h);
        let phi = QuadraticTest {
            linear: vec![0.0],
            diag: vec![1.0],
        };
        let opts = GeneratorOptions {
            tol: 1e-9,
            max_samples: 512,
            seed: 1,
        };
        let v = generator_apply(&spec, &phi, &[0.0], &opts).unwrap();
        assert!(matches!(v, GeneratorValue::Indeterminate { .. }));
    }
}
