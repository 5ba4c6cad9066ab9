//! Synthesis of the stationary Gaussian classical field ξ(t).
//!
//! The classical correlation is expanded in cosines on [−T, T],
//! C_class(t) ≈ c₀ + 2Σ c_n cos(nπt/T), and the field
//! ξ(t) = √c₀ ξ₀ + Σ √(2c_n)[ξ_n cos(nπt/T) + ξ₋n sin(nπt/T)]
//! reproduces it in expectation. The sine terms are what make the
//! synthesized correlation stationary (a function of t₂ − t₁ alone).
//! Complex or negative c_n are allowed: the principal square root then
//! makes the field imaginary-valued.

use crate::bath::{BathError, ClassTail, CorrelationDecomposition, ExpTerm};
use crate::quad::{self, CompositeGrid, QuadTol};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error(
        "coefficient quadrature failed at n = {n}: error estimate {achieved:.3e} above {requested:.3e}"
    )]
    CoefficientQuadrature { n: usize, achieved: f64, requested: f64 },
    #[error("analytic coefficients unavailable: {0}")]
    UnsupportedVariant(String),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Quadrature(#[from] quad::QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffProvenance {
    Analytic,
    Quadrature,
}

/// Cosine-expansion model of the classical correlation on [−T, T].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Window T (the dynamics horizon must satisfy T_dynamics ≤ T).
    pub window: f64,
    /// c_0..c_{N_ξ}.
    pub coeffs: Vec<Complex64>,
    pub provenance: CoeffProvenance,
}

impl NoiseModel {
    pub fn n_xi(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Expected field correlation c₀ + 2Σ c_n cos(nπt/T).
    pub fn expected_correlation(&self, t: f64) -> Complex64 {
        let mut acc = self.coeffs[0];
        for (n, &c) in self.coeffs.iter().enumerate().skip(1) {
            acc += 2.0 * c * (n as f64 * PI * t / self.window).cos();
        }
        acc
    }

    /// Upper bound on the std of the empirical correlation estimator:
    /// σ²_emp ≤ [|C(0)|² + |C(t)|²]/N.
    pub fn empirical_sigma_bound(&self, t: f64, n_samples: usize) -> f64 {
        let c0 = self.expected_correlation(0.0).norm();
        let ct = self.expected_correlation(t).norm();
        ((c0 * c0 + ct * ct) / n_samples as f64).sqrt()
    }

    pub fn write_coeffs_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,re_c,im_c")?;
        for (n, c) in self.coeffs.iter().enumerate() {
            writeln!(w, "{n},{:.16e},{:.16e}", c.re, c.im)?;
        }
        Ok(())
    }
}

/// L_n(ω) = (e^{ωT}e^{inπ} − 1)·ωT/((ωT)² + (nπ)²): the cosine coefficient
/// of e^{ω|t|} on [−T, T].
pub fn l_n(omega: Complex64, window: f64, n: usize) -> Complex64 {
    let wt = omega * window;
    let npi = n as f64 * PI;
    if n == 0 && wt.norm() < 1e-6 {
        // (e^{wT} − 1)/(wT) by series
        Complex64::new(1.0, 0.0) + wt / 2.0 + wt * wt / 6.0 + wt * wt * wt / 24.0
    } else {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        (wt.exp() * sign - 1.0) * wt / (wt * wt + npi * npi)
    }
}

/// Fourier coefficients by quadrature of the inner-product definition
/// c_n = (1/2T)∫_{−T}^{T} cos(nπτ/T) C_class(τ) dτ (evenness folds it onto
/// [0, T]). A fixed composite Gauss–Kronrod grid fine enough for the
/// fastest cosine is used, with panel doubling as the error estimate.
pub fn coeffs_quadrature_fn<F: Fn(f64) -> Complex64>(
    c_class: F,
    window: f64,
    n_xi: usize,
    abs_tol: f64,
) -> Result<NoiseModel, NoiseError> {
    let m1 = (n_xi + 1).max(512);
    let coarse = coeffs_on_grid(&c_class, window, n_xi, m1);
    let fine = coeffs_on_grid(&c_class, window, n_xi, 2 * m1);
    for n in 0..=n_xi {
        let err = (fine[n] - coarse[n]).norm();
        if err > abs_tol {
            return Err(NoiseError::CoefficientQuadrature {
                n,
                achieved: err,
                requested: abs_tol,
            });
        }
    }
    Ok(NoiseModel {
        window,
        coeffs: fine,
        provenance: CoeffProvenance::Quadrature,
    })
}

fn coeffs_on_grid<F: Fn(f64) -> Complex64>(
    c_class: &F,
    window: f64,
    n_xi: usize,
    n_panels: usize,
) -> Vec<Complex64> {
    let grid = CompositeGrid::new(0.0, window, n_panels);
    let values: Vec<Complex64> = grid.points.iter().map(|&t| c_class(t)).collect();
    let m = grid.points.len();
    // Chebyshev recurrence over n: cos((n+1)θ) = 2cosθ·cos(nθ) − cos((n−1)θ)
    let cos1: Vec<f64> = grid.points.iter().map(|&t| (PI * t / window).cos()).collect();
    let mut prev: Vec<f64> = vec![1.0; m];
    let mut cur: Vec<f64> = cos1.clone();
    let mut out = Vec::with_capacity(n_xi + 1);
    for n in 0..=n_xi {
        let basis: &[f64] = if n == 0 { &prev } else { &cur };
        let mut acc = ZERO;
        for k in 0..m {
            acc += grid.weights[k] * basis[k] * values[k];
        }
        out.push(acc / window);
        if n >= 1 {
            let mut next = vec![0.0; m];
            for k in 0..m {
                next[k] = 2.0 * cos1[k] * cur[k] - prev[k];
            }
            prev = std::mem::replace(&mut cur, next);
        }
    }
    out
}

/// Coefficients by quadrature of the decomposition's classical correlation.
pub fn coeffs_quadrature(
    dec: &CorrelationDecomposition,
    n_xi: usize,
    abs_tol: f64,
) -> Result<NoiseModel, NoiseError> {
    // surface evaluator failures up front; grid points are interior, so a
    // mid-grid failure would hit the same error path
    dec.c_class(0.5 * dec.window)?;
    coeffs_quadrature_fn(
        |t| {
            dec.c_class(t)
                .expect("classical correlation evaluation failed mid-grid")
        },
        dec.window,
        n_xi,
        abs_tol,
    )
}

/// Closed-form coefficients: Σ coef·L_n(rate) over the exponential part of
/// C_class plus, at zero temperature, (i/π)∫₀^∞ J(ix)·L_n(−x) dx.
pub fn coeffs_analytic(
    dec: &CorrelationDecomposition,
    n_xi: usize,
) -> Result<NoiseModel, NoiseError> {
    match dec.class_tail {
        ClassTail::None | ClassTail::ZeroTemperatureIntegral => {}
        _ => {
            return Err(NoiseError::UnsupportedVariant(
                "closed-form coefficients need a rational spectral density".into(),
            ))
        }
    }
    let window = dec.window;
    let mut coeffs = vec![ZERO; n_xi + 1];
    for (n, c) in coeffs.iter_mut().enumerate() {
        *c = dec
            .class_exp
            .iter()
            .map(|ExpTerm { coef, rate }| coef * l_n(*rate, window, n))
            .sum();
    }
    if matches!(dec.class_tail, ClassTail::ZeroTemperatureIntegral) {
        // (i/π)∫ J(ix) L_n(−x) dx is real: J(ix) is purely imaginary for
        // the densities admitted at zero T, so compute a real integral
        let scale = dec.j.scale();
        for (n, c) in coeffs.iter_mut().enumerate() {
            let g = |x: f64| {
                let jval = dec.j.eval_complex(Complex64::new(0.0, x));
                let ln = l_n(Complex64::new(-x, 0.0), window, n);
                Complex64::new(-jval.im * ln.re / PI, 0.0)
            };
            let peak = (n as f64 * PI / window).max(scale);
            let r = quad::semi_infinite(&g, peak, dec.quad_tol)?;
            *c += Complex64::new(r.value.re, 0.0);
        }
    }
    Ok(NoiseModel {
        window,
        coeffs,
        provenance: CoeffProvenance::Analytic,
    })
}

/// Principal square root with exact handling of the real axis, so purely
/// negative coefficients give purely imaginary amplitudes.
fn sqrt_principal(z: Complex64) -> Complex64 {
    if z.im == 0.0 {
        if z.re >= 0.0 {
            Complex64::new(z.re.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-z.re).sqrt())
        }
    } else {
        z.sqrt()
    }
}

/// One realization of ξ(t): the Gaussian draws plus the precomputed
/// amplitudes √c₀ξ₀, √(2c_n)ξ_n, √(2c_n)ξ₋n.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub window: f64,
    pub seed: u64,
    pub stream: u64,
    /// Draw order: ξ₀, then (ξ_n, ξ₋n) for n = 1..N_ξ.
    pub draws: Vec<f64>,
    amp0: Complex64,
    cos_amp: Vec<Complex64>,
    sin_amp: Vec<Complex64>,
}

/// Draw a field realization from a counter-based generator keyed by
/// (seed, stream): identical keys give bitwise-identical fields regardless
/// of thread scheduling.
pub fn sample_field(model: &NoiseModel, seed: u64, stream: u64) -> NoiseRealization {
    let n_xi = model.n_xi();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = StandardNormal;
    let mut draws = Vec::with_capacity(2 * n_xi + 1);
    for _ in 0..2 * n_xi + 1 {
        let x: f64 = normal.sample(&mut rng);
        draws.push(x);
    }
    let amp0 = sqrt_principal(model.coeffs[0]) * draws[0];
    let mut cos_amp = Vec::with_capacity(n_xi);
    let mut sin_amp = Vec::with_capacity(n_xi);
    for n in 1..=n_xi {
        let root = sqrt_principal(2.0 * model.coeffs[n]);
        cos_amp.push(root * draws[2 * n - 1]);
        sin_amp.push(root * draws[2 * n]);
    }
    NoiseRealization {
        window: model.window,
        seed,
        stream,
        draws,
        amp0,
        cos_amp,
        sin_amp,
    }
}

impl NoiseRealization {
    /// Exact trigonometric evaluation at one time.
    pub fn evaluate(&self, t: f64) -> Complex64 {
        let mut acc = self.amp0;
        for (n, (&ca, &sa)) in self.cos_amp.iter().zip(self.sin_amp.iter()).enumerate() {
            let phase = (n + 1) as f64 * PI * t / self.window;
            let (s, c) = phase.sin_cos();
            acc += ca * c + sa * s;
        }
        acc
    }

    /// Exact evaluation on the uniform grid t = m·dt, m = 0..n_points−1,
    /// via per-component rotation recurrences.
    pub fn evaluate_uniform_grid(&self, n_points: usize, dt: f64) -> Vec<Complex64> {
        let mut out = vec![self.amp0; n_points];
        for (idx, (&ca, &sa)) in self.cos_amp.iter().zip(self.sin_amp.iter()).enumerate() {
            if ca == ZERO && sa == ZERO {
                continue;
            }
            let theta = (idx + 1) as f64 * PI * dt / self.window;
            let (dsin, dcos) = theta.sin_cos();
            let mut c = 1.0f64;
            let mut s = 0.0f64;
            for o in out.iter_mut() {
                *o += ca * c + sa * s;
                let cn = c * dcos - s * dsin;
                s = s * dcos + c * dsin;
                c = cn;
            }
        }
        out
    }
}

/// Empirical two-time correlation (1/N)Σ_j ξ_j(t₂)ξ_j(t₁).
pub fn empirical_correlation(realizations: &[NoiseRealization], t2: f64, t1: f64) -> Complex64 {
    assert!(!realizations.is_empty(), "need at least one realization");
    let sum: Complex64 = realizations
        .iter()
        .map(|r| r.evaluate(t2) * r.evaluate(t1))
        .sum();
    sum / realizations.len() as f64
}
