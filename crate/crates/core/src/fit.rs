//! Nonlinear least-squares fits for correlation components that lack a
//! closed rational form: decaying sines for the antisymmetric correlation
//! and decaying exponentials for the Matsubara part.
//!
//! Levenberg–Marquardt on real/imaginary-stacked residuals with complex
//! parameters split into real pairs; Re c > 0 is kept by the softplus map
//! c = c_min + softplus(u). Multi-start with log-uniform perturbations of
//! the physics-informed seed; the winner is the lowest residual, ties
//! broken by restart index, so the result is deterministic and
//! parallelism-independent.

use crate::bath::SineTerm;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitAnsatz {
    DecayingSines,
    DecayingExponentials,
}

/// One fitted exponential λ² e^{−Γt} (a Matsubara mode).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpFitTerm {
    pub lambda_sq: Complex64,
    pub decay: Complex64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitProblem {
    /// Strictly increasing times, t > 0 (the sign ambiguity lives at t = 0).
    pub grid: Vec<f64>,
    pub target: Vec<Complex64>,
    pub n_terms: usize,
    pub ansatz: FitAnsatz,
    /// Per-point weights ≥ 0; `None` means all ones.
    pub weights: Option<Vec<f64>>,
    /// Physics-informed seed terms as (first, second, third) parameter
    /// triples: (a, b, c) for sines, (λ², Γ, unused) for exponentials.
    pub initial: Option<Vec<[Complex64; 3]>>,
    pub restarts: usize,
    pub rng_seed: u64,
    pub max_iterations: usize,
    /// Decay floor: Re c = c_min + softplus(u) > c_min.
    pub c_min: f64,
}

impl FitProblem {
    /// 400 uniform points on (0, T], unit weights, 16 restarts.
    pub fn new(
        target_fn: impl Fn(f64) -> Complex64,
        horizon: f64,
        n_terms: usize,
        ansatz: FitAnsatz,
    ) -> Self {
        let n = 400;
        let grid: Vec<f64> = (1..=n).map(|k| horizon * k as f64 / n as f64).collect();
        let target = grid.iter().map(|&t| target_fn(t)).collect();
        FitProblem {
            grid,
            target,
            n_terms,
            ansatz,
            weights: None,
            initial: None,
            restarts: 16,
            rng_seed: 0x5eed,
            max_iterations: 400,
            c_min: 1e-3 / horizon,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        if self.n_terms == 0 {
            return Err(FitError::InvalidProblem("n_terms must be at least 1".into()));
        }
        if self.grid.len() != self.target.len() || self.grid.is_empty() {
            return Err(FitError::InvalidProblem("grid/target length mismatch".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FitError::InvalidProblem("grid must be strictly increasing".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.grid.len() || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(FitError::InvalidProblem("bad weights".into()));
            }
        }
        // antisymmetry check for the sine ansatz, where ±t pairs exist
        if self.ansatz == FitAnsatz::DecayingSines {
            let scale: f64 = self.target.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (i, &t) in self.grid.iter().enumerate() {
                if let Some(j) = self
                    .grid
                    .iter()
                    .position(|&s| (s + t).abs() < 1e-12 * t.abs().max(1.0))
                {
                    let dev = (self.target[i] + self.target[j]).norm();
                    if dev > 1e-6 * scale.max(1e-300) {
                        return Err(FitError::InvalidProblem(format!(
                            "target not antisymmetric at t = ±{t}: deviation {dev:.3e}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fit outcome; the interpretation of `params` follows the ansatz.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome<T> {
    pub params: Vec<T>,
    pub residual_rms: f64,
    pub converged: bool,
    pub restarts_used: usize,
    pub iterations_used: usize,
    /// Accepted cost after each successful LM step (non-increasing).
    pub cost_history: Vec<f64>,
}

pub type SineFit = FitOutcome<SineTerm>;
pub type ExponentialFit = FitOutcome<ExpFitTerm>;

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else if u < -30.0 {
        u.exp()
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp_m1().max(1e-300).ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u > 30.0 {
        1.0
    } else if u < -30.0 {
        u.exp()
    } else {
        1.0 / (1.0 + (-u).exp())
    }
}

/// Internal real-parameter view of the model.
struct ModelSpec {
    ansatz: FitAnsatz,
    n_terms: usize,
    c_min: f64,
}

impl ModelSpec {
    fn params_per_term(&self) -> usize {
        match self.ansatz {
            FitAnsatz::DecayingSines => 6,
            FitAnsatz::DecayingExponentials => 4,
        }
    }

    fn dim(&self) -> usize {
        self.n_terms * self.params_per_term()
    }

    fn pack(&self, terms: &[[Complex64; 3]]) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        for t in terms {
            match self.ansatz {
                FitAnsatz::DecayingSines => {
                    theta.extend_from_slice(&[
                        t[0].re,
                        t[0].im,
                        t[1].re,
                        t[1].im,
                        softplus_inv((t[2].re - self.c_min).max(1e-12)),
                        t[2].im,
                    ]);
                }
                FitAnsatz::DecayingExponentials => {
                    theta.extend_from_slice(&[
                        t[0].re,
                        t[0].im,
                        softplus_inv((t[1].re - self.c_min).max(1e-12)),
                        t[1].im,
                    ]);
                }
            }
        }
        theta
    }

    fn unpack(&self, theta: &[f64]) -> Vec<[Complex64; 3]> {
        let p = self.params_per_term();
        (0..self.n_terms)
            .map(|k| {
                let t = &theta[k * p..(k + 1) * p];
                match self.ansatz {
                    FitAnsatz::DecayingSines => [
                        Complex64::new(t[0], t[1]),
                        Complex64::new(t[2], t[3]),
                        Complex64::new(self.c_min + softplus(t[4]), t[5]),
                    ],
                    FitAnsatz::DecayingExponentials => [
                        Complex64::new(t[0], t[1]),
                        Complex64::new(self.c_min + softplus(t[2]), t[3]),
                        Complex64::new(0.0, 0.0),
                    ],
                }
            })
            .collect()
    }

    fn eval(&self, terms: &[[Complex64; 3]], t: f64) -> Complex64 {
        terms
            .iter()
            .map(|p| match self.ansatz {
                FitAnsatz::DecayingSines => p[0] * (p[1] * t).sin() * (-p[2] * t).exp(),
                FitAnsatz::DecayingExponentials => p[0] * (-p[1] * t).exp(),
            })
            .sum()
    }

    /// Residuals r (stacked Re/Im, weighted) and Jacobian at θ.
    fn residuals_jacobian(
        &self,
        theta: &[f64],
        grid: &[f64],
        target: &[Complex64],
        sqrt_w: &[f64],
        r: &mut [f64],
        jac: &mut [f64],
    ) {
        let terms = self.unpack(theta);
        let p = self.params_per_term();
        let dim = self.dim();
        let m = grid.len();
        for (k, (&t, &y)) in grid.iter().zip(target.iter()).enumerate() {
            let model = self.eval(&terms, t);
            let resid = sqrt_w[k] * (model - y);
            r[k] = resid.re;
            r[m + k] = resid.im;
            for (j, prm) in terms.iter().enumerate() {
                let base = j * p;
                match self.ansatz {
                    FitAnsatz::DecayingSines => {
                        let (a, b, c) = (prm[0], prm[1], prm[2]);
                        let damp = (-c * t).exp();
                        let s = (b * t).sin();
                        let cs = (b * t).cos();
                        let dfda = s * damp;
                        let dfdb = a * t * cs * damp;
                        let dfdc = -a * t * s * damp;
                        let u = theta[base + 4];
                        let cols = [
                            dfda,
                            Complex64::new(0.0, 1.0) * dfda,
                            dfdb,
                            Complex64::new(0.0, 1.0) * dfdb,
                            dfdc * sigmoid(u),
                            Complex64::new(0.0, 1.0) * dfdc,
                        ];
                        for (ci, col) in cols.iter().enumerate() {
                            let col = sqrt_w[k] * col;
                            jac[k * dim + base + ci] = col.re;
                            jac[(m + k) * dim + base + ci] = col.im;
                        }
                    }
                    FitAnsatz::DecayingExponentials => {
                        let (lam, gam) = (prm[0], prm[1]);
                        let damp = (-gam * t).exp();
                        let dfdl = damp;
                        let dfdg = -lam * t * damp;
                        let u = theta[base + 2];
                        let cols = [
                            dfdl,
                            Complex64::new(0.0, 1.0) * dfdl,
                            dfdg * sigmoid(u),
                            Complex64::new(0.0, 1.0) * dfdg,
                        ];
                        for (ci, col) in cols.iter().enumerate() {
                            let col = sqrt_w[k] * col;
                            jac[k * dim + base + ci] = col.re;
                            jac[(m + k) * dim + base + ci] = col.im;
                        }
                    }
                }
            }
        }
    }
}

/// Solve (A + μ·diag A)δ = −g by Gaussian elimination with partial pivoting.
fn solve_damped(a: &[f64], g: &[f64], mu: f64, dim: usize) -> Option<Vec<f64>> {
    let mut m = vec![0.0; dim * (dim + 1)];
    for i in 0..dim {
        for j in 0..dim {
            let mut v = a[i * dim + j];
            if i == j {
                v += mu * a[i * dim + i].max(1e-300);
            }
            m[i * (dim + 1) + j] = v;
        }
        m[i * (dim + 1) + dim] = -g[i];
    }
    for col in 0..dim {
        let mut piv = col;
        for row in col + 1..dim {
            if m[row * (dim + 1) + col].abs() > m[piv * (dim + 1) + col].abs() {
                piv = row;
            }
        }
        if m[piv * (dim + 1) + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..=dim {
                m.swap(col * (dim + 1) + k, piv * (dim + 1) + k);
            }
        }
        let d = m[col * (dim + 1) + col];
        for row in col + 1..dim {
            let f = m[row * (dim + 1) + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..=dim {
                m[row * (dim + 1) + k] -= f * m[col * (dim + 1) + k];
            }
        }
    }
    let mut x = vec![0.0; dim];
    for col in (0..dim).rev() {
        let mut acc = m[col * (dim + 1) + dim];
        for k in col + 1..dim {
            acc -= m[col * (dim + 1) + k] * x[k];
        }
        x[col] = acc / m[col * (dim + 1) + col];
    }
    Some(x)
}

struct LmRun {
    theta: Vec<f64>,
    cost: f64,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
}

fn lm_minimize(
    spec: &ModelSpec,
    grid: &[f64],
    target: &[Complex64],
    sqrt_w: &[f64],
    theta0: Vec<f64>,
    max_iterations: usize,
) -> LmRun {
    let dim = spec.dim();
    let m = grid.len();
    let n_resid = 2 * m;
    let mut r = vec![0.0; n_resid];
    let mut jac = vec![0.0; n_resid * dim];
    let mut theta = theta0;
    spec.residuals_jacobian(&theta, grid, target, sqrt_w, &mut r, &mut jac);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut history = vec![cost];
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut a = vec![0.0; dim * dim];
    let mut g = vec![0.0; dim];
    for iter in 0..max_iterations {
        iterations = iter + 1;
        // normal equations
        a.fill(0.0);
        g.fill(0.0);
        for k in 0..n_resid {
            let row = &jac[k * dim..(k + 1) * dim];
            for i in 0..dim {
                g[i] += row[i] * r[k];
                for j in i..dim {
                    a[i * dim + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                a[i * dim + j] = a[j * dim + i];
            }
        }
        let gnorm = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gnorm < 1e-14 * cost.max(1e-30) || cost < 1e-28 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let Some(delta) = solve_damped(&a, &g, mu, dim) else {
                mu *= 4.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            let mut r_trial = vec![0.0; n_resid];
            let mut jac_trial = vec![0.0; n_resid * dim];
            spec.residuals_jacobian(&trial, grid, target, sqrt_w, &mut r_trial, &mut jac_trial);
            let cost_trial: f64 = r_trial.iter().map(|x| x * x).sum();
            if cost_trial.is_finite() && cost_trial < cost {
                let rel_drop = (cost - cost_trial) / cost.max(1e-300);
                theta = trial;
                r = r_trial;
                jac = jac_trial;
                cost = cost_trial;
                history.push(cost);
                mu = (mu * 0.35).max(1e-14);
                accepted = true;
                if rel_drop < 1e-12 {
                    converged = true;
                }
                break;
            }
            mu *= 2.5;
            if mu > 1e14 {
                break;
            }
        }
        if !accepted {
            converged = cost < 1e-20 || history.len() > 1;
            // no further progress possible at this damping scale
            break;
        }
        if converged {
            break;
        }
    }
    LmRun { theta, cost, converged, iterations, history }
}

fn run_multistart(problem: &FitProblem, spec: &ModelSpec, seed_terms: Vec<[Complex64; 3]>) -> LmRun {
    let sqrt_w: Vec<f64> = match &problem.weights {
        Some(w) => w.iter().map(|&x| x.sqrt()).collect(),
        None => vec![1.0; problem.grid.len()],
    };
    let theta0 = spec.pack(&seed_terms);
    let restarts = problem.restarts.max(1);
    let runs: Vec<(usize, LmRun)> = (0..restarts)
        .into_par_iter()
        .map(|ri| {
            let theta = if ri == 0 {
                theta0.clone()
            } else {
                let mut rng = ChaCha12Rng::seed_from_u64(problem.rng_seed);
                rng.set_stream(ri as u64);
                let scale: f64 =
                    theta0.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-3);
                theta0
                    .iter()
                    .map(|&x| {
                        // log-uniform magnitude factor in [1/3, 3]
                        let f = (rng.gen::<f64>() * 2.0 - 1.0) * 3.0f64.ln();
                        let jitter = 0.05 * scale * (rng.gen::<f64>() * 2.0 - 1.0);
                        x * f.exp() + jitter
                    })
                    .collect()
            };
            (
                ri,
                lm_minimize(
                    spec,
                    &problem.grid,
                    &problem.target,
                    &sqrt_w,
                    theta,
                    problem.max_iterations,
                ),
            )
        })
        .collect();
    // deterministic winner: lowest cost, ties by restart index
    let mut best_idx = 0;
    for (i, (_, run)) in runs.iter().enumerate() {
        let best = &runs[best_idx].1;
        if run.cost < best.cost {
            best_idx = i;
        }
    }
    let restarts_used = runs.len();
    let mut winner = runs.into_iter().nth(best_idx).map(|(_, r)| r).unwrap();
    winner.iterations = winner.iterations.max(1);
    let _ = restarts_used;
    winner
}

fn rms_from_cost(problem: &FitProblem, cost: f64) -> f64 {
    let wsum: f64 = match &problem.weights {
        Some(w) => w.iter().sum(),
        None => problem.grid.len() as f64,
    };
    (cost / wsum.max(1e-300)).sqrt()
}

/// Fit Σ a_j sin(b_j t) e^{−c_j|t|} to the target on (0, T].
pub fn fit_decaying_sines(problem: &FitProblem) -> Result<SineFit, FitError> {
    if problem.ansatz != FitAnsatz::DecayingSines {
        return Err(FitError::InvalidProblem("ansatz must be DecayingSines".into()));
    }
    problem.validate()?;
    let spec = ModelSpec {
        ansatz: FitAnsatz::DecayingSines,
        n_terms: problem.n_terms,
        c_min: problem.c_min,
    };
    let seeds = match &problem.initial {
        Some(s) => {
            if s.len() != problem.n_terms {
                return Err(FitError::InvalidProblem("initial guess length mismatch".into()));
            }
            s.clone()
        }
        None => default_sine_seeds(problem),
    };
    let run = run_multistart(problem, &spec, seeds);
    let terms = spec.unpack(&run.theta);
    Ok(FitOutcome {
        params: terms
            .iter()
            .map(|p| SineTerm { amplitude: p[0], frequency: p[1], decay: p[2] })
            .collect(),
        residual_rms: rms_from_cost(problem, run.cost),
        converged: run.converged,
        restarts_used: problem.restarts.max(1),
        iterations_used: run.iterations,
        cost_history: run.history,
    })
}

/// Fit Σ λ²_j e^{−Γ_j t} to a purely decaying target on (0, T].
pub fn fit_matsubara_exponentials(problem: &FitProblem) -> Result<ExponentialFit, FitError> {
    if problem.ansatz != FitAnsatz::DecayingExponentials {
        return Err(FitError::InvalidProblem("ansatz must be DecayingExponentials".into()));
    }
    problem.validate()?;
    // the Matsubara part is real up to a global factor of i
    let scale: f64 = problem.target.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let re_max = problem.target.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let im_max = problem.target.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if re_max.min(im_max) > 1e-6 * scale.max(1e-300) {
        return Err(FitError::InvalidProblem(
            "target must be real-valued up to a global i factor".into(),
        ));
    }
    let spec = ModelSpec {
        ansatz: FitAnsatz::DecayingExponentials,
        n_terms: problem.n_terms,
        c_min: problem.c_min,
    };
    let seeds = match &problem.initial {
        Some(s) => {
            if s.len() != problem.n_terms {
                return Err(FitError::InvalidProblem("initial guess length mismatch".into()));
            }
            s.clone()
        }
        None => default_exp_seeds(problem),
    };
    let run = run_multistart(problem, &spec, seeds);
    let terms = spec.unpack(&run.theta);
    Ok(FitOutcome {
        params: terms
            .iter()
            .map(|p| ExpFitTerm { lambda_sq: p[0], decay: p[1] })
            .collect(),
        residual_rms: rms_from_cost(problem, run.cost),
        converged: run.converged,
        restarts_used: problem.restarts.max(1),
        iterations_used: run.iterations,
        cost_history: run.history,
    })
}

/// Short-time seeding: the target slope near t → 0 fixes a·b ≈ C'(0) and
/// the grid span sets the decay scale; extra terms fan out geometrically.
fn default_sine_seeds(problem: &FitProblem) -> Vec<[Complex64; 3]> {
    let t0 = problem.grid[0];
    let slope = problem.target[0] / t0;
    let horizon = *problem.grid.last().unwrap();
    let base_rate = 4.0 / horizon;
    (0..problem.n_terms)
        .map(|k| {
            let spread = 1.6f64.powi(k as i32);
            let b = Complex64::new(base_rate * spread * 2.0, 0.0);
            let a = slope / b * (1.0 / problem.n_terms as f64);
            let c = Complex64::new(base_rate * spread * 2.0, 0.0);
            [a, b, c]
        })
        .collect()
}

fn default_exp_seeds(problem: &FitProblem) -> Vec<[Complex64; 3]> {
    let y0 = problem.target[0];
    let horizon = *problem.grid.last().unwrap();
    let t0 = problem.grid[0];
    (0..problem.n_terms)
        .map(|k| {
            // decay rates log-spaced between 1/T and 1/(4 t0)
            let frac = (k as f64 + 0.5) / problem.n_terms as f64;
            let rate = (1.0 / horizon) * ((horizon / (4.0 * t0)).powf(frac));
            [
                y0 / problem.n_terms as f64,
                Complex64::new(rate, 0.0),
                Complex64::new(0.0, 0.0),
            ]
        })
        .collect()
}

/// Stable cache key for a fit problem (used by the on-disk fit cache).
pub fn problem_cache_key(problem: &FitProblem) -> u64 {
    use std::hash::{Hash, Hasher};
    let json = serde_json::to_string(problem).expect("fit problem serializes");
    let mut h = std::collections::hash_map::DefaultHasher::new();
    json.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{build_decomposition, DecompositionConfig, SpectralDensity, Temperature};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sine_model(terms: &[[Complex64; 3]], t: f64) -> Complex64 {
        terms.iter().map(|p| p[0] * (p[1] * t).sin() * (-p[2] * t).exp()).sum()
    }

    #[test]
    fn single_sine_exact_recovery() {
        let truth = [[c(0.0, -0.8), c(1.3, 0.0), c(0.4, 0.0)]];
        let mut problem = FitProblem::new(
            |t| sine_model(&truth, t),
            8.0,
            1,
            FitAnsatz::DecayingSines,
        );
        problem.initial = Some(vec![[c(0.0, -0.5), c(1.0, 0.0), c(0.6, 0.0)]]);
        let fit = fit_decaying_sines(&problem).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_rms < 1e-10, "rms {}", fit.residual_rms);
        let p = &fit.params[0];
        assert!((p.amplitude - truth[0][0]).norm() < 1e-7);
        assert!((p.frequency - truth[0][1]).norm() < 1e-7);
        assert!((p.decay - truth[0][2]).norm() < 1e-7);
    }

    #[test]
    fn two_term_recovery_up_to_symmetry() {
        let truth = [
            [c(0.0, -0.6), c(1.1, 0.0), c(0.3, 0.0)],
            [c(0.0, -0.25), c(2.7, 0.0), c(0.9, 0.0)],
        ];
        let mut problem = FitProblem::new(
            |t| sine_model(&truth, t),
            10.0,
            2,
            FitAnsatz::DecayingSines,
        );
        problem.initial = Some(vec![
            [c(0.0, -0.5), c(1.0, 0.0), c(0.4, 0.0)],
            [c(0.0, -0.2), c(2.4, 0.0), c(1.1, 0.0)],
        ]);
        let fit = fit_decaying_sines(&problem).unwrap();
        assert!(fit.residual_rms < 1e-9, "rms {}", fit.residual_rms);
        // canonicalize: sort by |Re b|, fold the (a,b) → (−a,−b) symmetry
        let mut got: Vec<(Complex64, Complex64, Complex64)> = fit
            .params
            .iter()
            .map(|p| {
                if p.frequency.re < 0.0 {
                    (-p.amplitude, -p.frequency, p.decay)
                } else {
                    (p.amplitude, p.frequency, p.decay)
                }
            })
            .collect();
        got.sort_by(|x, y| x.1.re.partial_cmp(&y.1.re).unwrap());
        for (g, t) in got.iter().zip(truth.iter()) {
            assert!((g.0 - t[0]).norm() < 1e-6 * t[0].norm());
            assert!((g.1 - t[1]).norm() < 1e-6 * t[1].norm());
            assert!((g.2 - t[2]).norm() < 1e-6 * t[2].norm());
        }
    }

    #[test]
    fn ohmic_antisymmetric_two_term_fit() {
        // α = 0.02, ωc = 3: two sine terms reach ≤ 1% of max |C_as|
        let alpha = 0.02;
        let omega_c = 3.0;
        let c_as = |t: f64| {
            let x = omega_c * t;
            c(0.0, -2.0 * alpha * omega_c * omega_c * x / (1.0 + x * x).powi(2))
        };
        let mut problem = FitProblem::new(c_as, 10.0, 2, FitAnsatz::DecayingSines);
        problem.initial = Some(super::ohmic_sine_seeds(alpha, omega_c, 2));
        let fit = fit_decaying_sines(&problem).unwrap();
        let max_cas = problem.target.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(
            fit.residual_rms <= 0.01 * max_cas,
            "rms {} vs 1% of {}",
            fit.residual_rms,
            max_cas
        );
    }

    #[test]
    fn single_exponential_exact() {
        let truth_l = c(-3e-4, 0.0);
        let truth_g = c(0.8, 0.0);
        let mut problem = FitProblem::new(
            |t| truth_l * (-truth_g * t).exp(),
            12.0,
            1,
            FitAnsatz::DecayingExponentials,
        );
        problem.initial = Some(vec![[c(-1e-4, 0.0), c(0.5, 0.0), c(0.0, 0.0)]]);
        let fit = fit_matsubara_exponentials(&problem).unwrap();
        assert!(fit.converged);
        assert!(fit.residual_rms < 1e-12, "rms {}", fit.residual_rms);
        assert!((fit.params[0].lambda_sq - truth_l).norm() < 1e-8 * truth_l.norm());
        assert!((fit.params[0].decay - truth_g).norm() < 1e-8);
    }

    #[test]
    fn matsubara_two_exponentials_brownian_zero_t() {
        let j = SpectralDensity::BrownianUnderdamped {
            omega0: 1.0,
            gamma: 0.05,
            lambda: 0.2 / (2.0 * std::f64::consts::PI).sqrt(),
        };
        let dec =
            build_decomposition(&j, Temperature::Zero, &DecompositionConfig::default()).unwrap();
        let problem = FitProblem::new(
            |t| dec.matsubara_integral(t).unwrap(),
            25.0,
            2,
            FitAnsatz::DecayingExponentials,
        );
        let fit = fit_matsubara_exponentials(&problem).unwrap();
        let t_min = problem.grid[0];
        let head = dec.matsubara_integral(t_min).unwrap().norm();
        assert!(
            fit.residual_rms <= 0.02 * head,
            "rms {} vs 2% of {head}",
            fit.residual_rms
        );
        // fitted λ² are negative-real-dominant like the target
        for p in &fit.params {
            assert!(p.lambda_sq.re < 0.0);
            assert!(p.decay.re > 0.0);
        }
    }

    #[test]
    fn accepted_costs_monotone_and_refit_fast() {
        let truth = [
            [c(0.0, -0.6), c(1.1, 0.0), c(0.3, 0.0)],
            [c(0.0, -0.25), c(2.7, 0.0), c(0.9, 0.0)],
        ];
        let mut problem = FitProblem::new(
            |t| sine_model(&truth, t),
            10.0,
            2,
            FitAnsatz::DecayingSines,
        );
        problem.initial = Some(vec![
            [c(0.0, -0.4), c(0.9, 0.0), c(0.5, 0.0)],
            [c(0.0, -0.3), c(2.2, 0.0), c(1.2, 0.0)],
        ]);
        let fit = fit_decaying_sines(&problem).unwrap();
        for w in fit.cost_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "cost increased: {w:?}");
        }
        // refit from the optimum converges almost immediately
        let mut refit_problem = problem.clone();
        refit_problem.initial = Some(
            fit.params
                .iter()
                .map(|p| [p.amplitude, p.frequency, p.decay])
                .collect(),
        );
        refit_problem.restarts = 1;
        let refit = fit_decaying_sines(&refit_problem).unwrap();
        assert!(refit.converged);
        assert!(refit.iterations_used <= 2, "refit took {}", refit.iterations_used);
    }

    #[test]
    fn shuffled_terms_reproduce_identical_model() {
        let truth = [
            [c(0.0, -0.6), c(1.1, 0.0), c(0.3, 0.0)],
            [c(0.0, -0.25), c(2.7, 0.0), c(0.9, 0.0)],
        ];
        let problem = FitProblem::new(
            |t| sine_model(&truth, t),
            10.0,
            2,
            FitAnsatz::DecayingSines,
        );
        let fit = fit_decaying_sines(&problem).unwrap();
        let fwd: Vec<[Complex64; 3]> = fit
            .params
            .iter()
            .map(|p| [p.amplitude, p.frequency, p.decay])
            .collect();
        let rev: Vec<[Complex64; 3]> = fwd.iter().rev().copied().collect();
        for k in 0..20 {
            let t = 0.5 * (k + 1) as f64;
            assert!((sine_model(&fwd, t) - sine_model(&rev, t)).norm() < 1e-14);
        }
    }

    #[test]
    fn weighting_shifts_tail_accuracy() {
        let truth_l1 = c(-2e-4, 0.0);
        let truth_l2 = c(-8e-5, 0.0);
        let target =
            |t: f64| truth_l1 * (-1.2 * t).exp() + truth_l2 * (-0.15 * t).exp();
        let base = FitProblem::new(target, 20.0, 1, FitAnsatz::DecayingExponentials);
        let mut weighted = base.clone();
        weighted.weights = Some(base.grid.iter().map(|&t| (0.3 * t).exp()).collect());
        let flat_fit = fit_matsubara_exponentials(&base).unwrap();
        let tail_t = *base.grid.last().unwrap();
        let exp_fit = fit_matsubara_exponentials(&weighted).unwrap();
        let model = |f: &ExponentialFit, t: f64| -> Complex64 {
            f.params.iter().map(|p| p.lambda_sq * (-p.decay * t).exp()).sum()
        };
        let flat_tail = (model(&flat_fit, tail_t) - target(tail_t)).norm();
        let exp_tail = (model(&exp_fit, tail_t) - target(tail_t)).norm();
        assert!(flat_fit.cost_history.len() > 1 && exp_fit.cost_history.len() > 1);
        assert!(
            exp_tail <= flat_tail,
            "tail-weighted fit should do better at the tail: {exp_tail:.3e} vs {flat_tail:.3e}"
        );
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = FitProblem::new(|_| c(0.0, 0.0), 5.0, 1, FitAnsatz::DecayingSines);
        p.grid[5] = p.grid[4];
        assert!(matches!(fit_decaying_sines(&p), Err(FitError::InvalidProblem(_))));

        // complex-phase target rejected by the exponential pre-check
        let p2 = FitProblem::new(
            |t| c(1.0, 1.0) * (-0.5 * t).exp(),
            5.0,
            1,
            FitAnsatz::DecayingExponentials,
        );
        assert!(matches!(
            fit_matsubara_exponentials(&p2),
            Err(FitError::InvalidProblem(_))
        ));
    }

    #[test]
    fn cache_key_stable() {
        let p1 = FitProblem::new(|t| c(t, 0.0), 5.0, 1, FitAnsatz::DecayingSines);
        let p2 = FitProblem::new(|t| c(t, 0.0), 5.0, 1, FitAnsatz::DecayingSines);
        assert_eq!(problem_cache_key(&p1), problem_cache_key(&p2));
        let p3 = FitProblem::new(|t| c(t, 0.1), 5.0, 1, FitAnsatz::DecayingSines);
        assert_ne!(problem_cache_key(&p1), problem_cache_key(&p3));
    }
}

/// Short-time seeds for the Ohmic antisymmetric fit:
/// a₁ ≈ −2iαωc², b₁ ≈ ωc, c₁ ≈ ωc; further terms fan out geometrically.
pub fn ohmic_sine_seeds(alpha: f64, omega_c: f64, n_terms: usize) -> Vec<[Complex64; 3]> {
    (0..n_terms)
        .map(|k| {
            let spread = 2.0f64.powi(k as i32);
            [
                Complex64::new(0.0, -2.0 * alpha * omega_c * omega_c / spread),
                Complex64::new(omega_c * spread, 0.0),
                Complex64::new(omega_c * spread, 0.0),
            ]
        })
        .collect()
}
