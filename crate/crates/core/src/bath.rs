//! Bath spectral densities, correlation functions, and their
//! quantum-classical decomposition.
//!
//! For rational spectral densities everything is closed-form: poles are
//! classified into quadruples and imaginary conjugate pairs, residues give
//! the antisymmetric correlation as a sum of decaying sines (after the
//! W-regularization of the sign-function terms), and the symmetric shift
//! f_s(t) built from those sines moves weight into the classical part so
//! every quantum mode starts in vacuum. Non-rational densities (Ohmic with
//! exponential cutoff) get the same treatment with fitted sine terms.

use crate::dynamics::{Pseudomode, PseudomodeSet};
use crate::quad::{self, QuadError, QuadTol};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, thiserror::Error)]
pub enum BathError {
    #[error("invalid spectral density: {0}")]
    InvalidSpectralDensity(String),
    #[error("root multiplicity detected: |{a}-{b}| = {dist:.3e} below tolerance")]
    RootMultiplicity { a: Complex64, b: Complex64, dist: f64 },
    #[error("root {0} lies on the real axis")]
    RealAxisRoot(Complex64),
    #[error("pole classification failure: {0}")]
    ClassificationFailure(String),
    #[error("W = {w:.3e} too small; need at least {min:.3e} for pole scale {scale:.3e}")]
    WTooSmall { w: f64, min: f64, scale: f64 },
    #[error(
        "Matsubara pole {matsubara} coincides with spectral-density pole {pole} \
         (distance {dist:.3e}); perturb beta to lift the degeneracy"
    )]
    MatsubaraCollision {
        matsubara: Complex64,
        pole: Complex64,
        dist: f64,
    },
    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

impl BathError {
    pub fn is_config_error(&self) -> bool {
        !matches!(self, BathError::Quadrature(_))
    }
}

/// Bath temperature: inverse temperature β or the exact zero-T limit
/// (coth → 1, Matsubara series → integral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    Beta(f64),
    Zero,
}

/// Spectral density J(ω) of a bosonic bath.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// γλ²ω / [(ω²−ω0²)² + γ²ω²] with γ < 2ω0.
    BrownianUnderdamped { omega0: f64, gamma: f64, lambda: f64 },
    /// Same form with γ > 2ω0 (poles on the imaginary axis).
    BrownianOverdamped { omega0: f64, gamma: f64, lambda: f64 },
    /// Same form with γ = 2ω0 (double pole; closed forms only).
    BrownianCritical { omega0: f64, gamma: f64, lambda: f64 },
    /// παω e^{−ω/ωc}.
    OhmicExp { alpha: f64, omega_c: f64 },
    /// p(ω)/∏(ω−r_k) with real odd p and simple non-real roots closed
    /// under conjugation and sign-flip conjugation.
    RationalGeneric {
        /// numerator coefficients, ascending powers of ω
        numerator: Vec<f64>,
        roots: Vec<Complex64>,
    },
}

impl SpectralDensity {
    pub fn validate(&self) -> Result<(), BathError> {
        let bad = |msg: String| Err(BathError::InvalidSpectralDensity(msg));
        match self {
            SpectralDensity::BrownianUnderdamped { omega0, gamma, lambda } => {
                if *omega0 <= 0.0 || *gamma <= 0.0 || *lambda <= 0.0 {
                    return bad("Brownian parameters must be positive".into());
                }
                if *gamma >= 2.0 * omega0 {
                    return bad(format!(
                        "underdamped variant requires gamma < 2*omega0 (gamma = {gamma}, omega0 = {omega0})"
                    ));
                }
                Ok(())
            }
            SpectralDensity::BrownianOverdamped { omega0, gamma, lambda } => {
                if *omega0 <= 0.0 || *gamma <= 0.0 || *lambda <= 0.0 {
                    return bad("Brownian parameters must be positive".into());
                }
                if *gamma <= 2.0 * omega0 {
                    return bad(format!(
                        "overdamped variant requires gamma > 2*omega0 (gamma = {gamma}, omega0 = {omega0})"
                    ));
                }
                Ok(())
            }
            SpectralDensity::BrownianCritical { omega0, gamma, lambda } => {
                if *omega0 <= 0.0 || *gamma <= 0.0 || *lambda <= 0.0 {
                    return bad("Brownian parameters must be positive".into());
                }
                if ((gamma - 2.0 * omega0) / omega0).abs() > 1e-12 {
                    return bad("critical variant requires gamma = 2*omega0".into());
                }
                Ok(())
            }
            SpectralDensity::OhmicExp { alpha, omega_c } => {
                if *alpha <= 0.0 || *omega_c <= 0.0 {
                    return bad("Ohmic requires alpha > 0 and omega_c > 0".into());
                }
                Ok(())
            }
            SpectralDensity::RationalGeneric { .. } => self
                .rational_form()
                .expect("RationalGeneric always has a rational form")
                .validate(),
        }
    }

    /// J(ω) on the real axis.
    pub fn eval(&self, omega: f64) -> f64 {
        match self {
            SpectralDensity::BrownianUnderdamped { omega0, gamma, lambda }
            | SpectralDensity::BrownianOverdamped { omega0, gamma, lambda }
            | SpectralDensity::BrownianCritical { omega0, gamma, lambda } => {
                let d =
                    (omega * omega - omega0 * omega0).powi(2) + gamma * gamma * omega * omega;
                gamma * lambda * lambda * omega / d
            }
            SpectralDensity::OhmicExp { alpha, omega_c } => {
                std::f64::consts::PI * alpha * omega * (-omega / omega_c).exp()
            }
            SpectralDensity::RationalGeneric { .. } => self
                .rational_form()
                .expect("rational form")
                .eval(Complex64::new(omega, 0.0))
                .re,
        }
    }

    /// Analytic continuation J(z).
    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        match self {
            SpectralDensity::BrownianUnderdamped { omega0, gamma, lambda }
            | SpectralDensity::BrownianOverdamped { omega0, gamma, lambda }
            | SpectralDensity::BrownianCritical { omega0, gamma, lambda } => {
                let d = (z * z - omega0 * omega0).powi(2) + gamma * gamma * z * z;
                gamma * lambda * lambda * z / d
            }
            SpectralDensity::OhmicExp { alpha, omega_c } => {
                std::f64::consts::PI * alpha * z * (-z / omega_c).exp()
            }
            SpectralDensity::RationalGeneric { .. } => {
                self.rational_form().expect("rational form").eval(z)
            }
        }
    }

    /// Characteristic frequency scale.
    pub fn scale(&self) -> f64 {
        match self {
            SpectralDensity::BrownianUnderdamped { omega0, gamma, .. }
            | SpectralDensity::BrownianOverdamped { omega0, gamma, .. }
            | SpectralDensity::BrownianCritical { omega0, gamma, .. } => omega0.max(*gamma),
            SpectralDensity::OhmicExp { omega_c, .. } => *omega_c,
            SpectralDensity::RationalGeneric { roots, .. } => {
                roots.iter().map(|r| r.norm()).fold(0.0, f64::max).max(1e-12)
            }
        }
    }

    /// Rational form, when the variant has one. The critical Brownian
    /// density is rational but its roots are degenerate, so classification
    /// rejects it downstream.
    pub fn rational_form(&self) -> Option<RationalForm> {
        match self {
            SpectralDensity::BrownianUnderdamped { omega0, gamma, lambda } => {
                let gam = gamma / 2.0;
                let om = (omega0 * omega0 - gam * gam).sqrt();
                let w1 = Complex64::new(om, gam);
                let w2 = Complex64::new(-om, gam);
                Some(RationalForm {
                    numerator: vec![0.0, gamma * lambda * lambda],
                    roots: vec![w1, w2, w1.conj(), w2.conj()],
                })
            }
            SpectralDensity::BrownianOverdamped { omega0, gamma, lambda } => {
                let gam = gamma / 2.0;
                let om = (gam * gam - omega0 * omega0).sqrt();
                let w1 = Complex64::new(0.0, gam + om);
                let w2 = Complex64::new(0.0, gam - om);
                Some(RationalForm {
                    numerator: vec![0.0, gamma * lambda * lambda],
                    roots: vec![w1, w2, w1.conj(), w2.conj()],
                })
            }
            SpectralDensity::BrownianCritical { gamma, lambda, .. } => {
                let gam = gamma / 2.0;
                let w1 = Complex64::new(0.0, gam);
                Some(RationalForm {
                    numerator: vec![0.0, gamma * lambda * lambda],
                    roots: vec![w1, w1, w1.conj(), w1.conj()],
                })
            }
            SpectralDensity::OhmicExp { .. } => None,
            SpectralDensity::RationalGeneric { numerator, roots } => Some(RationalForm {
                numerator: numerator.clone(),
                roots: roots.clone(),
            }),
        }
    }
}

/// J(ω) = p(ω)/∏(ω − r_k).
#[derive(Debug, Clone)]
pub struct RationalForm {
    pub numerator: Vec<f64>,
    pub roots: Vec<Complex64>,
}

impl RationalForm {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let p = poly_eval(&self.numerator, z);
        let mut q = Complex64::new(1.0, 0.0);
        for r in &self.roots {
            q *= z - r;
        }
        p / q
    }

    fn pairing_tol(&self) -> f64 {
        let scale = self.roots.iter().map(|r| r.norm()).fold(0.0, f64::max);
        1e-9 * scale.max(1e-300)
    }

    pub fn validate(&self) -> Result<(), BathError> {
        let n = self.roots.len();
        let deg_p = self
            .numerator
            .iter()
            .rposition(|&c| c != 0.0)
            .ok_or_else(|| BathError::InvalidSpectralDensity("zero numerator".into()))?;
        if deg_p >= n {
            return Err(BathError::InvalidSpectralDensity(format!(
                "numerator degree {deg_p} must be below the number of roots {n}"
            )));
        }
        for (k, &c) in self.numerator.iter().enumerate() {
            if k % 2 == 0 && c != 0.0 {
                return Err(BathError::InvalidSpectralDensity(
                    "numerator must be odd in ω (antisymmetry)".into(),
                ));
            }
        }
        let tol = self.pairing_tol();
        for (i, &a) in self.roots.iter().enumerate() {
            if a.im.abs() <= tol {
                return Err(BathError::RealAxisRoot(a));
            }
            for &b in self.roots.iter().skip(i + 1) {
                let dist = (a - b).norm();
                if dist <= tol {
                    return Err(BathError::RootMultiplicity { a, b, dist });
                }
            }
            let has =
                |target: Complex64| self.roots.iter().any(|&r| (r - target).norm() <= tol);
            if !has(a.conj()) {
                return Err(BathError::InvalidSpectralDensity(format!(
                    "roots not closed under conjugation: missing conj of {a}"
                )));
            }
            if !has(-a.conj()) {
                return Err(BathError::InvalidSpectralDensity(format!(
                    "roots not closed under sign-flip conjugation: missing -conj of {a}"
                )));
            }
        }
        Ok(())
    }
}

fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * z + c;
    }
    acc
}

/// A pole in the upper half plane together with its residue.
#[derive(Debug, Clone, Copy)]
pub struct PoleResidue {
    pub pole: Complex64,
    pub residue: Complex64,
}

/// Upper-half-plane pole classification of a rational spectral density.
///
/// `quadruples` holds one representative per quadruple (Re > 0, Im > 0);
/// `imaginary_pairs` one per conjugate pair (Re = 0, Im > 0, real residue).
/// The total pole count is 4·N_q + 2·N_i.
#[derive(Debug, Clone)]
pub struct PoleData {
    pub quadruples: Vec<PoleResidue>,
    pub imaginary_pairs: Vec<PoleResidue>,
}

impl PoleData {
    pub fn n_poles(&self) -> usize {
        4 * self.quadruples.len() + 2 * self.imaginary_pairs.len()
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.quadruples
            .iter()
            .chain(self.imaginary_pairs.iter())
            .map(|p| p.pole.norm())
            .fold(0.0, f64::max)
    }

    /// The full pole set with residues, expanded from the representatives:
    /// a quadruple (ω, R) adds (ω̄, R̄), (−ω̄, R̄), (−ω, R); an imaginary
    /// pair (ω, R) adds (ω̄, R) with the same real residue.
    pub fn full_pole_set(&self) -> Vec<PoleResidue> {
        let mut out = Vec::with_capacity(self.n_poles());
        for q in &self.quadruples {
            out.push(*q);
            out.push(PoleResidue { pole: q.pole.conj(), residue: q.residue.conj() });
            out.push(PoleResidue { pole: -q.pole.conj(), residue: q.residue.conj() });
            out.push(PoleResidue { pole: -q.pole, residue: q.residue });
        }
        for p in &self.imaginary_pairs {
            out.push(*p);
            out.push(PoleResidue { pole: p.pole.conj(), residue: p.residue });
        }
        out
    }

    /// Partial-fraction reconstruction Σ R_k/(ω − ω_k).
    pub fn reconstruct(&self, omega: Complex64) -> Complex64 {
        self.full_pole_set()
            .iter()
            .map(|pr| pr.residue / (omega - pr.pole))
            .sum()
    }
}

/// Classify the poles of a rational spectral density and compute residues
/// R_k = p(ω_k)/∏_{j≠k}(ω_k − ω_j).
pub fn classify_poles(j: &SpectralDensity) -> Result<PoleData, BathError> {
    let form = j.rational_form().ok_or_else(|| {
        BathError::UnsupportedVariant("pole classification needs a rational form".into())
    })?;
    form.validate()?;
    let tol = form.pairing_tol();
    let residue_at = |k: usize| -> Complex64 {
        let wk = form.roots[k];
        let mut denom = Complex64::new(1.0, 0.0);
        for (l, &wl) in form.roots.iter().enumerate() {
            if l != k {
                denom *= wk - wl;
            }
        }
        poly_eval(&form.numerator, wk) / denom
    };

    let mut quadruples = Vec::new();
    let mut imaginary_pairs = Vec::new();
    for (k, &w) in form.roots.iter().enumerate() {
        if w.im <= 0.0 {
            continue;
        }
        let r = residue_at(k);
        if w.re.abs() <= tol {
            if r.im.abs() > 1e-9 * r.norm().max(1e-300) {
                return Err(BathError::ClassificationFailure(format!(
                    "imaginary-pair pole {w} has non-real residue {r}"
                )));
            }
            imaginary_pairs.push(PoleResidue {
                pole: Complex64::new(0.0, w.im),
                residue: Complex64::new(r.re, 0.0),
            });
        } else if w.re > 0.0 {
            let partner = -w.conj();
            if !form.roots.iter().any(|&x| (x - partner).norm() <= tol) {
                return Err(BathError::ClassificationFailure(format!(
                    "quadruple partner {partner} of {w} missing"
                )));
            }
            quadruples.push(PoleResidue { pole: w, residue: r });
        }
        // upper poles with Re < 0 are quadruple partners; skip them
    }
    if quadruples.len() * 4 + imaginary_pairs.len() * 2 != form.roots.len() {
        return Err(BathError::ClassificationFailure(format!(
            "classified {} quadruples and {} pairs from {} roots",
            quadruples.len(),
            imaginary_pairs.len(),
            form.roots.len()
        )));
    }
    quadruples.sort_by(|a, b| a.pole.im.partial_cmp(&b.pole.im).unwrap());
    imaginary_pairs.sort_by(|a, b| a.pole.im.partial_cmp(&b.pole.im).unwrap());
    Ok(PoleData { quadruples, imaginary_pairs })
}

/// One decaying sine a·sin(b t)·e^{−c|t|}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: Complex64,
    pub frequency: Complex64,
    pub decay: Complex64,
}

impl SineTerm {
    pub fn eval(&self, t: f64) -> Complex64 {
        self.amplitude * (self.frequency * t).sin() * (-self.decay * t.abs()).exp()
    }
}

/// Default regularization scale W = w_factor · max(pole scale, extra scale).
pub fn default_w(pole_scale: f64, extra_scale: f64, w_factor: f64) -> f64 {
    w_factor * pole_scale.max(extra_scale)
}

/// Minimum admissible ratio W / (largest pole magnitude).
pub const MIN_W_FACTOR: f64 = 10.0;

/// Decaying-sine representation of C_as(t) in the distributional sense:
/// the residual sign-function term −i·sg(t)·Σ Re(R_k)·cos(Re ω_k t)·e^{−W|t|}
/// is dropped. Emits 3 terms per quadruple and 1 per imaginary pair; terms
/// with zero amplitude are removed.
pub fn antisymmetric_terms(poles: &PoleData, w: f64) -> Result<Vec<SineTerm>, BathError> {
    let scale = poles.max_pole_magnitude();
    if w < MIN_W_FACTOR * scale {
        return Err(BathError::WTooSmall { w, min: MIN_W_FACTOR * scale, scale });
    }
    let mut terms = Vec::new();
    let amp_scale = poles
        .quadruples
        .iter()
        .chain(poles.imaginary_pairs.iter())
        .map(|p| p.residue.norm())
        .fold(0.0, f64::max);
    let keep = |a: Complex64| a.norm() > 1e-12 * amp_scale;
    for q in &poles.quadruples {
        let (wr, wi) = (q.pole.re, q.pole.im);
        let (rr, ri) = (q.residue.re, q.residue.im);
        let resonant = Complex64::new(0.0, 2.0 * ri);
        if keep(resonant) {
            terms.push(SineTerm {
                amplitude: resonant,
                frequency: Complex64::new(wr, 0.0),
                decay: Complex64::new(wi, 0.0),
            });
        }
        let reg_amp = Complex64::new(2.0 * rr, 0.0);
        if keep(reg_amp) {
            for sign in [1.0, -1.0] {
                terms.push(SineTerm {
                    amplitude: reg_amp,
                    frequency: Complex64::new(sign * wr, -(w - wi) / 2.0),
                    decay: Complex64::new((w + wi) / 2.0, 0.0),
                });
            }
        }
    }
    for p in &poles.imaginary_pairs {
        let wi = p.pole.im;
        let amp = Complex64::new(2.0 * p.residue.re, 0.0);
        if keep(amp) {
            terms.push(SineTerm {
                amplitude: amp,
                frequency: Complex64::new(0.0, -(w - wi) / 2.0),
                decay: Complex64::new((w + wi) / 2.0, 0.0),
            });
        }
    }
    Ok(terms)
}

/// coef · e^{rate·|t|} with Re(rate) < 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExpTerm {
    pub coef: Complex64,
    pub rate: Complex64,
}

impl ExpTerm {
    pub fn eval(&self, t: f64) -> Complex64 {
        self.coef * (self.rate * t.abs()).exp()
    }
}

/// One quantum-correlation term λ² e^{−iΩt} e^{−Γ|t|}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuantumTerm {
    pub lambda_sq: Complex64,
    pub frequency: Complex64,
    pub decay: Complex64,
}

impl QuantumTerm {
    pub fn eval(&self, t: f64) -> Complex64 {
        self.lambda_sq * (-I * self.frequency * t - self.decay * t.abs()).exp()
    }
}

/// Decaying tail of the classical correlation beyond its exponential terms.
#[derive(Debug, Clone)]
pub enum ClassTail {
    None,
    /// Zero-temperature Matsubara contribution (i/π)∫₀^∞ J(ix) e^{−x|t|} dx.
    ZeroTemperatureIntegral,
    /// Closed-form zero-T Ohmic symmetric correlation
    /// αωc²(1−(ωc t)²)/(1+(ωc t)²)².
    OhmicSymmetricZeroT,
    /// Symmetric correlation by direct quadrature against J(ω).
    SymmetricQuadrature,
}

/// Choice of symmetric shift f_s(t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsChoice {
    /// f_s = −i Σ a_j cos(b_j t) e^{−c_j|t|} from the sine terms, putting
    /// every pseudomode in its vacuum initially.
    FromAnsatz,
    /// f_s = 0: classical = symmetric, quantum = antisymmetric (pure
    /// dephasing setups where only the symmetric part matters).
    Zero,
}

#[derive(Debug, Clone)]
pub struct DecompositionConfig {
    /// Fourier window T; the dynamics horizon must not exceed it.
    pub window: f64,
    /// Matsubara truncation (finite β only); `None` picks a default from
    /// the series tail magnitude.
    pub matsubara_cutoff: Option<usize>,
    /// W = w_factor · max(pole scale, extra_scale).
    pub w_factor: f64,
    /// System frequency scale entering the choice of W.
    pub extra_scale: f64,
    pub shift: FsChoice,
    /// Fitted sine terms for non-rational densities (from the fit module).
    pub sine_terms_override: Option<Vec<SineTerm>>,
    pub quad_tol: QuadTol,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            window: 25.0,
            matsubara_cutoff: None,
            w_factor: 50.0,
            extra_scale: 1.0,
            shift: FsChoice::FromAnsatz,
            sine_terms_override: None,
            quad_tol: QuadTol::default(),
        }
    }
}

/// The correlation function C(t) split into symmetric/antisymmetric and
/// classical/quantum parts, with closed-form evaluators where available.
#[derive(Debug, Clone)]
pub struct CorrelationDecomposition {
    pub j: SpectralDensity,
    pub temperature: Temperature,
    pub window: f64,
    pub matsubara_cutoff: usize,
    pub w: f64,
    pub shift: FsChoice,
    pub quad_tol: QuadTol,
    /// C_as(t) ≃ Σ a_j sin(b_j t) e^{−c_j|t|} (exact for rational J).
    pub sine_terms: Vec<SineTerm>,
    /// C_Q(t) = Σ i a_j e^{−i b_j t} e^{−c_j|t|}.
    pub quantum_terms: Vec<QuantumTerm>,
    /// Exponential part of C_class(t).
    pub class_exp: Vec<ExpTerm>,
    /// Exponential part of C_s(t) (rational case; includes the Matsubara
    /// series at finite β).
    pub cs_exp: Vec<ExpTerm>,
    pub class_tail: ClassTail,
    poles: Option<PoleData>,
}

/// Smallest time resolved by correlation identity checks: distributional
/// modifications at t = 0 are excluded below T/(4 N_ξ).
pub fn min_resolved_time(window: f64, n_xi: usize) -> f64 {
    window / (4.0 * n_xi.max(1) as f64)
}

pub(crate) fn coth(z: Complex64) -> Complex64 {
    if z.re.abs() > 20.0 {
        let s = if z.re > 0.0 { 1.0 } else { -1.0 };
        Complex64::new(s, 0.0) + 2.0 * s * (-2.0 * s * z).exp()
    } else {
        1.0 / z.tanh()
    }
}

fn sg(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Matsubara truncation: grow K from ceil(10 ω β / 2π) until the first
/// neglected coefficient (2/β)|J(ω^M_{K+1})| drops below 1e−9, cap 2000.
fn matsubara_cutoff_default(j: &SpectralDensity, beta: f64) -> usize {
    let scale = j.scale();
    let mut k =
        ((10.0 * scale * beta / (2.0 * std::f64::consts::PI)).ceil() as usize).max(20);
    while k < 2000 {
        let next = 2.0 * std::f64::consts::PI * (k + 1) as f64 / beta;
        let coef = (2.0 / beta) * j.eval_complex(Complex64::new(0.0, next)).norm();
        if coef < 1e-9 {
            break;
        }
        k = (k * 2).min(2000);
    }
    k
}

fn matsubara_series(j: &SpectralDensity, beta: f64, k_max: usize) -> Vec<ExpTerm> {
    (1..=k_max)
        .map(|k| {
            let freq = 2.0 * std::f64::consts::PI * k as f64 / beta;
            let coef = (2.0 * I / beta) * j.eval_complex(Complex64::new(0.0, freq));
            ExpTerm { coef, rate: Complex64::new(-freq, 0.0) }
        })
        .collect()
}

/// Build the quantum-classical decomposition of the bath correlation.
pub fn build_decomposition(
    j: &SpectralDensity,
    temperature: Temperature,
    cfg: &DecompositionConfig,
) -> Result<CorrelationDecomposition, BathError> {
    j.validate()?;
    if let Temperature::Beta(b) = temperature {
        if b <= 0.0 {
            return Err(BathError::InvalidSpectralDensity("beta must be positive".into()));
        }
    }
    match j {
        SpectralDensity::BrownianCritical { .. } => Err(BathError::UnsupportedVariant(
            "critical damping has a double pole; no simple-pole decomposition exists".into(),
        )),
        SpectralDensity::OhmicExp { .. } => build_ohmic(j, temperature, cfg),
        _ => build_rational(j, temperature, cfg),
    }
}

fn build_rational(
    j: &SpectralDensity,
    temperature: Temperature,
    cfg: &DecompositionConfig,
) -> Result<CorrelationDecomposition, BathError> {
    let poles = classify_poles(j)?;
    let w = default_w(poles.max_pole_magnitude(), cfg.extra_scale, cfg.w_factor);
    let sine_terms = match cfg.shift {
        FsChoice::FromAnsatz => antisymmetric_terms(&poles, w)?,
        FsChoice::Zero => Vec::new(),
    };
    let quantum_terms: Vec<QuantumTerm> = sine_terms
        .iter()
        .map(|s| QuantumTerm {
            lambda_sq: I * s.amplitude,
            frequency: s.frequency,
            decay: s.decay,
        })
        .collect();

    let mut cs_exp: Vec<ExpTerm> = Vec::new();
    let mut class_exp: Vec<ExpTerm> = Vec::new();
    let mut k_used = 0usize;
    let class_tail;
    match temperature {
        Temperature::Beta(beta) => {
            let k_max =
                cfg.matsubara_cutoff.unwrap_or_else(|| matsubara_cutoff_default(j, beta));
            k_used = k_max;
            // a J-pole on a Matsubara pole makes coth(βω/2) blow up
            let tol = 1e-9 * poles.max_pole_magnitude();
            for pr in poles.quadruples.iter().chain(poles.imaginary_pairs.iter()) {
                let k_near = (pr.pole.im * beta / (2.0 * std::f64::consts::PI)).round();
                if k_near >= 1.0 {
                    let mats =
                        Complex64::new(0.0, 2.0 * std::f64::consts::PI * k_near / beta);
                    let dist = (pr.pole - mats).norm();
                    if dist <= tol {
                        return Err(BathError::MatsubaraCollision {
                            matsubara: mats,
                            pole: pr.pole,
                            dist,
                        });
                    }
                }
            }
            for q in &poles.quadruples {
                let rb = q.residue * coth(0.5 * beta * q.pole);
                cs_exp.push(ExpTerm { coef: I * rb, rate: I * q.pole });
                cs_exp.push(ExpTerm { coef: -I * rb.conj(), rate: -I * q.pole.conj() });
                match cfg.shift {
                    FsChoice::FromAnsatz => {
                        class_exp
                            .push(ExpTerm { coef: I * (rb - q.residue), rate: I * q.pole });
                        class_exp.push(ExpTerm {
                            coef: -I * (rb.conj() + q.residue),
                            rate: -I * q.pole.conj(),
                        });
                        for sign in [1.0, -1.0] {
                            class_exp.push(ExpTerm {
                                coef: Complex64::new(0.0, -q.residue.re),
                                rate: Complex64::new(-w, sign * q.pole.re),
                            });
                        }
                    }
                    FsChoice::Zero => {
                        class_exp.push(ExpTerm { coef: I * rb, rate: I * q.pole });
                        class_exp
                            .push(ExpTerm { coef: -I * rb.conj(), rate: -I * q.pole.conj() });
                    }
                }
            }
            for p in &poles.imaginary_pairs {
                let rb = p.residue * coth(0.5 * beta * p.pole);
                cs_exp.push(ExpTerm { coef: I * rb, rate: I * p.pole });
                match cfg.shift {
                    FsChoice::FromAnsatz => {
                        class_exp
                            .push(ExpTerm { coef: I * (rb - p.residue), rate: I * p.pole });
                        class_exp.push(ExpTerm {
                            coef: -I * p.residue,
                            rate: Complex64::new(-w, 0.0),
                        });
                    }
                    FsChoice::Zero => {
                        class_exp.push(ExpTerm { coef: I * rb, rate: I * p.pole });
                    }
                }
            }
            let series = matsubara_series(j, beta, k_max);
            cs_exp.extend(series.iter().copied());
            class_exp.extend(series);
            class_tail = ClassTail::None;
        }
        Temperature::Zero => {
            if !poles.imaginary_pairs.is_empty() {
                return Err(BathError::UnsupportedVariant(
                    "zero-temperature closed form needs poles off the imaginary axis \
                     (J(ix) would be singular on the Matsubara integration path); \
                     use a small finite beta instead"
                        .into(),
                ));
            }
            for q in &poles.quadruples {
                // coth → 1: R^β → R
                cs_exp.push(ExpTerm { coef: I * q.residue, rate: I * q.pole });
                cs_exp.push(ExpTerm { coef: -I * q.residue.conj(), rate: -I * q.pole.conj() });
                match cfg.shift {
                    FsChoice::FromAnsatz => {
                        class_exp.push(ExpTerm {
                            coef: Complex64::new(0.0, -2.0 * q.residue.re),
                            rate: -I * q.pole.conj(),
                        });
                        for sign in [1.0, -1.0] {
                            class_exp.push(ExpTerm {
                                coef: Complex64::new(0.0, -q.residue.re),
                                rate: Complex64::new(-w, sign * q.pole.re),
                            });
                        }
                    }
                    FsChoice::Zero => {
                        class_exp.push(ExpTerm { coef: I * q.residue, rate: I * q.pole });
                        class_exp.push(ExpTerm {
                            coef: -I * q.residue.conj(),
                            rate: -I * q.pole.conj(),
                        });
                    }
                }
            }
            class_tail = ClassTail::ZeroTemperatureIntegral;
        }
    }
    class_exp.retain(|t| t.coef.norm() > 0.0);
    cs_exp.retain(|t| t.coef.norm() > 0.0);

    Ok(CorrelationDecomposition {
        j: j.clone(),
        temperature,
        window: cfg.window,
        matsubara_cutoff: k_used,
        w,
        shift: cfg.shift,
        quad_tol: cfg.quad_tol,
        sine_terms,
        quantum_terms,
        class_exp,
        cs_exp,
        class_tail,
        poles: Some(poles),
    })
}

fn build_ohmic(
    j: &SpectralDensity,
    temperature: Temperature,
    cfg: &DecompositionConfig,
) -> Result<CorrelationDecomposition, BathError> {
    let sine_terms = match cfg.shift {
        FsChoice::FromAnsatz => cfg.sine_terms_override.clone().ok_or_else(|| {
            BathError::UnsupportedVariant(
                "non-rational spectral density: provide fitted sine terms \
                 (fit::fit_decaying_sines) via sine_terms_override"
                    .into(),
            )
        })?,
        FsChoice::Zero => Vec::new(),
    };
    let quantum_terms: Vec<QuantumTerm> = sine_terms
        .iter()
        .map(|s| QuantumTerm {
            lambda_sq: I * s.amplitude,
            frequency: s.frequency,
            decay: s.decay,
        })
        .collect();
    // f_s = −iΣ a cos(bt) e^{−c|t|} = Σ (−ia/2)[e^{(ib−c)|t|} + e^{(−ib−c)|t|}]
    let mut class_exp = Vec::new();
    for s in &sine_terms {
        let half = -0.5 * I * s.amplitude;
        class_exp.push(ExpTerm { coef: half, rate: I * s.frequency - s.decay });
        class_exp.push(ExpTerm { coef: half, rate: -I * s.frequency - s.decay });
    }
    let class_tail = match temperature {
        Temperature::Zero => ClassTail::OhmicSymmetricZeroT,
        Temperature::Beta(_) => ClassTail::SymmetricQuadrature,
    };
    let w = default_w(j.scale(), cfg.extra_scale, cfg.w_factor);
    Ok(CorrelationDecomposition {
        j: j.clone(),
        temperature,
        window: cfg.window,
        matsubara_cutoff: 0,
        w,
        shift: cfg.shift,
        quad_tol: cfg.quad_tol,
        sine_terms,
        quantum_terms,
        class_exp,
        cs_exp: Vec::new(),
        class_tail,
        poles: None,
    })
}

impl CorrelationDecomposition {
    /// Zero-T Matsubara contribution (i/π)∫₀^∞ J(ix) e^{−x|t|} dx.
    pub fn matsubara_integral(&self, t: f64) -> Result<Complex64, BathError> {
        let scale = self.j.scale();
        let f = |x: f64| self.j.eval_complex(Complex64::new(0.0, x)) * (-x * t.abs()).exp();
        let r = quad::semi_infinite(&f, scale, self.quad_tol)?;
        Ok(I / std::f64::consts::PI * r.value)
    }

    /// The purely decaying Matsubara part of C_class: series at finite β,
    /// integral at zero temperature.
    pub fn matsubara_part(&self, t: f64) -> Result<Complex64, BathError> {
        match self.temperature {
            Temperature::Beta(beta) => {
                Ok(matsubara_series(&self.j, beta, self.matsubara_cutoff)
                    .iter()
                    .map(|e| e.eval(t))
                    .sum())
            }
            Temperature::Zero => self.matsubara_integral(t),
        }
    }

    fn tail_eval(&self, t: f64) -> Result<Complex64, BathError> {
        match &self.class_tail {
            ClassTail::None => Ok(Complex64::new(0.0, 0.0)),
            ClassTail::ZeroTemperatureIntegral => self.matsubara_integral(t),
            ClassTail::OhmicSymmetricZeroT | ClassTail::SymmetricQuadrature => {
                self.c_s_direct(t)
            }
        }
    }

    fn c_s_direct(&self, t: f64) -> Result<Complex64, BathError> {
        match (&self.j, self.temperature) {
            (SpectralDensity::OhmicExp { alpha, omega_c }, Temperature::Zero) => {
                let x = omega_c * t;
                Ok(Complex64::new(
                    alpha * omega_c * omega_c * (1.0 - x * x) / (1.0 + x * x).powi(2),
                    0.0,
                ))
            }
            (j, temp) => {
                let c = correlation_numeric(j, temp, t, self.quad_tol)?;
                Ok(Complex64::new(c.re, 0.0))
            }
        }
    }

    /// Classical correlation C_class(t) = C_s(t) + f_s(t).
    pub fn c_class(&self, t: f64) -> Result<Complex64, BathError> {
        let exp_sum: Complex64 = self.class_exp.iter().map(|e| e.eval(t)).sum();
        Ok(exp_sum + self.tail_eval(t)?)
    }

    /// Quantum correlation C_Q(t) = Σ λ² e^{−iΩt} e^{−Γ|t|}.
    pub fn c_q(&self, t: f64) -> Complex64 {
        match self.shift {
            FsChoice::FromAnsatz => self.quantum_terms.iter().map(|q| q.eval(t)).sum(),
            FsChoice::Zero => self.c_as(t),
        }
    }

    /// Symmetric shift f_s(t) = −i Σ a_j cos(b_j t) e^{−c_j|t|}.
    pub fn f_s(&self, t: f64) -> Complex64 {
        self.sine_terms
            .iter()
            .map(|s| -I * s.amplitude * (s.frequency * t).cos() * (-s.decay * t.abs()).exp())
            .sum()
    }

    /// Exact antisymmetric correlation (sign-function form for rational J,
    /// closed form for Ohmic).
    pub fn c_as(&self, t: f64) -> Complex64 {
        if let Some(poles) = &self.poles {
            let mut acc = Complex64::new(0.0, 0.0);
            for q in &poles.quadruples {
                let damp = (-q.pole.im * t.abs()).exp();
                acc += -2.0 * I * sg(t) * q.residue.re * (q.pole.re * t).cos() * damp;
                acc += 2.0 * I * q.residue.im * (q.pole.re * t).sin() * damp;
            }
            for p in &poles.imaginary_pairs {
                acc += -I * sg(t) * p.residue.re * (-p.pole.im * t.abs()).exp();
            }
            acc
        } else if let SpectralDensity::OhmicExp { alpha, omega_c } = &self.j {
            let x = omega_c * t;
            Complex64::new(0.0, -2.0 * alpha * omega_c * omega_c * x / (1.0 + x * x).powi(2))
        } else {
            unreachable!("no antisymmetric evaluator")
        }
    }

    /// Antisymmetric correlation evaluated from the decaying-sine terms.
    pub fn c_as_ansatz(&self, t: f64) -> Complex64 {
        self.sine_terms.iter().map(|s| s.eval(t)).sum()
    }

    /// Symmetric correlation C_s(t).
    pub fn c_s(&self, t: f64) -> Result<Complex64, BathError> {
        if self.poles.is_some() {
            let exp_sum: Complex64 = self.cs_exp.iter().map(|e| e.eval(t)).sum();
            let mats = match self.temperature {
                Temperature::Beta(_) => Complex64::new(0.0, 0.0), // series is in cs_exp
                Temperature::Zero => self.matsubara_integral(t)?,
            };
            Ok(exp_sum + mats)
        } else {
            self.c_s_direct(t)
        }
    }

    /// Full correlation C(t) = C_s(t) + C_as(t) from closed forms.
    pub fn c_total(&self, t: f64) -> Result<Complex64, BathError> {
        Ok(self.c_s(t)? + self.c_as(t))
    }

    pub fn pole_data(&self) -> Option<&PoleData> {
        self.poles.as_ref()
    }
}

/// C(t) by direct quadrature:
/// (1/π)∫₀^∞ J(ω)[coth(βω/2) cos(ωt) − i sin(ωt)] dω.
///
/// The upper cutoff comes from a numeric tail bound |J(ω)| ≤ M/ω², and the
/// panel budget grows with the oscillation count ωt/π.
pub fn correlation_numeric(
    j: &SpectralDensity,
    temperature: Temperature,
    t: f64,
    tol: QuadTol,
) -> Result<Complex64, BathError> {
    j.validate()?;
    let scale = j.scale();
    let mut cutoff = 4.0 * scale;
    for _ in 0..48 {
        let m: f64 = (0..32)
            .map(|k| {
                let w = cutoff * (100.0f64).powf(k as f64 / 31.0);
                j.eval(w).abs() * w * w
            })
            .fold(0.0, f64::max)
            * 1.5;
        let coth_factor = match temperature {
            Temperature::Zero => 1.0,
            Temperature::Beta(beta) => 1.0 / (0.5 * beta * cutoff).tanh(),
        };
        if coth_factor * m / (std::f64::consts::PI * cutoff) < 0.25 * tol.abs_tol {
            break;
        }
        cutoff *= 2.0;
    }
    let integrand = |omega: f64| -> Complex64 {
        let jw = j.eval(omega);
        let cth = match temperature {
            Temperature::Zero => 1.0,
            Temperature::Beta(beta) => {
                let y = 0.5 * beta * omega;
                if y.abs() < 1e-4 {
                    1.0 / y + y / 3.0
                } else {
                    1.0 / y.tanh()
                }
            }
        };
        let (s, c) = (omega * t).sin_cos();
        Complex64::new(jw * cth * c, -jw * s) / std::f64::consts::PI
    };
    let oscillations = (cutoff * t.abs() / std::f64::consts::PI).ceil() as usize;
    let budget = (20_000 + 30 * oscillations).min(2_000_000);
    let r = quad::adaptive_with_budget(&integrand, 0.0, cutoff, tol, budget)?;
    Ok(r.value)
}

/// Map C_Q terms onto zero-temperature pseudomodes:
/// λ_j = √(i a_j) (principal branch), Ω_j = b_j, Γ_j = c_j, n_j = 0.
///
/// The model depends only on λ², so the branch is observably irrelevant.
/// Zero-coupling terms are dropped.
pub fn pseudomode_params_from_decomposition(
    dec: &CorrelationDecomposition,
    fock_dim: usize,
) -> PseudomodeSet {
    let amp_scale = dec
        .quantum_terms
        .iter()
        .map(|q| q.lambda_sq.norm())
        .fold(0.0, f64::max);
    let modes = dec
        .quantum_terms
        .iter()
        .filter(|q| q.lambda_sq.norm() > 1e-12 * amp_scale)
        .map(|q| Pseudomode {
            coupling: q.lambda_sq.sqrt(),
            frequency: q.frequency,
            decay: q.decay,
            occupation: Complex64::new(0.0, 0.0),
            fock_dim,
        })
        .collect();
    PseudomodeSet { modes }
}

/// Resonant modes of the fully deterministic comparator for an underdamped
/// Brownian bath. At finite β these are three modes: λ₁=√(λ²/2Ω) with
/// n₁=(R_B−1)/2, plus λ₂,₃=√(±I_B λ²/4Ω) with Γ₂,₃=Γ∓iΩ and n=0, where
/// R_B, I_B are the real/imaginary parts of coth[β(Ω+iΓ)/2]. In the zero-T
/// limit modes 2,3 decouple and n₁→0. Matsubara modes come from
/// `fit::fit_matsubara_exponentials` and are appended by the caller.
pub fn comparator_resonant_modes(
    j: &SpectralDensity,
    temperature: Temperature,
    fock_dim_resonant: usize,
) -> Result<Vec<Pseudomode>, BathError> {
    let (omega0, gamma, lambda) = match j {
        SpectralDensity::BrownianUnderdamped { omega0, gamma, lambda } => {
            (*omega0, *gamma, *lambda)
        }
        _ => {
            return Err(BathError::UnsupportedVariant(
                "deterministic comparator is defined for the underdamped Brownian density"
                    .into(),
            ))
        }
    };
    j.validate()?;
    let big_gamma = gamma / 2.0;
    let omega = (omega0 * omega0 - big_gamma * big_gamma).sqrt();
    let lam_sq = lambda * lambda;
    let mut modes = Vec::new();
    match temperature {
        Temperature::Zero => {
            modes.push(Pseudomode {
                coupling: Complex64::new((lam_sq / (2.0 * omega)).sqrt(), 0.0),
                frequency: Complex64::new(omega, 0.0),
                decay: Complex64::new(big_gamma, 0.0),
                occupation: Complex64::new(0.0, 0.0),
                fock_dim: fock_dim_resonant,
            });
        }
        Temperature::Beta(beta) => {
            let cth = coth(0.5 * beta * Complex64::new(omega, big_gamma));
            let (rb, ib) = (cth.re, cth.im);
            modes.push(Pseudomode {
                coupling: Complex64::new((lam_sq / (2.0 * omega)).sqrt(), 0.0),
                frequency: Complex64::new(omega, 0.0),
                decay: Complex64::new(big_gamma, 0.0),
                occupation: Complex64::new((rb - 1.0) / 2.0, 0.0),
                fock_dim: fock_dim_resonant,
            });
            // λ²₂,₃ = ±i·I_B·λ²/4Ω: the extra i makes C_s stay real for
            // real β (the auxiliary pair contributes −2·(λ²/4Ω)·I_B·sin(Ω|t|))
            let aux = lam_sq / (4.0 * omega);
            for (sign, decay_im) in [(1.0, -omega), (-1.0, omega)] {
                let lsq = Complex64::new(0.0, sign * ib * aux);
                if lsq.norm() > 1e-14 * aux {
                    modes.push(Pseudomode {
                        coupling: lsq.sqrt(),
                        frequency: Complex64::new(0.0, 0.0),
                        decay: Complex64::new(big_gamma, decay_im),
                        occupation: Complex64::new(0.0, 0.0),
                        fock_dim: 3,
                    });
                }
            }
        }
    }
    Ok(modes)
}
