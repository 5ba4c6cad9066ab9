//! Lindblad-form integration on the system ⊗ pseudomode space with
//! complex-valued parameters and a time-dependent classical drive.
//!
//! No complex conjugation is applied to any parameter anywhere: couplings,
//! frequencies, rates and occupations enter the equation exactly as given,
//! which is what makes analytically-continued pseudomodes work.
//!
//! The right-hand side is applied term by term using the tensor structure
//! (ladder operators touch one slot, system operators another), so one
//! evaluation costs O(d²·Σ local dims) instead of the O(d³) of dense
//! matrix products.

use crate::qcore::{DensityMatrix, HilbertLayout, QcoreError};
use ndarray::Array2;
use num_complex::Complex64;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Qcore(#[from] QcoreError),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("trace drift {drift:.3e} at step {step} (t = {time:.4}); reduce the step size")]
    TraceDrift { step: usize, time: f64, drift: f64 },
    #[error("non-finite state at step {step} (t = {time:.4})")]
    NonFinite { step: usize, time: f64 },
    #[error(
        "thermal weights for mode {mode} do not converge at truncation \
         (|ratio| = {ratio:.3}); need |n/(1+n)| < 1"
    )]
    ThermalNonConvergent { mode: usize, ratio: f64 },
}

impl DynamicsError {
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            DynamicsError::TraceDrift { .. } | DynamicsError::NonFinite { .. }
        )
    }
}

/// One pseudomode: coupling λ, frequency Ω, rate Γ, occupation n — all
/// complex — plus the Fock truncation used to represent it.
#[derive(Debug, Clone, Copy)]
pub struct Pseudomode {
    pub coupling: Complex64,
    pub frequency: Complex64,
    pub decay: Complex64,
    pub occupation: Complex64,
    pub fock_dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PseudomodeSet {
    pub modes: Vec<Pseudomode>,
}

impl PseudomodeSet {
    /// Free-mode correlation Σ λ² e^{−Γ|t|}[(1+n)e^{−iΩt} + n e^{iΩt}].
    pub fn correlation(&self, t: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|m| {
                let lam_sq = m.coupling * m.coupling;
                let damp = (-m.decay * t.abs()).exp();
                let one = Complex64::new(1.0, 0.0);
                lam_sq
                    * damp
                    * ((one + m.occupation) * (-I * m.frequency * t).exp()
                        + m.occupation * (I * m.frequency * t).exp())
            })
            .sum()
    }
}

/// System Hamiltonian and named observables, all on the bare system space.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub hamiltonian: Array2<Complex64>,
    pub observables: Vec<(String, Array2<Complex64>)>,
}

/// One bath: its system coupling operator and its pseudomodes. The drive
/// field (when present) couples through the same operator.
#[derive(Debug, Clone)]
pub struct BathAttachment {
    pub coupling_op: Array2<Complex64>,
    pub modes: PseudomodeSet,
}

/// Classical drive sampled on the half-step grid t = m·(dt/2),
/// m = 0..2·n_steps.
#[derive(Debug, Clone)]
pub struct DriveSampled {
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub n_steps: usize,
    /// Observables are recorded every this many steps (must divide n_steps).
    pub record_every: usize,
    /// Abort threshold on |Tr ρ − 1|.
    pub trace_tol: f64,
    pub store_reduced_states: bool,
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(DynamicsError::BadConfig("dt must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(DynamicsError::BadConfig("n_steps must be positive".into()));
        }
        if self.record_every == 0 || self.n_steps % self.record_every != 0 {
            return Err(DynamicsError::BadConfig(format!(
                "record_every ({}) must divide n_steps ({})",
                self.record_every, self.n_steps
            )));
        }
        Ok(())
    }
}

/// Default step rule: h·max(|Ω_j|, |Γ_j| of non-regularization modes,
/// system scale) ≤ 0.02. Modes decaying on the W scale are excluded; they
/// die within the first few steps regardless.
pub fn default_step(system_scale: f64, modes: &[Pseudomode], w: f64) -> f64 {
    let mut scale = system_scale.max(1e-12);
    for m in modes {
        if m.decay.norm() < 0.25 * w {
            scale = scale.max(m.frequency.norm()).max(m.decay.norm());
        }
    }
    0.02 / scale
}

/// Observable records along one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One series per named observable, aligned with `times`.
    pub observables: Vec<Vec<Complex64>>,
    /// Reduced system states at record times (when requested).
    pub reduced_states: Option<Vec<Array2<Complex64>>>,
    /// Largest diagonal weight seen in the highest Fock level, per mode;
    /// the truncation monitor.
    pub max_top_population: Vec<f64>,
    pub max_trace_drift: f64,
}

struct ModeSlot {
    attachment: usize,
    lambda: Complex64,
    frequency: Complex64,
    /// 2Γ(1+n)
    emit: Complex64,
    /// 2Γn
    absorb: Complex64,
}

/// Precomputed structured Liouvillian.
pub struct Engine {
    pub layout: HilbertLayout,
    d: usize,
    ds: usize,
    sys_stride: usize,
    sys_h: Array2<Complex64>,
    couplings: Vec<Array2<Complex64>>,
    modes: Vec<ModeSlot>,
    /// per mode: (dst, src = dst + stride, √(k+1)) for k < f−1
    up: Vec<Vec<(usize, usize, f64)>>,
    /// per mode: (dst, src = dst − stride, √k) for k ≥ 1
    down: Vec<Vec<(usize, usize, f64)>>,
    diag_left: Vec<Complex64>,
    diag_right: Vec<Complex64>,
    /// indices of the top Fock level per mode (truncation monitor)
    top_level: Vec<Vec<usize>>,
}

pub struct Workspace {
    tmp: Vec<Complex64>,
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl Workspace {
    pub fn new(d: usize) -> Self {
        let z = vec![ZERO; d * d];
        Workspace {
            tmp: z.clone(),
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            stage: z,
        }
    }
}

impl Engine {
    pub fn new(sys: &SystemSpec, attachments: &[BathAttachment]) -> Result<Self, DynamicsError> {
        let ds = sys.hamiltonian.nrows();
        if sys.hamiltonian.ncols() != ds {
            return Err(DynamicsError::BadConfig("system Hamiltonian not square".into()));
        }
        let mut dims = vec![ds];
        let mut modes = Vec::new();
        for (b, att) in attachments.iter().enumerate() {
            if att.coupling_op.nrows() != ds || att.coupling_op.ncols() != ds {
                return Err(DynamicsError::BadConfig(format!(
                    "coupling operator of bath {b} does not match the system dimension"
                )));
            }
            for m in &att.modes.modes {
                if m.fock_dim < 2 {
                    return Err(DynamicsError::BadConfig(
                        "pseudomode Fock truncation must be at least 2".into(),
                    ));
                }
                dims.push(m.fock_dim);
                modes.push(ModeSlot {
                    attachment: b,
                    lambda: m.coupling,
                    frequency: m.frequency,
                    emit: 2.0 * m.decay * (Complex64::new(1.0, 0.0) + m.occupation),
                    absorb: 2.0 * m.decay * m.occupation,
                });
            }
        }
        let layout = HilbertLayout::new(dims)?;
        let d = layout.total_dim();
        let sys_stride = layout.stride(0);

        let mut up = Vec::new();
        let mut down = Vec::new();
        let mut top_level = Vec::new();
        for slot in 1..layout.dims().len() {
            let st = layout.stride(slot);
            let f = layout.dims()[slot];
            let mut u = Vec::new();
            let mut dn = Vec::new();
            let mut top = Vec::new();
            for i in 0..d {
                let k = layout.digit(i, slot);
                if k + 1 < f {
                    u.push((i, i + st, ((k + 1) as f64).sqrt()));
                }
                if k >= 1 {
                    dn.push((i, i - st, (k as f64).sqrt()));
                }
                if k == f - 1 {
                    top.push(i);
                }
            }
            up.push(u);
            down.push(dn);
            top_level.push(top);
        }

        let mut diag_left = vec![ZERO; d];
        let mut diag_right = vec![ZERO; d];
        for i in 0..d {
            let mut omega_part = ZERO;
            let mut damp_part = ZERO;
            for (m, ms) in modes.iter().enumerate() {
                let f = layout.dims()[m + 1];
                let k = layout.digit(i, m + 1);
                omega_part += ms.frequency * k as f64;
                // anticommutators: Γ(1+n)·(a†a) + Γn·(aa†); in the truncated
                // space aa† has diagonal (1, …, f−1, 0) — the top entry is
                // cut, which is exactly what keeps the jump terms traceless
                let aadag = if k + 1 < f { (k + 1) as f64 } else { 0.0 };
                damp_part += 0.5 * ms.emit * k as f64 + 0.5 * ms.absorb * aadag;
            }
            diag_left[i] = -I * omega_part - damp_part;
            diag_right[i] = I * omega_part - damp_part;
        }

        Ok(Engine {
            layout,
            d,
            ds,
            sys_stride,
            sys_h: sys.hamiltonian.clone(),
            couplings: attachments.iter().map(|a| a.coupling_op.clone()).collect(),
            modes,
            up,
            down,
            diag_left,
            diag_right,
            top_level,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// out += scale · (h ⊗ I) · rho, h acting on the system slot.
    fn add_left_system(
        &self,
        h: &Array2<Complex64>,
        scale: Complex64,
        rho: &[Complex64],
        out: &mut [Complex64],
    ) {
        let d = self.d;
        let s = self.sys_stride;
        for a in 0..self.ds {
            for b in 0..self.ds {
                let hv = scale * h[(a, b)];
                if hv == ZERO {
                    continue;
                }
                for r in 0..s {
                    let dst = (a * s + r) * d;
                    let src = (b * s + r) * d;
                    for j in 0..d {
                        out[dst + j] += hv * rho[src + j];
                    }
                }
            }
        }
    }

    /// out += scale · rho · (h ⊗ I).
    fn add_right_system(
        &self,
        h: &Array2<Complex64>,
        scale: Complex64,
        rho: &[Complex64],
        out: &mut [Complex64],
    ) {
        let d = self.d;
        let s = self.sys_stride;
        for i in 0..d {
            let base = i * d;
            for a in 0..self.ds {
                for b in 0..self.ds {
                    let hv = scale * h[(a, b)];
                    if hv == ZERO {
                        continue;
                    }
                    for r in 0..s {
                        out[base + b * s + r] += rho[base + a * s + r] * hv;
                    }
                }
            }
        }
    }

    /// tmp = (a_m + a†_m) · rho.
    fn x_left(&self, m: usize, rho: &[Complex64], tmp: &mut [Complex64]) {
        let d = self.d;
        tmp.fill(ZERO);
        // a|k⟩ = √k|k−1⟩: (a ρ)[i,·] = √(k_i+1) ρ[i+st,·] — rows from `up`
        for &(dst, src, w) in &self.up[m] {
            let (o, s) = (dst * d, src * d);
            for j in 0..d {
                tmp[o + j] += w * rho[s + j];
            }
        }
        // (a† ρ)[i,·] = √(k_i) ρ[i−st,·] — rows from `down`
        for &(dst, src, w) in &self.down[m] {
            let (o, s) = (dst * d, src * d);
            for j in 0..d {
                tmp[o + j] += w * rho[s + j];
            }
        }
    }

    /// tmp = rho · (a_m + a†_m).
    fn x_right(&self, m: usize, rho: &[Complex64], tmp: &mut [Complex64]) {
        let d = self.d;
        tmp.fill(ZERO);
        for i in 0..d {
            let base = i * d;
            // (ρ a)[·,j] = √(k_j) ρ[·, j−st]: columns from `down`
            for &(dst, src, w) in &self.down[m] {
                tmp[base + dst] += w * rho[base + src];
            }
            // (ρ a†)[·,j] = √(k_j+1) ρ[·, j+st]: columns from `up`
            for &(dst, src, w) in &self.up[m] {
                tmp[base + dst] += w * rho[base + src];
            }
        }
    }

    /// Full right-hand side. `fields` holds one drive value per attachment.
    pub fn rhs(
        &self,
        fields: &[Complex64],
        rho: &[Complex64],
        out: &mut [Complex64],
        ws_tmp: &mut [Complex64],
    ) {
        let d = self.d;
        out.fill(ZERO);

        // diagonal part: mode frequencies and anticommutator damping
        for i in 0..d {
            let gl = self.diag_left[i];
            let row = i * d;
            for j in 0..d {
                out[row + j] += (gl + self.diag_right[j]) * rho[row + j];
            }
        }

        // system Hamiltonian plus classical drives: −i[(H_S + Σ ξ_b s_b), ρ]
        let mut h_t = self.sys_h.clone();
        for (b, &xi) in fields.iter().enumerate() {
            if xi != ZERO {
                h_t.scaled_add(xi, &self.couplings[b]);
            }
        }
        self.add_left_system(&h_t, -I, rho, out);
        self.add_right_system(&h_t, I, rho, out);

        // couplings −iλ_j [s_b X_j, ρ]
        for (m, ms) in self.modes.iter().enumerate() {
            if ms.lambda != ZERO {
                let s_op = &self.couplings[ms.attachment];
                self.x_left(m, rho, ws_tmp);
                self.add_left_system(s_op, -I * ms.lambda, ws_tmp, out);
                self.x_right(m, rho, ws_tmp);
                self.add_right_system(s_op, I * ms.lambda, ws_tmp, out);
            }
        }

        // jump terms 2Γ(1+n)·aρa† and 2Γn·a†ρa
        for (m, ms) in self.modes.iter().enumerate() {
            if ms.emit != ZERO {
                for &(di, si, wi) in &self.up[m] {
                    let orow = di * d;
                    let srow = si * d;
                    for &(dj, sj, wj) in &self.up[m] {
                        out[orow + dj] += ms.emit * wi * wj * rho[srow + sj];
                    }
                }
            }
            if ms.absorb != ZERO {
                for &(di, si, wi) in &self.down[m] {
                    let orow = di * d;
                    let srow = si * d;
                    for &(dj, sj, wj) in &self.down[m] {
                        out[orow + dj] += ms.absorb * wi * wj * rho[srow + sj];
                    }
                }
            }
        }
    }

    fn trace_of(&self, rho: &[Complex64]) -> Complex64 {
        let d = self.d;
        (0..d).map(|i| rho[i * d + i]).sum()
    }

    fn reduced(&self, rho: &[Complex64]) -> Array2<Complex64> {
        let d = self.d;
        let s = self.sys_stride;
        let mut out = Array2::zeros((self.ds, self.ds));
        for a in 0..self.ds {
            for b in 0..self.ds {
                let mut acc = ZERO;
                for r in 0..s {
                    acc += rho[(a * s + r) * d + b * s + r];
                }
                out[(a, b)] = acc;
            }
        }
        out
    }
}

/// Single right-hand-side evaluation, for tests and diagnostics.
pub fn lindblad_rhs(
    sys: &SystemSpec,
    attachments: &[BathAttachment],
    fields: &[Complex64],
    rho: &DensityMatrix,
) -> Result<DensityMatrix, DynamicsError> {
    let engine = Engine::new(sys, attachments)?;
    if rho.layout != engine.layout {
        return Err(DynamicsError::BadConfig(
            "state layout does not match system ⊗ modes".into(),
        ));
    }
    let d = engine.dim();
    let mut out = vec![ZERO; d * d];
    let mut tmp = vec![ZERO; d * d];
    let rho_slice = rho.entries.as_slice().expect("contiguous state");
    engine.rhs(fields, rho_slice, &mut out, &mut tmp);
    let entries = Array2::from_shape_vec((d, d), out).expect("shape");
    Ok(DensityMatrix::new(engine.layout.clone(), entries)?)
}

/// Product initial state ρ_S(0) ⊗ ∏_j (thermal diagonal of mode j), built
/// from each mode's occupation via e^{−β_jΩ_j} = n_j/(1+n_j); n_j = 0 gives
/// the vacuum. Truncated weights are renormalized.
pub fn thermal_init(
    sys_rho0: &Array2<Complex64>,
    attachments: &[BathAttachment],
) -> Result<DensityMatrix, DynamicsError> {
    let ds = sys_rho0.nrows();
    let mut dims = vec![ds];
    let mut weights: Vec<Vec<Complex64>> = Vec::new();
    let mut mode_index = 0usize;
    for att in attachments {
        for m in &att.modes.modes {
            dims.push(m.fock_dim);
            let n = m.occupation;
            let w = if n == ZERO {
                let mut v = vec![ZERO; m.fock_dim];
                v[0] = Complex64::new(1.0, 0.0);
                v
            } else {
                let q = n / (Complex64::new(1.0, 0.0) + n);
                if q.norm() >= 1.0 {
                    return Err(DynamicsError::ThermalNonConvergent {
                        mode: mode_index,
                        ratio: q.norm(),
                    });
                }
                let mut v = Vec::with_capacity(m.fock_dim);
                let mut acc = Complex64::new(1.0, 0.0);
                for _ in 0..m.fock_dim {
                    v.push(acc);
                    acc *= q;
                }
                let z: Complex64 = v.iter().sum();
                v.iter().map(|x| x / z).collect()
            };
            weights.push(w);
            mode_index += 1;
        }
    }
    let layout = HilbertLayout::new(dims)?;
    let d = layout.total_dim();
    let mut entries = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let a = layout.digit(i, 0);
            let b = layout.digit(j, 0);
            let mut v = sys_rho0[(a, b)];
            if v == ZERO {
                continue;
            }
            let mut diagonal = true;
            for (m, w) in weights.iter().enumerate() {
                let ki = layout.digit(i, m + 1);
                let kj = layout.digit(j, m + 1);
                if ki != kj {
                    diagonal = false;
                    break;
                }
                v *= w[ki];
            }
            if diagonal {
                entries[(i, j)] = v;
            }
        }
    }
    Ok(DensityMatrix::new(layout, entries)?)
}

/// Fixed-step RK4 integration of the stochastic pseudomode equation.
///
/// `drives` carries one optional sampled field per attachment, on the
/// half-step grid (2·n_steps + 1 values).
pub fn integrate(
    sys: &SystemSpec,
    attachments: &[BathAttachment],
    drives: &[Option<DriveSampled>],
    rho0: &DensityMatrix,
    cfg: &IntegrationConfig,
) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    let engine = Engine::new(sys, attachments)?;
    if rho0.layout != engine.layout {
        return Err(DynamicsError::BadConfig(
            "initial state layout does not match system ⊗ modes".into(),
        ));
    }
    if drives.len() != attachments.len() {
        return Err(DynamicsError::BadConfig(format!(
            "{} drives for {} attachments",
            drives.len(),
            attachments.len()
        )));
    }
    let tr0 = rho0.trace();
    if (tr0 - Complex64::new(1.0, 0.0)).norm() > 1e-6 {
        return Err(DynamicsError::BadConfig(format!(
            "initial state trace {tr0} is not 1"
        )));
    }
    for (b, dr) in drives.iter().enumerate() {
        if let Some(dr) = dr {
            if dr.values.len() != 2 * cfg.n_steps + 1 {
                return Err(DynamicsError::BadConfig(format!(
                    "drive {b} has {} samples; need 2·n_steps+1 = {}",
                    dr.values.len(),
                    2 * cfg.n_steps + 1
                )));
            }
        }
    }

    let d = engine.dim();
    let mut ws = Workspace::new(d);
    let mut rho: Vec<Complex64> = rho0.entries.iter().copied().collect();
    let n_records = cfg.n_steps / cfg.record_every + 1;
    let n_obs = sys.observables.len();

    let mut traj = Trajectory {
        times: Vec::with_capacity(n_records),
        observables: vec![Vec::with_capacity(n_records); n_obs],
        reduced_states: if cfg.store_reduced_states {
            Some(Vec::with_capacity(n_records))
        } else {
            None
        },
        max_top_population: vec![0.0; engine.modes.len()],
        max_trace_drift: 0.0,
    };

    let mut fields = vec![ZERO; attachments.len()];
    let set_fields = |m: usize, fields: &mut [Complex64]| {
        for (b, dr) in drives.iter().enumerate() {
            fields[b] = match dr {
                Some(dr) => dr.values[m],
                None => ZERO,
            };
        }
    };

    let record =
        |engine: &Engine, rho: &[Complex64], t: f64, traj: &mut Trajectory, sys: &SystemSpec| {
            traj.times.push(t);
            let red = engine.reduced(rho);
            for (k, (_, op)) in sys.observables.iter().enumerate() {
                let mut acc = ZERO;
                for a in 0..engine.ds {
                    for b in 0..engine.ds {
                        acc += op[(a, b)] * red[(b, a)];
                    }
                }
                traj.observables[k].push(acc);
            }
            for (m, tops) in engine.top_level.iter().enumerate() {
                let pop: Complex64 = tops.iter().map(|&i| rho[i * engine.d + i]).sum();
                traj.max_top_population[m] = traj.max_top_population[m].max(pop.norm());
            }
            if let Some(states) = traj.reduced_states.as_mut() {
                states.push(red);
            }
        };

    record(&engine, &rho, 0.0, &mut traj, sys);

    let h = cfg.dt;
    for step in 0..cfg.n_steps {
        let t = step as f64 * h;
        set_fields(2 * step, &mut fields);
        engine.rhs(&fields, &rho, &mut ws.k1, &mut ws.tmp);
        set_fields(2 * step + 1, &mut fields);
        for i in 0..d * d {
            ws.stage[i] = rho[i] + 0.5 * h * ws.k1[i];
        }
        engine.rhs(&fields, &ws.stage, &mut ws.k2, &mut ws.tmp);
        for i in 0..d * d {
            ws.stage[i] = rho[i] + 0.5 * h * ws.k2[i];
        }
        engine.rhs(&fields, &ws.stage, &mut ws.k3, &mut ws.tmp);
        set_fields(2 * step + 2, &mut fields);
        for i in 0..d * d {
            ws.stage[i] = rho[i] + h * ws.k3[i];
        }
        engine.rhs(&fields, &ws.stage, &mut ws.k4, &mut ws.tmp);
        let w = h / 6.0;
        for i in 0..d * d {
            rho[i] += w * (ws.k1[i] + 2.0 * (ws.k2[i] + ws.k3[i]) + ws.k4[i]);
        }

        let tr = engine.trace_of(&rho);
        let drift = (tr - Complex64::new(1.0, 0.0)).norm();
        if !drift.is_finite() {
            return Err(DynamicsError::NonFinite { step, time: t + h });
        }
        traj.max_trace_drift = traj.max_trace_drift.max(drift);
        if drift > cfg.trace_tol {
            return Err(DynamicsError::TraceDrift { step, time: t + h, drift });
        }
        if (step + 1) % cfg.record_every == 0 {
            record(&engine, &rho, (step + 1) as f64 * h, &mut traj, sys);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{self, fock_ops, pauli, Operator};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn basic_sys() -> SystemSpec {
        SystemSpec {
            hamiltonian: pauli::sigma_z().mapv(|z| 0.5 * z),
            observables: vec![
                ("sigma_z".into(), pauli::sigma_z()),
                ("sigma_x".into(), pauli::sigma_x()),
            ],
        }
    }

    /// Dense reference Lindbladian from explicit embedded operators.
    fn dense_rhs(
        sys: &SystemSpec,
        attachments: &[BathAttachment],
        fields: &[Complex64],
        rho: &Array2<Complex64>,
    ) -> Array2<Complex64> {
        let ds = sys.hamiltonian.nrows();
        let mut dims = vec![ds];
        for att in attachments {
            for m in &att.modes.modes {
                dims.push(m.fock_dim);
            }
        }
        let layout = HilbertLayout::new(dims).unwrap();
        let d = layout.total_dim();
        let mut h = Operator::from_system(&layout, &sys.hamiltonian).unwrap().entries;
        let mut slot = 0usize;
        let mut jump = Array2::<Complex64>::zeros((d, d));
        for (b, att) in attachments.iter().enumerate() {
            let s_full = Operator::from_system(&layout, &att.coupling_op).unwrap().entries;
            h = h + &s_full * fields[b];
            for m in &att.modes.modes {
                slot += 1;
                let (a, adag, n) = fock_ops(&layout, slot).unwrap();
                let x = &a.entries + &adag.entries;
                h = h + s_full.dot(&x) * m.coupling + &n.entries * m.frequency;
                let one = c(1.0, 0.0);
                let emit = m.decay * (one + m.occupation);
                let absorb = m.decay * m.occupation;
                let n_op = adag.entries.dot(&a.entries);
                let n_rev = a.entries.dot(&adag.entries);
                jump = jump
                    + (a.entries.dot(rho).dot(&adag.entries) * 2.0
                        - n_op.dot(rho)
                        - rho.dot(&n_op))
                        * emit
                    + (adag.entries.dot(rho).dot(&a.entries) * 2.0
                        - n_rev.dot(rho)
                        - rho.dot(&n_rev))
                        * absorb;
            }
        }
        (h.dot(rho) - rho.dot(&h)) * (-I) + jump
    }

    #[test]
    fn rhs_matches_dense_reference_with_complex_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut rnd = |s: f64| c(s * (rng.gen::<f64>() - 0.5), s * (rng.gen::<f64>() - 0.5));
        let sys = basic_sys();
        let attachments = vec![
            BathAttachment {
                coupling_op: pauli::sigma_x(),
                modes: PseudomodeSet {
                    modes: vec![
                        Pseudomode {
                            coupling: rnd(1.0),
                            frequency: rnd(2.0),
                            decay: rnd(1.0),
                            occupation: rnd(0.5),
                            fock_dim: 3,
                        },
                        Pseudomode {
                            coupling: rnd(1.0),
                            frequency: rnd(1.0),
                            decay: rnd(1.0),
                            occupation: c(0.0, 0.0),
                            fock_dim: 2,
                        },
                    ],
                },
            },
            BathAttachment {
                coupling_op: pauli::sigma_z(),
                modes: PseudomodeSet {
                    modes: vec![Pseudomode {
                        coupling: rnd(0.7),
                        frequency: rnd(1.5),
                        decay: rnd(0.8),
                        occupation: rnd(0.3),
                        fock_dim: 4,
                    }],
                },
            },
        ];
        let fields = [rnd(1.0), rnd(1.0)];
        let d = 2 * 3 * 2 * 4;
        let mut rho_m = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                rho_m[(i, j)] = rnd(1.0);
            }
        }
        let layout = HilbertLayout::new(vec![2, 3, 2, 4]).unwrap();
        let rho = DensityMatrix::new(layout, rho_m.clone()).unwrap();
        let got = lindblad_rhs(&sys, &attachments, &fields, &rho).unwrap();
        let expected = dense_rhs(&sys, &attachments, &fields, &rho_m);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((got.entries[(i, j)] - expected[(i, j)]).norm());
            }
        }
        assert!(worst < 1e-12, "structured vs dense RHS deviation {worst:.3e}");
    }

    #[test]
    fn rhs_trivial_case() {
        // H = 0, no modes, no drive → 0
        let sys = SystemSpec { hamiltonian: Array2::zeros((2, 2)), observables: vec![] };
        let rho = DensityMatrix::pure_system_state(2, 0).unwrap();
        let out = lindblad_rhs(&sys, &[], &[], &rho).unwrap();
        assert!(out.entries.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rhs_is_traceless_for_random_complex_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10 {
            let mut rnd =
                |s: f64| c(s * (rng.gen::<f64>() - 0.5), s * (rng.gen::<f64>() - 0.5));
            let sys = basic_sys();
            let att = vec![BathAttachment {
                coupling_op: pauli::sigma_x(),
                modes: PseudomodeSet {
                    modes: vec![Pseudomode {
                        coupling: rnd(1.0),
                        frequency: rnd(1.0),
                        decay: rnd(1.0),
                        occupation: rnd(1.0),
                        fock_dim: 4,
                    }],
                },
            }];
            let layout = HilbertLayout::new(vec![2, 4]).unwrap();
            let d = 8;
            let mut m = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = rnd(1.0);
                }
            }
            let rho = DensityMatrix::new(layout, m).unwrap();
            let out = lindblad_rhs(&sys, &att, &[rnd(1.0)], &rho).unwrap();
            let scale: f64 = out.entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(out.trace().norm() < 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn free_precession() {
        // no coupling: ⟨σ_x⟩(t) = cos(ω_s t) for ρ0 = |+⟩⟨+|
        let sys = basic_sys();
        let plus = array![[c(0.5, 0.0), c(0.5, 0.0)], [c(0.5, 0.0), c(0.5, 0.0)]];
        let rho0 = thermal_init(&plus, &[]).unwrap();
        let cfg = IntegrationConfig {
            dt: 1e-3,
            n_steps: 6000,
            record_every: 100,
            trace_tol: 1e-6,
            store_reduced_states: false,
        };
        let traj = integrate(&sys, &[], &[], &rho0, &cfg).unwrap();
        for (k, &t) in traj.times.iter().enumerate() {
            let got = traj.observables[1][k];
            assert!((got.re - t.cos()).abs() < 1e-8, "t={t}");
            assert!(got.im.abs() < 1e-12);
        }
    }

    #[test]
    fn bare_mode_decay() {
        // λ = 0, n = 0, mode starts in |1⟩: ⟨a†a⟩ = e^{−2Γt}
        let gamma = 0.35;
        let sys = SystemSpec {
            hamiltonian: Array2::zeros((1, 1)),
            observables: vec![],
        };
        let att = vec![BathAttachment {
            coupling_op: Array2::zeros((1, 1)),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.0, 0.0),
                    frequency: c(1.0, 0.0),
                    decay: c(gamma, 0.0),
                    occupation: c(0.0, 0.0),
                    fock_dim: 4,
                }],
            },
        }];
        let layout = HilbertLayout::new(vec![1, 4]).unwrap();
        let mut m = Array2::zeros((4, 4));
        m[(1, 1)] = c(1.0, 0.0);
        let rho0 = DensityMatrix::new(layout.clone(), m).unwrap();
        let cfg = IntegrationConfig {
            dt: 0.01,
            n_steps: 500,
            record_every: 25,
            trace_tol: 1e-6,
            store_reduced_states: false,
        };
        let traj = integrate(&sys, &att, &[None], &rho0, &cfg).unwrap();
        assert!(traj.max_trace_drift < 1e-12);
        // re-run capturing ⟨a†a⟩ via a full-space expectation at the end
        let (_, _, n_op) = fock_ops(&layout, 1).unwrap();
        let engine = Engine::new(&sys, &att).unwrap();
        let mut ws = Workspace::new(engine.dim());
        let mut rho: Vec<Complex64> = rho0.entries.iter().copied().collect();
        let h = cfg.dt;
        let mut worst = 0.0f64;
        for step in 0..cfg.n_steps {
            let fields: [Complex64; 1] = [c(0.0, 0.0)];
            engine.rhs(&fields, &rho, &mut ws.k1, &mut ws.tmp);
            for i in 0..rho.len() {
                ws.stage[i] = rho[i] + 0.5 * h * ws.k1[i];
            }
            engine.rhs(&fields, &ws.stage, &mut ws.k2, &mut ws.tmp);
            for i in 0..rho.len() {
                ws.stage[i] = rho[i] + 0.5 * h * ws.k2[i];
            }
            engine.rhs(&fields, &ws.stage, &mut ws.k3, &mut ws.tmp);
            for i in 0..rho.len() {
                ws.stage[i] = rho[i] + h * ws.k3[i];
            }
            engine.rhs(&fields, &ws.stage, &mut ws.k4, &mut ws.tmp);
            for i in 0..rho.len() {
                rho[i] += h / 6.0 * (ws.k1[i] + 2.0 * (ws.k2[i] + ws.k3[i]) + ws.k4[i]);
            }
            let t = (step + 1) as f64 * h;
            let dm = DensityMatrix::new(
                layout.clone(),
                Array2::from_shape_vec((4, 4), rho.clone()).unwrap(),
            )
            .unwrap();
            let got = qcore::expect(&n_op, &dm).unwrap().re;
            worst = worst.max((got - (-2.0 * gamma * t).exp()).abs());
        }
        assert!(worst < 1e-9, "⟨a†a⟩ decay error {worst:.3e}");
    }

    #[test]
    fn trace_preserved_with_complex_parameters_and_imaginary_drive() {
        let sys = basic_sys();
        let att = vec![BathAttachment {
            coupling_op: pauli::sigma_x(),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.06, 0.02),
                    frequency: c(1.0, -0.1),
                    decay: c(0.03, 0.4),
                    occupation: c(0.0, 0.0),
                    fock_dim: 5,
                }],
            },
        }];
        let excited = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let rho0 = thermal_init(&excited, &att).unwrap();
        let n_steps = 2000;
        let drive = DriveSampled {
            values: (0..=2 * n_steps)
                .map(|m| c(0.0, 0.05 * ((m as f64) * 0.01).cos()))
                .collect(),
        };
        let cfg = IntegrationConfig {
            dt: 0.01,
            n_steps,
            record_every: 100,
            trace_tol: 1e-6,
            store_reduced_states: true,
        };
        let traj = integrate(&sys, &att, &[Some(drive)], &rho0, &cfg).unwrap();
        assert!(traj.max_trace_drift < 1e-8, "drift {}", traj.max_trace_drift);
        // imaginary drive → single-trajectory reduced state is non-Hermitian
        let states = traj.reduced_states.as_ref().unwrap();
        let last = states.last().unwrap();
        let defect = (last[(0, 1)] - last[(1, 0)].conj()).norm();
        assert!(defect > 1e-6, "expected non-Hermitian intermediate state");
    }

    #[test]
    fn physical_parameters_stay_hermitian_positive() {
        let sys = basic_sys();
        let att = vec![BathAttachment {
            coupling_op: pauli::sigma_x(),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.2, 0.0),
                    frequency: c(1.0, 0.0),
                    decay: c(0.1, 0.0),
                    occupation: c(0.15, 0.0),
                    fock_dim: 5,
                }],
            },
        }];
        let excited = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let rho0 = thermal_init(&excited, &att).unwrap();
        let cfg = IntegrationConfig {
            dt: 0.02,
            n_steps: 1000,
            record_every: 100,
            trace_tol: 1e-6,
            store_reduced_states: true,
        };
        let traj = integrate(&sys, &att, &[None], &rho0, &cfg).unwrap();
        for red in traj.reduced_states.as_ref().unwrap() {
            let defect = (red[(0, 1)] - red[(1, 0)].conj()).norm();
            assert!(defect < 1e-10);
            let herm = Array2::from_shape_fn((2, 2), |(i, j)| {
                0.5 * (red[(i, j)] + red[(j, i)].conj())
            });
            let (vals, _) = qcore::eigh(&herm).unwrap();
            assert!(vals[0] > -1e-10, "negative population {}", vals[0]);
        }
    }

    #[test]
    fn thermal_init_matches_geometric_weights() {
        let n = 0.4;
        let att = vec![BathAttachment {
            coupling_op: pauli::sigma_x(),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.1, 0.0),
                    frequency: c(1.0, 0.0),
                    decay: c(0.1, 0.0),
                    occupation: c(n, 0.0),
                    fock_dim: 12,
                }],
            },
        }];
        let excited = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let rho0 = thermal_init(&excited, &att).unwrap();
        assert!((rho0.trace() - c(1.0, 0.0)).norm() < 1e-14);
        // βΩ = ln((1+n)/n); weights ∝ e^{−βΩ k}
        let q: f64 = n / (1.0 + n);
        let z: f64 = (0..12).map(|k| q.powi(k)).sum();
        for k in 0..12usize {
            let got = rho0.entries[(k, k)].re;
            assert_abs_diff_eq!(got, q.powi(k as i32) / z, epsilon = 1e-13);
        }
        let layout = HilbertLayout::new(vec![2, 12]).unwrap();
        let (_, _, n_op) = fock_ops(&layout, 1).unwrap();
        let got = qcore::expect(&n_op, &rho0).unwrap().re;
        assert!((got - n).abs() < 2e-4, "⟨n⟩ = {got}");
    }

    #[test]
    fn thermal_init_rejects_nonconvergent() {
        let att = vec![BathAttachment {
            coupling_op: pauli::sigma_x(),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.1, 0.0),
                    frequency: c(1.0, 0.0),
                    decay: c(0.1, 0.0),
                    occupation: c(-0.5, 0.0), // q = n/(1+n) = −1
                    fock_dim: 4,
                }],
            },
        }];
        let excited = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        assert!(matches!(
            thermal_init(&excited, &att),
            Err(DynamicsError::ThermalNonConvergent { .. })
        ));
    }

    #[test]
    fn step_halving_fourth_order() {
        // driven, damped qubit+mode: error(h)/error(h/2) ≈ 2⁴
        let sys = basic_sys();
        let att = vec![BathAttachment {
            coupling_op: pauli::sigma_x(),
            modes: PseudomodeSet {
                modes: vec![Pseudomode {
                    coupling: c(0.3, 0.0),
                    frequency: c(1.1, 0.0),
                    decay: c(0.2, 0.0),
                    occupation: c(0.0, 0.0),
                    fock_dim: 4,
                }],
            },
        }];
        let excited = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let rho0 = thermal_init(&excited, &att).unwrap();
        let t_max = 4.0;
        let run = |n_steps: usize| {
            let drive = DriveSampled {
                values: (0..=2 * n_steps)
                    .map(|m| {
                        let t = m as f64 * t_max / (2 * n_steps) as f64;
                        c(0.1 * (0.9 * t).cos(), 0.05 * (1.3 * t).sin())
                    })
                    .collect(),
            };
            let cfg = IntegrationConfig {
                dt: t_max / n_steps as f64,
                n_steps,
                record_every: n_steps,
                trace_tol: 1e-5,
                store_reduced_states: false,
            };
            let traj = integrate(&sys, &att, &[Some(drive)], &rho0, &cfg).unwrap();
            traj.observables[0].last().copied().unwrap()
        };
        let reference = run(3200);
        let e1 = (run(100) - reference).norm();
        let e2 = (run(200) - reference).norm();
        let order = (e1 / e2).log2();
        assert!(order >= 3.5, "measured order {order:.2} (e1={e1:.3e}, e2={e2:.3e})");
    }

    #[test]
    fn config_validation() {
        let cfg = IntegrationConfig {
            dt: 0.01,
            n_steps: 100,
            record_every: 7,
            trace_tol: 1e-6,
            store_reduced_states: false,
        };
        assert!(cfg.validate().is_err());
    }
}
