//! Orchestration of N_stoch stochastic trajectories with reproducible
//! parallelism.
//!
//! Trajectory j of bath b uses the noise stream (global_seed, b·2⁴⁰ + j),
//! so the field realizations never depend on scheduling. Workers fill a
//! vector indexed by trajectory, and all reductions run sequentially in
//! index order afterwards: the thread count changes wall-clock time only.

use crate::dynamics::{
    self, BathAttachment, DriveSampled, DynamicsError, IntegrationConfig, SystemSpec,
};
use crate::noise::{sample_field, NoiseModel};
use crate::qcore::{self, DensityMatrix, HilbertLayout, QcoreError};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("trajectory {index} failed (seed {seed}, streams {streams:?}): {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        streams: Vec<u64>,
        source: DynamicsError,
    },
    #[error("bad ensemble configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Qcore(#[from] QcoreError),
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n_stoch: usize,
    pub global_seed: u64,
    pub integration: IntegrationConfig,
    /// Batches used for error bars on nonlinear functionals (entropy).
    pub n_batches: usize,
}

impl EnsembleConfig {
    pub fn new(n_stoch: usize, global_seed: u64, integration: IntegrationConfig) -> Self {
        EnsembleConfig { n_stoch, global_seed, integration, n_batches: 10 }
    }
}

/// Noise stream id for (bath, trajectory).
pub fn stream_id(bath: usize, trajectory: usize) -> u64 {
    ((bath as u64) << 40) | trajectory as u64
}

#[derive(Debug, Clone)]
pub struct EnsembleMetadata {
    pub n_stoch: usize,
    pub global_seed: u64,
    pub n_xi: Vec<Option<usize>>,
    pub runtime_seconds: f64,
    pub max_top_population: Vec<f64>,
    pub max_trace_drift: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// Empirical mean per observable, per time.
    pub mean: Vec<Vec<Complex64>>,
    /// Eq.-(25) estimator applied to the real part (the physical signal).
    pub std: Vec<Vec<f64>>,
    /// Same estimator on the imaginary part (unphysicality diagnostic).
    pub std_imag: Vec<Vec<f64>>,
    /// Averaged reduced states per time (when stored).
    pub mean_reduced: Option<Vec<Array2<Complex64>>>,
    /// Batch means of the reduced state (n_batches × times), for error
    /// bars on nonlinear functionals.
    pub batch_reduced: Option<Vec<Vec<Array2<Complex64>>>>,
    /// ‖ρ − ρ†‖_max of the averaged reduced state per time.
    pub hermiticity_defect: Vec<f64>,
    pub metadata: EnsembleMetadata,
}

/// Eq.-(25) variance of the empirical mean: [Σx²/N − (Σx/N)²]/N, applied
/// to a real series. No Bessel correction, following the estimator as
/// written (bias is O(1/N^{3/2})).
fn eq25_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mean_sq = samples.iter().map(|x| x * x).sum::<f64>() / n;
    ((mean_sq - mean * mean).max(0.0) / n).sqrt()
}

pub fn run_ensemble(
    sys: &SystemSpec,
    attachments: &[BathAttachment],
    noise_models: &[Option<NoiseModel>],
    rho_s0: &Array2<Complex64>,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult, EnsembleError> {
    let start = std::time::Instant::now();
    if cfg.n_stoch == 0 {
        return Err(EnsembleError::BadConfig("n_stoch must be at least 1".into()));
    }
    if noise_models.len() != attachments.len() {
        return Err(EnsembleError::BadConfig(format!(
            "{} noise models for {} attachments",
            noise_models.len(),
            attachments.len()
        )));
    }
    cfg.integration.validate()?;
    let horizon = cfg.integration.dt * cfg.integration.n_steps as f64;
    for (b, m) in noise_models.iter().enumerate() {
        if let Some(m) = m {
            if horizon > m.window * (1.0 + 1e-12) {
                return Err(EnsembleError::BadConfig(format!(
                    "dynamics horizon {horizon} exceeds the noise window {} of bath {b}",
                    m.window
                )));
            }
        }
    }
    let rho0 = dynamics::thermal_init(rho_s0, attachments)?;

    let n_half = 2 * cfg.integration.n_steps + 1;
    let half_dt = 0.5 * cfg.integration.dt;
    let trajectories: Result<Vec<dynamics::Trajectory>, EnsembleError> = (0..cfg.n_stoch)
        .into_par_iter()
        .map(|j| {
            let mut streams = Vec::new();
            let drives: Vec<Option<DriveSampled>> = noise_models
                .iter()
                .enumerate()
                .map(|(b, model)| {
                    model.as_ref().map(|m| {
                        let sid = stream_id(b, j);
                        streams.push(sid);
                        let r = sample_field(m, cfg.global_seed, sid);
                        DriveSampled { values: r.evaluate_uniform_grid(n_half, half_dt) }
                    })
                })
                .collect();
            dynamics::integrate(sys, attachments, &drives, &rho0, &cfg.integration).map_err(
                |source| EnsembleError::Trajectory {
                    index: j,
                    seed: cfg.global_seed,
                    streams,
                    source,
                },
            )
        })
        .collect();
    let trajectories = trajectories?;

    // sequential reduction in trajectory-index order
    let times = trajectories[0].times.clone();
    let n_rec = times.len();
    let n_obs = sys.observables.len();
    let n = cfg.n_stoch;
    let mut mean = vec![vec![Complex64::new(0.0, 0.0); n_rec]; n_obs];
    let mut std = vec![vec![0.0; n_rec]; n_obs];
    let mut std_imag = vec![vec![0.0; n_rec]; n_obs];
    let mut scratch_re = vec![0.0; n];
    let mut scratch_im = vec![0.0; n];
    for o in 0..n_obs {
        for k in 0..n_rec {
            for (j, traj) in trajectories.iter().enumerate() {
                let v = traj.observables[o][k];
                scratch_re[j] = v.re;
                scratch_im[j] = v.im;
            }
            let sum: Complex64 = trajectories
                .iter()
                .map(|t| t.observables[o][k])
                .sum();
            mean[o][k] = sum / n as f64;
            std[o][k] = eq25_std(&scratch_re);
            std_imag[o][k] = eq25_std(&scratch_im);
        }
    }

    let store_states = cfg.integration.store_reduced_states;
    let ds = sys.hamiltonian.nrows();
    let (mean_reduced, batch_reduced, hermiticity_defect) = if store_states {
        let mut mean_states = vec![Array2::<Complex64>::zeros((ds, ds)); n_rec];
        let n_batches = cfg.n_batches.clamp(1, n);
        let mut batches = vec![vec![Array2::<Complex64>::zeros((ds, ds)); n_rec]; n_batches];
        let mut batch_counts = vec![0usize; n_batches];
        for (j, traj) in trajectories.iter().enumerate() {
            let states = traj
                .reduced_states
                .as_ref()
                .expect("states stored when requested");
            let b = j * n_batches / n;
            batch_counts[b] += 1;
            for k in 0..n_rec {
                mean_states[k] += &states[k];
                batches[b][k] += &states[k];
            }
        }
        for m in mean_states.iter_mut() {
            m.mapv_inplace(|z| z / n as f64);
        }
        for (b, batch) in batches.iter_mut().enumerate() {
            let cnt = batch_counts[b].max(1) as f64;
            for m in batch.iter_mut() {
                m.mapv_inplace(|z| z / cnt);
            }
        }
        let defects = mean_states
            .iter()
            .map(|m| {
                let layout = HilbertLayout::new(vec![ds]).expect("system layout");
                DensityMatrix::new(layout, m.clone())
                    .map(|dm| dm.hermiticity_defect())
                    .unwrap_or(f64::NAN)
            })
            .collect();
        (Some(mean_states), Some(batches), defects)
    } else {
        (None, None, Vec::new())
    };

    let n_modes = trajectories[0].max_top_population.len();
    let mut max_top = vec![0.0f64; n_modes];
    let mut max_drift = 0.0f64;
    for traj in &trajectories {
        for (m, &p) in traj.max_top_population.iter().enumerate() {
            max_top[m] = max_top[m].max(p);
        }
        max_drift = max_drift.max(traj.max_trace_drift);
    }

    Ok(EnsembleResult {
        times,
        observable_names: sys.observables.iter().map(|(n, _)| n.clone()).collect(),
        mean,
        std,
        std_imag,
        mean_reduced,
        batch_reduced,
        hermiticity_defect,
        metadata: EnsembleMetadata {
            n_stoch: n,
            global_seed: cfg.global_seed,
            n_xi: noise_models.iter().map(|m| m.as_ref().map(|m| m.n_xi())).collect(),
            runtime_seconds: start.elapsed().as_secs_f64(),
            max_top_population: max_top,
            max_trace_drift: max_drift,
        },
    })
}

/// Run the ensemble, raising any mode's Fock truncation by 2 (up to
/// `max_fock`) whenever its top-level population exceeds `threshold`, and
/// rerunning until the monitor is quiet.
pub fn run_ensemble_auto_fock(
    sys: &SystemSpec,
    attachments: &[BathAttachment],
    noise_models: &[Option<NoiseModel>],
    rho_s0: &Array2<Complex64>,
    cfg: &EnsembleConfig,
    threshold: f64,
    max_fock: usize,
) -> Result<(EnsembleResult, Vec<BathAttachment>), EnsembleError> {
    let mut atts = attachments.to_vec();
    loop {
        let result = run_ensemble(sys, &atts, noise_models, rho_s0, cfg)?;
        let mut raised = false;
        let mut flat_idx = 0;
        for att in atts.iter_mut() {
            for m in att.modes.modes.iter_mut() {
                if result.metadata.max_top_population[flat_idx] > threshold
                    && m.fock_dim + 2 <= max_fock
                {
                    log::info!(
                        "raising Fock truncation of mode {flat_idx}: top population {:.3e}",
                        result.metadata.max_top_population[flat_idx]
                    );
                    m.fock_dim += 2;
                    raised = true;
                }
                flat_idx += 1;
            }
        }
        if !raised {
            return Ok((result, atts));
        }
    }
}

impl EnsembleResult {
    pub fn observable_index(&self, name: &str) -> Option<usize> {
        self.observable_names.iter().position(|n| n == name)
    }

    /// Averaged reduced state at a grid index: (raw, Hermitized, defect).
    pub fn averaged_reduced_state(
        &self,
        t_index: usize,
    ) -> Result<(Array2<Complex64>, Array2<Complex64>, f64), EnsembleError> {
        let states = self.mean_reduced.as_ref().ok_or_else(|| {
            EnsembleError::BadConfig("reduced states were not stored for this run".into())
        })?;
        let raw = states[t_index].clone();
        let ds = raw.nrows();
        let herm = Array2::from_shape_fn((ds, ds), |(i, j)| {
            0.5 * (raw[(i, j)] + raw[(j, i)].conj())
        });
        Ok((raw, herm, self.hermiticity_defect[t_index]))
    }

    /// Von Neumann entropy of the Hermitized averaged reduced state.
    pub fn entropy_series(&self) -> Result<Vec<f64>, EnsembleError> {
        let n_rec = self.times.len();
        let mut out = Vec::with_capacity(n_rec);
        for k in 0..n_rec {
            let (_, herm, _) = self.averaged_reduced_state(k)?;
            let ds = herm.nrows();
            let layout = HilbertLayout::new(vec![ds])?;
            let dm = DensityMatrix::new(layout, herm)?;
            out.push(qcore::von_neumann_entropy(&dm)?);
        }
        Ok(out)
    }

    /// Entropy with a batch-spread error estimate:
    /// σ_S(t) ≈ std over batch entropies / √(n_batches).
    pub fn entropy_series_with_sigma(&self) -> Result<(Vec<f64>, Vec<f64>), EnsembleError> {
        let entropy = self.entropy_series()?;
        let batches = self.batch_reduced.as_ref().ok_or_else(|| {
            EnsembleError::BadConfig("reduced states were not stored for this run".into())
        })?;
        let n_batches = batches.len();
        let n_rec = self.times.len();
        let mut sigma = vec![0.0; n_rec];
        if n_batches > 1 {
            for k in 0..n_rec {
                let mut vals = Vec::with_capacity(n_batches);
                for batch in batches {
                    let raw = &batch[k];
                    let ds = raw.nrows();
                    let herm = Array2::from_shape_fn((ds, ds), |(i, j)| {
                        0.5 * (raw[(i, j)] + raw[(j, i)].conj())
                    });
                    let layout = HilbertLayout::new(vec![ds])?;
                    let dm = DensityMatrix::new(layout, herm)?;
                    vals.push(qcore::von_neumann_entropy(&dm)?);
                }
                let m = vals.iter().sum::<f64>() / n_batches as f64;
                let var =
                    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_batches - 1) as f64;
                sigma[k] = (var / n_batches as f64).sqrt();
            }
        }
        Ok((entropy, sigma))
    }

    /// CSV dump: t, then Re(mean), Im(mean), std per observable, plus an
    /// optional entropy column.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut w: W,
        entropy: Option<&[f64]>,
    ) -> std::io::Result<()> {
        write!(w, "t")?;
        for name in &self.observable_names {
            write!(w, ",re_{name},im_{name},std_{name}")?;
        }
        if entropy.is_some() {
            write!(w, ",entropy")?;
        }
        writeln!(w)?;
        for (k, &t) in self.times.iter().enumerate() {
            write!(w, "{t:.16e}")?;
            for o in 0..self.observable_names.len() {
                write!(
                    w,
                    ",{:.16e},{:.16e},{:.16e}",
                    self.mean[o][k].re, self.mean[o][k].im, self.std[o][k]
                )?;
            }
            if let Some(s) = entropy {
                write!(w, ",{:.16e}", s[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
