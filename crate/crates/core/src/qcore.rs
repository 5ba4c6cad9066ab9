//! Dense complex operator algebra for composite system ⊗ pseudomode spaces.
//!
//! Conventions: the system factor comes first in the tensor order, Fock
//! bases are ascending, matrices are row-major. Density matrices are *not*
//! required to be Hermitian or positive: complex pseudomode parameters and
//! imaginary drives legitimately produce non-Hermitian intermediate states.
//! Hermiticity is only meaningful for averaged reduced states.

use ndarray::Array2;
use num_complex::Complex64;

/// Default cap on the total composite dimension.
pub const DEFAULT_DIM_CAP: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum QcoreError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("total dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("mode index {index} out of range (1..={n_modes})")]
    ModeIndex { index: usize, n_modes: usize },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("eigendecomposition failed to converge (off-diagonal {off:.3e})")]
    EigenFailure { off: f64 },
}

impl QcoreError {
    pub fn is_config_error(&self) -> bool {
        !matches!(self, QcoreError::EigenFailure { .. })
    }
}

/// Tensor factorization of the composite Hilbert space: system dimension
/// first, then one Fock truncation per pseudomode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertLayout {
    dims: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self, QcoreError> {
        Self::with_cap(dims, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(dims: Vec<usize>, cap: usize) -> Result<Self, QcoreError> {
        if dims.is_empty() {
            return Err(QcoreError::InvalidLayout("no factors".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(QcoreError::InvalidLayout("zero-dimensional factor".into()));
        }
        let dim: usize = dims.iter().product();
        if dim > cap {
            return Err(QcoreError::DimensionCap { dim, cap });
        }
        Ok(HilbertLayout { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn system_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn n_modes(&self) -> usize {
        self.dims.len() - 1
    }

    /// Fock truncation of mode `j` (1-based).
    pub fn mode_dim(&self, j: usize) -> usize {
        self.dims[j]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major stride of factor `slot` (0 = system).
    pub fn stride(&self, slot: usize) -> usize {
        self.dims[slot + 1..].iter().product()
    }

    /// Digit of basis index `i` at factor `slot`.
    #[inline]
    pub fn digit(&self, i: usize, slot: usize) -> usize {
        (i / self.stride(slot)) % self.dims[slot]
    }
}

/// Dense operator on a composite space.
#[derive(Debug, Clone)]
pub struct Operator {
    pub layout: HilbertLayout,
    pub entries: Array2<Complex64>,
}

/// Dense (possibly non-Hermitian) state on a composite space.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub layout: HilbertLayout,
    pub entries: Array2<Complex64>,
}

fn check_square(layout: &HilbertLayout, entries: &Array2<Complex64>) -> Result<(), QcoreError> {
    let d = layout.total_dim();
    if entries.nrows() != d || entries.ncols() != d {
        return Err(QcoreError::LayoutMismatch(format!(
            "matrix is {}x{}, layout dimension is {}",
            entries.nrows(),
            entries.ncols(),
            d
        )));
    }
    Ok(())
}

impl Operator {
    pub fn new(layout: HilbertLayout, entries: Array2<Complex64>) -> Result<Self, QcoreError> {
        check_square(&layout, &entries)?;
        Ok(Operator { layout, entries })
    }

    pub fn zeros(layout: HilbertLayout) -> Self {
        let d = layout.total_dim();
        Operator {
            layout,
            entries: Array2::zeros((d, d)),
        }
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let d = layout.total_dim();
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        Operator { layout, entries: m }
    }

    /// Embed a system-space operator as `op ⊗ I ⊗ … ⊗ I`.
    pub fn from_system(layout: &HilbertLayout, op: &Array2<Complex64>) -> Result<Self, QcoreError> {
        let ds = layout.system_dim();
        if op.nrows() != ds || op.ncols() != ds {
            return Err(QcoreError::LayoutMismatch(format!(
                "system operator is {}x{}, system dimension is {}",
                op.nrows(),
                op.ncols(),
                ds
            )));
        }
        let mut out = Operator::zeros(layout.clone());
        let stride = layout.stride(0);
        for a in 0..ds {
            for b in 0..ds {
                let v = op[(a, b)];
                if v == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..stride {
                    out.entries[(a * stride + r, b * stride + r)] = v;
                }
            }
        }
        Ok(out)
    }

    /// Embed a single-mode operator at mode slot `j` (1-based).
    pub fn from_mode(
        layout: &HilbertLayout,
        j: usize,
        op: &Array2<Complex64>,
    ) -> Result<Self, QcoreError> {
        if j == 0 || j > layout.n_modes() {
            return Err(QcoreError::ModeIndex {
                index: j,
                n_modes: layout.n_modes(),
            });
        }
        let f = layout.mode_dim(j);
        if op.nrows() != f || op.ncols() != f {
            return Err(QcoreError::LayoutMismatch(format!(
                "mode operator is {}x{}, truncation is {}",
                op.nrows(),
                op.ncols(),
                f
            )));
        }
        let d = layout.total_dim();
        let stride = layout.stride(j);
        let outer = d / (f * stride);
        let mut out = Operator::zeros(layout.clone());
        for blk in 0..outer {
            for k in 0..f {
                for l in 0..f {
                    let v = op[(k, l)];
                    if v == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for r in 0..stride {
                        let row = blk * f * stride + k * stride + r;
                        let col = blk * f * stride + l * stride + r;
                        out.entries[(row, col)] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, rhs: &Operator) -> Result<Operator, QcoreError> {
        if self.layout != rhs.layout {
            return Err(QcoreError::LayoutMismatch("operator product".into()));
        }
        Ok(Operator {
            layout: self.layout.clone(),
            entries: self.entries.dot(&rhs.entries),
        })
    }

    pub fn dagger(&self) -> Operator {
        let mut t = self.entries.t().to_owned();
        t.mapv_inplace(|z| z.conj());
        Operator {
            layout: self.layout.clone(),
            entries: t,
        }
    }
}

impl DensityMatrix {
    pub fn new(layout: HilbertLayout, entries: Array2<Complex64>) -> Result<Self, QcoreError> {
        check_square(&layout, &entries)?;
        Ok(DensityMatrix { layout, entries })
    }

    /// Pure state |k⟩⟨k| on a bare system layout.
    pub fn pure_system_state(dim: usize, k: usize) -> Result<Self, QcoreError> {
        let layout = HilbertLayout::new(vec![dim])?;
        let mut m = Array2::zeros((dim, dim));
        m[(k, k)] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix { layout, entries: m })
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.diag().sum()
    }

    pub fn hermitized(&self) -> DensityMatrix {
        let d = self.layout.total_dim();
        let mut m = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = 0.5 * (self.entries[(i, j)] + self.entries[(j, i)].conj());
            }
        }
        DensityMatrix {
            layout: self.layout.clone(),
            entries: m,
        }
    }

    /// Largest entrywise deviation from Hermiticity, ‖ρ − ρ†‖_max.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.layout.total_dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let dev = (self.entries[(i, j)] - self.entries[(j, i)].conj()).norm();
                worst = worst.max(dev);
            }
        }
        worst
    }
}

/// Truncated ladder operators `(a, a†, a†a)` for mode `j` (1-based),
/// embedded at the right tensor slot. `a|k⟩ = √k |k−1⟩`.
pub fn fock_ops(
    layout: &HilbertLayout,
    mode_index: usize,
) -> Result<(Operator, Operator, Operator), QcoreError> {
    if mode_index == 0 || mode_index > layout.n_modes() {
        return Err(QcoreError::ModeIndex {
            index: mode_index,
            n_modes: layout.n_modes(),
        });
    }
    let f = layout.mode_dim(mode_index);
    let mut a = Array2::zeros((f, f));
    let mut num = Array2::zeros((f, f));
    for k in 1..f {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
        num[(k, k)] = Complex64::new(k as f64, 0.0);
    }
    let lower = Operator::from_mode(layout, mode_index, &a)?;
    let raise = lower.dagger();
    let number = Operator::from_mode(layout, mode_index, &num)?;
    Ok((lower, raise, number))
}

/// Trace out all pseudomodes, returning the system-block reduced matrix.
pub fn partial_trace_to_system(rho: &DensityMatrix) -> DensityMatrix {
    let ds = rho.layout.system_dim();
    let stride = rho.layout.stride(0);
    let mut out = Array2::zeros((ds, ds));
    for a in 0..ds {
        for b in 0..ds {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..stride {
                acc += rho.entries[(a * stride + r, b * stride + r)];
            }
            out[(a, b)] = acc;
        }
    }
    DensityMatrix {
        layout: HilbertLayout::new(vec![ds]).expect("system layout"),
        entries: out,
    }
}

/// `Tr(op · rho)` with a fixed row-major summation order.
pub fn expect(op: &Operator, rho: &DensityMatrix) -> Result<Complex64, QcoreError> {
    if op.layout != rho.layout {
        return Err(QcoreError::LayoutMismatch("expect".into()));
    }
    let d = op.layout.total_dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += op.entries[(i, j)] * rho.entries[(j, i)];
        }
    }
    Ok(acc)
}

/// Eigenvalues below which a state is treated as exactly rank-deficient.
pub const ENTROPY_CLAMP: f64 = 1e-10;

/// Von Neumann entropy −Σ p log p (natural log) of a Hermitian matrix.
///
/// Callers Hermitize first via [`DensityMatrix::hermitized`]. Eigenvalues in
/// (−[`ENTROPY_CLAMP`], 0] are clamped to zero; more negative ones are
/// clamped too but logged, since finite-ensemble averages can carry small
/// negative tails.
pub fn von_neumann_entropy(rho_s: &DensityMatrix) -> Result<f64, QcoreError> {
    let (vals, _) = eigh(&rho_s.entries)?;
    let mut s = 0.0;
    for &p in &vals {
        if p <= 0.0 {
            if p < -ENTROPY_CLAMP {
                log::warn!("entropy: clamping negative eigenvalue {p:.3e}");
            }
            continue;
        }
        s -= p * p.ln();
    }
    Ok(s)
}

/// Eigendecomposition of a complex Hermitian matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in ascending order with matching
/// eigenvector columns.
pub fn eigh(a: &Array2<Complex64>) -> Result<(Vec<f64>, Array2<Complex64>), QcoreError> {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "eigh requires a square matrix");
    let mut m = a.clone();
    let mut v: Array2<Complex64> = Array2::zeros((d, d));
    for i in 0..d {
        v[(i, i)] = Complex64::new(1.0, 0.0);
    }
    let scale: f64 = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol * (d as f64) {
            let mut idx: Vec<usize> = (0..d).collect();
            let vals: Vec<f64> = (0..d).map(|i| m[(i, i)].re).collect();
            idx.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
            let sorted_vals: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
            let mut vecs = Array2::zeros((d, d));
            for (new_col, &old_col) in idx.iter().enumerate() {
                for r in 0..d {
                    vecs[(r, new_col)] = v[(r, old_col)];
                }
            }
            return Ok((sorted_vals, vecs));
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= tol / (d as f64).max(1.0) {
                    continue;
                }
                let phase = apq / mag;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                // B[p][q] ∝ (aqq−app)·c·s + |apq|(c²−s²); the stable root of
                // t² − 2τt − 1 = 0 with τ = (aqq−app)/(2|apq|) is the
                // small-magnitude one.
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sp = s * phase;
                let spc = s * phase.conj();
                // columns: A ← A·J
                for k in 0..d {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp + spc * akq;
                    m[(k, q)] = -sp * akp + c * akq;
                }
                // rows: A ← J†·A
                for k in 0..d {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk + sp * aqk;
                    m[(q, k)] = -spc * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp + spc * vkq;
                    v[(k, q)] = -sp * vkp + c * vkq;
                }
            }
        }
    }
    let mut off = 0.0f64;
    for p in 0..d {
        for q in (p + 1)..d {
            off += m[(p, q)].norm_sqr();
        }
    }
    Err(QcoreError::EigenFailure { off: off.sqrt() })
}

/// Kronecker product, left factor outermost.
pub fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let v = a[(i, j)];
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = v * b[(k, l)];
                }
            }
        }
    }
    out
}

/// 2×2 Pauli matrices and related system-space constants.
pub mod pauli {
    use ndarray::{array, Array2};
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub fn sigma_x() -> Array2<Complex64> {
        array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]
    }

    pub fn sigma_y() -> Array2<Complex64> {
        array![[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]]
    }

    pub fn sigma_z() -> Array2<Complex64> {
        array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]
    }

    pub fn identity2() -> Array2<Complex64> {
        array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha12Rng, d: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((d, d), |_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    #[test]
    fn layout_validation() {
        assert!(HilbertLayout::new(vec![2, 2]).is_ok());
        assert!(HilbertLayout::new(vec![]).is_err());
        assert!(HilbertLayout::new(vec![2, 0]).is_err());
        assert!(HilbertLayout::new(vec![2; 13]).is_err()); // 8192 > 4096
        assert!(HilbertLayout::with_cap(vec![2; 13], 1 << 14).is_ok());
    }

    #[test]
    fn lowering_op_smallest_truncation() {
        let layout = HilbertLayout::new(vec![2, 2]).unwrap();
        let (a, _, _) = fock_ops(&layout, 1).unwrap();
        let expected = kron(
            &pauli::identity2(),
            &array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]],
        );
        assert_eq!(a.entries, expected);
    }

    #[test]
    fn number_operator_eigenvalue() {
        let layout = HilbertLayout::new(vec![1, 5]).unwrap();
        let (_, _, n) = fock_ops(&layout, 1).unwrap();
        // a†a |3⟩ = 3 |3⟩
        assert_abs_diff_eq!(n.entries[(3, 3)].re, 3.0, epsilon = 1e-15);
        for k in 0..5 {
            assert_abs_diff_eq!(n.entries[(k, k)].re, k as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn ladder_commutator_truncation_corner() {
        // [a, a†] = I except the bottom-right corner, which is 1 − N.
        let n_trunc = 6;
        let layout = HilbertLayout::new(vec![1, n_trunc]).unwrap();
        let (a, adag, _) = fock_ops(&layout, 1).unwrap();
        let comm = &a.matmul(&adag).unwrap().entries - &adag.matmul(&a).unwrap().entries;
        for i in 0..n_trunc {
            for j in 0..n_trunc {
                let expected = if i == j {
                    if i == n_trunc - 1 {
                        1.0 - n_trunc as f64
                    } else {
                        1.0
                    }
                } else {
                    0.0
                };
                assert_abs_diff_eq!(comm[(i, j)].re, expected, epsilon = 1e-13);
                assert_abs_diff_eq!(comm[(i, j)].im, 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn partial_trace_product_state() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let rho_s = random_matrix(&mut rng, 2);
        let rho_pm = random_matrix(&mut rng, 3);
        let layout = HilbertLayout::new(vec![2, 3]).unwrap();
        let rho = DensityMatrix::new(layout, kron(&rho_s, &rho_pm)).unwrap();
        let reduced = partial_trace_to_system(&rho);
        let tr_pm: Complex64 = rho_pm.diag().sum();
        for i in 0..2 {
            for j in 0..2 {
                let expected = rho_s[(i, j)] * tr_pm;
                assert!((reduced.entries[(i, j)] - expected).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn partial_trace_bell_projector() {
        // |Φ+⟩⟨Φ+| on 2⊗2 reduces to I/2.
        let layout = HilbertLayout::new(vec![2, 2]).unwrap();
        let mut m = Array2::zeros((4, 4));
        for &i in &[0usize, 3] {
            for &j in &[0usize, 3] {
                m[(i, j)] = c(0.5, 0.0);
            }
        }
        let reduced = partial_trace_to_system(&DensityMatrix::new(layout, m).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(reduced.entries[(i, j)].re, expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn partial_trace_linear_and_trace_preserving() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let layout = HilbertLayout::new(vec![2, 3]).unwrap();
        for _ in 0..20 {
            let m1 = random_matrix(&mut rng, 6);
            let m2 = random_matrix(&mut rng, 6);
            let alpha = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let rho1 = DensityMatrix::new(layout.clone(), m1.clone()).unwrap();
            let rho2 = DensityMatrix::new(layout.clone(), m2.clone()).unwrap();
            let combo = DensityMatrix::new(layout.clone(), &m1 + &m2.mapv(|z| alpha * z)).unwrap();
            let r1 = partial_trace_to_system(&rho1);
            let r2 = partial_trace_to_system(&rho2);
            let rc = partial_trace_to_system(&combo);
            for i in 0..2 {
                for j in 0..2 {
                    let lin = r1.entries[(i, j)] + alpha * r2.entries[(i, j)];
                    assert!((rc.entries[(i, j)] - lin).norm() < 1e-12);
                }
            }
            assert!((rc.trace() - combo.trace()).norm() < 1e-12);
        }
    }

    #[test]
    fn entropy_pure_and_mixed() {
        let pure = DensityMatrix::pure_system_state(2, 0).unwrap();
        assert_abs_diff_eq!(von_neumann_entropy(&pure).unwrap(), 0.0, epsilon = 1e-12);

        let layout = HilbertLayout::new(vec![2]).unwrap();
        let maximally_mixed =
            DensityMatrix::new(layout.clone(), array![[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]])
                .unwrap();
        assert_abs_diff_eq!(
            von_neumann_entropy(&maximally_mixed).unwrap(),
            2.0f64.ln(),
            epsilon = 1e-12
        );

        let skewed = DensityMatrix::new(
            layout,
            array![[c(0.9, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.1, 0.0)]],
        )
        .unwrap();
        let expected = -0.9f64 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
        assert_abs_diff_eq!(von_neumann_entropy(&skewed).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.3251, epsilon = 1e-4);
    }

    #[test]
    fn entropy_unitary_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let d = 4;
        for _ in 0..5 {
            // random Hermitian → eigh gives a random-ish unitary
            let g = random_matrix(&mut rng, d);
            let h = Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (g[(i, j)] + g[(j, i)].conj()));
            let (_, u) = eigh(&h).unwrap();

            let mut diag: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let norm: f64 = diag.iter().sum();
            diag.iter_mut().for_each(|p| *p /= norm);
            let rho = Array2::from_shape_fn((d, d), |(i, j)| {
                if i == j {
                    c(diag[i], 0.0)
                } else {
                    c(0.0, 0.0)
                }
            });
            let rotated = u.dot(&rho).dot(&u.t().mapv(|z| z.conj()));

            let layout = HilbertLayout::new(vec![d]).unwrap();
            let s0 =
                von_neumann_entropy(&DensityMatrix::new(layout.clone(), rho).unwrap()).unwrap();
            let s1 = von_neumann_entropy(&DensityMatrix::new(layout, rotated).unwrap()).unwrap();
            assert_abs_diff_eq!(s0, s1, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for d in [2usize, 3, 6, 10] {
            let g = random_matrix(&mut rng, d);
            let h = Array2::from_shape_fn((d, d), |(i, j)| 0.5 * (g[(i, j)] + g[(j, i)].conj()));
            let (vals, vecs) = eigh(&h).unwrap();
            // sorted
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-14);
            }
            // H V = V Λ
            let hv = h.dot(&vecs);
            for col in 0..d {
                for row in 0..d {
                    let expected = vecs[(row, col)] * vals[col];
                    assert!((hv[(row, col)] - expected).norm() < 1e-10);
                }
            }
            // unitary columns
            let gram = vecs.t().mapv(|z| z.conj()).dot(&vecs);
            for i in 0..d {
                for j in 0..d {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[(i, j)] - c(expected, 0.0)).norm() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn expectation_values() {
        let layout = HilbertLayout::new(vec![2]).unwrap();
        let sz = Operator::new(layout.clone(), pauli::sigma_z()).unwrap();
        let excited = DensityMatrix::pure_system_state(2, 0).unwrap();
        assert!((expect(&sz, &excited).unwrap() - c(1.0, 0.0)).norm() < 1e-15);

        let sx = Operator::new(layout.clone(), pauli::sigma_x()).unwrap();
        let plus = DensityMatrix::new(
            layout.clone(),
            array![[c(0.5, 0.0), c(0.5, 0.0)], [c(0.5, 0.0), c(0.5, 0.0)]],
        )
        .unwrap();
        assert!((expect(&sx, &plus).unwrap() - c(1.0, 0.0)).norm() < 1e-15);

        // expect(I, ρ) = Tr ρ exactly
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let layout6 = HilbertLayout::new(vec![2, 3]).unwrap();
        let m = random_matrix(&mut rng, 6);
        let rho = DensityMatrix::new(layout6.clone(), m).unwrap();
        let ident = Operator::identity(layout6);
        assert_eq!(expect(&ident, &rho).unwrap(), rho.trace());
    }

    #[test]
    fn thermal_occupation_geometric_series() {
        // diag weights ∝ e^{−βΩk}: ⟨a†a⟩ → 1/(e^{βΩ}−1) as truncation grows
        let beta_omega = 0.8f64;
        let exact = 1.0 / (beta_omega.exp() - 1.0);
        let mut prev_err = f64::INFINITY;
        for trunc in [4usize, 8, 16, 32] {
            let layout = HilbertLayout::new(vec![1, trunc]).unwrap();
            let (_, _, n) = fock_ops(&layout, 1).unwrap();
            let weights: Vec<f64> = (0..trunc).map(|k| (-beta_omega * k as f64).exp()).collect();
            let z: f64 = weights.iter().sum();
            let rho = DensityMatrix::new(
                layout,
                Array2::from_shape_fn((trunc, trunc), |(i, j)| {
                    if i == j {
                        c(weights[i] / z, 0.0)
                    } else {
                        c(0.0, 0.0)
                    }
                }),
            )
            .unwrap();
            let got = expect(&n, &rho).unwrap().re;
            let err = (got - exact).abs();
            assert!(err < prev_err || err < 1e-12);
            prev_err = err;
        }
        assert!(prev_err < 1e-9);
    }
}
