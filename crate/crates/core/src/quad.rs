//! Adaptive Gauss–Kronrod quadrature for complex-valued integrands.

use num_complex::Complex64;

/// 15-point Kronrod abscissae on [−1, 1], positive half, centre last.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Kronrod weights matching [`XGK`].
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// 7-point Gauss weights; wg[k] pairs with xgk[2k+1].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, thiserror::Error)]
pub enum QuadError {
    #[error("quadrature failed to converge: achieved {achieved:.3e}, requested {requested:.3e}{context}")]
    NonConvergence {
        achieved: f64,
        requested: f64,
        context: String,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct QuadTol {
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for QuadTol {
    fn default() -> Self {
        QuadTol {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: Complex64,
    pub error: f64,
}

/// Single Gauss–Kronrod 15(7) panel: returns (kronrod, |kronrod − gauss|).
fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> (Complex64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kron = Complex64::new(0.0, 0.0);
    let mut gauss = Complex64::new(0.0, 0.0);
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        if i == 7 {
            let fc = f(mid);
            kron += wk * fc;
            gauss += WG[3] * fc;
        } else {
            let both = f(mid - half * x) + f(mid + half * x);
            kron += wk * both;
            if i % 2 == 1 {
                gauss += WG[i / 2] * both;
            }
        }
    }
    kron *= half;
    gauss *= half;
    (kron, (kron - gauss).norm())
}

/// Adaptive integral of `f` on [a, b] by bisection of the worst panel.
pub fn adaptive<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    tol: QuadTol,
) -> Result<QuadResult, QuadError> {
    adaptive_with_budget(f, a, b, tol, 20_000)
}

pub fn adaptive_with_budget<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    tol: QuadTol,
    max_panels: usize,
) -> Result<QuadResult, QuadError> {
    struct Panel {
        a: f64,
        b: f64,
        value: Complex64,
        err: f64,
    }
    let (v0, e0) = gk15(f, a, b);
    let mut panels = vec![Panel {
        a,
        b,
        value: v0,
        err: e0,
    }];
    loop {
        let total: Complex64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        let target = tol.abs_tol.max(tol.rel_tol * total.norm());
        if err <= target {
            return Ok(QuadResult { value: total, error: err });
        }
        if panels.len() >= max_panels {
            return Err(QuadError::NonConvergence {
                achieved: err,
                requested: target,
                context: format!(" on [{a:.6e}, {b:.6e}]"),
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let Panel { a: pa, b: pb, .. } = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // interval exhausted at machine precision
            return Err(QuadError::NonConvergence {
                achieved: err,
                requested: target,
                context: format!(" (panel width underflow near {mid:.6e})"),
            });
        }
        for (na, nb) in [(pa, mid), (mid, pb)] {
            let (v, e) = gk15(f, na, nb);
            panels.push(Panel {
                a: na,
                b: nb,
                value: v,
                err: e,
            });
        }
    }
}

/// Integral of a decaying, non-oscillatory integrand on [0, ∞): doubling
/// panels from `scale` until two consecutive contributions fall below
/// tolerance. Oscillatory tails need an explicit cutoff chosen from a tail
/// bound; see `bath::correlation_numeric`.
pub fn semi_infinite<F: Fn(f64) -> Complex64>(
    f: &F,
    scale: f64,
    tol: QuadTol,
) -> Result<QuadResult, QuadError> {
    let panel_tol = QuadTol {
        abs_tol: tol.abs_tol / 8.0,
        rel_tol: tol.rel_tol / 8.0,
    };
    let mut total = Complex64::new(0.0, 0.0);
    let mut err = 0.0;
    let mut lo = 0.0f64;
    let mut hi = scale.max(1e-12);
    let mut quiet = 0usize;
    for _ in 0..64 {
        let r = adaptive(f, lo, hi, panel_tol)?;
        total += r.value;
        err += r.error;
        if r.value.norm() < tol.abs_tol / 8.0 {
            quiet += 1;
            if quiet >= 2 {
                return Ok(QuadResult { value: total, error: err });
            }
        } else {
            quiet = 0;
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(QuadError::NonConvergence {
        achieved: err.max(total.norm()),
        requested: tol.abs_tol,
        context: " (semi-infinite tail did not decay)".into(),
    })
}

/// Fixed composite Gauss–Kronrod grid on [a, b]: nodes with Kronrod and
/// (zero-padded) Gauss weights, for integrals re-used across many kernels.
#[derive(Debug, Clone)]
pub struct CompositeGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub gauss_weights: Vec<f64>,
}

impl CompositeGrid {
    pub fn new(a: f64, b: f64, n_panels: usize) -> Self {
        let n_panels = n_panels.max(1);
        let width = (b - a) / n_panels as f64;
        let mut points = Vec::with_capacity(15 * n_panels);
        let mut weights = Vec::with_capacity(15 * n_panels);
        let mut gauss_weights = Vec::with_capacity(15 * n_panels);
        for p in 0..n_panels {
            let pa = a + p as f64 * width;
            let mid = pa + 0.5 * width;
            let half = 0.5 * width;
            // ascending order within the panel; XGK[7] = 0 is the centre
            for i in 0..8 {
                points.push(mid - half * XGK[i]);
                weights.push(half * WGK[i]);
                gauss_weights.push(if i % 2 == 1 {
                    half * WG[i / 2]
                } else if i == 7 {
                    half * WG[3]
                } else {
                    0.0
                });
            }
            for i in (0..7).rev() {
                points.push(mid + half * XGK[i]);
                weights.push(half * WGK[i]);
                gauss_weights.push(if i % 2 == 1 { half * WG[i / 2] } else { 0.0 });
            }
        }
        CompositeGrid {
            points,
            weights,
            gauss_weights,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn re(f: impl Fn(f64) -> f64) -> impl Fn(f64) -> Complex64 {
        move |x| Complex64::new(f(x), 0.0)
    }

    #[test]
    fn polynomial_exact() {
        let r = adaptive(&re(|x| x * x), 0.0, 1.0, QuadTol::default()).unwrap();
        assert_abs_diff_eq!(r.value.re, 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn oscillatory() {
        // ∫_0^{10π} sin x dx = 0; ∫_0^{9.5π} sin = 1 − cos(9.5π) = 1
        let r = adaptive(&re(f64::sin), 0.0, 9.5 * PI, QuadTol::default()).unwrap();
        assert_abs_diff_eq!(r.value.re, 1.0 - (9.5 * PI).cos(), epsilon = 1e-10);
    }

    #[test]
    fn semi_infinite_gaussian() {
        let r = semi_infinite(&re(|x| (-x * x).exp()), 1.0, QuadTol::default()).unwrap();
        assert_abs_diff_eq!(r.value.re, 0.5 * PI.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn semi_infinite_exponential_times_power() {
        // ∫_0^∞ x e^{−x} dx = 1
        let r = semi_infinite(&re(|x| x * (-x).exp()), 1.0, QuadTol::default()).unwrap();
        assert_abs_diff_eq!(r.value.re, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn oscillatory_lorentzian_with_cutoff() {
        // ∫_0^∞ cos(t x)/(1+x²) dx = (π/2) e^{−t}; the tail beyond X is
        // bounded by 1/X, so a finite cutoff plus bound reaches 1e−9.
        let t = 3.0;
        let f = |x: f64| Complex64::new((t * x).cos() / (1.0 + x * x), 0.0);
        let cutoff = 1.0e5;
        let r = adaptive_with_budget(
            &f,
            0.0,
            cutoff,
            QuadTol { abs_tol: 1e-10, rel_tol: 1e-10 },
            400_000,
        )
        .unwrap();
        assert_abs_diff_eq!(r.value.re, 0.5 * PI * (-t).exp(), epsilon = 1e-7);
    }

    #[test]
    fn composite_grid_matches_adaptive() {
        let grid = CompositeGrid::new(0.0, 2.0, 16);
        let f = |x: f64| (x * 3.0).cos() * (-x).exp();
        let total: f64 = grid
            .points
            .iter()
            .zip(grid.weights.iter())
            .map(|(&x, &w)| w * f(x))
            .sum();
        let reference = adaptive(&re(f), 0.0, 2.0, QuadTol { abs_tol: 1e-13, rel_tol: 1e-13 })
            .unwrap()
            .value
            .re;
        assert_abs_diff_eq!(total, reference, epsilon = 1e-12);
        // embedded Gauss sum is a valid lower-order estimate
        let gauss: f64 = grid
            .points
            .iter()
            .zip(grid.gauss_weights.iter())
            .map(|(&x, &w)| w * f(x))
            .sum();
        assert_abs_diff_eq!(gauss, reference, epsilon = 1e-9);
    }
}
