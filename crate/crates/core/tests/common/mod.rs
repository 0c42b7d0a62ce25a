//! Independent spectral oracle for the acceptance suite.
//!
//! Assembles the symmetrized finite-difference operator from scratch and
//! finds any eigenvalue by Sturm-sequence bisection. Shares no code with
//! the library's eigensolver: different algorithm, different assembly,
//! same matrix definition, so agreement is meaningful.

use dispersal_core::Field;

pub struct SymTri {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

/// Symmetrized form of `-d lap - diag(h)` on the no-flux grid: the plain
/// similarity transform by the square root of the trapezoid weights turns
/// the one-sided boundary rows into `sqrt(2)`-scaled symmetric ones.
pub fn assemble(d: f64, h: &Field) -> SymTri {
    let g = h.grid();
    let n = g.n_nodes();
    let hx = g.spacing();
    let c = d / (hx * hx);
    let diag: Vec<f64> = h.values().iter().map(|hv| 2.0 * c - hv).collect();
    let mut off = vec![-c; n - 1];
    off[0] *= 2.0f64.sqrt();
    off[n - 2] *= 2.0f64.sqrt();
    SymTri { diag, off }
}

/// Number of eigenvalues strictly below `x`, by the classical Sturm
/// recurrence on the shifted leading principal minors.
pub fn count_below(m: &SymTri, x: f64) -> usize {
    let mut count = 0usize;
    let mut q = m.diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for k in 1..m.diag.len() {
        let e2 = m.off[k - 1] * m.off[k - 1];
        let denom = if q == 0.0 { 1e-300 } else { q };
        q = m.diag[k] - x - e2 / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th smallest eigenvalue (zero-based), bisected to a width of a few
/// ulps of the matrix scale.
pub fn eigenvalue(m: &SymTri, k: usize) -> f64 {
    let n = m.diag.len();
    assert!(k < n);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut scale = 0.0f64;
    for i in 0..n {
        let left = if i > 0 { m.off[i - 1].abs() } else { 0.0 };
        let right = if i < n - 1 { m.off[i].abs() } else { 0.0 };
        lo = lo.min(m.diag[i] - left - right);
        hi = hi.max(m.diag[i] + left + right);
        scale = scale.max(m.diag[i].abs() + left + right);
    }
    let tol = 4.0 * f64::EPSILON * scale.max(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if count_below(m, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
