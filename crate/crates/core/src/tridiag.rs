//! Tridiagonal LU solver (Thomas algorithm) with the factorization cached,
//! since the time steppers solve against the same matrix every step.
//!
//! No pivoting. Every matrix factored here is either strictly diagonally
//! dominant (implicit diffusion: `I - dt * d * lap` plus reaction shifts
//! bounded by the step-size restriction) or a shifted operator made
//! dominant by construction, so the plain recurrence is stable. A pivot
//! smaller than `MIN_PIVOT` relative to the row scale is reported as
//! singular rather than propagated.

use crate::error::{Error, Result};

const MIN_PIVOT: f64 = 1e-300;

/// Prefactored tridiagonal matrix. `solve` reuses the factorization.
#[derive(Debug, Clone)]
pub struct TridiagSolver {
    /// Multipliers `l[j] = sub[j] / pivot[j]`.
    l: Vec<f64>,
    /// Pivots of the elimination.
    piv: Vec<f64>,
    /// Upper diagonal (unchanged by the elimination).
    sup: Vec<f64>,
}

impl TridiagSolver {
    /// Factors the matrix with diagonals `(sub, diag, sup)`, where
    /// `sub[j] = A[j+1, j]` and `sup[j] = A[j, j+1]`.
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<TridiagSolver> {
        let n = diag.len();
        if n == 0 || sub.len() != n - 1 || sup.len() != n - 1 {
            return Err(Error::InvalidInput(format!(
                "tridiagonal shape mismatch: diag {n}, sub {}, sup {}",
                sub.len(),
                sup.len()
            )));
        }
        let mut l = vec![0.0; n - 1];
        let mut piv = vec![0.0; n];
        piv[0] = diag[0];
        for j in 0..n - 1 {
            if piv[j].abs() < MIN_PIVOT || !piv[j].is_finite() {
                return Err(Error::Singular(format!("pivot {} at row {j}", piv[j])));
            }
            l[j] = sub[j] / piv[j];
            piv[j + 1] = diag[j + 1] - l[j] * sup[j];
        }
        if piv[n - 1].abs() < MIN_PIVOT || !piv[n - 1].is_finite() {
            return Err(Error::Singular(format!(
                "pivot {} at row {}",
                piv[n - 1],
                n - 1
            )));
        }
        Ok(TridiagSolver {
            l,
            piv,
            sup: sup.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.piv.len()
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.piv.len();
        assert_eq!(rhs.len(), n, "rhs length");
        for j in 0..n - 1 {
            rhs[j + 1] -= self.l[j] * rhs[j];
        }
        rhs[n - 1] /= self.piv[n - 1];
        for j in (0..n - 1).rev() {
            rhs[j] = (rhs[j] - self.sup[j] * rhs[j + 1]) / self.piv[j];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// One-off product of the tridiagonal matrix `(sub, diag, sup)` with `x`.
pub fn tridiag_apply(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut out = vec![0.0; n];
    if n == 1 {
        out[0] = diag[0] * x[0];
        return out;
    }
    out[0] = diag[0] * x[0] + sup[0] * x[1];
    for j in 1..n - 1 {
        out[j] = sub[j - 1] * x[j - 1] + diag[j] * x[j] + sup[j] * x[j + 1];
    }
    out[n - 1] = sub[n - 2] * x[n - 2] + diag[n - 1] * x[n - 1];
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn solves_identity() {
        let s = TridiagSolver::new(&[0.0, 0.0], &[1.0, 1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.solve(&[3.0, -1.0, 2.0]), vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn solves_known_system() {
        // [2 1 0; 1 2 1; 0 1 2] x = [4, 8, 8] has x = [1, 2, 3]
        let s = TridiagSolver::new(&[1.0, 1.0], &[2.0, 2.0, 2.0], &[1.0, 1.0]).unwrap();
        let x = s.solve(&[4.0, 8.0, 8.0]);
        for (got, want) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn one_by_one() {
        let s = TridiagSolver::new(&[], &[4.0], &[]).unwrap();
        assert_eq!(s.solve(&[2.0]), vec![0.5]);
    }

    #[test]
    fn reports_singular() {
        assert!(matches!(
            TridiagSolver::new(&[1.0], &[0.0, 1.0], &[1.0]),
            Err(Error::Singular(_))
        ));
        // elimination hits a zero pivot on the second row: 1 - 1*1 = 0
        assert!(matches!(
            TridiagSolver::new(&[1.0], &[1.0, 1.0], &[1.0]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_invalid_input() {
        assert!(matches!(
            TridiagSolver::new(&[1.0], &[1.0, 1.0, 1.0], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    proptest! {
        #[test]
        fn solve_then_apply_recovers_rhs(
            n in 1usize..80,
            raw in proptest::collection::vec(-1.0f64..1.0, 3 * 80 + 2),
        ) {
            // diagonally dominant by construction
            let sub: Vec<f64> = raw[..n.saturating_sub(1)].to_vec();
            let sup: Vec<f64> = raw[80..80 + n - 1].to_vec();
            let diag: Vec<f64> = (0..n)
                .map(|j| {
                    let row = sub.get(j.wrapping_sub(1)).copied().unwrap_or(0.0).abs()
                        + sup.get(j).copied().unwrap_or(0.0).abs();
                    2.0 + row + raw[160 + j].abs()
                })
                .collect();
            let rhs: Vec<f64> = (0..n).map(|j| 10.0 * raw[2 * 80 + 2 + j % 80]).collect();
            let s = TridiagSolver::new(&sub, &diag, &sup).unwrap();
            let x = s.solve(&rhs);
            let back = tridiag_apply(&sub, &diag, &sup, &x);
            for j in 0..n {
                prop_assert!((back[j] - rhs[j]).abs() <= 1e-10, "row {}: {} vs {}", j, back[j], rhs[j]);
            }
        }
    }
}
