//! Uniform 1-d grid on `[0, L]`, scalar fields on it, and the Neumann
//! Laplacian discretized with second-order central differences.
//!
//! The no-flux boundary condition is imposed by ghost-node reflection:
//! with `u[-1] = u[1]` the second difference at the left endpoint becomes
//! `(2u[1] - 2u[0]) / h^2`, and symmetrically on the right. Every row of
//! the resulting tridiagonal matrix sums to zero, so constants are in the
//! kernel and the trapezoid integral of `lap(u)` vanishes identically.

use crate::error::{Error, Result};

/// Uniform grid with `n_nodes` points, node `j` at `x = j * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    length: f64,
    n_nodes: usize,
    spacing: f64,
}

impl Grid {
    /// Builds a grid on `[0, length]`. Requires `length > 0` and at least
    /// three nodes so the interior stencil is nonempty.
    pub fn new(length: f64, n_nodes: usize) -> Result<Grid> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "length must be positive and finite, got {length}"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes, got {n_nodes}"
            )));
        }
        Ok(Grid {
            length,
            n_nodes,
            spacing: length / (n_nodes - 1) as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Position of node `j`.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.spacing
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(|j| self.node(j))
    }
}

/// Scalar field sampled at the grid nodes. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    /// Wraps raw values, rejecting length mismatches and non-finite entries.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.n_nodes() {
            return Err(Error::InvalidInput(format!(
                "field has {} values for a {}-node grid",
                values.len(),
                grid.n_nodes()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at node {j}",
                values[j]
            )));
        }
        Ok(Field { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.n_nodes());
        Field { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Field {
        Field {
            grid,
            values: vec![c; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Field> {
        let values: Vec<f64> = grid.nodes().map(f).collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks the two fields share a grid; the error names the caller.
    pub fn same_grid(&self, other: &Field, context: &str) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(context.to_string()));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.values[j]
    }
}

/// Which norm `norm` computes. L1 and L2 use the trapezoid quadrature,
/// Sup is the max of node absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Sup,
}

/// Trapezoid quadrature of `f` over `[0, L]`: endpoints carry weight 1/2.
pub fn integrate(f: &Field) -> f64 {
    let v = f.values();
    let n = v.len();
    let mut s = 0.5 * (v[0] + v[n - 1]);
    for &x in &v[1..n - 1] {
        s += x;
    }
    s * f.grid().spacing()
}

/// Trapezoid inner product of two fields on the same grid.
pub(crate) fn inner(a: &[f64], b: &[f64], spacing: f64) -> f64 {
    let n = a.len();
    let mut s = 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]);
    for j in 1..n - 1 {
        s += a[j] * b[j];
    }
    s * spacing
}

pub fn norm(f: &Field, which: Norm) -> f64 {
    match which {
        Norm::L1 => {
            let v = f.values();
            let n = v.len();
            let mut s = 0.5 * (v[0].abs() + v[n - 1].abs());
            for &x in &v[1..n - 1] {
                s += x.abs();
            }
            s * f.grid().spacing()
        }
        Norm::L2 => inner(f.values(), f.values(), f.grid().spacing()).sqrt(),
        Norm::Sup => f.values().iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Midpoint-rule Dirichlet energy `sum_j h * ((f[j+1]-f[j])/h)^2 / w_mid^2`
/// with `w_mid` the arithmetic mean of the weight at the two nodes.
/// `weight = None` means weight one, i.e. the plain energy `int |f'|^2`.
///
/// For a unit-weight field this sum equals the trapezoid inner product
/// `<f, -lap f>` exactly (summation by parts is an identity of the
/// discretization, not an approximation), which is what makes the
/// eigenvalue perturbation checks in `eigen` consistent to roundoff.
pub fn dirichlet_energy(f: &Field, weight: Option<&Field>) -> Result<f64> {
    let h = f.grid().spacing();
    let v = f.values();
    let mut s = 0.0;
    match weight {
        None => {
            for j in 0..v.len() - 1 {
                let df = (v[j + 1] - v[j]) / h;
                s += df * df;
            }
        }
        Some(w) => {
            f.same_grid(w, "dirichlet_energy weight")?;
            let wv = w.values();
            for j in 0..v.len() - 1 {
                let wm = 0.5 * (wv[j] + wv[j + 1]);
                if wm == 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "dirichlet_energy weight vanishes between nodes {j} and {}",
                        j + 1
                    )));
                }
                let df = (v[j + 1] - v[j]) / (h * wm);
                s += df * df;
            }
        }
    }
    Ok(s * h)
}

/// Tridiagonal Neumann Laplacian. Interior rows `(1, -2, 1)/h^2`,
/// boundary rows `(-2, 2)/h^2` from ghost-node reflection.
#[derive(Debug, Clone)]
pub struct NeumannLaplacian {
    grid: Grid,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl NeumannLaplacian {
    pub fn new(grid: Grid) -> NeumannLaplacian {
        let n = grid.n_nodes();
        let ih2 = 1.0 / (grid.spacing() * grid.spacing());
        let mut sub = vec![ih2; n - 1];
        let mut sup = vec![ih2; n - 1];
        let diag = vec![-2.0 * ih2; n];
        sup[0] = 2.0 * ih2;
        sub[n - 2] = 2.0 * ih2;
        NeumannLaplacian { grid, sub, diag, sup }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// `(sub, diag, sup)` with `sub[j] = A[j+1, j]` and `sup[j] = A[j, j+1]`.
    pub fn diagonals(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.sub, &self.diag, &self.sup)
    }

    /// Matrix-vector product. Errors if `f` lives on a different grid.
    pub fn apply(&self, f: &Field) -> Result<Field> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch("laplacian apply".to_string()));
        }
        let v = f.values();
        let n = v.len();
        let mut out = vec![0.0; n];
        out[0] = self.diag[0] * v[0] + self.sup[0] * v[1];
        for j in 1..n - 1 {
            out[j] = self.sub[j - 1] * v[j - 1] + self.diag[j] * v[j] + self.sup[j] * v[j + 1];
        }
        out[n - 1] = self.sub[n - 2] * v[n - 2] + self.diag[n - 1] * v[n - 1];
        Ok(Field::from_raw(self.grid, out))
    }

    /// Eigenvalue of the discrete mode `cos(k pi x / L)`.
    pub fn mode_eigenvalue(&self, k: usize) -> f64 {
        let h = self.grid.spacing();
        -(2.0 / (h * h)) * (1.0 - (k as f64 * std::f64::consts::PI * h / self.grid.length()).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(1.0, n).unwrap()
    }

    #[test]
    fn three_node_grid_spacing() {
        let g = unit_grid(3);
        assert_eq!(g.spacing(), 0.5);
        let xs: Vec<f64> = g.nodes().collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(0.0, 10).is_err());
        assert!(Grid::new(-1.0, 10).is_err());
        assert!(Grid::new(f64::NAN, 10).is_err());
        assert!(Grid::new(1.0, 2).is_err());
    }

    #[test]
    fn field_rejects_non_finite() {
        let g = unit_grid(5);
        assert!(Field::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Field::new(g, vec![1.0; 4]).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = unit_grid(17);
        let lap = NeumannLaplacian::new(g);
        let f = Field::constant(g, 3.25);
        let out = lap.apply(&f).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_grid_mismatch_is_an_error() {
        let lap = NeumannLaplacian::new(unit_grid(11));
        let f = Field::constant(unit_grid(21), 1.0);
        assert!(matches!(lap.apply(&f), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn cosine_modes_are_exact_eigenvectors() {
        for &(n, k) in &[(11usize, 1usize), (101, 2), (401, 5)] {
            let g = unit_grid(n);
            let lap = NeumannLaplacian::new(g);
            let f = Field::from_fn(g, |x| (k as f64 * std::f64::consts::PI * x).cos()).unwrap();
            let out = lap.apply(&f).unwrap();
            let mu = lap.mode_eigenvalue(k);
            let scale = 2.0 / (g.spacing() * g.spacing());
            for j in 0..n {
                assert!(
                    (out[j] - mu * f[j]).abs() <= 1e-10 * scale,
                    "n={n} k={k} node {j}"
                );
            }
        }
    }

    #[test]
    fn x_squared_has_laplacian_two_inside() {
        let g = unit_grid(101);
        let lap = NeumannLaplacian::new(g);
        let f = Field::from_fn(g, |x| x * x).unwrap();
        let out = lap.apply(&f).unwrap();
        for j in 1..g.n_nodes() - 1 {
            assert!((out[j] - 2.0).abs() < 1e-9, "node {j}: {}", out[j]);
        }
    }

    #[test]
    fn integrate_odd_cosine_cancels() {
        let g = unit_grid(201);
        let f = Field::from_fn(g, |x| (std::f64::consts::PI * x).cos()).unwrap();
        assert!(integrate(&f).abs() < 1e-4);
    }

    #[test]
    fn cosine_l2_norm() {
        let g = unit_grid(401);
        let f = Field::from_fn(g, |x| (std::f64::consts::PI * x).cos()).unwrap();
        assert!((norm(&f, Norm::L2) - 0.5f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn cosine_dirichlet_energy() {
        let g = unit_grid(401);
        let f = Field::from_fn(g, |x| (std::f64::consts::PI * x).cos()).unwrap();
        let e = dirichlet_energy(&f, None).unwrap();
        assert!((e - 0.5 * std::f64::consts::PI.powi(2)).abs() < 1e-3);
    }

    #[test]
    fn weighted_energy_matches_log_derivative() {
        // int |f'|^2 / f^2 = int |(log f)'|^2 for positive f
        let g = unit_grid(801);
        let f = Field::from_fn(g, |x| 2.0 + (std::f64::consts::PI * x).cos()).unwrap();
        let e = dirichlet_energy(&f, Some(&f)).unwrap();
        let lg = Field::from_fn(g, |x| (2.0 + (std::f64::consts::PI * x).cos()).ln()).unwrap();
        let e2 = dirichlet_energy(&lg, None).unwrap();
        assert!((e - e2).abs() < 1e-4, "{e} vs {e2}");
    }

    #[test]
    fn weighted_energy_rejects_vanishing_weight() {
        let g = unit_grid(5);
        let f = Field::from_fn(g, |x| x).unwrap();
        let w = Field::new(g, vec![1.0, -1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(dirichlet_energy(&f, Some(&w)).is_err());
    }

    proptest! {
        #[test]
        fn row_sums_are_exactly_zero(n in 3usize..300, len in 0.1f64..10.0) {
            let g = Grid::new(len, n).unwrap();
            let lap = NeumannLaplacian::new(g);
            let (sub, diag, sup) = lap.diagonals();
            prop_assert_eq!(diag[0] + sup[0], 0.0);
            for j in 1..n - 1 {
                prop_assert_eq!(sub[j - 1] + diag[j] + sup[j], 0.0);
            }
            prop_assert_eq!(sub[n - 2] + diag[n - 1], 0.0);
        }

        #[test]
        fn laplacian_integrates_to_zero(
            n in 3usize..200,
            seedvals in proptest::collection::vec(-1000.0f64..1000.0, 200),
        ) {
            let g = Grid::new(1.0, n).unwrap();
            let vals: Vec<f64> = seedvals[..n].to_vec();
            let fmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            let f = Field::new(g, vals).unwrap();
            let lap = NeumannLaplacian::new(g);
            let total = integrate(&lap.apply(&f).unwrap());
            let tol = 32.0 * f64::EPSILON * fmax * ((n - 1) as f64).powi(2);
            prop_assert!(total.abs() <= tol, "total {} tol {}", total, tol);
        }

        #[test]
        fn norms_are_homogeneous(
            c in -100.0f64..100.0,
            vals in proptest::collection::vec(-50.0f64..50.0, 16),
        ) {
            let g = Grid::new(2.0, 16).unwrap();
            let f = Field::new(g, vals.clone()).unwrap();
            let scaled = Field::new(g, vals.iter().map(|v| c * v).collect()).unwrap();
            for which in [Norm::L1, Norm::L2, Norm::Sup] {
                let a = norm(&scaled, which);
                let b = c.abs() * norm(&f, which);
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{:?}: {} vs {}", which, a, b);
            }
        }

        #[test]
        fn dispersion_relation_holds(n in 9usize..200, k in 1usize..8) {
            let g = Grid::new(1.0, n).unwrap();
            let lap = NeumannLaplacian::new(g);
            let f = Field::from_fn(g, |x| (k as f64 * std::f64::consts::PI * x).cos()).unwrap();
            let out = lap.apply(&f).unwrap();
            let mu = lap.mode_eigenvalue(k);
            let scale = 2.0 / (g.spacing() * g.spacing());
            for j in 0..n {
                prop_assert!((out[j] - mu * f[j]).abs() <= 1e-10 * scale);
            }
        }
    }
}
