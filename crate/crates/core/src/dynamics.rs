//! Time integration of the competition system
//!
//! ```text
//! du_i/dt = d_i u_i'' + u_i (m(x) - sum_j u_j),    u_i'(0) = u_i'(L) = 0,
//! ```
//!
//! and the single-species steady states it organizes around.
//!
//! The stepper is first-order IMEX Euler: the logistic reaction is taken
//! explicitly, then the diffusion solve `(I - dt d_i lap) u^{n+1} = rhs`
//! is done with a prefactored tridiagonal LU per species. The implicit
//! matrix is an M-matrix, so the diffusion half preserves nonnegativity
//! exactly; the reaction half preserves it under the step-size bound
//! enforced at construction, with a clamp at zero as a backstop.
//!
//! All species share the habitat `m` and the interaction term, so two
//! species with the same diffusion rate are interchangeable: summing them
//! commutes with stepping except for roundoff. The aggregation helpers at
//! the bottom exist to exercise exactly that structure.

use crate::error::{Error, Result};
use crate::grid::{norm, Field, Grid, NeumannLaplacian, Norm};
use crate::tridiag::TridiagSolver;

/// Largest reaction-stable time step for habitat `m`. The logistic factor
/// `1 + dt (m - total)` stays positive while the total density is within
/// its ultimate bound, with a safety factor of four.
pub fn max_stable_dt(m: &Field) -> f64 {
    let sup_abs = m.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    0.25 / (sup_abs + 2.0 * m.max().max(0.0))
}

/// The competition system: one habitat profile, one diffusion rate per
/// species. Rates need not be distinct; several experiments rely on
/// nearly or exactly equal rates.
#[derive(Debug, Clone)]
pub struct Competition {
    m: Field,
    ds: Vec<f64>,
}

impl Competition {
    pub fn new(m: Field, ds: Vec<f64>) -> Result<Competition> {
        if ds.is_empty() {
            return Err(Error::InvalidInput("no species".to_string()));
        }
        if let Some(d) = ds.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "diffusion rates must be positive and finite, got {d}"
            )));
        }
        Ok(Competition { m, ds })
    }

    pub fn habitat(&self) -> &Field {
        &self.m
    }

    pub fn rates(&self) -> &[f64] {
        &self.ds
    }

    pub fn n_species(&self) -> usize {
        self.ds.len()
    }

    pub fn grid(&self) -> Grid {
        self.m.grid()
    }
}

/// Marching state for one system. Time is tracked as `t0 + steps * dt`
/// rather than accumulated, so long runs do not drift.
pub struct Simulator {
    grid: Grid,
    m: Vec<f64>,
    dt: f64,
    t0: f64,
    steps: u64,
    u: Vec<Vec<f64>>,
    solvers: Vec<TridiagSolver>,
    total: Vec<f64>,
}

impl Simulator {
    pub fn new(comp: &Competition, initial: &[Field], dt: f64) -> Result<Simulator> {
        Simulator::starting_at(comp, initial, dt, 0.0)
    }

    pub fn starting_at(
        comp: &Competition,
        initial: &[Field],
        dt: f64,
        t0: f64,
    ) -> Result<Simulator> {
        if initial.len() != comp.n_species() {
            return Err(Error::InvalidInput(format!(
                "{} initial fields for {} species",
                initial.len(),
                comp.n_species()
            )));
        }
        let dt_max = max_stable_dt(&comp.m);
        if !(dt > 0.0) || !dt.is_finite() || dt > dt_max {
            return Err(Error::InvalidInput(format!(
                "dt = {dt} outside the stable range (0, {dt_max:.6}]"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidInput(format!("start time {t0}")));
        }
        let grid = comp.grid();
        let mut u = Vec::with_capacity(initial.len());
        for (i, f) in initial.iter().enumerate() {
            f.same_grid(&comp.m, "initial data")?;
            if f.min() < 0.0 {
                return Err(Error::NonPositive(format!(
                    "initial data for species {i} has min {}",
                    f.min()
                )));
            }
            u.push(f.values().to_vec());
        }
        let solvers = comp
            .ds
            .iter()
            .map(|&d| implicit_diffusion_solver(grid, d, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Simulator {
            grid,
            m: comp.m.values().to_vec(),
            dt,
            t0,
            steps: 0,
            u,
            solvers,
            total: vec![0.0; grid.n_nodes()],
        })
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_species(&self) -> usize {
        self.u.len()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Raw node values of species `i`.
    pub fn values(&self, i: usize) -> &[f64] {
        &self.u[i]
    }

    pub fn species(&self, i: usize) -> Field {
        Field::from_raw(self.grid, self.u[i].clone())
    }

    pub fn all_species(&self) -> Vec<Field> {
        (0..self.u.len()).map(|i| self.species(i)).collect()
    }

    pub fn total_density(&self) -> Field {
        let n = self.grid.n_nodes();
        let mut tot = vec![0.0; n];
        for ui in &self.u {
            for j in 0..n {
                tot[j] += ui[j];
            }
        }
        Field::from_raw(self.grid, tot)
    }

    /// One IMEX Euler step: explicit logistic reaction (clamped at zero),
    /// then the implicit diffusion solve per species.
    pub fn step(&mut self) -> Result<()> {
        let n = self.grid.n_nodes();
        self.total.fill(0.0);
        for ui in &self.u {
            for j in 0..n {
                self.total[j] += ui[j];
            }
        }
        for (ui, solver) in self.u.iter_mut().zip(&self.solvers) {
            for j in 0..n {
                let factor = 1.0 + self.dt * (self.m[j] - self.total[j]);
                ui[j] = (ui[j] * factor).max(0.0);
            }
            solver.solve_in_place(ui);
        }
        self.steps += 1;
        for ui in &self.u {
            if ui.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { time: self.time() });
            }
        }
        Ok(())
    }

    /// Steps until the current time is within half a step of `t_end`.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        if !t_end.is_finite() {
            return Err(Error::InvalidInput(format!("run_until({t_end})")));
        }
        while self.time() + 0.5 * self.dt < t_end {
            self.step()?;
        }
        Ok(())
    }
}

fn implicit_diffusion_solver(grid: Grid, d: f64, dt: f64) -> Result<TridiagSolver> {
    let lap = NeumannLaplacian::new(grid);
    let (lsub, ldiag, lsup) = lap.diagonals();
    let sub: Vec<f64> = lsub.iter().map(|v| -dt * d * v).collect();
    let sup: Vec<f64> = lsup.iter().map(|v| -dt * d * v).collect();
    let diag: Vec<f64> = ldiag.iter().map(|v| 1.0 - dt * d * v).collect();
    TridiagSolver::new(&sub, &diag, &sup)
}

const STEADY_TARGET: f64 = 1e-12;
const MARCH_UNIT_TOL: f64 = 1e-10;
const MARCH_MAX_UNITS: usize = 4000;
const NEWTON_MAX_ITER: usize = 50;

/// Sup norm of the steady-state defect `d theta'' + theta (m - theta)`.
pub fn steady_residual(d: f64, m: &Field, theta: &Field) -> Result<f64> {
    theta.same_grid(m, "steady_residual")?;
    let lap = NeumannLaplacian::new(m.grid());
    let lt = lap.apply(theta)?;
    let mut r = 0.0f64;
    for j in 0..m.len() {
        r = r.max((d * lt[j] + theta[j] * (m[j] - theta[j])).abs());
    }
    Ok(r)
}

/// The positive steady state of a single species with diffusion rate `d`:
/// `d theta'' + theta (m - theta) = 0` with no-flux boundaries.
///
/// Strategy: march the parabolic problem from a constant profile until it
/// settles (the steady state is globally attracting from positive data
/// whenever it exists), then polish with Newton on the residual. Newton
/// aims at `1e-12` in sup norm but that sits below the roundoff floor of
/// the residual evaluation on fine grids (the `d/h^2` in the Laplacian
/// amplifies rounding of `theta`), so the loop also stops on stagnation
/// and accepts any residual within a floor-shaped bound.
pub fn steady_state(d: f64, m: &Field) -> Result<Field> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::InvalidInput(format!(
            "diffusion rate must be positive and finite, got {d}"
        )));
    }
    let grid = m.grid();
    let n = grid.n_nodes();
    let dt = max_stable_dt(m);
    let solver = implicit_diffusion_solver(grid, d, dt)?;
    let mv = m.values();

    let mut u = vec![0.5 * m.max().max(1.0); n];
    let steps_per_unit = (1.0 / dt).round().max(1.0) as usize;
    let mut settled = false;
    for _ in 0..MARCH_MAX_UNITS {
        let uprev = u.clone();
        for _ in 0..steps_per_unit {
            for j in 0..n {
                u[j] = (u[j] * (1.0 + dt * (mv[j] - u[j]))).max(0.0);
            }
            solver.solve_in_place(&mut u);
        }
        let change = u
            .iter()
            .zip(&uprev)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if change < MARCH_UNIT_TOL {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(Error::SolverFailure(
            "steady-state march did not settle".to_string(),
        ));
    }

    let lap = NeumannLaplacian::new(grid);
    let (lsub, ldiag, lsup) = lap.diagonals();
    let residual = |u: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; n];
        f[0] = d * (ldiag[0] * u[0] + lsup[0] * u[1]) + u[0] * (mv[0] - u[0]);
        for j in 1..n - 1 {
            let lu = lsub[j - 1] * u[j - 1] + ldiag[j] * u[j] + lsup[j] * u[j + 1];
            f[j] = d * lu + u[j] * (mv[j] - u[j]);
        }
        f[n - 1] = d * (lsub[n - 2] * u[n - 2] + ldiag[n - 1] * u[n - 1])
            + u[n - 1] * (mv[n - 1] - u[n - 1]);
        f
    };
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut best = u.clone();
    let mut best_res = sup(&residual(&u));
    let mut stalls = 0;
    for _ in 0..NEWTON_MAX_ITER {
        if best_res < STEADY_TARGET || stalls >= 2 {
            break;
        }
        let f = residual(&u);
        let sub: Vec<f64> = lsub.iter().map(|v| d * v).collect();
        let supd: Vec<f64> = lsup.iter().map(|v| d * v).collect();
        let diag: Vec<f64> = (0..n).map(|j| d * ldiag[j] + mv[j] - 2.0 * u[j]).collect();
        let jac = TridiagSolver::new(&sub, &diag, &supd)?;
        let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
        jac.solve_in_place(&mut delta);
        for j in 0..n {
            u[j] += delta[j];
        }
        let res = sup(&residual(&u));
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&u);
            stalls = 0;
        } else {
            stalls += 1;
        }
        if delta.iter().fold(0.0f64, |a, v| a.max(v.abs())) < 1e-14 {
            break;
        }
    }

    let theta_sup = sup(&best);
    let h = grid.spacing();
    let floor = 64.0 * f64::EPSILON * (1.0 + 4.0 * d / (h * h)) * theta_sup.max(1.0);
    if best_res > STEADY_TARGET.max(floor) {
        return Err(Error::SolverFailure(format!(
            "steady-state residual {best_res:.3e} above the acceptance bound {:.3e}",
            STEADY_TARGET.max(floor)
        )));
    }
    let theta = Field::new(grid, best)?;
    // Newton happily converges to the zero solution when the habitat
    // cannot sustain the species; that is a valid root but not a positive
    // steady state
    let negligible = 1e-8 * m.max().abs().max(1.0);
    if theta.min() <= 0.0 || theta.max() < negligible {
        return Err(Error::NonPositive(format!(
            "no positive steady state for d = {d} (profile in [{}, {}])",
            theta.min(),
            theta.max()
        )));
    }
    Ok(theta)
}

/// Fields of the single-species equilibrium with `theta` in slot `k`.
pub fn equilibrium(n_species: usize, k: usize, theta: &Field) -> Result<Vec<Field>> {
    if k >= n_species {
        return Err(Error::InvalidInput(format!(
            "equilibrium slot {k} out of {n_species}"
        )));
    }
    Ok((0..n_species)
        .map(|i| {
            if i == k {
                theta.clone()
            } else {
                Field::constant(theta.grid(), 0.0)
            }
        })
        .collect())
}

/// Largest per-species distance between two states, in the given norm.
pub fn state_distance(a: &[Field], b: &[Field], which: Norm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "state sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut worst = 0.0f64;
    for (fa, fb) in a.iter().zip(b) {
        fa.same_grid(fb, "state_distance")?;
        let diff = Field::from_raw(
            fa.grid(),
            fa.values()
                .iter()
                .zip(fb.values())
                .map(|(x, y)| x - y)
                .collect(),
        );
        worst = worst.max(norm(&diff, which));
    }
    Ok(worst)
}

/// Sums species into groups: entry `k` of the result is the sum of the
/// fields whose indices appear in `groups[k]`. The groups must partition
/// `0..u.len()`.
pub fn aggregate(u: &[Field], groups: &[Vec<usize>]) -> Result<Vec<Field>> {
    let n = u.len();
    let mut seen = vec![false; n];
    for g in groups {
        for &i in g {
            if i >= n {
                return Err(Error::InvalidInput(format!(
                    "group index {i} out of range for {n} species"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidInput(format!(
                    "species {i} appears in more than one group"
                )));
            }
            seen[i] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "species {i} missing from the grouping"
        )));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidInput("empty group".to_string()));
    }
    let grid = u[0].grid();
    let nn = grid.n_nodes();
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut acc = vec![0.0; nn];
        for &i in g {
            u[i].same_grid(&u[0], "aggregate")?;
            for j in 0..nn {
                acc[j] += u[i][j];
            }
        }
        out.push(Field::from_raw(grid, acc));
    }
    Ok(out)
}
