//! Packaged numerical experiments over the competition dynamics.
//!
//! Each experiment drives [`crate::dynamics`] (and where needed
//! [`crate::eigen`] or [`crate::bundle`]) to a structured report that a
//! caller can serialize, print, or assert against. The reports carry the
//! run parameters they were produced with, the headline metrics, and a
//! sampled time series for plotting; verdicts are deliberately
//! conservative and say "undecided" rather than guessing.

use serde::Serialize;

use crate::bundle::{lsq_slope, CoefficientPath};
use crate::dynamics::{
    aggregate, equilibrium, state_distance, steady_state, Competition, Simulator,
};
use crate::eigen::principal_value;
use crate::error::{Error, Result};
use crate::grid::{integrate, Field, Norm};

/// Outcome of an exclusion run. `Excluded` is only reported when the end
/// state is inside the configured tolerance of the slowest species alone
/// on its steady profile and every other species is still shrinking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Excluded,
    Undecided,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Excluded => write!(f, "excluded"),
            Verdict::Undecided => write!(f, "undecided"),
        }
    }
}

/// Time series sampled during an exclusion run: one row per sample time.
/// `log_ratios[i]` tracks `log sup_x u_{i+1}/u_0`, the worst-case headway
/// of species `i + 1` against the slowest one.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ExclusionSeries {
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    pub log_ratios: Vec<Vec<f64>>,
    pub total_mass: Vec<f64>,
    pub aggregate_gap: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExclusionReport {
    pub length: f64,
    pub n_nodes: usize,
    pub ds: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub tol: f64,
    /// Sup distance of the end state from the slowest-species equilibrium.
    pub final_distance: f64,
    /// Least-squares slopes of the log sup ratios over the final half of
    /// the samples, one per species beyond the first; negative means the
    /// species keeps losing ground.
    pub slopes: Vec<f64>,
    /// Largest sup gap between the summed densities and the winner's
    /// steady profile over the final quarter of the samples.
    pub aggregate_limsup: f64,
    /// Whether the total mass stayed at or below the habitat's carrying
    /// capacity `L * sup m` over the final quarter of the samples.
    pub mass_bounded: bool,
    pub verdict: Verdict,
    #[serde(skip_serializing)]
    pub series: ExclusionSeries,
}

/// Target number of sample rows kept from an exclusion run; the stride is
/// chosen so long runs do not accumulate unbounded series.
const EXCLUSION_SAMPLES: u64 = 800;

/// Runs the competition from a strictly positive start and measures how
/// decisively the slowest species takes over. Requires the diffusion
/// rates strictly increasing, so "species 0" is the predicted winner.
pub fn exclusion_experiment(
    comp: &Competition,
    u0: &[Field],
    t_end: f64,
    dt: f64,
    tol: f64,
) -> Result<ExclusionReport> {
    let n = comp.n_species();
    if comp.rates().windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "diffusion rates must be strictly increasing".to_string(),
        ));
    }
    if u0.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} start profiles for {} species",
            u0.len(),
            n
        )));
    }
    for (i, f) in u0.iter().enumerate() {
        if f.min() <= 0.0 {
            return Err(Error::NonPositive(format!(
                "start profile {i} has min {}",
                f.min()
            )));
        }
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("tolerance {tol}")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!("t_end = {t_end}")));
    }

    let theta1 = steady_state(comp.rates()[0], comp.habitat())?;
    let e1 = equilibrium(n, 0, &theta1)?;
    let mut sim = Simulator::new(comp, u0, dt)?;
    let total_steps = ((t_end / dt).round() as u64).max(1);
    let stride = (total_steps / EXCLUSION_SAMPLES).max(1);

    let mut series = ExclusionSeries {
        log_ratios: vec![Vec::new(); n.saturating_sub(1)],
        ..ExclusionSeries::default()
    };
    record_exclusion_sample(&sim, &theta1, &e1, &mut series)?;
    let mut k: u64 = 0;
    while sim.time() + 0.5 * dt < t_end {
        sim.step()?;
        k += 1;
        if k % stride == 0 && sim.time() + 0.5 * dt < t_end {
            record_exclusion_sample(&sim, &theta1, &e1, &mut series)?;
        }
    }
    record_exclusion_sample(&sim, &theta1, &e1, &mut series)?;

    let samples = series.times.len();
    if samples < 4 {
        return Err(Error::InvalidInput(
            "window too short to fit decay slopes".to_string(),
        ));
    }
    let half = samples / 2;
    let slopes: Vec<f64> = series
        .log_ratios
        .iter()
        .map(|lr| lsq_slope(&series.times[half..], &lr[half..]))
        .collect();
    let quarter = samples * 3 / 4;
    let aggregate_limsup = series.aggregate_gap[quarter..]
        .iter()
        .fold(0.0f64, |a, v| a.max(*v));
    let mass_cap = comp.grid().length() * comp.habitat().max().max(0.0);
    let mass_bounded = series.total_mass[quarter..]
        .iter()
        .all(|m| *m <= mass_cap + 1e-9);
    let final_distance = *series.distance.last().unwrap();
    let verdict = if final_distance < tol && slopes.iter().all(|s| *s < 0.0) {
        Verdict::Excluded
    } else {
        Verdict::Undecided
    };

    Ok(ExclusionReport {
        length: comp.grid().length(),
        n_nodes: comp.grid().n_nodes(),
        ds: comp.rates().to_vec(),
        dt,
        t_end,
        tol,
        final_distance,
        slopes,
        aggregate_limsup,
        mass_bounded,
        verdict,
        series,
    })
}

fn record_exclusion_sample(
    sim: &Simulator,
    theta1: &Field,
    e1: &[Field],
    series: &mut ExclusionSeries,
) -> Result<()> {
    let state = sim.all_species();
    series.times.push(sim.time());
    series
        .distance
        .push(state_distance(&state, e1, Norm::Sup)?);
    let u0 = sim.values(0);
    for i in 1..state.len() {
        let ui = sim.values(i);
        let mut ratio = 0.0f64;
        for (a, b) in ui.iter().zip(u0) {
            if *b <= 0.0 {
                return Err(Error::NonPositive(format!(
                    "reference species vanished at t = {}",
                    sim.time()
                )));
            }
            ratio = ratio.max(a / b);
        }
        series.log_ratios[i - 1].push(ratio.max(1e-300).ln());
    }
    let total = sim.total_density();
    series.total_mass.push(integrate(&total));
    let gap = total
        .values()
        .iter()
        .zip(theta1.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    series.aggregate_gap.push(gap);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosenessReport {
    /// Largest deviation of any perturbed rate from its block rate.
    pub epsilon: f64,
    pub t_end: f64,
    /// Sup over the run of the blockwise-aggregated sup gap between the
    /// perturbed and the block-rate system.
    pub gap: f64,
    /// Same gap with the rate perturbation halved.
    pub gap_half: f64,
    /// `gap_half / gap`; absent when the base gap is numerically zero.
    pub ratio: Option<f64>,
}

/// Compares the N-species system whose rates deviate by at most epsilon
/// from K block rates against the exactly blockwise-equal system, both
/// started from the same data and aggregated by blocks. Runs the pair
/// twice, the second time with the perturbation halved, to expose how the
/// gap scales with epsilon.
pub fn closeness_experiment(
    m: &Field,
    hat_ds: &[f64],
    ds: &[f64],
    groups: &[Vec<usize>],
    u0: &[Field],
    t_end: f64,
    dt: f64,
) -> Result<ClosenessReport> {
    let n = ds.len();
    if u0.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} start profiles for {} species",
            u0.len(),
            n
        )));
    }
    if groups.len() != hat_ds.len() {
        return Err(Error::InvalidInput(format!(
            "{} blocks for {} block rates",
            groups.len(),
            hat_ds.len()
        )));
    }
    // delegating to the aggregation validator catches malformed partitions
    aggregate(u0, groups)?;
    let mut expanded = vec![0.0; n];
    for (k, g) in groups.iter().enumerate() {
        for &i in g {
            expanded[i] = hat_ds[k];
        }
    }
    let epsilon = ds
        .iter()
        .zip(&expanded)
        .fold(0.0f64, |a, (d, e)| a.max((d - e).abs()));
    let halved: Vec<f64> = ds
        .iter()
        .zip(&expanded)
        .map(|(d, e)| e + 0.5 * (d - e))
        .collect();

    let gap = aggregated_sup_gap(m, &expanded, ds, groups, u0, t_end, dt)?;
    let gap_half = aggregated_sup_gap(m, &expanded, &halved, groups, u0, t_end, dt)?;
    let ratio = if gap > 1e-14 {
        Some(gap_half / gap)
    } else {
        None
    };
    Ok(ClosenessReport {
        epsilon,
        t_end,
        gap,
        gap_half,
        ratio,
    })
}

fn aggregated_sup_gap(
    m: &Field,
    rates_a: &[f64],
    rates_b: &[f64],
    groups: &[Vec<usize>],
    u0: &[Field],
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let ca = Competition::new(m.clone(), rates_a.to_vec())?;
    let cb = Competition::new(m.clone(), rates_b.to_vec())?;
    let mut sa = Simulator::new(&ca, u0, dt)?;
    let mut sb = Simulator::new(&cb, u0, dt)?;
    let mut gap = 0.0f64;
    loop {
        let aa = aggregate(&sa.all_species(), groups)?;
        let ab = aggregate(&sb.all_species(), groups)?;
        gap = gap.max(state_distance(&aa, &ab, Norm::Sup)?);
        if sa.time() + 0.5 * dt >= t_end {
            break;
        }
        sa.step()?;
        sb.step()?;
    }
    Ok(gap)
}

/// Hausdorff distance between two finite nonempty sets of reals.
pub fn hausdorff_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "hausdorff distance needs nonempty sets".to_string(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "hausdorff distance needs finite values".to_string(),
        ));
    }
    let one_sided = |from: &[f64], to: &[f64]| {
        from.iter()
            .map(|x| {
                to.iter()
                    .map(|y| (x - y).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    Ok(one_sided(a, b).max(one_sided(b, a)))
}

/// Pairwise invasion exponents: entry `(i, j)` is the principal
/// eigenvalue of `-d_i lap - (m - theta_{d_j})`, the decay rate of
/// species `i` trying to invade the single-species steady state of
/// species `j`. Negative means the invasion grows.
pub fn invasion_matrix(comp: &Competition) -> Result<Vec<Vec<f64>>> {
    let m = comp.habitat();
    let grid = comp.grid();
    let mut shifted = Vec::with_capacity(comp.n_species());
    for &dj in comp.rates() {
        let theta = steady_state(dj, m)?;
        let vals: Vec<f64> = m
            .values()
            .iter()
            .zip(theta.values())
            .map(|(a, b)| a - b)
            .collect();
        shifted.push(Field::new(grid, vals)?);
    }
    let mut matrix = Vec::with_capacity(comp.n_species());
    for &di in comp.rates() {
        let mut row = Vec::with_capacity(comp.n_species());
        for h in &shifted {
            row.push(principal_value(di, h)?);
        }
        matrix.push(row);
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinReport {
    /// End-state distance to the slow-species equilibrium from a strictly
    /// interior start.
    pub interior_distance: f64,
    /// End-state distance to the fast-species equilibrium when the slow
    /// species starts absent.
    pub face_distance: f64,
    /// End-state distance from extinction when everything starts at zero.
    pub origin_distance: f64,
    /// End-state distance to the slow-species equilibrium after seeding
    /// the fast-species equilibrium with a small slow-species dose,
    /// measured over a tripled horizon.
    pub perturbed_distance: f64,
    pub ok: bool,
}

/// Checks the expected attractor layout of the two-species system: the
/// interior flows to the slow species, the fast-only face to the fast
/// species, extinction stays put, and a small slow-species dose tips the
/// fast equilibrium over. `ok` requires all four end states within `tol`
/// of their targets (extinction to roundoff).
pub fn two_species_basin_check(
    comp: &Competition,
    dt: f64,
    t_end: f64,
    tol: f64,
) -> Result<BasinReport> {
    if comp.n_species() != 2 {
        return Err(Error::InvalidInput(format!(
            "basin check is for two species, got {}",
            comp.n_species()
        )));
    }
    if comp.rates()[0] >= comp.rates()[1] {
        return Err(Error::InvalidInput(
            "diffusion rates must be strictly increasing".to_string(),
        ));
    }
    if !(tol > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol = {tol}, t_end = {t_end}"
        )));
    }
    let grid = comp.grid();
    let theta1 = steady_state(comp.rates()[0], comp.habitat())?;
    let theta2 = steady_state(comp.rates()[1], comp.habitat())?;
    let e1 = equilibrium(2, 0, &theta1)?;
    let e2 = equilibrium(2, 1, &theta2)?;
    let run = |start: Vec<Field>, horizon: f64| -> Result<Vec<Field>> {
        let mut sim = Simulator::new(comp, &start, dt)?;
        sim.run_until(horizon)?;
        Ok(sim.all_species())
    };

    let interior = run(
        vec![Field::constant(grid, 0.3), Field::constant(grid, 0.05)],
        t_end,
    )?;
    let interior_distance = state_distance(&interior, &e1, Norm::Sup)?;

    let face = run(
        vec![Field::constant(grid, 0.0), Field::constant(grid, 0.3)],
        t_end,
    )?;
    let face_distance = state_distance(&face, &e2, Norm::Sup)?;

    let origin = run(
        vec![Field::constant(grid, 0.0), Field::constant(grid, 0.0)],
        t_end.min(5.0),
    )?;
    let zero_state = vec![Field::constant(grid, 0.0), Field::constant(grid, 0.0)];
    let origin_distance = state_distance(&origin, &zero_state, Norm::Sup)?;

    let perturbed = run(vec![Field::constant(grid, 1e-3), theta2.clone()], 3.0 * t_end)?;
    let perturbed_distance = state_distance(&perturbed, &e1, Norm::Sup)?;

    let ok = interior_distance < tol
        && face_distance < tol
        && origin_distance <= 1e-14
        && perturbed_distance < tol;
    Ok(BasinReport {
        interior_distance,
        face_distance,
        origin_distance,
        perturbed_distance,
        ok,
    })
}

/// Records the effective growth profile `m - sum_i u_i` seen by a linear
/// tracer along a competition run, sampled every `stride` steps over
/// `[t_0, t_1]`, as an interpolating coefficient path.
pub fn competition_path(
    comp: &Competition,
    u0: &[Field],
    t0: f64,
    t1: f64,
    dt: f64,
    stride: usize,
) -> Result<CoefficientPath> {
    if !(t0 >= 0.0) || !(t1 > t0) {
        return Err(Error::InvalidInput(format!("window [{t0}, {t1}]")));
    }
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be positive".to_string()));
    }
    let m = comp.habitat();
    let grid = comp.grid();
    let mut sim = Simulator::new(comp, u0, dt)?;
    sim.run_until(t0)?;
    let snapshot = |sim: &Simulator| -> Result<Field> {
        let total = sim.total_density();
        let vals: Vec<f64> = m
            .values()
            .iter()
            .zip(total.values())
            .map(|(a, b)| a - b)
            .collect();
        Field::new(grid, vals)
    };
    let mut times = vec![sim.time()];
    let mut fields = vec![snapshot(&sim)?];
    let mut k = 0usize;
    while sim.time() + 0.5 * dt < t1 {
        sim.step()?;
        k += 1;
        if k % stride == 0 && sim.time() + 0.5 * dt < t1 {
            times.push(sim.time());
            fields.push(snapshot(&sim)?);
        }
    }
    times.push(sim.time());
    fields.push(snapshot(&sim)?);
    CoefficientPath::sampled(times, fields)
}
