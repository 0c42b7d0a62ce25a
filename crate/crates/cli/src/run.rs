//! One function per subcommand. Each resolves its inputs from the
//! scenario, runs the core operation, writes a report JSON plus CSV
//! series into the output directory, and returns the one-line verdict
//! with the process exit code (0 decided/ok, 2 undecided).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use dispersal_core::bundle::{compute_bundle, separation_rate, CoefficientPath};
use dispersal_core::dynamics::{steady_residual, steady_state, Competition};
use dispersal_core::eigen::{diffusion_slope, pair_residual, principal_pair};
use dispersal_core::experiments::{
    closeness_experiment, exclusion_experiment, invasion_matrix, two_species_basin_check,
    ExclusionReport, Verdict,
};
use dispersal_core::Field;

use crate::scenario::Scenario;

pub struct Outcome {
    pub line: String,
    pub exit: i32,
}

pub struct Emitter<'a> {
    pub out_dir: &'a Path,
    pub timestamp: Option<u64>,
}

#[derive(Serialize)]
struct Report<'a> {
    scenario: &'a Scenario,
    verdict: &'a str,
    metrics: Value,
    series_files: &'a [String],
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

impl Emitter<'_> {
    fn report(
        &self,
        name: &str,
        sc: &Scenario,
        verdict: &str,
        metrics: Value,
        series_files: &[String],
    ) -> Result<()> {
        let rep = Report {
            scenario: sc,
            verdict,
            metrics,
            series_files,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: self.timestamp,
        };
        let mut text = serde_json::to_string_pretty(&rep)?;
        text.push('\n');
        let path = self.out_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn csv(&self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
        let mut text = String::with_capacity(rows.len() * 24 + header.len() + 2);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    text.push(',');
                }
                let _ = write!(text, "{}", sig17(*v));
            }
            text.push('\n');
        }
        let path = self.out_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn text(&self, name: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip an f64 exactly.
fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

fn columns(fields: &[(String, Field)], x_label: &str) -> (String, Vec<Vec<f64>>) {
    let grid = fields[0].1.grid();
    let mut header = String::from(x_label);
    for (label, _) in fields {
        header.push(',');
        header.push_str(label);
    }
    let rows = (0..grid.n_nodes())
        .map(|j| {
            let mut row = Vec::with_capacity(fields.len() + 1);
            row.push(grid.node(j));
            row.extend(fields.iter().map(|(_, f)| f.values()[j]));
            row
        })
        .collect();
    (header, rows)
}

pub fn steady(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let m = sc.habitat_field()?;
    let mut profiles = Vec::new();
    let mut sups = Vec::new();
    let mut masses = Vec::new();
    let mut residuals = Vec::new();
    for &d in &sc.diffusions {
        let theta = steady_state(d, &m)?;
        sups.push(theta.max());
        masses.push(dispersal_core::integrate(&theta));
        residuals.push(steady_residual(d, &m, &theta)?);
        profiles.push((format!("theta[{d}]"), theta));
    }
    let (header, rows) = columns(&profiles, "x");
    let series = vec!["steady.csv".to_string()];
    em.csv(&series[0], &header, &rows)?;
    let metrics = json!({
        "rates": sc.diffusions,
        "sup": sups,
        "mass": masses,
        "residual": residuals,
    });
    em.report("report-steady.json", sc, "ok", metrics, &series)?;
    Ok(Outcome {
        line: format!(
            "steady: ok ({} profile{}, largest residual {:.2e})",
            sc.diffusions.len(),
            if sc.diffusions.len() == 1 { "" } else { "s" },
            residuals.iter().fold(0.0f64, |a, r| a.max(*r)),
        ),
        exit: 0,
    })
}

pub fn eigen(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let h = sc.habitat_field()?;
    let mut shapes = Vec::new();
    let mut lambdas = Vec::new();
    let mut slopes = Vec::new();
    let mut residuals = Vec::new();
    for &d in &sc.diffusions {
        let pair = principal_pair(d, &h)?;
        lambdas.push(pair.value);
        slopes.push(diffusion_slope(&pair));
        residuals.push(pair_residual(d, &h, &pair)?);
        shapes.push((format!("psi[{d}]"), pair.psi));
    }
    let (header, rows) = columns(&shapes, "x");
    let series = vec!["eigen.csv".to_string()];
    em.csv(&series[0], &header, &rows)?;
    let metrics = json!({
        "rates": sc.diffusions,
        "lambda": lambdas,
        "d_slope": slopes,
        "residual": residuals,
    });
    em.report("report-eigen.json", sc, "ok", metrics, &series)?;
    let summary = sc
        .diffusions
        .iter()
        .zip(&lambdas)
        .map(|(d, l)| format!("lambda[{d}] = {l:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome {
        line: format!("eigen: ok ({summary})"),
        exit: 0,
    })
}

pub fn bundle(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let grid = sc.grid()?;
    let d = sc.bundle.d.unwrap_or(sc.diffusions[0]);
    let t0 = sc.bundle.t0;
    let t1 = sc.bundle.t1.unwrap_or(t0 + 10.0);
    let path = CoefficientPath::from_expr(grid, sc.habitat_expr()?);
    let traj = compute_bundle(d, &path, t0, t1, sc.bundle.spinup, sc.dt, sc.stride)?;
    let gamma = separation_rate(d, &path, t0, t1, sc.dt, 2, sc.seed)?;

    let mut rows = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        rows.push(vec![
            traj.times[k],
            traj.h[k],
            traj.psi[k].max(),
            traj.psi[k].min(),
        ]);
    }
    let series = vec!["bundle.csv".to_string()];
    em.csv(&series[0], "t,h,sup_psi,inf_psi", &rows)?;
    let (h_lo, h_hi) = traj.h_range();
    let metrics = json!({
        "d": d,
        "t0": t0,
        "t1": t1,
        "spinup": sc.bundle.spinup,
        "points": traj.len(),
        "h_min": h_lo,
        "h_max": h_hi,
        "oscillation": traj.oscillation_bound(),
        "separation_rate": gamma,
    });
    em.report("report-bundle.json", sc, "ok", metrics, &series)?;
    Ok(Outcome {
        line: format!(
            "bundle: ok (d = {d}, h in [{h_lo:.6}, {h_hi:.6}], separation rate {gamma:.4})"
        ),
        exit: 0,
    })
}

pub fn exclusion(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let comp = Competition::new(sc.habitat_field()?, sc.diffusions.clone())?;
    let u0 = sc.initial_fields()?;
    let rep = exclusion_experiment(&comp, &u0, sc.t_end, sc.dt, sc.tolerance)?;

    let mut header = String::from("t,distance");
    for i in 0..rep.slopes.len() {
        let _ = write!(header, ",log_ratio_{}", i + 2);
    }
    header.push_str(",total_mass,aggregate_gap");
    let s = &rep.series;
    let rows: Vec<Vec<f64>> = (0..s.times.len())
        .map(|k| {
            let mut row = vec![s.times[k], s.distance[k]];
            row.extend(s.log_ratios.iter().map(|lr| lr[k]));
            row.push(s.total_mass[k]);
            row.push(s.aggregate_gap[k]);
            row
        })
        .collect();
    let series = vec!["exclusion.csv".to_string()];
    em.csv(&series[0], &header, &rows)?;

    let verdict = rep.verdict.to_string();
    em.report(
        "report-exclusion.json",
        sc,
        &verdict,
        serde_json::to_value(&rep)?,
        &series,
    )?;
    let exit = if rep.verdict == Verdict::Excluded { 0 } else { 2 };
    Ok(Outcome {
        line: format!(
            "exclusion: {verdict} (final distance {:.3e} vs tolerance {:.1e} at t = {})",
            rep.final_distance, rep.tol, rep.t_end
        ),
        exit,
    })
}

pub fn closeness(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let groups = sc
        .partition
        .clone()
        .ok_or_else(|| anyhow::anyhow!("partition: required by the closeness experiment"))?;
    let hats = sc
        .block_rates
        .clone()
        .ok_or_else(|| anyhow::anyhow!("block_rates: required by the closeness experiment"))?;
    let m = sc.habitat_field()?;
    let u0 = sc.initial_fields()?;
    let rep = closeness_experiment(&m, &hats, &sc.diffusions, &groups, &u0, sc.t_end, sc.dt)?;

    let series = vec!["closeness.csv".to_string()];
    em.csv(
        &series[0],
        "epsilon,gap",
        &[
            vec![rep.epsilon, rep.gap],
            vec![0.5 * rep.epsilon, rep.gap_half],
        ],
    )?;
    em.report(
        "report-closeness.json",
        sc,
        "ok",
        serde_json::to_value(&rep)?,
        &series,
    )?;
    let ratio = rep
        .ratio
        .map(|r| format!("{r:.3}"))
        .unwrap_or_else(|| "n/a".to_string());
    Ok(Outcome {
        line: format!(
            "closeness: ok (epsilon {:.3e}, gap {:.3e}, halving ratio {ratio})",
            rep.epsilon, rep.gap
        ),
        exit: 0,
    })
}

pub fn invasion(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let comp = Competition::new(sc.habitat_field()?, sc.diffusions.clone())?;
    let mat = invasion_matrix(&comp)?;
    let n = mat.len();
    let h = sc.grid()?.spacing();
    let allow = 10.0 * h * h;
    let mut diag_max = 0.0f64;
    let mut signs_ok = true;
    for (i, row) in mat.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i == j {
                diag_max = diag_max.max(v.abs());
                signs_ok &= v.abs() < allow;
            } else if i < j {
                signs_ok &= v < 0.0;
            } else {
                signs_ok &= v > 0.0;
            }
        }
    }

    let mut header = String::from("invader");
    for d in &sc.diffusions {
        let _ = write!(header, ",resident[{d}]");
    }
    let rows: Vec<Vec<f64>> = sc
        .diffusions
        .iter()
        .zip(&mat)
        .map(|(d, row)| {
            let mut r = vec![*d];
            r.extend(row.iter().copied());
            r
        })
        .collect();
    let series = vec!["invasion.csv".to_string()];
    em.csv(&series[0], &header, &rows)?;

    let verdict = if signs_ok { "ok" } else { "undecided" };
    let metrics = json!({
        "rates": sc.diffusions,
        "matrix": mat,
        "diag_max_abs": diag_max,
        "diag_allowance": allow,
        "sign_consistent": signs_ok,
    });
    em.report("report-invasion.json", sc, verdict, metrics, &series)?;
    Ok(Outcome {
        line: format!(
            "invasion: {verdict} ({n}x{n} matrix, largest diagonal {diag_max:.2e}, staircase signs {})",
            if signs_ok { "confirmed" } else { "violated" }
        ),
        exit: if signs_ok { 0 } else { 2 },
    })
}

pub fn morse2(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    if sc.diffusions.len() != 2 {
        bail!(
            "diffusions: the morse2 check needs exactly 2 rates, got {}",
            sc.diffusions.len()
        );
    }
    let comp = Competition::new(sc.habitat_field()?, sc.diffusions.clone())?;
    let rep = two_species_basin_check(&comp, sc.dt, sc.t_end, sc.tolerance)?;

    let series = vec!["morse2.csv".to_string()];
    let mut text = String::from("leg,distance\n");
    for (leg, v) in [
        ("interior", rep.interior_distance),
        ("face", rep.face_distance),
        ("origin", rep.origin_distance),
        ("perturbed", rep.perturbed_distance),
    ] {
        let _ = writeln!(text, "{leg},{}", sig17(v));
    }
    em.text(&series[0], &text)?;

    let verdict = if rep.ok { "ok" } else { "undecided" };
    let mut metrics = serde_json::to_value(&rep)?;
    metrics["tolerance"] = json!(sc.tolerance);
    em.report("report-morse2.json", sc, verdict, metrics, &series)?;
    Ok(Outcome {
        line: format!(
            "morse2: {verdict} (interior {:.2e}, face {:.2e}, origin {:.2e}, perturbed {:.2e})",
            rep.interior_distance, rep.face_distance, rep.origin_distance, rep.perturbed_distance
        ),
        exit: if rep.ok { 0 } else { 2 },
    })
}

pub fn sweep(sc: &Scenario, em: &Emitter) -> Result<Outcome> {
    let sets = sample_sets(sc)?;
    let t_end = sc.sweep.t_end.unwrap_or(sc.t_end);
    let tol = sc.sweep.tolerance.unwrap_or(sc.tolerance);
    let m = sc.habitat_field()?;
    let grid = sc.grid()?;

    let workers = sc.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building the sweep worker pool")?;
    let reports: Vec<ExclusionReport> = pool.install(|| {
        sets.par_iter()
            .map(|set| {
                let comp = Competition::new(m.clone(), set.clone())?;
                let u0 = vec![Field::constant(grid, 0.3); set.len()];
                exclusion_experiment(&comp, &u0, t_end, sc.dt, tol)
            })
            .collect::<Result<_, _>>()
    })?;

    let mut run_files = Vec::with_capacity(reports.len());
    for (k, (set, rep)) in sets.iter().zip(&reports).enumerate() {
        let mut run_sc = sc.clone();
        run_sc.diffusions = set.clone();
        run_sc.initial = vec!["0.3".to_string(); set.len()];
        run_sc.t_end = t_end;
        run_sc.tolerance = tol;
        let name = format!("sweep-run-{k:02}.json");
        em.report(
            &name,
            &run_sc,
            &rep.verdict.to_string(),
            serde_json::to_value(rep)?,
            &[],
        )?;
        run_files.push(name);
    }

    let mut table = String::from("run,rates,verdict,final_distance,worst_slope\n");
    let mut lines = String::new();
    for (k, (set, rep)) in sets.iter().zip(&reports).enumerate() {
        let rates = set
            .iter()
            .map(|d| format!("{d:.4}"))
            .collect::<Vec<_>>()
            .join(";");
        let worst = rep.slopes.iter().fold(f64::NEG_INFINITY, |a, s| a.max(*s));
        let _ = writeln!(
            table,
            "{k},{rates},{},{},{}",
            rep.verdict,
            sig17(rep.final_distance),
            sig17(worst)
        );
        let _ = writeln!(
            lines,
            "  run {k:02}  rates [{rates}]  {}  final distance {:.3e}",
            rep.verdict, rep.final_distance
        );
    }
    let series = vec!["sweep.csv".to_string()];
    em.text(&series[0], &table)?;

    let excluded = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Excluded)
        .count();
    let all = excluded == reports.len();
    let metrics = json!({
        "count": sets.len(),
        "excluded": excluded,
        "sets": sets,
        "verdicts": reports.iter().map(|r| r.verdict.to_string()).collect::<Vec<_>>(),
        "final_distances": reports.iter().map(|r| r.final_distance).collect::<Vec<_>>(),
        "t_end": t_end,
        "tolerance": tol,
        "workers": workers,
        "report_files": run_files,
    });
    let verdict = if all { "excluded" } else { "undecided" };
    em.report("report-sweep.json", sc, verdict, metrics, &series)?;

    print!("{lines}");
    Ok(Outcome {
        line: format!(
            "sweep: {verdict} ({excluded}/{} sets excluded)",
            reports.len()
        ),
        exit: if all { 0 } else { 2 },
    })
}

/// Draws rate sets near the anchors: one entry per anchor plus one or two
/// extras at random anchors, each offset by at most the radius, rejecting
/// draws whose adjacent gaps fall under the separation floor. Keeping one
/// entry per anchor bounds the Hausdorff distance to the anchor set by the
/// radius.
fn sample_sets(sc: &Scenario) -> Result<Vec<Vec<f64>>> {
    let o = &sc.sweep;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut sets = Vec::with_capacity(o.count);
    for k in 0..o.count {
        let size = o.around.len() + 1 + (k % 2);
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 1000 {
                bail!(
                    "sweep: no draw kept adjacent rates {} apart within radius {} of the anchors",
                    o.separation,
                    o.radius
                );
            }
            let mut set: Vec<f64> = (0..size)
                .map(|i| {
                    let anchor = if i < o.around.len() {
                        o.around[i]
                    } else {
                        o.around[rng.random_range(0..o.around.len())]
                    };
                    anchor + rng.random_range(-o.radius..o.radius)
                })
                .collect();
            set.sort_by(f64::total_cmp);
            if set[0] > 0.0 && set.windows(2).all(|w| w[1] - w[0] >= o.separation) {
                sets.push(set);
                break;
            }
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_sets_stay_near_the_anchors() {
        let mut sc = Scenario {
            seed: 7,
            ..Scenario::default()
        };
        sc.sweep.count = 12;
        let sets = sample_sets(&sc).unwrap();
        assert_eq!(sets.len(), 12);
        for (k, set) in sets.iter().enumerate() {
            assert_eq!(set.len(), 3 + k % 2);
            for w in set.windows(2) {
                assert!(w[1] - w[0] >= 0.02);
            }
            let haus = dispersal_core::experiments::hausdorff_distance(set, &sc.sweep.around)
                .unwrap();
            assert!(haus <= sc.sweep.radius + 1e-12, "set {set:?} strays {haus}");
        }
        let again = sample_sets(&sc).unwrap();
        assert_eq!(sets, again);
    }

    #[test]
    fn infeasible_sampler_reports_rather_than_spinning() {
        let mut sc = Scenario::default();
        sc.sweep.around = vec![0.2, 0.205];
        sc.sweep.radius = 1e-4;
        sc.sweep.separation = 0.02;
        let err = sample_sets(&sc).unwrap_err().to_string();
        assert!(err.contains("sweep"), "{err}");
    }

    #[test]
    fn csv_cells_round_trip() {
        let v = 0.123456789012345678;
        let cell = sig17(v);
        assert_eq!(cell.parse::<f64>().unwrap(), v);
    }
}
