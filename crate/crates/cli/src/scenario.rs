//! Scenario configs: a flat JSON document describing the habitat, the
//! competing species, the time discretization, and per-experiment options.
//! Every subcommand resolves one of these (defaults, then the config file,
//! then key=value overrides, then subcommand flags) and embeds the result
//! in its report, so a report always carries the exact inputs that made it.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use dispersal_core::dynamics::max_stable_dt;
use dispersal_core::expr::{self, Expr};
use dispersal_core::{Field, Grid};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// Habitat length L; the domain is (0, L).
    pub length: f64,
    /// Nodes of the uniform grid, endpoints included.
    pub n_nodes: usize,
    /// Resource profile m as an expression in x (and t for bundle paths).
    pub habitat: String,
    /// Diffusion rates, strictly increasing.
    pub diffusions: Vec<f64>,
    /// Initial profiles, one expression per species; empty means 0.3 each.
    pub initial: Vec<String>,
    /// Grouping of species indices into blocks (closeness experiment).
    pub partition: Option<Vec<Vec<usize>>>,
    /// One shared rate per block (closeness experiment).
    pub block_rates: Option<Vec<f64>>,
    pub dt: f64,
    pub t_end: f64,
    /// Record every stride-th step in step-level CSV series.
    pub stride: usize,
    /// Distance tolerance for verdicts (exclusion, morse2).
    pub tolerance: f64,
    pub bundle: BundleOpts,
    pub sweep: SweepOpts,
    pub seed: u64,
    /// Sweep worker pool size; unset means all available cores.
    pub workers: Option<usize>,
    /// Where reports land when --out is not given.
    pub out_dir: Option<String>,
}

impl Default for Scenario {
    fn default() -> Scenario {
        Scenario {
            length: 1.0,
            n_nodes: 401,
            habitat: "1 + 0.5*cos(3.141592653589793*x)".to_string(),
            diffusions: vec![0.2, 0.4],
            initial: Vec::new(),
            partition: None,
            block_rates: None,
            dt: 1e-3,
            t_end: 400.0,
            stride: 10,
            tolerance: 5e-3,
            bundle: BundleOpts::default(),
            sweep: SweepOpts::default(),
            seed: 42,
            workers: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleOpts {
    /// Diffusion rate to track; unset means the first entry of diffusions.
    pub d: Option<f64>,
    pub t0: f64,
    /// End of the recording window; unset means t0 + 10.
    pub t1: Option<f64>,
    /// Settling time before t0.
    pub spinup: f64,
}

impl Default for BundleOpts {
    fn default() -> BundleOpts {
        BundleOpts {
            d: None,
            t0: 0.0,
            t1: None,
            spinup: 20.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOpts {
    /// Anchor rates each sampled set stays close to.
    pub around: Vec<f64>,
    /// Largest offset of a sampled rate from its anchor.
    pub radius: f64,
    /// Number of rate sets to draw.
    pub count: usize,
    /// Smallest allowed gap between adjacent rates in a set.
    pub separation: f64,
    /// Horizon for the sweep runs; unset means the scenario t_end.
    pub t_end: Option<f64>,
    /// Verdict tolerance for the sweep runs; unset means the scenario one.
    pub tolerance: Option<f64>,
}

impl Default for SweepOpts {
    fn default() -> SweepOpts {
        SweepOpts {
            around: vec![0.2, 0.4],
            radius: 0.02,
            count: 20,
            separation: 0.02,
            t_end: None,
            tolerance: None,
        }
    }
}

impl Scenario {
    /// Defaults, overlaid with the config file when given, then with
    /// key=value overrides. The per-species initial list is filled in
    /// afterwards so overrides that change the species count still get
    /// matching defaults.
    pub fn load(config: Option<&Path>, overrides: &[String]) -> Result<Scenario> {
        let mut sc = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("config {}", path.display()))?
            }
            None => Scenario::default(),
        };
        if !overrides.is_empty() {
            let mut doc = serde_json::to_value(&sc)?;
            for item in overrides {
                apply_override(&mut doc, item)?;
            }
            sc = serde_json::from_value(doc).context("after overrides")?;
        }
        Ok(sc)
    }

    pub fn fill_initial(&mut self) {
        if self.initial.is_empty() {
            self.initial = vec!["0.3".to_string(); self.diffusions.len()];
        }
    }

    /// Structural checks with field-path messages. Anything that needs a
    /// solve (positivity of a steady state, say) is left to the runners.
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            bail!("length: must be positive and finite, got {}", self.length);
        }
        if self.n_nodes < 3 {
            bail!("n_nodes: need at least 3 grid nodes, got {}", self.n_nodes);
        }
        let grid = Grid::new(self.length, self.n_nodes)?;
        let m = sample_expr(&self.habitat, grid, "habitat")?;
        if self.diffusions.is_empty() {
            bail!("diffusions: must not be empty");
        }
        for (i, d) in self.diffusions.iter().enumerate() {
            if !(*d > 0.0) || !d.is_finite() {
                bail!("diffusions[{i}]: must be positive and finite, got {d}");
            }
        }
        for (i, w) in self.diffusions.windows(2).enumerate() {
            if w[0] >= w[1] {
                bail!(
                    "diffusions[{}]: not strictly increasing ({} then {})",
                    i + 1,
                    w[0],
                    w[1]
                );
            }
        }
        if !self.initial.is_empty() && self.initial.len() != self.diffusions.len() {
            bail!(
                "initial: {} expressions for {} species",
                self.initial.len(),
                self.diffusions.len()
            );
        }
        for (i, src) in self.initial.iter().enumerate() {
            sample_expr(src, grid, &format!("initial[{i}]"))?;
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            bail!("dt: must be positive and finite, got {}", self.dt);
        }
        let cap = max_stable_dt(&m);
        if self.dt > cap {
            bail!("dt: {} exceeds the stability bound {cap} for this habitat", self.dt);
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            bail!("t_end: must be positive and finite, got {}", self.t_end);
        }
        if self.stride == 0 {
            bail!("stride: must be at least 1");
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            bail!("tolerance: must be positive and finite, got {}", self.tolerance);
        }
        if let Some(groups) = &self.partition {
            self.check_partition(groups)?;
        }
        if let Some(rates) = &self.block_rates {
            for (i, r) in rates.iter().enumerate() {
                if !(*r > 0.0) || !r.is_finite() {
                    bail!("block_rates[{i}]: must be positive and finite, got {r}");
                }
            }
            if let Some(groups) = &self.partition {
                if rates.len() != groups.len() {
                    bail!(
                        "block_rates: {} rates for {} blocks",
                        rates.len(),
                        groups.len()
                    );
                }
            }
        }
        if let Some(d) = self.bundle.d {
            if !(d > 0.0) || !d.is_finite() {
                bail!("bundle.d: must be positive and finite, got {d}");
            }
        }
        if !self.bundle.t0.is_finite() {
            bail!("bundle.t0: must be finite, got {}", self.bundle.t0);
        }
        if let Some(t1) = self.bundle.t1 {
            if !t1.is_finite() || t1 <= self.bundle.t0 {
                bail!("bundle.t1: must exceed bundle.t0 = {}, got {t1}", self.bundle.t0);
            }
        }
        if !(self.bundle.spinup >= 0.0) || !self.bundle.spinup.is_finite() {
            bail!("bundle.spinup: must be nonnegative, got {}", self.bundle.spinup);
        }
        if self.sweep.around.is_empty() {
            bail!("sweep.around: must not be empty");
        }
        for (i, a) in self.sweep.around.iter().enumerate() {
            if !(*a > 0.0) || !a.is_finite() {
                bail!("sweep.around[{i}]: must be positive and finite, got {a}");
            }
        }
        for (i, w) in self.sweep.around.windows(2).enumerate() {
            if w[0] >= w[1] {
                bail!(
                    "sweep.around[{}]: not strictly increasing ({} then {})",
                    i + 1,
                    w[0],
                    w[1]
                );
            }
        }
        if !(self.sweep.radius > 0.0) || !self.sweep.radius.is_finite() {
            bail!("sweep.radius: must be positive and finite, got {}", self.sweep.radius);
        }
        if self.sweep.count == 0 {
            bail!("sweep.count: must be at least 1");
        }
        if !(self.sweep.separation > 0.0) || !self.sweep.separation.is_finite() {
            bail!("sweep.separation: must be positive and finite, got {}", self.sweep.separation);
        }
        if let Some(t) = self.sweep.t_end {
            if !(t > 0.0) || !t.is_finite() {
                bail!("sweep.t_end: must be positive and finite, got {t}");
            }
        }
        if let Some(tol) = self.sweep.tolerance {
            if !(tol > 0.0) || !tol.is_finite() {
                bail!("sweep.tolerance: must be positive and finite, got {tol}");
            }
        }
        if self.workers == Some(0) {
            bail!("workers: must be at least 1");
        }
        Ok(())
    }

    fn check_partition(&self, groups: &[Vec<usize>]) -> Result<()> {
        let n = self.diffusions.len();
        if groups.is_empty() {
            bail!("partition: must not be empty");
        }
        let mut seen = vec![false; n];
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() {
                bail!("partition[{k}]: empty block");
            }
            for &i in g {
                if i >= n {
                    bail!("partition[{k}]: species index {i} out of range for {n} species");
                }
                if seen[i] {
                    bail!("partition[{k}]: species index {i} appears twice");
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            bail!("partition: species index {i} not covered");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.length, self.n_nodes)?)
    }

    /// Habitat profile frozen at t = 0, which is what the dynamics use.
    pub fn habitat_field(&self) -> Result<Field> {
        sample_expr(&self.habitat, self.grid()?, "habitat")
    }

    pub fn habitat_expr(&self) -> Result<Expr> {
        expr::parse(&self.habitat).map_err(|e| anyhow!("habitat: {e}"))
    }

    pub fn initial_fields(&self) -> Result<Vec<Field>> {
        let grid = self.grid()?;
        self.initial
            .iter()
            .enumerate()
            .map(|(i, src)| sample_expr(src, grid, &format!("initial[{i}]")))
            .collect()
    }
}

fn sample_expr(src: &str, grid: Grid, path: &str) -> Result<Field> {
    let e = expr::parse(src).map_err(|e| anyhow!("{path}: {e}"))?;
    let f = e.sample(grid, 0.0).map_err(|e| anyhow!("{path}: {e}"))?;
    if f.values().iter().any(|v| !v.is_finite()) {
        bail!("{path}: evaluates to a non-finite value on the grid");
    }
    Ok(f)
}

/// Applies one "key=value" override to the JSON form of the scenario.
/// Dotted keys reach into the bundle/sweep sections. The replacement is
/// coerced by the shape of the field it lands on, so `dt=0.001`,
/// `diffusions=0.1,0.3`, and `habitat=1+x` all do the expected thing.
fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{item}' is not of the form key=value"))?;
    let mut cur = &mut *doc;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .get_mut(*part)
            .ok_or_else(|| anyhow!("override '{path}': no such field '{part}'"))?;
    }
    let last = parts[parts.len() - 1];
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| anyhow!("override '{path}': '{}' is not a section", parts[parts.len() - 2]))?;
    let slot = obj
        .get_mut(last)
        .ok_or_else(|| anyhow!("override '{path}': no such field '{last}'"))?;
    *slot = coerce(slot, raw);
    Ok(())
}

fn coerce(slot: &Value, raw: &str) -> Value {
    match slot {
        Value::String(_) => Value::String(raw.to_string()),
        // an empty list gives no type hint; expressions are the only
        // string lists around, so strings are the safe reading there
        Value::Array(items) if items.is_empty() || items[0].is_string() => Value::Array(
            raw.split(',').map(|p| Value::String(p.to_string())).collect(),
        ),
        Value::Array(_) => parse_list(raw),
        _ => parse_scalar(raw),
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn parse_list(raw: &str) -> Value {
    if raw.trim_start().starts_with('[') {
        return parse_scalar(raw);
    }
    let items: Vec<Value> = raw.split(',').map(parse_scalar).collect();
    if items.iter().any(Value::is_string) {
        return Value::Array(
            raw.split(',').map(|p| Value::String(p.to_string())).collect(),
        );
    }
    Value::Array(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut sc = Scenario::default();
        sc.fill_initial();
        sc.validate().unwrap();
        assert_eq!(sc.initial.len(), 2);
    }

    #[test]
    fn overrides_replace_fields() {
        let mut doc = serde_json::to_value(Scenario::default()).unwrap();
        apply_override(&mut doc, "dt=0.002").unwrap();
        apply_override(&mut doc, "diffusions=0.1,0.3,0.9").unwrap();
        apply_override(&mut doc, "habitat=1+x").unwrap();
        apply_override(&mut doc, "bundle.t1=3.5").unwrap();
        apply_override(&mut doc, "workers=4").unwrap();
        apply_override(&mut doc, "partition=[[0,1],[2]]").unwrap();
        let sc: Scenario = serde_json::from_value(doc).unwrap();
        assert_eq!(sc.dt, 0.002);
        assert_eq!(sc.diffusions, vec![0.1, 0.3, 0.9]);
        assert_eq!(sc.habitat, "1+x");
        assert_eq!(sc.bundle.t1, Some(3.5));
        assert_eq!(sc.workers, Some(4));
        assert_eq!(sc.partition, Some(vec![vec![0, 1], vec![2]]));
    }

    #[test]
    fn override_on_string_list_keeps_strings() {
        let mut doc = serde_json::to_value(Scenario {
            initial: vec!["0.3".to_string(), "0.3".to_string()],
            ..Scenario::default()
        })
        .unwrap();
        apply_override(&mut doc, "initial=0.1,0.2*x").unwrap();
        let sc: Scenario = serde_json::from_value(doc).unwrap();
        assert_eq!(sc.initial, vec!["0.1".to_string(), "0.2*x".to_string()]);
    }

    #[test]
    fn unknown_override_is_rejected() {
        let mut doc = serde_json::to_value(Scenario::default()).unwrap();
        let err = apply_override(&mut doc, "dx=0.1").unwrap_err().to_string();
        assert!(err.contains("dx"), "{err}");
        let err = apply_override(&mut doc, "nonsense").unwrap_err().to_string();
        assert!(err.contains("key=value"), "{err}");
    }

    #[test]
    fn validation_names_the_failing_field() {
        let cases: Vec<(Scenario, &str)> = vec![
            (
                Scenario {
                    diffusions: vec![0.5, 0.2],
                    ..Scenario::default()
                },
                "diffusions",
            ),
            (
                Scenario {
                    habitat: "1 + cos(".to_string(),
                    ..Scenario::default()
                },
                "habitat",
            ),
            (
                Scenario {
                    dt: 0.5,
                    ..Scenario::default()
                },
                "dt",
            ),
            (
                Scenario {
                    partition: Some(vec![vec![0], vec![0, 1]]),
                    ..Scenario::default()
                },
                "partition",
            ),
            (
                Scenario {
                    initial: vec!["0.3".to_string()],
                    ..Scenario::default()
                },
                "initial",
            ),
        ];
        for (sc, field) in cases {
            let err = sc.validate().unwrap_err().to_string();
            assert!(err.contains(field), "expected '{field}' in '{err}'");
        }
    }

    #[test]
    fn partial_config_files_fill_from_defaults() {
        let sc: Scenario = serde_json::from_str(r#"{"n_nodes": 101, "t_end": 50.0}"#).unwrap();
        assert_eq!(sc.n_nodes, 101);
        assert_eq!(sc.t_end, 50.0);
        assert_eq!(sc.diffusions, vec![0.2, 0.4]);
        assert!(serde_json::from_str::<Scenario>(r#"{"dx": 1}"#).is_err());
    }
}
