//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::carleman::{CarlemanOptions, M2Sign, SweepSetup};
use crate::error::{LabError, Result};
use crate::experiment::{project_admissible, Setup, Shape};
use crate::grid::{Face, Grid, ScalarField};
use crate::inverse::{InverseConfig, StepRule};
use crate::stability::Member;
use crate::weights::{build_weights, WeightParams, WeightSet};

/// Scalar expression over the node coordinates, or nodal values read from a file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Expr {
    Const(f64),
    X,
    Y,
    Sin(Box<Expr>),
    /// `coeffs[0] + coeffs[1] of + coeffs[2] of^2 + ...`
    #[serde(alias = "polynomial")]
    Poly { of: Box<Expr>, coeffs: Vec<f64> },
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    /// One value per node, in node order; a non-numeric first line is a header.
    Csv(PathBuf),
}

impl Expr {
    /// Nodal values on `grid`; relative file paths resolve against `base_dir`.
    pub fn eval(&self, grid: &Grid, base_dir: &Path) -> Result<ScalarField> {
        let combine = |terms: &[Expr], start: f64, op: fn(f64, f64) -> f64| -> Result<ScalarField> {
            let mut acc = vec![start; grid.num_nodes()];
            for t in terms {
                for (a, v) in acc.iter_mut().zip(t.eval(grid, base_dir)?) {
                    *a = op(*a, v);
                }
            }
            Ok(acc)
        };
        Ok(match self {
            Expr::Const(v) => vec![*v; grid.num_nodes()],
            Expr::X => grid.sample(|x| x[0]),
            Expr::Y => grid.sample(|x| x[1]),
            Expr::Sin(inner) => inner.eval(grid, base_dir)?.into_iter().map(f64::sin).collect(),
            Expr::Poly { of, coeffs } => of
                .eval(grid, base_dir)?
                .into_iter()
                .map(|x| coeffs.iter().rev().fold(0.0, |acc, a| acc * x + a))
                .collect(),
            Expr::Add(terms) => combine(terms, 0.0, |a, b| a + b)?,
            Expr::Mul(terms) => combine(terms, 1.0, |a, b| a * b)?,
            Expr::Csv(path) => read_nodal_csv(&base_dir.join(path), grid)?,
        })
    }
}

fn read_nodal_csv(path: &Path, grid: &Grid) -> Result<ScalarField> {
    let text = fs::read_to_string(path).map_err(|e| {
        LabError::Config(format!("cannot read nodal values from {}: {e}", path.display()))
    })?;
    let mut values = Vec::new();
    for (k, line) in text.lines().map(str::trim).enumerate() {
        if line.is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if k == 0 => {}
            Err(_) => {
                return Err(LabError::Config(format!(
                    "{}: line {} is not a number",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    if values.len() != grid.num_nodes() {
        return Err(LabError::Config(format!(
            "{} holds {} values, the grid has {} nodes",
            path.display(),
            values.len(),
            grid.num_nodes()
        )));
    }
    Ok(values)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub lambda: Vec<f64>,
    pub s: Vec<f64>,
    pub m_weight: f64,
    /// Anchor point `x0` of the spatial weight, one entry per dimension.
    pub x0: Vec<f64>,
    /// `(s, lambda)` used by the single-point verifications.
    pub point: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    /// The reference conductivity `c~`, also the prior of the reconstruction.
    pub reference: Expr,
    /// The perturbed conductivity `c`, also the truth of the reconstruction.
    pub perturbed: Expr,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanConfig {
    pub tests: usize,
    #[serde(default)]
    pub sign: SignChoice,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignChoice {
    #[default]
    Plus,
    Minus,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub shapes: Vec<String>,
    pub amplitudes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepChoice {
    Long,
    Short,
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSettings {
    pub alpha: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub c_min: f64,
    pub smoothing: f64,
    pub metric_order: usize,
    pub step_rule: StepChoice,
    /// Also perturb the interior snapshots, not only the flux trace.
    #[serde(default)]
    pub noisy_snapshots: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n: usize,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Time steps of the solve on `[0, T]`.
    pub m: usize,
    pub observed: Vec<Face>,
    pub weights: WeightConfig,
    pub coefficients: CoefficientConfig,
    pub carleman: CarlemanConfig,
    pub stability: StabilityConfig,
    pub inverse: InverseSettings,
    pub sigma: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Directory that relative paths inside the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const SEED_VAR: &str = "CARLEMAN_LAB_SEED";

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file, then applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = ExperimentConfig::from_json(&text, base)?;
        if let Ok(raw) = std::env::var(SEED_VAR) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| LabError::Config(format!("{SEED_VAR} = {raw:?} is not a u64")))?;
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Config(msg));
        if self.observed.is_empty() {
            return bad("observed must name at least one face".into());
        }
        let w = &self.weights;
        for (name, list) in [("lambda", &w.lambda), ("s", &w.s)] {
            if list.is_empty() || list.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad(format!("weights.{name} must be a nonempty list of positive numbers"));
            }
        }
        if w.point.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("weights.point must hold positive (s, lambda)".into());
        }
        if w.x0.len() != self.dim {
            return bad(format!(
                "weights.x0 has {} entries for a {}-dimensional domain",
                w.x0.len(),
                self.dim
            ));
        }
        if self.carleman.tests == 0 {
            return bad("carleman.tests must be at least 1".into());
        }
        if self.stability.amplitudes.is_empty() || self.stability.shapes.is_empty() {
            return bad("stability needs at least one shape and one amplitude".into());
        }
        if self.stability.amplitudes.iter().any(|a| !a.is_finite()) {
            return bad("stability amplitudes must be finite".into());
        }
        self.shapes()?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be a nonnegative number", self.sigma));
        }
        // grid and time axes carry their own invariants
        let setup = self.setup()?;
        self.perturbed(&setup.grid)?;
        self.inverse_config(self.reference(&setup.grid)?)
            .validate(&setup.grid)
    }

    pub fn setup(&self) -> Result<Setup> {
        Setup::new(self.dim, self.n, &self.observed, self.t0, self.t_end, self.m)
    }

    pub fn weights_at(&self, setup: &Setup, s: f64, lambda: f64) -> Result<WeightSet> {
        build_weights(
            &setup.grid,
            &setup.window,
            WeightParams::new(lambda, s, self.weights.m_weight, self.weights.x0.clone()),
        )
    }

    /// Weights at the configured single verification point.
    pub fn point_weights(&self, setup: &Setup) -> Result<WeightSet> {
        let [s, lambda] = self.weights.point;
        self.weights_at(setup, s, lambda)
    }

    pub fn sweep_setup(&self) -> SweepSetup {
        let sign = match self.carleman.sign {
            SignChoice::Plus => M2Sign::Plus,
            SignChoice::Minus => M2Sign::Minus,
        };
        SweepSetup {
            m: self.weights.m_weight,
            anchor: self.weights.x0.clone(),
            options: CarlemanOptions { sign },
        }
    }

    pub fn reference(&self, grid: &Grid) -> Result<ScalarField> {
        self.coefficients.reference.eval(grid, &self.base_dir)
    }

    /// The perturbed conductivity with `c - c~` projected onto the admissible set.
    pub fn perturbed(&self, grid: &Grid) -> Result<ScalarField> {
        let reference = self.reference(grid)?;
        let raw = self.coefficients.perturbed.eval(grid, &self.base_dir)?;
        let mut gamma: Vec<f64> = raw.iter().zip(&reference).map(|(a, b)| a - b).collect();
        project_admissible(grid, &mut gamma);
        Ok(reference.iter().zip(gamma).map(|(a, b)| a + b).collect())
    }

    pub fn shapes(&self) -> Result<Vec<Shape>> {
        self.stability
            .shapes
            .iter()
            .map(|name| {
                Shape::FAMILY
                    .into_iter()
                    .find(|s| s.name() == *name)
                    .ok_or_else(|| LabError::Config(format!("unknown perturbation shape {name:?}")))
            })
            .collect()
    }

    pub fn family(&self) -> Result<Vec<Member>> {
        let mut out = Vec::new();
        for shape in self.shapes()? {
            for &eps in &self.stability.amplitudes {
                out.push(Member { shape, eps });
            }
        }
        Ok(out)
    }

    pub fn inverse_config(&self, prior: ScalarField) -> InverseConfig {
        let s = &self.inverse;
        let mut cfg = InverseConfig::new(prior);
        cfg.alpha = s.alpha;
        cfg.max_iter = s.max_iter;
        cfg.grad_tol = s.grad_tol;
        cfg.c_min = s.c_min;
        cfg.smoothing = s.smoothing;
        cfg.metric_order = s.metric_order;
        cfg.step_rule = match s.step_rule {
            StepChoice::Long => StepRule::Long,
            StepChoice::Short => StepRule::Short,
            StepChoice::Alternating => StepRule::Alternating,
        };
        cfg.sigma = self.sigma;
        cfg.seed = self.seed;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../config/default.json");

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text, Path::new("."))
    }

    fn edited(edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT).unwrap();
        edit(&mut v);
        v.to_string()
    }

    #[test]
    fn default_file_matches_the_reference_experiment() {
        let cfg = parse(DEFAULT).unwrap();
        assert_eq!((cfg.dim, cfg.n, cfg.m, cfg.seed), (1, 32, 128, 42));
        assert_eq!((cfg.t0, cfg.t_end), (0.5, 2.0));
        assert_eq!(cfg.weights.lambda, vec![1.0, 2.0]);
        assert_eq!(cfg.weights.s, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!((cfg.weights.m_weight, cfg.weights.x0.clone()), (2.0, vec![-1.0]));
        assert_eq!(cfg.family().unwrap().len(), 12);
        let setup = cfg.setup().unwrap();
        let c = cfg.perturbed(&setup.grid).unwrap();
        let gamma = crate::experiment::perturbation(&setup.grid, 0.05, Shape::Plain);
        for (ci, gi) in c.iter().zip(&gamma) {
            assert!((ci - 1.0 - gi).abs() < 1e-15);
        }
        assert_eq!(cfg.reference(&setup.grid).unwrap(), vec![1.0; 33]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = edited(|v| v["weights"]["extra"] = 1.into());
        assert!(matches!(parse(&text), Err(LabError::Json(_))));
        let text = edited(|v| v["surprise"] = true.into());
        assert!(matches!(parse(&text), Err(LabError::Json(_))));
    }

    #[test]
    fn odd_step_count_names_the_time_grid() {
        let err = parse(&edited(|v| v["m"] = 127.into())).unwrap_err();
        assert!(matches!(err, LabError::TimeGrid(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let edits: [fn(&mut serde_json::Value); 5] = [
            |v| v["weights"]["s"] = serde_json::json!([]),
            |v| v["weights"]["x0"] = serde_json::json!([-1.0, 0.5]),
            |v| v["carleman"]["tests"] = 0.into(),
            |v| v["stability"]["shapes"] = serde_json::json!(["square"]),
            |v| v["sigma"] = (-1.0).into(),
        ];
        for edit in edits {
            let err = parse(&edited(edit)).unwrap_err();
            assert!(matches!(err, LabError::Config(_)), "{err}");
        }
    }

    #[test]
    fn expressions_evaluate_pointwise() {
        let grid = crate::grid::build_grid(2, 4, &[Face::East]).unwrap();
        let expr: Expr = serde_json::from_str(
            r#"{"add": [{"const": 2.0}, {"mul": ["x", "y"]}, {"sin": {"poly": {"of": "x", "coeffs": [0.0, 3.0]}}}]}"#,
        )
        .unwrap();
        let values = expr.eval(&grid, Path::new(".")).unwrap();
        let expected = grid.sample(|p| 2.0 + p[0] * p[1] + (3.0 * p[0]).sin());
        assert_eq!(values, expected);
    }

    #[test]
    fn nodal_values_come_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let grid = crate::grid::build_grid(1, 4, &[Face::East]).unwrap();
        fs::write(dir.path().join("c.csv"), "node,c\n0,1\n1,1.5\n2,2\n3,1.5\n4,1\n").unwrap();
        let expr = Expr::Csv("c.csv".into());
        assert_eq!(expr.eval(&grid, dir.path()).unwrap(), vec![1.0, 1.5, 2.0, 1.5, 1.0]);
        fs::write(dir.path().join("short.csv"), "1\n2\n").unwrap();
        assert!(Expr::Csv("short.csv".into()).eval(&grid, dir.path()).is_err());
    }
}
