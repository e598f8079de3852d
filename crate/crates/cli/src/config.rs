//! Run configuration: a TOML document with `problem`, `discretization`,
//! `ensemble`, `output`, `study` and `check` sections.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use youngfem::analysis::{
    AxisSpec, MomentKind, RefinementOptions, SpatialWeight, StudySetup, VarianceStudyOptions,
};
use youngfem::ensemble::{EnsembleConfig, PerturbationLaw};
use youngfem::expr::Expr;
use youngfem::mesh::l2_project;
use youngfem::nonlinearity::{GrowthParams, Nonlinearity, Sampler};
use youngfem::stepper::{CouplingMatrix, Forcing, Problem, SchemeConfig};
use youngfem::{FeField, Mesh1D};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub discretization: DiscretizationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub nonlinearity: String,
    #[serde(default)]
    pub allow_uncovered: bool,
    #[serde(default = "unit_interval")]
    pub domain: [f64; 2],
    pub t_final: f64,
    /// Rows of `B`; absent means `B = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub forcing: ForcingSpec,
    /// One expression in `x` per component.
    pub initial: Vec<String>,
    /// Exact solution in `x` and `t`, used for error tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthSection>,
}

fn unit_interval() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSection {
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "one")]
    pub c1: f64,
}

fn one() -> f64 {
    1.0
}

impl GrowthSection {
    pub fn params(&self) -> GrowthParams {
        GrowthParams::new(self.p.clone(), self.mu.clone(), self.c0, self.c1)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    Zero,
    Constant {
        values: Vec<f64>,
    },
    Expr {
        exprs: Vec<String>,
    },
    /// The constant vector `(-V, U, 0)`.
    BoundaryLayer {
        v: f64,
        u: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub elements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_iters")]
    pub max_newton_iters: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_true")]
    pub fallback_fixed_point: bool,
    #[serde(default = "default_fp_iters")]
    pub max_fixed_point_iters: usize,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_newton_iters() -> usize {
    50
}
fn default_damping() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_fp_iters() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// `uniform` or `gaussian`.
    #[serde(default = "default_law")]
    pub law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_steps: Option<Vec<usize>>,
}

fn default_law() -> String {
    "uniform".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into(), "text".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    #[serde(default = "one")]
    pub max_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    pub members: Vec<usize>,
    pub replicas: usize,
    /// `xi`, `one` or `flux`.
    #[serde(default = "default_moment")]
    pub moment: String,
    #[serde(default)]
    pub component: usize,
    /// `unit` or `linear`.
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default = "default_band")]
    pub slope_band: [f64; 2],
}

fn default_moment() -> String {
    "xi".into()
}
fn default_weight() -> String {
    "linear".into()
}
fn default_band() -> [f64; 2] {
    [-1.3, -0.7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_check_seed")]
    pub seed: u64,
    /// Pairs `[ξ, η]` for the monotonicity indicator.
    #[serde(default)]
    pub witnesses: Vec<[Vec<f64>; 2]>,
    /// Exponent for the `E_r` estimate of the flux.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub er_exponent: Option<f64>,
    /// Ball radius for the sampled Lipschitz constant of the flux.
    #[serde(default = "one")]
    pub lipschitz_radius: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            radii: default_radii(),
            samples: default_samples(),
            seed: default_check_seed(),
            witnesses: Vec::new(),
            er_exponent: None,
            lipschitz_radius: 1.0,
        }
    }
}

fn default_radii() -> Vec<f64> {
    Sampler::default().radii
}
fn default_samples() -> usize {
    Sampler::default().samples
}
fn default_check_seed() -> u64 {
    Sampler::default().seed
}

impl CheckSection {
    pub fn sampler(&self) -> Sampler {
        Sampler {
            radii: self.radii.clone(),
            samples: self.samples,
            seed: self.seed,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub allow_uncovered: bool,
}

/// A validated configuration together with the objects it describes.
pub struct Resolved {
    pub config: RunConfig,
    pub nonlinearity: Nonlinearity,
    pub coupling: CouplingMatrix,
    pub forcing: Forcing,
    pub initial: Vec<Expr>,
    pub exact: Option<Vec<Expr>>,
    pub scheme: SchemeConfig,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(out) = &ov.out {
            self.output.dir = Some(out.clone());
        }
        if let Some(seed) = ov.seed {
            if let Some(e) = &mut self.ensemble {
                e.seed = seed;
            }
        }
        if ov.allow_uncovered {
            self.problem.allow_uncovered = true;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section and builds the solver objects.
    pub fn resolve(&self) -> CliResult<Resolved> {
        let p = &self.problem;
        let mut warnings = Vec::new();
        let cfg_err = |msg: String| CliError::Config(msg);

        let growth = p.growth.as_ref().map(GrowthSection::params);
        let nonlinearity =
            Nonlinearity::from_name(&p.nonlinearity, growth.as_ref(), p.allow_uncovered)?;
        if let (Some(g), "power_law") = (&growth, p.nonlinearity.as_str()) {
            for v in g.violations() {
                warnings.push(format!("growth parameters outside the analysed class: {v}"));
            }
        }
        if !nonlinearity.theory_covered() {
            if !p.allow_uncovered {
                return Err(cfg_err(format!(
                    "nonlinearity '{}' has regimes outside the analysed framework; set allow_uncovered to run it",
                    nonlinearity.name()
                )));
            }
            warnings.push(format!(
                "nonlinearity '{}' is not covered by the convergence theory on part of gradient space",
                nonlinearity.name()
            ));
        }
        let m = nonlinearity.components();

        let [a, b] = p.domain;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(cfg_err(format!(
                "domain [{a}, {b}] is not a proper interval"
            )));
        }
        if !(p.t_final > 0.0) || !p.t_final.is_finite() {
            return Err(cfg_err(format!(
                "t_final must be positive, got {}",
                p.t_final
            )));
        }

        let coupling = match &p.coupling {
            None => CouplingMatrix::zero(m),
            Some(rows) => {
                let b = CouplingMatrix::from_rows(rows)?;
                if b.dim() != m {
                    return Err(cfg_err(format!(
                        "coupling is {0}x{0} but the system has {m} components",
                        b.dim()
                    )));
                }
                let report = b.positivity_check(1000, 0xb0b);
                if !report.passes {
                    warnings.push(format!(
                        "coupling fails the sampled positivity check (min Bv.v/|v|^2 = {})",
                        report.min_quadratic_form
                    ));
                }
                b
            }
        };

        let forcing = match &p.forcing {
            ForcingSpec::Zero => Forcing::Zero,
            ForcingSpec::Constant { values } => {
                if values.len() != m {
                    return Err(cfg_err(format!(
                        "constant forcing has {} values, expected {m}",
                        values.len()
                    )));
                }
                Forcing::Constant(values.clone())
            }
            ForcingSpec::Expr { exprs } => Forcing::from_exprs(parse_exprs(exprs, m, "forcing")?),
            ForcingSpec::BoundaryLayer { v, u } => {
                if m != 3 {
                    return Err(cfg_err(
                        "boundary_layer forcing needs three components".into(),
                    ));
                }
                Forcing::boundary_layer(*v, *u)
            }
        };

        let initial = parse_exprs(&p.initial, m, "initial")?;
        if let Some(e) = initial.iter().find(|e| !e.is_time_independent()) {
            return Err(cfg_err(format!("initial datum '{e}' must not depend on t")));
        }
        let exact = p
            .exact
            .as_ref()
            .map(|e| parse_exprs(e, m, "exact"))
            .transpose()?;

        let d = &self.discretization;
        if d.elements < 2 {
            return Err(cfg_err(format!(
                "need at least 2 elements, got {}",
                d.elements
            )));
        }
        let steps = match (d.steps, d.dt) {
            (Some(n), None) => n,
            (None, Some(dt)) => {
                if !(dt > 0.0) {
                    return Err(cfg_err(format!("dt must be positive, got {dt}")));
                }
                let n = (p.t_final / dt).round();
                if n < 1.0 || (n * dt - p.t_final).abs() > 1e-9 * p.t_final {
                    return Err(cfg_err(format!(
                        "dt = {dt} does not divide t_final = {}",
                        p.t_final
                    )));
                }
                n as usize
            }
            _ => {
                return Err(cfg_err(
                    "give exactly one of discretization.steps and discretization.dt".into(),
                ))
            }
        };
        let mut scheme = SchemeConfig::new(p.t_final, steps)?;
        scheme.newton_tol = d.newton_tol;
        scheme.max_newton_iters = d.max_newton_iters;
        scheme.damping = d.damping;
        scheme.fallback_fixed_point = d.fallback_fixed_point;
        scheme.max_fixed_point_iters = d.max_fixed_point_iters;
        scheme.validate()?;

        if let Some(e) = &self.ensemble {
            self.ensemble_config_from(e)?.validate(steps)?;
        }
        if let Some(s) = &self.study {
            if let Some(v) = &s.variance {
                variance_options(v, m)?;
            }
            if s.axes.is_empty() && s.variance.is_none() {
                return Err(cfg_err(
                    "study section needs axes or a variance block".into(),
                ));
            }
        }
        for f in &self.output.formats {
            if !["json", "csv", "text"].contains(&f.as_str()) {
                return Err(cfg_err(format!("unknown output format '{f}'")));
            }
        }
        if let Some(c) = &self.check {
            if c.radii.is_empty() || c.radii.iter().any(|r| !(*r > 0.0)) || c.samples == 0 {
                return Err(cfg_err("check needs positive radii and samples".into()));
            }
            for [xi, eta] in &c.witnesses {
                if xi.len() != m || eta.len() != m {
                    return Err(cfg_err(format!("witness vectors must have {m} entries")));
                }
            }
        }

        Ok(Resolved {
            config: self.clone(),
            nonlinearity,
            coupling,
            forcing,
            initial,
            exact,
            scheme,
            warnings,
        })
    }

    fn ensemble_config_from(&self, e: &EnsembleSection) -> CliResult<EnsembleConfig> {
        Ok(EnsembleConfig {
            members: e.members,
            epsilon: e.epsilon,
            seed: e.seed,
            law: e.law.parse::<PerturbationLaw>()?,
            record_steps: e.record_steps.clone(),
        })
    }

    pub fn formats(&self, name: &str) -> bool {
        self.output.formats.iter().any(|f| f == name)
    }
}

fn parse_exprs(sources: &[String], m: usize, what: &str) -> CliResult<Vec<Expr>> {
    if sources.len() != m {
        return Err(CliError::Config(format!(
            "{what} has {} expressions, expected one per component ({m})",
            sources.len()
        )));
    }
    sources
        .iter()
        .map(|s| Expr::parse(s).map_err(CliError::from))
        .collect()
}

pub fn variance_options(v: &VarianceSection, m: usize) -> CliResult<VarianceStudyOptions> {
    if v.component >= m {
        return Err(CliError::Config(format!(
            "moment component {} out of range",
            v.component
        )));
    }
    let moment = match v.moment.as_str() {
        "xi" => MomentKind::Xi {
            component: v.component,
        },
        "one" => MomentKind::One,
        "flux" => MomentKind::Flux {
            component: v.component,
        },
        other => {
            return Err(CliError::Config(format!(
                "unknown moment '{other}', expected xi, one or flux"
            )))
        }
    };
    let weight = match v.weight.as_str() {
        "unit" => SpatialWeight::Unit,
        "linear" => SpatialWeight::Linear,
        other => {
            return Err(CliError::Config(format!(
                "unknown weight '{other}', expected unit or linear"
            )))
        }
    };
    if v.replicas < 8 {
        return Err(CliError::Config(format!(
            "variance study needs at least 8 replicas, got {}",
            v.replicas
        )));
    }
    if v.members.is_empty() || v.members[0] == 0 || v.members.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config(
            "variance member counts must be positive and strictly increasing".into(),
        ));
    }
    Ok(VarianceStudyOptions {
        members: v.members.clone(),
        replicas: v.replicas,
        moment,
        weight,
        slope_band: (v.slope_band[0], v.slope_band[1]),
    })
}

impl Resolved {
    pub fn components(&self) -> usize {
        self.nonlinearity.components()
    }

    pub fn mesh(&self) -> CliResult<Arc<Mesh1D>> {
        let [a, b] = self.config.problem.domain;
        Ok(Arc::new(Mesh1D::uniform(
            self.config.discretization.elements,
            (a, b),
        )?))
    }

    pub fn problem(&self) -> CliResult<Problem> {
        Ok(Problem::new(
            self.mesh()?,
            self.nonlinearity.clone(),
            self.coupling.clone(),
            self.forcing.clone(),
        )?)
    }

    pub fn initial_field(&self, problem: &Problem) -> CliResult<FeField> {
        let exprs = self.initial.clone();
        Ok(l2_project(
            problem.mesh.clone(),
            problem.components(),
            move |x, out| {
                for (o, e) in out.iter_mut().zip(&exprs) {
                    *o = e.eval(x, 0.0);
                }
            },
        )?)
    }

    /// Only called after `resolve`, which has already parsed the law.
    pub fn ensemble_config(&self) -> Option<EnsembleConfig> {
        self.config
            .ensemble
            .as_ref()
            .map(|e| self.config.ensemble_config_from(e).expect("validated"))
    }

    pub fn study_setup(&self) -> StudySetup {
        let exprs = self.initial.clone();
        let [a, b] = self.config.problem.domain;
        StudySetup {
            name: self.nonlinearity.name().to_string(),
            nonlinearity: self.nonlinearity.clone(),
            coupling: self.coupling.clone(),
            forcing: self.forcing.clone(),
            initial: Arc::new(move |x, out: &mut [f64]| {
                for (o, e) in out.iter_mut().zip(&exprs) {
                    *o = e.eval(x, 0.0);
                }
            }),
            domain: (a, b),
            elements: self.config.discretization.elements,
            t_final: self.scheme.t_final(),
            steps: self.scheme.steps,
            newton_tol: self.scheme.newton_tol,
            ensemble: self
                .ensemble_config()
                .unwrap_or_else(|| EnsembleConfig::new(1, 0.0, 0)),
        }
    }

    pub fn refinement_options(&self) -> RefinementOptions {
        RefinementOptions {
            max_ratio: self.config.study.as_ref().map_or(1.0, |s| s.max_ratio),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
[problem]
nonlinearity = "power_law"
t_final = 0.1
initial = ["sin(pi*x)"]
exact = ["exp(-pi^2*t)*sin(pi*x)"]

[problem.growth]
p = [2.0]
mu = [0.0]

[discretization]
elements = 16
dt = 0.01
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml(HEAT).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.scheme.steps, 10);
        assert!(r.warnings.is_empty());
        assert!(r.forcing.is_zero());
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_structural_violations_unless_allowed() {
        let bad = HEAT.replace("p = [2.0]", "p = [1.5]");
        let mut cfg = RunConfig::from_toml(&bad).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Config(_))));
        cfg.apply(&Overrides {
            allow_uncovered: true,
            ..Default::default()
        });
        let r = cfg.resolve().unwrap();
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn rejects_malformed_input() {
        for (from, to) in [
            ("dt = 0.01", "dt = 0.03"),
            ("dt = 0.01", "dt = 0.01\nsteps = 10"),
            ("initial = [\"sin(pi*x)\"]", "initial = [\"sin(pi*\"]"),
            ("initial = [\"sin(pi*x)\"]", "initial = [\"t\"]"),
            ("elements = 16", "elements = 1"),
            ("nonlinearity = \"power_law\"", "nonlinearity = \"unknown\""),
            ("t_final = 0.1", "t_final = 0.1\nbogus = 1"),
        ] {
            let text = HEAT.replace(from, to);
            let err = RunConfig::from_toml(&text).and_then(|c| c.resolve().map(|_| ()));
            assert!(matches!(err, Err(CliError::Config(_))), "{to}");
        }
    }

    #[test]
    fn becu_requires_allow_uncovered() {
        let text = r#"
[problem]
nonlinearity = "becu"
t_final = 0.01
coupling = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
initial = ["sin(pi*x)", "0", "0"]
forcing = { kind = "boundary_layer", v = 1.0, u = 1.0 }

[discretization]
elements = 8
steps = 2
"#;
        let mut cfg = RunConfig::from_toml(text).unwrap();
        assert!(cfg.resolve().is_err());
        cfg.problem.allow_uncovered = true;
        let r = cfg.resolve().unwrap();
        assert_eq!(r.warnings.len(), 1);
    }
}
