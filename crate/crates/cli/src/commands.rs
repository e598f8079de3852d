//! Subcommand implementations. Every command computes all of its artifacts in
//! memory first and only then writes them, so a failure leaves no partial output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use youngfem::analysis::{
    energy_ledger, interpolant_gap, law_description, mc_variance_study, refinement_study,
    EnergyLedger, InterpolantGap, StudyReport,
};
use youngfem::ensemble::{gradient_consistency, run_ensemble, ConsistencyReport, MeasureExport};
use youngfem::mesh::l2_error;
use youngfem::nonlinearity::{
    check_growth, estimate_er_norm, estimate_lipschitz, monotonicity_indicator, ErEstimate,
    GrowthParams, GrowthReport, Nonlinearity,
};
use youngfem::stepper::{max_stable_dt_advisory, run_trajectory, DtAdvisory};

use crate::config::{variance_options, CheckSection, GrowthSection, Overrides, RunConfig};
use crate::error::{CliError, CliResult};

pub const TOOL_NAME: &str = "youngfem";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_OUT_DIR: &str = "youngfem-out";

/// Relative tolerance of the gradient-consistency gate.
pub const CONSISTENCY_TOL: f64 = 1e-12;
/// Relative tolerance of the interpolant-gap identity.
pub const GAP_TOL: f64 = 1e-12;
/// Allowed deviation of the total measure mass from one.
pub const MASS_TOL: f64 = 1e-15;

/// Result of a successful command invocation.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub pass: bool,
    pub summary: String,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// The effective configuration (after command-line overrides) as TOML.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_law: Option<String>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub verdict: String,
}

/// Named in-memory files awaiting a single write pass.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_with<F>(&mut self, name: &str, f: F)
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory cannot fail");
        self.add(name, buf);
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
        s.push('\n');
        self.add(name, s.into_bytes());
    }

    fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    fn finish(mut self, dir: &Path, manifest: Manifest) -> CliResult<Vec<String>> {
        let mut files = manifest.files.clone();
        self.add_json("manifest.json", &manifest);
        files.push("manifest.json".into());
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes)
                .map_err(|e| CliError::io(path.display().to_string(), e))?;
        }
        Ok(files)
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn out_dir(config: Option<&RunConfig>, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| DEFAULT_OUT_DIR.to_string())
        .into()
}

/// Configuration echo without the output directory, so that runs into
/// different directories produce identical manifests.
fn config_echo(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.output.dir = None;
    c.to_toml()
}

fn manifest(
    command: &str,
    config: Option<&RunConfig>,
    seed: Option<u64>,
    warnings: &[String],
) -> Manifest {
    Manifest {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        command: command.into(),
        seed,
        config: config.map(config_echo),
        perturbation_law: None,
        warnings: warnings.to_vec(),
        files: Vec::new(),
        verdict: String::new(),
    }
}

fn prepare(config: &RunConfig, ov: &Overrides) -> CliResult<(RunConfig, crate::config::Resolved)> {
    let mut config = config.clone();
    config.apply(ov);
    let resolved = config.resolve()?;
    Ok((config, resolved))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub ledger: EnergyLedger,
    pub interpolant_gap: InterpolantGap,
    pub gap_relative_difference: f64,
    pub gap_tolerance: f64,
    pub max_step_residual: f64,
    /// Steps × elements at which a gradient left the analysed regime.
    pub uncovered_visits: usize,
    pub verdict: String,
}

fn energy_text(report: &EnergyReport) -> String {
    let mut s = String::new();
    let l = &report.ledger;
    let _ = writeln!(s, "initial kinetic energy: {}", l.initial_kinetic);
    let _ = writeln!(s, "slack: {}", l.slack_formula);
    let _ = writeln!(
        s,
        "{:>6}  {:>14}  {:>14}  {:>14}  {:>14}  {:>14}  {:>14}  {:>10}",
        "step", "kinetic", "dissipation", "work", "coupling", "lhs", "rhs", "slack"
    );
    for r in &l.rows {
        let _ = writeln!(
            s,
            "{:>6}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>14.6e}  {:>10.2e}",
            r.step, r.kinetic, r.dissipation, r.work, r.coupling, r.lhs, r.rhs, r.slack
        );
    }
    let _ = writeln!(s, "worst excess (lhs - rhs - slack): {:e}", l.worst_excess);
    let _ = writeln!(s, "dissipation nonnegative: {}", l.dissipation_nonnegative);
    let _ = writeln!(
        s,
        "interpolant gap: quadrature {:e}, closed form {:e}, relative difference {:e}",
        report.interpolant_gap.quadrature,
        report.interpolant_gap.closed_form,
        report.gap_relative_difference
    );
    let _ = writeln!(s, "max step residual: {:e}", report.max_step_residual);
    let _ = writeln!(s, "uncovered gradient visits: {}", report.uncovered_visits);
    let _ = writeln!(s, "verdict: {}", report.verdict);
    s
}

/// Single trajectory with energy ledger and, when an exact solution is given, an error table.
pub fn cmd_run(config: &RunConfig, ov: &Overrides) -> CliResult<Outcome> {
    let (config, r) = prepare(config, ov)?;
    let mut warnings = r.warnings.clone();
    let problem = r.problem()?;
    let u0 = r.initial_field(&problem)?;
    let traj = run_trajectory(&problem, &u0, &r.scheme)?;
    let ledger = energy_ledger(&traj, &problem)?;
    let gap = interpolant_gap(&traj)?;
    let uncovered = traj.uncovered_visits(&problem.nonlinearity);
    if uncovered > 0 {
        warnings.push(format!(
            "{uncovered} element-step gradients fell outside the analysed regime"
        ));
    }
    let pass = ledger.pass && gap.relative_difference() <= GAP_TOL;
    let report = EnergyReport {
        gap_relative_difference: gap.relative_difference(),
        gap_tolerance: GAP_TOL,
        interpolant_gap: gap,
        max_step_residual: traj.max_residual(),
        uncovered_visits: uncovered,
        verdict: verdict(pass).into(),
        ledger,
    };

    let mut art = Artifacts::default();
    if config.formats("csv") {
        art.add_with("trajectory.csv", |w| traj.write_csv(w));
    }
    if config.formats("json") {
        art.add_json("energy.json", &report);
    }
    if config.formats("text") {
        art.add("energy.txt", energy_text(&report).into_bytes());
    }
    let mut summary = format!(
        "energy {} (worst excess {:e}), interpolant gap rel. diff {:e}",
        report.verdict, report.ledger.worst_excess, report.gap_relative_difference
    );
    if let Some(exact) = &r.exact {
        let mut table = String::from("step,t,l2_error\n");
        let mut last = 0.0;
        for (i, snap) in traj.snapshots().iter().enumerate() {
            let t = r.scheme.time(i);
            last = l2_error(snap, 4, |x, out| {
                for (o, e) in out.iter_mut().zip(exact) {
                    *o = e.eval(x, t);
                }
            });
            let _ = writeln!(table, "{i},{t},{last}");
        }
        art.add("errors.csv", table.into_bytes());
        let _ = write!(summary, ", final L2 error {last:e}");
    }

    let dir = out_dir(Some(&config), ov);
    let mut m = manifest("run", Some(&config), None, &warnings);
    m.files = art.names();
    m.verdict = verdict(pass).into();
    let files = art.finish(&dir, m)?;
    Ok(Outcome {
        dir,
        pass,
        summary,
        warnings,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub gradient: ConsistencyReport,
    pub relative_tolerance: f64,
    /// Largest `|Σ weights − 1|` over recorded sites.
    pub max_mass_defect: f64,
    pub mass_tolerance: f64,
    pub max_step_residual: f64,
    pub verdict: String,
}

/// Ensemble run producing the empirical measure, its moments and the mean field.
pub fn cmd_ensemble(config: &RunConfig, ov: &Overrides) -> CliResult<Outcome> {
    let (config, r) = prepare(config, ov)?;
    let ens = r.ensemble_config().ok_or_else(|| {
        CliError::Config("the ensemble command needs an [ensemble] section".into())
    })?;
    let problem = r.problem()?;
    let u0 = r.initial_field(&problem)?;
    let result = run_ensemble(&problem, &u0, &r.scheme, &ens)?;
    let measure = result.measure();
    let gradient = gradient_consistency(&result);
    let mut mass_defect = 0.0_f64;
    for &s in measure.record_steps() {
        for e in 0..measure.element_count() {
            mass_defect = mass_defect.max((measure.total_mass(s, e)? - 1.0).abs());
        }
    }
    let pass = gradient.passes(CONSISTENCY_TOL) && mass_defect <= MASS_TOL;
    let summary_report = ConsistencySummary {
        gradient,
        relative_tolerance: CONSISTENCY_TOL,
        max_mass_defect: mass_defect,
        mass_tolerance: MASS_TOL,
        max_step_residual: result.max_residual(),
        verdict: verdict(pass).into(),
    };

    let mut art = Artifacts::default();
    let mut measures = serde_json::to_vec(&result.measure_export()).expect("measure serializes");
    measures.push(b'\n');
    art.add("measures.json", measures);
    art.add_with("moments.csv", |w| result.write_moments_csv(w));
    art.add_with("mean.csv", |w| result.write_mean_csv(w));
    art.add_json("consistency.json", &summary_report);

    let dir = out_dir(Some(&config), ov);
    let mut m = manifest("ensemble", Some(&config), Some(ens.seed), &r.warnings);
    m.perturbation_law = Some(format!("{}: {}", ens.law, law_description(ens.law)));
    m.files = art.names();
    m.verdict = verdict(pass).into();
    let files = art.finish(&dir, m)?;
    Ok(Outcome {
        dir,
        pass,
        summary: format!(
            "{} members, consistency {:e} (max atom {:e}), mass defect {:e}: {}",
            ens.members,
            gradient.max_discrepancy,
            gradient.max_atom,
            mass_defect,
            verdict(pass)
        ),
        warnings: r.warnings,
        files,
    })
}

/// Monte-Carlo variance study and/or refinement study.
pub fn cmd_study(config: &RunConfig, ov: &Overrides) -> CliResult<Outcome> {
    let (config, r) = prepare(config, ov)?;
    let study = config
        .study
        .clone()
        .ok_or_else(|| CliError::Config("the study command needs a [study] section".into()))?;
    let setup = r.study_setup();
    let mut reports: Vec<(String, StudyReport)> = Vec::new();
    if let Some(v) = &study.variance {
        let opts = variance_options(v, r.components())?;
        reports.push(("variance".into(), mc_variance_study(&setup, &opts)?));
    }
    if !study.axes.is_empty() {
        for rep in refinement_study(&setup, &study.axes, &r.refinement_options())? {
            reports.push((format!("refinement_{}", rep.axis.name()), rep));
        }
    }
    let pass = reports.iter().all(|(_, rep)| rep.pass);

    let mut art = Artifacts::default();
    let mut summary = String::new();
    for (name, rep) in &reports {
        if config.formats("json") {
            let mut s = rep.to_json();
            s.push('\n');
            art.add(&format!("{name}.json"), s.into_bytes());
        }
        if config.formats("text") {
            art.add(&format!("{name}.txt"), rep.to_text().into_bytes());
        }
        if config.formats("csv") {
            art.add_with(&format!("{name}.csv"), |w| rep.write_csv(w));
        }
        if !summary.is_empty() {
            summary.push_str("; ");
        }
        let _ = write!(summary, "{name}: {}", verdict(rep.pass));
        if let Some(slope) = rep.fitted_slope {
            let _ = write!(summary, " (slope {slope:.4})");
        }
    }

    let dir = out_dir(Some(&config), ov);
    let mut m = manifest(
        "study",
        Some(&config),
        Some(setup.ensemble.seed),
        &r.warnings,
    );
    m.perturbation_law = Some(format!(
        "{}: {}",
        setup.ensemble.law,
        law_description(setup.ensemble.law)
    ));
    m.files = art.names();
    m.verdict = verdict(pass).into();
    let files = art.finish(&dir, m)?;
    Ok(Outcome {
        dir,
        pass,
        summary,
        warnings: r.warnings,
        files,
    })
}

/// What `check` inspects; built from a config file, a registry name, or both.
#[derive(Debug, Clone)]
pub struct CheckRequest {
    pub nonlinearity: String,
    pub growth: Option<GrowthSection>,
    pub check: CheckSection,
    pub allow_uncovered: bool,
    /// Mesh size for the step-size advisory, if a discretization is known.
    pub h: Option<f64>,
    pub config: Option<RunConfig>,
}

impl CheckRequest {
    pub fn from_config(config: &RunConfig) -> Self {
        let [a, b] = config.problem.domain;
        Self {
            nonlinearity: config.problem.nonlinearity.clone(),
            growth: config.problem.growth.clone(),
            check: config.check.clone().unwrap_or_default(),
            allow_uncovered: config.problem.allow_uncovered,
            h: Some((b - a) / config.discretization.elements as f64),
            config: Some(config.clone()),
        }
    }

    pub fn from_name(name: &str) -> Self {
        Self {
            nonlinearity: name.to_string(),
            growth: None,
            check: CheckSection::default(),
            allow_uncovered: false,
            h: None,
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessResult {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub indicator: f64,
    pub non_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub nonlinearity: String,
    pub theory_covered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_params: Option<GrowthParams>,
    pub structural_violations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthReport>,
    pub witnesses: Vec<WitnessResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub er_norm: Option<ErEstimate>,
    pub lipschitz_radius: f64,
    pub lipschitz_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory: Option<DtAdvisory>,
    pub verdict: String,
}

/// Non-monotonicity witnesses for the stability function of the boundary-layer model.
pub fn becu_witnesses() -> Vec<[Vec<f64>; 2]> {
    vec![
        [vec![0.035, 0.0, -0.01], vec![0.05, 0.0, 0.0]],
        [vec![-0.2, -0.1, 0.2], vec![-0.1, 0.0, 0.5]],
    ]
}

/// Growth constants of the three-component example, `K/Σ ∈ [1/√3, 1]`.
pub fn example2_growth() -> GrowthParams {
    GrowthParams::new(vec![3.0, 3.0, 2.5], vec![0.0; 3], 1.0 / 3f64.sqrt(), 1.0)
}

pub fn check_report(req: &CheckRequest) -> CliResult<CheckReport> {
    let params = req.growth.as_ref().map(GrowthSection::params);
    let nl = Nonlinearity::from_name(&req.nonlinearity, params.as_ref(), req.allow_uncovered)?;
    let params = params
        .or_else(|| nl.growth_claim().cloned())
        .or_else(|| (nl.name() == "example2").then(example2_growth));
    let sampler = req.check.sampler();
    let dim = nl.components() * nl.dim();

    let structural_violations = params
        .as_ref()
        .map(GrowthParams::violations)
        .unwrap_or_default();
    let growth = params.as_ref().map(|p| check_growth(&nl, p, &sampler));

    let pairs = if req.check.witnesses.is_empty() && nl.name() == "becu" {
        becu_witnesses()
    } else {
        req.check.witnesses.clone()
    };
    let mut witnesses = Vec::new();
    for [xi, eta] in pairs {
        if xi.len() != dim || eta.len() != dim {
            return Err(CliError::Config(format!(
                "witness vectors must have {dim} entries"
            )));
        }
        let indicator = monotonicity_indicator(&nl, &xi, &eta)?;
        witnesses.push(WitnessResult {
            xi,
            eta,
            indicator,
            non_monotone: indicator < 0.0,
        });
    }

    let exponent = req
        .check
        .er_exponent
        .or_else(|| params.as_ref().map(|p| p.q() - 1.0).filter(|r| *r > 0.0));
    let er_norm = match exponent {
        Some(r) => {
            let per_radius = (sampler.samples / sampler.radii.len()).max(1);
            Some(estimate_er_norm(
                |a| nl.a_eval(a).unwrap_or_else(|_| vec![f64::NAN; a.len()]),
                dim,
                r,
                &sampler.radii,
                per_radius,
                sampler.seed,
            )?)
        }
        None => None,
    };

    let lipschitz = estimate_lipschitz(
        &nl,
        req.check.lipschitz_radius,
        sampler.samples,
        sampler.seed,
    );
    let advisory = req.h.map(|h| max_stable_dt_advisory(h, lipschitz));
    let pass = growth.as_ref().is_none_or(|g| g.violations() == 0);
    Ok(CheckReport {
        nonlinearity: nl.name().to_string(),
        theory_covered: nl.theory_covered(),
        growth_params: params,
        structural_violations,
        growth,
        witnesses,
        er_norm,
        lipschitz_radius: req.check.lipschitz_radius,
        lipschitz_estimate: lipschitz,
        advisory,
        verdict: verdict(pass).into(),
    })
}

fn check_text(rep: &CheckReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "nonlinearity: {} (covered by theory: {})",
        rep.nonlinearity, rep.theory_covered
    );
    if let Some(p) = &rep.growth_params {
        let _ = writeln!(
            s,
            "growth parameters: p = {:?}, mu = {:?}, c0 = {}, c1 = {}",
            p.p, p.mu, p.c0, p.c1
        );
    }
    for v in &rep.structural_violations {
        let _ = writeln!(s, "structural violation: {v}");
    }
    match &rep.growth {
        Some(g) => {
            let _ = writeln!(
                s,
                "growth sandwich: {} samples, {} skipped, {} below c0, {} above c1, ratio in [{}, {}]",
                g.samples, g.skipped, g.lower_violations, g.upper_violations, g.min_ratio, g.max_ratio
            );
        }
        None => {
            let _ = writeln!(s, "growth sandwich: no parameters to check against");
        }
    }
    for w in &rep.witnesses {
        let _ = writeln!(
            s,
            "monotonicity (a(xi) - a(eta)):(xi - eta) at xi = {:?}, eta = {:?}: {} ({})",
            w.xi,
            w.eta,
            w.indicator,
            if w.non_monotone {
                "non-monotone"
            } else {
                "monotone here"
            }
        );
    }
    if let Some(e) = &rep.er_norm {
        let _ = writeln!(s, "E_r estimate (r = {}): {}", e.r, e.estimate);
        for (radius, v) in &e.running {
            let _ = writeln!(s, "  up to radius {radius}: {v}");
        }
    }
    let _ = writeln!(
        s,
        "Lipschitz estimate on the ball of radius {}: {}",
        rep.lipschitz_radius, rep.lipschitz_estimate
    );
    if let Some(a) = &rep.advisory {
        match a.dt {
            Some(dt) => {
                let _ = writeln!(s, "advisory step size: {dt} (constant {})", a.constant);
            }
            None => {
                let _ = writeln!(s, "advisory step size: unrestricted");
            }
        }
    }
    let _ = writeln!(s, "verdict: {}", rep.verdict);
    s
}

/// Growth, monotonicity, `E_r` and Lipschitz diagnostics of a nonlinearity.
pub fn cmd_check(req: &CheckRequest, ov: &Overrides) -> CliResult<Outcome> {
    let mut req = req.clone();
    if let Some(seed) = ov.seed {
        req.check.seed = seed;
    }
    if ov.allow_uncovered {
        req.allow_uncovered = true;
    }
    let rep = check_report(&req)?;
    let pass = rep.verdict == "PASS";
    let mut warnings: Vec<String> = rep
        .structural_violations
        .iter()
        .map(|v| format!("growth parameters outside the analysed class: {v}"))
        .collect();
    if !rep.theory_covered {
        warnings.push(format!(
            "nonlinearity '{}' is not covered by the convergence theory",
            rep.nonlinearity
        ));
    }

    let mut art = Artifacts::default();
    art.add_json("check.json", &rep);
    art.add("check.txt", check_text(&rep).into_bytes());
    let negatives = rep.witnesses.iter().filter(|w| w.non_monotone).count();
    let summary = format!(
        "{}: growth {}, {negatives}/{} witnesses non-monotone, Lipschitz {:e}",
        rep.nonlinearity,
        rep.verdict,
        rep.witnesses.len(),
        rep.lipschitz_estimate
    );

    let dir = out_dir(req.config.as_ref(), ov);
    let mut m = manifest(
        "check",
        req.config.as_ref(),
        Some(req.check.seed),
        &warnings,
    );
    m.files = art.names();
    m.verdict = rep.verdict.clone();
    let files = art.finish(&dir, m)?;
    Ok(Outcome {
        dir,
        pass,
        summary,
        warnings,
        files,
    })
}

/// Per-site, per-component histograms of a measure export: `step,element,component,bin_lo,bin_hi,weight`.
pub fn histograms(export: &MeasureExport, bins: usize) -> CliResult<String> {
    if bins == 0 {
        return Err(CliError::Config("need at least one histogram bin".into()));
    }
    let mut s = String::from("step,element,component,bin_lo,bin_hi,weight\n");
    for site in &export.sites {
        let (step, element) = site.site;
        for c in 0..export.components {
            let values: Vec<f64> = site.atoms.iter().map(|a| a[c]).collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                let _ = writeln!(
                    s,
                    "{step},{element},{c},{lo},{hi},{}",
                    site.weight * values.len() as f64
                );
                continue;
            }
            let width = (hi - lo) / bins as f64;
            let mut weights = vec![0.0; bins];
            for v in &values {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                weights[b] += site.weight;
            }
            for (b, w) in weights.iter().enumerate() {
                let (a, z) = (
                    lo + b as f64 * width,
                    if b + 1 == bins {
                        hi
                    } else {
                        lo + (b + 1) as f64 * width
                    },
                );
                let _ = writeln!(s, "{step},{element},{c},{a},{z},{w}");
            }
        }
    }
    Ok(s)
}

/// Histograms of a previously written `measures.json`.
pub fn cmd_export(measures: &Path, bins: usize, ov: &Overrides) -> CliResult<Outcome> {
    let text = std::fs::read_to_string(measures)
        .map_err(|e| CliError::io(measures.display().to_string(), e))?;
    let export: MeasureExport = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("{}: not a measure export: {e}", measures.display()))
    })?;
    let table = histograms(&export, bins)?;
    let mut art = Artifacts::default();
    art.add("histograms.csv", table.into_bytes());
    let dir = out_dir(None, ov);
    let mut m = manifest("export", None, Some(export.seed), &[]);
    m.files = art.names();
    m.verdict = verdict(true).into();
    let files = art.finish(&dir, m)?;
    Ok(Outcome {
        dir,
        pass: true,
        summary: format!("{} sites, {bins} bins per component", export.sites.len()),
        warnings: Vec::new(),
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use youngfem::ensemble::MeasureSite;
    use youngfem::ensemble::PerturbationLaw;

    #[test]
    fn histogram_weights_sum_to_one() {
        let export = MeasureExport {
            members: 4,
            components: 2,
            dim: 1,
            epsilon: 0.1,
            seed: 1,
            law: PerturbationLaw::UniformNodal,
            sites: vec![MeasureSite {
                site: (0, 0),
                time: 0.0,
                weight: 0.25,
                atoms: vec![
                    vec![0.0, 1.0],
                    vec![1.0, 1.0],
                    vec![0.5, 1.0],
                    vec![0.25, 1.0],
                ],
            }],
        };
        let csv = histograms(&export, 3).unwrap();
        let mut per_component = [0.0; 2];
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            per_component[f[2].parse::<usize>().unwrap()] += f[5].parse::<f64>().unwrap();
        }
        assert_eq!(per_component, [1.0, 1.0]);
        assert!(histograms(&export, 0).is_err());
    }

    #[test]
    fn becu_check_finds_both_witnesses() {
        let rep = check_report(&CheckRequest::from_name("becu")).unwrap();
        assert_eq!(rep.witnesses.len(), 2);
        assert!(rep.witnesses.iter().all(|w| w.non_monotone));
        assert!(!rep.theory_covered);
    }

    #[test]
    fn example2_check_passes_growth() {
        let rep = check_report(&CheckRequest::from_name("example2")).unwrap();
        assert_eq!(rep.growth.unwrap().violations(), 0);
        assert_eq!(rep.verdict, "PASS");
        assert!(rep.er_norm.unwrap().estimate.is_finite());
    }
}
