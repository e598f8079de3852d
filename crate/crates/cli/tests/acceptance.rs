//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use youngfem::analysis::{
    energy_ledger, interpolant_gap, mc_variance_study, refinement_study, AxisSpec,
    RefinementOptions, StudyAxis, StudySetup, VarianceStudyOptions,
};
use youngfem::ensemble::EnsembleConfig;
use youngfem::mesh::{l2_error, l2_norm};
use youngfem::nonlinearity::{monotonicity_indicator, Nonlinearity};
use youngfem::stepper::run_trajectory;
use youngfem::SchemeConfig;
use youngfem_cli::commands::{
    check_report, cmd_ensemble, cmd_run, CheckRequest, ConsistencySummary, EnergyReport,
};
use youngfem_cli::{Overrides, RunConfig};

const HEAT_ERROR_TOL: f64 = 5e-3;
const HALVING_BAND: (f64, f64) = (1.7, 2.3);
const CONSISTENCY_TOL: f64 = 1e-12;
const GAP_TOL: f64 = 1e-12;
const VARIANCE_SEED: u64 = 20240611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).expect("bundled config loads")
}

fn into(dir: &Path) -> Overrides {
    Overrides {
        out: Some(dir.display().to_string()),
        ..Default::default()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).expect("artifact exists"))
        .expect("artifact parses")
}

/// Heat regression: error against the exact solution and the first-order
/// time-error ratio against the discrete sine mode.
fn heat_regression() -> Outcome {
    let setup = StudySetup::heat(64, 1000, 0.1);
    let problem = setup.problem(64).unwrap();
    let u0 = setup.initial_field(&problem).unwrap();
    let t = 0.1;
    let decay = (-PI * PI * t).exp();
    let h = problem.mesh.h();
    // the projected sine is an eigenvector of the discrete Laplacian
    let lambda = 6.0 / (h * h) * (1.0 - (PI * h).cos()) / (2.0 + (PI * h).cos());
    let mut time_errors = Vec::new();
    let mut exact_error = 0.0;
    for steps in [1000, 2000] {
        let traj = run_trajectory(&problem, &u0, &SchemeConfig::new(t, steps).unwrap()).unwrap();
        if steps == 1000 {
            exact_error = l2_error(traj.last(), 4, |x, o| o[0] = decay * (PI * x).sin());
        }
        let mut semi = u0.clone();
        semi.scale((-lambda * t).exp());
        time_errors.push(l2_norm(&traj.last().difference(&semi).unwrap()));
    }
    let ratio = time_errors[0] / time_errors[1];
    outcome(
        exact_error <= HEAT_ERROR_TOL && ratio >= HALVING_BAND.0 && ratio <= HALVING_BAND.1,
        format!(
            "L2 error {exact_error:.3e} (<= {HEAT_ERROR_TOL:e}), time-error halving ratio {ratio:.4} in [{}, {}]",
            HALVING_BAND.0, HALVING_BAND.1
        ),
    )
}

/// Energy ledgers of the bundled scenarios, run through the CLI layer.
fn energy_inequality(tmp: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["heat", "example2", "becu"] {
        let dir = tmp.join(format!("energy_{name}"));
        let run = cmd_run(&load(&format!("{name}.cfg")), &into(&dir)).unwrap();
        let report: EnergyReport = read_json(dir.join("energy.json"));
        let ok = run.pass && report.ledger.pass && report.ledger.dissipation_nonnegative;
        pass &= ok;
        parts.push(format!("{name} excess {:.2e}", report.ledger.worst_excess));
    }
    outcome(pass, parts.join(", "))
}

fn monotonicity_witnesses() -> Outcome {
    let nl = Nonlinearity::becu();
    let a = monotonicity_indicator(&nl, &[0.035, 0.0, -0.01], &[0.05, 0.0, 0.0]).unwrap();
    let b = monotonicity_indicator(&nl, &[-0.2, -0.1, 0.2], &[-0.1, 0.0, 0.5]).unwrap();
    let report = check_report(&CheckRequest::from_name("becu")).unwrap();
    let cli_agrees = report.witnesses.len() == 2
        && report.witnesses[0].indicator == a
        && report.witnesses[1].indicator == b;
    outcome(
        a < 0.0 && b < 0.0 && cli_agrees,
        format!("indicators {a:.4e}, {b:.4e}"),
    )
}

fn gradient_consistency(tmp: &Path) -> Outcome {
    let config = load("becu_ensemble.cfg");
    let e = config.ensemble.as_ref().unwrap();
    let d = &config.discretization;
    let setup_ok = e.members == 64
        && d.elements == 32
        && d.dt == Some(1e-3)
        && config.problem.t_final == 0.05
        && config.problem.domain == [0.0, 1.0];
    let dir = tmp.join("consistency");
    let run = cmd_ensemble(&config, &into(&dir)).unwrap();
    let report: ConsistencySummary = read_json(dir.join("consistency.json"));
    let g = report.gradient;
    outcome(
        setup_ok && run.pass && g.max_discrepancy <= CONSISTENCY_TOL * g.max_atom,
        format!(
            "max discrepancy {:.3e} <= {CONSISTENCY_TOL:e} * max atom {:.3e}",
            g.max_discrepancy, g.max_atom
        ),
    )
}

fn variance_rate() -> Outcome {
    let mut setup = StudySetup::heat(16, 20, 0.1);
    setup.ensemble = EnsembleConfig::new(16, 0.1, VARIANCE_SEED);
    let opts = VarianceStudyOptions::default();
    assert_eq!(opts.members, vec![16, 64, 256]);
    assert_eq!(opts.replicas, 16);
    let report = mc_variance_study(&setup, &opts).unwrap();
    let slope = report.fitted_slope.unwrap_or(f64::NAN);
    outcome(
        report.pass,
        format!(
            "slope {slope:.4} in [{}, {}], variances {:?}",
            opts.slope_band.0, opts.slope_band.1, report.values
        ),
    )
}

fn gap_identity() -> Outcome {
    let mut worst = 0.0_f64;
    for name in ["heat", "example2", "becu"] {
        let r = load(&format!("{name}.cfg")).resolve().unwrap();
        let problem = r.problem().unwrap();
        let u0 = r.initial_field(&problem).unwrap();
        let traj = run_trajectory(&problem, &u0, &r.scheme).unwrap();
        worst = worst.max(interpolant_gap(&traj).unwrap().relative_difference());
        // the ledger runs over the same trajectory
        energy_ledger(&traj, &problem).unwrap();
    }
    outcome(
        worst <= GAP_TOL,
        format!("worst relative difference {worst:.3e} <= {GAP_TOL:e}"),
    )
}

fn determinism(tmp: &Path) -> Outcome {
    let config = load("becu_ensemble.cfg");
    let (a, b) = (tmp.join("det_a"), tmp.join("det_b"));
    cmd_ensemble(&config, &into(&a)).unwrap();
    cmd_ensemble(&config, &into(&b)).unwrap();
    let mut same = true;
    for f in ["measures.json", "moments.csv", "mean.csv", "manifest.json"] {
        same &= std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    }
    outcome(
        same,
        "measures.json, moments.csv, mean.csv and manifest.json byte-identical".into(),
    )
}

fn refinement_decrease() -> Outcome {
    let setup = StudySetup::heat(16, 20, 0.1);
    let axes = vec![
        AxisSpec {
            axis: StudyAxis::Dt,
            levels: vec![0.02, 0.01, 0.005, 0.0025],
        },
        AxisSpec {
            axis: StudyAxis::H,
            levels: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
        },
    ];
    let reports = refinement_study(&setup, &axes, &RefinementOptions::default()).unwrap();
    let mut pass = reports.len() == 2;
    let mut parts = Vec::new();
    for r in &reports {
        let strict = r.values.len() == 3 && r.values.windows(2).all(|w| w[1] < w[0]);
        pass &= r.pass && strict;
        parts.push(format!("{} differences {:?}", r.axis.name(), r.values));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 heat regression", Box::new(heat_regression)),
        (
            "2 discrete energy inequality",
            Box::new(|| energy_inequality(tmp.path())),
        ),
        (
            "3 non-monotonicity witnesses",
            Box::new(monotonicity_witnesses),
        ),
        (
            "4 gradient consistency",
            Box::new(|| gradient_consistency(tmp.path())),
        ),
        ("5 Monte-Carlo variance rate", Box::new(variance_rate)),
        ("6 interpolant-gap identity", Box::new(gap_identity)),
        ("7 determinism", Box::new(|| determinism(tmp.path()))),
        (
            "8 refinement Cauchy decrease",
            Box::new(refinement_decrease),
        ),
    ];
    let mut failures = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        println!(
            "{verdict} criterion {name}: {} [{:.2}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
