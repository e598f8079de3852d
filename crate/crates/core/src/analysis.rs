//! Verification instruments: energy ledger, interpolant gap, weak residuals,
//! continuous dependence, Monte-Carlo variance and refinement studies.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    measure_moment, run_ensemble, EnsembleConfig, EnsembleResult, PerturbationLaw,
};
use crate::error::{Error, Result};
use crate::mesh::{
    assemble_mass_matrix, gauss_legendre, l2_norm, l2_project, mass_inner, FeField, Mesh1D,
    SymTridiagonal,
};
use crate::nonlinearity::{estimate_lipschitz, Nonlinearity};
use crate::stepper::{
    element_fluxes, max_stable_dt_advisory, run_trajectory, CouplingMatrix, DtAdvisory, Forcing,
    Problem, SchemeConfig, Trajectory,
};

/// Per-step energy accounting; every entry refers to the new time level `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub step: usize,
    /// `‖u_i‖²`.
    pub kinetic: f64,
    /// `‖u_i − u_{i−1}‖²`.
    pub increment: f64,
    /// `2Δt ∫ a(Du_i):Du_i`.
    pub dissipation: f64,
    /// `2 ∫ (∫_{t_{i−1}}^{t_i} F dt)·u_i`.
    pub work: f64,
    /// `2Δt ∫ Bu_i·u_i`, kept out of both sides.
    pub coupling: f64,
    /// `‖u_i‖² + Σ_{k≤i} (increment + dissipation)`.
    pub lhs: f64,
    /// `‖u_0‖² + Σ_{k≤i} work`.
    pub rhs: f64,
    /// Allowed excess of `lhs` over `rhs` at this step.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_kinetic: f64,
    pub rows: Vec<EnergyRow>,
    pub slack_formula: String,
    /// Largest `lhs − rhs − slack` over all steps (≤ 0 on success).
    pub worst_excess: f64,
    /// Every dissipation entry is at least `−slack`.
    pub dissipation_nonnegative: bool,
    /// Every coupling entry is at least `−slack`.
    pub coupling_nonnegative: bool,
    pub pass: bool,
}

pub const ENERGY_SLACK_FORMULA: &str =
    "slack_i = 2*dt*newton_tol*sum_{k<=i} |alpha_k|_1 + 64*eps*(i+1)*max(|lhs_i|, |rhs_i|)";

/// Evaluates the discrete energy inequality along a trajectory.
pub fn energy_ledger(traj: &Trajectory, problem: &Problem) -> Result<EnergyLedger> {
    let cfg = traj.config();
    let mesh = traj.mesh();
    let m = traj.components();
    let dt = cfg.dt;
    let mass = assemble_mass_matrix(mesh);
    let loads = problem.loads(cfg);
    let snaps = traj.snapshots();
    let initial_kinetic = mass_inner(&mass, m, snaps[0].coeffs(), snaps[0].coeffs());
    let mut rows = Vec::with_capacity(cfg.steps);
    let (mut lhs_sum, mut rhs) = (0.0, initial_kinetic);
    let mut residual_slack = 0.0;
    let mut worst = f64::NEG_INFINITY;
    let (mut diss_ok, mut coupling_ok) = (true, true);
    for i in 1..=cfg.steps {
        let (prev, cur) = (snaps[i - 1].coeffs(), snaps[i].coeffs());
        let kinetic = mass_inner(&mass, m, cur, cur);
        let diff: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| a - b).collect();
        let increment = mass_inner(&mass, m, &diff, &diff);
        let fluxes = element_fluxes(mesh, &problem.nonlinearity, cur)?;
        let mut dissipation = 0.0;
        for e in 0..mesh.element_count() {
            let h = mesh.element_length(e);
            for c in 0..m {
                let du = (snaps[i].node_value(e + 1, c) - snaps[i].node_value(e, c)) / h;
                dissipation += h * fluxes[e * m + c] * du;
            }
        }
        dissipation *= 2.0 * dt;
        let work = 2.0
            * dt
            * loads[i - 1]
                .iter()
                .zip(cur)
                .map(|(f, u)| f * u)
                .sum::<f64>();
        let coupling = 2.0 * dt * coupling_energy(&mass, &problem.coupling, cur);
        lhs_sum += increment + dissipation;
        rhs += work;
        let lhs = kinetic + lhs_sum;
        residual_slack += 2.0 * dt * cfg.newton_tol * cur.iter().map(|v| v.abs()).sum::<f64>();
        let slack =
            residual_slack + 64.0 * f64::EPSILON * (i as f64 + 1.0) * lhs.abs().max(rhs.abs());
        worst = worst.max(lhs - rhs - slack);
        diss_ok &= dissipation >= -slack;
        coupling_ok &= coupling >= -slack;
        rows.push(EnergyRow {
            step: i,
            kinetic,
            increment,
            dissipation,
            work,
            coupling,
            lhs,
            rhs,
            slack,
        });
    }
    if rows.is_empty() {
        worst = 0.0;
    }
    Ok(EnergyLedger {
        initial_kinetic,
        rows,
        slack_formula: ENERGY_SLACK_FORMULA.to_string(),
        worst_excess: worst,
        dissipation_nonnegative: diss_ok,
        coupling_nonnegative: coupling_ok,
        pass: worst <= 0.0,
    })
}

/// `∫ Bu·u` for P1 coefficients.
fn coupling_energy(mass: &SymTridiagonal, b: &CouplingMatrix, x: &[f64]) -> f64 {
    if b.is_zero() {
        return 0.0;
    }
    let m = b.dim();
    let mut bx = vec![0.0; x.len()];
    for (node, out) in x.chunks(m).zip(bx.chunks_mut(m)) {
        b.apply_add(node, out);
    }
    mass_inner(mass, m, &bx, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolantGap {
    /// `‖u_Δt − ũ_Δt‖²_{L²(Q_T)}` by Gauss quadrature in time.
    pub quadrature: f64,
    /// `(Δt/3) Σ ‖u_i − u_{i−1}‖²`.
    pub closed_form: f64,
}

impl InterpolantGap {
    pub fn relative_difference(&self) -> f64 {
        let scale = self.quadrature.abs().max(self.closed_form.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.quadrature - self.closed_form).abs() / scale
        }
    }
}

/// Compares the quadrature of the interpolant gap with its closed form.
pub fn interpolant_gap(traj: &Trajectory) -> Result<InterpolantGap> {
    let cfg = traj.config();
    let (pts, wts) = gauss_legendre(2);
    let mut quadrature = 0.0;
    let mut closed = 0.0;
    for i in 1..=cfg.steps {
        let (t0, t1) = (cfg.time(i - 1), cfg.time(i));
        for (p, w) in pts.iter().zip(wts) {
            let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * p;
            let gap = traj
                .interpolant_linear(t)?
                .difference(&traj.interpolant_constant(t)?)?;
            quadrature += 0.5 * (t1 - t0) * w * l2_norm(&gap).powi(2);
        }
        let inc = traj.snapshot(i).difference(traj.snapshot(i - 1))?;
        closed += l2_norm(&inc).powi(2);
    }
    Ok(InterpolantGap {
        quadrature,
        closed_form: cfg.dt / 3.0 * closed,
    })
}

/// Space-time test field `θ(t) φ(x) e_c`: a hat in space over `[x_{g−s}, x_{g+s}]`
/// times a hat in time over `[t_{c−w}, t_{c+w}]`, both piecewise linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestField {
    pub node: usize,
    pub half_width: usize,
    pub step: usize,
    pub time_half_width: usize,
    pub component: usize,
}

impl TestField {
    fn space_value(&self, g: usize) -> f64 {
        let d = (g as f64 - self.node as f64).abs() / self.half_width as f64;
        (1.0 - d).max(0.0)
    }

    fn time_value(&self, i: usize) -> f64 {
        let d = (i as f64 - self.step as f64).abs() / self.time_half_width as f64;
        (1.0 - d).max(0.0)
    }

    fn check(&self, elements: usize, steps: usize, components: usize) -> Result<()> {
        let ok = self.half_width >= 1
            && self.time_half_width >= 1
            && self.node >= self.half_width
            && self.node + self.half_width <= elements
            && self.step >= self.time_half_width
            && self.step + self.time_half_width <= steps
            && self.component < components;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "test field {self:?} does not fit {elements} elements, {steps} steps, {components} components"
            )))
        }
    }
}

/// Coarse family: centres every `stride` nodes and steps with matching half-widths.
pub fn default_test_family(
    elements: usize,
    steps: usize,
    components: usize,
    stride: usize,
) -> Vec<TestField> {
    let mut out = Vec::new();
    let mut step = stride;
    while step + stride <= steps {
        let mut node = stride;
        while node + stride <= elements {
            for component in 0..components {
                out.push(TestField {
                    node,
                    half_width: stride,
                    step,
                    time_half_width: stride,
                    component,
                });
            }
            node += stride;
        }
        step += stride;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub test: TestField,
    pub value: f64,
    /// `newton_tol · Σ_i ∫θ · Σ_j |φ_j|`, the size a converged trajectory can produce.
    pub bound: f64,
}

/// Which fields enter the weak form.
pub enum WeakSubject<'a> {
    Trajectory(&'a Trajectory),
    Ensemble(&'a EnsembleResult),
}

/// Weak residual of the scheme's space-time form against each test field.
/// For an ensemble the flux is replaced by the measure moment `⟨ν, a⟩` and
/// the state by the mean field.
pub fn weak_residual(
    subject: WeakSubject<'_>,
    problem: &Problem,
    tests: &[TestField],
) -> Result<Vec<WeakResidual>> {
    let (cfg, mesh) = match &subject {
        WeakSubject::Trajectory(t) => (t.config().clone(), t.mesh().clone()),
        WeakSubject::Ensemble(e) => (e.scheme.clone(), e.mesh().clone()),
    };
    if *mesh != *problem.mesh {
        return Err(Error::MeshMismatch);
    }
    let m = problem.components();
    for t in tests {
        t.check(mesh.element_count(), cfg.steps, m)?;
    }
    let mass = assemble_mass_matrix(&mesh);
    let loads = problem.loads(&cfg);
    let ne = mesh.element_count();
    // step residual vectors R_i, i = 1..=N
    let residuals = (1..=cfg.steps)
        .map(|i| {
            let (prev, cur, flux) = match &subject {
                WeakSubject::Trajectory(t) => {
                    let cur = t.snapshot(i).coeffs();
                    (
                        t.snapshot(i - 1).coeffs(),
                        cur,
                        element_fluxes(&mesh, &problem.nonlinearity, cur)?,
                    )
                }
                WeakSubject::Ensemble(e) => {
                    let flux = (0..ne).flat_map(|el| e.mean_flux(i, el).to_vec()).collect();
                    (
                        e.mean_fields()[i - 1].coeffs(),
                        e.mean_fields()[i].coeffs(),
                        flux,
                    )
                }
            };
            Ok(assembled_residual(
                &mass,
                &problem.coupling,
                m,
                cfg.dt,
                prev,
                cur,
                &loads[i - 1],
                &flux,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tests
        .iter()
        .map(|test| {
            let mut value = 0.0;
            let mut weight_sum = 0.0;
            for i in 1..=cfg.steps {
                let slab = 0.5 * cfg.dt * (test.time_value(i - 1) + test.time_value(i));
                if slab == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                let mut phi_abs = 0.0;
                for g in test.node + 1 - test.half_width..test.node + test.half_width {
                    let phi = test.space_value(g);
                    s += phi * residuals[i - 1][(g - 1) * m + test.component];
                    phi_abs += phi.abs();
                }
                value += slab * s;
                weight_sum += slab * phi_abs;
            }
            WeakResidual {
                test: *test,
                value,
                bound: cfg.newton_tol * weight_sum,
            }
        })
        .collect())
}

/// `M((x − prev)/Δt + Bx) − load + Σ_e flux_e (Dφ_j)_e h_e`, evaluated with a given elementwise flux.
#[allow(clippy::too_many_arguments)]
fn assembled_residual(
    mass: &SymTridiagonal,
    coupling: &CouplingMatrix,
    m: usize,
    dt: f64,
    prev: &[f64],
    x: &[f64],
    load: &[f64],
    flux: &[f64],
) -> Vec<f64> {
    let n = mass.dim();
    let mut w: Vec<f64> = x.iter().zip(prev).map(|(a, b)| (a - b) / dt).collect();
    if !coupling.is_zero() {
        for (node, out) in x.chunks(m).zip(w.chunks_mut(m)) {
            coupling.apply_add(node, out);
        }
    }
    let mut r = vec![0.0; n * m];
    for j in 0..n {
        for c in 0..m {
            let mut s = mass.diag[j] * w[j * m + c];
            if j > 0 {
                s += mass.off[j - 1] * w[(j - 1) * m + c];
            }
            if j + 1 < n {
                s += mass.off[j] * w[(j + 1) * m + c];
            }
            r[j * m + c] = s - load[j * m + c];
        }
    }
    for e in 0..=n {
        for c in 0..m {
            let f = flux[e * m + c];
            if e >= 1 {
                r[(e - 1) * m + c] -= f;
            }
            if e < n {
                r[e * m + c] += f;
            }
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDependence {
    /// `sup_t ‖u(t) − v(t)‖ / ‖u_0 − v_0‖`.
    pub ratio: f64,
    pub initial_distance: f64,
    pub max_distance: f64,
    /// Sampled local Lipschitz constant of the flux on the visited gradient ball.
    pub lipschitz_estimate: f64,
    pub advisory: DtAdvisory,
    /// `(1 − CΔt)^N` at the run's step (may leave `(0, 1)` outside the advisory range).
    pub contraction_factor: f64,
    /// `e^{TC/2}`.
    pub bound: f64,
}

/// Runs both initial data with the same problem and scheme and compares.
pub fn continuous_dependence(
    problem: &Problem,
    cfg: &SchemeConfig,
    u0: &FeField,
    v0: &FeField,
) -> Result<ContinuousDependence> {
    let initial = l2_norm(&u0.difference(v0)?);
    if !(initial > 0.0) {
        return Err(Error::Degenerate("initial data coincide".into()));
    }
    let (tu, tv) = rayon::join(
        || run_trajectory(problem, u0, cfg),
        || run_trajectory(problem, v0, cfg),
    );
    let (tu, tv) = (tu?, tv?);
    let mut max_distance = 0.0_f64;
    let mut max_grad = 0.0_f64;
    for i in 0..=cfg.steps {
        max_distance = max_distance.max(l2_norm(&tu.snapshot(i).difference(tv.snapshot(i))?));
        for s in [tu.snapshot(i), tv.snapshot(i)] {
            let g = crate::mesh::gradient(s);
            for e in 0..g.element_count() {
                max_grad = max_grad.max(g.at(e).iter().map(|x| x * x).sum::<f64>().sqrt());
            }
        }
    }
    let lipschitz = estimate_lipschitz(&problem.nonlinearity, max_grad.max(1e-3), 2000, 0x11f);
    let advisory = max_stable_dt_advisory(problem.mesh.h(), lipschitz);
    Ok(ContinuousDependence {
        ratio: max_distance / initial,
        initial_distance: initial,
        max_distance,
        lipschitz_estimate: lipschitz,
        advisory,
        contraction_factor: (1.0 - advisory.constant * cfg.dt).powi(cfg.steps as i32),
        bound: (0.5 * cfg.t_final() * advisory.constant).exp(),
    })
}

pub type InitialDatum = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// Mesh-independent description of a study scenario.
#[derive(Clone)]
pub struct StudySetup {
    pub name: String,
    pub nonlinearity: Nonlinearity,
    pub coupling: CouplingMatrix,
    pub forcing: Forcing,
    pub initial: InitialDatum,
    pub domain: (f64, f64),
    pub elements: usize,
    pub t_final: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub ensemble: EnsembleConfig,
}

impl fmt::Debug for StudySetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StudySetup")
            .field("name", &self.name)
            .field("nonlinearity", &self.nonlinearity.name())
            .field("elements", &self.elements)
            .field("steps", &self.steps)
            .field("ensemble", &self.ensemble)
            .finish()
    }
}

impl StudySetup {
    /// Linear heat equation with `u_0 = sin(πx)` on `(0, 1)`.
    pub fn heat(elements: usize, steps: usize, t_final: f64) -> Self {
        let nl = Nonlinearity::power_law(crate::nonlinearity::GrowthParams::new(
            vec![2.0],
            vec![0.0],
            1.0,
            1.0,
        ))
        .expect("valid parameters");
        Self {
            name: "heat".into(),
            nonlinearity: nl,
            coupling: CouplingMatrix::zero(1),
            forcing: Forcing::Zero,
            initial: Arc::new(|x, out: &mut [f64]| out[0] = (std::f64::consts::PI * x).sin()),
            domain: (0.0, 1.0),
            elements,
            t_final,
            steps,
            newton_tol: 1e-10,
            ensemble: EnsembleConfig::new(1, 0.0, 0),
        }
    }

    pub fn problem(&self, elements: usize) -> Result<Problem> {
        let mesh = Arc::new(Mesh1D::uniform(elements, self.domain)?);
        Problem::new(
            mesh,
            self.nonlinearity.clone(),
            self.coupling.clone(),
            self.forcing.clone(),
        )
    }

    pub fn scheme(&self, steps: usize) -> Result<SchemeConfig> {
        let mut cfg = SchemeConfig::new(self.t_final, steps)?;
        cfg.newton_tol = self.newton_tol;
        Ok(cfg)
    }

    pub fn initial_field(&self, problem: &Problem) -> Result<FeField> {
        let f = self.initial.clone();
        l2_project(problem.mesh.clone(), problem.components(), move |x, out| {
            f(x, out)
        })
    }

    /// Ensemble at the given resolution.
    pub fn run(&self, level: &LevelParams) -> Result<EnsembleResult> {
        let problem = self.problem(level.elements)?;
        let scheme = self.scheme(level.steps)?;
        let u0 = self.initial_field(&problem)?;
        let mut cfg = self.ensemble.clone();
        cfg.members = level.members;
        cfg.epsilon = level.epsilon;
        cfg.seed = level.seed;
        if level.record_all {
            cfg.record_steps = Some((0..=level.steps).collect());
        }
        run_ensemble(&problem, &u0, &scheme, &cfg)
    }

    pub fn base_level(&self) -> LevelParams {
        LevelParams {
            elements: self.elements,
            steps: self.steps,
            members: self.ensemble.members,
            epsilon: self.ensemble.epsilon,
            seed: self.ensemble.seed,
            record_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub elements: usize,
    pub steps: usize,
    pub members: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub record_all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    Dt,
    Members,
    H,
    Epsilon,
}

impl StudyAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dt => "dt",
            Self::Members => "members",
            Self::H => "h",
            Self::Epsilon => "epsilon",
        }
    }
}

impl std::str::FromStr for StudyAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(Self::Dt),
            "members" | "m" | "M" => Ok(Self::Members),
            "h" => Ok(Self::H),
            "epsilon" | "eps" => Ok(Self::Epsilon),
            other => Err(Error::Config(format!("unknown study axis '{other}'"))),
        }
    }
}

/// One refinement axis with its sample values (Δt, member count, h or ε).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis: StudyAxis,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Refinement,
    McVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub axis: StudyAxis,
    pub scenario: String,
    pub samples: Vec<f64>,
    pub observable_names: Vec<String>,
    /// Observables per level (refinement) or replica values per level (variance study).
    pub observables: Vec<Vec<f64>>,
    /// Cauchy differences between consecutive levels, or sample variances per level.
    pub values: Vec<f64>,
    /// `values[l] / values[l − 1]`.
    pub ratios: Vec<f64>,
    /// Largest atom spread at the final step, per level.
    pub spreads: Vec<f64>,
    pub fitted_slope: Option<f64>,
    pub criterion: String,
    pub pass: bool,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column table for humans.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            StudyKind::Refinement => "refinement",
            StudyKind::McVariance => "mc-variance",
        };
        let _ = writeln!(
            s,
            "{kind} study on axis {} ({})",
            self.axis.name(),
            self.scenario
        );
        let value_name = match self.kind {
            StudyKind::Refinement => "difference",
            StudyKind::McVariance => "variance",
        };
        let _ = writeln!(
            s,
            "{:>5}  {:>14}  {:>14}  {:>10}  {:>14}",
            "level",
            self.axis.name(),
            value_name,
            "ratio",
            "spread"
        );
        for (l, sample) in self.samples.iter().enumerate() {
            let value = self
                .value_at(l)
                .map_or("-".to_string(), |v| format!("{v:.6e}"));
            let ratio = self
                .ratio_at(l)
                .map_or("-".to_string(), |v| format!("{v:.4}"));
            let spread = self
                .spreads
                .get(l)
                .map_or("-".to_string(), |v| format!("{v:.6e}"));
            let _ = writeln!(
                s,
                "{l:>5}  {sample:>14.6e}  {value:>14}  {ratio:>10}  {spread:>14}"
            );
        }
        if let Some(slope) = self.fitted_slope {
            let _ = writeln!(s, "fitted log-log slope: {slope:.4}");
        }
        let _ = writeln!(s, "criterion: {}", self.criterion);
        let _ = writeln!(s, "verdict: {}", if self.pass { "PASS" } else { "FAIL" });
        s
    }

    fn value_at(&self, level: usize) -> Option<f64> {
        match self.kind {
            StudyKind::Refinement => level
                .checked_sub(1)
                .and_then(|l| self.values.get(l).copied()),
            StudyKind::McVariance => self.values.get(level).copied(),
        }
    }

    fn ratio_at(&self, level: usize) -> Option<f64> {
        let offset = match self.kind {
            StudyKind::Refinement => 2,
            StudyKind::McVariance => 1,
        };
        level
            .checked_sub(offset)
            .and_then(|l| self.ratios.get(l).copied())
    }

    /// `level,sample,value,ratio,spread`; missing entries are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,sample,value,ratio,spread")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (l, sample) in self.samples.iter().enumerate() {
            writeln!(
                w,
                "{l},{sample},{},{},{}",
                opt(self.value_at(l)),
                opt(self.ratio_at(l)),
                opt(self.spreads.get(l).copied())
            )?;
        }
        Ok(())
    }
}

/// Moment integrated in the variance study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    /// `g(ξ) = ξ_c`.
    Xi { component: usize },
    /// `g ≡ 1`.
    One,
    /// `g = a_c`.
    Flux { component: usize },
}

/// Spatial weight in `G = Σ_i Δt Σ_e (∫_e w) ⟨ν_{t_i, e}, g⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialWeight {
    /// `w ≡ 1`. Note `∫ Du dx = 0` under Dirichlet data, so `g = ξ` integrates to zero.
    Unit,
    /// `w(x) = (x − a) / |Ω|`.
    Linear,
}

/// Space-time integral of a moment using the piecewise-constant time interpolant.
pub fn integrated_moment(
    result: &EnsembleResult,
    moment: MomentKind,
    weight: SpatialWeight,
) -> Result<f64> {
    let mesh = result.mesh();
    let (a, b) = mesh.domain();
    let measure = result.measure();
    let dt = result.scheme.dt;
    let mut total = 0.0;
    for i in 1..=result.scheme.steps {
        let mut slab = 0.0;
        for e in 0..mesh.element_count() {
            let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
            let w = match weight {
                SpatialWeight::Unit => xr - xl,
                SpatialWeight::Linear => (xr - xl) * (0.5 * (xl + xr) - a) / (b - a),
            };
            let value = match moment {
                MomentKind::Xi { component } => measure_moment(measure, |g| g[component], i, e)?,
                MomentKind::One => measure_moment(measure, |_| 1.0, i, e)?,
                MomentKind::Flux { component } => result.mean_flux(i, e)[component],
            };
            slab += w * value;
        }
        total += dt * slab;
    }
    Ok(total)
}

fn replica_seed(base: u64, members: usize, replica: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((members as u64) << 32) | replica as u64);
    rng.next_u64()
}

/// Unbiased sample variance via pairwise differences (exactly zero for equal samples).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (values[i] - values[j]).powi(2);
        }
    }
    s / (n * (n - 1)) as f64
}

/// Least-squares slope of `ln y` against `ln x`; `None` when some `y ≤ 0`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceStudyOptions {
    pub members: Vec<usize>,
    pub replicas: usize,
    pub moment: MomentKind,
    pub weight: SpatialWeight,
    /// Accepted slope band.
    pub slope_band: (f64, f64),
}

impl Default for VarianceStudyOptions {
    fn default() -> Self {
        Self {
            members: vec![16, 64, 256],
            replicas: 16,
            moment: MomentKind::Xi { component: 0 },
            weight: SpatialWeight::Linear,
            slope_band: (-1.3, -0.7),
        }
    }
}

/// Sample variance of the integrated moment over independent replicas, per member count.
pub fn mc_variance_study(setup: &StudySetup, opts: &VarianceStudyOptions) -> Result<StudyReport> {
    if opts.members.is_empty()
        || opts.members.windows(2).any(|w| w[1] <= w[0])
        || opts.members[0] == 0
    {
        return Err(Error::Config(
            "member counts must be positive and strictly increasing".into(),
        ));
    }
    if opts.replicas < 8 {
        return Err(Error::Config(format!(
            "need at least 8 replicas, got {}",
            opts.replicas
        )));
    }
    let base = setup.base_level();
    let observables = opts
        .members
        .par_iter()
        .enumerate()
        .map(|(l, &members)| {
            (0..opts.replicas)
                .into_par_iter()
                .map(|r| {
                    let level = LevelParams {
                        members,
                        seed: replica_seed(setup.ensemble.seed, members, r),
                        record_all: true,
                        ..base.clone()
                    };
                    let result = setup.run(&level)?;
                    integrated_moment(&result, opts.moment, opts.weight)
                })
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| Error::LevelFailed {
                    level: l,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = observables.iter().map(|v| sample_variance(v)).collect();
    let samples: Vec<f64> = opts.members.iter().map(|&m| m as f64).collect();
    let ratios = values.windows(2).map(|w| w[1] / w[0]).collect();
    let slope = log_log_slope(&samples, &values);
    let (lo, hi) = opts.slope_band;
    Ok(StudyReport {
        kind: StudyKind::McVariance,
        axis: StudyAxis::Members,
        scenario: setup.name.clone(),
        samples,
        observable_names: (0..opts.replicas).map(|r| format!("replica_{r}")).collect(),
        observables,
        values,
        ratios,
        spreads: Vec::new(),
        fitted_slope: slope,
        criterion: format!("log-log slope of variance against M in [{lo}, {hi}]"),
        pass: slope.is_some_and(|s| s >= lo && s <= hi),
    })
}

/// Fractions of `T` and of `|Ω|` at which refinement observables are sampled.
pub const PROBE_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const PROBE_POINTS: [f64; 3] = [0.25, 0.5, 0.75];

/// Mean field at probe points and `∫ ⟨ν, a⟩ · Dφ` with `φ = sin(π(x − a)/|Ω|)`.
pub fn refinement_observables(result: &EnsembleResult) -> Result<(Vec<String>, Vec<f64>)> {
    let mesh = result.mesh();
    let (a, b) = mesh.domain();
    let scheme = &result.scheme;
    let m = result.components();
    let mut names = Vec::new();
    let mut values = Vec::new();
    for &ft in &PROBE_TIMES {
        let t = ft * scheme.t_final();
        let s = t / scheme.dt;
        let lo = (s.floor() as usize).min(scheme.steps);
        let hi = (s.ceil() as usize).min(scheme.steps);
        let theta = s - lo as f64;
        let means = result.mean_fields();
        for &fx in &PROBE_POINTS {
            let x = a + fx * (b - a);
            let ul = means[lo].evaluate(x).ok_or(Error::Domain {
                value: x,
                lo: a,
                hi: b,
            })?;
            let uh = means[hi].evaluate(x).ok_or(Error::Domain {
                value: x,
                lo: a,
                hi: b,
            })?;
            for c in 0..m {
                names.push(format!("U{c}(t={ft}T, x={fx})"));
                values.push((1.0 - theta) * ul[c] + theta * uh[c]);
            }
        }
        let phi = |x: f64| (std::f64::consts::PI * (x - a) / (b - a)).sin();
        for c in 0..m {
            let mut s = 0.0;
            for e in 0..mesh.element_count() {
                let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
                let flux =
                    (1.0 - theta) * result.mean_flux(lo, e)[c] + theta * result.mean_flux(hi, e)[c];
                s += flux * (phi(xr) - phi(xl));
            }
            names.push(format!("flux{c}(t={ft}T)"));
            values.push(s);
        }
    }
    Ok((names, values))
}

fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOptions {
    /// A level passes when `d_l < max_ratio · d_{l−1}`.
    pub max_ratio: f64,
}

impl Default for RefinementOptions {
    fn default() -> Self {
        Self { max_ratio: 1.0 }
    }
}

/// Refines each axis in turn, in the order Δt, M, h, ε. Later axes run at the
/// finest level reached by earlier ones.
pub fn refinement_study(
    setup: &StudySetup,
    axes: &[AxisSpec],
    opts: &RefinementOptions,
) -> Result<Vec<StudyReport>> {
    if axes.is_empty() {
        return Err(Error::Config("no study axes given".into()));
    }
    for w in axes.windows(2) {
        if w[1].axis <= w[0].axis {
            return Err(Error::Config(format!(
                "axes must follow the order dt, members, h, epsilon without repetition; got {} after {}",
                w[1].axis.name(),
                w[0].axis.name()
            )));
        }
    }
    let mut base = setup.base_level();
    let mut reports = Vec::new();
    for spec in axes {
        if spec.levels.len() < 2 {
            return Err(Error::Config(format!(
                "axis {} needs at least two levels",
                spec.axis.name()
            )));
        }
        let increasing = spec.levels.windows(2).all(|w| w[1] > w[0]);
        let decreasing = spec.levels.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::Config(format!(
                "levels on axis {} must be strictly monotone",
                spec.axis.name()
            )));
        }
        let levels = spec
            .levels
            .iter()
            .map(|&v| level_for(setup, &base, spec.axis, v))
            .collect::<Result<Vec<_>>>()?;
        let results = levels
            .par_iter()
            .enumerate()
            .map(|(l, level)| {
                let r = setup.run(level).map_err(|e| Error::LevelFailed {
                    level: l,
                    source: Box::new(e),
                })?;
                let (names, obs) = refinement_observables(&r)?;
                let spread = final_spread(&r);
                Ok((names, obs, spread))
            })
            .collect::<Result<Vec<_>>>()?;
        let observable_names = results[0].0.clone();
        let observables: Vec<Vec<f64>> = results.iter().map(|r| r.1.clone()).collect();
        let spreads = results.iter().map(|r| r.2).collect();
        let values: Vec<f64> = observables
            .windows(2)
            .map(|w| max_abs_difference(&w[0], &w[1]))
            .collect();
        let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
        let pass = values.windows(2).all(|w| w[1] < opts.max_ratio * w[0]);
        reports.push(StudyReport {
            kind: StudyKind::Refinement,
            axis: spec.axis,
            scenario: setup.name.clone(),
            samples: spec.levels.clone(),
            observable_names,
            observables,
            values,
            ratios,
            spreads,
            fitted_slope: None,
            criterion: format!(
                "max-norm Cauchy differences decrease strictly (d_l < {} d_(l-1))",
                opts.max_ratio
            ),
            pass,
        });
        base = levels.last().unwrap().clone();
    }
    Ok(reports)
}

fn final_spread(r: &EnsembleResult) -> f64 {
    let measure = r.measure();
    let last = *measure.record_steps().last().unwrap();
    (0..measure.element_count())
        .map(|e| measure.spread(last, e).unwrap())
        .fold(0.0, f64::max)
}

fn level_for(
    setup: &StudySetup,
    base: &LevelParams,
    axis: StudyAxis,
    value: f64,
) -> Result<LevelParams> {
    let mut level = base.clone();
    let positive_int = |v: f64, what: &str| -> Result<usize> {
        let r = v.round();
        if r >= 1.0 && (v - r).abs() < 1e-9 * r {
            Ok(r as usize)
        } else {
            Err(Error::Config(format!(
                "{what} level {v} does not give a positive integer"
            )))
        }
    };
    match axis {
        StudyAxis::Dt => level.steps = positive_int(setup.t_final / value, "dt")?,
        StudyAxis::Members => level.members = positive_int(value, "members")?,
        StudyAxis::H => {
            level.elements = positive_int((setup.domain.1 - setup.domain.0) / value, "h")?
        }
        StudyAxis::Epsilon => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!(
                    "epsilon level {value} outside [0, 1]"
                )));
            }
            level.epsilon = value;
        }
    }
    Ok(level)
}

/// Short description of the perturbation law for manifests.
pub fn law_description(law: PerturbationLaw) -> &'static str {
    match law {
        PerturbationLaw::UniformNodal => {
            "nodal coefficients iid U[-1,1], rescaled to unit L2 norm when larger"
        }
        PerturbationLaw::GaussianNodal => {
            "nodal coefficients iid N(0,1), rescaled to unit L2 norm when larger"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::run_ensemble;
    use crate::stepper::run_trajectory;

    fn heat_run(k: usize, n: usize, t: f64) -> (Problem, Trajectory) {
        let setup = StudySetup::heat(k, n, t);
        let problem = setup.problem(k).unwrap();
        let u0 = setup.initial_field(&problem).unwrap();
        let traj = run_trajectory(&problem, &u0, &setup.scheme(n).unwrap()).unwrap();
        (problem, traj)
    }

    #[test]
    fn zero_trajectory_ledger() {
        let setup = StudySetup::heat(8, 4, 0.1);
        let problem = setup.problem(8).unwrap();
        let traj = run_trajectory(
            &problem,
            &FeField::zeros(problem.mesh.clone(), 1),
            &setup.scheme(4).unwrap(),
        )
        .unwrap();
        let ledger = energy_ledger(&traj, &problem).unwrap();
        assert!(ledger.pass);
        assert_eq!(ledger.rows.len(), 4);
        for r in &ledger.rows {
            assert_eq!(
                (r.kinetic, r.increment, r.dissipation, r.work, r.lhs, r.rhs),
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn heat_ledger_dissipation_is_dirichlet_energy() {
        let (problem, traj) = heat_run(16, 10, 0.05);
        let ledger = energy_ledger(&traj, &problem).unwrap();
        assert!(ledger.pass && ledger.dissipation_nonnegative);
        let dt = traj.config().dt;
        for row in &ledger.rows {
            let g = crate::mesh::gradient(traj.snapshot(row.step));
            let h = problem.mesh.h();
            let direct: f64 = 2.0 * dt * g.values().iter().map(|v| h * v * v).sum::<f64>();
            assert!((row.dissipation - direct).abs() <= 1e-13 * direct);
        }
    }

    #[test]
    fn interpolant_gap_identity() {
        let (_, traj) = heat_run(16, 10, 0.05);
        let gap = interpolant_gap(&traj).unwrap();
        assert!(gap.closed_form > 0.0);
        assert!(gap.relative_difference() < 1e-12, "{gap:?}");
    }

    #[test]
    fn weak_residual_of_the_solved_equation_is_small() {
        let (problem, traj) = heat_run(16, 16, 0.05);
        let tests = default_test_family(16, 16, 1, 4);
        assert!(!tests.is_empty());
        for r in weak_residual(WeakSubject::Trajectory(&traj), &problem, &tests).unwrap() {
            assert!(r.value.abs() <= r.bound, "{r:?}");
        }
        let bad = [TestField {
            node: 2,
            half_width: 4,
            step: 4,
            time_half_width: 4,
            component: 0,
        }];
        assert!(weak_residual(WeakSubject::Trajectory(&traj), &problem, &bad).is_err());
    }

    #[test]
    fn single_member_ensemble_residual_equals_trajectory_residual() {
        let setup = StudySetup::heat(16, 16, 0.05);
        let problem = setup.problem(16).unwrap();
        let u0 = setup.initial_field(&problem).unwrap();
        let scheme = setup.scheme(16).unwrap();
        let traj = run_trajectory(&problem, &u0, &scheme).unwrap();
        let ens = run_ensemble(&problem, &u0, &scheme, &EnsembleConfig::new(1, 0.0, 3)).unwrap();
        let tests = default_test_family(16, 16, 1, 4);
        let a = weak_residual(WeakSubject::Trajectory(&traj), &problem, &tests).unwrap();
        let b = weak_residual(WeakSubject::Ensemble(&ens), &problem, &tests).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heat_is_a_contraction() {
        let setup = StudySetup::heat(16, 20, 0.1);
        let problem = setup.problem(16).unwrap();
        let u0 = setup.initial_field(&problem).unwrap();
        let v0 = l2_project(problem.mesh.clone(), 1, |x, o| {
            o[0] = (std::f64::consts::PI * x).sin() + 0.1 * x * (1.0 - x)
        })
        .unwrap();
        let report = continuous_dependence(&problem, &setup.scheme(20).unwrap(), &u0, &v0).unwrap();
        assert!(report.ratio <= 1.0 + 1e-12);
        assert!(continuous_dependence(&problem, &setup.scheme(20).unwrap(), &u0, &u0).is_err());
    }

    #[test]
    fn deterministic_setups_have_zero_variance() {
        let mut setup = StudySetup::heat(8, 8, 0.05);
        setup.ensemble.epsilon = 0.0;
        let opts = VarianceStudyOptions {
            members: vec![1, 2, 4],
            replicas: 8,
            ..Default::default()
        };
        let report = mc_variance_study(&setup, &opts).unwrap();
        assert!(report.values.iter().all(|&v| v == 0.0));
        assert!(!report.pass);
        setup.ensemble.epsilon = 0.5;
        let ones = VarianceStudyOptions {
            moment: MomentKind::One,
            ..opts.clone()
        };
        let report = mc_variance_study(&setup, &ones).unwrap();
        assert!(report.values.iter().all(|&v| v == 0.0));
        let bad = VarianceStudyOptions {
            replicas: 4,
            ..opts
        };
        assert!(mc_variance_study(&setup, &bad).is_err());
    }

    #[test]
    fn variance_helpers() {
        assert_eq!(sample_variance(&[3.0; 10]), 0.0);
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
        let x = [16.0, 64.0, 256.0];
        let y: Vec<f64> = x.iter().map(|m| 3.0 / m).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(log_log_slope(&x, &[0.0, 1.0, 1.0]), None);
    }

    #[test]
    fn study_preconditions() {
        let setup = StudySetup::heat(8, 8, 0.05);
        let single = [AxisSpec {
            axis: StudyAxis::Dt,
            levels: vec![0.01],
        }];
        assert!(refinement_study(&setup, &single, &Default::default()).is_err());
        let out_of_order = [
            AxisSpec {
                axis: StudyAxis::H,
                levels: vec![0.25, 0.125],
            },
            AxisSpec {
                axis: StudyAxis::Dt,
                levels: vec![0.01, 0.005],
            },
        ];
        assert!(refinement_study(&setup, &out_of_order, &Default::default()).is_err());
    }

    #[test]
    fn dt_refinement_on_heat_is_first_order() {
        let setup = StudySetup::heat(16, 8, 0.1);
        let axes = [AxisSpec {
            axis: StudyAxis::Dt,
            levels: vec![0.1 / 8.0, 0.1 / 16.0, 0.1 / 32.0, 0.1 / 64.0],
        }];
        let reports = refinement_study(&setup, &axes, &Default::default()).unwrap();
        let r = &reports[0];
        assert!(r.pass, "{}", r.to_text());
        for q in &r.ratios {
            assert!((0.4..0.6).contains(q), "{}", r.to_text());
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn epsilon_axis_spread_is_proportional() {
        let mut setup = StudySetup::heat(8, 8, 0.05);
        setup.ensemble.members = 4;
        setup.ensemble.seed = 21;
        let axes = [AxisSpec {
            axis: StudyAxis::Epsilon,
            levels: vec![0.4, 0.2, 0.1],
        }];
        let r = &refinement_study(&setup, &axes, &Default::default()).unwrap()[0];
        // the heat flow is linear, so the spread scales exactly with ε
        assert!((r.spreads[0] / r.spreads[1] - 2.0).abs() < 1e-8);
        assert!((r.spreads[1] / r.spreads[2] - 2.0).abs() < 1e-8);
    }
}
