//! Perturbed initial ensembles and the empirical Young measures they induce.
//!
//! Every member starts from `u_0^h + ε υ^k` with an independent random field
//! `υ^k` of L² norm at most one. The measure at a site is the equal-weight
//! sum of Dirac masses at the members' gradients there.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{l2_norm, FeField, Mesh1D};
use crate::stepper::{element_fluxes, Problem, SchemeConfig, StepStats, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationLaw {
    /// Nodal coefficients i.i.d. uniform on `[-1, 1]`.
    UniformNodal,
    /// Nodal coefficients i.i.d. standard normal.
    GaussianNodal,
}

impl PerturbationLaw {
    pub fn name(&self) -> &'static str {
        match self {
            Self::UniformNodal => "uniform_nodal",
            Self::GaussianNodal => "gaussian_nodal",
        }
    }
}

impl fmt::Display for PerturbationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_nodal" | "uniform" => Ok(Self::UniformNodal),
            "gaussian_nodal" | "gaussian" | "normal" => Ok(Self::GaussianNodal),
            other => Err(Error::Config(format!(
                "unknown perturbation law '{other}', expected uniform_nodal or gaussian_nodal"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub law: PerturbationLaw,
    /// Step indices at which measures are kept; `None` selects `{0, N/4, N/2, 3N/4, N}`.
    #[serde(default)]
    pub record_steps: Option<Vec<usize>>,
}

impl EnsembleConfig {
    pub fn new(members: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            members,
            epsilon,
            seed,
            law: PerturbationLaw::UniformNodal,
            record_steps: None,
        }
    }

    /// `ε = 0` is accepted and collapses the ensemble onto one trajectory.
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "perturbation amplitude must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if let Some(r) = &self.record_steps {
            if r.is_empty() {
                return Err(Error::Config("record_steps must not be empty".into()));
            }
            if let Some(&bad) = r.iter().find(|&&s| s > steps) {
                return Err(Error::Config(format!(
                    "record step {bad} exceeds N = {steps}"
                )));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated record steps for a run of `steps` steps.
    pub fn resolved_record_steps(&self, steps: usize) -> Vec<usize> {
        let mut r = match &self.record_steps {
            Some(r) => r.clone(),
            None => default_record_steps(steps),
        };
        r.sort_unstable();
        r.dedup();
        r
    }
}

pub fn default_record_steps(steps: usize) -> Vec<usize> {
    let mut r = vec![0, steps / 4, steps / 2, 3 * steps / 4, steps];
    r.dedup();
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationField {
    pub member: usize,
    pub field: FeField,
}

/// The perturbation of member `k`, drawn from stream `k` of the seeded generator.
pub fn member_perturbation(
    mesh: &Arc<Mesh1D>,
    components: usize,
    seed: u64,
    law: PerturbationLaw,
    member: usize,
) -> PerturbationField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    let len = mesh.interior_count() * components;
    let coeffs: Vec<f64> = match law {
        PerturbationLaw::UniformNodal => (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        PerturbationLaw::GaussianNodal => {
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
    };
    let mut field =
        FeField::from_coeffs(mesh.clone(), components, coeffs).expect("length matches mesh");
    let norm = l2_norm(&field);
    if norm > 1.0 {
        field.scale(1.0 / norm);
    }
    PerturbationField { member, field }
}

pub fn draw_perturbations(
    mesh: &Arc<Mesh1D>,
    components: usize,
    members: usize,
    seed: u64,
    law: PerturbationLaw,
) -> Vec<PerturbationField> {
    (0..members)
        .map(|k| member_perturbation(mesh, components, seed, law, k))
        .collect()
}

/// `u0h + ε υ`.
pub fn perturb_initial(
    u0h: &FeField,
    perturbation: &PerturbationField,
    epsilon: f64,
) -> Result<FeField> {
    let mut out = u0h.clone();
    if epsilon != 0.0 {
        out.axpy(epsilon, &perturbation.field)?;
    }
    Ok(out)
}

/// Equal-weight atoms of the gradient measure (per element) and the state
/// measure (per node) at each recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalYoungMeasure {
    members: usize,
    components: usize,
    elements: usize,
    nodes: usize,
    record_steps: Vec<usize>,
    /// Layout `[record][element][member][component]`.
    gradient_atoms: Vec<f64>,
    /// Layout `[record][node][member][component]`, boundary nodes included.
    state_atoms: Vec<f64>,
}

impl EmpiricalYoungMeasure {
    pub fn members(&self) -> usize {
        self.members
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn element_count(&self) -> usize {
        self.elements
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn record_steps(&self) -> &[usize] {
        &self.record_steps
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.members as f64
    }

    fn record_index(&self, step: usize, site: usize, limit: usize) -> Result<usize> {
        match self.record_steps.binary_search(&step) {
            Ok(r) if site < limit => Ok(r),
            _ => Err(Error::UnknownSite {
                step,
                element: site,
            }),
        }
    }

    /// All `M` gradient atoms at `(step, element)`, member-major.
    pub fn atoms(&self, step: usize, element: usize) -> Result<&[f64]> {
        let r = self.record_index(step, element, self.elements)?;
        let block = self.members * self.components;
        let start = (r * self.elements + element) * block;
        Ok(&self.gradient_atoms[start..start + block])
    }

    /// All `M` state atoms at `(step, node)`.
    pub fn state_atoms(&self, step: usize, node: usize) -> Result<&[f64]> {
        let r = self.record_index(step, node, self.nodes)?;
        let block = self.members * self.components;
        let start = (r * self.nodes + node) * block;
        Ok(&self.state_atoms[start..start + block])
    }

    /// Sum of the atom weights at a site, accumulated in member order.
    pub fn total_mass(&self, step: usize, element: usize) -> Result<f64> {
        self.atoms(step, element)?;
        Ok((0..self.members).fold(0.0, |s, _| s + self.weight()))
    }

    pub fn max_atom_abs(&self) -> f64 {
        self.gradient_atoms.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest componentwise range `max_k − min_k` of the gradient atoms at a site.
    pub fn spread(&self, step: usize, element: usize) -> Result<f64> {
        let atoms = self.atoms(step, element)?;
        let m = self.components;
        let mut worst = 0.0_f64;
        for c in 0..m {
            let (lo, hi) = atoms
                .chunks(m)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                    (lo.min(a[c]), hi.max(a[c]))
                });
            worst = worst.max(hi - lo);
        }
        Ok(worst)
    }

    pub fn max_spread(&self) -> f64 {
        let mut worst = 0.0_f64;
        for &s in &self.record_steps {
            for e in 0..self.elements {
                worst = worst.max(self.spread(s, e).unwrap());
            }
        }
        worst
    }
}

/// `⟨ν, g⟩ = (1/M) Σ_k g(atom_k)` at one site.
pub fn measure_moment<G>(
    measure: &EmpiricalYoungMeasure,
    g: G,
    step: usize,
    element: usize,
) -> Result<f64>
where
    G: Fn(&[f64]) -> f64,
{
    let atoms = measure.atoms(step, element)?;
    let sum = atoms.chunks(measure.components).fold(0.0, |s, a| s + g(a));
    Ok(sum / measure.members as f64)
}

/// Vector-valued moment `(1/M) Σ_k g(atom_k)` with `g` writing `out_len` values.
pub fn measure_moment_vec<G>(
    measure: &EmpiricalYoungMeasure,
    g: G,
    out_len: usize,
    step: usize,
    element: usize,
) -> Result<Vec<f64>>
where
    G: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    let atoms = measure.atoms(step, element)?;
    let mut sum = vec![0.0; out_len];
    let mut buf = vec![0.0; out_len];
    for a in atoms.chunks(measure.components) {
        g(a, &mut buf)?;
        for (s, b) in sum.iter_mut().zip(&buf) {
            *s += b;
        }
    }
    let m = measure.members as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

/// Output of one ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub config: EnsembleConfig,
    pub scheme: SchemeConfig,
    mesh: Arc<Mesh1D>,
    components: usize,
    measure: EmpiricalYoungMeasure,
    /// Mean field at every step `0..=N`.
    mean: Vec<FeField>,
    /// `⟨ν, a⟩` at every step and element, layout `[step][element][component]`.
    mean_flux: Vec<f64>,
    member_stats: Vec<Vec<StepStats>>,
}

impl EnsembleResult {
    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn measure(&self) -> &EmpiricalYoungMeasure {
        &self.measure
    }

    pub fn members(&self) -> usize {
        self.measure.members
    }

    /// Mean fields `U(t_i)` for `i = 0..=N`.
    pub fn mean_fields(&self) -> &[FeField] {
        &self.mean
    }

    /// `⟨ν, a⟩` on `element` at step `i`.
    pub fn mean_flux(&self, step: usize, element: usize) -> &[f64] {
        let m = self.components;
        let start = (step * self.mesh.element_count() + element) * m;
        &self.mean_flux[start..start + m]
    }

    pub fn member_stats(&self) -> &[Vec<StepStats>] {
        &self.member_stats
    }

    pub fn max_residual(&self) -> f64 {
        self.member_stats
            .iter()
            .flatten()
            .fold(0.0, |m, s| m.max(s.residual))
    }
}

pub fn mean_field(result: &EnsembleResult, step: usize) -> &FeField {
    &result.mean[step]
}

struct MemberRun {
    coeffs: Vec<Vec<f64>>,
    fluxes: Vec<Vec<f64>>,
    stats: Vec<StepStats>,
}

/// Runs the ensemble defined by `cfg`: members are independent and run in parallel.
pub fn run_ensemble(
    problem: &Problem,
    u0h: &FeField,
    scheme: &SchemeConfig,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    cfg.validate(scheme.steps)?;
    let perturbations = draw_perturbations(
        &problem.mesh,
        problem.components(),
        cfg.members,
        cfg.seed,
        cfg.law,
    );
    let initials = perturbations
        .iter()
        .map(|p| perturb_initial(u0h, p, cfg.epsilon))
        .collect::<Result<Vec<_>>>()?;
    run_ensemble_from_initials(problem, &initials, scheme, cfg)
}

/// Runs one member per initial datum. `cfg` supplies the record steps and is echoed.
pub fn run_ensemble_from_initials(
    problem: &Problem,
    initials: &[FeField],
    scheme: &SchemeConfig,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult> {
    if initials.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    cfg.validate(scheme.steps)?;
    let stepper = Stepper::new(problem, scheme)?;
    let loads = problem.loads(scheme);
    let runs = initials
        .par_iter()
        .enumerate()
        .map(|(k, u0)| {
            let traj = stepper.run(u0, &loads).map_err(|e| Error::MemberFailed {
                member: k,
                source: Box::new(e),
            })?;
            let fluxes = traj
                .snapshots()
                .iter()
                .map(|s| element_fluxes(&problem.mesh, &problem.nonlinearity, s.coeffs()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::MemberFailed {
                    member: k,
                    source: Box::new(e),
                })?;
            Ok(MemberRun {
                coeffs: traj
                    .snapshots()
                    .iter()
                    .map(|s| s.coeffs().to_vec())
                    .collect(),
                fluxes,
                stats: traj.stats().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(problem, scheme, cfg, runs))
}

fn reduce(
    problem: &Problem,
    scheme: &SchemeConfig,
    cfg: &EnsembleConfig,
    runs: Vec<MemberRun>,
) -> EnsembleResult {
    let mesh = problem.mesh.clone();
    let m = problem.components();
    let members = runs.len();
    let ne = mesh.element_count();
    let nodes = mesh.nodes().len();
    let n_int = mesh.interior_count();
    let steps = scheme.steps;
    let count = members as f64;

    let mut mean = Vec::with_capacity(steps + 1);
    let mut mean_flux = vec![0.0; (steps + 1) * ne * m];
    for i in 0..=steps {
        let mut sum = vec![0.0; n_int * m];
        for run in &runs {
            for (s, v) in sum.iter_mut().zip(&run.coeffs[i]) {
                *s += v;
            }
        }
        sum.iter_mut().for_each(|s| *s /= count);
        mean.push(FeField::from_coeffs(mesh.clone(), m, sum).expect("consistent length"));
        let slab = &mut mean_flux[i * ne * m..(i + 1) * ne * m];
        for run in &runs {
            for (s, v) in slab.iter_mut().zip(&run.fluxes[i]) {
                *s += v;
            }
        }
        slab.iter_mut().for_each(|s| *s /= count);
    }

    let record_steps = cfg.resolved_record_steps(steps);
    let mut gradient_atoms = Vec::with_capacity(record_steps.len() * ne * members * m);
    let mut state_atoms = Vec::with_capacity(record_steps.len() * nodes * members * m);
    for &i in &record_steps {
        for e in 0..ne {
            let h = mesh.element_length(e);
            for run in &runs {
                let x = &run.coeffs[i];
                for c in 0..m {
                    let left = if e >= 1 { x[(e - 1) * m + c] } else { 0.0 };
                    let right = if e < n_int { x[e * m + c] } else { 0.0 };
                    gradient_atoms.push((right - left) / h);
                }
            }
        }
        for g in 0..nodes {
            for run in &runs {
                for c in 0..m {
                    let v = if g == 0 || g == nodes - 1 {
                        0.0
                    } else {
                        run.coeffs[i][(g - 1) * m + c]
                    };
                    state_atoms.push(v);
                }
            }
        }
    }
    let mut config = cfg.clone();
    config.members = members;
    config.record_steps = Some(record_steps.clone());
    EnsembleResult {
        config,
        scheme: scheme.clone(),
        mesh: mesh.clone(),
        components: m,
        measure: EmpiricalYoungMeasure {
            members,
            components: m,
            elements: ne,
            nodes,
            record_steps,
            gradient_atoms,
            state_atoms,
        },
        mean,
        mean_flux,
        member_stats: runs.into_iter().map(|r| r.stats).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `max |D U − ⟨ν, ξ⟩|` over recorded sites and components.
    pub max_discrepancy: f64,
    pub max_atom: f64,
}

impl ConsistencyReport {
    /// Gate `discrepancy ≤ tol · max|atom|`.
    pub fn passes(&self, relative_tol: f64) -> bool {
        self.max_discrepancy <= relative_tol * self.max_atom
    }
}

/// Compares the gradient of the mean field with the first moment of the measure.
pub fn gradient_consistency(result: &EnsembleResult) -> ConsistencyReport {
    let measure = &result.measure;
    let mesh = &result.mesh;
    let m = result.components;
    let mut worst = 0.0_f64;
    for &i in measure.record_steps() {
        let u = &result.mean[i];
        for e in 0..mesh.element_count() {
            let h = mesh.element_length(e);
            for c in 0..m {
                let du = (u.node_value(e + 1, c) - u.node_value(e, c)) / h;
                let v = measure_moment(measure, |a| a[c], i, e).expect("recorded site");
                worst = worst.max((du - v).abs());
            }
        }
    }
    ConsistencyReport {
        max_discrepancy: worst,
        max_atom: measure.max_atom_abs(),
    }
}

/// A probability law on the real line.
#[derive(Clone)]
pub enum ScalarLaw {
    PointMass(f64),
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Atoms at `values` (ascending) with probabilities `probs`.
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Right-continuous CDF whose support lies in `[lo, hi]`.
    Cdf {
        cdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lo: f64,
        hi: f64,
    },
}

impl fmt::Debug for ScalarLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PointMass(c) => write!(f, "PointMass({c})"),
            Self::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            Self::Discrete { values, probs } => write!(f, "Discrete({values:?}, {probs:?})"),
            Self::Cdf { lo, hi, .. } => write!(f, "Cdf([{lo}, {hi}])"),
        }
    }
}

/// Generalized inverse `F⁻¹(ω) = inf{v : F(v) ≥ ω}`; `ω = 0` maps to the lower end of the support.
pub fn inverse_cdf_sample(law: &ScalarLaw, omega: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::Domain {
            value: omega,
            lo: 0.0,
            hi: 1.0,
        });
    }
    match law {
        ScalarLaw::PointMass(c) => Ok(*c),
        ScalarLaw::Uniform { lo, hi } => Ok(lo + omega * (hi - lo)),
        ScalarLaw::Discrete { values, probs } => {
            if values.is_empty() || values.len() != probs.len() {
                return Err(Error::Config(
                    "discrete law needs matching nonempty values and probabilities".into(),
                ));
            }
            let mut cum = 0.0;
            for (v, p) in values.iter().zip(probs) {
                cum += p;
                if cum >= omega && *p > 0.0 {
                    return Ok(*v);
                }
            }
            Ok(*values.last().unwrap())
        }
        ScalarLaw::Cdf { cdf, lo, hi } => {
            if omega == 0.0 {
                return Ok(*lo);
            }
            let (mut a, mut b) = (*lo, *hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid == a || mid == b {
                    break;
                }
                if cdf(mid) >= omega {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            Ok(b)
        }
    }
}

/// One site of the measure export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSite {
    /// `(time index, element index)`.
    pub site: (usize, usize),
    pub time: f64,
    pub weight: f64,
    pub atoms: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureExport {
    pub members: usize,
    pub components: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub law: PerturbationLaw,
    pub sites: Vec<MeasureSite>,
}

impl EnsembleResult {
    pub fn measure_export(&self) -> MeasureExport {
        let measure = &self.measure;
        let mut sites = Vec::new();
        for &i in measure.record_steps() {
            for e in 0..measure.element_count() {
                let atoms = measure.atoms(i, e).expect("recorded site");
                sites.push(MeasureSite {
                    site: (i, e),
                    time: self.scheme.time(i),
                    weight: measure.weight(),
                    atoms: atoms.chunks(self.components).map(|a| a.to_vec()).collect(),
                });
            }
        }
        MeasureExport {
            members: measure.members,
            components: self.components,
            dim: 1,
            epsilon: self.config.epsilon,
            seed: self.config.seed,
            law: self.config.law,
            sites,
        }
    }

    /// Moment table `step,element,moment,value` for `ξ_c`, `|ξ|` and the supplied flux moment `a_c`.
    pub fn write_moments_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let measure = &self.measure;
        let m = self.components;
        writeln!(w, "step,element,moment,value")?;
        for &i in measure.record_steps() {
            for e in 0..measure.element_count() {
                for c in 0..m {
                    let v = measure_moment(measure, |a| a[c], i, e).expect("recorded site");
                    writeln!(w, "{i},{e},xi_{c},{v}")?;
                }
                let norm = measure_moment(
                    measure,
                    |a| a.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    i,
                    e,
                )
                .expect("recorded site");
                writeln!(w, "{i},{e},abs_xi,{norm}")?;
                for (c, v) in self.mean_flux(i, e).iter().enumerate() {
                    writeln!(w, "{i},{e},a_{c},{v}")?;
                }
            }
        }
        Ok(())
    }

    /// Mean field at every recorded step: `step,t,x,U_0,...`.
    pub fn write_mean_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.components;
        let mut header = String::from("step,t,x");
        for c in 0..m {
            header.push_str(&format!(",u{c}"));
        }
        writeln!(w, "{header}")?;
        for &i in self.measure.record_steps() {
            let u = &self.mean[i];
            for (g, x) in self.mesh.nodes().iter().enumerate() {
                let mut line = format!("{i},{},{x}", self.scheme.time(i));
                for c in 0..m {
                    line.push_str(&format!(",{}", u.node_value(g, c)));
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::l2_project;
    use crate::nonlinearity::{GrowthParams, Nonlinearity};
    use crate::stepper::{run_trajectory, CouplingMatrix, Forcing};
    use std::f64::consts::PI;

    fn heat(k: usize) -> Problem {
        let mesh = Arc::new(Mesh1D::uniform(k, (0.0, 1.0)).unwrap());
        let nl =
            Nonlinearity::power_law(GrowthParams::new(vec![2.0], vec![0.0], 1.0, 1.0)).unwrap();
        Problem::new(mesh, nl, CouplingMatrix::zero(1), Forcing::Zero).unwrap()
    }

    fn sine(p: &Problem) -> FeField {
        l2_project(p.mesh.clone(), 1, |x, o| o[0] = (PI * x).sin()).unwrap()
    }

    #[test]
    fn perturbations_are_in_the_unit_ball_and_reproducible() {
        let mesh = Arc::new(Mesh1D::uniform(16, (0.0, 1.0)).unwrap());
        for law in [
            PerturbationLaw::UniformNodal,
            PerturbationLaw::GaussianNodal,
        ] {
            let a = draw_perturbations(&mesh, 2, 8, 42, law);
            let b = draw_perturbations(&mesh, 2, 8, 42, law);
            assert_eq!(a, b);
            assert!(a.iter().all(|p| l2_norm(&p.field) <= 1.0 + 1e-15));
            assert_ne!(a[0].field, a[1].field);
        }
        let one = draw_perturbations(&mesh, 1, 1, 7, PerturbationLaw::UniformNodal);
        assert_eq!(one.len(), 1);
        assert!(l2_norm(&one[0].field) <= 1.0 + 1e-15);
    }

    #[test]
    fn perturbation_mean_is_clt_small() {
        let mesh = Arc::new(Mesh1D::uniform(32, (0.0, 1.0)).unwrap());
        for law in [
            PerturbationLaw::UniformNodal,
            PerturbationLaw::GaussianNodal,
        ] {
            let fields = draw_perturbations(&mesh, 1, 256, 3, law);
            let n = mesh.interior_count();
            let total: f64 = fields.iter().flat_map(|p| p.field.coeffs()).sum();
            let mean = total / (256 * n) as f64;
            assert!(
                mean.abs() <= 3.0 / ((256 * n) as f64).sqrt(),
                "{law}: {mean}"
            );
        }
    }

    #[test]
    fn perturb_initial_is_linear() {
        let p = heat(8);
        let u0 = sine(&p);
        let v = member_perturbation(&p.mesh, 1, 1, PerturbationLaw::UniformNodal, 0);
        assert_eq!(perturb_initial(&u0, &v, 0.0).unwrap(), u0);
        let zero = PerturbationField {
            member: 0,
            field: FeField::zeros(p.mesh.clone(), 1),
        };
        assert_eq!(perturb_initial(&u0, &zero, 0.3).unwrap(), u0);
        let eps = 0.25;
        let d = perturb_initial(&u0, &v, eps)
            .unwrap()
            .difference(&u0)
            .unwrap();
        assert!((l2_norm(&d) - eps * l2_norm(&v.field)).abs() < 1e-14);
        let other = FeField::zeros(Arc::new(Mesh1D::uniform(4, (0.0, 1.0)).unwrap()), 1);
        assert!(perturb_initial(&other, &v, 0.1).is_err());
    }

    #[test]
    fn single_member_is_the_trajectory() {
        let p = heat(8);
        let u0 = sine(&p);
        let scheme = SchemeConfig::new(0.04, 8).unwrap();
        let cfg = EnsembleConfig::new(1, 0.0, 9);
        let result = run_ensemble(&p, &u0, &scheme, &cfg).unwrap();
        let traj = run_trajectory(&p, &u0, &scheme).unwrap();
        for i in 0..=8 {
            assert_eq!(result.mean_fields()[i], *traj.snapshot(i));
        }
        let report = gradient_consistency(&result);
        assert_eq!(report.max_discrepancy, 0.0);
        let atoms = result.measure().atoms(8, 3).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(
            measure_moment(result.measure(), |a| a[0], 8, 3).unwrap(),
            atoms[0]
        );
    }

    #[test]
    fn zero_amplitude_gives_dirac_measures() {
        let p = heat(8);
        let scheme = SchemeConfig::new(0.04, 8).unwrap();
        let cfg = EnsembleConfig::new(5, 0.0, 1);
        let result = run_ensemble(&p, &sine(&p), &scheme, &cfg).unwrap();
        assert_eq!(result.measure().max_spread(), 0.0);
        assert_eq!(result.measure().record_steps(), &[0, 2, 4, 6, 8]);
    }

    #[test]
    fn moments_and_normalization() {
        let p = heat(8);
        let scheme = SchemeConfig::new(0.04, 4).unwrap();
        let cfg = EnsembleConfig::new(6, 0.5, 11);
        let result = run_ensemble(&p, &sine(&p), &scheme, &cfg).unwrap();
        let measure = result.measure();
        for &s in measure.record_steps() {
            for e in 0..8 {
                assert_eq!(measure.atoms(s, e).unwrap().len(), 6);
                assert!((measure.total_mass(s, e).unwrap() - 1.0).abs() < 1e-15);
                assert!((measure_moment(measure, |_| 1.0, s, e).unwrap() - 1.0).abs() < 1e-15);
            }
        }
        assert!(matches!(
            measure.atoms(5, 0),
            Err(Error::UnknownSite { .. })
        ));
        assert!(measure.atoms(4, 8).is_err());
        // flux moment against direct averaging
        let atoms = measure.atoms(4, 2).unwrap().to_vec();
        let direct: f64 = atoms.iter().sum::<f64>() / 6.0;
        let via = measure_moment_vec(measure, |a, out| p.nonlinearity.flux_into(a, out), 1, 4, 2)
            .unwrap();
        assert!((via[0] - direct).abs() < 1e-12 * direct.abs().max(1.0));
        assert!((result.mean_flux(4, 2)[0] - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn consistency_on_random_ensemble() {
        let p = heat(16);
        let scheme = SchemeConfig::new(0.02, 8).unwrap();
        let cfg = EnsembleConfig::new(16, 1.0, 5);
        let result = run_ensemble(&p, &sine(&p), &scheme, &cfg).unwrap();
        assert!(gradient_consistency(&result).passes(1e-12));
    }

    #[test]
    fn determinism() {
        let p = heat(8);
        let scheme = SchemeConfig::new(0.04, 4).unwrap();
        let cfg = EnsembleConfig::new(7, 0.3, 99);
        let a = run_ensemble(&p, &sine(&p), &scheme, &cfg).unwrap();
        let b = run_ensemble(&p, &sine(&p), &scheme, &cfg).unwrap();
        assert_eq!(a.measure(), b.measure());
        assert_eq!(a.mean_fields(), b.mean_fields());
    }

    #[test]
    fn config_validation() {
        assert!(EnsembleConfig::new(0, 0.1, 1).validate(4).is_err());
        assert!(EnsembleConfig::new(2, 1.5, 1).validate(4).is_err());
        assert!(EnsembleConfig::new(2, 0.0, 1).validate(4).is_ok());
        let mut c = EnsembleConfig::new(2, 0.1, 1);
        c.record_steps = Some(vec![5]);
        assert!(c.validate(4).is_err());
        assert_eq!(default_record_steps(1), vec![0, 1]);
        assert_eq!(
            "gaussian".parse::<PerturbationLaw>().unwrap(),
            PerturbationLaw::GaussianNodal
        );
    }

    #[test]
    fn inverse_cdf() {
        assert_eq!(
            inverse_cdf_sample(&ScalarLaw::PointMass(2.5), 0.7).unwrap(),
            2.5
        );
        let u = ScalarLaw::Uniform { lo: 0.0, hi: 1.0 };
        for w in [0.0, 0.25, 0.999] {
            assert_eq!(inverse_cdf_sample(&u, w).unwrap(), w);
        }
        let two = ScalarLaw::Discrete {
            values: vec![0.0, 1.0],
            probs: vec![0.3, 0.7],
        };
        assert_eq!(inverse_cdf_sample(&two, 0.2).unwrap(), 0.0);
        assert_eq!(inverse_cdf_sample(&two, 0.5).unwrap(), 1.0);
        assert_eq!(inverse_cdf_sample(&two, 0.0).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| inverse_cdf_sample(&two, rng.random::<f64>()).unwrap() == 0.0)
            .count();
        assert!((zeros as f64 / n as f64 - 0.3).abs() < 0.01);
        assert!(inverse_cdf_sample(&u, 1.0).is_err());
        assert!(inverse_cdf_sample(&u, -0.1).is_err());
        let cdf = ScalarLaw::Cdf {
            cdf: Arc::new(|v: f64| v.clamp(0.0, 2.0) / 2.0),
            lo: 0.0,
            hi: 2.0,
        };
        assert!((inverse_cdf_sample(&cdf, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(inverse_cdf_sample(&cdf, 0.0).unwrap(), 0.0);
    }
}
