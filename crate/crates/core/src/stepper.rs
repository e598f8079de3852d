//! Implicit Euler in time over the P1 Galerkin space.
//!
//! Each step solves, for every interior hat `φ`,
//!
//! ```text
//! ((u_{i+1} - u_i)/Δt, φ) + (a(Du_{i+1}), Dφ) + (B u_{i+1}, φ) = (F_{i+1}, φ)
//! ```
//!
//! with `F_{i+1}` the time average of the forcing over `[t_i, t_{i+1}]`. The
//! nonlinear system is solved by damped Newton on a finite-difference
//! Jacobian, falling back to a fixed-point iteration that treats the flux
//! explicitly.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{
    assemble_load, assemble_mass_matrix, mapped_rule, FeField, Mesh1D, SymTridiagonal,
};
use crate::nonlinearity::Nonlinearity;

/// Number of Gauss points used for time averages of the forcing.
pub const TIME_QUAD_POINTS: usize = 4;

/// Constant in the P1 inverse inequality `‖Dv‖ ≤ C_inv h⁻¹ ‖v‖` on uniform 1D meshes.
pub const INVERSE_INEQUALITY_CONSTANT: f64 = 3.464_101_615_137_754_6; // √12

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub steps: usize,
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

impl SchemeConfig {
    /// `Δt = T / N` with default solver settings.
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::Config(format!(
                "need T > 0 and N >= 1, got T = {t_final}, N = {steps}"
            )));
        }
        let cfg = Self {
            dt: t_final / steps as f64,
            steps,
            newton_tol: default_tol(),
            max_newton_iters: default_newton_iters(),
            damping: default_damping(),
            fallback_fixed_point: true,
            max_fixed_point_iters: default_fp_iters(),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("need at least one time step".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Config("newton_tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }
}

/// Constant coupling matrix `B` (row-major, `m x m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl CouplingMatrix {
    pub fn zero(m: usize) -> Self {
        Self {
            m,
            entries: vec![0.0; m * m],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Config(
                "coupling matrix must be square and nonempty".into(),
            ));
        }
        Ok(Self {
            m,
            entries: rows.iter().flatten().copied().collect(),
        })
    }

    /// The skew rotation coupling of the boundary-layer model.
    pub fn boundary_layer() -> Self {
        Self::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.m + c]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.m).map(|r| r.to_vec()).collect()
    }

    /// `out += B v`.
    #[inline]
    pub fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        for r in 0..self.m {
            let row = &self.entries[r * self.m..(r + 1) * self.m];
            out[r] += row.iter().zip(v).map(|(b, x)| b * x).sum::<f64>();
        }
    }

    /// Minimum of `Bv·v` over sampled unit vectors.
    pub fn positivity_check(&self, samples: usize, seed: u64) -> PositivityReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut min = f64::INFINITY;
        let mut bv = vec![0.0; self.m];
        for _ in 0..samples {
            let v: Vec<f64> = (0..self.m)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            if norm2 == 0.0 {
                continue;
            }
            bv.fill(0.0);
            self.apply_add(&v, &mut bv);
            let q = bv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / norm2;
            min = min.min(q);
        }
        PositivityReport {
            samples,
            min_quadratic_form: min,
            passes: min >= -1e-14 * scale.max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub samples: usize,
    pub min_quadratic_form: f64,
    pub passes: bool,
}

pub type ForcingFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;

/// Right-hand side `F(t, x)`.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    Constant(Vec<f64>),
    /// `f(t, x, out)`.
    Function(ForcingFn),
    /// Per-step nodal values on a mesh, already averaged over each time slab:
    /// `values[i - 1]` holds `F_i` at every node (boundary included), node-major.
    Slabbed {
        mesh: Arc<Mesh1D>,
        values: Vec<Vec<f64>>,
    },
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::Zero => f.write_str("Zero"),
            Forcing::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Forcing::Function(_) => f.write_str("Function(..)"),
            Forcing::Slabbed { values, .. } => write!(f, "Slabbed({} slabs)", values.len()),
        }
    }
}

impl Forcing {
    /// The constant `(-V, U, 0)` forcing of the boundary-layer model.
    pub fn boundary_layer(v: f64, u: f64) -> Self {
        Forcing::Constant(vec![-v, u, 0.0])
    }

    /// One expression per component; constant expressions collapse to [`Forcing::Constant`].
    pub fn from_exprs(exprs: Vec<Expr>) -> Self {
        if let Some(values) = exprs
            .iter()
            .map(Expr::as_constant)
            .collect::<Option<Vec<_>>>()
        {
            if values.iter().all(|&v| v == 0.0) {
                return Forcing::Zero;
            }
            return Forcing::Constant(values);
        }
        Forcing::Function(Arc::new(move |t, x, out: &mut [f64]| {
            for (o, e) in out.iter_mut().zip(&exprs) {
                *o = e.eval(x, t);
            }
        }))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Constant(v) => v.iter().all(|&x| x == 0.0),
            _ => false,
        }
    }
}

/// `F_i(x) = (1/Δt) ∫_{t_{i-1}}^{t_i} F(t, x) dt`, written into `out`.
pub fn average_forcing(forcing: &Forcing, i: usize, dt: f64, x: f64, out: &mut [f64]) {
    match forcing {
        Forcing::Zero => out.fill(0.0),
        Forcing::Constant(v) => out.copy_from_slice(v),
        Forcing::Function(f) => {
            out.fill(0.0);
            let mut buf = vec![0.0; out.len()];
            let (t0, t1) = (dt * (i as f64 - 1.0), dt * i as f64);
            for (t, w) in mapped_rule(t0, t1, TIME_QUAD_POINTS) {
                f(t, x, &mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += w * b / dt;
                }
            }
        }
        Forcing::Slabbed { mesh, values } => {
            let m = out.len();
            let slab = &values[(i - 1).min(values.len() - 1)];
            match mesh.locate(x) {
                Some(e) => {
                    let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
                    let s = (x - xl) / (xr - xl);
                    for c in 0..m {
                        out[c] = (1.0 - s) * slab[e * m + c] + s * slab[(e + 1) * m + c];
                    }
                }
                None => out.fill(0.0),
            }
        }
    }
}

/// Load vector `(F_i, φ_j)` for step `i` (two-point Gauss in space).
pub fn assemble_step_load(
    mesh: &Mesh1D,
    forcing: &Forcing,
    components: usize,
    i: usize,
    dt: f64,
) -> Vec<f64> {
    if forcing.is_zero() {
        return vec![0.0; mesh.interior_count() * components];
    }
    assemble_load(mesh, components, 2, |x, out| {
        average_forcing(forcing, i, dt, x, out)
    })
}

/// Everything that defines the PDE on a given mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: Arc<Mesh1D>,
    pub nonlinearity: Nonlinearity,
    pub coupling: CouplingMatrix,
    pub forcing: Forcing,
}

impl Problem {
    pub fn new(
        mesh: Arc<Mesh1D>,
        nonlinearity: Nonlinearity,
        coupling: CouplingMatrix,
        forcing: Forcing,
    ) -> Result<Self> {
        let m = nonlinearity.components();
        if coupling.dim() != m {
            return Err(Error::Dimension {
                expected: m,
                got: coupling.dim(),
            });
        }
        if let Forcing::Constant(v) = &forcing {
            if v.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    got: v.len(),
                });
            }
        }
        if let Forcing::Slabbed { mesh: fm, values } = &forcing {
            if values.is_empty() || values.iter().any(|v| v.len() != fm.nodes().len() * m) {
                return Err(Error::Config("slabbed forcing has wrong shape".into()));
            }
        }
        Ok(Self {
            mesh,
            nonlinearity,
            coupling,
            forcing,
        })
    }

    pub fn components(&self) -> usize {
        self.nonlinearity.components()
    }

    /// Loads for steps `1..=N`; entry `i - 1` belongs to step `i`.
    pub fn loads(&self, cfg: &SchemeConfig) -> Vec<Vec<f64>> {
        (1..=cfg.steps)
            .map(|i| assemble_step_load(&self.mesh, &self.forcing, self.components(), i, cfg.dt))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// The previous state already satisfied the tolerance.
    Trivial,
    Newton,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

/// Evaluates elementwise fluxes `a(Du)` for coefficient vector `x`.
pub fn element_fluxes(mesh: &Mesh1D, nl: &Nonlinearity, x: &[f64]) -> Result<Vec<f64>> {
    let m = nl.components();
    let ne = mesh.element_count();
    let mut out = vec![0.0; ne * m];
    let mut grad = vec![0.0; m];
    for e in 0..ne {
        element_gradient(mesh, m, x, e, &mut grad);
        nl.flux_into(&grad, &mut out[e * m..(e + 1) * m])?;
    }
    Ok(out)
}

#[inline]
fn element_gradient(mesh: &Mesh1D, m: usize, x: &[f64], e: usize, out: &mut [f64]) {
    let n = mesh.interior_count();
    let h = mesh.element_length(e);
    for c in 0..m {
        let left = if e >= 1 { x[(e - 1) * m + c] } else { 0.0 };
        let right = if e < n { x[e * m + c] } else { 0.0 };
        out[c] = (right - left) / h;
    }
}

/// Per-trajectory solver state shared by all steps (and by ensemble members).
pub struct Stepper<'a> {
    problem: &'a Problem,
    cfg: SchemeConfig,
    mass: SymTridiagonal,
    fixed_point: OnceLock<Result<BandedLu>>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a Problem, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            problem,
            cfg: cfg.clone(),
            mass: assemble_mass_matrix(&problem.mesh),
            fixed_point: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    fn unknowns(&self) -> usize {
        self.problem.mesh.interior_count() * self.problem.components()
    }

    fn bandwidth(&self) -> usize {
        2 * self.problem.components() - 1
    }

    /// Weak residual of the step equation at `x`.
    pub fn residual(&self, prev: &[f64], load: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
        let mesh = &*self.problem.mesh;
        let m = self.problem.components();
        let n = mesh.interior_count();
        let dt = self.cfg.dt;
        let coupled = !self.problem.coupling.is_zero();
        let mut w = vec![0.0; n * m];
        for k in 0..n {
            let node = k * m..(k + 1) * m;
            for c in node.clone() {
                w[c] = (x[c] - prev[c]) / dt;
            }
            if coupled {
                self.problem
                    .coupling
                    .apply_add(&x[node.clone()], &mut w[node]);
            }
        }
        let (diag, off) = (&self.mass.diag, &self.mass.off);
        for j in 0..n {
            for c in 0..m {
                let mut s = diag[j] * w[j * m + c];
                if j > 0 {
                    s += off[j - 1] * w[(j - 1) * m + c];
                }
                if j + 1 < n {
                    s += off[j] * w[(j + 1) * m + c];
                }
                out[j * m + c] = s - load[j * m + c];
            }
        }
        let mut grad = vec![0.0; m];
        let mut flux = vec![0.0; m];
        for e in 0..mesh.element_count() {
            element_gradient(mesh, m, x, e, &mut grad);
            self.problem.nonlinearity.flux_into(&grad, &mut flux)?;
            // Dφ = -1/h for the left node and +1/h for the right node; the h cancels
            if e >= 1 {
                for c in 0..m {
                    out[(e - 1) * m + c] -= flux[c];
                }
            }
            if e < n {
                for c in 0..m {
                    out[e * m + c] += flux[c];
                }
            }
        }
        Ok(())
    }

    fn jacobian(&self, prev: &[f64], load: &[f64], x: &[f64], r: &[f64]) -> Result<BandedMatrix> {
        let m = self.problem.components();
        let n = self.problem.mesh.interior_count();
        let bw = self.bandwidth();
        let mut jac = BandedMatrix::zeros(self.unknowns(), bw, bw);
        let mut xp = x.to_vec();
        let mut rp = vec![0.0; x.len()];
        let mut deltas = vec![0.0; n];
        let sqrt_eps = f64::EPSILON.sqrt();
        // nodes three apart never share a residual row
        for color in 0..3.min(n) {
            for c in 0..m {
                xp.copy_from_slice(x);
                for k in (color..n).step_by(3) {
                    let idx = k * m + c;
                    let target = x[idx] + sqrt_eps * (1.0 + x[idx].abs());
                    xp[idx] = target;
                    deltas[k] = target - x[idx];
                }
                self.residual(prev, load, &xp, &mut rp)?;
                for k in (color..n).step_by(3) {
                    let col = k * m + c;
                    for j in k.saturating_sub(1)..=(k + 1).min(n - 1) {
                        for rc in 0..m {
                            let row = j * m + rc;
                            jac.set(row, col, (rp[row] - r[row]) / deltas[k]);
                        }
                    }
                }
            }
        }
        Ok(jac)
    }

    fn fixed_point_operator(&self) -> Result<&BandedLu> {
        self.fixed_point
            .get_or_init(|| {
                let m = self.problem.components();
                let n = self.problem.mesh.interior_count();
                let bw = self.bandwidth();
                let mut op = BandedMatrix::zeros(self.unknowns(), bw, bw);
                let b = &self.problem.coupling;
                for j in 0..n {
                    for k in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                        let mjk = if j == k {
                            self.mass.diag[j]
                        } else {
                            self.mass.off[j.min(k)]
                        };
                        for c in 0..m {
                            op.add(j * m + c, k * m + c, mjk / self.cfg.dt);
                            for d in 0..m {
                                let v = mjk * b.get(c, d);
                                if v != 0.0 {
                                    op.add(j * m + c, k * m + d, v);
                                }
                            }
                        }
                    }
                }
                op.factorize()
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Solves one implicit Euler step starting from the coefficients `prev`.
    pub fn step(&self, prev: &[f64], load: &[f64]) -> Result<(Vec<f64>, StepStats)> {
        let tol = self.cfg.newton_tol;
        let len = prev.len();
        let mut x = prev.to_vec();
        let mut r = vec![0.0; len];
        self.residual(prev, load, &x, &mut r)?;
        let mut rsup = sup_norm(&r);
        if rsup <= tol {
            return Ok((
                x,
                StepStats {
                    iterations: 0,
                    residual: rsup,
                    method: SolveMethod::Trivial,
                },
            ));
        }
        let mut best = (x.clone(), rsup);
        let mut iterations = 0;
        let mut trial = vec![0.0; len];
        let mut rt = vec![0.0; len];
        'newton: while iterations < self.cfg.max_newton_iters {
            iterations += 1;
            let jac = self.jacobian(prev, load, &x, &r)?;
            let lu = match jac.factorize() {
                Ok(lu) => lu,
                Err(Error::Singular { .. }) => break 'newton,
                Err(e) => return Err(e),
            };
            let mut d: Vec<f64> = r.iter().map(|v| -v).collect();
            lu.solve_in_place(&mut d);
            let r2 = l2(&r);
            let mut lambda = 1.0;
            loop {
                for i in 0..len {
                    trial[i] = x[i] + lambda * d[i];
                }
                let ok = self.residual(prev, load, &trial, &mut rt).is_ok();
                if ok && (l2(&rt) <= (1.0 - 1e-4 * lambda) * r2 || sup_norm(&rt) <= tol) {
                    break;
                }
                lambda *= self.cfg.damping;
                if lambda < 1e-10 {
                    break 'newton;
                }
            }
            std::mem::swap(&mut x, &mut trial);
            std::mem::swap(&mut r, &mut rt);
            rsup = sup_norm(&r);
            if rsup < best.1 {
                best = (x.clone(), rsup);
            }
            if rsup <= tol {
                return Ok((
                    x,
                    StepStats {
                        iterations,
                        residual: rsup,
                        method: SolveMethod::Newton,
                    },
                ));
            }
        }
        if !self.cfg.fallback_fixed_point {
            return Err(Error::NonConvergence {
                residual: best.1,
                iterations,
            });
        }
        let op = self.fixed_point_operator()?;
        let (mut x, _) = best;
        self.residual(prev, load, &x, &mut r)?;
        let mut rsup = sup_norm(&r);
        let mut fp_iters = 0;
        while rsup > tol && fp_iters < self.cfg.max_fixed_point_iters {
            fp_iters += 1;
            op.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi -= ri;
            }
            self.residual(prev, load, &x, &mut r)?;
            rsup = sup_norm(&r);
            if !rsup.is_finite() {
                break;
            }
        }
        if rsup <= tol {
            Ok((
                x,
                StepStats {
                    iterations: iterations + fp_iters,
                    residual: rsup,
                    method: SolveMethod::FixedPoint,
                },
            ))
        } else {
            Err(Error::NonConvergence {
                residual: rsup,
                iterations: iterations + fp_iters,
            })
        }
    }

    /// Runs all `N` steps from `u0` using precomputed loads.
    pub fn run(&self, u0: &FeField, loads: &[Vec<f64>]) -> Result<Trajectory> {
        let problem = self.problem;
        if !Arc::ptr_eq(u0.mesh(), &problem.mesh) && **u0.mesh() != *problem.mesh
            || u0.components() != problem.components()
        {
            return Err(Error::MeshMismatch);
        }
        let mut snapshots = Vec::with_capacity(self.cfg.steps + 1);
        let mut stats = Vec::with_capacity(self.cfg.steps);
        snapshots.push(u0.clone());
        let mut current = u0.coeffs().to_vec();
        for i in 1..=self.cfg.steps {
            let (next, st) = self
                .step(&current, &loads[i - 1])
                .map_err(|e| Error::StepFailed {
                    step: i,
                    source: Box::new(e),
                })?;
            snapshots.push(FeField::from_coeffs(
                problem.mesh.clone(),
                problem.components(),
                next.clone(),
            )?);
            stats.push(st);
            current = next;
        }
        Ok(Trajectory {
            mesh: problem.mesh.clone(),
            components: problem.components(),
            cfg: self.cfg.clone(),
            snapshots,
            stats,
        })
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| {
        if x.abs() > m || x.is_nan() {
            x.abs()
        } else {
            m
        }
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One implicit Euler step from `u_prev` with the assembled load of the new time level.
pub fn implicit_euler_step(
    problem: &Problem,
    u_prev: &FeField,
    load: &[f64],
    cfg: &SchemeConfig,
) -> Result<(FeField, StepStats)> {
    if !u_prev.same_space(&FeField::zeros(problem.mesh.clone(), problem.components())) {
        return Err(Error::MeshMismatch);
    }
    let stepper = Stepper::new(problem, cfg)?;
    let (x, stats) = stepper.step(u_prev.coeffs(), load)?;
    Ok((
        FeField::from_coeffs(problem.mesh.clone(), problem.components(), x)?,
        stats,
    ))
}

/// Recomputes the assembled step residual independently of any solver bookkeeping.
pub fn step_residual(
    problem: &Problem,
    cfg: &SchemeConfig,
    u_prev: &FeField,
    u_next: &FeField,
    load: &[f64],
) -> Result<Vec<f64>> {
    let stepper = Stepper::new(problem, cfg)?;
    let mut r = vec![0.0; u_next.coeffs().len()];
    stepper.residual(u_prev.coeffs(), load, u_next.coeffs(), &mut r)?;
    Ok(r)
}

pub fn run_trajectory(problem: &Problem, u0h: &FeField, cfg: &SchemeConfig) -> Result<Trajectory> {
    let stepper = Stepper::new(problem, cfg)?;
    let loads = problem.loads(cfg);
    stepper.run(u0h, &loads)
}

/// The discrete solution `u_0^h, …, u_N^h` with its time interpolants.
#[derive(Debug, Clone)]
pub struct Trajectory {
    mesh: Arc<Mesh1D>,
    components: usize,
    cfg: SchemeConfig,
    snapshots: Vec<FeField>,
    stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn snapshots(&self) -> &[FeField] {
        &self.snapshots
    }

    pub fn snapshot(&self, i: usize) -> &FeField {
        &self.snapshots[i]
    }

    pub fn last(&self) -> &FeField {
        self.snapshots.last().unwrap()
    }

    pub fn stats(&self) -> &[StepStats] {
        &self.stats
    }

    pub fn steps(&self) -> usize {
        self.cfg.steps
    }

    pub fn max_residual(&self) -> f64 {
        self.stats.iter().fold(0.0, |m, s| m.max(s.residual))
    }

    /// `(index, exact)` where `exact` is true when `t` hits a time level.
    fn locate_time(&self, t: f64) -> (f64, Option<usize>) {
        let s = t / self.cfg.dt;
        let r = s.round();
        if (s - r).abs() <= 1e-9 * r.abs().max(1.0) {
            (r, Some(r as usize))
        } else {
            (s, None)
        }
    }

    /// `u_Δt(t)`: continuous, piecewise linear in time on `[0, T]`.
    pub fn interpolant_linear(&self, t: f64) -> Result<FeField> {
        let big_t = self.cfg.t_final();
        if !(t >= 0.0 && t <= big_t * (1.0 + 1e-12)) {
            return Err(Error::Domain {
                value: t,
                lo: 0.0,
                hi: big_t,
            });
        }
        let (s, exact) = self.locate_time(t);
        if let Some(i) = exact {
            return Ok(self.snapshots[i.min(self.steps())].clone());
        }
        let i = (s.ceil() as usize).clamp(1, self.steps());
        let (t0, t1) = (self.cfg.time(i - 1), self.cfg.time(i));
        let wr = (t - t0) / self.cfg.dt;
        let wl = (t1 - t) / self.cfg.dt;
        let coeffs = self.snapshots[i]
            .coeffs()
            .iter()
            .zip(self.snapshots[i - 1].coeffs())
            .map(|(a, b)| wr * a + wl * b)
            .collect();
        FeField::from_coeffs(self.mesh.clone(), self.components, coeffs)
    }

    /// `ũ_Δt(t)`: `u_i` on `(t_{i-1}, t_i]`, and `u_0` on `[-Δt, 0]`.
    pub fn interpolant_constant(&self, t: f64) -> Result<FeField> {
        let big_t = self.cfg.t_final();
        if !(t >= -self.cfg.dt * (1.0 + 1e-12) && t <= big_t * (1.0 + 1e-12)) {
            return Err(Error::Domain {
                value: t,
                lo: -self.cfg.dt,
                hi: big_t,
            });
        }
        if t <= 0.0 {
            return Ok(self.snapshots[0].clone());
        }
        let (s, exact) = self.locate_time(t);
        let i = match exact {
            Some(i) => i,
            None => s.ceil() as usize,
        }
        .clamp(0, self.steps());
        Ok(self.snapshots[i].clone())
    }

    /// Count of (step, element) pairs whose gradient lies outside the analysed regime.
    pub fn uncovered_visits(&self, nl: &Nonlinearity) -> usize {
        let m = self.components;
        let mut grad = vec![0.0; m];
        let mut count = 0;
        for snap in &self.snapshots[1..] {
            for e in 0..self.mesh.element_count() {
                element_gradient(&self.mesh, m, snap.coeffs(), e, &mut grad);
                if !nl.covers(&grad) {
                    count += 1;
                }
            }
        }
        count
    }

    /// CSV with one row per time level: `step,t,u<c>_n<g>...` over all nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let nodes = self.mesh.nodes().len();
        let mut header = String::from("step,t");
        for g in 0..nodes {
            for c in 0..self.components {
                header.push_str(&format!(",u{c}_n{g}"));
            }
        }
        writeln!(w, "{header}")?;
        for (i, snap) in self.snapshots.iter().enumerate() {
            let mut line = format!("{i},{}", self.cfg.time(i));
            for g in 0..nodes {
                for c in 0..self.components {
                    line.push_str(&format!(",{}", snap.node_value(g, c)));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Advisory step-size bound for the contraction estimate of continuous dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtAdvisory {
    /// `C = 2 L C_inv² / h²`.
    pub constant: f64,
    /// Step with `C Δt = 1/2`; `None` means no restriction.
    pub dt: Option<f64>,
}

/// Advisory only: the solver never enforces it.
pub fn max_stable_dt_advisory(h: f64, lipschitz_estimate: f64) -> DtAdvisory {
    let constant =
        2.0 * lipschitz_estimate * INVERSE_INEQUALITY_CONSTANT * INVERSE_INEQUALITY_CONSTANT
            / (h * h);
    DtAdvisory {
        constant,
        dt: if constant > 0.0 {
            Some(0.5 / constant)
        } else {
            None
        },
    }
}
