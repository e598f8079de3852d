//! One-dimensional P1 finite elements with homogeneous Dirichlet data.
//!
//! Unknowns are interleaved node-major: the coefficient of component `c` at
//! interior node `j` lives at index `j * m + c`. Interior node `j` is global
//! node `j + 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]` for 1 to 5 points.
pub fn gauss_legendre(points: usize) -> (&'static [f64], &'static [f64]) {
    const X1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const X2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    const X4: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const W4: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    const X5: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W5: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    match points {
        1 => (&X1, &W1),
        2 => (&X2, &W2),
        3 => (&X3, &W3),
        4 => (&X4, &W4),
        _ => (&X5, &W5),
    }
}

/// Quadrature points already mapped to `[a, b]`.
pub fn mapped_rule(a: f64, b: f64, points: usize) -> impl Iterator<Item = (f64, f64)> {
    let (xs, ws) = gauss_legendre(points);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    xs.iter()
        .zip(ws)
        .map(move |(x, w)| (mid + half * x, half * w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    nodes: Vec<f64>,
}

impl Mesh1D {
    /// Uniform partition of `[a, b]` into `elements` pieces.
    pub fn uniform(elements: usize, domain: (f64, f64)) -> Result<Self> {
        let (a, b) = domain;
        if elements < 2 {
            return Err(Error::Config(format!(
                "a mesh needs at least 2 elements, got {elements}"
            )));
        }
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Config(format!("degenerate interval ({a}, {b})")));
        }
        let h = (b - a) / elements as f64;
        let mut nodes: Vec<f64> = (0..=elements).map(|i| a + h * i as f64).collect();
        nodes[elements] = b;
        Ok(Self { nodes })
    }

    /// Mesh from an explicit, strictly increasing node list.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Config("a mesh needs at least 2 elements".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "mesh nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn element_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn interior_count(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.nodes[0], *self.nodes.last().unwrap())
    }

    pub fn measure(&self) -> f64 {
        let (a, b) = self.domain();
        b - a
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// Largest element length.
    pub fn h(&self) -> f64 {
        (0..self.element_count())
            .map(|e| self.element_length(e))
            .fold(0.0, f64::max)
    }

    pub fn is_boundary_node(&self, g: usize) -> bool {
        g == 0 || g == self.nodes.len() - 1
    }

    /// Element containing `x` (right-closed except for the first element).
    pub fn locate(&self, x: f64) -> Option<usize> {
        let (a, b) = self.domain();
        if !(x >= a && x <= b) {
            return None;
        }
        let idx = self.nodes.partition_point(|&n| n < x);
        Some(idx.saturating_sub(1).min(self.element_count() - 1))
    }
}

/// Symmetric tridiagonal matrix over the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_banded(&self) -> BandedMatrix {
        let n = self.dim();
        let mut b = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            b.set(i, i, self.diag[i]);
            if i + 1 < n {
                b.set(i, i + 1, self.off[i]);
                b.set(i + 1, i, self.off[i]);
            }
        }
        b
    }

    pub fn factorize(&self) -> Result<BandedLu> {
        self.to_banded().factorize()
    }
}

/// Consistent P1 mass matrix restricted to interior nodes.
pub fn assemble_mass_matrix(mesh: &Mesh1D) -> SymTridiagonal {
    let n = mesh.interior_count();
    let diag = (0..n)
        .map(|j| (mesh.element_length(j) + mesh.element_length(j + 1)) / 3.0)
        .collect();
    let off = (0..n.saturating_sub(1))
        .map(|j| mesh.element_length(j + 1) / 6.0)
        .collect();
    SymTridiagonal { diag, off }
}

/// P1 stiffness matrix `(Dφ_j, Dφ_k)` restricted to interior nodes.
pub fn assemble_stiffness_matrix(mesh: &Mesh1D) -> SymTridiagonal {
    let n = mesh.interior_count();
    let diag = (0..n)
        .map(|j| 1.0 / mesh.element_length(j) + 1.0 / mesh.element_length(j + 1))
        .collect();
    let off = (0..n.saturating_sub(1))
        .map(|j| -1.0 / mesh.element_length(j + 1))
        .collect();
    SymTridiagonal { diag, off }
}

/// An `m`-component continuous piecewise-linear field vanishing on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FeField {
    mesh: Arc<Mesh1D>,
    components: usize,
    coeffs: Vec<f64>,
}

impl FeField {
    pub fn zeros(mesh: Arc<Mesh1D>, components: usize) -> Self {
        let len = mesh.interior_count() * components;
        Self {
            mesh,
            components,
            coeffs: vec![0.0; len],
        }
    }

    pub fn from_coeffs(mesh: Arc<Mesh1D>, components: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = mesh.interior_count() * components;
        if coeffs.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            mesh,
            components,
            coeffs,
        })
    }

    /// Nodal interpolant of `f` (boundary values are discarded).
    pub fn interpolate<F>(mesh: Arc<Mesh1D>, components: usize, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]),
    {
        let mut coeffs = Vec::with_capacity(mesh.interior_count() * components);
        let mut buf = vec![0.0; components];
        for &x in &mesh.nodes()[1..mesh.nodes().len() - 1] {
            f(x, &mut buf);
            coeffs.extend_from_slice(&buf);
        }
        Self {
            mesh,
            components,
            coeffs,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn same_space(&self, other: &FeField) -> bool {
        self.components == other.components
            && (Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh == other.mesh)
    }

    /// Value of component `c` at global node `g`.
    pub fn node_value(&self, g: usize, c: usize) -> f64 {
        if self.mesh.is_boundary_node(g) {
            0.0
        } else {
            self.coeffs[(g - 1) * self.components + c]
        }
    }

    /// Values at a global node (zero vector on the boundary).
    pub fn node_vector(&self, g: usize) -> Vec<f64> {
        (0..self.components)
            .map(|c| self.node_value(g, c))
            .collect()
    }

    /// Point evaluation; `None` outside the domain.
    pub fn evaluate(&self, x: f64) -> Option<Vec<f64>> {
        let e = self.mesh.locate(x)?;
        let (xl, xr) = (self.mesh.nodes()[e], self.mesh.nodes()[e + 1]);
        let s = (x - xl) / (xr - xl);
        Some(
            (0..self.components)
                .map(|c| (1.0 - s) * self.node_value(e, c) + s * self.node_value(e + 1, c))
                .collect(),
        )
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeField) -> Result<()> {
        if !self.same_space(other) {
            return Err(Error::MeshMismatch);
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn difference(&self, other: &FeField) -> Result<FeField> {
        let mut d = self.clone();
        d.axpy(-1.0, other)?;
        Ok(d)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.coeffs.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Elementwise-constant gradient of a P1 field; in 1D each row is a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGradient {
    components: usize,
    values: Vec<f64>,
}

impl ElementGradient {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn element_count(&self) -> usize {
        self.values.len() / self.components
    }

    /// The `m x 1` gradient matrix on element `e`.
    pub fn at(&self, e: usize) -> &[f64] {
        &self.values[e * self.components..(e + 1) * self.components]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn gradient(field: &FeField) -> ElementGradient {
    let mesh = field.mesh();
    let m = field.components();
    let mut values = Vec::with_capacity(mesh.element_count() * m);
    for e in 0..mesh.element_count() {
        let h = mesh.element_length(e);
        for c in 0..m {
            values.push((field.node_value(e + 1, c) - field.node_value(e, c)) / h);
        }
    }
    ElementGradient {
        components: m,
        values,
    }
}

/// Load vector `(f, φ_j)` for every interior hat, per component.
pub fn assemble_load<F>(mesh: &Mesh1D, components: usize, quad_points: usize, f: F) -> Vec<f64>
where
    F: Fn(f64, &mut [f64]),
{
    let n = mesh.interior_count();
    let mut load = vec![0.0; n * components];
    let mut buf = vec![0.0; components];
    for e in 0..mesh.element_count() {
        let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
        let h = xr - xl;
        for (x, w) in mapped_rule(xl, xr, quad_points) {
            f(x, &mut buf);
            let right = (x - xl) / h;
            let left = 1.0 - right;
            // left endpoint is global node e, i.e. interior index e-1
            if e >= 1 {
                for c in 0..components {
                    load[(e - 1) * components + c] += w * left * buf[c];
                }
            }
            if e < n {
                for c in 0..components {
                    load[e * components + c] += w * right * buf[c];
                }
            }
        }
    }
    load
}

/// Solves `(M ⊗ I_m) x = b` component by component.
pub fn solve_mass(mass_lu: &BandedLu, components: usize, b: &[f64]) -> Vec<f64> {
    let n = b.len() / components;
    let mut out = vec![0.0; b.len()];
    let mut col = vec![0.0; n];
    for c in 0..components {
        for j in 0..n {
            col[j] = b[j * components + c];
        }
        mass_lu.solve_in_place(&mut col);
        for j in 0..n {
            out[j * components + c] = col[j];
        }
    }
    out
}

/// L² projection onto the P1 space with the given number of Gauss points per element.
pub fn l2_project_with<F>(
    mesh: Arc<Mesh1D>,
    components: usize,
    quad_points: usize,
    f: F,
) -> Result<FeField>
where
    F: Fn(f64, &mut [f64]),
{
    let load = assemble_load(&mesh, components, quad_points, f);
    let lu = assemble_mass_matrix(&mesh).factorize()?;
    let coeffs = solve_mass(&lu, components, &load);
    FeField::from_coeffs(mesh, components, coeffs)
}

/// L² projection using the default two-point Gauss rule.
pub fn l2_project<F>(mesh: Arc<Mesh1D>, components: usize, f: F) -> Result<FeField>
where
    F: Fn(f64, &mut [f64]),
{
    l2_project_with(mesh, components, 2, f)
}

/// Component-wise `Σ_c α_c^T M β_c` for a precomputed mass matrix.
pub fn mass_inner(mass: &SymTridiagonal, components: usize, a: &[f64], b: &[f64]) -> f64 {
    let n = mass.dim();
    let mut s = 0.0;
    for j in 0..n {
        for c in 0..components {
            let mut mb = mass.diag[j] * b[j * components + c];
            if j > 0 {
                mb += mass.off[j - 1] * b[(j - 1) * components + c];
            }
            if j + 1 < n {
                mb += mass.off[j] * b[(j + 1) * components + c];
            }
            s += a[j * components + c] * mb;
        }
    }
    s
}

pub fn l2_inner(a: &FeField, b: &FeField) -> Result<f64> {
    if !a.same_space(b) {
        return Err(Error::MeshMismatch);
    }
    let mass = assemble_mass_matrix(a.mesh());
    Ok(mass_inner(&mass, a.components(), a.coeffs(), b.coeffs()))
}

pub fn l2_norm(a: &FeField) -> f64 {
    let mass = assemble_mass_matrix(a.mesh());
    mass_inner(&mass, a.components(), a.coeffs(), a.coeffs())
        .max(0.0)
        .sqrt()
}

/// `‖u_h − f‖_{L²}` evaluated with a `quad_points`-point Gauss rule per element.
pub fn l2_error<F>(field: &FeField, quad_points: usize, f: F) -> f64
where
    F: Fn(f64, &mut [f64]),
{
    let mesh = field.mesh();
    let m = field.components();
    let mut buf = vec![0.0; m];
    let mut s = 0.0;
    for e in 0..mesh.element_count() {
        let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
        for (x, w) in mapped_rule(xl, xr, quad_points) {
            f(x, &mut buf);
            let t = (x - xl) / (xr - xl);
            for c in 0..m {
                let uh = (1.0 - t) * field.node_value(e, c) + t * field.node_value(e + 1, c);
                s += w * (uh - buf[c]).powi(2);
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(k: usize) -> Arc<Mesh1D> {
        Arc::new(Mesh1D::uniform(k, (0.0, 1.0)).unwrap())
    }

    #[test]
    fn uniform_meshes() {
        assert_eq!(unit(4).nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(unit(2).nodes(), &[0.0, 0.5, 1.0]);
        assert!(matches!(
            Mesh1D::uniform(1, (0.0, 1.0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Mesh1D::uniform(4, (1.0, 1.0)),
            Err(Error::Config(_))
        ));
        let m = unit(7);
        let total: f64 = (0..7).map(|e| m.element_length(e)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(m.is_boundary_node(0) && m.is_boundary_node(7) && !m.is_boundary_node(3));
    }

    #[test]
    fn explicit_nodes_are_validated() {
        assert!(Mesh1D::from_nodes(vec![0.0, 0.3, 1.0]).is_ok());
        assert!(Mesh1D::from_nodes(vec![0.0, 0.3, 0.3, 1.0]).is_err());
        assert!(Mesh1D::from_nodes(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn mass_matrix_rows() {
        let mass = assemble_mass_matrix(&unit(4));
        // hat-product integrals: 2h/3 on the diagonal, h/6 off it
        assert!((mass.diag[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((mass.off[0] - 1.0 / 24.0).abs() < 1e-15);
        assert!((mass.off[1] - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn mass_matrix_is_symmetric_on_nonuniform_mesh() {
        let mesh = Mesh1D::from_nodes(vec![0.0, 0.1, 0.35, 0.4, 0.8, 1.0]).unwrap();
        let b = assemble_mass_matrix(&mesh).to_banded();
        let t = b.transpose();
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                assert_eq!(b.get(i, j), t.get(i, j));
            }
        }
    }

    #[test]
    fn mass_matrix_smallest_eigenvalue_is_positive() {
        // shifted power iteration: largest eigenvalue of (σI − M) gives σ − λ_min
        let mass = assemble_mass_matrix(&unit(8));
        let n = mass.dim();
        // Gershgorin bound on the spectrum: 2h/3 + 2·h/6 = h
        let sigma = 0.125;
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let mv = mass.mul_vec(&v);
            let w: Vec<f64> = v.iter().zip(&mv).map(|(a, b)| sigma * a - b).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
                / v.iter().map(|x| x * x).sum::<f64>();
            v = w.iter().map(|x| x / norm).collect();
        }
        let lambda_min = sigma - lambda;
        // exact: h/3 (2 + cos(k π h)) at k = n, h = 1/8
        let h = 0.125;
        let exact = h / 3.0 * (2.0 + (7.0 * PI * h).cos());
        assert!(lambda_min > 0.0);
        assert!((lambda_min - exact).abs() < 1e-8, "{lambda_min} vs {exact}");
    }

    #[test]
    fn projection_is_identity_on_p1() {
        let mesh = unit(5);
        let f = |x: f64, out: &mut [f64]| {
            // piecewise linear with kinks at nodes, zero at the boundary
            let nodal = [0.0, 0.3, -0.2, 0.5, 0.1, 0.0];
            let e = ((x * 5.0).floor() as usize).min(4);
            let s = x * 5.0 - e as f64;
            out[0] = (1.0 - s) * nodal[e] + s * nodal[e + 1];
        };
        let p = l2_project(mesh, 1, f).unwrap();
        for (c, e) in p.coeffs().iter().zip([0.3, -0.2, 0.5, 0.1]) {
            assert!((c - e).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_of_zero_is_zero() {
        let p = l2_project(unit(6), 2, |_, out| out.fill(0.0)).unwrap();
        assert!(p.coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_error_is_second_order() {
        let f = |x: f64, out: &mut [f64]| out[0] = (PI * x).sin();
        let e64 = l2_error(&l2_project(unit(64), 1, f).unwrap(), 5, f);
        let e128 = l2_error(&l2_project(unit(128), 1, f).unwrap(), 5, f);
        let rate = (e64 / e128).log2();
        assert!((rate - 2.0).abs() < 0.05, "rate {rate}");
        // best approximation beats the interpolation bound h²/√120 ‖f''‖
        let bound = (1.0 / 64.0f64).powi(2) / 120f64.sqrt() * PI * PI / 2f64.sqrt();
        assert!(e64 < bound, "{e64} vs {bound}");
    }

    #[test]
    fn gradients() {
        let mesh = unit(2);
        let u = FeField::from_coeffs(mesh.clone(), 1, vec![1.0]).unwrap();
        assert_eq!(gradient(&u).values(), &[2.0, -2.0]);
        let z = FeField::zeros(mesh.clone(), 3);
        assert!(gradient(&z).values().iter().all(|&g| g == 0.0));
        let q = FeField::interpolate(mesh, 1, |x, out| out[0] = x * (1.0 - x));
        assert_eq!(gradient(&q).values(), &[0.5, -0.5]);
    }

    #[test]
    fn norms() {
        let mesh = unit(2);
        let hat = FeField::from_coeffs(mesh.clone(), 1, vec![1.0]).unwrap();
        assert!((l2_norm(&hat).powi(2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(l2_norm(&FeField::zeros(mesh, 1)), 0.0);
    }

    #[test]
    fn norm_matches_two_point_gauss() {
        let mesh = Arc::new(Mesh1D::from_nodes(vec![0.0, 0.2, 0.45, 0.5, 0.9, 1.0]).unwrap());
        let u = FeField::from_coeffs(
            mesh.clone(),
            2,
            vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.1, 0.0, 4.0],
        )
        .unwrap();
        let mut quad = 0.0;
        for e in 0..mesh.element_count() {
            let (xl, xr) = (mesh.nodes()[e], mesh.nodes()[e + 1]);
            for (x, w) in mapped_rule(xl, xr, 2) {
                quad += w * u.evaluate(x).unwrap().iter().map(|v| v * v).sum::<f64>();
            }
        }
        let n2 = l2_norm(&u).powi(2);
        assert!((n2 - quad).abs() < 1e-14 * quad, "{n2} vs {quad}");
    }

    #[test]
    fn evaluation_on_boundary_is_zero() {
        let u = FeField::from_coeffs(unit(3), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(u.evaluate(0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(u.evaluate(1.0).unwrap(), vec![0.0, 0.0]);
        assert!(u.evaluate(1.5).is_none());
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let a = FeField::zeros(unit(3), 1);
        let b = FeField::zeros(unit(4), 1);
        assert_eq!(l2_inner(&a, &b), Err(Error::MeshMismatch));
    }
}
