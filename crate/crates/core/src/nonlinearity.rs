//! Diffusion nonlinearities of the form `a(A) = K(A) A` together with the
//! structural diagnostics used to decide whether a given `K` fits the growth
//! framework: sampled growth bounds, monotonicity witnesses and `E_r` norms.
//!
//! Gradient matrices are `m x n` and stored row-major; in one space dimension
//! a gradient is just a slice of `m` numbers.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural exponents and constants of the growth sandwich
/// `c0 Σ (μ_i² + |A_i|²)^{(p_i-2)/2} ≤ K(A) ≤ c1 Σ (...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    /// Number of solution components `m`.
    pub m: usize,
    /// Spatial dimension `n`.
    #[serde(default = "one")]
    pub n: usize,
    pub p: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(default = "unit")]
    pub c0: f64,
    #[serde(default = "unit")]
    pub c1: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl GrowthParams {
    pub fn new(p: Vec<f64>, mu: Vec<f64>, c0: f64, c1: f64) -> Self {
        Self {
            m: p.len(),
            n: 1,
            p,
            mu,
            c0,
            c1,
        }
    }

    /// All structural violations; an empty list means the parameters are admissible.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m == 0 || self.n == 0 {
            out.push("m and n must be positive".to_string());
        }
        if self.p.len() != self.m || self.mu.len() != self.m {
            out.push(format!(
                "expected {} exponents and offsets, got {} and {}",
                self.m,
                self.p.len(),
                self.mu.len()
            ));
            return out;
        }
        let floor = 1f64.max(2.0 * self.n as f64 / (self.n as f64 + 2.0));
        for (i, (&p, &mu)) in self.p.iter().zip(&self.mu).enumerate() {
            if !(p > floor) {
                out.push(format!("p_{} = {p} must exceed {floor}", i + 1));
            }
            if p > 1.0 && p < 2.0 && mu == 0.0 {
                out.push(format!(
                    "mu_{} must be nonzero because 1 < p_{} < 2",
                    i + 1,
                    i + 1
                ));
            }
        }
        if self.m > 0 && !(self.q() - self.p_min() < 1.0) {
            out.push(format!(
                "q - p = {} - {} must be below 1",
                self.q(),
                self.p_min()
            ));
        }
        if !(self.c0 > 0.0 && self.c0 <= self.c1 && self.c1.is_finite()) {
            out.push(format!(
                "need 0 < c0 <= c1, got c0 = {}, c1 = {}",
                self.c0, self.c1
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// `p = min p_i`.
    pub fn p_min(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `q = max p_i`.
    pub fn q(&self) -> f64 {
        self.p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `q̂ = max(q, 2)`.
    pub fn q_hat(&self) -> f64 {
        self.q().max(2.0)
    }

    /// `q̂' = q̂ / (q̂ - 1)`.
    pub fn q_hat_conjugate(&self) -> f64 {
        let q = self.q_hat();
        q / (q - 1.0)
    }

    /// `Σ_i (μ_i² + |A_i|²)^{(p_i-2)/2}` for a row-major `m x n` matrix.
    pub fn growth_sum(&self, a: &[f64]) -> f64 {
        let n = self.n;
        (0..self.m)
            .map(|i| {
                let row2: f64 = a[i * n..(i + 1) * n].iter().map(|v| v * v).sum();
                (self.mu[i] * self.mu[i] + row2).powf(0.5 * (self.p[i] - 2.0))
            })
            .sum()
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NonlinearityKind {
    /// `K(A) = Σ_i (μ_i² + |A_i|²)^{(p_i-2)/2}`.
    PowerLaw(GrowthParams),
    /// Two-branch stability function of the atmospheric boundary-layer model.
    Becu,
    /// `K(A) = sqrt(A_1² + A_2² + |A_3|)`.
    Example2,
    Custom {
        name: String,
        k: ScalarFn,
    },
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerLaw(p) => f.debug_tuple("PowerLaw").field(p).finish(),
            Self::Becu => f.write_str("Becu"),
            Self::Example2 => f.write_str("Example2"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// An evaluator for `K` and the flux `a(A) = K(A) A`.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    components: usize,
    dim: usize,
}

/// Names accepted by [`Nonlinearity::from_name`].
pub const REGISTRY: [&str; 3] = ["power_law", "becu", "example2"];

impl Nonlinearity {
    pub fn power_law(params: GrowthParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::power_law_unchecked(params))
    }

    /// Power law without structural validation (for deliberately uncovered regimes).
    pub fn power_law_unchecked(params: GrowthParams) -> Self {
        let (components, dim) = (params.m, params.n);
        Self {
            kind: NonlinearityKind::PowerLaw(params),
            components,
            dim,
        }
    }

    pub fn becu() -> Self {
        Self {
            kind: NonlinearityKind::Becu,
            components: 3,
            dim: 1,
        }
    }

    pub fn example2() -> Self {
        Self {
            kind: NonlinearityKind::Example2,
            components: 3,
            dim: 1,
        }
    }

    pub fn custom<F>(name: &str, components: usize, k: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: NonlinearityKind::Custom {
                name: name.to_string(),
                k: Arc::new(k),
            },
            components,
            dim: 1,
        }
    }

    /// Registry lookup. `power_law` requires growth parameters; the checks on
    /// them are skipped when `allow_uncovered` is set.
    pub fn from_name(
        name: &str,
        params: Option<&GrowthParams>,
        allow_uncovered: bool,
    ) -> Result<Self> {
        match name {
            "power_law" => {
                let params = params.ok_or_else(|| {
                    Error::Config("power_law needs growth parameters".to_string())
                })?;
                if allow_uncovered {
                    if params.p.len() != params.m || params.mu.len() != params.m {
                        return Err(Error::Config(
                            "growth parameter lengths differ from m".into(),
                        ));
                    }
                    Ok(Self::power_law_unchecked(params.clone()))
                } else {
                    Self::power_law(params.clone())
                }
            }
            "becu" => Ok(Self::becu()),
            "example2" => Ok(Self::example2()),
            other => Err(Error::Config(format!(
                "unknown nonlinearity '{other}', expected one of {REGISTRY:?}"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            NonlinearityKind::PowerLaw(_) => "power_law",
            NonlinearityKind::Becu => "becu",
            NonlinearityKind::Example2 => "example2",
            NonlinearityKind::Custom { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Growth parameters carried by the evaluator itself, if any.
    pub fn growth_claim(&self) -> Option<&GrowthParams> {
        match &self.kind {
            NonlinearityKind::PowerLaw(p) => Some(p),
            _ => None,
        }
    }

    /// False when some part of gradient space lies outside the analysed regime.
    pub fn theory_covered(&self) -> bool {
        !matches!(self.kind, NonlinearityKind::Becu)
    }

    /// Whether the analysed regime contains the gradient `a`.
    pub fn covers(&self, a: &[f64]) -> bool {
        match self.kind {
            NonlinearityKind::Becu => a[2] <= 0.0,
            _ => true,
        }
    }

    pub fn k(&self, a: &[f64]) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerLaw(p) => p.growth_sum(a),
            NonlinearityKind::Becu => becu_stability(a),
            NonlinearityKind::Example2 => example2_k(a),
            NonlinearityKind::Custom { k, .. } => k(a),
        }
    }

    /// Writes `a(A) = K(A) A` into `out`.
    pub fn flux_into(&self, a: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.k(a);
        if !k.is_finite() {
            return Err(Error::Evaluation {
                gradient: a.to_vec(),
            });
        }
        for (o, v) in out.iter_mut().zip(a) {
            *o = k * v;
        }
        Ok(())
    }

    pub fn a_eval(&self, a: &[f64]) -> Result<Vec<f64>> {
        let expected = self.components * self.dim;
        if a.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: a.len(),
            });
        }
        let mut out = vec![0.0; a.len()];
        self.flux_into(a, &mut out)?;
        Ok(out)
    }
}

/// Stability function `K` for a `3 x 1` gradient. The origin falls in the
/// `A_3 <= 0` branch and gives zero.
pub fn becu_stability(a: &[f64]) -> f64 {
    let s2 = a[0] * a[0] + a[1] * a[1];
    if a[2] > 0.0 {
        s2 * s2.sqrt() / (s2 + a[2])
    } else {
        (s2 - a[2]).sqrt()
    }
}

pub fn example2_k(a: &[f64]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2].abs()).sqrt()
}

/// `(a(ξ) - a(η)) : (ξ - η)`; negative values witness non-monotonicity.
pub fn monotonicity_indicator(nl: &Nonlinearity, xi: &[f64], eta: &[f64]) -> Result<f64> {
    let a = nl.a_eval(xi)?;
    let b = nl.a_eval(eta)?;
    Ok(a.iter()
        .zip(&b)
        .zip(xi.iter().zip(eta))
        .map(|((ax, bx), (x, y))| (ax - bx) * (x - y))
        .sum())
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = frobenius(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Radius schedule and sample count for the sampling-based diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub radii: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 10.0, 100.0, 1000.0],
            samples: 10_000,
            seed: 0x5eed,
        }
    }
}

impl Sampler {
    /// Points spread over the shells `(r_{k-1}, r_k]` with uniform directions.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shells = self.radii.len().max(1);
        (0..self.samples)
            .map(|s| {
                let k = s % shells;
                let hi = self.radii.get(k).copied().unwrap_or(1.0);
                let lo = if k == 0 { 0.0 } else { self.radii[k - 1] };
                let r = lo + (hi - lo) * (1.0 - rng.random::<f64>());
                random_direction(&mut rng, dim)
                    .into_iter()
                    .map(|x| r * x)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub skipped: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Sample attaining the smallest ratio.
    pub argmin: Vec<f64>,
}

impl GrowthReport {
    pub fn violations(&self) -> usize {
        self.lower_violations + self.upper_violations
    }
}

/// Relative slack applied to both sides of the growth sandwich to absorb rounding.
pub const GROWTH_SLACK: f64 = 1e-12;

/// Samples `K(A) / Σ_i (μ_i² + |A_i|²)^{(p_i-2)/2}` and counts violations of `[c0, c1]`.
pub fn check_growth(nl: &Nonlinearity, params: &GrowthParams, sampler: &Sampler) -> GrowthReport {
    let dim = params.m * params.n;
    let mut report = GrowthReport {
        samples: 0,
        skipped: 0,
        lower_violations: 0,
        upper_violations: 0,
        min_ratio: f64::INFINITY,
        max_ratio: f64::NEG_INFINITY,
        argmin: Vec::new(),
    };
    for a in sampler.points(dim) {
        report.samples += 1;
        let k = nl.k(&a);
        let sum = params.growth_sum(&a);
        if !(sum > 0.0) || !sum.is_finite() || !k.is_finite() {
            report.skipped += 1;
            continue;
        }
        let ratio = k / sum;
        if ratio < params.c0 * (1.0 - GROWTH_SLACK) {
            report.lower_violations += 1;
        }
        if ratio > params.c1 * (1.0 + GROWTH_SLACK) {
            report.upper_violations += 1;
        }
        if ratio < report.min_ratio {
            report.min_ratio = ratio;
            report.argmin = a.clone();
        }
        report.max_ratio = report.max_ratio.max(ratio);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErEstimate {
    pub r: f64,
    /// Running supremum after each radius of the schedule (origin included first).
    pub running: Vec<(f64, f64)>,
    pub estimate: f64,
}

/// Lower estimate of `sup_A |g(A)| / (1 + |A|^r)` from samples on the spheres
/// of the given radii plus the origin.
pub fn estimate_er_norm<G>(
    g: G,
    dim: usize,
    r: f64,
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
) -> Result<ErEstimate>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(r > 0.0) {
        return Err(Error::Config(format!(
            "E_r exponent must be positive, got {r}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratio = |a: &[f64]| frobenius(&g(a)) / (1.0 + frobenius(a).powf(r));
    let mut best = ratio(&vec![0.0; dim]);
    let mut running = vec![(0.0, best)];
    for &radius in radii {
        for _ in 0..samples_per_radius {
            let a: Vec<f64> = random_direction(&mut rng, dim)
                .into_iter()
                .map(|x| radius * x)
                .collect();
            let v = ratio(&a);
            if v > best {
                best = v;
            }
        }
        running.push((radius, best));
    }
    Ok(ErEstimate {
        r,
        running,
        estimate: best,
    })
}

/// Largest difference quotient `|a(ξ) - a(η)| / |ξ - η|` over close pairs
/// drawn uniformly from the ball of the given radius.
pub fn estimate_lipschitz(nl: &Nonlinearity, radius: f64, pairs: usize, seed: u64) -> f64 {
    let dim = nl.components() * nl.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6 * (1.0 + radius);
    let mut best: f64 = 0.0;
    let mut fa = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    for _ in 0..pairs {
        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
        let xi: Vec<f64> = random_direction(&mut rng, dim)
            .into_iter()
            .map(|x| r * x)
            .collect();
        let dir = random_direction(&mut rng, dim);
        let eta: Vec<f64> = xi.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
        if nl.flux_into(&xi, &mut fa).is_err() || nl.flux_into(&eta, &mut fb).is_err() {
            continue;
        }
        let num: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = xi
            .iter()
            .zip(&eta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p4() -> Nonlinearity {
        Nonlinearity::power_law(GrowthParams::new(vec![4.0], vec![0.0], 1.0, 1.0)).unwrap()
    }

    #[test]
    fn power_law_values() {
        let lin =
            Nonlinearity::power_law(GrowthParams::new(vec![2.0], vec![0.7], 1.0, 1.0)).unwrap();
        for a in [-3.0, 0.0, 0.1, 17.0] {
            assert_eq!(lin.k(&[a]), 1.0);
        }
        assert_eq!(p4().k(&[2.0]), 4.0);
        assert_eq!(p4().a_eval(&[2.0]).unwrap(), vec![8.0]);
        let two =
            Nonlinearity::power_law(GrowthParams::new(vec![2.0, 2.0], vec![0.0, 0.0], 1.0, 1.0))
                .unwrap();
        assert_eq!(two.k(&[5.0, -1.0]), 2.0);
    }

    #[test]
    fn invalid_growth_params_are_rejected() {
        // p ≤ 1
        assert!(GrowthParams::new(vec![1.0], vec![1.0], 1.0, 1.0)
            .validate()
            .is_err());
        // q - p ≥ 1
        assert!(GrowthParams::new(vec![2.0, 3.0], vec![0.0, 0.0], 1.0, 1.0)
            .validate()
            .is_err());
        // μ = 0 with 1 < p < 2
        assert!(GrowthParams::new(vec![1.5], vec![0.0], 1.0, 1.0)
            .validate()
            .is_err());
        // c0 > c1
        assert!(GrowthParams::new(vec![2.0], vec![0.0], 2.0, 1.0)
            .validate()
            .is_err());
        assert!(GrowthParams::new(vec![1.5], vec![0.5], 0.5, 1.0)
            .validate()
            .is_ok());
        // n = 3 raises the exponent floor to 6/5
        let mut p = GrowthParams::new(vec![1.1], vec![1.0], 1.0, 1.0);
        p.n = 3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn derived_exponents() {
        let p = GrowthParams::new(vec![1.5, 2.3], vec![1.0, 0.0], 1.0, 1.0);
        assert_eq!(p.p_min(), 1.5);
        assert_eq!(p.q(), 2.3);
        assert_eq!(p.q_hat(), 2.3);
        assert!((p.q_hat_conjugate() - 2.3 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn becu_branches() {
        assert_eq!(becu_stability(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(becu_stability(&[0.0, 0.0, -4.0]), 2.0);
        assert_eq!(becu_stability(&[1.0, 0.0, 1.0]), 0.5);
        assert_eq!(becu_stability(&[0.0, 0.0, 0.0]), 0.0);
        // A_1 = A_2 = 0 on the first branch is finite
        assert_eq!(becu_stability(&[0.0, 0.0, 3.0]), 0.0);
        let nl = Nonlinearity::becu();
        assert_eq!(nl.a_eval(&[0.0, 0.0, -4.0]).unwrap(), vec![0.0, 0.0, -8.0]);
        assert!(!nl.covers(&[1.0, 0.0, 1.0]));
        assert!(nl.covers(&[1.0, 0.0, -1.0]));
        assert!(!nl.theory_covered());
    }

    #[test]
    fn becu_is_continuous_across_zero() {
        for (a1, a2) in [(1.0_f64, 0.0_f64), (0.3, -0.4), (2.0, 5.0)] {
            let s = (a1 * a1 + a2 * a2).sqrt();
            let above = becu_stability(&[a1, a2, 1e-12]);
            let below = becu_stability(&[a1, a2, -1e-12]);
            assert!((above - s).abs() < 1e-10 && (below - s).abs() < 1e-10);
        }
    }

    #[test]
    fn example2_values() {
        assert_eq!(example2_k(&[3.0, 4.0, 0.0]), 5.0);
        assert_eq!(example2_k(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(example2_k(&[0.0, 0.0, -9.0]), 3.0);
    }

    #[test]
    fn flux_vanishes_at_origin() {
        for nl in [p4(), Nonlinearity::becu(), Nonlinearity::example2()] {
            let z = vec![0.0; nl.components()];
            assert!(nl.a_eval(&z).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn non_finite_k_is_an_error() {
        let nl = Nonlinearity::custom("blowup", 1, |_| f64::NAN);
        assert!(matches!(nl.a_eval(&[1.0]), Err(Error::Evaluation { .. })));
        assert!(matches!(
            p4().a_eval(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(
            Nonlinearity::from_name("becu", None, false).unwrap().name(),
            "becu"
        );
        assert!(Nonlinearity::from_name("power_law", None, false).is_err());
        assert!(Nonlinearity::from_name("nope", None, false).is_err());
        let bad = GrowthParams::new(vec![1.0], vec![0.0], 1.0, 1.0);
        assert!(Nonlinearity::from_name("power_law", Some(&bad), false).is_err());
        assert!(Nonlinearity::from_name("power_law", Some(&bad), true).is_ok());
    }

    #[test]
    fn power_law_saturates_its_own_bounds() {
        let params = GrowthParams::new(vec![1.6, 2.2, 2.5], vec![0.5, 0.0, 1.0], 1.0, 1.0);
        let nl = Nonlinearity::power_law(params.clone()).unwrap();
        let report = check_growth(&nl, &params, &Sampler::default());
        assert_eq!(report.violations(), 0);
        assert_eq!(report.min_ratio, 1.0);
        assert_eq!(report.max_ratio, 1.0);
    }

    #[test]
    fn becu_violates_growth_bounds() {
        for p in [2.0, 3.0] {
            let params = GrowthParams::new(vec![p; 3], vec![0.0; 3], 1.0, 1.0);
            let report = check_growth(&Nonlinearity::becu(), &params, &Sampler::default());
            assert!(report.violations() > 0, "p = {p}");
        }
    }

    #[test]
    fn monotonicity_witnesses() {
        let nl = Nonlinearity::becu();
        let first = monotonicity_indicator(&nl, &[0.035, 0.0, -0.01], &[0.05, 0.0, 0.0]).unwrap();
        let second = monotonicity_indicator(&nl, &[-0.2, -0.1, 0.2], &[-0.1, 0.0, 0.5]).unwrap();
        assert!(first < 0.0, "{first}");
        assert!(second < 0.0, "{second}");
        let xi = [0.3, -0.2, 0.7];
        assert_eq!(monotonicity_indicator(&nl, &xi, &xi).unwrap(), 0.0);
        let eta = [-0.1, 0.4, -0.2];
        assert_eq!(
            monotonicity_indicator(&nl, &xi, &eta).unwrap(),
            monotonicity_indicator(&nl, &eta, &xi).unwrap()
        );
    }

    #[test]
    fn er_norm_of_constant_is_attained_at_origin() {
        let est = estimate_er_norm(|_| vec![-2.5], 1, 1.0, &[1.0, 10.0], 50, 1).unwrap();
        assert_eq!(est.estimate, 2.5);
        assert!(estimate_er_norm(|_| vec![1.0], 1, 0.0, &[1.0], 1, 1).is_err());
    }

    #[test]
    fn er_norm_of_power_approaches_one() {
        let r = 1.5;
        let est = estimate_er_norm(
            |a| vec![a.iter().map(|v| v * v).sum::<f64>().sqrt().powf(r)],
            3,
            r,
            &[1.0, 10.0, 100.0, 1000.0],
            20,
            3,
        )
        .unwrap();
        let values: Vec<f64> = est.running.iter().map(|(_, v)| *v).collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0]));
        // |A|^r / (1 + |A|^r) at |A| = 1000
        let expected = 1000f64.powf(r) / (1.0 + 1000f64.powf(r));
        assert!((est.estimate - expected).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_of_linear_flux_is_one() {
        let lin =
            Nonlinearity::power_law(GrowthParams::new(vec![2.0], vec![0.0], 1.0, 1.0)).unwrap();
        let l = estimate_lipschitz(&lin, 10.0, 200, 9);
        assert!((l - 1.0).abs() < 1e-6, "{l}");
    }
}
