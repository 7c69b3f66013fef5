//! Built-in dynamical systems, their Jacobians and inverses, and samplers
//! that produce point clouds approximating the compact invariant set.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudMeta, PointCloud};
use crate::linalg::{operator_norm, LinalgError, Matrix, MAX_DIM};

/// Iterates discarded before recording attractor orbits.
pub const DEFAULT_TRANSIENT: usize = 1000;
/// Branch depth for inverse-branch (repeller) sampling.
pub const DEFAULT_BRANCH_DEPTH: usize = 48;
/// Restarts allowed per requested orbit before the sampler gives up.
pub const ESCAPE_RETRY_LIMIT: usize = 100;
/// Points recorded per independent attractor orbit.
pub const ORBIT_LENGTH: usize = 1000;

/// Slack allowed when deciding whether a point left a closed domain.
const DOMAIN_SLACK: f64 = 1e-12;
/// Orbits of unbounded maps beyond this radius count as escaped.
const DIVERGENCE_RADIUS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("system `{system}` has no parameter `{param}`")]
    UnknownParameter { system: String, param: String },
    #[error("parameter `{param}` = {value} invalid: {constraint}")]
    InvalidParameter { param: String, value: f64, constraint: String },
    #[error("point has {got} coordinates, system is {expected}-dimensional")]
    PointDimension { expected: usize, got: usize },
    #[error("point {point:?} is outside the domain of the map")]
    Escaped { point: Vec<f64> },
    #[error("system `{0}` has no inverse map")]
    NoInverse(String),
    #[error("sampler failed: orbit escaped {retries} times, last escape at {point:?}")]
    SamplerFailure { retries: usize, point: Vec<f64> },
    #[error("budget must be at least 1")]
    EmptyBudget,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmbientKind {
    Euclidean,
    FlatTorus,
}

/// Ambient manifold: Euclidean space or the flat torus `[0,1)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbientSpace {
    pub kind: AmbientKind,
    pub dim: usize,
}

impl AmbientSpace {
    pub fn euclidean(dim: usize) -> Self {
        Self { kind: AmbientKind::Euclidean, dim }
    }

    pub fn torus(dim: usize) -> Self {
        Self { kind: AmbientKind::FlatTorus, dim }
    }

    pub fn is_torus(&self) -> bool {
        self.kind == AmbientKind::FlatTorus
    }

    /// Per-coordinate displacement `b - a`; on the torus the shortest
    /// representative in `[-1/2, 1/2]`.
    #[inline]
    pub fn delta(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        match self.kind {
            AmbientKind::Euclidean => d,
            AmbientKind::FlatTorus => d - d.round(),
        }
    }

    /// Distance in the ambient metric. On the torus this is the minimum over
    /// lattice translates, which separates per coordinate.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| self.delta(x, y).powi(2)).sum::<f64>().sqrt()
    }

    /// Wraps torus coordinates into `[0,1)`; identity on Euclidean space.
    pub fn wrap(&self, x: &mut [f64]) {
        if self.is_torus() {
            for v in x.iter_mut() {
                *v = wrap_unit(*v);
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x.iter().all(|v| v.is_finite())
            && (!self.is_torus() || x.iter().all(|v| (0.0..1.0).contains(v)))
    }
}

impl fmt::Display for AmbientSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AmbientKind::Euclidean => write!(f, "R^{}", self.dim),
            AmbientKind::FlatTorus => write!(f, "T^{}", self.dim),
        }
    }
}

#[inline]
fn wrap_unit(v: f64) -> f64 {
    let w = v - v.floor();
    // v slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Which inclusion the invariant set satisfies: `f(K) ⊂ K`, `K ⊂ f(K)`, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Invariance {
    Forward,
    Backward,
    Both,
}

impl Invariance {
    pub fn is_forward(self) -> bool {
        matches!(self, Invariance::Forward | Invariance::Both)
    }

    pub fn is_backward(self) -> bool {
        matches!(self, Invariance::Backward | Invariance::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    ForwardIteration,
    InverseBranches,
    SymbolicProduct,
    UniformGrid,
}

impl SamplerMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMethod::ForwardIteration => "forward_iteration",
            SamplerMethod::InverseBranches => "inverse_branches",
            SamplerMethod::SymbolicProduct => "symbolic_product",
            SamplerMethod::UniformGrid => "uniform_grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDimension {
    pub value: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
enum MapKind {
    CatMap,
    ToralEndomorphism { p: f64, q: f64 },
    CircleExpanding { k: f64 },
    LinearHorseshoe { lambda: f64, mu: f64 },
    CookieCutter { ratio: f64 },
    Henon { a: f64, b: f64 },
    ContractingAffine { matrix: Matrix, inverse: Matrix, offset: Vec<f64> },
}

/// A named smooth map with its ambient space and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDescriptor {
    pub name: String,
    pub ambient: AmbientSpace,
    pub params: BTreeMap<String, f64>,
    /// Brouwer degree; only set on closed (torus) ambients.
    pub degree: Option<u32>,
    pub invariance: Invariance,
    pub has_inverse: bool,
    pub sampler: SamplerMethod,
    pub reference_dimension: Option<ReferenceDimension>,
    map: MapKind,
}

/// One tunable parameter of a built-in system.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub default: f64,
    pub constraint: &'static str,
}

/// Registry entry describing a built-in system and its parameters.
#[derive(Debug, Clone, Serialize)]
pub struct SystemSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: Vec<ParamSpec>,
}

fn p(name: &str, default: f64, constraint: &'static str) -> ParamSpec {
    ParamSpec { name: name.to_string(), default, constraint }
}

pub const SYSTEM_NAMES: [&str; 7] = [
    "cat_map",
    "toral_endomorphism",
    "circle_expanding",
    "linear_horseshoe",
    "cookie_cutter",
    "henon",
    "contracting_affine",
];

/// Parameter specification for `name`. For `contracting_affine` the matrix
/// and offset parameters depend on `n`, which is read from `overrides`.
pub fn system_spec(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec, SystemError> {
    let spec = match name {
        "cat_map" => {
            SystemSpec { name: "cat_map", summary: "Arnold cat map x -> [[2,1],[1,1]] x mod 1 on T^2", params: vec![] }
        }
        "toral_endomorphism" => SystemSpec {
            name: "toral_endomorphism",
            summary: "diag(p, q) mod 1 on T^2",
            params: vec![p("p", 2.0, "integer >= 1"), p("q", 3.0, "integer >= 1")],
        },
        "circle_expanding" => SystemSpec {
            name: "circle_expanding",
            summary: "x -> k x mod 1 on T^1",
            params: vec![p("k", 3.0, "integer >= 2")],
        },
        "linear_horseshoe" => SystemSpec {
            name: "linear_horseshoe",
            summary: "two affine branches diag(lambda, mu) on the unit square",
            params: vec![p("lambda", 0.2, "0 < lambda < 1/2"), p("mu", 4.0, "mu > 2")],
        },
        "cookie_cutter" => SystemSpec {
            name: "cookie_cutter",
            summary: "expanding two-branch interval map whose repeller is the middle-alpha Cantor set",
            params: vec![p("alpha", 1.0 / 3.0, "0 < alpha < 1")],
        },
        "henon" => SystemSpec {
            name: "henon",
            summary: "(x, y) -> (1 - a x^2 + y, b x) on R^2",
            params: vec![p("a", 1.4, "finite"), p("b", 0.3, "b != 0")],
        },
        "contracting_affine" => {
            let n = overrides.get("n").copied().unwrap_or(2.0);
            let mut params = vec![p("n", 2.0, "integer in 1..=8")];
            if n >= 1.0 && n <= MAX_DIM as f64 && n.fract() == 0.0 {
                let n = n as usize;
                for i in 1..=n {
                    for j in 1..=n {
                        let default = if i == j { 0.5 } else { 0.0 };
                        params.push(p(&format!("a{i}{j}"), default, "operator norm of A < 1"));
                    }
                }
                for i in 1..=n {
                    params.push(p(&format!("c{i}"), 0.0, "finite"));
                }
            }
            SystemSpec { name: "contracting_affine", summary: "x -> A x + c on R^n with ||A|| < 1", params }
        }
        other => return Err(SystemError::UnknownSystem(other.to_string())),
    };
    Ok(spec)
}

/// Registry of all built-ins with default parameters.
pub fn registry() -> Vec<SystemSpec> {
    SYSTEM_NAMES.iter().map(|n| system_spec(n, &BTreeMap::new()).expect("built-in")).collect()
}

fn invalid(param: &str, value: f64, constraint: &str) -> SystemError {
    SystemError::InvalidParameter { param: param.to_string(), value, constraint: constraint.to_string() }
}

fn require(ok: bool, param: &str, value: f64, constraint: &str) -> Result<(), SystemError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(param, value, constraint))
    }
}

fn is_integer(v: f64) -> bool {
    v.is_finite() && v.fract() == 0.0
}

/// Builds a built-in system from its name and parameter overrides.
pub fn build_system(name: &str, overrides: &BTreeMap<String, f64>) -> Result<SystemDescriptor, SystemError> {
    let spec = system_spec(name, overrides)?;
    let mut params = BTreeMap::new();
    for ps in &spec.params {
        params.insert(ps.name.clone(), ps.default);
    }
    for (k, &v) in overrides {
        if !params.contains_key(k) {
            return Err(SystemError::UnknownParameter { system: name.to_string(), param: k.clone() });
        }
        if !v.is_finite() {
            return Err(invalid(k, v, "finite"));
        }
        params.insert(k.clone(), v);
    }
    let get = |k: &str| params[k];

    let ln2 = std::f64::consts::LN_2;
    let (ambient, map, degree, has_inverse, sampler, reference) = match name {
        "cat_map" => (
            AmbientSpace::torus(2),
            MapKind::CatMap,
            Some(1),
            true,
            SamplerMethod::UniformGrid,
            Some(ReferenceDimension { value: 2.0, note: "invariant set is the whole torus".into() }),
        ),
        "toral_endomorphism" => {
            let (pp, qq) = (get("p"), get("q"));
            require(is_integer(pp) && pp >= 1.0, "p", pp, "integer >= 1")?;
            require(is_integer(qq) && qq >= 1.0, "q", qq, "integer >= 1")?;
            let invertible = pp == 1.0 && qq == 1.0;
            (
                AmbientSpace::torus(2),
                MapKind::ToralEndomorphism { p: pp, q: qq },
                Some((pp * qq) as u32),
                invertible,
                SamplerMethod::UniformGrid,
                Some(ReferenceDimension { value: 2.0, note: "invariant set is the whole torus".into() }),
            )
        }
        "circle_expanding" => {
            let k = get("k");
            require(is_integer(k) && k >= 2.0, "k", k, "integer >= 2")?;
            (
                AmbientSpace::torus(1),
                MapKind::CircleExpanding { k },
                Some(k as u32),
                false,
                SamplerMethod::InverseBranches,
                Some(ReferenceDimension { value: 1.0, note: "invariant set is the whole circle".into() }),
            )
        }
        "linear_horseshoe" => {
            let (lambda, mu) = (get("lambda"), get("mu"));
            require(lambda > 0.0 && lambda < 0.5, "lambda", lambda, "0 < lambda < 1/2")?;
            require(mu > 2.0, "mu", mu, "mu > 2")?;
            (
                AmbientSpace::euclidean(2),
                MapKind::LinearHorseshoe { lambda, mu },
                None,
                true,
                SamplerMethod::SymbolicProduct,
                Some(ReferenceDimension {
                    value: ln2 / mu.ln() + ln2 / -lambda.ln(),
                    note: "product of Cantor sets: log2/log(mu) + log2/(-log(lambda))".into(),
                }),
            )
        }
        "cookie_cutter" => {
            let alpha = get("alpha");
            require(alpha > 0.0 && alpha < 1.0, "alpha", alpha, "0 < alpha < 1")?;
            let ratio = (1.0 - alpha) / 2.0;
            (
                AmbientSpace::euclidean(1),
                MapKind::CookieCutter { ratio },
                None,
                false,
                SamplerMethod::InverseBranches,
                Some(ReferenceDimension {
                    value: ln2 / -ratio.ln(),
                    note: "self-similar Cantor set: log2/(-log((1-alpha)/2))".into(),
                }),
            )
        }
        "henon" => {
            let (a, b) = (get("a"), get("b"));
            require(b != 0.0, "b", b, "b != 0")?;
            let reference = (a == 1.4 && b == 0.3).then(|| ReferenceDimension {
                value: 1.26,
                note: "numerical box-counting value for the classical attractor; no closed form".into(),
            });
            (
                AmbientSpace::euclidean(2),
                MapKind::Henon { a, b },
                None,
                true,
                SamplerMethod::ForwardIteration,
                reference,
            )
        }
        "contracting_affine" => {
            let nf = get("n");
            require(is_integer(nf) && nf >= 1.0 && nf <= MAX_DIM as f64, "n", nf, "integer in 1..=8")?;
            let n = nf as usize;
            let entries: Vec<f64> =
                (1..=n).flat_map(|i| (1..=n).map(move |j| (i, j))).map(|(i, j)| get(&format!("a{i}{j}"))).collect();
            let matrix = Matrix::from_row_major(n, &entries)?;
            let norm = operator_norm(&matrix)?;
            require(norm < 1.0, "a11", entries[0], "operator norm of A < 1")?;
            let inverse = matrix.inverse().map_err(|_| invalid("a11", entries[0], "A invertible"))?;
            let offset: Vec<f64> = (1..=n).map(|i| get(&format!("c{i}"))).collect();
            (
                AmbientSpace::euclidean(n),
                MapKind::ContractingAffine { matrix, inverse, offset },
                None,
                true,
                SamplerMethod::ForwardIteration,
                Some(ReferenceDimension { value: 0.0, note: "unique attracting fixed point".into() }),
            )
        }
        other => return Err(SystemError::UnknownSystem(other.to_string())),
    };

    Ok(SystemDescriptor {
        name: name.to_string(),
        ambient,
        params,
        degree,
        invariance: Invariance::Both,
        has_inverse,
        sampler,
        reference_dimension: reference,
        map,
    })
}

/// Built-in with default parameters.
pub fn default_system(name: &str) -> Result<SystemDescriptor, SystemError> {
    build_system(name, &BTreeMap::new())
}

impl SystemDescriptor {
    pub fn dim(&self) -> usize {
        self.ambient.dim
    }

    fn check_point(&self, x: &[f64]) -> Result<(), SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::PointDimension { expected: self.dim(), got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SystemError::Escaped { point: x.to_vec() });
        }
        Ok(())
    }

    fn escaped(x: &[f64]) -> SystemError {
        SystemError::Escaped { point: x.to_vec() }
    }

    /// Applies the map in place. Torus results are wrapped into `[0,1)`.
    pub fn step(&self, x: &mut [f64]) -> Result<(), SystemError> {
        self.check_point(x)?;
        match &self.map {
            MapKind::CatMap => {
                let (u, v) = (x[0], x[1]);
                x[0] = 2.0 * u + v;
                x[1] = u + v;
            }
            MapKind::ToralEndomorphism { p, q } => {
                x[0] *= p;
                x[1] *= q;
            }
            MapKind::CircleExpanding { k } => x[0] *= k,
            MapKind::LinearHorseshoe { lambda, mu } => {
                let branch = horseshoe_branch(x, *mu).ok_or_else(|| Self::escaped(x))?;
                if branch == 0 {
                    x[0] *= lambda;
                    x[1] *= mu;
                } else {
                    x[0] = lambda * x[0] + (1.0 - lambda);
                    x[1] = mu * x[1] - (mu - 1.0);
                }
                clamp_unit(x);
            }
            MapKind::CookieCutter { ratio } => {
                let v = x[0];
                if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&v) {
                    return Err(Self::escaped(x));
                }
                if v <= *ratio {
                    x[0] = v / ratio;
                } else if v >= 1.0 - ratio {
                    x[0] = (v - (1.0 - ratio)) / ratio;
                } else {
                    return Err(Self::escaped(x));
                }
                clamp_unit(x);
            }
            MapKind::Henon { a, b } => {
                let (u, v) = (x[0], x[1]);
                x[0] = 1.0 - a * u * u + v;
                x[1] = b * u;
            }
            MapKind::ContractingAffine { matrix, offset, .. } => {
                let y = matrix.mul_vec(x)?;
                for ((xi, yi), ci) in x.iter_mut().zip(y).zip(offset) {
                    *xi = yi + ci;
                }
            }
        }
        self.ambient.wrap(x);
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Self::escaped(x))
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        let mut y = x.to_vec();
        self.step(&mut y)?;
        Ok(y)
    }

    /// Exact derivative `D_x f`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix, SystemError> {
        self.check_point(x)?;
        let m = match &self.map {
            MapKind::CatMap => Matrix::from_rows(&[[2.0, 1.0], [1.0, 1.0]])?,
            MapKind::ToralEndomorphism { p, q } => Matrix::diag(&[*p, *q])?,
            MapKind::CircleExpanding { k } => Matrix::diag(&[*k])?,
            MapKind::LinearHorseshoe { lambda, mu } => {
                horseshoe_branch(x, *mu).ok_or_else(|| Self::escaped(x))?;
                Matrix::diag(&[*lambda, *mu])?
            }
            MapKind::CookieCutter { ratio } => {
                let v = x[0];
                let inside = (-DOMAIN_SLACK..=*ratio).contains(&v) || (1.0 - ratio..=1.0 + DOMAIN_SLACK).contains(&v);
                if !inside {
                    return Err(Self::escaped(x));
                }
                Matrix::diag(&[1.0 / ratio])?
            }
            MapKind::Henon { a, b } => Matrix::from_rows(&[[-2.0 * a * x[0], 1.0], [*b, 0.0]])?,
            MapKind::ContractingAffine { matrix, .. } => *matrix,
        };
        Ok(m)
    }

    /// Applies the inverse map in place.
    pub fn inverse_step(&self, x: &mut [f64]) -> Result<(), SystemError> {
        if !self.has_inverse {
            return Err(SystemError::NoInverse(self.name.clone()));
        }
        self.check_point(x)?;
        match &self.map {
            MapKind::CatMap => {
                let (u, v) = (x[0], x[1]);
                x[0] = u - v;
                x[1] = -u + 2.0 * v;
            }
            MapKind::ToralEndomorphism { .. } => {} // only invertible as the identity
            MapKind::LinearHorseshoe { lambda, mu } => {
                let branch = horseshoe_inverse_branch(x, *lambda).ok_or_else(|| Self::escaped(x))?;
                if branch == 0 {
                    x[0] /= lambda;
                    x[1] /= mu;
                } else {
                    x[0] = (x[0] - (1.0 - lambda)) / lambda;
                    x[1] = (x[1] + (mu - 1.0)) / mu;
                }
                clamp_unit(x);
            }
            MapKind::Henon { a, b } => {
                let (u, v) = (x[0], x[1]);
                let prev_x = v / b;
                x[0] = prev_x;
                x[1] = u - 1.0 + a * prev_x * prev_x;
            }
            MapKind::ContractingAffine { inverse, offset, .. } => {
                let shifted: Vec<f64> = x.iter().zip(offset).map(|(xi, ci)| xi - ci).collect();
                let y = inverse.mul_vec(&shifted)?;
                x.copy_from_slice(&y);
            }
            MapKind::CircleExpanding { .. } | MapKind::CookieCutter { .. } => {
                return Err(SystemError::NoInverse(self.name.clone()))
            }
        }
        self.ambient.wrap(x);
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Self::escaped(x))
        }
    }

    pub fn inverse_evaluate(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        let mut y = x.to_vec();
        self.inverse_step(&mut y)?;
        Ok(y)
    }

    /// Derivative of the inverse map at `x`, i.e. `(D_{f^{-1}(x)} f)^{-1}`.
    pub fn inverse_jacobian(&self, x: &[f64]) -> Result<Matrix, SystemError> {
        if !self.has_inverse {
            return Err(SystemError::NoInverse(self.name.clone()));
        }
        self.check_point(x)?;
        let m = match &self.map {
            MapKind::CatMap => Matrix::from_rows(&[[1.0, -1.0], [-1.0, 2.0]])?,
            MapKind::ToralEndomorphism { .. } => Matrix::identity(2)?,
            MapKind::LinearHorseshoe { lambda, mu } => {
                horseshoe_inverse_branch(x, *lambda).ok_or_else(|| Self::escaped(x))?;
                Matrix::diag(&[1.0 / lambda, 1.0 / mu])?
            }
            MapKind::Henon { a, b } => Matrix::from_rows(&[[0.0, 1.0 / b], [1.0, 2.0 * a * x[1] / (b * b)]])?,
            MapKind::ContractingAffine { inverse, .. } => *inverse,
            MapKind::CircleExpanding { .. } | MapKind::CookieCutter { .. } => {
                return Err(SystemError::NoInverse(self.name.clone()))
            }
        };
        Ok(m)
    }

    /// Samples the invariant set with default sampler options.
    pub fn sample_invariant_set(&self, budget: usize, seed: u64) -> Result<PointCloud, SystemError> {
        sample_invariant_set(self, budget, seed, &SampleOptions::default())
    }
}

/// Horseshoe branch for a point of the unit square: 0 on the lower strip
/// `y <= 1/mu`, 1 on the upper strip `y >= 1 - 1/mu`, `None` otherwise.
fn horseshoe_branch(x: &[f64], mu: f64) -> Option<u8> {
    let (u, v) = (x[0], x[1]);
    let in_unit = |t: f64| (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t);
    if !in_unit(u) || !in_unit(v) {
        return None;
    }
    if v <= 1.0 / mu {
        Some(0)
    } else if v >= 1.0 - 1.0 / mu {
        Some(1)
    } else {
        None
    }
}

/// Branch of the image: left strip `x <= lambda` or right strip `x >= 1 - lambda`.
fn horseshoe_inverse_branch(x: &[f64], lambda: f64) -> Option<u8> {
    let (u, v) = (x[0], x[1]);
    let in_unit = |t: f64| (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t);
    if !in_unit(u) || !in_unit(v) {
        return None;
    }
    if u <= lambda {
        Some(0)
    } else if u >= 1.0 - lambda {
        Some(1)
    } else {
        None
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    /// Attractor transient; defaults to [`DEFAULT_TRANSIENT`].
    pub transient: Option<usize>,
    /// Branch depth for inverse-branch sampling; defaults to [`DEFAULT_BRANCH_DEPTH`].
    pub branch_depth: Option<usize>,
    pub orbit_length: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { transient: None, branch_depth: None, orbit_length: ORBIT_LENGTH }
    }
}

/// Seed for stream `index` derived from the run seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Largest level `k` such that a sample of `budget` random addresses is
/// expected to hit all `branches^k` cylinders (coupon-collector margin).
fn covered_level(branches: f64, budget: usize) -> i32 {
    let mut k = 0;
    loop {
        let cells = branches.powi(k + 1);
        if cells * (cells.ln() + 5.0) > budget as f64 || k >= 64 {
            return k;
        }
        k += 1;
    }
}

/// Produces a point cloud approximating the invariant set of `sys`.
///
/// Deterministic in `(sys, budget, seed, opts)`; every point or orbit draws
/// from its own stream derived from `(seed, index)`, so the result does not
/// depend on the rayon thread count.
pub fn sample_invariant_set(
    sys: &SystemDescriptor,
    budget: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Result<PointCloud, SystemError> {
    if budget == 0 {
        return Err(SystemError::EmptyBudget);
    }
    let n = sys.dim();
    let (coords, transient, resolution) = match (&sys.map, sys.sampler) {
        (_, SamplerMethod::UniformGrid) => {
            let mut g = (budget as f64).powf(1.0 / n as f64).floor() as usize;
            while (g + 1).pow(n as u32) <= budget {
                g += 1;
            }
            while g > 1 && g.pow(n as u32) > budget {
                g -= 1;
            }
            let g = g.max(1);
            let total = g.pow(n as u32);
            let mut coords = Vec::with_capacity(total * n);
            for idx in 0..total {
                let mut rem = idx;
                for _ in 0..n {
                    coords.push(((rem % g) as f64 + 0.5) / g as f64);
                    rem /= g;
                }
            }
            (coords, 0, (n as f64).sqrt() * 0.5 / g as f64)
        }
        (MapKind::LinearHorseshoe { lambda, mu }, _) => {
            let (lambda, mu) = (*lambda, *mu);
            // enough digits that cylinders fall below double precision; for
            // mu = 4 this keeps y exactly representable so forward orbits are exact
            let depth_x = (52.0 * std::f64::consts::LN_2 / -lambda.ln()).ceil() as usize;
            let depth_y = (52.0 * std::f64::consts::LN_2 / mu.ln()).floor() as usize;
            let coords: Vec<f64> = (0..budget)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let mut rng = rng_for(seed, i as u64);
                    let mut x = 0.0;
                    for _ in 0..depth_x {
                        x = lambda * x + if rng.gen::<bool>() { 1.0 - lambda } else { 0.0 };
                    }
                    let mut y = 0.0;
                    for _ in 0..depth_y {
                        y = y / mu + if rng.gen::<bool>() { 1.0 - 1.0 / mu } else { 0.0 };
                    }
                    [x, y]
                })
                .collect();
            let k = covered_level(4.0, budget);
            let res = (lambda.powi(k).powi(2) + mu.powi(-k).powi(2)).sqrt();
            (coords, depth_x.max(depth_y), res)
        }
        (MapKind::CookieCutter { ratio }, _) => {
            let ratio = *ratio;
            let depth = opts.branch_depth.unwrap_or(DEFAULT_BRANCH_DEPTH);
            let coords: Vec<f64> = (0..budget)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_for(seed, i as u64);
                    let mut x: f64 = rng.gen();
                    for _ in 0..depth {
                        x = ratio * x + if rng.gen::<bool>() { 1.0 - ratio } else { 0.0 };
                    }
                    x
                })
                .collect();
            (coords, depth, ratio.powi(covered_level(2.0, budget)))
        }
        (MapKind::CircleExpanding { k }, _) => {
            let k = *k;
            let branches = k as u64;
            let depth = opts.branch_depth.unwrap_or(DEFAULT_BRANCH_DEPTH);
            let coords: Vec<f64> = (0..budget)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_for(seed, i as u64);
                    let mut x: f64 = rng.gen();
                    for _ in 0..depth {
                        x = (x + rng.gen_range(0..branches) as f64) / k;
                    }
                    wrap_unit(x)
                })
                .collect();
            (coords, depth, k.powi(-covered_level(k, budget)))
        }
        (_, SamplerMethod::ForwardIteration) => {
            let transient = opts.transient.unwrap_or(DEFAULT_TRANSIENT);
            let len = opts.orbit_length.max(1);
            let orbits = budget.div_ceil(len);
            let chunks: Result<Vec<Vec<f64>>, SystemError> = (0..orbits)
                .into_par_iter()
                .map(|o| {
                    let count = len.min(budget - o * len);
                    attractor_orbit(sys, derive_seed(seed, o as u64), transient, count)
                })
                .collect();
            let coords: Vec<f64> = chunks?.concat();
            let extent = bounding_extent(&coords, n);
            (coords, transient, (extent / (budget as f64).sqrt()).max(1e-9))
        }
        (_, method) => unreachable!("no sampler for {} with {:?}", sys.name, method),
    };
    let meta = CloudMeta { method: sys.sampler.as_str().to_string(), seed, budget, transient, resolution };
    Ok(PointCloud::from_flat(sys.ambient, coords, meta).expect("sampler produced valid points"))
}

fn start_box(sys: &SystemDescriptor) -> (f64, f64) {
    match sys.map {
        MapKind::Henon { .. } => (-0.1, 0.1),
        _ => (-1.0, 1.0),
    }
}

/// One attractor orbit of `count` points after `transient` discarded iterates.
fn attractor_orbit(
    sys: &SystemDescriptor,
    orbit_seed: u64,
    transient: usize,
    count: usize,
) -> Result<Vec<f64>, SystemError> {
    let n = sys.dim();
    let (lo, hi) = start_box(sys);
    let mut last_escape = Vec::new();
    for attempt in 0..ESCAPE_RETRY_LIMIT {
        let mut rng = rng_for(orbit_seed, attempt as u64);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        let mut out = Vec::with_capacity(count * n);
        let mut ok = true;
        for i in 0..transient + count {
            if sys.step(&mut x).is_err() || x.iter().any(|v| v.abs() > DIVERGENCE_RADIUS) {
                ok = false;
                break;
            }
            if i >= transient {
                out.extend_from_slice(&x);
            }
        }
        if ok {
            return Ok(out);
        }
        last_escape = x;
    }
    Err(SystemError::SamplerFailure { retries: ESCAPE_RETRY_LIMIT, point: last_escape })
}

fn bounding_extent(coords: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|d| {
            let (lo, hi) = coords
                .iter()
                .skip(d)
                .step_by(n)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian of the forward map (or the inverse map) with
/// step `h`, falling back to a one-sided difference where a perturbed point
/// leaves the domain. Differences of images are taken in the ambient metric.
pub fn finite_difference_jacobian(
    sys: &SystemDescriptor,
    x: &[f64],
    h: f64,
    direction: MapDirection,
) -> Result<Matrix, SystemError> {
    let eval = |p: &[f64]| match direction {
        MapDirection::Forward => sys.evaluate(p),
        MapDirection::Inverse => sys.inverse_evaluate(p),
    };
    let n = sys.dim();
    let centre = eval(x)?;
    let mut jac = Matrix::zeros(n)?;
    for j in 0..n {
        let shifted = |s: f64| {
            let mut p = x.to_vec();
            p[j] += s;
            eval(&p)
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        let (hi, lo, span) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m, 2.0 * h),
            (Ok(p), Err(SystemError::Escaped { .. })) => (p, centre.clone(), h),
            (Err(SystemError::Escaped { .. }), Ok(m)) => (centre.clone(), m, h),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        for i in 0..n {
            jac.set(i, j, sys.ambient.delta(lo[i], hi[i]) / span);
        }
    }
    Ok(jac)
}

/// Which map to apply when checking invariance of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    Forward,
    Inverse,
}

/// Result of pushing every cloud point through the map and looking for a
/// cloud point within `tolerance` of the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCheck {
    pub checked: usize,
    pub escaped: usize,
    pub violations: usize,
    /// Largest image-to-cloud distance among images within tolerance.
    pub max_defect: f64,
}

/// Checks `f(K) ⊂ K` (or `f^{-1}(K) ⊂ K`) on the sample up to `tolerance`.
pub fn invariance_check(
    sys: &SystemDescriptor,
    cloud: &PointCloud,
    direction: MapDirection,
    tolerance: f64,
) -> Result<InvarianceCheck, SystemError> {
    if direction == MapDirection::Inverse && !sys.has_inverse {
        return Err(SystemError::NoInverse(sys.name.clone()));
    }
    let index = crate::cloud::NeighborIndex::new(cloud, tolerance);
    let results: Vec<Option<Option<f64>>> = cloud
        .par_points()
        .map(|p| {
            let image = match direction {
                MapDirection::Forward => sys.evaluate(p),
                MapDirection::Inverse => sys.inverse_evaluate(p),
            };
            match image {
                Ok(y) => Ok(Some(index.nearest_within(&y, tolerance))),
                Err(SystemError::Escaped { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let mut check = InvarianceCheck { checked: 0, escaped: 0, violations: 0, max_defect: 0.0 };
    for r in results {
        match r {
            None => check.escaped += 1,
            Some(None) => {
                check.checked += 1;
                check.violations += 1;
            }
            Some(Some(d)) => {
                check.checked += 1;
                check.max_defect = check.max_defect.max(d);
            }
        }
    }
    Ok(check)
}
