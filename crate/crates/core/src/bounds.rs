//! Upper bounds on the upper box dimension of an invariant set.
//!
//! Four bounds are evaluated from Jacobian data over a sampled cloud:
//!
//! * [`thm11_min_d`]: the smallest `d ∈ (0, n]` with
//!   `max|det Df| · (min S_n(Df))^(d-n) <= 1`, for backward-invariant sets of
//!   diffeomorphisms with `0 < min S_n < 1`.
//! * [`thm25_bound`]: `n - b/s` from growth rates of the inverse iterates.
//! * [`remark24_bound`]: `n - b/s` from forward growth rates of a diffeomorphism.
//! * [`thm12_bound`]: `n - (b - log deg)/s` for maps with Brouwer degree `deg`.
//!
//! Extrema are taken over the sample, not over the true invariant set, so every
//! result carries an approximation note rather than a certificate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::linalg::{log_abs_det, operator_norm, singular_values, LinalgError, LogScaledProduct, Matrix};
use crate::systems::{AmbientSpace, Invariance, SystemDescriptor, SystemError};

pub const DEFAULT_M_MAX: usize = 32;
/// `|log max|det||` below this is treated as `max|det| = 1`.
pub const LOG_DET_TOLERANCE: f64 = 1e-12;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const DEDUP_RADIUS: f64 = 1e-6;
pub const CRITICAL_DET: f64 = 1e-8;
const NEWTON_MAX_ITERS: usize = 60;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("m_max must be at least 1")]
    InvalidHorizon,
    #[error("inverse growth rates need an invertible map; `{0}` has no inverse")]
    NoInverse(String),
    #[error("every one of the {0} sample points escaped the domain")]
    AllEscaped(usize),
    #[error("{bound} needs {expected:?} growth rates, got {got:?}")]
    DirectionMismatch { bound: &'static str, expected: Direction, got: Direction },
    #[error("degree check needs a torus ambient, system lives on {0}")]
    NotTorus(String),
    #[error("target point has {got} coordinates, expected {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("grid resolution must be at least 1")]
    InvalidGrid,
    #[error("preimage {point:?} has |det| = {det:e}: the target is (nearly) a critical value, pick another point")]
    NearCritical { point: Vec<f64>, det: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Thm11,
    Thm12,
    Thm25,
    Rmk24,
}

impl Theorem {
    pub fn label(self) -> &'static str {
        match self {
            Theorem::Thm11 => "thm11",
            Theorem::Thm12 => "thm12",
            Theorem::Thm25 => "thm25",
            Theorem::Rmk24 => "rmk24",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Numbers a bound was computed from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputsDigest {
    pub dim: usize,
    pub sample_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_det: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_smallest_singular_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    /// Unclamped value of the bound formula.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub theorem: Theorem,
    pub applicable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub notes: Vec<String>,
    pub inputs: InputsDigest,
}

impl BoundResult {
    /// Inapplicable result for a bound whose data could not be computed.
    pub fn not_evaluated(theorem: Theorem, reason: impl Into<String>, dim: usize) -> Self {
        Self::inapplicable(theorem, reason, InputsDigest { dim, ..InputsDigest::default() })
    }

    fn inapplicable(theorem: Theorem, reason: impl Into<String>, inputs: InputsDigest) -> Self {
        Self { theorem, applicable: false, value: None, reason: Some(reason.into()), notes: Vec::new(), inputs }
    }

    /// Applicable result with the value clamped into `[0, n]`.
    fn clamped(theorem: Theorem, raw: f64, mut inputs: InputsDigest, mut notes: Vec<String>) -> Self {
        let n = inputs.dim as f64;
        inputs.raw_value = Some(raw);
        let value = if raw > n {
            notes.push(format!("formula gives {raw:.6} > n; clamped to n = {n}"));
            n
        } else if raw < 0.0 {
            notes.push(format!("formula gives {raw:.6} < 0; clamped to 0"));
            0.0
        } else {
            raw
        };
        notes.push(sample_note(inputs.sample_points));
        Self { theorem, applicable: true, value: Some(value), reason: None, notes, inputs }
    }
}

fn sample_note(points: usize) -> String {
    format!("approximation: extrema over {points} sample points, not a certified bound")
}

/// Extreme Jacobian quantities over a cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianExtrema {
    pub max_abs_det: f64,
    pub min_smallest_singular_value: f64,
    pub max_norm: f64,
    pub points: usize,
    pub escaped: usize,
}

pub fn jacobian_extrema(sys: &SystemDescriptor, cloud: &PointCloud) -> Result<JacobianExtrema, BoundsError> {
    let per_point: Vec<Option<(f64, f64, f64)>> = cloud
        .par_points()
        .map(|p| match sys.jacobian(p) {
            Ok(j) => {
                let sv = singular_values(&j)?;
                Ok(Some((log_abs_det(&j)?.log_magnitude, sv.smallest(), sv.largest())))
            }
            Err(SystemError::Escaped { .. }) => Ok(None),
            Err(e) => Err(BoundsError::from(e)),
        })
        .collect::<Result<_, BoundsError>>()?;
    let mut ext = JacobianExtrema {
        max_abs_det: 0.0,
        min_smallest_singular_value: f64::INFINITY,
        max_norm: 0.0,
        points: 0,
        escaped: 0,
    };
    let mut max_log_det = f64::NEG_INFINITY;
    for v in per_point {
        match v {
            Some((ld, smin, smax)) => {
                ext.points += 1;
                max_log_det = max_log_det.max(ld);
                ext.min_smallest_singular_value = ext.min_smallest_singular_value.min(smin);
                ext.max_norm = ext.max_norm.max(smax);
            }
            None => ext.escaped += 1,
        }
    }
    if ext.points == 0 {
        return Err(BoundsError::AllEscaped(cloud.len()));
    }
    ext.max_abs_det = max_log_det.exp();
    Ok(ext)
}

/// Smallest admissible `d` for the singular-value/determinant inequality,
/// given the extrema and the dimension `n`.
///
/// `D·σ^(d-n)` decreases in `d` when `σ < 1`, so the minimum solves
/// `D·σ^(d-n) = 1`: `d* = n + log D / (-log σ)`. Some `d <= n` satisfies the
/// inequality exactly when `D <= 1`.
pub fn thm11_from_extrema(max_abs_det: f64, min_smallest_sv: f64, dim: usize, sample_points: usize) -> BoundResult {
    let n = dim as f64;
    let inputs = InputsDigest {
        dim,
        sample_points,
        max_abs_det: Some(max_abs_det),
        min_smallest_singular_value: Some(min_smallest_sv),
        ..InputsDigest::default()
    };
    if !(min_smallest_sv > 0.0 && min_smallest_sv < 1.0) {
        return BoundResult::inapplicable(Theorem::Thm11, "hypothesis 0 < min Sₙ < 1 fails", inputs);
    }
    let mut log_det = max_abs_det.ln();
    if log_det > 0.0 && log_det <= LOG_DET_TOLERANCE {
        log_det = 0.0;
    }
    if log_det > 0.0 {
        return BoundResult::inapplicable(Theorem::Thm11, "no d ≤ n satisfies the inequality", inputs);
    }
    let d_star = n + log_det / -min_smallest_sv.ln();
    let mut notes = Vec::new();
    if log_det < 0.0 {
        notes.push(format!(
            "inequality is strict at d = n (max|det| = {max_abs_det:.6} < 1), so the singular-value hypothesis could be dropped"
        ));
    } else {
        notes.push("inequality holds with equality at d = n (max|det| = 1)".to_string());
    }
    notes.push("also bounds the Hausdorff dimension, which never exceeds the upper box dimension".into());
    BoundResult::clamped(Theorem::Thm11, d_star, inputs, notes)
}

/// Singular-value/determinant bound for a backward-invariant set of a
/// diffeomorphism onto its image, with extrema over the sample.
pub fn thm11_min_d(sys: &SystemDescriptor, cloud: &PointCloud) -> Result<BoundResult, BoundsError> {
    let ext = jacobian_extrema(sys, cloud)?;
    let mut result = thm11_from_extrema(ext.max_abs_det, ext.min_smallest_singular_value, sys.dim(), ext.points);
    if result.applicable {
        if !sys.has_inverse {
            result =
                BoundResult::inapplicable(Theorem::Thm11, "map is not a diffeomorphism onto its image", result.inputs);
        } else if !sys.invariance.is_backward() {
            result =
                BoundResult::inapplicable(Theorem::Thm11, "invariant set is not backward invariant", result.inputs);
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseRoute {
    /// Follow forward orbits `y, f(y), …` and multiply inverse Jacobians,
    /// giving `D_x f^{-m}` at `x = f^m(y)`. Valid because a backward-invariant
    /// set satisfies `K ⊂ f^m(K)`, and numerically stable on attractors.
    PreimageOrbits,
    /// Iterate the inverse map directly from each sample point.
    InverseOrbits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthOptions {
    pub inverse_route: InverseRoute,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        Self { inverse_route: InverseRoute::PreimageOrbits }
    }
}

/// Exponential growth rates of `min |det D f^{±m}|` and `max ||D f^{±m}||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRates {
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inverse_route: Option<InverseRoute>,
    pub dim: usize,
    pub m_values: Vec<usize>,
    /// `(1/m) log min |det D f^{±m}|` over the sample.
    pub c_over_m: Vec<f64>,
    /// `(1/m) log max ||D f^{±m}||` over the sample.
    pub a_over_m: Vec<f64>,
    /// `(1/m) log max Π ||D f^{±1}||` along the orbit: the cruder bound used in proofs.
    pub a_over_m_product_of_norms: Vec<f64>,
    /// Sample points whose orbit reached each `m`.
    pub points_used: Vec<usize>,
    pub sample_points: usize,
    /// Points whose orbit escaped before the largest `m`.
    pub dropped: usize,
    /// Running maximum of `c_over_m` (superadditive sequence).
    pub b_hat: f64,
    /// Running minimum of `a_over_m` (subadditive sequence).
    pub s_hat: f64,
    pub map_is_diffeomorphism: bool,
    pub invariance: Invariance,
}

/// `1, 2, 4, …` up to `m_max`, with `m_max` appended when not a power of two.
pub fn doubling_schedule(m_max: usize) -> Vec<usize> {
    let mut ms: Vec<usize> =
        std::iter::successors(Some(1usize), |m| m.checked_mul(2)).take_while(|&m| m <= m_max).collect();
    if ms.last() != Some(&m_max) {
        ms.push(m_max);
    }
    ms
}

pub fn growth_rates(
    sys: &SystemDescriptor,
    cloud: &PointCloud,
    m_max: usize,
    direction: Direction,
) -> Result<GrowthRates, BoundsError> {
    growth_rates_with(sys, cloud, m_max, direction, &GrowthOptions::default())
}

/// Per-point records at each scheduled `m`: `(log|det|, log||P||, Σ log||A||)`.
type OrbitRecord = Vec<(f64, f64, f64)>;

fn orbit_record(
    sys: &SystemDescriptor,
    start: &[f64],
    schedule: &[usize],
    direction: Direction,
    route: InverseRoute,
) -> Result<OrbitRecord, BoundsError> {
    let m_max = *schedule.last().expect("non-empty schedule");
    let mut x = start.to_vec();
    let mut product = LogScaledProduct::identity(sys.dim())?;
    let mut norm_sum = 0.0;
    let mut out = Vec::with_capacity(schedule.len());
    let mut next = 0;
    for m in 1..=m_max {
        let step: Result<Matrix, SystemError> = match (direction, route) {
            (Direction::Forward, _) => sys.jacobian(&x).and_then(|j| sys.step(&mut x).map(|_| j)),
            (Direction::Inverse, InverseRoute::InverseOrbits) => {
                sys.inverse_jacobian(&x).and_then(|j| sys.inverse_step(&mut x).map(|_| j))
            }
            (Direction::Inverse, InverseRoute::PreimageOrbits) => sys.jacobian(&x).and_then(|j| {
                sys.step(&mut x)?;
                j.inverse().map_err(SystemError::from)
            }),
        };
        let factor = match step {
            Ok(f) => f,
            Err(SystemError::Escaped { .. })
            | Err(SystemError::Linalg(LinalgError::Singular | LinalgError::NonFinite { .. })) => break,
            Err(e) => return Err(e.into()),
        };
        norm_sum += operator_norm(&factor)?.ln();
        match (direction, route) {
            (Direction::Inverse, InverseRoute::PreimageOrbits) => product.push_right(&factor)?,
            _ => product.push_left(&factor)?,
        }
        if m == schedule[next] {
            out.push((product.log_det().log_magnitude, product.log_norm()?, norm_sum));
            next += 1;
        }
    }
    Ok(out)
}

/// Growth rates along orbits of the sample, with the direction's Jacobian
/// chain accumulated by [`LogScaledProduct`]. Points whose orbit escapes the
/// domain contribute only to the `m` values reached before escaping.
pub fn growth_rates_with(
    sys: &SystemDescriptor,
    cloud: &PointCloud,
    m_max: usize,
    direction: Direction,
    opts: &GrowthOptions,
) -> Result<GrowthRates, BoundsError> {
    if m_max == 0 {
        return Err(BoundsError::InvalidHorizon);
    }
    if direction == Direction::Inverse && !sys.has_inverse {
        return Err(BoundsError::NoInverse(sys.name.clone()));
    }
    let schedule = doubling_schedule(m_max);
    let records: Vec<OrbitRecord> = cloud
        .par_points()
        .map(|p| orbit_record(sys, p, &schedule, direction, opts.inverse_route))
        .collect::<Result<_, _>>()?;

    let mut rates = GrowthRates {
        direction,
        inverse_route: (direction == Direction::Inverse).then_some(opts.inverse_route),
        dim: sys.dim(),
        m_values: Vec::new(),
        c_over_m: Vec::new(),
        a_over_m: Vec::new(),
        a_over_m_product_of_norms: Vec::new(),
        points_used: Vec::new(),
        sample_points: cloud.len(),
        dropped: records.iter().filter(|r| r.len() < schedule.len()).count(),
        b_hat: f64::NEG_INFINITY,
        s_hat: f64::INFINITY,
        map_is_diffeomorphism: sys.has_inverse,
        invariance: sys.invariance,
    };
    for (k, &m) in schedule.iter().enumerate() {
        let reached: Vec<&(f64, f64, f64)> = records.iter().filter_map(|r| r.get(k)).collect();
        if reached.is_empty() {
            break;
        }
        let mf = m as f64;
        let min_det = reached.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let max_norm = reached.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let max_norm_product = reached.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
        rates.m_values.push(m);
        rates.c_over_m.push(min_det / mf);
        rates.a_over_m.push(max_norm / mf);
        rates.a_over_m_product_of_norms.push(max_norm_product / mf);
        rates.points_used.push(reached.len());
    }
    if rates.m_values.is_empty() {
        return Err(BoundsError::AllEscaped(cloud.len()));
    }
    rates.b_hat = rates.c_over_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rates.s_hat = rates.a_over_m.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(rates)
}

fn rates_digest(rates: &GrowthRates) -> InputsDigest {
    InputsDigest {
        dim: rates.dim,
        sample_points: rates.sample_points,
        b_hat: Some(rates.b_hat),
        s_hat: Some(rates.s_hat),
        m_max: rates.m_values.last().copied(),
        ..InputsDigest::default()
    }
}

fn check_direction(bound: &'static str, rates: &GrowthRates, expected: Direction) -> Result<(), BoundsError> {
    if rates.direction != expected {
        return Err(BoundsError::DirectionMismatch { bound, expected, got: rates.direction });
    }
    Ok(())
}

/// `n - b/s` given `b > 0`; shared by the forward and inverse variants.
fn ratio_bound(
    theorem: Theorem,
    rates: &GrowthRates,
    numerator: f64,
    mut inputs: InputsDigest,
    notes: Vec<String>,
) -> BoundResult {
    if rates.b_hat.is_nan() || rates.b_hat <= 0.0 {
        return BoundResult::inapplicable(theorem, "hypothesis b > 0 fails", inputs);
    }
    if rates.s_hat.is_nan() || rates.s_hat <= 0.0 {
        // b > 0 forces s > 0 for exact rates; finite-m estimates can disagree
        inputs.raw_value = None;
        return BoundResult::inapplicable(theorem, "estimated s ≤ 0 contradicts b > 0 (increase m_max)", inputs);
    }
    let raw = rates.dim as f64 - numerator / rates.s_hat;
    BoundResult::clamped(theorem, raw, inputs, notes)
}

/// Bound from growth rates of the inverse iterates on a backward-invariant set.
pub fn thm25_bound(rates: &GrowthRates, dim: usize) -> Result<BoundResult, BoundsError> {
    check_direction("thm25_bound", rates, Direction::Inverse)?;
    let mut inputs = rates_digest(rates);
    inputs.dim = dim;
    if !rates.invariance.is_backward() {
        return Ok(BoundResult::inapplicable(Theorem::Thm25, "invariant set is not backward invariant", inputs));
    }
    Ok(ratio_bound(Theorem::Thm25, rates, rates.b_hat, inputs, Vec::new()))
}

/// Bound from forward growth rates on a forward-invariant set of a diffeomorphism.
pub fn remark24_bound(rates: &GrowthRates, dim: usize) -> Result<BoundResult, BoundsError> {
    check_direction("remark24_bound", rates, Direction::Forward)?;
    let mut inputs = rates_digest(rates);
    inputs.dim = dim;
    if !rates.map_is_diffeomorphism {
        return Ok(BoundResult::inapplicable(Theorem::Rmk24, "map is not a diffeomorphism onto its image", inputs));
    }
    if !rates.invariance.is_forward() {
        return Ok(BoundResult::inapplicable(Theorem::Rmk24, "invariant set is not forward invariant", inputs));
    }
    Ok(ratio_bound(Theorem::Rmk24, rates, rates.b_hat, inputs, Vec::new()))
}

/// Bound `n - (b - log deg)/s` for a map of Brouwer degree `degree`.
pub fn thm12_bound(rates: &GrowthRates, degree: u32, dim: usize) -> Result<BoundResult, BoundsError> {
    check_direction("thm12_bound", rates, Direction::Forward)?;
    let mut inputs = rates_digest(rates);
    inputs.dim = dim;
    inputs.degree = Some(degree);
    if degree == 0 {
        return Ok(BoundResult::inapplicable(Theorem::Thm12, "degree must be at least 1", inputs));
    }
    if rates.c_over_m.iter().any(|c| !c.is_finite()) {
        return Ok(BoundResult::inapplicable(Theorem::Thm12, "Jacobian determinant vanishes on the sample", inputs));
    }
    let log_deg = f64::from(degree).ln();
    let mut notes = Vec::new();
    if rates.b_hat > 0.0 && rates.b_hat <= log_deg {
        notes
            .push(format!("b = {:.6} ≤ log degree = {log_deg:.6}: the bound is not guaranteed to be < n", rates.b_hat));
    }
    Ok(ratio_bound(Theorem::Thm12, rates, rates.b_hat - log_deg, inputs, notes))
}

/// Signed count of preimages of `target`, i.e. the Brouwer degree when
/// `target` is a regular value.
///
/// Preimages are located by Newton iteration from a `grid_resolution^n`
/// grid of seeds, deduplicated within [`DEDUP_RADIUS`].
pub fn degree_check(sys: &SystemDescriptor, target: &[f64], grid_resolution: usize) -> Result<i64, BoundsError> {
    let ambient: AmbientSpace = sys.ambient;
    if !ambient.is_torus() {
        return Err(BoundsError::NotTorus(ambient.to_string()));
    }
    let n = ambient.dim;
    if target.len() != n {
        return Err(BoundsError::PointDimension { expected: n, got: target.len() });
    }
    if grid_resolution == 0 {
        return Err(BoundsError::InvalidGrid);
    }
    let mut y = target.to_vec();
    ambient.wrap(&mut y);

    let seeds = grid_resolution.pow(n as u32);
    let found: Vec<Option<Vec<f64>>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rem = s;
            let mut x: Vec<f64> = (0..n)
                .map(|_| {
                    let v = ((rem % grid_resolution) as f64 + 0.5) / grid_resolution as f64;
                    rem /= grid_resolution;
                    v
                })
                .collect();
            newton_preimage(sys, &mut x, &y).then_some(x)
        })
        .collect();

    let mut roots: Vec<Vec<f64>> = Vec::new();
    for x in found.into_iter().flatten() {
        if roots.iter().all(|r| ambient.distance(r, &x) >= DEDUP_RADIUS) {
            roots.push(x);
        }
    }
    let mut degree = 0i64;
    for x in &roots {
        let det = log_abs_det(&sys.jacobian(x)?)?;
        if det.is_singular() || det.abs() <= CRITICAL_DET {
            return Err(BoundsError::NearCritical { point: x.clone(), det: det.abs() });
        }
        degree += i64::from(det.sign);
    }
    Ok(degree)
}

fn newton_preimage(sys: &SystemDescriptor, x: &mut [f64], target: &[f64]) -> bool {
    let ambient = sys.ambient;
    for _ in 0..NEWTON_MAX_ITERS {
        let Ok(fx) = sys.evaluate(x) else { return false };
        let residual: Vec<f64> = fx.iter().zip(target).map(|(&a, &b)| ambient.delta(b, a)).collect();
        if residual.iter().map(|r| r * r).sum::<f64>().sqrt() < NEWTON_TOLERANCE {
            return true;
        }
        let Ok(step) = sys.jacobian(x).map_err(|_| ()).and_then(|j| j.inverse().map_err(|_| ())) else {
            return false;
        };
        let Ok(dx) = step.mul_vec(&residual) else { return false };
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi -= d;
        }
        ambient.wrap(x);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::default_system;

    #[test]
    fn schedule_doubles() {
        assert_eq!(doubling_schedule(1), vec![1]);
        assert_eq!(doubling_schedule(32), vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(doubling_schedule(20), vec![1, 2, 4, 8, 16, 20]);
    }

    #[test]
    fn thm11_closed_form_examples() {
        let r = thm11_from_extrema(0.8, 0.2, 2, 1);
        assert!(r.applicable);
        assert!((r.value.unwrap() - (2.0 + 0.8f64.ln() / -0.2f64.ln())).abs() < 1e-15);
        let r = thm11_from_extrema(6.0, 0.5, 2, 1);
        assert!(!r.applicable);
        assert_eq!(r.reason.as_deref(), Some("no d ≤ n satisfies the inequality"));
        let r = thm11_from_extrema(0.5, 1.0, 2, 1);
        assert_eq!(r.reason.as_deref(), Some("hypothesis 0 < min Sₙ < 1 fails"));
        let r = thm11_from_extrema(0.0, 0.0, 2, 1);
        assert!(!r.applicable);
    }

    #[test]
    fn thm11_clamps_below_zero() {
        // D = 0.01, σ = 0.5: d* = 2 - log(100)/log(2) < 0
        let r = thm11_from_extrema(0.01, 0.5, 2, 1);
        assert!(r.applicable);
        assert_eq!(r.value, Some(0.0));
        assert!(r.inputs.raw_value.unwrap() < 0.0);
        assert!(r.notes.iter().any(|n| n.contains("clamped to 0")));
    }

    #[test]
    fn toral_endomorphism_thm11_inapplicable() {
        let sys = default_system("toral_endomorphism").unwrap();
        let cloud = sys.sample_invariant_set(400, 1).unwrap();
        assert!(!thm11_min_d(&sys, &cloud).unwrap().applicable);
    }

    #[test]
    fn direction_mismatch_is_an_error() {
        let sys = default_system("cat_map").unwrap();
        let cloud = sys.sample_invariant_set(100, 1).unwrap();
        let fwd = growth_rates(&sys, &cloud, 4, Direction::Forward).unwrap();
        assert!(matches!(thm25_bound(&fwd, 2), Err(BoundsError::DirectionMismatch { .. })));
        let inv = growth_rates(&sys, &cloud, 4, Direction::Inverse).unwrap();
        assert!(matches!(remark24_bound(&inv, 2), Err(BoundsError::DirectionMismatch { .. })));
        assert!(matches!(thm12_bound(&inv, 1, 2), Err(BoundsError::DirectionMismatch { .. })));
    }

    #[test]
    fn inverse_rates_need_inverse() {
        let sys = default_system("circle_expanding").unwrap();
        let cloud = sys.sample_invariant_set(100, 1).unwrap();
        assert!(matches!(growth_rates(&sys, &cloud, 4, Direction::Inverse), Err(BoundsError::NoInverse(_))));
        assert!(matches!(growth_rates(&sys, &cloud, 0, Direction::Forward), Err(BoundsError::InvalidHorizon)));
    }

    #[test]
    fn cat_map_rates_have_zero_b() {
        let sys = default_system("cat_map").unwrap();
        let cloud = sys.sample_invariant_set(100, 1).unwrap();
        let fwd = growth_rates(&sys, &cloud, 8, Direction::Forward).unwrap();
        assert!(fwd.b_hat.abs() < 1e-12);
        let r = remark24_bound(&fwd, 2).unwrap();
        assert!(!r.applicable);
        assert_eq!(r.reason.as_deref(), Some("hypothesis b > 0 fails"));
    }

    #[test]
    fn degree_check_needs_torus() {
        let sys = default_system("henon").unwrap();
        assert!(matches!(degree_check(&sys, &[0.0, 0.0], 4), Err(BoundsError::NotTorus(_))));
        let circle = default_system("circle_expanding").unwrap();
        assert!(matches!(degree_check(&circle, &[0.1, 0.2], 4), Err(BoundsError::PointDimension { .. })));
        assert!(matches!(degree_check(&circle, &[0.1], 0), Err(BoundsError::InvalidGrid)));
    }
}
