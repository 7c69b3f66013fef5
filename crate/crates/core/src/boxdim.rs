//! Empirical upper box dimension: grid box counting and the
//! neighbourhood-volume route `n + limsup log vol(B_r K) / -log r`.
//!
//! Boxes of an axis-aligned grid stand in for the covering balls of the
//! definition. A set met by `N` boxes of side `δ` is covered by `N` balls of
//! radius `δ√n`, and any ball of radius `δ` meets at most `3^n` grid cells, so
//! the two counts differ by bounded factors and give the same log-log slope.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::PointCloud;

pub const DEFAULT_SATURATION_FRACTION: f64 = 0.1;
pub const DEFAULT_RATIO: f64 = 0.5;
pub const DEFAULT_SCALES: usize = 8;
pub const MIN_USABLE_SCALES: usize = 3;
/// Fine-grid cell side as a fraction of the neighbourhood radius.
pub const VOLUME_CELL_FACTOR: f64 = 0.25;
/// Fine grids with at most this many cells use a dense bitset.
const DENSE_CELL_LIMIT: u128 = 1 << 28;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxDimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid scale schedule: {0}")]
    InvalidSchedule(String),
    #[error("only {usable} of {} scales usable (need {required}); saturation threshold {threshold}", scales.len())]
    InsufficientScales { usable: usize, required: usize, threshold: f64, scales: Vec<ScaleSample> },
    #[error("grid with {0} cells per axis is too fine to index")]
    GridTooFine(String),
}

/// Decreasing list of box sides / neighbourhood radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    deltas: Vec<f64>,
}

impl ScaleSchedule {
    pub fn new(deltas: Vec<f64>) -> Result<Self, BoxDimError> {
        if deltas.is_empty() {
            return Err(BoxDimError::InvalidSchedule("no scales".into()));
        }
        if let Some(d) = deltas.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(BoxDimError::InvalidSchedule(format!("scale {d} is not positive")));
        }
        if deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(BoxDimError::InvalidSchedule("scales must be strictly decreasing".into()));
        }
        Ok(Self { deltas })
    }

    /// `delta_max, delta_max·ratio, …` with `count` entries.
    pub fn geometric(delta_max: f64, ratio: f64, count: usize) -> Result<Self, BoxDimError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(BoxDimError::InvalidSchedule(format!("ratio {ratio} not in (0, 1)")));
        }
        Self::new((0..count).map(|k| delta_max * ratio.powi(k as i32)).collect())
    }

    /// Domain extent / 4, ratio 1/2, eight scales.
    pub fn default_for(cloud: &PointCloud) -> Self {
        Self::geometric(cloud.domain_extent() / 4.0, DEFAULT_RATIO, DEFAULT_SCALES).expect("valid default schedule")
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Scales whose box count exceeds this fraction of the sample size are
    /// treated as saturated by the finite sample and excluded from the fit.
    pub saturation_fraction: f64,
    pub min_scales: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { saturation_fraction: DEFAULT_SATURATION_FRACTION, min_scales: MIN_USABLE_SCALES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    BoxCounting,
    NeighborhoodVolume,
}

/// Box count or neighbourhood volume at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleValue {
    Count(u64),
    Volume(f64),
}

impl ScaleValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ScaleValue::Count(c) => c as f64,
            ScaleValue::Volume(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub delta: f64,
    /// `None` for saturated scales where the volume was not computed.
    pub count: Option<ScaleValue>,
    pub box_count: u64,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    /// Dimension estimate: the slope for box counting, `n + slope` for volumes.
    pub estimate: f64,
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub scales: Vec<ScaleSample>,
    /// Two-point slopes between consecutive used scales.
    pub local_slopes: Vec<f64>,
    pub saturation_threshold: f64,
}

impl FitResult {
    pub fn scales_used(&self) -> Vec<f64> {
        self.scales.iter().filter(|s| s.used).map(|s| s.delta).collect()
    }
}

/// Mixed-radix packing of bounded integer cell coordinates into one `u128`.
struct CellPacker {
    lo: Vec<i64>,
    strides: Vec<u128>,
    total: u128,
}

impl CellPacker {
    fn new(lo: &[i64], hi: &[i64]) -> Result<Self, BoxDimError> {
        let mut strides = Vec::with_capacity(lo.len());
        let mut stride: u128 = 1;
        for (&l, &h) in lo.iter().zip(hi) {
            strides.push(stride);
            let extent = (h - l + 1) as u128;
            stride = stride.checked_mul(extent).ok_or_else(|| BoxDimError::GridTooFine(format!("{extent}")))?;
        }
        Ok(Self { lo: lo.to_vec(), strides, total: stride })
    }

    #[inline]
    fn pack(&self, idx: impl Iterator<Item = i64>) -> u128 {
        idx.zip(&self.lo).zip(&self.strides).map(|((i, l), s)| (i - l) as u128 * s).sum()
    }
}

fn check_scale(delta: f64, what: &str) -> Result<(), BoxDimError> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(BoxDimError::InvalidInput(format!("{what} must be positive and finite, got {delta}")))
    }
}

/// Cells per axis of the torus grid with side at most `delta`.
fn torus_cells(delta: f64) -> Result<i64, BoxDimError> {
    let c = (1.0 / delta - 1e-9).ceil().max(1.0);
    if c > (1u64 << 40) as f64 {
        return Err(BoxDimError::GridTooFine(format!("{c}")));
    }
    Ok(c as i64)
}

/// Number of occupied grid cells of side `delta`.
///
/// Euclidean grids are anchored at the origin; on the torus the grid has
/// `⌈1/delta⌉` cells per axis with wraparound.
pub fn box_count(cloud: &PointCloud, delta: f64) -> Result<u64, BoxDimError> {
    check_scale(delta, "box side")?;
    let n = cloud.dim();
    let wrap = if cloud.ambient().is_torus() { Some(torus_cells(delta)?) } else { None };
    let cell_of = |v: f64| -> i64 {
        match wrap {
            Some(c) => ((v * c as f64).floor() as i64).clamp(0, c - 1),
            None => (v / delta).floor() as i64,
        }
    };
    let (lo, hi): (Vec<i64>, Vec<i64>) = match wrap {
        Some(c) => (vec![0; n], vec![c - 1; n]),
        None => cloud.bounds().iter().map(|&(l, h)| (cell_of(l), cell_of(h))).unzip(),
    };
    let packer = CellPacker::new(&lo, &hi)?;
    let mut keys: Vec<u128> = cloud.par_points().map(|p| packer.pack(p.iter().map(|&v| cell_of(v)))).collect();
    keys.par_sort_unstable();
    keys.dedup();
    Ok(keys.len() as u64)
}

/// Estimated volume of the open `r`-neighbourhood of the sampled set.
///
/// Counts cells of a fine grid (side `r/4`, or `1/⌈4/r⌉` on the torus) whose
/// centres lie within distance `r` of some sample point.
pub fn neighborhood_volume(cloud: &PointCloud, r: f64) -> Result<f64, BoxDimError> {
    check_scale(r, "radius")?;
    let n = cloud.dim();
    let ambient = cloud.ambient();
    let (h, wrap) = if ambient.is_torus() {
        let c = torus_cells(r * VOLUME_CELL_FACTOR)?;
        (1.0 / c as f64, Some(c))
    } else {
        (r * VOLUME_CELL_FACTOR, None)
    };
    let (lo, hi): (Vec<i64>, Vec<i64>) = match wrap {
        Some(c) => (vec![0; n], vec![c - 1; n]),
        None => cloud
            .bounds()
            .iter()
            .map(|&(l, u)| (((l - r) / h).floor() as i64 - 1, ((u + r) / h).floor() as i64 + 1))
            .unzip(),
    };
    let packer = CellPacker::new(&lo, &hi)?;
    let r2 = r * r;

    // calls `emit` with the key of every fine cell whose centre is within r of p
    let cells_near = |p: &[f64], emit: &mut dyn FnMut(u128)| {
        let first: Vec<i64> = p.iter().map(|&v| ((v - r) / h).floor() as i64).collect();
        let last: Vec<i64> = p.iter().map(|&v| ((v + r) / h).floor() as i64).collect();
        let mut idx = first.clone();
        'cells: loop {
            let d2: f64 = idx.iter().zip(p).map(|(&i, &v)| ambient.delta(v, (i as f64 + 0.5) * h).powi(2)).sum();
            if d2 < r2 {
                emit(packer.pack(idx.iter().map(|&i| match wrap {
                    Some(c) => i.rem_euclid(c),
                    None => i,
                })));
            }
            // odometer increment over the candidate box
            for axis in 0..n {
                if idx[axis] < last[axis] {
                    idx[axis] += 1;
                    continue 'cells;
                }
                idx[axis] = first[axis];
            }
            break;
        }
    };

    let occupied = if packer.total <= DENSE_CELL_LIMIT {
        let words: Vec<AtomicU64> = (0..packer.total.div_ceil(64)).map(|_| AtomicU64::new(0)).collect();
        cloud.par_points().for_each(|p| {
            cells_near(p, &mut |k| {
                words[(k / 64) as usize].fetch_or(1 << (k % 64), Ordering::Relaxed);
            })
        });
        words.iter().map(|w| u64::from(w.load(Ordering::Relaxed).count_ones())).sum::<u64>()
    } else {
        let set = cloud
            .par_points()
            .fold(HashSet::new, |mut set: HashSet<u128>, p| {
                cells_near(p, &mut |k| {
                    set.insert(k);
                });
                set
            })
            .reduce(HashSet::new, |a, b| {
                let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
                big.extend(small);
                big
            });
        set.len() as u64
    };
    Ok(occupied as f64 * h.powi(n as i32))
}

/// Ordinary least squares `y = slope·x + intercept`; returns the RMS residual too.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / m).sqrt();
    (slope, intercept, rms)
}

fn check_schedule(cloud: &PointCloud, schedule: &ScaleSchedule) -> Result<(), BoxDimError> {
    let diameter = cloud.domain_extent() * (cloud.dim() as f64).sqrt();
    if schedule.deltas()[0] > diameter * (1.0 + 1e-12) {
        return Err(BoxDimError::InvalidSchedule(format!(
            "largest scale {} exceeds domain diameter {diameter}",
            schedule.deltas()[0]
        )));
    }
    Ok(())
}

/// Counts above this are treated as saturated. Never below one box: a single
/// occupied cell cannot be a sampling undercount.
fn saturation_threshold(opts: &FitOptions, points: usize) -> f64 {
    (opts.saturation_fraction * points as f64).max(1.0)
}

fn box_counts(cloud: &PointCloud, schedule: &ScaleSchedule) -> Result<Vec<u64>, BoxDimError> {
    schedule.deltas().par_iter().map(|&d| box_count(cloud, d)).collect()
}

fn fit(
    kind: FitKind,
    offset: f64,
    scales: Vec<ScaleSample>,
    threshold: f64,
    opts: &FitOptions,
) -> Result<FitResult, BoxDimError> {
    let used: Vec<&ScaleSample> = scales.iter().filter(|s| s.used).collect();
    if used.len() < opts.min_scales.max(2) {
        return Err(BoxDimError::InsufficientScales {
            usable: used.len(),
            required: opts.min_scales.max(2),
            threshold,
            scales,
        });
    }
    let xs: Vec<f64> = used.iter().map(|s| -s.delta.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|s| s.count.expect("used scale has a value").as_f64().ln()).collect();
    let (slope, intercept, residual_rms) = least_squares(&xs, &ys);
    let local_slopes = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0])).collect();
    Ok(FitResult {
        kind,
        estimate: offset + slope,
        slope,
        intercept,
        residual_rms,
        scales,
        local_slopes,
        saturation_threshold: threshold,
    })
}

pub fn estimate_box_dimension(cloud: &PointCloud, schedule: &ScaleSchedule) -> Result<FitResult, BoxDimError> {
    estimate_box_dimension_with(cloud, schedule, &FitOptions::default())
}

/// Least-squares slope of `log N_δ` against `-log δ` over unsaturated scales.
pub fn estimate_box_dimension_with(
    cloud: &PointCloud,
    schedule: &ScaleSchedule,
    opts: &FitOptions,
) -> Result<FitResult, BoxDimError> {
    check_schedule(cloud, schedule)?;
    let threshold = saturation_threshold(opts, cloud.len());
    let counts = box_counts(cloud, schedule)?;
    let scales = schedule
        .deltas()
        .iter()
        .zip(&counts)
        .map(|(&delta, &c)| ScaleSample {
            delta,
            count: Some(ScaleValue::Count(c)),
            box_count: c,
            used: c as f64 <= threshold,
        })
        .collect();
    fit(FitKind::BoxCounting, 0.0, scales, threshold, opts)
}

pub fn lemma21_estimate(cloud: &PointCloud, schedule: &ScaleSchedule) -> Result<FitResult, BoxDimError> {
    lemma21_estimate_with(cloud, schedule, &FitOptions::default())
}

/// `n` plus the slope of `log vol(B_r)` against `-log r`, over the same
/// unsaturated scales as box counting.
pub fn lemma21_estimate_with(
    cloud: &PointCloud,
    schedule: &ScaleSchedule,
    opts: &FitOptions,
) -> Result<FitResult, BoxDimError> {
    check_schedule(cloud, schedule)?;
    let threshold = saturation_threshold(opts, cloud.len());
    let counts = box_counts(cloud, schedule)?;
    let scales: Result<Vec<ScaleSample>, BoxDimError> = schedule
        .deltas()
        .par_iter()
        .zip(&counts)
        .map(|(&delta, &c)| {
            let used = c as f64 <= threshold;
            let count = if used { Some(ScaleValue::Volume(neighborhood_volume(cloud, delta)?)) } else { None };
            Ok(ScaleSample { delta, count, box_count: c, used })
        })
        .collect();
    fit(FitKind::NeighborhoodVolume, cloud.dim() as f64, scales?, threshold, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudMeta;
    use crate::systems::AmbientSpace;

    fn cloud(ambient: AmbientSpace, pts: &[Vec<f64>]) -> PointCloud {
        PointCloud::from_points(ambient, pts, CloudMeta::external("test")).unwrap()
    }

    fn grid(g: usize, ambient: AmbientSpace) -> PointCloud {
        let pts: Vec<Vec<f64>> =
            (0..g * g).map(|i| vec![((i % g) as f64 + 0.5) / g as f64, ((i / g) as f64 + 0.5) / g as f64]).collect();
        cloud(ambient, &pts)
    }

    #[test]
    fn single_point_counts_one() {
        let c = cloud(AmbientSpace::euclidean(2), &[vec![0.3, -0.7]]);
        for d in [1.0, 0.1, 1e-3, 1e-9] {
            assert_eq!(box_count(&c, d).unwrap(), 1);
        }
    }

    #[test]
    fn full_grid_hits_every_cell() {
        assert_eq!(box_count(&grid(100, AmbientSpace::euclidean(2)), 0.1).unwrap(), 100);
        assert_eq!(box_count(&grid(100, AmbientSpace::torus(2)), 0.1).unwrap(), 100);
    }

    #[test]
    fn torus_cells_wrap() {
        // delta = 0.3 gives 4 cells per axis on the torus
        let c = cloud(AmbientSpace::torus(1), &[vec![0.0], vec![0.26], vec![0.51], vec![0.76], vec![0.99]]);
        assert_eq!(box_count(&c, 0.3).unwrap(), 4);
    }

    #[test]
    fn rejects_nonpositive_scales() {
        let c = cloud(AmbientSpace::euclidean(1), &[vec![0.0]]);
        assert!(matches!(box_count(&c, 0.0), Err(BoxDimError::InvalidInput(_))));
        assert!(matches!(box_count(&c, -1.0), Err(BoxDimError::InvalidInput(_))));
        assert!(matches!(neighborhood_volume(&c, 0.0), Err(BoxDimError::InvalidInput(_))));
        assert!(matches!(neighborhood_volume(&c, f64::NAN), Err(BoxDimError::InvalidInput(_))));
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(ScaleSchedule::new(vec![0.5, 0.6]).is_err());
        assert!(ScaleSchedule::new(vec![0.5, -0.1]).is_err());
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert!(ScaleSchedule::geometric(1.0, 1.5, 3).is_err());
        let s = ScaleSchedule::geometric(0.25, 0.5, 3).unwrap();
        assert_eq!(s.deltas(), &[0.25, 0.125, 0.0625]);
    }

    #[test]
    fn schedule_larger_than_domain_rejected() {
        let c = grid(10, AmbientSpace::torus(2));
        let s = ScaleSchedule::geometric(4.0, 0.5, 4).unwrap();
        assert!(matches!(estimate_box_dimension(&c, &s), Err(BoxDimError::InvalidSchedule(_))));
    }

    #[test]
    fn disc_volume() {
        let c = cloud(AmbientSpace::euclidean(2), &[vec![0.1, 0.2]]);
        for r in [0.01, 0.1, 1.0] {
            let v = neighborhood_volume(&c, r).unwrap();
            let disc = std::f64::consts::PI * r * r;
            assert!((v / disc - 1.0).abs() < 0.1, "r={r}: {v} vs {disc}");
        }
    }

    #[test]
    fn torus_volume_is_one() {
        let c = grid(100, AmbientSpace::torus(2));
        for r in [0.02, 0.05, 0.3] {
            let v = neighborhood_volume(&c, r).unwrap();
            assert!((v - 1.0).abs() < 0.05, "r={r}: {v}");
        }
    }

    #[test]
    fn stadium_volume() {
        let pts: Vec<Vec<f64>> = (0..=2000).map(|i| vec![i as f64 / 2000.0, 0.0]).collect();
        let c = cloud(AmbientSpace::euclidean(2), &pts);
        let r: f64 = 0.05;
        let expected = 2.0 * r + std::f64::consts::PI * r * r;
        let v = neighborhood_volume(&c, r).unwrap();
        assert!((v / expected - 1.0).abs() < 0.1, "{v} vs {expected}");
    }

    #[test]
    fn too_few_scales_reports_diagnostics() {
        let c = grid(10, AmbientSpace::euclidean(2));
        let s = ScaleSchedule::geometric(0.25, 0.5, 6).unwrap();
        match estimate_box_dimension(&c, &s) {
            Err(BoxDimError::InsufficientScales { usable, scales, .. }) => {
                assert!(usable < 3);
                assert_eq!(scales.len(), 6);
            }
            other => panic!("expected insufficient scales, got {other:?}"),
        }
    }

    #[test]
    fn least_squares_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 2.0).collect();
        let (m, b, rms) = least_squares(&xs, &ys);
        assert!((m - 0.5).abs() < 1e-14 && (b + 2.0).abs() < 1e-14 && rms < 1e-14);
    }

    #[test]
    fn fit_result_json_shape() {
        let pts: Vec<Vec<f64>> = (0..1000).map(|i| vec![i as f64 / 1000.0]).collect();
        let c = cloud(AmbientSpace::euclidean(1), &pts);
        let s = ScaleSchedule::geometric(0.25, 0.5, 5).unwrap();
        let fit = estimate_box_dimension(&c, &s).unwrap();
        let json = serde_json::to_value(&fit).unwrap();
        for key in ["slope", "intercept", "residual_rms", "scales"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["scales"][0]["delta"], 0.25);
        assert!(json["scales"][0]["count"].is_u64());
    }
}
