//! Point clouds sampled from invariant sets, plus CSV and binary IO.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content                        |
//! |-------|--------------------------------|
//! | 4     | magic `IDIM`                   |
//! | 1     | format version (currently 1)   |
//! | 4     | dimension `n` as `u32`         |
//! | 8     | point count as `u64`           |
//! | 8·n·count | coordinates as `f64`, point-major |
//!
//! The ambient space is not stored; callers supply it when reading.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::MAX_DIM;
use crate::systems::AmbientSpace;

pub const BINARY_MAGIC: &[u8; 4] = b"IDIM";
pub const BINARY_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("dimension {0} outside supported range 1..={MAX_DIM}")]
    Dimension(usize),
    #[error("coordinate count {len} is not a multiple of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("point {index} is outside the ambient domain {ambient}: {point:?}")]
    OutsideDomain { index: usize, ambient: String, point: Vec<f64> },
    #[error("not an IDIM point cloud (bad magic)")]
    BadMagic,
    #[error("unsupported IDIM version {0}")]
    UnsupportedVersion(u8),
    #[error("file declares dimension {file} but ambient is {ambient}-dimensional")]
    AmbientMismatch { file: usize, ambient: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {msg}")]
    CsvRow { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a cloud was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub method: String,
    pub seed: u64,
    pub budget: usize,
    pub transient: usize,
    /// Scale below which the sample is not expected to resolve the set.
    pub resolution: f64,
}

impl CloudMeta {
    pub fn external(method: &str) -> Self {
        Self { method: method.to_string(), seed: 0, budget: 0, transient: 0, resolution: 0.0 }
    }
}

/// Finite sample of an invariant set, stored point-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    ambient: AmbientSpace,
    coords: Vec<f64>,
    meta: CloudMeta,
}

impl PointCloud {
    pub fn from_flat(ambient: AmbientSpace, coords: Vec<f64>, mut meta: CloudMeta) -> Result<Self, CloudError> {
        let dim = ambient.dim;
        if dim == 0 || dim > MAX_DIM {
            return Err(CloudError::Dimension(dim));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(CloudError::Ragged { len: coords.len(), dim });
        }
        if coords.is_empty() {
            return Err(CloudError::Empty);
        }
        if let Some((index, p)) = coords.chunks_exact(dim).enumerate().find(|(_, p)| !ambient.contains(p)) {
            return Err(CloudError::OutsideDomain { index, ambient: ambient.to_string(), point: p.to_vec() });
        }
        if meta.budget == 0 {
            meta.budget = coords.len() / dim;
        }
        Ok(Self { ambient, coords, meta })
    }

    pub fn from_points<P: AsRef<[f64]>>(
        ambient: AmbientSpace,
        points: &[P],
        meta: CloudMeta,
    ) -> Result<Self, CloudError> {
        let mut coords = Vec::with_capacity(points.len() * ambient.dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != ambient.dim {
                return Err(CloudError::Ragged { len: p.len(), dim: ambient.dim });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(ambient, coords, meta)
    }

    pub fn ambient(&self) -> AmbientSpace {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.ambient.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn meta(&self) -> &CloudMeta {
        &self.meta
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.coords[i * n..(i + 1) * n]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn par_points(&self) -> rayon::slice::ChunksExact<'_, f64> {
        self.coords.par_chunks_exact(self.dim())
    }

    /// Per-axis `(min, max)` over the sample.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let n = self.dim();
        (0..n)
            .map(|d| {
                self.coords
                    .iter()
                    .skip(d)
                    .step_by(n)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }

    /// Largest side of the domain: 1 on the torus, the bounding-box extent
    /// otherwise (1 when the sample is a single location).
    pub fn domain_extent(&self) -> f64 {
        if self.ambient.is_torus() {
            return 1.0;
        }
        let extent = self.bounds().iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
        if extent > 1e-9 {
            extent
        } else {
            1.0
        }
    }

    /// Concatenation of two clouds on the same ambient.
    pub fn union(&self, other: &PointCloud) -> Result<PointCloud, CloudError> {
        if self.ambient != other.ambient {
            return Err(CloudError::AmbientMismatch { file: other.dim(), ambient: self.dim() });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Self::from_flat(self.ambient, coords, CloudMeta::external("union"))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CloudError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(coordinate_names(self.dim()))?;
        for p in self.points() {
            out.write_record(p.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, ambient: AmbientSpace) -> Result<Self, CloudError> {
        let mut input = csv::Reader::from_reader(r);
        let header_len = input.headers()?.len();
        if header_len != ambient.dim {
            return Err(CloudError::AmbientMismatch { file: header_len, ambient: ambient.dim });
        }
        let mut coords = Vec::new();
        for (row, record) in input.records().enumerate() {
            for field in record?.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| CloudError::CsvRow { row: row + 1, msg: format!("`{field}`: {e}") })?;
                coords.push(v);
            }
        }
        Self::from_flat(ambient, coords, CloudMeta::external("csv"))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), CloudError> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&[BINARY_VERSION])?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.coords {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, ambient: AmbientSpace) -> Result<Self, CloudError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(CloudError::BadMagic);
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != BINARY_VERSION {
            return Err(CloudError::UnsupportedVersion(version[0]));
        }
        let mut n = [0u8; 4];
        r.read_exact(&mut n)?;
        let n = u32::from_le_bytes(n) as usize;
        if n != ambient.dim {
            return Err(CloudError::AmbientMismatch { file: n, ambient: ambient.dim });
        }
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut coords = Vec::with_capacity(count.saturating_mul(n).min(1 << 28));
        let mut buf = [0u8; 8];
        for _ in 0..count * n {
            r.read_exact(&mut buf)?;
            coords.push(f64::from_le_bytes(buf));
        }
        Self::from_flat(ambient, coords, CloudMeta::external("binary"))
    }
}

pub fn coordinate_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

type CellKey = [i64; MAX_DIM];

/// Uniform-grid hash of a cloud for radius-limited nearest-point queries.
pub struct NeighborIndex<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    /// cells per axis on the torus
    torus_cells: Option<i64>,
    buckets: HashMap<CellKey, Vec<u32>>,
}

impl<'a> NeighborIndex<'a> {
    /// Index with cells no smaller than `radius` (so a query only needs the
    /// 3^n surrounding cells).
    pub fn new(cloud: &'a PointCloud, radius: f64) -> Self {
        let radius = if radius > 0.0 { radius } else { 1e-9 };
        let (cell, torus_cells) = if cloud.ambient().is_torus() {
            let c = ((1.0 / radius).floor() as i64).max(1);
            (1.0 / c as f64, Some(c))
        } else {
            (radius, None)
        };
        let mut index = Self { cloud, cell, torus_cells, buckets: HashMap::new() };
        for (i, p) in cloud.points().enumerate() {
            let key = index.key(p);
            index.buckets.entry(key).or_default().push(i as u32);
        }
        index
    }

    fn key(&self, p: &[f64]) -> CellKey {
        let mut k = [0i64; MAX_DIM];
        for (slot, &v) in k.iter_mut().zip(p) {
            let idx = (v / self.cell).floor() as i64;
            *slot = match self.torus_cells {
                Some(c) => idx.rem_euclid(c),
                None => idx,
            };
        }
        k
    }

    /// Distance from `q` to the nearest cloud point, if one lies within `radius`.
    ///
    /// The search stops at the first point closer than `radius / 1024`, so a
    /// returned distance below that is an upper bound rather than the minimum.
    /// This keeps queries into very dense cells cheap.
    pub fn nearest_within(&self, q: &[f64], radius: f64) -> Option<f64> {
        let close_enough = radius / 1024.0;
        let n = self.cloud.dim();
        let ambient = self.cloud.ambient();
        let center = self.key(q);
        let reach = (radius / self.cell).ceil().max(1.0) as i64;
        let span = 2 * reach + 1;
        let mut best: Option<f64> = None;
        let total = span.pow(n as u32);
        for combo in 0..total {
            let mut k = center;
            let mut rem = combo;
            for slot in k.iter_mut().take(n) {
                let off = rem % span - reach;
                rem /= span;
                *slot += off;
                if let Some(c) = self.torus_cells {
                    *slot = slot.rem_euclid(c);
                }
            }
            if let Some(bucket) = self.buckets.get(&k) {
                for &i in bucket {
                    let d = ambient.distance(q, self.cloud.point(i as usize));
                    if d <= radius && best.is_none_or(|b| d < b) {
                        best = Some(d);
                        if d <= close_enough {
                            return best;
                        }
                    }
                }
            }
        }
        best
    }
}
