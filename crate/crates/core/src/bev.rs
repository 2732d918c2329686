//! Image-to-BEV lifting with ground-bounded relative depth.
//!
//! Each pixel predicts a categorical distribution over `D` relative depth
//! bins on `(0, 1)`; bin `k` is scaled by the pixel's ground-plane depth
//! bound to a metric depth. Features are lifted into a frustum by an outer
//! product with that distribution, back-projected, and sum-pooled into
//! vertical pillars of a metric ground raster.
//!
//! Axis map: BEV `x` is the world `x` axis, BEV `y` is the world `z` axis
//! (both horizontal), and the world `y` axis (height) is the pooled one.

use ndarray::{Array2, Array3, Array4, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{build_projection_cache, CameraIntrinsics, CameraPose, DepthPrior, ProjectionCache};
use crate::error::{Error, Result};

/// Image features indexed `[u, v, c]` (shape `W × H × C`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatureMap {
    pub data: Array3<f32>,
}

impl ImageFeatureMap {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image features at flat index {pos}")));
        }
        Ok(Self { data })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            data: Array3::zeros((width, height, channels)),
        }
    }

    pub fn width(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }
}

/// Per-pixel relative-depth distribution indexed `[u, v, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthDistribution {
    pub probs: Array3<f32>,
}

impl DepthDistribution {
    pub const SUM_TOLERANCE: f32 = 1e-6;

    pub fn new(probs: Array3<f32>) -> Result<Self> {
        for ((u, v), row) in probs.lanes(Axis(2)).into_iter().enumerate().map(|(i, r)| {
            let h = probs.dim().1;
            ((i / h, i % h), r)
        }) {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::NonFinite(format!("depth distribution at pixel ({u}, {v})")));
            }
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > Self::SUM_TOLERANCE as f64 {
                return Err(Error::Shape(format!(
                    "depth distribution at pixel ({u}, {v}) sums to {sum}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn bins(&self) -> usize {
        self.probs.dim().2
    }
}

/// Maps a pixel's feature vector to a distribution over relative depth bins.
pub trait DepthEstimator {
    fn bins(&self) -> usize;

    /// Writes the distribution for pixel `(u, v)` into `out` (length `bins()`).
    fn estimate(&self, u: usize, v: usize, features: ArrayView1<f32>, out: &mut [f64]);
}

/// Every bin equally likely.
#[derive(Clone, Copy, Debug)]
pub struct UniformDepth {
    pub bins: usize,
}

impl DepthEstimator for UniformDepth {
    fn bins(&self) -> usize {
        self.bins
    }

    fn estimate(&self, _u: usize, _v: usize, _features: ArrayView1<f32>, out: &mut [f64]) {
        out.fill(1.0 / self.bins as f64);
    }
}

/// One-hot distribution at known relative depths `d* / D_uv`, indexed `[u, v]`.
#[derive(Clone, Debug)]
pub struct OracleDepth {
    pub bins: usize,
    pub relative: Array2<f64>,
}

impl DepthEstimator for OracleDepth {
    fn bins(&self) -> usize {
        self.bins
    }

    fn estimate(&self, u: usize, v: usize, _features: ArrayView1<f32>, out: &mut [f64]) {
        out.fill(0.0);
        out[relative_to_bin(self.relative[[u, v]], self.bins)] = 1.0;
    }
}

/// Untrained linear projection followed by a softmax.
///
/// Weights are drawn from `N(0, 1/C)` by a ChaCha8 generator seeded with
/// `seed`; biases are zero.
#[derive(Clone, Debug)]
pub struct SeededLinearSoftmax {
    /// `C × D`.
    pub weights: Array2<f64>,
}

impl SeededLinearSoftmax {
    pub fn new(channels: usize, bins: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (channels.max(1) as f64).sqrt()).expect("valid std");
        let weights = Array2::from_shape_fn((channels, bins), |_| normal.sample(&mut rng));
        Self { weights }
    }
}

impl DepthEstimator for SeededLinearSoftmax {
    fn bins(&self) -> usize {
        self.weights.ncols()
    }

    fn estimate(&self, _u: usize, _v: usize, features: ArrayView1<f32>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = features
                .iter()
                .zip(self.weights.column(k))
                .map(|(&f, &w)| f as f64 * w)
                .sum();
        }
        softmax_in_place(out);
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn estimate_relative_depth(
    features: &ImageFeatureMap,
    estimator: &dyn DepthEstimator,
) -> Result<DepthDistribution> {
    let (w, h, _) = features.data.dim();
    let bins = estimator.bins();
    if bins == 0 {
        return Err(Error::Shape("estimator has zero depth bins".into()));
    }
    let mut probs = Array3::<f32>::zeros((w, h, bins));
    let mut buf = vec![0.0f64; bins];
    for u in 0..w {
        for v in 0..h {
            estimator.estimate(u, v, features.data.slice(ndarray::s![u, v, ..]), &mut buf);
            if buf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::NonFinite(format!("depth estimate at pixel ({u}, {v})")));
            }
            for (k, &p) in buf.iter().enumerate() {
                probs[[u, v, k]] = p as f32;
            }
        }
    }
    Ok(DepthDistribution { probs })
}

/// Midpoint metric depth of relative bin `k`: `((k + 0.5) / D) · D_uv`.
pub fn bin_to_metric_depth(k: usize, bins: usize, bound: f64) -> Result<f64> {
    if k >= bins {
        return Err(Error::OutOfRange(format!("depth bin {k} >= {bins}")));
    }
    Ok((k as f64 + 0.5) / bins as f64 * bound)
}

/// Bin holding relative depth `r`; `r = 1` (the ground itself) maps to the last bin.
pub fn relative_to_bin(r: f64, bins: usize) -> usize {
    let k = (r * bins as f64).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(bins - 1)
    }
}

pub fn metric_depth_to_bin(depth: f64, bins: usize, bound: f64) -> usize {
    relative_to_bin(depth / bound, bins)
}

/// Metric ground window and vertical extent of a BEV raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Height band above the ground plane that is pooled into each pillar.
    pub z_range: (f64, f64),
    pub resolution: f64,
    pub depth_bins: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_range: (-75.0, 75.0),
            y_range: (-75.0, 75.0),
            z_range: (0.0, 10.0),
            resolution: 0.75,
            depth_bins: 100,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_range.0 < self.x_range.1
            && self.y_range.0 < self.y_range.1
            && self.z_range.0 < self.z_range.1
            && self.resolution > 0.0
            && self.resolution.is_finite()
            && self.depth_bins > 0;
        if !ok {
            return Err(Error::Config(format!("invalid grid spec {self:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        let n = |r: (f64, f64)| ((r.1 - r.0) / self.resolution - 1e-9).ceil() as usize;
        (n(self.x_range), n(self.y_range))
    }

    /// Cell containing ground-plane point `(x, y)`, if inside the window.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (nx, ny) = self.dims();
        let i = ((x - self.x_range.0) / self.resolution).floor();
        let j = ((y - self.y_range.0) / self.resolution).floor();
        if i < 0.0 || j < 0.0 || !(x < self.x_range.1) || !(y < self.y_range.1) {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        (i < nx && j < ny).then_some((i, j))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_range.0 + (i as f64 + 0.5) * self.resolution,
            self.y_range.0 + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Same window at `factor` times coarser resolution.
    pub fn coarsened(&self, factor: usize) -> Self {
        Self {
            resolution: self.resolution * factor as f64,
            ..*self
        }
    }

    /// Centered square window of side `side` meters at the same resolution.
    pub fn cropped(&self, side: f64) -> Self {
        let h = side / 2.0;
        Self {
            x_range: (-h, h),
            y_range: (-h, h),
            ..*self
        }
    }
}

/// Placement of a BEV raster on the ground plane.
///
/// BEV coordinates are world horizontal coordinates `(x, z)` relative to
/// `origin`, rotated by `-yaw`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevFrame {
    pub origin: (f64, f64),
    pub yaw: f64,
}

impl Default for BevFrame {
    fn default() -> Self {
        Self {
            origin: (0.0, 0.0),
            yaw: 0.0,
        }
    }
}

impl BevFrame {
    /// North-aligned frame below the camera, snapped to the `resolution` lattice.
    pub fn below_camera(pose: &CameraPose, resolution: f64) -> Self {
        let c = pose.camera_center();
        let snap = |v: f64| (v / resolution).round() * resolution;
        Self {
            origin: (snap(c.x), snap(c.z)),
            yaw: 0.0,
        }
    }

    pub fn world_to_bev(&self, x: f64, z: f64) -> (f64, f64) {
        let (dx, dz) = (x - self.origin.0, z - self.origin.1);
        let (s, c) = self.yaw.sin_cos();
        (c * dx + s * dz, -s * dx + c * dz)
    }

    pub fn bev_to_world(&self, bx: f64, by: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * bx - s * by + self.origin.0, s * bx + c * by + self.origin.1)
    }
}

/// Feature raster indexed `[i, j, c]` with `i` along BEV x and `j` along BEV y.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub data: Array3<f32>,
    pub spec: GridSpec,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        let (x, y) = spec.dims();
        Self {
            data: Array3::zeros((x, y, channels)),
            spec,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Frustum features indexed `[u, v, k, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrustumGrid {
    pub data: Array4<f32>,
}

impl FrustumGrid {
    pub fn total_mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

pub fn lift_to_frustum(features: &ImageFeatureMap, depth: &DepthDistribution) -> Result<FrustumGrid> {
    let (w, h, c) = features.data.dim();
    let (dw, dh, bins) = depth.probs.dim();
    if (w, h) != (dw, dh) {
        return Err(Error::Shape(format!(
            "features are {w}×{h} but depth is {dw}×{dh}"
        )));
    }
    let data = Array4::from_shape_fn((w, h, bins, c), |(u, v, k, ch)| {
        features.data[[u, v, ch]] * depth.probs[[u, v, k]]
    });
    Ok(FrustumGrid { data })
}

#[derive(Clone, Debug)]
pub struct SplatResult {
    pub grid: BevGrid,
    /// Frustum cells that fell outside the grid volume.
    pub dropped_cells: usize,
    /// Summed feature value of the dropped cells.
    pub dropped_mass: f64,
}

/// Everything needed to place a camera's frustum into a BEV raster.
#[derive(Clone, Copy, Debug)]
pub struct SplatGeometry<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a CameraPose,
    pub spec: &'a GridSpec,
    pub frame: &'a BevFrame,
    pub prior: &'a DepthPrior,
}

struct Splatter<'a> {
    cache: ProjectionCache,
    geo: SplatGeometry<'a>,
    dims: (usize, usize),
}

impl<'a> Splatter<'a> {
    fn new(geo: SplatGeometry<'a>) -> Result<Self> {
        geo.spec.validate()?;
        Ok(Self {
            cache: build_projection_cache(geo.intrinsics, geo.pose)?,
            dims: geo.spec.dims(),
            geo,
        })
    }

    fn bound(&self, u: usize, v: usize) -> f64 {
        // Pixel (u, v) is sampled at its center.
        self.cache
            .depth_upper_bound(u as f64 + 0.5, v as f64 + 0.5, self.geo.pose.altitude, self.geo.prior)
            .depth
    }

    /// Pillar receiving frustum cell `(u, v, k)` given the pixel's bound.
    fn target(&self, u: usize, v: usize, k: usize, bins: usize, bound: f64) -> Option<usize> {
        let depth = (k as f64 + 0.5) / bins as f64 * bound;
        let p = self.cache.pixel_to_world(u as f64 + 0.5, v as f64 + 0.5, depth);
        let height = p.y + self.geo.pose.altitude;
        let spec = self.geo.spec;
        if !(height >= spec.z_range.0 && height < spec.z_range.1) {
            return None;
        }
        let (bx, by) = self.geo.frame.world_to_bev(p.x, p.z);
        let (i, j) = spec.cell_of(bx, by)?;
        Some(i * self.dims.1 + j)
    }
}

/// Projects every frustum cell at its bin's metric depth and sum-pools the
/// cells that land inside the grid volume.
///
/// Accumulation runs in `f64` in a fixed `(u, v, k)` order, so results do not
/// depend on thread scheduling.
pub fn splat_to_bev(frustum: &FrustumGrid, geo: SplatGeometry<'_>) -> Result<SplatResult> {
    let splatter = Splatter::new(geo)?;
    let (w, h, bins, c) = frustum.data.dim();
    let (nx, ny) = splatter.dims;
    let mut acc = vec![0.0f64; nx * ny * c];
    let mut dropped_cells = 0;
    let mut dropped_mass = 0.0;
    for u in 0..w {
        for v in 0..h {
            let bound = splatter.bound(u, v);
            for k in 0..bins {
                let cell = frustum.data.slice(ndarray::s![u, v, k, ..]);
                match splatter.target(u, v, k, bins, bound) {
                    Some(idx) => {
                        for (ch, &val) in cell.iter().enumerate() {
                            acc[idx * c + ch] += val as f64;
                        }
                    }
                    None => {
                        dropped_cells += 1;
                        dropped_mass += cell.iter().map(|&x| x as f64).sum::<f64>();
                    }
                }
            }
        }
    }
    Ok(SplatResult {
        grid: to_grid(acc, *geo.spec, c),
        dropped_cells,
        dropped_mass,
    })
}

/// Lift and splat in one pass without materializing the frustum.
///
/// Bins with zero probability are skipped, which makes one-hot depth cost a
/// single projection per pixel. Pooling order matches [`splat_to_bev`].
pub fn lift_and_splat(
    features: &ImageFeatureMap,
    depth: &DepthDistribution,
    geo: SplatGeometry<'_>,
) -> Result<SplatResult> {
    let (w, h, c) = features.data.dim();
    let (dw, dh, bins) = depth.probs.dim();
    if (w, h) != (dw, dh) {
        return Err(Error::Shape(format!(
            "features are {w}×{h} but depth is {dw}×{dh}"
        )));
    }
    let splatter = Splatter::new(geo)?;
    let (nx, ny) = splatter.dims;
    let mut acc = vec![0.0f64; nx * ny * c];
    let mut dropped_cells = 0;
    let mut dropped_mass = 0.0;
    for u in 0..w {
        for v in 0..h {
            let feat = features.data.slice(ndarray::s![u, v, ..]);
            if feat.iter().all(|&f| f == 0.0) {
                continue;
            }
            let bound = splatter.bound(u, v);
            for k in 0..bins {
                let p = depth.probs[[u, v, k]];
                if p == 0.0 {
                    continue;
                }
                match splatter.target(u, v, k, bins, bound) {
                    Some(idx) => {
                        for (ch, &f) in feat.iter().enumerate() {
                            acc[idx * c + ch] += (f * p) as f64;
                        }
                    }
                    None => {
                        dropped_cells += 1;
                        dropped_mass += feat.iter().map(|&f| (f * p) as f64).sum::<f64>();
                    }
                }
            }
        }
    }
    Ok(SplatResult {
        grid: to_grid(acc, *geo.spec, c),
        dropped_cells,
        dropped_mass,
    })
}

fn to_grid(acc: Vec<f64>, spec: GridSpec, channels: usize) -> BevGrid {
    let (nx, ny) = spec.dims();
    let data = Array3::from_shape_vec((nx, ny, channels), acc.into_iter().map(|v| v as f32).collect())
        .expect("accumulator matches grid dims");
    BevGrid { data, spec }
}
