//! Decoding received features into the receiver's BEV frame and fusing them.

use nalgebra::{Matrix2, Vector2};
use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bev::{BevFrame, GridSpec};
use crate::error::{Error, Result};
use crate::hlfdc::{FrequencyPacket, RawMapMessage};

/// Planar rigid transform from sender BEV coordinates to receiver BEV coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

fn rot2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    pub fn new(angle: f64, translation: Vector2<f64>) -> Self {
        Self {
            rotation: rot2(angle),
            translation,
        }
    }

    pub fn between(sender: &BevFrame, receiver: &BevFrame) -> Self {
        let offset = Vector2::new(sender.origin.0 - receiver.origin.0, sender.origin.1 - receiver.origin.1);
        Self {
            rotation: rot2(sender.yaw - receiver.yaw),
            translation: rot2(-receiver.yaw) * offset,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix2::identity() && self.translation == Vector2::zeros()
    }

    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation
    }
}

/// Inverse-warps `map` (laid out on `spec`) into the receiver frame with
/// bilinear sampling. Samples outside the source raster read as zero.
pub fn align(map: ArrayView3<f32>, spec: &GridSpec, rel: &RelativePose) -> Array3<f32> {
    if rel.is_identity() {
        return map.to_owned();
    }
    let (nx, ny, c) = map.dim();
    let inv = rel.inverse();
    let res = spec.resolution;
    let snap = |f: f64| {
        let r = f.round();
        if (f - r).abs() < 1e-9 {
            r
        } else {
            f
        }
    };
    let mut out = Array3::<f32>::zeros((nx, ny, c));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..ny {
                let (x, y) = spec.cell_center(i, j);
                let src = inv.apply(Vector2::new(x, y));
                let fi = snap((src.x - spec.x_range.0) / res - 0.5);
                let fj = snap((src.y - spec.y_range.0) / res - 0.5);
                let (i0, j0) = (fi.floor(), fj.floor());
                let (a, b) = (fi - i0, fj - j0);
                let taps = [
                    (i0, j0, (1.0 - a) * (1.0 - b)),
                    (i0 + 1.0, j0, a * (1.0 - b)),
                    (i0, j0 + 1.0, (1.0 - a) * b),
                    (i0 + 1.0, j0 + 1.0, a * b),
                ];
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for &(ti, tj, w) in &taps {
                        if w == 0.0 || ti < 0.0 || tj < 0.0 || ti >= nx as f64 || tj >= ny as f64 {
                            continue;
                        }
                        acc += w * map[[ti as usize, tj as usize, ch]] as f64;
                    }
                    row[[j, ch]] = acc as f32;
                }
            }
        });
    out
}

/// Separable transposed-convolution kernels for restoring the low band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpsampleKernel {
    /// `M`-tap box kernel: each coarse cell fills its `M × M` block.
    #[default]
    Box,
    /// `2M`-tap triangle kernel reproducing bilinear interpolation.
    Bilinear,
    /// `2M`-tap random positive kernel, normalized per output phase.
    Seeded { seed: u64 },
}

impl UpsampleKernel {
    /// 1-D taps and padding for scale `m`.
    pub fn taps(&self, m: usize) -> (Vec<f64>, usize) {
        match *self {
            UpsampleKernel::Box => (vec![1.0; m], 0),
            UpsampleKernel::Bilinear => {
                let pad = m / 2;
                let center = m as f64 / 2.0 + pad as f64 - 0.5;
                let taps = (0..2 * m)
                    .map(|t| (1.0 - (t as f64 - center).abs() / m as f64).max(0.0))
                    .collect();
                (taps, pad)
            }
            UpsampleKernel::Seeded { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut taps: Vec<f64> = (0..2 * m).map(|_| rng.random_range(0.1..1.0)).collect();
                for p in 0..m {
                    let sum = taps[p] + taps[p + m];
                    taps[p] /= sum;
                    taps[p + m] /= sum;
                }
                (taps, m / 2)
            }
        }
    }
}

fn upsample_axis(input: &Array3<f32>, axis: usize, m: usize, taps: &[f64], pad: usize) -> Array3<f32> {
    let n = input.len_of(Axis(axis)) as i64;
    let mut shape = input.raw_dim();
    shape[axis] *= m;
    let mut out = Array3::<f32>::zeros(shape);
    let (k, m_i, pad_i) = (taps.len() as i64, m as i64, pad as i64);
    for o in 0..(n * m_i) {
        // Inputs i with 0 <= o + pad - i·m < k; edges replicate.
        let hi = (o + pad_i).div_euclid(m_i);
        let lo = (o + pad_i - k).div_euclid(m_i) + 1;
        let mut lane = out.index_axis_mut(Axis(axis), o as usize);
        for i in lo..=hi {
            let w = taps[(o + pad_i - i * m_i) as usize];
            if w == 0.0 {
                continue;
            }
            let src = input.index_axis(Axis(axis), i.clamp(0, n - 1) as usize);
            lane.zip_mut_with(&src, |d, &s| *d = (*d as f64 + w * s as f64) as f32);
        }
    }
    out
}

/// Transposed-convolution upsampling of `X/M × Y/M × C′` to `X × Y × C′`.
pub fn upsample_low(low: &Array3<f32>, m: usize, kernel: UpsampleKernel) -> Array3<f32> {
    if m == 1 {
        return low.clone();
    }
    let (taps, pad) = kernel.taps(m);
    let rows = upsample_axis(low, 0, m, &taps, pad);
    upsample_axis(&rows, 1, m, &taps, pad)
}

fn check_grid(header_dims: (usize, usize, usize), spec: &GridSpec) -> Result<()> {
    let (x, y) = spec.dims();
    if (header_dims.0, header_dims.1) != (x, y) {
        return Err(Error::Protocol(format!(
            "sender grid {}×{} does not match receiver grid {x}×{y}",
            header_dims.0, header_dims.1
        )));
    }
    Ok(())
}

/// `concat[Up(G(F_low)); G(F_high)]` in the receiver's frame.
pub fn decode_packet(
    pkt: &FrequencyPacket,
    receiver: &BevFrame,
    spec: &GridSpec,
    kernel: UpsampleKernel,
) -> Result<Array3<f32>> {
    check_grid(pkt.header.dims(), spec)?;
    let m = pkt.header.window as usize;
    let sender = BevFrame::below_camera(&pkt.header.pose.to_pose()?, spec.resolution);
    let rel = RelativePose::between(&sender, receiver);
    let low = upsample_low(&align(pkt.low.view(), &spec.coarsened(m), &rel), m, kernel);
    let high = align(pkt.high.view(), spec, &rel);
    let (x, y, half) = high.dim();
    let mut out = Array3::zeros((x, y, 2 * half));
    out.slice_mut(s![.., .., ..half]).assign(&low);
    out.slice_mut(s![.., .., half..]).assign(&high);
    Ok(out)
}

/// Uncompressed counterpart of [`decode_packet`].
pub fn decode_raw_map(msg: &RawMapMessage, receiver: &BevFrame, spec: &GridSpec) -> Result<Array3<f32>> {
    check_grid(msg.header.dims(), spec)?;
    let sender = BevFrame::below_camera(&msg.header.pose.to_pose()?, spec.resolution);
    Ok(align(msg.map.view(), spec, &RelativePose::between(&sender, receiver)))
}

/// Two 3×3 convolutions (zero padding, ReLU between) scoring a `2C`-channel
/// stack `[F_BEV; F_col]` down to one channel. Receptive field is 5×5.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeightNet {
    /// `[ky, kx, in, hidden]`; inputs `0..C` see `F_BEV`, `C..2C` see `F_col`.
    pub conv1: ndarray::Array4<f64>,
    pub bias1: Array1<f64>,
    /// `[ky, kx, hidden]`.
    pub conv2: Array3<f64>,
    pub bias2: f64,
}

impl FusionWeightNet {
    /// Weights from `N(0, 1/fan_in)` drawn by a ChaCha8 stream; zero biases.
    pub fn seeded(channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / ((9 * 2 * channels) as f64).sqrt()).expect("valid std");
        let conv1 = ndarray::Array4::from_shape_fn((3, 3, 2 * channels, hidden), |_| n1.sample(&mut rng));
        let n2 = Normal::new(0.0, 1.0 / ((9 * hidden) as f64).sqrt()).expect("valid std");
        let conv2 = Array3::from_shape_fn((3, 3, hidden), |_| n2.sample(&mut rng));
        Self {
            conv1,
            bias1: Array1::zeros(hidden),
            conv2,
            bias2: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.dim().2 / 2
    }

    pub fn hidden(&self) -> usize {
        self.conv1.dim().3
    }

    /// First-layer response to one half of the input stack.
    fn conv1_half(&self, map: ArrayView3<f32>, offset: usize) -> Array3<f64> {
        let (nx, ny, c) = map.dim();
        let hidden = self.hidden();
        let mut out = Array3::<f64>::zeros((nx, ny, hidden));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                let mut acc = vec![0.0f64; hidden];
                for j in 0..ny {
                    acc.fill(0.0);
                    for ky in 0..3usize {
                        let si = i as i64 + ky as i64 - 1;
                        if si < 0 || si >= nx as i64 {
                            continue;
                        }
                        for kx in 0..3usize {
                            let sj = j as i64 + kx as i64 - 1;
                            if sj < 0 || sj >= ny as i64 {
                                continue;
                            }
                            let px = map.slice(s![si as usize, sj as usize, ..]);
                            for ch in 0..c {
                                let v = px[ch] as f64;
                                if v == 0.0 {
                                    continue;
                                }
                                let w = self.conv1.slice(s![ky, kx, offset + ch, ..]);
                                for (a, &wv) in acc.iter_mut().zip(w.iter()) {
                                    *a += wv * v;
                                }
                            }
                        }
                    }
                    row.slice_mut(s![j, ..]).assign(&Array1::from(acc.clone()));
                }
            });
        out
    }

    fn head(&self, pre: &Array3<f64>) -> Array2<f64> {
        let (nx, ny, hidden) = pre.dim();
        let act = pre.mapv(|v| v.max(0.0));
        let mut out = Array2::<f64>::from_elem((nx, ny), self.bias2);
        for ((i, j), o) in out.indexed_iter_mut() {
            for ky in 0..3usize {
                let si = i as i64 + ky as i64 - 1;
                if si < 0 || si >= nx as i64 {
                    continue;
                }
                for kx in 0..3usize {
                    let sj = j as i64 + kx as i64 - 1;
                    if sj < 0 || sj >= ny as i64 {
                        continue;
                    }
                    for h in 0..hidden {
                        *o += self.conv2[[ky, kx, h]] * act[[si as usize, sj as usize, h]];
                    }
                }
            }
        }
        out
    }

    /// Raw score map `φ([F_BEV; F_col])`.
    pub fn score(&self, local: ArrayView3<f32>, collab: ArrayView3<f32>) -> Result<Array2<f64>> {
        let base = self.conv1_half(local, 0);
        self.score_with_base(&base, collab)
    }

    fn score_with_base(&self, base: &Array3<f64>, collab: ArrayView3<f32>) -> Result<Array2<f64>> {
        let mut pre = self.conv1_half(collab, self.channels());
        pre += base;
        for (mut lane, &b) in pre.axis_iter_mut(Axis(2)).zip(self.bias1.iter()) {
            lane += b;
        }
        let scores = self.head(&pre);
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fusion scores".into()));
        }
        Ok(scores)
    }
}

fn check_same_shape(local: (usize, usize, usize), maps: &[ArrayView3<f32>]) -> Result<()> {
    for (j, m) in maps.iter().enumerate() {
        if m.dim() != local {
            return Err(Error::Shape(format!(
                "collaborator {j} is {:?}, expected {local:?}",
                m.dim()
            )));
        }
    }
    Ok(())
}

/// Per-pixel softmax over collaborators of the fusion scores.
pub fn fusion_weights(
    local: ArrayView3<f32>,
    collabs: &[ArrayView3<f32>],
    net: &FusionWeightNet,
) -> Result<Vec<Array2<f64>>> {
    if collabs.is_empty() {
        return Err(Error::Shape("fusion needs at least one collaborator".into()));
    }
    check_same_shape(local.dim(), collabs)?;
    if local.dim().2 != net.channels() {
        return Err(Error::Shape(format!(
            "fusion net expects {} channels, maps have {}",
            net.channels(),
            local.dim().2
        )));
    }
    let base = net.conv1_half(local, 0);
    let mut scores = collabs
        .iter()
        .map(|c| net.score_with_base(&base, *c))
        .collect::<Result<Vec<_>>>()?;
    let (nx, ny) = scores[0].dim();
    let mut buf = vec![0.0f64; scores.len()];
    for i in 0..nx {
        for j in 0..ny {
            for (b, s) in buf.iter_mut().zip(&scores) {
                *b = s[[i, j]];
            }
            crate::bev::softmax_in_place(&mut buf);
            for (b, s) in buf.iter().zip(scores.iter_mut()) {
                s[[i, j]] = *b;
            }
        }
    }
    Ok(scores)
}

/// `Σ_j W_j ⊙ F_col,j`, accumulated in `f64` in list order.
pub fn fuse(collabs: &[ArrayView3<f32>], weights: &[Array2<f64>]) -> Result<Array3<f32>> {
    let first = collabs
        .first()
        .ok_or_else(|| Error::Shape("nothing to fuse".into()))?;
    if collabs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} maps but {} weight maps",
            collabs.len(),
            weights.len()
        )));
    }
    let (nx, ny, c) = first.dim();
    check_same_shape((nx, ny, c), collabs)?;
    if let Some(w) = weights.iter().find(|w| w.dim() != (nx, ny)) {
        return Err(Error::Shape(format!("weight map is {:?}, expected ({nx}, {ny})", w.dim())));
    }
    let mut out = Array3::<f32>::zeros((nx, ny, c));
    for ((i, j, ch), o) in out.indexed_iter_mut() {
        let mut acc = 0.0f64;
        for (m, w) in collabs.iter().zip(weights) {
            acc += w[[i, j]] * m[[i, j, ch]] as f64;
        }
        *o = acc as f32;
    }
    Ok(out)
}

/// A decoded feature map tagged with the platform that produced it.
#[derive(Clone, Debug)]
pub struct Collaborator {
    pub id: u16,
    pub features: Array3<f32>,
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub fused: Array3<f32>,
    /// Collaborator ids in fusion order (ascending).
    pub order: Vec<u16>,
    pub weights: Vec<Array2<f64>>,
}

/// Weights and fuses collaborators in ascending id order, so the result does
/// not depend on arrival order.
pub fn fuse_collaborators(
    local: ArrayView3<f32>,
    mut collabs: Vec<Collaborator>,
    net: &FusionWeightNet,
) -> Result<FusionOutput> {
    collabs.sort_by_key(|c| c.id);
    let views: Vec<_> = collabs.iter().map(|c| c.features.view()).collect();
    let weights = fusion_weights(local, &views, net)?;
    let fused = fuse(&views, &weights)?;
    Ok(FusionOutput {
        fused,
        order: collabs.iter().map(|c| c.id).collect(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraPose;
    use crate::hlfdc::{avg_pool, HlfdcCodec, PacketHeader, WirePose};
    use nalgebra::Vector3;

    fn random_map(x: usize, y: usize, c: usize, seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((x, y, c), |_| rng.random_range(-1.0..1.0))
    }

    fn small_spec(n: usize) -> GridSpec {
        let half = n as f64 * 0.75 / 2.0;
        GridSpec {
            x_range: (-half, half),
            y_range: (-half, half),
            ..GridSpec::default()
        }
    }

    #[test]
    fn identity_alignment_is_lossless() {
        let map = random_map(10, 12, 3, 1);
        assert_eq!(align(map.view(), &small_spec(10), &RelativePose::identity()), map);
    }

    #[test]
    fn integer_translation_shifts() {
        let spec = small_spec(12);
        let map = random_map(12, 12, 2, 2);
        let rel = RelativePose::new(0.0, Vector2::new(2.0 * 0.75, -0.75));
        let out = align(map.view(), &spec, &rel);
        for i in 0..12 {
            for j in 0..12 {
                let (si, sj) = (i as i64 - 2, j as i64 + 1);
                let expected = if (0..12).contains(&si) && (0..12).contains(&sj) {
                    map.slice(s![si as usize, sj as usize, ..]).to_owned()
                } else {
                    Array1::zeros(2)
                };
                assert_eq!(out.slice(s![i, j, ..]), expected);
            }
        }
    }

    #[test]
    fn align_inverse_recovers_smooth_interior() {
        let spec = small_spec(64);
        // Band-limited field: a few low-frequency sinusoids.
        let map = Array3::from_shape_fn((64, 64, 2), |(i, j, c)| {
            let (x, y) = (i as f32 / 64.0, j as f32 / 64.0);
            ((2.0 * x + c as f32).sin() + (1.5 * y).cos() * 0.5) as f32
        });
        let rel = RelativePose::new(0.3, Vector2::new(1.3, -0.4));
        let back = align(align(map.view(), &spec, &rel).view(), &spec, &rel.inverse());
        for i in 16..48 {
            for j in 16..48 {
                for c in 0..2 {
                    assert!((back[[i, j, c]] - map[[i, j, c]]).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        let low = Array3::from_elem((3, 5, 2), 3.0f32);
        for kernel in [UpsampleKernel::Box, UpsampleKernel::Bilinear, UpsampleKernel::Seeded { seed: 4 }] {
            for m in [1, 2, 3, 4] {
                let up = upsample_low(&low, m, kernel);
                assert_eq!(up.dim(), (3 * m, 5 * m, 2));
                assert!(up.iter().all(|&v| (v - 3.0).abs() < 1e-6), "{kernel:?} m={m}");
            }
        }
    }

    #[test]
    fn box_upsample_inverts_pooling_of_block_constant_maps() {
        let coarse = random_map(4, 3, 2, 5);
        let fine = Array3::from_shape_fn((16, 12, 2), |(i, j, c)| coarse[[i / 4, j / 4, c]]);
        let pooled = avg_pool(fine.view(), 4).unwrap();
        assert_eq!(upsample_low(&pooled, 4, UpsampleKernel::Box), fine);
    }

    #[test]
    fn bilinear_kernel_matches_direct_interpolation() {
        let low = random_map(5, 4, 1, 6);
        let m = 4;
        let up = upsample_low(&low, m, UpsampleKernel::Bilinear);
        let sample = |n: usize, o: usize| {
            let s = ((o as f64 + 0.5) / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        };
        for oi in 0..20 {
            for oj in 0..16 {
                let (a0, a1, fa) = sample(5, oi);
                let (b0, b1, fb) = sample(4, oj);
                let v = |i: usize, j: usize| low[[i, j, 0]] as f64;
                let expected = (1.0 - fa) * ((1.0 - fb) * v(a0, b0) + fb * v(a0, b1))
                    + fa * ((1.0 - fb) * v(a1, b0) + fb * v(a1, b1));
                assert!((up[[oi, oj, 0]] as f64 - expected).abs() < 1e-5);
            }
        }
    }

    fn pose_at(x: f64, z: f64) -> CameraPose {
        CameraPose::look_at(Vector3::new(x, 0.0, z), Vector3::new(0.0, -30.0, 0.0), 30.0).unwrap()
    }

    #[test]
    fn decode_own_packet_and_zero_packet() {
        let spec = small_spec(16);
        let pose = pose_at(3.0, 0.0);
        let frame = BevFrame::below_camera(&pose, spec.resolution);
        let codec = HlfdcCodec::seeded(8, 4, 2, 4, 3).unwrap();
        let map = random_map(16, 16, 8, 7);
        let header = PacketHeader::new(1, 0, 4, 16, 16, 8, WirePose::from(&pose)).unwrap();
        let pkt = codec.encode(map.view(), header).unwrap();
        let col = decode_packet(&pkt, &frame, &spec, UpsampleKernel::Box).unwrap();
        assert_eq!(col.dim(), (16, 16, 8));
        assert_eq!(col.slice(s![.., .., 4..]), pkt.high);
        assert_eq!(col.slice(s![.., .., ..4]), upsample_low(&pkt.low, 4, UpsampleKernel::Box));

        let zero = FrequencyPacket::new(header, Array3::zeros((16, 16, 4)), Array3::zeros((4, 4, 4))).unwrap();
        let other = BevFrame::below_camera(&pose_at(-4.0, 2.0), spec.resolution);
        assert!(decode_packet(&zero, &other, &spec, UpsampleKernel::Bilinear)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let bigger = small_spec(20);
        assert!(matches!(
            decode_packet(&pkt, &frame, &bigger, UpsampleKernel::Box),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn weights_normalize_and_respect_symmetry() {
        let net = FusionWeightNet::seeded(4, 8, 1);
        let local = random_map(9, 7, 4, 8);
        let a = random_map(9, 7, 4, 9);
        let b = random_map(9, 7, 4, 10);
        let w = fusion_weights(local.view(), &[a.view(), b.view(), local.view()], &net).unwrap();
        for i in 0..9 {
            for j in 0..7 {
                let s: f64 = w.iter().map(|m| m[[i, j]]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let same = fusion_weights(local.view(), &[a.view(), a.view(), a.view()], &net).unwrap();
        assert!(same.iter().all(|m| m.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12)));
        let single = fusion_weights(local.view(), &[b.view()], &net).unwrap();
        assert!(single[0].iter().all(|&v| v == 1.0));
        assert!(fusion_weights(local.view(), &[], &net).is_err());
    }

    #[test]
    fn fuse_basics() {
        let a = random_map(5, 5, 3, 11);
        let b = random_map(5, 5, 3, 12);
        let one = Array2::from_elem((5, 5), 1.0);
        assert_eq!(fuse(&[a.view()], &[one.clone()]).unwrap(), a);
        let half = Array2::from_elem((5, 5), 0.5);
        let mean = fuse(&[a.view(), b.view()], &[half.clone(), half]).unwrap();
        for ((m, x), y) in mean.iter().zip(a.iter()).zip(b.iter()) {
            assert!((m - (x + y) / 2.0).abs() < 1e-6);
        }
        assert!(fuse(&[a.view(), b.view()], &[one]).is_err());
    }

    #[test]
    fn fused_order_independent() {
        let net = FusionWeightNet::seeded(4, 8, 2);
        let local = random_map(6, 6, 4, 13);
        let collabs: Vec<_> = (0..4)
            .map(|i| Collaborator {
                id: i as u16 * 3,
                features: random_map(6, 6, 4, 20 + i),
            })
            .collect();
        let forward = fuse_collaborators(local.view(), collabs.clone(), &net).unwrap();
        let mut reversed = collabs;
        reversed.reverse();
        let backward = fuse_collaborators(local.view(), reversed, &net).unwrap();
        assert_eq!(forward.fused, backward.fused);
        assert_eq!(forward.order, vec![0, 3, 6, 9]);
    }
}
