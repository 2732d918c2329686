//! High/low-frequency decoupled compression of BEV feature maps.
//!
//! The high band attends locally inside non-overlapping `M × M` windows and
//! keeps full resolution with half the channels. The low band average-pools
//! with kernel and stride `M`, then attends globally over the pooled tokens.
//! Together they carry `(1 + 1/M²) / 2` of the raw map's floats.

pub mod attention;
pub mod packet;

use ndarray::{s, Array2, Array3, ArrayView3};
use rayon::prelude::*;

pub use attention::{attention_matrices, multi_head_self_attention, AttentionParams, HeadParams};
pub use packet::{FrequencyPacket, PacketHeader, RawMapMessage, WirePose, HEADER_LEN};

use crate::error::{Error, Result};

/// Payload floats of an encoded packet over floats of the raw map.
pub fn transmission_ratio(window: usize) -> f64 {
    assert!(window >= 1, "window size must be at least 1");
    let m2 = (window * window) as f64;
    (1.0 + 1.0 / m2) / 2.0
}

fn check_divisible(x: usize, y: usize, m: usize) -> Result<()> {
    if m == 0 || x % m != 0 || y % m != 0 {
        return Err(Error::Shape(format!("{x}×{y} map is not divisible by window {m}")));
    }
    Ok(())
}

/// Splits an `X × Y × C` map into `XY/M²` windows of `M² × C` tokens.
///
/// Windows are ordered row-major over the window grid and tokens row-major
/// inside each window.
pub fn window_partition(map: ArrayView3<f32>, m: usize) -> Result<Vec<Array2<f32>>> {
    let (x, y, c) = map.dim();
    check_divisible(x, y, m)?;
    let mut windows = Vec::with_capacity(x * y / (m * m));
    for wi in 0..x / m {
        for wj in 0..y / m {
            let block = map.slice(s![wi * m..(wi + 1) * m, wj * m..(wj + 1) * m, ..]);
            let tokens = block
                .to_owned()
                .into_shape_with_order((m * m, c))
                .expect("contiguous block");
            windows.push(tokens);
        }
    }
    Ok(windows)
}

/// Inverse of [`window_partition`].
pub fn window_merge(windows: &[Array2<f32>], x: usize, y: usize, m: usize) -> Result<Array3<f32>> {
    check_divisible(x, y, m)?;
    let per_row = y / m;
    if windows.len() != (x / m) * per_row {
        return Err(Error::Shape(format!(
            "{} windows cannot tile a {x}×{y} map with window {m}",
            windows.len()
        )));
    }
    let c = windows.first().map_or(0, |w| w.ncols());
    let mut out = Array3::zeros((x, y, c));
    for (idx, w) in windows.iter().enumerate() {
        if w.dim() != (m * m, c) {
            return Err(Error::Shape(format!("window {idx} has shape {:?}", w.dim())));
        }
        let (wi, wj) = (idx / per_row, idx % per_row);
        let block = w.view().into_shape_with_order((m, m, c)).expect("window shape checked");
        out.slice_mut(s![wi * m..(wi + 1) * m, wj * m..(wj + 1) * m, ..])
            .assign(&block);
    }
    Ok(out)
}

/// Average pooling with kernel and stride `m`.
pub fn avg_pool(map: ArrayView3<f32>, m: usize) -> Result<Array3<f32>> {
    let (x, y, c) = map.dim();
    check_divisible(x, y, m)?;
    let norm = (m * m) as f64;
    let mut out = Array3::zeros((x / m, y / m, c));
    for ((i, j, ch), o) in out.indexed_iter_mut() {
        let sum: f64 = map
            .slice(s![i * m..(i + 1) * m, j * m..(j + 1) * m, ch])
            .iter()
            .map(|&v| v as f64)
            .sum();
        *o = (sum / norm) as f32;
    }
    Ok(out)
}

/// Local window attention; output is `X × Y × C′`.
pub fn encode_high(map: ArrayView3<f32>, params: &AttentionParams, m: usize) -> Result<Array3<f32>> {
    let (x, y, _) = map.dim();
    let windows = window_partition(map, m)?;
    let attended = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| multi_head_self_attention(w.view(), params, &format!("high-band window {i}")))
        .collect::<Result<Vec<_>>>()?;
    window_merge(&attended, x, y, m)
}

/// Average pool then global attention; output is `X/M × Y/M × C′`.
pub fn encode_low(map: ArrayView3<f32>, params: &AttentionParams, m: usize) -> Result<Array3<f32>> {
    let pooled = avg_pool(map, m)?;
    let (px, py, c) = pooled.dim();
    let tokens = pooled.into_shape_with_order((px * py, c)).expect("contiguous");
    let out = multi_head_self_attention(tokens.view(), params, "low-band tokens")?;
    let c_out = out.ncols();
    Ok(out.into_shape_with_order((px, py, c_out)).expect("token count preserved"))
}

/// Parameters of both branches plus the window size.
#[derive(Clone, Debug, PartialEq)]
pub struct HlfdcCodec {
    pub high: AttentionParams,
    pub low: AttentionParams,
    pub window: usize,
}

impl HlfdcCodec {
    /// Seeded untrained codec for `C`-channel maps with `C′ = C/2`.
    pub fn seeded(channels: usize, heads: usize, head_dim: usize, window: usize, seed: u64) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(Error::Config(format!("channel count {channels} must be even")));
        }
        Ok(Self {
            high: AttentionParams::seeded(channels, heads, head_dim, channels / 2, seed),
            low: AttentionParams::seeded(channels, heads, head_dim, channels / 2, seed.wrapping_add(1)),
            window,
        })
    }

    pub fn encode(&self, map: ArrayView3<f32>, header: PacketHeader) -> Result<FrequencyPacket> {
        let (x, y, c) = map.dim();
        if (header.x as usize, header.y as usize, header.channels as usize, header.window as usize)
            != (x, y, c, self.window)
        {
            return Err(Error::Protocol(format!(
                "header {}×{}×{} window {} does not describe a {x}×{y}×{c} map with window {}",
                header.x, header.y, header.channels, header.window, self.window
            )));
        }
        for p in [&self.high, &self.low] {
            if p.out_channels() * 2 != c {
                return Err(Error::Shape(format!(
                    "branch emits {} channels, expected C/2 = {}",
                    p.out_channels(),
                    c / 2
                )));
            }
        }
        let (high, low) = rayon::join(
            || encode_high(map, &self.high, self.window),
            || encode_low(map, &self.low, self.window),
        );
        FrequencyPacket::new(header, high?, low?)
    }
}
