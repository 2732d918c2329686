//! Multi-head scaled dot-product self-attention without positional encoding.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bev::softmax_in_place;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `C × D_h` each.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    /// `(N_h · D_h) × C′`.
    pub w_o: Array2<f64>,
}

impl AttentionParams {
    /// Untrained weights with every entry drawn from `N(0, 1/fan_in)`.
    ///
    /// A ChaCha8 stream seeded with `seed` fills, per head, `W_q`, `W_k`,
    /// `W_v` in row-major order, then `W_o`.
    pub fn seeded(in_channels: usize, heads: usize, head_dim: usize, out_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, 1.0 / (rows.max(1) as f64).sqrt()).expect("valid std");
            Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
        };
        let heads_vec: Vec<HeadParams> = (0..heads)
            .map(|_| HeadParams {
                w_q: draw(in_channels, head_dim),
                w_k: draw(in_channels, head_dim),
                w_v: draw(in_channels, head_dim),
            })
            .collect();
        let w_o = draw(heads * head_dim, out_channels);
        Self { heads: heads_vec, w_o }
    }

    /// Hand-set weights that attend between tokens of the same type and
    /// copy selected channels through.
    ///
    /// Every head uses `W_q = W_k = sharpness · P`, where `P` routes
    /// `key_channels[i]` to head dimension `i`, so tokens whose key channels
    /// point the same way attend to each other. Output channel `i` carries
    /// `value_channels[i]` of the attended tokens.
    pub fn type_selective(
        in_channels: usize,
        heads: usize,
        head_dim: usize,
        out_channels: usize,
        key_channels: &[usize],
        value_channels: &[usize],
        sharpness: f64,
    ) -> Result<Self> {
        if key_channels.len() > head_dim
            || value_channels.len() > heads * head_dim
            || value_channels.len() > out_channels
            || key_channels.iter().chain(value_channels).any(|&c| c >= in_channels)
        {
            return Err(Error::Shape(format!(
                "cannot route {} key / {} value channels through {heads}×{head_dim} heads into {out_channels} outputs",
                key_channels.len(),
                value_channels.len()
            )));
        }
        let mut proj = Array2::zeros((in_channels, head_dim));
        for (i, &c) in key_channels.iter().enumerate() {
            proj[[c, i]] = sharpness;
        }
        let mut heads_vec = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut w_v = Array2::zeros((in_channels, head_dim));
            for d in 0..head_dim {
                if let Some(&c) = value_channels.get(h * head_dim + d) {
                    w_v[[c, d]] = 1.0;
                }
            }
            heads_vec.push(HeadParams {
                w_q: proj.clone(),
                w_k: proj.clone(),
                w_v,
            });
        }
        let mut w_o = Array2::zeros((heads * head_dim, out_channels));
        for i in 0..value_channels.len() {
            w_o[[i, i]] = 1.0;
        }
        Ok(Self { heads: heads_vec, w_o })
    }

    pub fn in_channels(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.nrows())
    }

    pub fn head_dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.w_q.ncols())
    }

    pub fn out_channels(&self) -> usize {
        self.w_o.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, dh) = (self.in_channels(), self.head_dim());
        if self.heads.is_empty() || dh == 0 {
            return Err(Error::Shape("attention needs at least one head of nonzero width".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            for m in [&h.w_q, &h.w_k, &h.w_v] {
                if m.dim() != (c, dh) {
                    return Err(Error::Shape(format!("head {i} projection is {:?}, expected ({c}, {dh})", m.dim())));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("head {i} weights")));
                }
            }
        }
        if self.w_o.nrows() != self.heads.len() * dh {
            return Err(Error::Shape(format!(
                "W_o has {} rows, expected {}",
                self.w_o.nrows(),
                self.heads.len() * dh
            )));
        }
        if self.w_o.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("W_o".into()));
        }
        Ok(())
    }
}

/// Row-stochastic attention matrices `Softmax(QKᵀ/√D_h)`, one per head.
pub fn attention_matrices(seq: ArrayView2<f32>, params: &AttentionParams) -> Result<Vec<Array2<f64>>> {
    check_input(seq, params)?;
    let x = seq.mapv(f64::from);
    let scale = 1.0 / (params.head_dim() as f64).sqrt();
    params
        .heads
        .iter()
        .map(|h| {
            let q = x.dot(&h.w_q);
            let k = x.dot(&h.w_k);
            let mut scores = q.dot(&k.t()) * scale;
            for mut row in scores.rows_mut() {
                let slice = row.as_slice_mut().expect("standard layout");
                softmax_in_place(slice);
            }
            Ok(scores)
        })
        .collect()
}

/// `concat_h[Softmax(Q_h K_hᵀ / √D_h) V_h] · W_o`, computed in `f64`.
///
/// Rows are processed in blocks so that long sequences never hold a full
/// `N × N` score matrix per head.
///
/// `what` names the token set (window index and so on) in error messages.
pub fn multi_head_self_attention(seq: ArrayView2<f32>, params: &AttentionParams, what: &str) -> Result<Array2<f32>> {
    const BLOCK: usize = 256;
    check_input(seq, params)?;
    let x = seq.mapv(f64::from);
    let n = seq.nrows();
    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::<f64>::zeros((n, params.heads.len() * dh));
    for (i, h) in params.heads.iter().enumerate() {
        let q = x.dot(&h.w_q);
        let kt = x.dot(&h.w_k).reversed_axes();
        let v = x.dot(&h.w_v);
        let mut out = concat.slice_mut(ndarray::s![.., i * dh..(i + 1) * dh]);
        for start in (0..n).step_by(BLOCK) {
            let end = (start + BLOCK).min(n);
            let mut scores = q.slice(ndarray::s![start..end, ..]).dot(&kt) * scale;
            for mut row in scores.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("standard layout"));
            }
            out.slice_mut(ndarray::s![start..end, ..]).assign(&scores.dot(&v));
        }
    }
    let out = concat.dot(&params.w_o);
    if out.iter().any(|v| !v.is_finite() || v.abs() > f32::MAX as f64) {
        return Err(Error::NonFinite(format!("attention output for {what}")));
    }
    Ok(out.mapv(|v| v as f32))
}

fn check_input(seq: ArrayView2<f32>, params: &AttentionParams) -> Result<()> {
    params.validate()?;
    if seq.ncols() != params.in_channels() {
        return Err(Error::Shape(format!(
            "sequence has {} channels, attention expects {}",
            seq.ncols(),
            params.in_channels()
        )));
    }
    if seq.nrows() == 0 {
        return Err(Error::Shape("empty token sequence".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;

    fn random_seq(rows: usize, cols: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn rows_are_convex_weights() {
        let params = AttentionParams::seeded(8, 4, 2, 4, 1);
        let seq = random_seq(16, 8, 2);
        for a in attention_matrices(seq.view(), &params).unwrap() {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn single_token_is_value_projection() {
        let params = AttentionParams::seeded(8, 4, 2, 4, 3);
        let seq = random_seq(1, 8, 4);
        let out = multi_head_self_attention(seq.view(), &params, "t").unwrap();
        let x: Array1<f64> = seq.row(0).mapv(f64::from);
        let concat: Vec<f64> = params.heads.iter().flat_map(|h| x.dot(&h.w_v).to_vec()).collect();
        let expected = Array1::from(concat).dot(&params.w_o);
        for (a, b) in out.row(0).iter().zip(expected.iter()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_sequence_matches_single_token() {
        let params = AttentionParams::seeded(6, 2, 3, 3, 5);
        let row = random_seq(1, 6, 6);
        let seq = Array2::from_shape_fn((9, 6), |(_, c)| row[[0, c]]);
        let out = multi_head_self_attention(seq.view(), &params, "t").unwrap();
        let single = multi_head_self_attention(row.view(), &params, "t").unwrap();
        for r in out.rows() {
            for (a, b) in r.iter().zip(single.row(0)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let params = AttentionParams::seeded(8, 4, 2, 4, 7);
        let seq = random_seq(10, 8, 8);
        let perm = [3usize, 0, 9, 1, 7, 2, 8, 5, 4, 6];
        let permuted = Array2::from_shape_fn((10, 8), |(r, c)| seq[[perm[r], c]]);
        let out = multi_head_self_attention(seq.view(), &params, "t").unwrap();
        let out_p = multi_head_self_attention(permuted.view(), &params, "t").unwrap();
        for (r, &src) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((out_p[[r, c]] - out[[src, c]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let mut params = AttentionParams::seeded(2, 1, 2, 2, 9);
        params.w_o.fill(1e300);
        let seq = random_seq(3, 2, 10);
        let err = multi_head_self_attention(seq.view(), &params, "window 12").unwrap_err();
        assert!(err.to_string().contains("window 12"));
    }

    #[test]
    fn selective_routing_copies_values() {
        // Tokens are one-hot types in channels 0..3; values live in 3..5.
        let params = AttentionParams::type_selective(5, 2, 3, 2, &[0, 1, 2], &[3, 4], 10.0).unwrap();
        let seq = ndarray::arr2(&[
            [1.0f32, 0.0, 0.0, 0.2, 0.1],
            [0.0, 1.0, 0.0, 0.9, 0.8],
            [1.0, 0.0, 0.0, 0.2, 0.1],
        ]);
        let out = multi_head_self_attention(seq.view(), &params, "t").unwrap();
        assert!((out[[1, 0]] - 0.9).abs() < 1e-6 && (out[[1, 1]] - 0.8).abs() < 1e-6);
        assert!((out[[0, 0]] - 0.2).abs() < 1e-6);
        assert!(AttentionParams::type_selective(5, 1, 2, 2, &[0, 1, 2], &[3], 1.0).is_err());
    }
}
