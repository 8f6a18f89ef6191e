//! Dense f64 kernels: projections, RMS normalization and multi-head
//! scaled dot-product attention. All reductions run serially in a fixed
//! order so results are bit-stable.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::sim::generator::gaussian_vec;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Gaussian entries with variance `1 / dim`.
    pub fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let scale = 1.0 / libm::sqrt(dim as f64);
        let data = gaussian_vec(rng, dim * dim).into_iter().map(|x| x * scale).collect();
        Self { dim, data }
    }

    /// Adds `gain * u u^T` for a direction `u` (normalized internally).
    pub fn add_rank_one(&mut self, u: &[f64], gain: f64) {
        let norm2: f64 = u.iter().map(|x| x * x).sum();
        if norm2 == 0.0 {
            return;
        }
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.data[i * self.dim + j] += gain * u[i] * u[j] / norm2;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// Rescales `x` to unit per-entry RMS.
pub fn rms_norm(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / libm::sqrt(ms + 1e-12);
    x.iter().map(|v| v * inv).collect()
}

/// In-place numerically stable softmax.
pub fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Result of one multi-head attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// One `dim`-wide row per query (heads concatenated).
    pub outputs: Vec<Vec<f64>>,
    /// Per-head row-major `queries x keys` weight maps.
    pub maps: Vec<Vec<f64>>,
}

/// Multiplies spent by [`multi_head_attention`]: scores plus value mixing.
pub fn attention_multiplies(queries: usize, keys: usize, dim: usize) -> u64 {
    2 * (queries as u64) * (keys as u64) * (dim as u64)
}

/// Each head attends with its `dim / heads` slice of queries, keys and
/// values, scaled by `1 / sqrt(dim / heads)`.
pub fn multi_head_attention(queries: &[Vec<f64>], keys: &[&[f64]], values: &[&[f64]], heads: usize) -> AttentionOutput {
    let n_q = queries.len();
    let n_k = keys.len();
    let dim = queries.first().map_or(0, Vec::len);
    let hd = dim / heads;
    let scale = 1.0 / libm::sqrt(hd as f64);
    let mut outputs = alloc::vec![alloc::vec![0.0; dim]; n_q];
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let span = h * hd..(h + 1) * hd;
        let mut map = alloc::vec![0.0; n_q * n_k];
        for (q, query) in queries.iter().enumerate() {
            let row = &mut map[q * n_k..(q + 1) * n_k];
            for (j, key) in keys.iter().enumerate() {
                let dot: f64 = query[span.clone()]
                    .iter()
                    .zip(&key[span.clone()])
                    .map(|(a, b)| a * b)
                    .sum();
                row[j] = dot * scale;
            }
            softmax(row);
            let out = &mut outputs[q][span.clone()];
            for (w, value) in row.iter().zip(values) {
                for (o, v) in out.iter_mut().zip(&value[span.clone()]) {
                    *o += w * v;
                }
            }
        }
        maps.push(map);
    }
    AttentionOutput { outputs, maps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1000.0, -5.0, 3.0, 3.0];
        softmax(&mut row);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut flat = vec![2.0; 5];
        softmax(&mut flat);
        assert!(flat.iter().all(|w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let q = vec![vec![1.0, -2.0, 0.5, 3.0]];
        let k = [1.0, 1.0, 1.0, 1.0];
        let v0 = [1.0, 0.0, 0.0, 0.0];
        let v1 = [0.0, 1.0, 0.0, 0.0];
        let out = multi_head_attention(&q, &[&k, &k], &[&v0, &v1], 2);
        assert_eq!(out.maps.len(), 2);
        for m in &out.maps {
            assert_eq!(m, &vec![0.5, 0.5]);
        }
        assert_eq!(out.outputs[0], vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn rank_one_boost_aligns_direction() {
        let mut m = Matrix {
            dim: 2,
            data: vec![0.0; 4],
        };
        m.add_rank_one(&[3.0, 4.0], 2.0);
        let y = m.apply(&[3.0, 4.0]);
        assert!((y[0] - 6.0).abs() < 1e-12 && (y[1] - 8.0).abs() < 1e-12);
    }
}
