//! Synthetic frame source standing in for an image encoder.
//!
//! Every token is Gaussian noise plus a small shared component along a
//! session-wide anchor direction. Landmark patches get an extra
//! `landmark_gain` along the anchor, which the anchor-focused query/key
//! projections turn into strong attention.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cache::{is_protected, TokenId, TokenKind};
use crate::sim::config::StreamConfig;

/// Anchor component shared by every token, in units of the embedding scale.
pub const CONTEXT_BIAS: f64 = 0.5;

pub(crate) const ANCHOR_STREAM: u64 = 1;
pub(crate) const WEIGHT_STREAM: u64 = 2;
const FRAME_STREAM_BASE: u64 = 1 << 32;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Session-wide anchor direction with unit per-entry RMS (norm `sqrt(dim)`).
pub fn anchor_direction(config: &StreamConfig) -> Vec<f64> {
    let mut rng = stream_rng(config.seed, ANCHOR_STREAM);
    let mut v = gaussian_vec(&mut rng, config.dim);
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let scale = libm::sqrt(config.dim as f64) / norm;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Id of slot `slot` of frame `frame_index`; identical in every layer and run.
pub fn token_id(config: &StreamConfig, frame_index: usize, slot: usize) -> TokenId {
    TokenId((frame_index * config.tokens_per_frame + slot) as u64)
}

/// Slot layout: camera first, then registers, then patches.
pub fn slot_kind(config: &StreamConfig, slot: usize) -> TokenKind {
    if slot == 0 {
        TokenKind::Camera
    } else if slot <= config.registers {
        TokenKind::Register
    } else {
        TokenKind::Patch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTokens {
    pub frame_index: usize,
    pub embeddings: Vec<Vec<f64>>,
    pub kinds: Vec<TokenKind>,
    /// Generator ground truth; never shown to eviction policies.
    pub landmark_mask: Vec<bool>,
}

impl FrameTokens {
    pub fn ids<'a>(&'a self, config: &'a StreamConfig) -> impl Iterator<Item = TokenId> + 'a {
        (0..self.kinds.len()).map(move |s| token_id(config, self.frame_index, s))
    }
}

/// Deterministic frame `frame_index` of the configured stream.
pub fn generate_frame(config: &StreamConfig, frame_index: usize) -> FrameTokens {
    let anchor = anchor_direction(config);
    generate_frame_with_anchor(config, frame_index, &anchor)
}

pub(crate) fn generate_frame_with_anchor(config: &StreamConfig, frame_index: usize, anchor: &[f64]) -> FrameTokens {
    let m = config.tokens_per_frame;
    let mut rng = stream_rng(config.seed, FRAME_STREAM_BASE + frame_index as u64);
    let kinds: Vec<TokenKind> = (0..m).map(|s| slot_kind(config, s)).collect();
    let first_patch = 1 + config.registers;

    let landmark_mask: Vec<bool> = (0..m)
        .map(|s| s >= first_patch && rng.random_bool(config.landmark_fraction))
        .collect();

    let embeddings = (0..m)
        .map(|s| {
            let bias = CONTEXT_BIAS + if landmark_mask[s] { config.landmark_gain } else { 0.0 };
            gaussian_vec(&mut rng, config.dim)
                .into_iter()
                .zip(anchor)
                .map(|(n, a)| n + bias * a)
                .collect()
        })
        .collect();

    FrameTokens {
        frame_index,
        embeddings,
        kinds,
        landmark_mask,
    }
}

/// Ids of landmark tokens that eviction may touch (frames after the first).
pub fn evictable_landmarks(config: &StreamConfig, frame: &FrameTokens) -> Vec<TokenId> {
    frame
        .ids(config)
        .zip(frame.kinds.iter().zip(&frame.landmark_mask))
        .filter(|(_, (kind, lm))| **lm && !is_protected(frame.frame_index, **kind))
        .map(|(id, _)| id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_deterministic() {
        let c = StreamConfig::default();
        assert_eq!(generate_frame(&c, 3), generate_frame(&c, 3));
        assert_ne!(generate_frame(&c, 3).embeddings, generate_frame(&c, 4).embeddings);
        let mut other = c.clone();
        other.seed += 1;
        assert_ne!(generate_frame(&c, 3).embeddings, generate_frame(&other, 3).embeddings);
    }

    #[test]
    fn frame_layout() {
        let c = StreamConfig {
            tokens_per_frame: 12,
            registers: 2,
            landmark_fraction: 1.0,
            ..Default::default()
        };
        let f = generate_frame(&c, 1);
        assert_eq!(f.kinds.iter().filter(|k| **k == TokenKind::Camera).count(), 1);
        assert_eq!(f.kinds.iter().filter(|k| **k == TokenKind::Register).count(), 2);
        assert_eq!(f.landmark_mask.iter().filter(|m| **m).count(), 9);
        for (kind, lm) in f.kinds.iter().zip(&f.landmark_mask) {
            assert!(!*lm || *kind == TokenKind::Patch);
        }
        assert_eq!(f.embeddings.len(), 12);
        assert!(f.embeddings.iter().all(|e| e.len() == c.dim));
    }

    #[test]
    fn anchor_has_unit_rms() {
        let c = StreamConfig::default();
        let a = anchor_direction(&c);
        let ms = a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
        assert!((ms - 1.0).abs() < 1e-12);
    }
}
