//! Reversible per-window normalization and the random-erase augmentation.
//!
//! Statistics are computed from the input window only, per channel, and
//! stored so model outputs can be mapped back to the original scale. A
//! window is `len` rows of `channels` values, row-major.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const INSTANCE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    None,
    /// Subtract the per-channel window mean.
    Mean,
    /// Subtract the final observed value per channel.
    Last,
    /// Subtract the mean and divide by sqrt(population variance + eps).
    Instance,
}

impl NormMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::Mean => "mean",
            NormMode::Last => "last",
            NormMode::Instance => "instance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormMode::None),
            "mean" => Ok(NormMode::Mean),
            "last" => Ok(NormMode::Last),
            "instance" => Ok(NormMode::Instance),
            other => Err(Error::Config(alloc::format!("unknown normalization mode {other:?}"))),
        }
    }
}

/// Per-window statistics: `normalized = (x - shift) / scale` per channel.
#[derive(Debug, Clone)]
pub struct NormState {
    pub mode: NormMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormState {
    pub fn channels(&self) -> usize {
        self.shift.len()
    }
}

/// Normalize one window, returning the transformed values and the state
/// needed to invert the transform.
pub fn apply(window: &[f64], channels: usize, mode: NormMode) -> Result<(Vec<f64>, NormState)> {
    if window.is_empty() || channels == 0 || !window.len().is_multiple_of(channels) {
        return Err(Error::Contract(alloc::format!(
            "window of {} values is not a positive multiple of {channels} channels",
            window.len()
        )));
    }
    let len = window.len() / channels;
    let mut shift = alloc::vec![0.0; channels];
    let mut scale = alloc::vec![1.0; channels];
    match mode {
        NormMode::None => {}
        NormMode::Mean | NormMode::Instance => {
            for c in 0..channels {
                let mut sum = 0.0;
                for t in 0..len {
                    sum += window[t * channels + c];
                }
                shift[c] = sum / len as f64;
            }
            if mode == NormMode::Instance {
                for c in 0..channels {
                    let mut var = 0.0;
                    for t in 0..len {
                        let d = window[t * channels + c] - shift[c];
                        var += d * d;
                    }
                    scale[c] = libm::sqrt(var / len as f64 + INSTANCE_EPS);
                }
            }
        }
        NormMode::Last => {
            for c in 0..channels {
                shift[c] = window[(len - 1) * channels + c];
            }
        }
    }
    let state = NormState { mode, shift, scale };
    Ok((transform(&state, window), state))
}

/// Normalize further values (e.g. training targets) with an existing state.
pub fn transform(state: &NormState, data: &[f64]) -> Vec<f64> {
    let channels = state.channels();
    data.iter()
        .enumerate()
        .map(|(i, &v)| (v - state.shift[i % channels]) / state.scale[i % channels])
        .collect()
}

/// Map model outputs back to the original scale: the exact inverse of
/// [`transform`].
pub fn invert(state: &NormState, prediction: &[f64]) -> Vec<f64> {
    let channels = state.channels();
    prediction
        .iter()
        .enumerate()
        .map(|(i, &v)| v * state.scale[i % channels] + state.shift[i % channels])
        .collect()
}

/// Zero one contiguous span per channel with probability `p`, span length
/// drawn as a ratio from `span_range`. Deterministic under a fixed seed;
/// meant for (already normalized) training inputs only.
pub fn random_erase(
    window: &mut [f64],
    channels: usize,
    p: f64,
    span_range: (f64, f64),
    seed: u64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(alloc::format!("erase probability {p} outside [0, 1]")));
    }
    let (lo, hi) = span_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(alloc::format!(
            "erase span range ({lo}, {hi}) outside (0, 1]"
        )));
    }
    if channels == 0 || !window.len().is_multiple_of(channels) {
        return Err(Error::Contract("window/channel mismatch".into()));
    }
    let len = window.len() / channels;
    let mut rng = Rng::new(seed);
    for c in 0..channels {
        if rng.next_f64() >= p {
            continue;
        }
        let ratio = rng.uniform(lo, hi);
        let span = ((ratio * len as f64) as usize).clamp(1, len);
        let start = if span == len { 0 } else { rng.below(len - span + 1) };
        for t in start..start + span {
            window[t * channels + c] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_mode_example() {
        let (out, state) = apply(&[1.0, 2.0, 3.0], 1, NormMode::Mean).unwrap();
        assert_eq!(out, &[-1.0, 0.0, 1.0]);
        assert_eq!(state.shift, &[2.0]);
    }

    #[test]
    fn last_mode_example() {
        let (out, state) = apply(&[1.0, 2.0, 3.0], 1, NormMode::Last).unwrap();
        assert_eq!(out, &[-2.0, -1.0, 0.0]);
        assert_eq!(state.shift, &[3.0]);
    }

    #[test]
    fn instance_mode_example() {
        // Population std of [1,2,3] is sqrt(2/3).
        let (out, _) = apply(&[1.0, 2.0, 3.0], 1, NormMode::Instance).unwrap();
        let want = 1.0 / libm::sqrt(2.0 / 3.0 + INSTANCE_EPS);
        assert!((out[0] + want).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
        assert!((out[2] - want).abs() < 1e-12);
        assert!((out[2] - 1.2247).abs() < 1e-3);
    }

    #[test]
    fn instance_mode_safe_for_constant_windows() {
        let (out, state) = apply(&[5.0; 6], 2, NormMode::Instance).unwrap();
        assert!(out.iter().all(|v| v.is_finite() && *v == 0.0));
        let back = invert(&state, &out);
        assert!(back.iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn invert_round_trips_all_modes() {
        let mut rng = Rng::new(31);
        for mode in [NormMode::None, NormMode::Mean, NormMode::Last, NormMode::Instance] {
            for _ in 0..50 {
                let window: Vec<f64> = (0..24).map(|_| rng.uniform(-100.0, 100.0)).collect();
                let (out, state) = apply(&window, 3, mode).unwrap();
                let back = invert(&state, &out);
                for (orig, rec) in window.iter().zip(&back) {
                    let rel = (orig - rec).abs() / orig.abs().max(1.0);
                    assert!(rel <= 1e-10, "mode {mode:?}: {orig} vs {rec}");
                }
            }
        }
    }

    #[test]
    fn invert_of_zero_prediction_returns_shift() {
        let (_, state) = apply(&[1.0, 2.0, 3.0], 1, NormMode::Mean).unwrap();
        let back = invert(&state, &[0.0, 0.0]);
        assert_eq!(back, &[2.0, 2.0]);
    }

    #[test]
    fn stats_never_read_targets() {
        // Same window, wildly different hypothetical targets: the state is a
        // function of the window alone by construction; transform of a
        // sentinel target stays consistent with the window stats.
        let window = [1.0, 2.0, 3.0];
        let (_, state) = apply(&window, 1, NormMode::Mean).unwrap();
        let t1 = transform(&state, &[1e9]);
        let (_, state2) = apply(&window, 1, NormMode::Mean).unwrap();
        let t2 = transform(&state2, &[1e9]);
        assert_eq!(t1, t2);
        assert_eq!(state.shift, state2.shift);
    }

    #[test]
    fn erase_p_zero_is_identity() {
        let mut w = [1.0, 2.0, 3.0, 4.0];
        random_erase(&mut w, 1, 0.0, (0.1, 0.5), 7).unwrap();
        assert_eq!(w, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn erase_full_span_zeroes_everything() {
        let mut w = [1.0, 2.0, 3.0, 4.0];
        random_erase(&mut w, 1, 1.0, (1.0, 1.0), 7).unwrap();
        assert_eq!(w, [0.0; 4]);
    }

    #[test]
    fn erase_deterministic_under_seed() {
        let mut a: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut b = a.clone();
        random_erase(&mut a, 2, 0.5, (0.1, 0.4), 99).unwrap();
        random_erase(&mut b, 2, 0.5, (0.1, 0.4), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn erase_touches_only_one_span_per_channel() {
        let mut rng = Rng::new(3);
        for trial in 0..50 {
            let orig: Vec<f64> = (0..30).map(|_| rng.uniform(1.0, 2.0)).collect();
            let mut w = orig.clone();
            random_erase(&mut w, 2, 1.0, (0.1, 0.5), trial).unwrap();
            for c in 0..2 {
                let changed: Vec<usize> = (0..15)
                    .filter(|&t| w[t * 2 + c] != orig[t * 2 + c])
                    .collect();
                assert!(!changed.is_empty());
                // Contiguous, and every changed position is zero.
                for pair in changed.windows(2) {
                    assert_eq!(pair[1], pair[0] + 1);
                }
                for &t in &changed {
                    assert_eq!(w[t * 2 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn erase_rejects_bad_config() {
        let mut w = [1.0];
        assert!(random_erase(&mut w, 1, 1.5, (0.1, 0.2), 0).is_err());
        assert!(random_erase(&mut w, 1, 0.5, (0.0, 0.2), 0).is_err());
        assert!(random_erase(&mut w, 1, 0.5, (0.3, 0.2), 0).is_err());
        assert!(random_erase(&mut w, 1, 0.5, (0.3, 1.2), 0).is_err());
    }
}
