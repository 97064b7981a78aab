//! Sliding-window decomposition of a chirp's samples into overlapping
//! subsegments and overlap-averaged reconstruction.
//!
//! Segment k is `x[kL : (k+1)L + M]` where L is the slide distance and M the
//! overlap. Reconstruction averages the M overlapped samples of adjacent
//! segments and takes the final tail verbatim from the last segment.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Slide distance L, samples.
    pub slide: usize,
    /// Overlap M, samples.
    pub overlap: usize,
}

impl WindowConfig {
    /// Segment length 32 via slide 16 / overlap 16.
    pub fn default_paper() -> Self {
        WindowConfig {
            slide: 16,
            overlap: 16,
        }
    }

    pub fn segment_len(&self) -> usize {
        self.slide + self.overlap
    }

    /// Number of segments covering a signal of `signal_len` samples.
    pub fn n_frames(&self, signal_len: usize) -> Result<usize> {
        if self.slide == 0 {
            return Err(Error::invalid("slide distance must be >= 1"));
        }
        if signal_len < self.segment_len() {
            return Err(Error::invalid("signal shorter than one segment"));
        }
        if (signal_len - self.overlap) % self.slide != 0 {
            return Err(Error::invalid(format!(
                "(signal_len - M) = {} not divisible by L = {}",
                signal_len - self.overlap,
                self.slide
            )));
        }
        Ok((signal_len - self.overlap) / self.slide)
    }
}

/// Overlapping segments laid out `[n_frames, segment_len, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStack {
    pub segments: Tensor,
    pub config: WindowConfig,
}

impl SegmentStack {
    pub fn n_frames(&self) -> usize {
        self.segments.shape()[0]
    }

    pub fn segment_len(&self) -> usize {
        self.segments.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.segments.shape()[2]
    }

    pub fn signal_len(&self) -> usize {
        self.n_frames() * self.config.slide + self.config.overlap
    }
}

/// Split `[signal_len, C]` into overlapping segments.
pub fn split_windows(x: &Tensor, cfg: &WindowConfig) -> Result<SegmentStack> {
    let sh = x.shape();
    if sh.len() != 2 {
        return Err(Error::invalid("split_windows expects [signal_len, C]"));
    }
    let (signal_len, channels) = (sh[0], sh[1]);
    let n_frames = cfg.n_frames(signal_len)?;
    let seg = cfg.segment_len();
    let mut data = Vec::with_capacity(n_frames * seg * channels);
    for k in 0..n_frames {
        let start = k * cfg.slide;
        data.extend_from_slice(&x.data()[start * channels..(start + seg) * channels]);
    }
    Ok(SegmentStack {
        segments: Tensor::new(vec![n_frames, seg, channels], data)?,
        config: *cfg,
    })
}

/// Overlap-averaged reconstruction: interior overlapped blocks are the mean
/// of the adjacent segments; the first L samples come from segment 0 and the
/// trailing M samples verbatim from the last segment's tail.
pub fn merge_windows(s: &SegmentStack) -> Result<Tensor> {
    let sh = s.segments.shape();
    if sh.len() != 3 || sh[1] != s.config.segment_len() {
        return Err(Error::invalid("inconsistent segment stack"));
    }
    let (n_frames, seg, channels) = (sh[0], sh[1], sh[2]);
    let (l, m) = (s.config.slide, s.config.overlap);
    let signal_len = n_frames * l + m;
    let mut out = vec![0.0; signal_len * channels];
    let seg_at = |k: usize, j: usize, c: usize| s.segments.data()[(k * seg + j) * channels + c];
    // first block verbatim
    for j in 0..l {
        for c in 0..channels {
            out[j * channels + c] = seg_at(0, j, c);
        }
    }
    for k in 1..n_frames {
        let base = k * l;
        // overlapped head: average of previous tail and current head
        for j in 0..m {
            for c in 0..channels {
                out[(base + j) * channels + c] =
                    0.5 * (seg_at(k - 1, l + j, c) + seg_at(k, j, c));
            }
        }
        // non-overlapped remainder (empty when M == L)
        for j in m..l {
            for c in 0..channels {
                out[(base + j) * channels + c] = seg_at(k, j, c);
            }
        }
    }
    // trailing tail from the last segment
    let base = n_frames * l;
    for j in 0..m {
        for c in 0..channels {
            out[(base + j) * channels + c] = seg_at(n_frames - 1, l + j, c);
        }
    }
    Tensor::new(vec![signal_len, channels], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(len: usize, channels: usize) -> Tensor {
        let data = (0..len * channels).map(|i| i as f64).collect();
        Tensor::new(vec![len, channels], data).unwrap()
    }

    #[test]
    fn paper_setting_yields_63_segments() {
        let cfg = WindowConfig::default_paper();
        let x = ramp(1024, 1);
        let s = split_windows(&x, &cfg).unwrap();
        assert_eq!(s.n_frames(), 63);
        assert_eq!(s.segment_len(), 32);
    }

    #[test]
    fn no_overlap_concatenation_reproduces_input() {
        let cfg = WindowConfig {
            slide: 8,
            overlap: 0,
        };
        let x = ramp(32, 2);
        let s = split_windows(&x, &cfg).unwrap();
        assert_eq!(s.segments.data(), x.data());
        let back = merge_windows(&s).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn segment_slices_match_definition() {
        let cfg = WindowConfig {
            slide: 8,
            overlap: 8,
        };
        let x = ramp(32, 1);
        let s = split_windows(&x, &cfg).unwrap();
        let seg1: Vec<f64> = (8..24).map(|v| v as f64).collect();
        assert_eq!(&s.segments.data()[16..32], seg1.as_slice());
    }

    #[test]
    fn divisibility_violation_errors() {
        let cfg = WindowConfig {
            slide: 16,
            overlap: 16,
        };
        assert!(split_windows(&ramp(1000, 1), &cfg).is_err());
    }

    #[test]
    fn overlap_averaging() {
        let cfg = WindowConfig {
            slide: 4,
            overlap: 4,
        };
        // two segments; previous tail all 2.0, next head all 4.0
        let mut data = vec![0.0; 2 * 8];
        for j in 4..8 {
            data[j] = 2.0; // segment 0 tail
        }
        for j in 0..4 {
            data[8 + j] = 4.0; // segment 1 head
        }
        let s = SegmentStack {
            segments: Tensor::new(vec![2, 8, 1], data).unwrap(),
            config: cfg,
        };
        let out = merge_windows(&s).unwrap();
        for j in 4..8 {
            assert_eq!(out.data()[j], 3.0);
        }
    }

    #[test]
    fn merge_matches_naive_oracle() {
        let cfg = WindowConfig::default_paper();
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        let n_frames = 63;
        let data: Vec<f64> = (0..n_frames * 32).map(|_| next()).collect();
        let s = SegmentStack {
            segments: Tensor::new(vec![n_frames, 32, 1], data.clone()).unwrap(),
            config: cfg,
        };
        let out = merge_windows(&s).unwrap();
        assert_eq!(out.shape(), &[1024, 1]);
        // index-by-index oracle
        let (l, m) = (16usize, 16usize);
        let seg = |k: usize, j: usize| data[k * 32 + j];
        for k in 0..n_frames {
            for j in 0..l {
                let idx = k * l + j;
                let expect = if k == 0 {
                    seg(0, j)
                } else {
                    0.5 * (seg(k - 1, l + j) + seg(k, j))
                };
                assert_eq!(out.data()[idx], expect, "idx {idx}");
            }
        }
        for j in 0..m {
            assert_eq!(out.data()[n_frames * l + j], seg(n_frames - 1, l + j));
        }
    }

    #[test]
    fn interior_blocks_are_pure_averages_when_m_equals_l() {
        // structural check: with M == L the non-overlapped remainder is empty
        let cfg = WindowConfig {
            slide: 16,
            overlap: 16,
        };
        assert_eq!(cfg.segment_len(), 32);
        assert_eq!(cfg.overlap, cfg.slide);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            lm in prop::sample::select(vec![(16usize, 16usize), (8, 8), (8, 4), (4, 0), (16, 8)]),
            frames in 2usize..8,
            seed in 0u64..1000,
        ) {
            let (l, m) = lm;
            let len = frames * l + m;
            let mut state = seed.wrapping_add(1);
            let data: Vec<f64> = (0..len * 2).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(0x3FF0000000000000 | (state >> 12)) - 1.5
            }).collect();
            let x = Tensor::new(vec![len, 2], data).unwrap();
            let cfg = WindowConfig { slide: l, overlap: m };
            let back = merge_windows(&split_windows(&x, &cfg).unwrap()).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn merge_is_linear(seed in 0u64..200) {
            let cfg = WindowConfig { slide: 8, overlap: 8 };
            let mut state = seed.wrapping_add(3);
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((state >> 33) as f64) / (u32::MAX as f64) - 0.5
            };
            let n = 4 * 16;
            let a: Vec<f64> = (0..n).map(|_| next()).collect();
            let b: Vec<f64> = (0..n).map(|_| next()).collect();
            let (alpha, beta) = (2.0, -0.5);
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let stack = |d: Vec<f64>| SegmentStack {
                segments: Tensor::new(vec![4, 16, 1], d).unwrap(),
                config: cfg,
            };
            let mc = merge_windows(&stack(combo)).unwrap();
            let ma = merge_windows(&stack(a)).unwrap();
            let mb = merge_windows(&stack(b)).unwrap();
            for i in 0..mc.len() {
                let expect = alpha * ma.data()[i] + beta * mb.data()[i];
                prop_assert!((mc.data()[i] - expect).abs() < 1e-12);
            }
        }
    }
}
