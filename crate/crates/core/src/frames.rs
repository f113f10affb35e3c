//! Time spans and the sample/frame arithmetic of the segmentation front end.
//!
//! The encoder consumes a 400-sample analysis window and advances by 320
//! samples, so a 16 kHz chunk is scored at roughly 50 frames per second.
//! Frame `i` is timestamped at the midpoint of its receptive field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    start_s: f64,
    end_s: f64,
}

impl TimeSpan {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(Error::InvalidSpan {
                start: start_s,
                end: end_s,
            });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn start(&self) -> f64 {
        self.start_s
    }

    pub fn end(&self) -> f64 {
        self.end_s
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }

    /// Length of the intersection with `other`, zero when disjoint.
    pub fn overlap(&self, other: &TimeSpan) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRate {
    pub conv_window: usize,
    pub conv_hop: usize,
    pub sample_rate_hz: u32,
}

impl Default for FrameRate {
    fn default() -> Self {
        Self {
            conv_window: 400,
            conv_hop: 320,
            sample_rate_hz: 16_000,
        }
    }
}

impl FrameRate {
    pub fn new(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            ..Self::default()
        }
    }

    /// Number of encoder frames produced for `n` input samples.
    pub fn frames_for_samples(&self, n: usize) -> Result<usize> {
        if n < self.conv_window {
            return Err(Error::TooShort {
                samples: n,
                window: self.conv_window,
            });
        }
        Ok((n - self.conv_window) / self.conv_hop + 1)
    }

    /// Frame hop in seconds.
    pub fn step_s(&self) -> f64 {
        self.conv_hop as f64 / self.sample_rate_hz as f64
    }

    /// Receptive field of one frame in seconds.
    pub fn duration_s(&self) -> f64 {
        self.conv_window as f64 / self.sample_rate_hz as f64
    }

    /// Center time of frame `idx`, relative to the start of its chunk.
    pub fn frame_to_time(&self, idx: usize) -> f64 {
        (idx * self.conv_hop) as f64 / self.sample_rate_hz as f64 + 0.5 * self.duration_s()
    }

    /// Index of the frame whose center is closest to `t_s`.
    pub fn time_to_frame(&self, t_s: f64) -> usize {
        let idx = ((t_s - 0.5 * self.duration_s()) / self.step_s()).round();
        if idx <= 0.0 {
            0
        } else {
            idx as usize
        }
    }

    /// Frame index closest to a chunk starting at `start_sample`.
    pub fn chunk_start_frame(&self, start_sample: usize) -> usize {
        (start_sample as f64 / self.conv_hop as f64).round() as usize
    }

    /// Number of output frames needed to hold every frame of a sequence
    /// of chunks whose last one ends at `end_sample`.
    ///
    /// Counts up to the frame closest to `end_sample` plus half a frame,
    /// so the final frame slot straddles the end of the last chunk.
    pub fn total_frames(&self, end_sample: usize) -> usize {
        (end_sample as f64 / self.conv_hop as f64).round() as usize + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_examples() {
        let fr = FrameRate::default();
        assert_eq!(fr.frames_for_samples(256_000).unwrap(), 799);
        assert_eq!(fr.frames_for_samples(400).unwrap(), 1);
        assert_eq!(fr.frames_for_samples(720).unwrap(), 2);
        assert!(matches!(
            fr.frames_for_samples(399),
            Err(Error::TooShort { samples: 399, .. })
        ));
    }

    #[test]
    fn frame_count_monotone() {
        let fr = FrameRate::default();
        let mut prev = 0;
        for n in 400..5000 {
            let f = fr.frames_for_samples(n).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn frame_times() {
        let fr = FrameRate::default();
        assert!((fr.frame_to_time(0) - 0.0125).abs() < 1e-12);
        assert_eq!(fr.time_to_frame(0.0125), 0);
        assert!(fr.frame_to_time(798) + 0.5 * fr.duration_s() <= 16.0);
        assert!(fr.frame_to_time(799) < 16.0);
        for i in 0..2000 {
            assert_eq!(fr.time_to_frame(fr.frame_to_time(i)), i);
        }
    }

    #[test]
    fn span_rules() {
        assert!(TimeSpan::new(1.0, 1.0).is_err());
        assert!(TimeSpan::new(-0.1, 1.0).is_err());
        let s = TimeSpan::new(1.0, 3.5).unwrap();
        assert_eq!(s.duration(), 2.5);
        assert!(s.contains(1.0) && !s.contains(3.5));
        assert_eq!(s.overlap(&TimeSpan::new(3.0, 9.0).unwrap()), 0.5);
        assert_eq!(s.overlap(&TimeSpan::new(4.0, 9.0).unwrap()), 0.0);
    }
}
