//! Overlap-add aggregation of chunk-level frame activity onto the
//! recording timeline, temporal median filtering and speaker counting.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::frames::FrameRate;

/// Placement of every chunk's frames on the global frame grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    pub chunk_start_frames: Vec<usize>,
    pub frames_per_chunk: usize,
    pub total_frames: usize,
    pub frame_rate: FrameRate,
}

impl FrameLayout {
    pub fn new(chunk_starts: &[usize], window_samples: usize, fr: FrameRate) -> Result<Self> {
        if chunk_starts.is_empty() {
            return Err(Error::Empty("no chunks to lay out".into()));
        }
        if chunk_starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Shape("chunk starts must be strictly increasing".into()));
        }
        let frames_per_chunk = fr.frames_for_samples(window_samples)?;
        let chunk_start_frames: Vec<usize> =
            chunk_starts.iter().map(|&s| fr.chunk_start_frame(s)).collect();
        let last = *chunk_start_frames.last().unwrap();
        let total_frames = fr
            .total_frames(chunk_starts.last().unwrap() + window_samples)
            .max(last + frames_per_chunk);
        Ok(Self {
            chunk_start_frames,
            frames_per_chunk,
            total_frames,
            frame_rate: fr,
        })
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_start_frames.len()
    }

    /// Center time of global frame `idx`.
    pub fn frame_time(&self, idx: usize) -> f64 {
        self.frame_rate.frame_to_time(idx)
    }
}

#[derive(Debug, Clone)]
pub struct AggregatedActivity {
    /// `total_frames x S` averaged scores.
    pub scores: Array2<f64>,
    /// Number of chunks covering each frame.
    pub coverage: Vec<usize>,
    pub layout: FrameLayout,
}

/// Average every chunk's frames onto the global grid. Frames no chunk
/// covers stay at zero with coverage zero.
pub fn overlap_add(per_chunk: &[Array2<f64>], layout: &FrameLayout) -> Result<AggregatedActivity> {
    let first = per_chunk
        .first()
        .ok_or_else(|| Error::Empty("overlap-add needs at least one chunk".into()))?;
    let cols = first.ncols();
    if per_chunk.len() != layout.num_chunks() {
        return Err(Error::Shape(format!(
            "{} chunks given for a layout of {}",
            per_chunk.len(),
            layout.num_chunks()
        )));
    }
    let mut sum = Array2::<f64>::zeros((layout.total_frames, cols));
    let mut coverage = vec![0usize; layout.total_frames];
    for (c, (chunk, &start)) in per_chunk.iter().zip(&layout.chunk_start_frames).enumerate() {
        if chunk.dim() != (layout.frames_per_chunk, cols) {
            return Err(Error::Shape(format!(
                "chunk {c} has shape {:?}, expected ({}, {cols})",
                chunk.dim(),
                layout.frames_per_chunk
            )));
        }
        let end = start + layout.frames_per_chunk;
        let mut target = sum.slice_mut(s![start..end, ..]);
        target += chunk;
        coverage[start..end].iter_mut().for_each(|n| *n += 1);
    }
    for (mut row, &n) in sum.rows_mut().into_iter().zip(&coverage) {
        if n > 0 {
            row /= n as f64;
        }
    }
    Ok(AggregatedActivity {
        scores: sum,
        coverage,
        layout: layout.clone(),
    })
}

/// Half-sample symmetric reflection of index `i` into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Sliding median of width `kernel` along the time axis (rows), applied to
/// each column independently, with reflected edges.
pub fn median_filter_time(activity: ArrayView2<'_, f64>, kernel: usize) -> Result<Array2<f64>> {
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("median kernel must be odd, got {kernel}")));
    }
    let (n, cols) = activity.dim();
    if kernel == 1 || n == 0 {
        return Ok(activity.to_owned());
    }
    let half = (kernel / 2) as isize;
    let mut out = Array2::zeros((n, cols));
    let mut window = vec![0.0; kernel];
    for c in 0..cols {
        let col = activity.column(c);
        for t in 0..n {
            for (j, w) in window.iter_mut().enumerate() {
                *w = col[reflect(t as isize + j as isize - half, n)];
            }
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out[[t, c]] = window[kernel / 2];
        }
    }
    Ok(out)
}

/// Active speakers per frame: the summed activity of all local slots,
/// rounded half to even and clipped to `max_speakers`.
///
/// Local slots carry no identity across chunks, so the sum is taken before
/// thresholding; since overlap-add is linear it equals the overlap-added
/// local count.
pub fn speaker_count(scores: ArrayView2<'_, f64>, max_speakers: usize) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| (row.sum().round_ties_even().max(0.0) as usize).min(max_speakers))
        .collect()
}

/// Fraction of frames with each count value `0..=max`.
pub fn count_fractions(count: &[usize], max: usize) -> Vec<f64> {
    let mut hist = vec![0usize; max + 1];
    for &c in count {
        hist[c.min(max)] += 1;
    }
    let n = count.len().max(1) as f64;
    hist.into_iter().map(|h| h as f64 / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_median(col: &[f64], kernel: usize) -> Vec<f64> {
        // mirror step by step until the index lands inside: d c b a | a b c d | d c b a
        let n = col.len() as isize;
        let at = |mut i: isize| {
            while i < 0 || i >= n {
                i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
            }
            col[i as usize]
        };
        let half = (kernel / 2) as isize;
        (0..n)
            .map(|t| {
                let mut w: Vec<f64> = (t - half..=t + half).map(at).collect();
                w.sort_by(|a, b| a.partial_cmp(b).unwrap());
                w[kernel / 2]
            })
            .collect()
    }

    #[test]
    fn layout_for_thirty_seconds() {
        let starts: Vec<usize> = (0..10).map(|i| i * 25_600).collect();
        let layout = FrameLayout::new(&starts, 256_000, FrameRate::default()).unwrap();
        assert_eq!(layout.frames_per_chunk, 799);
        assert_eq!(layout.chunk_start_frames[9], 720);
        assert_eq!(layout.total_frames, 1521);
    }

    #[test]
    fn ola_examples() {
        let layout = FrameLayout {
            chunk_start_frames: vec![0, 2],
            frames_per_chunk: 4,
            total_frames: 6,
            frame_rate: FrameRate::default(),
        };
        let ones = vec![Array2::ones((4, 2)); 2];
        let agg = overlap_add(&ones, &layout).unwrap();
        assert!(agg.scores.iter().all(|&v| v == 1.0));
        assert_eq!(agg.coverage, vec![1, 1, 2, 2, 1, 1]);

        let mixed = vec![Array2::zeros((4, 1)), Array2::ones((4, 1))];
        let agg = overlap_add(&mixed, &layout).unwrap();
        assert_eq!(agg.scores.column(0).to_vec(), vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert!(overlap_add(&[], &layout).is_err());
        assert!(overlap_add(&[Array2::ones((3, 1)), Array2::ones((4, 1))], &layout).is_err());
    }

    #[test]
    fn ola_matches_accumulate_and_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let starts: Vec<usize> = vec![0, 3, 7, 8, 15];
        let layout = FrameLayout {
            chunk_start_frames: starts.clone(),
            frames_per_chunk: 9,
            total_frames: 25,
            frame_rate: FrameRate::default(),
        };
        let chunks: Vec<Array2<f64>> = (0..5)
            .map(|_| Array2::from_shape_fn((9, 3), |_| rng.gen::<f64>()))
            .collect();
        let agg = overlap_add(&chunks, &layout).unwrap();
        for t in 0..25 {
            for k in 0..3 {
                let covering: Vec<f64> = starts
                    .iter()
                    .zip(&chunks)
                    .filter(|(&s, _)| s <= t && t < s + 9)
                    .map(|(&s, c)| c[[t - s, k]])
                    .collect();
                let expected = if covering.is_empty() {
                    0.0
                } else {
                    covering.iter().sum::<f64>() / covering.len() as f64
                };
                assert!((agg.scores[[t, k]] - expected).abs() < 1e-9);
                assert!((0.0..=1.0).contains(&agg.scores[[t, k]]));
            }
        }
    }

    #[test]
    fn median_examples() {
        let mut x = Array2::zeros((40, 1));
        x[[20, 0]] = 1.0;
        assert_eq!(median_filter_time(x.view(), 1).unwrap(), x);
        assert!(median_filter_time(x.view(), 11).unwrap().iter().all(|&v| v == 0.0));
        assert!(median_filter_time(x.view(), 10).is_err());

        let mut block = Array2::zeros((40, 1));
        for t in 17..23 {
            block[[t, 0]] = 1.0;
        }
        let f = median_filter_time(block.view(), 11).unwrap();
        let col: Vec<f64> = f.column(0).to_vec();
        assert_eq!(col, brute_median(block.column(0).as_slice().unwrap(), 11));
        assert_eq!(col[19], 1.0);
        assert_eq!(col[20], 1.0);
        assert_eq!(col.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn median_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &n in &[1usize, 2, 5, 13, 64] {
            for &kernel in &[1usize, 3, 5, 11, 31] {
                let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(0..5) as f64);
                let f = median_filter_time(x.view(), kernel).unwrap();
                for c in 0..3 {
                    let col: Vec<f64> = x.column(c).to_vec();
                    assert_eq!(f.column(c).to_vec(), brute_median(&col, kernel), "n={n} k={kernel}");
                }
            }
        }
    }

    #[test]
    fn count_is_rounded_overlap_added_local_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fr = FrameRate::default();
        let starts: Vec<usize> = (0..6).map(|i| i * 25_600).collect();
        let layout = FrameLayout::new(&starts, 256_000, fr).unwrap();
        let chunks: Vec<Array2<f64>> = (0..6)
            .map(|_| Array2::from_shape_fn((799, 4), |_| rng.gen_range(0..2) as f64))
            .collect();
        let agg = overlap_add(&chunks, &layout).unwrap();
        let local: Vec<Array2<f64>> = chunks.iter().map(|c| c.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1))).collect();
        let local_agg = overlap_add(&local, &layout).unwrap();
        let got = speaker_count(agg.scores.view(), 20);
        let mut compared = 0;
        for (t, &v) in local_agg.scores.column(0).iter().enumerate() {
            // exact halves may round either way depending on summation order
            if ((v - v.floor()) - 0.5).abs() > 1e-9 {
                assert_eq!(got[t], v.round() as usize, "frame {t}");
                compared += 1;
            }
        }
        assert!(compared > 500);
    }

    #[test]
    fn counting() {
        let zeros = Array2::zeros((5, 4));
        assert_eq!(speaker_count(zeros.view(), 20), vec![0; 5]);
        let mut two = Array2::zeros((1, 4));
        two[[0, 0]] = 0.9;
        two[[0, 2]] = 0.9;
        assert_eq!(speaker_count(two.view(), 20), vec![2]);
        assert_eq!(speaker_count(two.view(), 1), vec![1]);
        // one speaker held by slot 0 in one chunk and slot 1 in the other
        let swapped = ndarray::array![[0.5, 0.5, 0.0, 0.0]];
        assert_eq!(speaker_count(swapped.view(), 20), vec![1]);
        let fr = count_fractions(&[0, 1, 1, 2], 2);
        assert_eq!(fr, vec![0.25, 0.5, 0.25]);
    }
}
