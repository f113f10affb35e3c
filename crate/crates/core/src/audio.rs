//! Mono waveform loading and fixed-length overlapping windowing.

use std::path::Path;

use ndarray::{s, Array2, ArrayView1};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub recording_id: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, recording_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate_hz,
            recording_id: recording_id.into(),
        }
    }

    /// All-zero buffer of the given duration.
    pub fn silence(duration_s: f64, sample_rate_hz: u32, recording_id: impl Into<String>) -> Self {
        let n = (duration_s * sample_rate_hz as f64).round().max(1.0) as usize;
        Self::new(vec![0.0; n], sample_rate_hz, recording_id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Read a RIFF/WAVE file holding 16-bit integer or 32-bit float PCM.
/// Multi-channel input is averaged down to mono.
pub fn load_wav(path: &Path) -> Result<AudioBuffer> {
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => wav_err(format!("malformed RIFF/WAVE header: {msg}")),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err("header declares zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>(),
        (fmt, bits) => {
            return Err(wav_err(format!(
                "unsupported codec: {bits}-bit {fmt:?} (expected 16-bit PCM or 32-bit float)"
            )))
        }
    }
    .map_err(|e| wav_err(format!("corrupt sample data: {e}")))?;

    if interleaved.len() < channels {
        return Err(wav_err("no audio samples in data chunk".into()));
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let recording_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioBuffer::new(samples, spec.sample_rate, recording_id))
}

/// Overlapping windows cut from an [`AudioBuffer`].
#[derive(Debug, Clone)]
pub struct ChunkBatch {
    /// One row per chunk, `window_samples` columns.
    pub chunks: Array2<f32>,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub chunk_starts: Vec<usize>,
    /// Samples of real audio in the final chunk; the rest is zero padding.
    pub real_samples_in_last: usize,
    pub total_samples: usize,
    pub sample_rate_hz: u32,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.chunk_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_starts.is_empty()
    }

    pub fn chunk(&self, idx: usize) -> ArrayView1<'_, f32> {
        self.chunks.row(idx)
    }

    /// Start time of chunk `idx` in seconds.
    pub fn start_s(&self, idx: usize) -> f64 {
        self.chunk_starts[idx] as f64 / self.sample_rate_hz as f64
    }

    pub fn window_s(&self) -> f64 {
        self.window_samples as f64 / self.sample_rate_hz as f64
    }

    /// Number of chunks that hold no padding.
    pub fn complete_chunks(&self) -> usize {
        if self.real_samples_in_last < self.window_samples {
            self.len() - 1
        } else {
            self.len()
        }
    }
}

/// Chunk geometry without materializing samples: start offsets and the
/// real-sample count of the last chunk.
pub fn window_starts(total: usize, window: usize, hop: usize) -> (Vec<usize>, usize) {
    let mut starts: Vec<usize> = if total >= window {
        (0..=(total - window) / hop).map(|i| i * hop).collect()
    } else {
        Vec::new()
    };
    let covered = starts.last().map_or(0, |&s| s + window);
    if covered < total {
        // one zero-padded chunk reaches past the end
        starts.push(starts.len() * hop);
    }
    let last = *starts.last().expect("total >= 1 yields a chunk");
    (starts, (total - last).min(window))
}

pub fn sliding_window(buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<ChunkBatch> {
    if buf.is_empty() {
        return Err(Error::Empty("audio buffer has no samples".into()));
    }
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    if window == 0 || hop == 0 {
        return Err(Error::Config("window and hop must be positive".into()));
    }
    let total = buf.len();
    let (starts, real_in_last) = window_starts(total, window, hop);

    let mut chunks = Array2::<f32>::zeros((starts.len(), window));
    for (row, &start) in starts.iter().enumerate() {
        let end = (start + window).min(total);
        chunks
            .slice_mut(s![row, ..end - start])
            .assign(&ArrayView1::from(&buf.samples[start..end]));
    }
    Ok(ChunkBatch {
        chunks,
        window_samples: window,
        hop_samples: hop,
        chunk_starts: starts,
        real_samples_in_last: real_in_last,
        total_samples: total,
        sample_rate_hz: buf.sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(window: usize, hop: usize) -> PipelineConfig {
        PipelineConfig {
            sample_rate_hz: 1000,
            seg_duration_s: window as f64 / 1000.0,
            segmentation_step: hop as f64 / window as f64,
            ..Default::default()
        }
    }

    /// Every start `k*hop` whose window fits, plus one padded chunk if the
    /// tail is not yet covered.
    fn brute_starts(total: usize, window: usize, hop: usize) -> Vec<usize> {
        let mut v = Vec::new();
        let mut k = 0;
        while k * hop + window <= total {
            v.push(k * hop);
            k += 1;
        }
        if (0..total).any(|s| !v.iter().any(|&c| c <= s && s < c + window)) {
            v.push(k * hop);
        }
        v
    }

    #[test]
    fn thirty_seconds_gives_ten_chunks() {
        let buf = AudioBuffer::new(vec![0.25; 480_000], 16_000, "x");
        let batch = sliding_window(&buf, &PipelineConfig::default()).unwrap();
        assert_eq!(batch.len(), 10);
        assert_eq!(batch.chunks.dim(), (10, 256_000));
        assert_eq!(batch.complete_chunks(), 9);
        assert_eq!(batch.real_samples_in_last, 249_600);
        assert_eq!(batch.chunk_starts[9], 230_400);
        let last = batch.chunk(9);
        assert!(last.iter().take(249_600).all(|&v| v == 0.25));
        assert!(last.iter().skip(249_600).all(|&v| v == 0.0));
    }

    #[test]
    fn exact_fit_has_no_padding() {
        let buf = AudioBuffer::new(vec![1.0; 1000], 1000, "x");
        let batch = sliding_window(&buf, &cfg(1000, 100)).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch.real_samples_in_last, 1000);

        let batch = sliding_window(&buf, &cfg(400, 200)).unwrap();
        assert_eq!(batch.chunk_starts, brute_starts(1000, 400, 200));
        assert_eq!(batch.chunk_starts, vec![0, 200, 400, 600]);
        assert_eq!(batch.complete_chunks(), 4);
    }

    #[test]
    fn short_input_single_padded_chunk() {
        let buf = AudioBuffer::new(vec![0.5; 300], 1000, "x");
        let batch = sliding_window(&buf, &cfg(400, 200)).unwrap();
        assert_eq!(batch.chunk_starts, vec![0]);
        assert_eq!(batch.real_samples_in_last, 300);
        assert_eq!(batch.chunk(0)[299], 0.5);
        assert_eq!(batch.chunk(0)[300], 0.0);
    }

    #[test]
    fn empty_input_rejected() {
        let buf = AudioBuffer::new(vec![], 1000, "x");
        assert!(matches!(sliding_window(&buf, &cfg(400, 200)), Err(Error::Empty(_))));
    }

    #[test]
    fn starts_match_enumeration() {
        for total in 1..700 {
            for (w, h) in [(400, 200), (400, 40), (400, 400), (400, 130)] {
                let (starts, _) = window_starts(total, w, h);
                assert_eq!(starts, brute_starts(total, w, h), "T={total} W={w} H={h}");
            }
        }
    }

    #[test]
    fn overlapping_chunks_agree() {
        let samples: Vec<f32> = (0..2345).map(|i| (i as f32 * 0.37).sin()).collect();
        let buf = AudioBuffer::new(samples.clone(), 1000, "x");
        let batch = sliding_window(&buf, &cfg(400, 130)).unwrap();
        for (c, &start) in batch.chunk_starts.iter().enumerate() {
            for (j, &v) in batch.chunk(c).iter().enumerate() {
                let expected = samples.get(start + j).copied().unwrap_or(0.0);
                assert_eq!(v, expected);
            }
        }
    }
}
