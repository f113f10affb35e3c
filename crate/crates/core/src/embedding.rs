//! Overlap-excluded masks and per-(chunk, local speaker) embeddings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::ChunkBatch;
use crate::error::{Error, Result};
use crate::frames::FrameRate;
use crate::plda::PldaGenerator;
use crate::powerset::{MultilabelActivity, PowersetCodec};
use crate::scoring::{chunk_truth, read_chunked_matrix, stream_seed, GroundTruthScript};

#[derive(Debug, Clone, PartialEq)]
pub struct CleanMask {
    pub mask: Vec<f64>,
    pub fallback_used: bool,
}

impl CleanMask {
    pub fn frames(&self) -> f64 {
        self.mask.iter().sum()
    }
}

/// Masks that keep a speaker's frames only where nobody else talks.
///
/// When fewer than `min_num_frames` clean frames remain for a speaker with
/// some activity, the full activity is used instead. Returned as
/// `chunks x S`.
pub fn clean_masks(seg: &[MultilabelActivity], min_num_frames: usize) -> Vec<Vec<CleanMask>> {
    seg.iter()
        .map(|chunk| {
            let overlap: Vec<bool> = chunk.rows().into_iter().map(|r| r.sum() >= 2.0).collect();
            chunk
                .columns()
                .into_iter()
                .map(|activity| {
                    let clean: Vec<f64> = activity
                        .iter()
                        .zip(&overlap)
                        .map(|(&a, &ov)| if ov { 0.0 } else { a })
                        .collect();
                    let n_clean: f64 = clean.iter().sum();
                    if n_clean < min_num_frames as f64 && activity.sum() >= 1.0 {
                        CleanMask {
                            mask: activity.to_vec(),
                            fallback_used: true,
                        }
                    } else {
                        CleanMask {
                            mask: clean,
                            fallback_used: false,
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Embeddings for every `(chunk, local speaker)` slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `chunks x S x dim`; rows of invalid slots are zero.
    pub vectors: Array3<f64>,
    pub valid: Array2<bool>,
}

impl EmbeddingSet {
    pub fn new(chunks: usize, speakers: usize, dim: usize) -> Self {
        Self {
            vectors: Array3::zeros((chunks, speakers, dim)),
            valid: Array2::from_elem((chunks, speakers), false),
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.vectors.dim()
    }

    pub fn get(&self, chunk: usize, speaker: usize) -> Option<ArrayView1<'_, f64>> {
        self.valid[[chunk, speaker]].then(|| self.vectors.slice(ndarray::s![chunk, speaker, ..]))
    }

    /// Store `v` after L2 normalization; zero or non-finite vectors leave
    /// the slot invalid.
    pub fn set(&mut self, chunk: usize, speaker: usize, v: ArrayView1<'_, f64>) -> bool {
        let norm = v.dot(&v).sqrt();
        let ok = norm.is_finite() && norm > 0.0;
        let mut row = self.vectors.slice_mut(ndarray::s![chunk, speaker, ..]);
        if ok {
            row.assign(&(&v / norm));
        } else {
            row.fill(0.0);
        }
        self.valid[[chunk, speaker]] = ok;
        ok
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Norm of every slot, `chunks x S`.
    pub fn norms(&self) -> Array2<f64> {
        let (c, s, _) = self.dim();
        Array2::from_shape_fn((c, s), |(i, j)| {
            let v = self.vectors.slice(ndarray::s![i, j, ..]);
            v.dot(&v).sqrt()
        })
    }
}

/// Everything an embedder may look at for one slot.
pub struct EmbedRequest<'a> {
    pub chunk_index: usize,
    pub local_speaker: usize,
    pub chunk_start_s: f64,
    pub waveform: ArrayView1<'a, f32>,
    pub mask: &'a CleanMask,
}

pub trait Embedder: Sync {
    fn dim(&self) -> usize;

    /// Embedding for one masked slot, `None` when it cannot be computed.
    fn embed(&self, req: &EmbedRequest<'_>) -> Result<Option<Array1<f64>>>;
}

/// Run `embedder` over every slot with a non-empty mask.
pub fn extract_embeddings(
    batch: &ChunkBatch,
    masks: &[Vec<CleanMask>],
    embedder: &dyn Embedder,
) -> Result<EmbeddingSet> {
    let speakers = masks.first().map_or(0, Vec::len);
    let mut set = EmbeddingSet::new(masks.len(), speakers, embedder.dim());
    for (c, chunk_masks) in masks.iter().enumerate() {
        for (k, mask) in chunk_masks.iter().enumerate() {
            if mask.frames() <= 0.0 {
                continue;
            }
            let req = EmbedRequest {
                chunk_index: c,
                local_speaker: k,
                chunk_start_s: batch.start_s(c),
                waveform: batch.chunk(c),
                mask,
            };
            if let Some(v) = embedder.embed(&req)? {
                if v.len() != embedder.dim() {
                    return Err(Error::Shape(format!(
                        "embedder returned {} values, declared {}",
                        v.len(),
                        embedder.dim()
                    )));
                }
                set.set(c, k, v.view());
            }
        }
    }
    Ok(set)
}

/// Stand-in embedder: each script speaker gets a latent PLDA mean and every
/// slot observes it with within-speaker noise shrinking as
/// `1/sqrt(clean frames)`.
pub struct SyntheticEmbedder {
    pub script: GroundTruthScript,
    pub codec: PowersetCodec,
    pub frame_rate: FrameRate,
    pub frames_per_chunk: usize,
    pub generator: PldaGenerator,
    speaker_index: HashMap<String, usize>,
}

impl SyntheticEmbedder {
    pub fn new(
        script: GroundTruthScript,
        codec: PowersetCodec,
        frame_rate: FrameRate,
        frames_per_chunk: usize,
        generator: PldaGenerator,
    ) -> Self {
        let speaker_index = script
            .speakers()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        Self {
            script,
            codec,
            frame_rate,
            frames_per_chunk,
            generator,
            speaker_index,
        }
    }

    /// Global label the oracle placed in `slot` of the chunk at `start_s`.
    pub fn slot_speaker(&self, start_s: f64, slot: usize) -> Option<String> {
        chunk_truth(
            &self.script,
            start_s,
            self.frames_per_chunk,
            &self.frame_rate,
            &self.codec,
        )
        .slots
        .get(slot)
        .cloned()
        .flatten()
    }
}

impl Embedder for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.generator.model.embedding_dim()
    }

    fn embed(&self, req: &EmbedRequest<'_>) -> Result<Option<Array1<f64>>> {
        let n_frames = req.mask.frames();
        let Some(label) = self.slot_speaker(req.chunk_start_s, req.local_speaker) else {
            return Ok(None);
        };
        if n_frames <= 0.0 {
            return Ok(None);
        }
        let mean = self.generator.speaker_mean(self.speaker_index[&label]);
        let unit = (req.chunk_index * self.codec.num_speakers() + req.local_speaker) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.generator.rng_seed, unit));
        Ok(Some(self.generator.observe(&mean, n_frames.sqrt().recip(), &mut rng)))
    }
}

/// Replay backend over a loaded [`EmbeddingSet`].
pub struct ImportedEmbedder {
    pub set: EmbeddingSet,
}

impl Embedder for ImportedEmbedder {
    fn dim(&self) -> usize {
        self.set.dim().2
    }

    fn embed(&self, req: &EmbedRequest<'_>) -> Result<Option<Array1<f64>>> {
        let (c, s, _) = self.set.dim();
        if req.chunk_index >= c || req.local_speaker >= s {
            return Err(Error::Shape(format!(
                "imported embeddings hold {c}x{s} slots, ({}, {}) requested",
                req.chunk_index, req.local_speaker
            )));
        }
        Ok(self
            .set
            .get(req.chunk_index, req.local_speaker)
            .map(|v| v.to_owned()))
    }
}

/// Same layout as score files: `embeddings <chunks> <S> <dim>` header and
/// one `chunk <i>` block of `S` rows each. Invalid slots are written as NaN.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let (chunks, speakers, dim) = set.dim();
    let mut out = String::new();
    writeln!(out, "# diarize embeddings v1").unwrap();
    writeln!(out, "embeddings {chunks} {speakers} {dim}").unwrap();
    for c in 0..chunks {
        writeln!(out, "chunk {c}").unwrap();
        for s in 0..speakers {
            let row: Vec<String> = match set.get(c, s) {
                Some(v) => v.iter().map(|x| x.to_string()).collect(),
                None => vec!["NaN".to_string(); dim],
            };
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn import_embeddings(path: &Path, chunks: usize, speakers: usize, dim: usize) -> Result<EmbeddingSet> {
    let matrices = read_chunked_matrix(path, "embeddings", chunks, speakers, dim)?;
    let mut set = EmbeddingSet::new(chunks, speakers, dim);
    let mut renormalized = 0;
    for (c, m) in matrices.iter().enumerate() {
        for (s, row) in m.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if set.set(c, s, row) && (norm - 1.0).abs() > 1e-3 {
                renormalized += 1;
            }
        }
    }
    if renormalized > 0 {
        log::warn!("{}: normalized {renormalized} embeddings to unit length", path.display());
    }
    Ok(set)
}
