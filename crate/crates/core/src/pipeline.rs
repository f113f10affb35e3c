//! End-to-end run over the seven blocks, keeping every intermediate.
//!
//! | block | stage |
//! |---|---|
//! | 1 | sliding window |
//! | 3 | frame scores and powerset decoding |
//! | 4 | overlap-add, median filter, speaker count |
//! | 5 | clean masks and embeddings |
//! | 6 | clustering |
//! | 7 | reconstruction and binarization |
//!
//! Block 2 (the feature encoder) lives inside the scorer backend.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;

use crate::aggregate::{median_filter_time, overlap_add, speaker_count, AggregatedActivity, FrameLayout};
use crate::annotation::Annotation;
use crate::audio::{sliding_window, AudioBuffer, ChunkBatch};
use crate::cluster::{assign, Clustering};
use crate::config::PipelineConfig;
use crate::embedding::{
    clean_masks, extract_embeddings, import_embeddings, write_embeddings, CleanMask, Embedder, EmbeddingSet,
    ImportedEmbedder, SyntheticEmbedder,
};
use crate::error::{Error, Result};
use crate::plda::{read_plda, PldaGenerator, PldaModel};
use crate::powerset::{FrameScores, MultilabelActivity, PowersetCodec};
use crate::reconstruct::{reconstruct, to_diarization, ClusteredSegmentation};
use crate::rttm;
use crate::scoring::{
    import_scores, write_scores, FrameScorer, GroundTruthScript, ImportedScorer, OracleScorer, OracleScorerConfig,
};

/// Settings of the oracle backends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub p_correct: f64,
    pub label_noise: f64,
    /// Between- to within-speaker variance ratio of the synthetic PLDA model.
    pub separation: f64,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            p_correct: 0.95,
            label_noise: 0.0,
            separation: 100.0,
            seed: 0,
        }
    }
}

pub enum Input {
    /// Audio with frame scores and embeddings replayed from files. Without
    /// a PLDA file a synthetic model seeded from the options is used.
    Imported {
        audio: AudioBuffer,
        scores: PathBuf,
        embeddings: PathBuf,
        plda: Option<PathBuf>,
    },
    /// Audio with the oracle backends driven by a script.
    Oracle { audio: AudioBuffer, script: GroundTruthScript },
    /// Script alone; a silent buffer of the script duration is windowed.
    Script(GroundTruthScript),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub block: usize,
    pub name: &'static str,
    pub seconds: f64,
}

/// Everything a run produced, block by block.
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub recording_id: String,
    pub batch: ChunkBatch,
    pub layout: FrameLayout,
    pub scores: Vec<FrameScores>,
    pub segmentation: Vec<MultilabelActivity>,
    /// Overlap-added local activity before smoothing.
    pub aggregated: AggregatedActivity,
    /// Median-filtered aggregated activity.
    pub smoothed: Array2<f64>,
    pub count: Vec<usize>,
    pub masks: Vec<Vec<CleanMask>>,
    pub embeddings: EmbeddingSet,
    pub clustering: Clustering,
    pub clustered: ClusteredSegmentation,
    pub global_activity: AggregatedActivity,
    pub annotation: Annotation,
    pub timings: Vec<StageTiming>,
}

fn timed<T>(timings: &mut Vec<StageTiming>, block: usize, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.in_block(block))?;
    let seconds = t0.elapsed().as_secs_f64();
    log::debug!("block {block} {name}: {seconds:.3}s");
    timings.push(StageTiming { block, name, seconds });
    Ok(out)
}

pub fn run(input: &Input, cfg: &PipelineConfig, opts: &OracleOptions) -> Result<PipelineRun> {
    cfg.validate()?;
    let silent;
    let (audio, script) = match input {
        Input::Imported { audio, .. } => (audio, None),
        Input::Oracle { audio, script } => (audio, Some(script)),
        Input::Script(script) => {
            silent = AudioBuffer::silence(script.duration_s, cfg.sample_rate_hz, script.recording_id.clone());
            (&silent, Some(script))
        }
    };
    if audio.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::Config(format!(
            "audio is sampled at {} Hz, configuration expects {}; resample the input",
            audio.sample_rate_hz, cfg.sample_rate_hz
        ))
        .in_block(1));
    }
    let fr = cfg.frame_rate();
    let codec = PowersetCodec::new(cfg.max_local_speakers, cfg.max_overlap).map_err(|e| e.in_block(3))?;
    let mut timings = Vec::new();

    let batch = timed(&mut timings, 1, "sliding window", || sliding_window(audio, cfg))?;
    let layout = FrameLayout::new(&batch.chunk_starts, batch.window_samples, fr).map_err(|e| e.in_block(4))?;
    let frames = layout.frames_per_chunk;

    let (scorer, embedder, model): (Box<dyn FrameScorer>, Box<dyn Embedder>, PldaModel) = match (input, script) {
        (Input::Imported { scores, embeddings, plda, .. }, _) => {
            let chunks = import_scores(scores, batch.len(), frames, codec.num_classes()).map_err(|e| e.in_block(3))?;
            let model = match plda {
                Some(p) => read_plda(p).map_err(|e| e.in_block(6))?,
                None => {
                    PldaGenerator::synthetic(cfg.embedding_dim, cfg.lda_dim, opts.separation, opts.seed)
                        .map_err(|e| e.in_block(6))?
                        .model
                }
            };
            let set = import_embeddings(embeddings, batch.len(), codec.num_speakers(), model.embedding_dim())
                .map_err(|e| e.in_block(5))?;
            (Box::new(ImportedScorer { chunks }), Box::new(ImportedEmbedder { set }), model)
        }
        (_, Some(script)) => {
            let oracle_cfg = OracleScorerConfig {
                p_correct: opts.p_correct,
                label_noise: opts.label_noise,
                rng_seed: opts.seed,
            };
            let scorer = OracleScorer::new(script.clone(), codec.clone(), oracle_cfg, fr).map_err(|e| e.in_block(3))?;
            let generator = PldaGenerator::synthetic(cfg.embedding_dim, cfg.lda_dim, opts.separation, opts.seed)
                .map_err(|e| e.in_block(5))?;
            let model = generator.model.clone();
            let embedder = SyntheticEmbedder::new(script.clone(), codec.clone(), fr, frames, generator);
            (Box::new(scorer), Box::new(embedder), model)
        }
        (_, None) => unreachable!("non-imported inputs carry a script"),
    };

    let (scores, segmentation) = timed(&mut timings, 3, "segmentation", || {
        let mut scores = Vec::with_capacity(batch.len());
        let mut seg = Vec::with_capacity(batch.len());
        for c in 0..batch.len() {
            let s = scorer.score(c, batch.chunk(c), batch.start_s(c))?;
            if s.dim() != (frames, codec.num_classes()) {
                return Err(Error::Shape(format!(
                    "scorer returned {:?} for chunk {c}, expected ({frames}, {})",
                    s.dim(),
                    codec.num_classes()
                )));
            }
            seg.push(codec.to_multilabel(s.view())?);
            scores.push(s);
        }
        Ok((scores, seg))
    })?;

    let (aggregated, smoothed, count) = timed(&mut timings, 4, "aggregation", || {
        let agg = overlap_add(&segmentation, &layout)?;
        let smoothed = median_filter_time(agg.scores.view(), cfg.median_kernel_frames)?;
        let count = speaker_count(smoothed.view(), cfg.max_speakers);
        Ok((agg, smoothed, count))
    })?;

    let (masks, embeddings) = timed(&mut timings, 5, "embeddings", || {
        let masks = clean_masks(&segmentation, cfg.min_num_frames);
        let set = extract_embeddings(&batch, &masks, embedder.as_ref())?;
        Ok((masks, set))
    })?;

    let clustering = timed(&mut timings, 6, "clustering", || assign(&embeddings, &segmentation, &model, cfg))?;

    let recording_id = audio.recording_id.clone();
    let (clustered, global_activity, annotation) = timed(&mut timings, 7, "reconstruction", || {
        let cs = reconstruct(&segmentation, &clustering.assignment)?;
        let (ann, act) = to_diarization(&cs, &layout, cfg.binarize_onset, cfg.binarize_offset, &recording_id)?;
        Ok((cs, act, ann))
    })?;

    Ok(PipelineRun {
        config: cfg.clone(),
        recording_id,
        batch,
        layout,
        scores,
        segmentation,
        aggregated,
        smoothed,
        count,
        masks,
        embeddings,
        clustering,
        clustered,
        global_activity,
        annotation,
        timings,
    })
}

/// Files written by [`PipelineRun::dump`] for each block.
pub fn dump_files(block: usize) -> &'static [&'static str] {
    match block {
        1 => &["chunks.csv"],
        3 => &["scores.txt"],
        4 => &["coverage.csv", "activity.csv", "count.csv"],
        5 => &["embeddings.csv", "embeddings.txt"],
        6 => &["assignment.csv"],
        7 => &["diarization.rttm"],
        _ => &[],
    }
}

fn frame_csv(layout: &FrameLayout, header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = format!("frame,time_s,{header}\n");
    for (i, row) in rows.enumerate() {
        writeln!(out, "{i},{:.3},{row}", layout.frame_time(i)).unwrap();
    }
    out
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineRun {
    pub fn num_speakers(&self) -> usize {
        self.annotation.labels().len()
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }

    /// Output shape of every block.
    pub fn shapes(&self) -> Vec<(usize, &'static str, Vec<usize>)> {
        let (c, s, d) = self.embeddings.dim();
        let first = |v: &[Array2<f64>]| v.first().map_or((0, 0), |a| a.dim());
        vec![
            (1, "chunks", vec![self.batch.len(), 1, self.batch.window_samples]),
            (3, "frame scores", vec![self.scores.len(), first(&self.scores).0, first(&self.scores).1]),
            (3, "local activity", vec![self.segmentation.len(), first(&self.segmentation).0, first(&self.segmentation).1]),
            (4, "speaker count", vec![self.count.len(), 1]),
            (5, "embeddings", vec![c, s, d]),
            (6, "assignment", vec![self.clustering.assignment.labels.nrows(), self.clustering.assignment.labels.ncols()]),
            (7, "segments", vec![self.annotation.len()]),
        ]
    }

    pub fn chunks_csv(&self) -> String {
        let mut out = String::from("chunk,start_sample,start_s,real_samples\n");
        for (i, &start) in self.batch.chunk_starts.iter().enumerate() {
            let real = if i + 1 == self.batch.len() {
                self.batch.real_samples_in_last
            } else {
                self.batch.window_samples
            };
            writeln!(out, "{i},{start},{:.3},{real}", self.batch.start_s(i)).unwrap();
        }
        out
    }

    pub fn coverage_csv(&self) -> String {
        frame_csv(&self.layout, "coverage", self.aggregated.coverage.iter().map(|c| c.to_string()))
    }

    pub fn activity_csv(&self) -> String {
        let header = join((0..self.smoothed.ncols()).map(|k| format!("speaker_{k}")));
        frame_csv(
            &self.layout,
            &header,
            self.smoothed.rows().into_iter().map(|r| join(r.iter().map(|v| format!("{v:.4}")))),
        )
    }

    pub fn count_csv(&self) -> String {
        frame_csv(&self.layout, "count", self.count.iter().map(|c| c.to_string()))
    }

    pub fn embeddings_csv(&self) -> String {
        let mut out = String::from("chunk,speaker,valid,norm\n");
        let norms = self.embeddings.norms();
        for ((c, k), &valid) in self.embeddings.valid.indexed_iter() {
            writeln!(out, "{c},{k},{},{:.6}", valid as u8, norms[[c, k]]).unwrap();
        }
        out
    }

    /// `chunks x S` global ids, with -2 for inactive slots.
    pub fn assignment_csv(&self) -> String {
        let m = self.clustering.assignment.to_matrix();
        let mut out = join((0..m.ncols()).map(|k| format!("speaker_{k}")));
        out.push('\n');
        for row in m.rows() {
            out.push_str(&join(row.iter()));
            out.push('\n');
        }
        out
    }

    pub fn write_rttm(&self, path: &Path) -> Result<()> {
        rttm::write_rttm(&self.annotation, path)
    }

    /// Write every intermediate into `dir`, creating it if needed.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text_files = [
            ("chunks.csv", self.chunks_csv()),
            ("coverage.csv", self.coverage_csv()),
            ("activity.csv", self.activity_csv()),
            ("count.csv", self.count_csv()),
            ("embeddings.csv", self.embeddings_csv()),
            ("assignment.csv", self.assignment_csv()),
            ("timings.csv", {
                let mut t = String::from("block,stage,seconds\n");
                for s in &self.timings {
                    writeln!(t, "{},{},{:.6}", s.block, s.name, s.seconds).unwrap();
                }
                t
            }),
        ];
        for (name, text) in text_files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        write_scores(&dir.join("scores.txt"), &self.scores)?;
        write_embeddings(&dir.join("embeddings.txt"), &self.embeddings)?;
        self.write_rttm(&dir.join("diarization.rttm"))
    }
}
