//! Frame-scorer backends standing in for the segmentation network.
//!
//! A scorer maps one chunk of audio to `frames x K` powerset
//! log-probabilities. Two backends exist: an oracle that reads a ground
//! truth script, and a replay of scores stored on disk.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::frames::{FrameRate, TimeSpan};
use crate::powerset::{FrameScores, MultilabelActivity, PowersetCodec};

pub trait FrameScorer: Sync {
    /// Score chunk `chunk_index`, which starts at `chunk_start_s` seconds.
    fn score(
        &self,
        chunk_index: usize,
        waveform: ArrayView1<'_, f32>,
        chunk_start_s: f64,
    ) -> Result<FrameScores>;
}

/// Reference speaker turns used to drive the oracle backends.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScript {
    pub recording_id: String,
    pub turns: Vec<(TimeSpan, String)>,
    pub duration_s: f64,
}

impl GroundTruthScript {
    /// Build a script, rejecting overlapping turns of the same speaker.
    pub fn new(
        recording_id: impl Into<String>,
        mut turns: Vec<(TimeSpan, String)>,
        duration_s: f64,
    ) -> Result<Self> {
        turns.sort_by(|a, b| {
            (a.0.start(), &a.1)
                .partial_cmp(&(b.0.start(), &b.1))
                .unwrap()
        });
        let mut last_end: HashMap<&str, f64> = HashMap::new();
        for (span, label) in &turns {
            if let Some(&end) = last_end.get(label.as_str()) {
                if span.start() < end {
                    return Err(Error::Format(format!(
                        "speaker {label} has overlapping turns near {:.3}s",
                        span.start()
                    )));
                }
            }
            last_end.insert(label, span.end());
        }
        let duration_s = turns.iter().map(|t| t.0.end()).fold(duration_s, f64::max);
        Ok(Self {
            recording_id: recording_id.into(),
            turns,
            duration_s,
        })
    }

    pub fn from_annotation(ann: &Annotation, duration_s: f64) -> Result<Self> {
        Self::new(
            ann.recording_id.clone(),
            ann.segments()
                .iter()
                .map(|s| (s.span, s.label.clone()))
                .collect(),
            duration_s,
        )
    }

    pub fn to_annotation(&self) -> Annotation {
        let mut ann = Annotation::new(self.recording_id.clone());
        for (span, label) in &self.turns {
            ann.push(*span, label.clone());
        }
        ann
    }

    /// Speaker labels in order of first turn.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, label) in &self.turns {
            if !out.contains(label) {
                out.push(label.clone());
            }
        }
        out
    }

    /// Labels active at time `t`, in first-turn order of the script.
    pub fn active_at(&self, t: f64) -> Vec<&str> {
        self.turns
            .iter()
            .filter(|(span, _)| span.contains(t))
            .map(|(_, l)| l.as_str())
            .collect()
    }
}

/// What the oracle sees inside one chunk.
#[derive(Debug, Clone)]
pub struct ChunkTruth {
    /// Global label held by each local slot, `None` when the slot is empty.
    pub slots: Vec<Option<String>>,
    /// `frames x S` activity after truncation to the overlap limit.
    pub activity: MultilabelActivity,
    /// Powerset class per frame.
    pub classes: Vec<usize>,
}

/// Rasterize the script over one chunk and assign local slots.
///
/// Speakers take slots in order of first activity within the chunk. When
/// more than `S` speakers talk, the `S` with most active frames are kept;
/// when more than `O` talk at one frame, the `O` longest-active are kept.
pub fn chunk_truth(
    script: &GroundTruthScript,
    chunk_start_s: f64,
    frames: usize,
    fr: &FrameRate,
    codec: &PowersetCodec,
) -> ChunkTruth {
    let s_max = codec.num_speakers();
    let raster: Vec<Vec<&str>> = (0..frames)
        .map(|f| script.active_at(chunk_start_s + fr.frame_to_time(f)))
        .collect();

    // (label, first frame, active frame count)
    let mut stats: Vec<(&str, usize, usize)> = Vec::new();
    for (f, active) in raster.iter().enumerate() {
        for &label in active {
            match stats.iter_mut().find(|s| s.0 == label) {
                Some(s) => s.2 += 1,
                None => stats.push((label, f, 1)),
            }
        }
    }
    if stats.len() > s_max {
        stats.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)));
        stats.truncate(s_max);
    }
    stats.sort_by_key(|s| s.1);

    let mut slots: Vec<Option<String>> = stats.iter().map(|s| Some(s.0.to_string())).collect();
    slots.resize(s_max, None);

    let mut activity = Array2::zeros((frames, s_max));
    let mut classes = Vec::with_capacity(frames);
    for (f, active) in raster.iter().enumerate() {
        let mut local: Vec<usize> = active
            .iter()
            .filter_map(|l| stats.iter().position(|s| s.0 == *l))
            .collect();
        if local.len() > codec.max_overlap() {
            local.sort_by(|&a, &b| stats[b].2.cmp(&stats[a].2).then(a.cmp(&b)));
            local.truncate(codec.max_overlap());
        }
        for &s in &local {
            activity[[f, s]] = 1.0;
        }
        classes.push(codec.encode(&local).expect("truncated to overlap limit"));
    }
    ChunkTruth {
        slots,
        activity,
        classes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScorerConfig {
    pub p_correct: f64,
    pub label_noise: f64,
    pub rng_seed: u64,
}

impl Default for OracleScorerConfig {
    fn default() -> Self {
        Self {
            p_correct: 0.95,
            label_noise: 0.0,
            rng_seed: 0,
        }
    }
}

impl OracleScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_correct > 0.0 && self.p_correct <= 1.0) {
            return Err(Error::Config("p_correct must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Seed for a per-chunk random stream, so chunks can be scored in any order.
pub(crate) fn stream_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Peaked log-softmax scores for the oracle's true classes.
pub fn oracle_score(
    truth: &ChunkTruth,
    codec: &PowersetCodec,
    cfg: &OracleScorerConfig,
    chunk_index: usize,
) -> FrameScores {
    let k = codec.num_classes();
    let off = ((1.0 - cfg.p_correct) / (k - 1) as f64).max(1e-12);
    let on = 1.0 - off * (k - 1) as f64;
    let (log_on, log_off) = (on.ln(), off.ln());

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, chunk_index as u64));
    let mut scores = Array2::from_elem((truth.classes.len(), k), log_off);
    for (f, &class) in truth.classes.iter().enumerate() {
        let mut peak = class;
        if cfg.label_noise > 0.0 && rng.gen::<f64>() < cfg.label_noise {
            peak = rng.gen_range(0..k);
        }
        scores[[f, peak]] = log_on;
    }
    scores
}

/// Oracle backend: scores each chunk from a [`GroundTruthScript`].
pub struct OracleScorer {
    pub script: GroundTruthScript,
    pub codec: PowersetCodec,
    pub cfg: OracleScorerConfig,
    pub frame_rate: FrameRate,
}

impl OracleScorer {
    pub fn new(
        script: GroundTruthScript,
        codec: PowersetCodec,
        cfg: OracleScorerConfig,
        frame_rate: FrameRate,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            script,
            codec,
            cfg,
            frame_rate,
        })
    }

    pub fn truth(&self, chunk_start_s: f64, frames: usize) -> ChunkTruth {
        chunk_truth(&self.script, chunk_start_s, frames, &self.frame_rate, &self.codec)
    }
}

impl FrameScorer for OracleScorer {
    fn score(
        &self,
        chunk_index: usize,
        waveform: ArrayView1<'_, f32>,
        chunk_start_s: f64,
    ) -> Result<FrameScores> {
        let frames = self.frame_rate.frames_for_samples(waveform.len())?;
        let truth = self.truth(chunk_start_s, frames);
        Ok(oracle_score(&truth, &self.codec, &self.cfg, chunk_index))
    }
}

/// Replay backend over scores loaded with [`import_scores`].
pub struct ImportedScorer {
    pub chunks: Vec<FrameScores>,
}

impl FrameScorer for ImportedScorer {
    fn score(&self, chunk_index: usize, _: ArrayView1<'_, f32>, _: f64) -> Result<FrameScores> {
        self.chunks.get(chunk_index).cloned().ok_or_else(|| {
            Error::Shape(format!(
                "imported scores hold {} chunks, chunk {chunk_index} requested",
                self.chunks.len()
            ))
        })
    }
}

pub(crate) fn logsumexp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

const SCORES_MAGIC: &str = "# diarize scores v1";

/// Write scores as text: a `scores <chunks> <frames> <classes>` header,
/// then for each chunk a `chunk <i>` line followed by one line per frame.
pub fn write_scores(path: &Path, chunks: &[FrameScores]) -> Result<()> {
    let (frames, k) = chunks.first().map_or((0, 0), |c| c.dim());
    let mut out = String::new();
    writeln!(out, "{SCORES_MAGIC}").unwrap();
    writeln!(out, "scores {} {frames} {k}", chunks.len()).unwrap();
    for (c, chunk) in chunks.iter().enumerate() {
        if chunk.dim() != (frames, k) {
            return Err(Error::Shape(format!("chunk {c} has shape {:?}", chunk.dim())));
        }
        writeln!(out, "chunk {c}").unwrap();
        for row in chunk.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Shared reader for the chunked text matrices used by score and embedding
/// files: returns one `rows x cols` matrix per chunk, non-finite values kept.
pub(crate) fn read_chunked_matrix(
    path: &Path,
    tag: &str,
    chunks: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<Array2<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (no, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dims: Vec<usize> = fields
        .get(1..)
        .unwrap_or(&[])
        .iter()
        .filter_map(|v| v.parse().ok())
        .collect();
    if fields.first() != Some(&tag) || dims.len() != 3 || fields.len() != 4 {
        return Err(Error::parse(
            path,
            no,
            format!("expected header `{tag} <chunks> <rows> <cols>`"),
        ));
    }
    if dims != [chunks, rows, cols] {
        return Err(Error::Shape(format!(
            "{}: file holds {}x{}x{}, expected {chunks}x{rows}x{cols}",
            path.display(),
            dims[0],
            dims[1],
            dims[2]
        )));
    }

    let mut out = Vec::with_capacity(chunks);
    for c in 0..chunks {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("missing chunk {c}")))?;
        if line != format!("chunk {c}") {
            return Err(Error::parse(path, no, format!("expected `chunk {c}`")));
        }
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (no, line) = lines.next().ok_or_else(|| {
                Error::parse(path, 0, format!("chunk {c}: missing row {r}"))
            })?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::parse(path, no, format!("chunk {c} row {r}: {e}")))?;
            if values.len() != cols {
                return Err(Error::parse(
                    path,
                    no,
                    format!("chunk {c} row {r}: {} values, expected {cols}", values.len()),
                ));
            }
            m.row_mut(r).assign(&ArrayView1::from(&values));
        }
        out.push(m);
    }
    if let Some((no, _)) = lines.next() {
        return Err(Error::parse(path, no, "trailing data after last chunk"));
    }
    Ok(out)
}

/// Load scores written by [`write_scores`] (or an external model), checking
/// the shape and renormalizing rows that are not valid log-softmax.
pub fn import_scores(
    path: &Path,
    expected_chunks: usize,
    expected_frames: usize,
    num_classes: usize,
) -> Result<Vec<FrameScores>> {
    let mut chunks = read_chunked_matrix(path, "scores", expected_chunks, expected_frames, num_classes)?;
    let mut renormalized = 0usize;
    for (c, chunk) in chunks.iter_mut().enumerate() {
        for (f, mut row) in chunk.rows_mut().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "{}: non-finite value {v} at chunk {c}, frame {f}",
                    path.display()
                )));
            }
            let lse = logsumexp(row.iter().copied());
            if lse.abs() > 1e-3 {
                row.mapv_inplace(|v| v - lse);
                renormalized += 1;
            }
        }
    }
    if renormalized > 0 {
        log::warn!(
            "{}: renormalized {renormalized} rows that were not log-softmax",
            path.display()
        );
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(a: f64, b: f64) -> TimeSpan {
        TimeSpan::new(a, b).unwrap()
    }

    fn script(turns: &[(f64, f64, &str)], duration: f64) -> GroundTruthScript {
        GroundTruthScript::new(
            "t",
            turns.iter().map(|&(a, b, l)| (span(a, b), l.to_string())).collect(),
            duration,
        )
        .unwrap()
    }

    fn argmaxes(scores: &FrameScores) -> Vec<usize> {
        scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (i, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    fn oracle(s: GroundTruthScript, p: f64) -> OracleScorer {
        OracleScorer::new(
            s,
            PowersetCodec::new(4, 2).unwrap(),
            OracleScorerConfig {
                p_correct: p,
                ..Default::default()
            },
            FrameRate::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_speaker_chunk() {
        let sc = oracle(script(&[(0.0, 20.0, "A")], 20.0), 1.0);
        let wave = ndarray::Array1::zeros(256_000);
        let scores = sc.score(0, wave.view(), 0.0).unwrap();
        assert_eq!(scores.dim(), (799, 11));
        assert!(argmaxes(&scores).iter().all(|&c| c == 1));
        for row in scores.rows() {
            assert!(logsumexp(row.iter().copied()).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_script_is_silence() {
        let sc = oracle(script(&[], 16.0), 0.95);
        let scores = sc.score(0, ndarray::Array1::zeros(256_000).view(), 0.0).unwrap();
        assert!(argmaxes(&scores).iter().all(|&c| c == 0));
    }

    #[test]
    fn overlap_takes_pair_class() {
        // A starts first inside the chunk, so A -> slot 0, B -> slot 1
        let s = script(&[(0.0, 16.0, "B"), (0.0, 16.0, "A")], 16.0);
        let sc = oracle(s.clone(), 0.95);
        let scores = sc.score(0, ndarray::Array1::zeros(256_000).view(), 0.0).unwrap();
        assert!(argmaxes(&scores).iter().all(|&c| c == 5));
        let s = script(&[(0.5, 16.0, "B"), (1.0, 16.0, "A")], 16.0);
        let truth = oracle(s, 0.95).truth(0.0, 799);
        assert_eq!(truth.slots[0].as_deref(), Some("B"));
        assert_eq!(truth.slots[1].as_deref(), Some("A"));
        assert_eq!(truth.slots[2], None);
    }

    #[test]
    fn truncation_to_overlap_limit() {
        let s = script(&[(0.0, 16.0, "A"), (0.0, 8.0, "B"), (1.0, 4.0, "C")], 16.0);
        let truth = oracle(s, 0.95).truth(0.0, 799);
        assert_eq!(truth.slots.iter().flatten().count(), 3);
        // C is shortest, so it is dropped while three overlap
        for row in truth.activity.rows() {
            assert!(row.sum() <= 2.0);
        }
        let c_slot = truth.slots.iter().position(|s| s.as_deref() == Some("C")).unwrap();
        assert_eq!(truth.activity.column(c_slot).sum(), 0.0);
    }

    #[test]
    fn too_many_speakers_keeps_longest() {
        let s = script(
            &[
                (0.0, 1.0, "A"),
                (1.0, 5.0, "B"),
                (5.0, 8.0, "C"),
                (8.0, 12.0, "D"),
                (12.0, 16.0, "E"),
            ],
            16.0,
        );
        let truth = oracle(s, 0.95).truth(0.0, 799);
        let kept: Vec<_> = truth.slots.iter().flatten().cloned().collect();
        assert_eq!(kept, vec!["B", "C", "D", "E"]);
    }

    #[test]
    fn oracle_is_deterministic_and_noisy() {
        let s = script(&[(0.0, 9.0, "A"), (7.0, 16.0, "B")], 16.0);
        let mut sc = oracle(s, 0.95);
        sc.cfg.label_noise = 0.3;
        sc.cfg.rng_seed = 11;
        let w = ndarray::Array1::zeros(256_000);
        let a = sc.score(3, w.view(), 0.0).unwrap();
        let b = sc.score(3, w.view(), 0.0).unwrap();
        assert_eq!(a, b);
        let clean = oracle(sc.script.clone(), 0.95).score(3, w.view(), 0.0).unwrap();
        let flips = argmaxes(&a)
            .iter()
            .zip(argmaxes(&clean))
            .filter(|(x, y)| **x != *y)
            .count();
        assert!(flips > 100 && flips < 300, "{flips}");
    }

    #[test]
    fn overlapping_same_speaker_rejected() {
        let turns = vec![(span(0.0, 2.0), "A".to_string()), (span(1.0, 3.0), "A".to_string())];
        assert!(GroundTruthScript::new("x", turns, 3.0).is_err());
    }

    #[test]
    fn import_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let mut chunks = vec![Array2::from_elem((3, 11), (1.0f64 / 11.0).ln()); 2];
        chunks[1][[2, 4]] = -0.5;
        chunks[1][[2, 0]] = -2.0;
        write_scores(&path, &chunks).unwrap();
        let back = import_scores(&path, 2, 3, 11).unwrap();
        assert_eq!(back.len(), 2);
        for row in back[1].rows() {
            assert!(logsumexp(row.iter().copied()).abs() < 1e-5);
        }
        assert!(matches!(import_scores(&path, 3, 3, 11), Err(Error::Shape(_))));

        let zeros = vec![Array2::zeros((2, 4))];
        write_scores(&path, &zeros).unwrap();
        let back = import_scores(&path, 1, 2, 4).unwrap();
        for v in back[0].iter() {
            assert!((v - (0.25f64).ln()).abs() < 1e-12);
        }

        let text = std::fs::read_to_string(&path).unwrap().replacen("0.000000", "NaN", 1);
        std::fs::write(&path, text).unwrap();
        let err = import_scores(&path, 1, 2, 4).unwrap_err().to_string();
        assert!(err.contains("chunk 0, frame 0"), "{err}");
    }
}
