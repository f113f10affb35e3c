//! Synthetic conversation scripts with controllable silence and overlap.
//!
//! Speakers take alternating turns. Each turn boundary is either a gap of
//! silence or an overlapped turn start, so at most two speakers are ever
//! active together. Realized fractions are measured on a 10 ms raster and
//! the gap and overlap scales are re-tuned until both land near the targets.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::frames::TimeSpan;
use crate::rttm;
use crate::scoring::{stream_seed, GroundTruthScript};

/// Raster step used to measure realized fractions.
pub const RASTER_S: f64 = 0.01;
/// Allowed absolute deviation of realized fractions from their targets.
pub const FRACTION_TOLERANCE: f64 = 0.03;
pub const MAX_ATTEMPTS: usize = 100;
const MIN_TURN_S: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct MeetingSpec {
    pub recording_id: String,
    pub duration_s: f64,
    pub n_speakers: usize,
    pub mean_turn_s: f64,
    pub overlap_fraction: f64,
    pub silence_fraction: f64,
    pub rng_seed: u64,
}

impl Default for MeetingSpec {
    fn default() -> Self {
        Self {
            recording_id: "synth".into(),
            duration_s: 60.0,
            n_speakers: 4,
            mean_turn_s: 2.5,
            overlap_fraction: 0.1,
            silence_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

impl MeetingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if self.n_speakers == 0 {
            return bad("at least one speaker is required".into());
        }
        if !(self.mean_turn_s * 4.0 > MIN_TURN_S && self.mean_turn_s.is_finite()) {
            return bad(format!("mean turn length {} s is too short", self.mean_turn_s));
        }
        for (name, f) in [("overlap", self.overlap_fraction), ("silence", self.silence_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} fraction must be in [0, 1), got {f}"));
            }
        }
        if self.overlap_fraction + self.silence_fraction >= 1.0 {
            return bad("silence and overlap fractions leave no single-speaker time".into());
        }
        Ok(())
    }
}

/// Share of raster frames with zero, one and two or more active speakers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub silence: f64,
    pub single: f64,
    pub overlap: f64,
}

/// Per-frame active speaker count on a `raster_s` grid, sampled at frame
/// centers over `[0, duration)`.
pub fn raster_counts(script: &GroundTruthScript, raster_s: f64) -> Vec<usize> {
    let n = (script.duration_s / raster_s).round() as usize;
    let mut diff = vec![0i64; n + 1];
    for (span, _) in &script.turns {
        // frames whose center lies in [start, end)
        let a = ((span.start() / raster_s) - 0.5).ceil().max(0.0) as usize;
        let b = ((span.end() / raster_s) - 0.5).ceil().max(0.0) as usize;
        let (a, b) = (a.min(n), b.min(n));
        if a < b {
            diff[a] += 1;
            diff[b] -= 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = 0i64;
    for d in &diff[..n] {
        acc += d;
        out.push(acc as usize);
    }
    out
}

pub fn measure_fractions(script: &GroundTruthScript, raster_s: f64) -> Fractions {
    let counts = raster_counts(script, raster_s);
    let n = counts.len().max(1) as f64;
    let silence = counts.iter().filter(|&&c| c == 0).count();
    let overlap = counts.iter().filter(|&&c| c >= 2).count();
    let single = counts.len() - silence - overlap;
    Fractions {
        silence: silence as f64 / n,
        single: single as f64 / n,
        overlap: overlap as f64 / n,
    }
}

pub fn speaker_label(index: usize) -> String {
    format!("spk{index:02}")
}

fn snap(t: f64) -> f64 {
    (t / RASTER_S).round() * RASTER_S
}

/// One draw of the turn sequence with the given gap and overlap scales.
fn draw(spec: &MeetingSpec, p_overlap: f64, gap_scale: f64, overlap_scale: f64, rng: &mut ChaCha8Rng) -> Result<GroundTruthScript> {
    let turn = Exp::new(1.0 / spec.mean_turn_s).expect("positive rate");
    let max_turn = 4.0 * spec.mean_turn_s;
    let exp_or_zero = |scale: f64, rng: &mut ChaCha8Rng| {
        if scale > 0.0 {
            Exp::new(1.0 / scale).expect("positive rate").sample(rng)
        } else {
            0.0
        }
    };

    let mut turns: Vec<(TimeSpan, String)> = Vec::new();
    let mut prev_speaker: Option<usize> = None;
    let mut prev_len = f64::INFINITY;
    // end of the turn before the previous one; later turns may not start before it
    let mut floor = 0.0;
    let mut cursor = if spec.silence_fraction > 0.0 { snap(exp_or_zero(gap_scale, rng)) } else { 0.0 };

    while cursor < spec.duration_s {
        let speaker = match prev_speaker {
            None => 0,
            Some(_) if turns.len() < spec.n_speakers => turns.len(),
            Some(p) if spec.n_speakers > 1 => {
                let k = rng.gen_range(0..spec.n_speakers - 1);
                if k >= p { k + 1 } else { k }
            }
            Some(p) => p,
        };
        let len = snap(turn.sample(rng).clamp(MIN_TURN_S, max_turn));
        let mut start = cursor;
        if prev_speaker.is_some() {
            if rng.gen::<f64>() < p_overlap {
                let limit = (0.9 * prev_len.min(len)).min(cursor - floor);
                let amount = exp_or_zero(overlap_scale, rng).min(limit.max(0.0));
                start = cursor - (amount / RASTER_S).floor() * RASTER_S;
                if start < floor {
                    start = cursor;
                }
            } else {
                start = cursor + snap(exp_or_zero(gap_scale, rng));
            }
        }
        if start >= spec.duration_s {
            break;
        }
        let end = (start + len).min(spec.duration_s);
        if end - start < RASTER_S {
            break;
        }
        turns.push((TimeSpan::new(start, end)?, speaker_label(speaker)));
        floor = cursor;
        cursor = end;
        prev_len = end - start;
        prev_speaker = Some(speaker);
    }
    GroundTruthScript::new(spec.recording_id.clone(), turns, spec.duration_s)
}

/// Draw a script whose silence and overlap fractions are within
/// [`FRACTION_TOLERANCE`] of the targets.
pub fn generate(spec: &MeetingSpec) -> Result<GroundTruthScript> {
    spec.validate()?;
    if spec.n_speakers == 1 && spec.overlap_fraction > 0.0 {
        return Err(Error::Infeasible {
            attempts: 0,
            silence: spec.silence_fraction,
            overlap: 0.0,
        });
    }
    let (sil, ov) = (spec.silence_fraction, spec.overlap_fraction);
    let p_overlap = if sil + ov > 0.0 { ov / (sil + ov) } else { 0.0 };
    let mut gap_scale = if sil > 0.0 { spec.mean_turn_s * sil / (1.0 - sil) / (1.0 - p_overlap) } else { 0.0 };
    let mut overlap_scale = if ov > 0.0 { spec.mean_turn_s * ov / p_overlap } else { 0.0 };

    let mut achieved = Fractions { silence: 0.0, single: 0.0, overlap: 0.0 };
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.rng_seed, attempt as u64));
        let script = draw(spec, p_overlap, gap_scale, overlap_scale, &mut rng)?;
        achieved = measure_fractions(&script, RASTER_S);
        let ok = (achieved.silence - sil).abs() <= FRACTION_TOLERANCE
            && (achieved.overlap - ov).abs() <= FRACTION_TOLERANCE
            && script.speakers().len() == spec.n_speakers;
        if ok {
            log::debug!("synth: accepted attempt {attempt}: {achieved:?}");
            return Ok(script);
        }
        let adjust = |target: f64, got: f64| if got > 0.0 { (target / got).clamp(0.5, 2.0) } else { 2.0 };
        if sil > 0.0 {
            gap_scale *= adjust(sil, achieved.silence);
        }
        if ov > 0.0 {
            overlap_scale *= adjust(ov, achieved.overlap);
        }
    }
    Err(Error::Infeasible {
        attempts: MAX_ATTEMPTS,
        silence: achieved.silence,
        overlap: achieved.overlap,
    })
}

/// One segment per script turn.
pub fn script_to_rttm(script: &GroundTruthScript) -> Annotation {
    script.to_annotation()
}

/// Write a script as RTTM, preceded by a `# duration` comment line.
pub fn save_script(script: &GroundTruthScript, path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "# duration {}", script.duration_s).unwrap();
    text.push_str(&rttm::to_rttm_string(&script_to_rttm(script)));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a script written by [`save_script`], or any RTTM file, in which
/// case the duration is the end of the last turn.
pub fn load_script(path: &Path) -> Result<GroundTruthScript> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut duration = 0.0;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim().strip_prefix("# duration") {
            duration = rest
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|d| d.is_finite() && *d >= 0.0)
                .ok_or_else(|| Error::parse(path, i + 1, format!("bad duration `{}`", rest.trim())))?;
        }
    }
    let ann = rttm::annotation_from_records(&rttm::parse_rttm(&text, path)?, path)?;
    let mut script = GroundTruthScript::from_annotation(&ann, duration)?;
    if script.recording_id.is_empty() {
        script.recording_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_simultaneous(script: &GroundTruthScript) -> usize {
        let mut events: Vec<(f64, i32)> = Vec::new();
        for (s, _) in &script.turns {
            events.push((s.start(), 1));
            events.push((s.end(), -1));
        }
        // ends sort before starts at the same instant
        events.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (mut cur, mut best) = (0i32, 0i32);
        for (_, d) in events {
            cur += d;
            best = best.max(cur);
        }
        best as usize
    }

    #[test]
    fn single_speaker() {
        let spec = MeetingSpec { n_speakers: 1, overlap_fraction: 0.0, silence_fraction: 0.1, duration_s: 30.0, ..Default::default() };
        let s = generate(&spec).unwrap();
        assert_eq!(s.speakers(), vec!["spk00"]);
        assert_eq!(max_simultaneous(&s), 1);
        assert_eq!(measure_fractions(&s, RASTER_S).overlap, 0.0);

        let spec = MeetingSpec { overlap_fraction: 0.1, ..spec };
        assert!(matches!(generate(&spec), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn meeting_profile_hits_targets() {
        let spec = MeetingSpec {
            duration_s: 30.0,
            n_speakers: 4,
            silence_fraction: 0.08,
            overlap_fraction: 0.28,
            rng_seed: 1,
            ..Default::default()
        };
        let s = generate(&spec).unwrap();
        let f = measure_fractions(&s, RASTER_S);
        assert!((f.silence - 0.08).abs() <= 0.03, "{f:?}");
        assert!((f.overlap - 0.28).abs() <= 0.03, "{f:?}");
        assert_eq!(s.speakers().len(), 4);
    }

    #[test]
    fn deterministic() {
        let spec = MeetingSpec { rng_seed: 9, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn impossible_targets_report_achieved() {
        let spec = MeetingSpec { overlap_fraction: 0.9, silence_fraction: 0.05, ..Default::default() };
        match generate(&spec) {
            Err(Error::Infeasible { attempts, overlap, .. }) => {
                assert_eq!(attempts, MAX_ATTEMPTS);
                assert!(overlap < 0.9);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn raster_counts_match_point_sampling() {
        let s = generate(&MeetingSpec { duration_s: 20.0, rng_seed: 4, ..Default::default() }).unwrap();
        let counts = raster_counts(&s, RASTER_S);
        for (k, &c) in counts.iter().enumerate() {
            let t = (k as f64 + 0.5) * RASTER_S;
            assert_eq!(c, s.active_at(t).len(), "frame {k}");
        }
    }

    #[test]
    fn empty_script_gives_empty_annotation() {
        let s = GroundTruthScript::new("e", vec![], 5.0).unwrap();
        assert!(script_to_rttm(&s).is_empty());
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate(&MeetingSpec { rng_seed: 2, ..Default::default() }).unwrap();
        let p = dir.path().join("s.rttm");
        save_script(&s, &p).unwrap();
        let back = load_script(&p).unwrap();
        assert_eq!(back.duration_s, s.duration_s);
        assert_eq!(back.turns.len(), s.turns.len());
        for ((a, la), (b, lb)) in back.turns.iter().zip(&s.turns) {
            assert_eq!(la, lb);
            assert!((a.start() - b.start()).abs() < 5e-4 && (a.end() - b.end()).abs() < 5e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn at_most_two_speakers_and_fractions_partition(
            seed in 0u64..1000,
            n in 2usize..6,
            sil in 0.0f64..0.2,
            ov in 0.0f64..0.2,
        ) {
            let spec = MeetingSpec { duration_s: 40.0, n_speakers: n, silence_fraction: sil, overlap_fraction: ov, rng_seed: seed, ..Default::default() };
            if let Ok(s) = generate(&spec) {
                prop_assert!(max_simultaneous(&s) <= 2);
                let counts = raster_counts(&s, RASTER_S);
                let f = measure_fractions(&s, RASTER_S);
                let n0 = counts.iter().filter(|&&c| c == 0).count();
                let n1 = counts.iter().filter(|&&c| c == 1).count();
                let n2 = counts.iter().filter(|&&c| c >= 2).count();
                prop_assert_eq!(n0 + n1 + n2, counts.len());
                prop_assert!((f.silence + f.single + f.overlap - 1.0).abs() < 1e-12);
                prop_assert!((f.silence - sil).abs() <= FRACTION_TOLERANCE);
                prop_assert!((f.overlap - ov).abs() <= FRACTION_TOLERANCE);
            }
        }

        #[test]
        fn rttm_round_trip_after_quantization(seed in 0u64..500) {
            let s = generate(&MeetingSpec { duration_s: 30.0, rng_seed: seed, ..Default::default() }).unwrap();
            let ann = script_to_rttm(&s);
            prop_assert_eq!(ann.len(), s.turns.len());
            let text = rttm::to_rttm_string(&ann);
            let back = rttm::annotation_from_records(&rttm::parse_rttm(&text, Path::new("x")).unwrap(), Path::new("x")).unwrap();
            for (a, b) in back.segments().iter().zip(ann.segments()) {
                prop_assert_eq!(&a.label, &b.label);
                prop_assert!((a.span.start() - rttm::quantize(b.span.start())).abs() < 1e-9);
            }
        }
    }
}
