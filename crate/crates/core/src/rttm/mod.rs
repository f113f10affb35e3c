//! RTTM reading and writing, and diarization error rate.
//!
//! Canonical output is one `SPEAKER` line per segment with ten
//! single-space-separated fields and three decimals on onset and duration:
//!
//! ```text
//! SPEAKER EN2002a_30s 1 0.013 2.640 <NA> <NA> SPEAKER_00 <NA> <NA>
//! ```

mod der;
pub mod hungarian;

use std::fmt;
use std::path::Path;

pub use der::{der, optimal_mapping, DerBreakdown};

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::frames::TimeSpan;

#[derive(Debug, Clone, PartialEq)]
pub struct RttmRecord {
    pub file_id: String,
    pub channel: u32,
    pub onset_s: f64,
    pub duration_s: f64,
    pub speaker: String,
}

impl fmt::Display for RttmRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SPEAKER {} {} {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            self.file_id, self.channel, self.onset_s, self.duration_s, self.speaker
        )
    }
}

/// Round to the nearest millisecond.
pub fn quantize(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

pub fn records(ann: &Annotation) -> Vec<RttmRecord> {
    ann.segments()
        .iter()
        .map(|s| RttmRecord {
            file_id: ann.recording_id.clone(),
            channel: 1,
            onset_s: s.span.start(),
            duration_s: s.span.duration(),
            speaker: s.label.clone(),
        })
        .collect()
}

pub fn to_rttm_string(ann: &Annotation) -> String {
    records(ann).iter().map(|r| format!("{r}\n")).collect()
}

pub fn write_rttm(ann: &Annotation, path: &Path) -> Result<()> {
    std::fs::write(path, to_rttm_string(ann)).map_err(|e| Error::io(path, e))
}

fn is_comment(line: &str) -> bool {
    line.starts_with('#') || line.starts_with(";;")
}

/// Parse RTTM text. Fields may be separated by any whitespace run; blank
/// lines, `#`/`;;` comments and non-`SPEAKER` records are skipped.
pub fn parse_rttm(text: &str, source: &Path) -> Result<Vec<RttmRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let no = i + 1;
        if line.is_empty() || is_comment(line) {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            log::debug!("{}:{no}: skipping {} record", source.display(), fields[0]);
            continue;
        }
        if fields.len() != 10 {
            return Err(Error::parse(
                source,
                no,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source, no, format!("{name} `{}` is not a number", fields[idx])))
        };
        let onset_s = num(3, "onset")?;
        let duration_s = num(4, "duration")?;
        if onset_s < 0.0 {
            return Err(Error::parse(source, no, "negative onset"));
        }
        if duration_s <= 0.0 {
            return Err(Error::parse(source, no, format!("non-positive duration {duration_s}")));
        }
        let channel = fields[2]
            .parse()
            .map_err(|_| Error::parse(source, no, format!("channel `{}` is not an integer", fields[2])))?;
        out.push(RttmRecord {
            file_id: fields[1].to_string(),
            channel,
            onset_s,
            duration_s,
            speaker: fields[7].to_string(),
        });
    }
    Ok(out)
}

/// Build an annotation from records of a single recording.
pub fn annotation_from_records(records: &[RttmRecord], source: &Path) -> Result<Annotation> {
    let mut ann = Annotation::new(records.first().map(|r| r.file_id.clone()).unwrap_or_default());
    for r in records {
        if r.file_id != ann.recording_id {
            return Err(Error::Format(format!(
                "{}: mixes recordings `{}` and `{}`",
                source.display(),
                ann.recording_id,
                r.file_id
            )));
        }
        ann.push(TimeSpan::new(r.onset_s, r.onset_s + r.duration_s)?, r.speaker.clone());
    }
    Ok(ann)
}

pub fn read_rttm(path: &Path) -> Result<Annotation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    annotation_from_records(&parse_rttm(&text, path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LISTING: &str = "\
SPEAKER EN2002a_30s 1  0.013  2.640 <NA> <NA> SPEAKER_00 <NA> <NA>
SPEAKER EN2002a_30s 1  0.792 12.820 <NA> <NA> SPEAKER_03 <NA> <NA>
SPEAKER EN2002a_30s 1  5.753  0.660 <NA> <NA> SPEAKER_00 <NA> <NA>
";

    #[test]
    fn whitespace_tolerant_parse() {
        let recs = parse_rttm(LISTING, Path::new("x")).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].duration_s, 12.82);
        assert_eq!(
            recs[0].to_string(),
            "SPEAKER EN2002a_30s 1 0.013 2.640 <NA> <NA> SPEAKER_00 <NA> <NA>"
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "# comment\n\nSPEAKER f 1 0.0 1.0 <NA> <NA> A <NA>\n";
        assert!(matches!(parse_rttm(bad, Path::new("x")), Err(Error::Parse { line: 3, .. })));
        let bad = "SPEAKER f 1 abc 1.0 <NA> <NA> A <NA> <NA>\n";
        assert!(matches!(parse_rttm(bad, Path::new("x")), Err(Error::Parse { line: 1, .. })));
        let bad = "SPEAKER f 1 0 1 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 1.0 0.000 <NA> <NA> A <NA> <NA>\n";
        assert!(matches!(parse_rttm(bad, Path::new("x")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_annotation_is_empty_file() {
        assert_eq!(to_rttm_string(&Annotation::new("x")), "");
        let ann = annotation_from_records(&parse_rttm("", Path::new("x")).unwrap(), Path::new("x")).unwrap();
        assert!(ann.is_empty());
    }

    #[test]
    fn mixed_recordings_rejected() {
        let text = "SPEAKER a 1 0 1 <NA> <NA> A <NA> <NA>\nSPEAKER b 1 0 1 <NA> <NA> A <NA> <NA>\n";
        let recs = parse_rttm(text, Path::new("x")).unwrap();
        assert!(annotation_from_records(&recs, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn write_read_round_trip(segs in proptest::collection::vec((0u32..100_000, 1u32..20_000, 0usize..5), 0..30)) {
            let mut ann = Annotation::new("rec");
            for (start, dur, spk) in segs {
                let a = start as f64 / 1000.0;
                let b = (start + dur) as f64 / 1000.0;
                ann.push(TimeSpan::new(a, b).unwrap(), format!("S{spk}"));
            }
            let text = to_rttm_string(&ann);
            let back = annotation_from_records(&parse_rttm(&text, Path::new("x")).unwrap(), Path::new("x")).unwrap();
            prop_assert_eq!(to_rttm_string(&back), text);
            prop_assert_eq!(back.len(), ann.len());
            for (x, y) in back.segments().iter().zip(ann.segments()) {
                prop_assert_eq!(&x.label, &y.label);
                prop_assert!((x.span.start() - y.span.start()).abs() < 1e-9);
                prop_assert!((x.span.end() - y.span.end()).abs() < 1e-9);
            }
        }
    }
}
