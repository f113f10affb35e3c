use std::collections::BTreeMap;

use crate::frames::TimeSpan;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub span: TimeSpan,
    pub label: String,
}

/// Speaker-labelled time intervals for one recording. Segments are kept
/// sorted by `(start, label)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub recording_id: String,
    segments: Vec<Segment>,
}

impl Annotation {
    pub fn new(recording_id: impl Into<String>) -> Self {
        Self {
            recording_id: recording_id.into(),
            segments: Vec::new(),
        }
    }

    pub fn from_segments(recording_id: impl Into<String>, segments: Vec<Segment>) -> Self {
        let mut ann = Self {
            recording_id: recording_id.into(),
            segments,
        };
        ann.sort();
        ann
    }

    pub fn push(&mut self, span: TimeSpan, label: impl Into<String>) {
        let seg = Segment {
            span,
            label: label.into(),
        };
        let at = self
            .segments
            .partition_point(|s| sort_key(s) <= sort_key(&seg));
        self.segments.insert(at, seg);
    }

    fn sort(&mut self) {
        self.segments
            .sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).unwrap());
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        self.timelines().into_keys().collect()
    }

    /// Sum of segment durations (overlapping speech counted per speaker).
    pub fn total_speech_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.span.duration()).sum()
    }

    /// Per-speaker sorted, merged timelines.
    pub fn timelines(&self) -> BTreeMap<String, Vec<TimeSpan>> {
        let mut out: BTreeMap<String, Vec<TimeSpan>> = BTreeMap::new();
        for seg in &self.segments {
            out.entry(seg.label.clone()).or_default().push(seg.span);
        }
        for spans in out.values_mut() {
            *spans = merge_spans(std::mem::take(spans));
        }
        out
    }

    /// Latest segment end, zero when empty.
    pub fn extent_end(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.span.end())
            .fold(0.0, f64::max)
    }

    /// Apply `f` to every label.
    pub fn relabel(&self, f: impl Fn(&str) -> String) -> Self {
        Self::from_segments(
            self.recording_id.clone(),
            self.segments
                .iter()
                .map(|s| Segment {
                    span: s.span,
                    label: f(&s.label),
                })
                .collect(),
        )
    }
}

fn sort_key(s: &Segment) -> (f64, &str, f64) {
    (s.span.start(), s.label.as_str(), s.span.end())
}

/// Sort and union touching or overlapping spans.
pub fn merge_spans(mut spans: Vec<TimeSpan>) -> Vec<TimeSpan> {
    spans.sort_by(|a, b| a.start().partial_cmp(&b.start()).unwrap());
    let mut out: Vec<TimeSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s.start() <= last.end() => {
                if s.end() > last.end() {
                    *last = TimeSpan::new(last.start(), s.end()).unwrap();
                }
            }
            _ => out.push(s),
        }
    }
    out
}
