use std::collections::BTreeMap;

use ndarray::Array2;

use super::hungarian::max_weight_assignment;
use crate::annotation::{merge_spans, Annotation};
use crate::error::{Error, Result};
use crate::frames::TimeSpan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerBreakdown {
    pub t_miss: f64,
    pub t_fa: f64,
    pub t_conf: f64,
    pub t_ref: f64,
    pub der: f64,
}

/// Whether `t` lies in one of the sorted, disjoint `spans`.
fn covered(spans: &[TimeSpan], t: f64) -> bool {
    let i = spans.partition_point(|s| s.end() <= t);
    i < spans.len() && spans[i].contains(t)
}

/// Diarization error rate under the optimal one-to-one speaker mapping.
///
/// The timeline is cut at every segment boundary; on each piece the
/// reference and hypothesis speaker sets give miss, false alarm and
/// confusion. `collar_s` removes that much time on both sides of every
/// reference boundary; `skip_overlap` removes reference overlap.
pub fn der(reference: &Annotation, hypothesis: &Annotation, collar_s: f64, skip_overlap: bool) -> Result<DerBreakdown> {
    let ref_tl: Vec<(String, Vec<TimeSpan>)> = reference.timelines().into_iter().collect();
    let hyp_tl: Vec<(String, Vec<TimeSpan>)> = hypothesis.timelines().into_iter().collect();

    let mut excluded: Vec<TimeSpan> = Vec::new();
    if collar_s > 0.0 {
        for (_, spans) in &ref_tl {
            for s in spans {
                for b in [s.start(), s.end()] {
                    excluded.push(TimeSpan::new((b - collar_s).max(0.0), b + collar_s)?);
                }
            }
        }
    }

    let mut cuts: Vec<f64> = vec![0.0];
    for (_, spans) in ref_tl.iter().chain(&hyp_tl) {
        for s in spans {
            cuts.push(s.start());
            cuts.push(s.end());
        }
    }
    cuts.extend(excluded.iter().flat_map(|s| [s.start(), s.end()]));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    if skip_overlap {
        let mut overlap = Vec::new();
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if ref_tl.iter().filter(|(_, s)| covered(s, mid)).count() >= 2 {
                overlap.push(TimeSpan::new(w[0], w[1])?);
            }
        }
        excluded.extend(overlap);
    }
    let excluded = merge_spans(excluded);

    // (duration, active reference indices, active hypothesis indices)
    let mut pieces: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if covered(&excluded, mid) {
            continue;
        }
        let r: Vec<usize> = (0..ref_tl.len()).filter(|&i| covered(&ref_tl[i].1, mid)).collect();
        let h: Vec<usize> = (0..hyp_tl.len()).filter(|&j| covered(&hyp_tl[j].1, mid)).collect();
        if !r.is_empty() || !h.is_empty() {
            pieces.push((w[1] - w[0], r, h));
        }
    }

    let mut overlap = Array2::<f64>::zeros((ref_tl.len(), hyp_tl.len()));
    for (d, r, h) in &pieces {
        for &i in r {
            for &j in h {
                overlap[[i, j]] += d;
            }
        }
    }
    let mapping = max_weight_assignment(&overlap);

    let (mut t_ref, mut t_miss, mut t_fa, mut t_conf) = (0.0, 0.0, 0.0, 0.0);
    for (d, r, h) in &pieces {
        let (nr, nh) = (r.len(), h.len());
        let correct = r
            .iter()
            .filter(|&&i| mapping[i].is_some_and(|j| h.contains(&j)))
            .count();
        t_ref += nr as f64 * d;
        t_miss += nr.saturating_sub(nh) as f64 * d;
        t_fa += nh.saturating_sub(nr) as f64 * d;
        t_conf += (nr.min(nh) - correct) as f64 * d;
    }
    if t_ref <= 0.0 {
        return Err(Error::UndefinedDer);
    }
    Ok(DerBreakdown {
        t_miss,
        t_fa,
        t_conf,
        t_ref,
        der: (t_miss + t_fa + t_conf) / t_ref,
    })
}

/// Mapping chosen by [`der`], from reference to hypothesis labels.
pub fn optimal_mapping(reference: &Annotation, hypothesis: &Annotation) -> BTreeMap<String, String> {
    let ref_tl: Vec<_> = reference.timelines().into_iter().collect();
    let hyp_tl: Vec<_> = hypothesis.timelines().into_iter().collect();
    let overlap = Array2::from_shape_fn((ref_tl.len(), hyp_tl.len()), |(i, j)| {
        ref_tl[i]
            .1
            .iter()
            .flat_map(|a| hyp_tl[j].1.iter().map(move |b| a.overlap(b)))
            .sum::<f64>()
    });
    max_weight_assignment(&overlap)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (ref_tl[i].0.clone(), hyp_tl[j].0.clone())))
        .collect()
}
