//! Global-speaker reconstruction, second overlap-add pass and hysteresis
//! binarization into labelled segments.

use ndarray::Array2;

use crate::aggregate::{overlap_add, AggregatedActivity, FrameLayout};
use crate::annotation::Annotation;
use crate::cluster::{ClusterAssignment, SlotLabel};
use crate::error::{Error, Result};
use crate::frames::TimeSpan;

/// Per chunk, `frames x n_clusters` activity of each global speaker.
pub type ClusteredSegmentation = Vec<Array2<f64>>;

/// For each chunk and global speaker, the frame-wise maximum over the
/// local slots assigned to it (zero when none is).
pub fn reconstruct(seg: &[Array2<f64>], assignment: &ClusterAssignment) -> Result<ClusteredSegmentation> {
    let (chunks, speakers) = assignment.labels.dim();
    if seg.len() != chunks {
        return Err(Error::Shape(format!(
            "{} chunks of activity for an assignment over {chunks}",
            seg.len()
        )));
    }
    seg.iter()
        .enumerate()
        .map(|(c, local)| {
            if local.ncols() != speakers {
                return Err(Error::Shape(format!(
                    "chunk {c} has {} local speakers, assignment has {speakers}",
                    local.ncols()
                )));
            }
            let mut out = Array2::<f64>::zeros((local.nrows(), assignment.n_clusters));
            for (slot, label) in assignment.labels.row(c).iter().enumerate() {
                if let SlotLabel::Speaker(k) = *label {
                    let mut col = out.column_mut(k);
                    col.zip_mut_with(&local.column(slot), |o, &v| *o = o.max(v));
                }
            }
            Ok(out)
        })
        .collect()
}

/// Active regions of one score track as `[start, end)` frame ranges.
///
/// A region opens when the score rises above `onset` and closes at the
/// first frame where it falls below `offset`.
pub fn binarize(track: impl IntoIterator<Item = f64>, onset: f64, offset: f64) -> Vec<(usize, usize)> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    let mut n = 0;
    for (t, y) in track.into_iter().enumerate() {
        n = t + 1;
        match open {
            Some(start) if y < offset => {
                regions.push((start, t));
                open = None;
            }
            None if y > onset => open = Some(t),
            _ => {}
        }
    }
    if let Some(start) = open {
        regions.push((start, n));
    }
    regions
}

/// Turn a clustered segmentation into labelled segments. Speakers are
/// named `SPEAKER_00`, `SPEAKER_01`, ... by their first segment start,
/// then by their later segments.
pub fn to_diarization(
    cs: &ClusteredSegmentation,
    layout: &FrameLayout,
    onset: f64,
    offset: f64,
    recording_id: &str,
) -> Result<(Annotation, AggregatedActivity)> {
    let agg = overlap_add(cs, layout)?;
    let mut per_speaker: Vec<(usize, Vec<(usize, usize)>)> = agg
        .scores
        .columns()
        .into_iter()
        .enumerate()
        .map(|(k, col)| (k, binarize(col.iter().copied(), onset, offset)))
        .filter(|(_, regions)| !regions.is_empty())
        .collect();
    // ties on the first start fall through to the remaining regions, which
    // keeps the naming independent of cluster ids
    per_speaker.sort_by(|(_, a), (_, b)| a.cmp(b));

    let mut ann = Annotation::new(recording_id);
    for (name, (_, regions)) in per_speaker.iter().enumerate() {
        let label = format!("SPEAKER_{name:02}");
        for &(a, b) in regions {
            ann.push(TimeSpan::new(layout.frame_time(a), layout.frame_time(b))?, label.clone());
        }
    }
    Ok((ann, agg))
}
