//! Average-linkage agglomerative clustering over a similarity matrix.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Merge clusters while the best average pairwise similarity between two
/// clusters is at least `threshold`. Labels are contiguous, numbered by the
/// first member index of each cluster.
pub fn ahc(similarity: ArrayView2<'_, f64>, threshold: f64) -> Result<Vec<usize>> {
    let n = similarity.nrows();
    if n == 0 {
        return Err(Error::Empty("clustering needs at least one embedding".into()));
    }
    if similarity.ncols() != n {
        return Err(Error::Shape(format!("similarity matrix is {:?}", similarity.dim())));
    }
    // members[i] is None once cluster i has been merged into another
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    // link[i][j]: sum of similarities between clusters i and j
    let mut link: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| similarity[[i, j]]).collect())
        .collect();

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            let Some(mi) = &members[i] else { continue };
            for j in i + 1..n {
                let Some(mj) = &members[j] else { continue };
                let avg = link[i][j] / (mi.len() * mj.len()) as f64;
                if best.is_none_or(|(_, _, b)| avg > b) {
                    best = Some((i, j, avg));
                }
            }
        }
        match best {
            Some((i, j, avg)) if avg >= threshold => {
                let moved = members[j].take().unwrap();
                members[i].as_mut().unwrap().extend(moved);
                for k in 0..n {
                    let merged = link[i][k] + link[j][k];
                    link[i][k] = merged;
                    link[k][i] = merged;
                }
            }
            _ => break,
        }
    }

    let mut labels = vec![0; n];
    let mut clusters: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    clusters.sort_by_key(|m| *m.iter().min().unwrap());
    for (label, m) in clusters.iter().enumerate() {
        for &i in m {
            labels[i] = label;
        }
    }
    Ok(labels)
}
