//! Powerset classes over local speakers and the decode to multilabel
//! activity.
//!
//! With `S` local speakers and at most `O` simultaneous ones, each frame is
//! classified into one of `K = sum_{k<=O} C(S, k)` subsets. Classes are
//! ordered by cardinality, then lexicographically by speaker index, so for
//! `(S, O) = (4, 2)`:
//!
//! ```text
//! 0: {}   1: {0}  2: {1}  3: {2}  4: {3}
//! 5: {0,1} 6: {0,2} 7: {0,3} 8: {1,2} 9: {1,3} 10: {2,3}
//! ```

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Per-chunk frame x class log-probabilities.
pub type FrameScores = Array2<f64>;

/// Per-chunk frame x local-speaker activity (0.0 or 1.0).
pub type MultilabelActivity = Array2<f64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowersetCodec {
    num_speakers: usize,
    max_overlap: usize,
    classes: Vec<Vec<usize>>,
    mapping: Array2<u8>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

impl PowersetCodec {
    pub fn new(num_speakers: usize, max_overlap: usize) -> Result<Self> {
        if num_speakers < 1 || max_overlap < 1 || max_overlap > num_speakers {
            return Err(Error::Config(format!(
                "powerset needs 1 <= max_overlap <= speakers, got S={num_speakers} O={max_overlap}"
            )));
        }
        let classes: Vec<Vec<usize>> = (0..=max_overlap)
            .flat_map(|k| combinations(num_speakers, k))
            .collect();
        let mut mapping = Array2::zeros((classes.len(), num_speakers));
        for (i, class) in classes.iter().enumerate() {
            for &s in class {
                mapping[[i, s]] = 1;
            }
        }
        Ok(Self {
            num_speakers,
            max_overlap,
            classes,
            mapping,
        })
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    pub fn max_overlap(&self) -> usize {
        self.max_overlap
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    /// `K x S` indicator matrix; row `i` marks the speakers of class `i`.
    pub fn mapping(&self) -> &Array2<u8> {
        &self.mapping
    }

    pub fn decode(&self, class: usize) -> &[usize] {
        &self.classes[class]
    }

    /// Class index of a set of active speakers (order-insensitive).
    pub fn encode(&self, active: &[usize]) -> Result<usize> {
        if active.len() > self.max_overlap {
            return Err(Error::Shape(format!(
                "{} active speakers exceed the powerset limit of {}",
                active.len(),
                self.max_overlap
            )));
        }
        if let Some(&s) = active.iter().find(|&&s| s >= self.num_speakers) {
            return Err(Error::Shape(format!(
                "speaker index {s} out of range for {} local speakers",
                self.num_speakers
            )));
        }
        let mut sorted = active.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != active.len() {
            return Err(Error::Shape("duplicate speaker in active set".into()));
        }
        // classes of smaller cardinality come first
        let offset: usize = (0..sorted.len())
            .map(|k| binomial(self.num_speakers, k))
            .sum();
        let rank = self.classes[offset..]
            .iter()
            .position(|c| *c == sorted)
            .expect("every valid subset is enumerated");
        Ok(offset + rank)
    }

    /// Hard decode: each frame takes the speaker row of its argmax class.
    /// Ties resolve to the lowest class index.
    pub fn to_multilabel(&self, scores: ArrayView2<'_, f64>) -> Result<MultilabelActivity> {
        if scores.ncols() != self.num_classes() {
            return Err(Error::Shape(format!(
                "scores have {} classes, codec expects {}",
                scores.ncols(),
                self.num_classes()
            )));
        }
        let mut out = Array2::zeros((scores.nrows(), self.num_speakers));
        for (t, row) in scores.rows().into_iter().enumerate() {
            let best = argmax(row.iter().copied());
            for &s in &self.classes[best] {
                out[[t, s]] = 1.0;
            }
        }
        Ok(out)
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn inventory_sizes() {
        let c = PowersetCodec::new(4, 2).unwrap();
        assert_eq!(c.num_classes(), 11);
        assert_eq!(PowersetCodec::new(1, 1).unwrap().classes(), &[vec![], vec![0]]);
        // full powerset of 3 speakers, checked against bitmask enumeration
        let full = PowersetCodec::new(3, 3).unwrap();
        assert_eq!(full.num_classes(), 8);
        let mut masks: Vec<u32> = full
            .classes()
            .iter()
            .map(|c| c.iter().map(|s| 1u32 << s).sum())
            .collect();
        masks.sort();
        assert_eq!(masks, (0..8).collect::<Vec<_>>());
        assert!(PowersetCodec::new(2, 3).is_err());
        assert!(PowersetCodec::new(0, 0).is_err());
    }

    #[test]
    fn class_order() {
        let c = PowersetCodec::new(4, 2).unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![],
            vec![0],
            vec![1],
            vec![2],
            vec![3],
            vec![0, 1],
            vec![0, 2],
            vec![0, 3],
            vec![1, 2],
            vec![1, 3],
            vec![2, 3],
        ];
        assert_eq!(c.classes(), expected.as_slice());
        assert_eq!(c.encode(&[0, 1]).unwrap(), 5);
        assert_eq!(c.encode(&[1, 0]).unwrap(), 5);
        assert_eq!(c.encode(&[]).unwrap(), 0);
        assert_eq!(c.encode(&[2, 3]).unwrap(), 10);
        assert!(c.encode(&[0, 1, 2]).is_err());
        assert!(c.encode(&[4]).is_err());
    }

    #[test]
    fn mapping_row_sums() {
        let c = PowersetCodec::new(4, 2).unwrap();
        let sums: Vec<u8> = c.mapping().rows().into_iter().map(|r| r.sum()).collect();
        assert_eq!(sums.iter().filter(|&&s| s == 0).count(), 1);
        assert_eq!(sums.iter().filter(|&&s| s == 1).count(), 4);
        assert_eq!(sums.iter().filter(|&&s| s == 2).count(), 6);
    }

    #[test]
    fn decode_argmax() {
        let c = PowersetCodec::new(4, 2).unwrap();
        let mut scores = Array2::from_elem((3, 11), -5.0);
        scores[[0, 5]] = -0.01;
        scores[[1, 0]] = -0.01;
        let ml = c.to_multilabel(scores.view()).unwrap();
        assert_eq!(ml.row(0), array![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(ml.row(1), array![0.0, 0.0, 0.0, 0.0]);
        // uniform row: tie resolves to class 0
        assert_eq!(ml.row(2), array![0.0, 0.0, 0.0, 0.0]);
        assert!(c.to_multilabel(Array2::zeros((2, 10)).view()).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(s in 1usize..7, o_off in 0usize..6, mask in 0u32..128) {
            let o = 1 + o_off % s;
            let c = PowersetCodec::new(s, o).unwrap();
            let set: Vec<usize> = (0..s).filter(|i| mask & (1 << i) != 0).collect();
            if set.len() <= o {
                let k = c.encode(&set).unwrap();
                prop_assert_eq!(c.decode(k), set.as_slice());
            } else {
                prop_assert!(c.encode(&set).is_err());
            }
        }

        #[test]
        fn multilabel_respects_overlap(values in proptest::collection::vec(-10.0f64..0.0, 11 * 20)) {
            let c = PowersetCodec::new(4, 2).unwrap();
            let scores = Array2::from_shape_vec((20, 11), values).unwrap();
            let ml = c.to_multilabel(scores.view()).unwrap();
            for row in ml.rows() {
                prop_assert!(row.sum() <= 2.0);
                prop_assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }
}
