//! Two-covariance PLDA in a diagonalized basis.
//!
//! Embeddings are mapped into the PLDA space by
//! `y = lda^T x - mean`, length-normalized to the unit sphere, and divided
//! elementwise by `sqrt(phi_within)`. In that whitened space the
//! within-speaker covariance is the identity and the across-speaker
//! covariance is `diag(phi_across / phi_within)`, so every score below is a
//! per-dimension closed form.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scoring::stream_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    /// Offset subtracted after the LDA multiply (`lda^T` applied to the
    /// embedding-space mean).
    pub mean: Array1<f64>,
    /// `embedding_dim x lda_dim`.
    pub lda: Array2<f64>,
    pub phi_across: Array1<f64>,
    pub phi_within: Array1<f64>,
}

impl PldaModel {
    pub fn new(
        mean: Array1<f64>,
        lda: Array2<f64>,
        phi_across: Array1<f64>,
        phi_within: Array1<f64>,
    ) -> Result<Self> {
        let d = lda.ncols();
        if mean.len() != d || phi_across.len() != d || phi_within.len() != d {
            return Err(Error::Shape(format!(
                "PLDA dimensions disagree: lda {:?}, mean {}, phi_across {}, phi_within {}",
                lda.dim(),
                mean.len(),
                phi_across.len(),
                phi_within.len()
            )));
        }
        if lda.nrows() < d {
            return Err(Error::Shape("LDA cannot raise dimensionality".into()));
        }
        if phi_across.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Format("phi_across must be finite and non-negative".into()));
        }
        if phi_within.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Format("phi_within must be finite and positive".into()));
        }
        if lda.iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in LDA or mean".into()));
        }
        Ok(Self {
            mean,
            lda,
            phi_across,
            phi_within,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.lda.nrows()
    }

    pub fn lda_dim(&self) -> usize {
        self.lda.ncols()
    }

    /// Across-speaker variances in the whitened space.
    pub fn phi(&self) -> Array1<f64> {
        &self.phi_across / &self.phi_within
    }

    /// Map an embedding into the whitened PLDA space.
    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.embedding_dim() {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, PLDA expects {}",
                x.len(),
                self.embedding_dim()
            )));
        }
        let mut y = self.lda.t().dot(&x) - &self.mean;
        let norm = y.dot(&y).sqrt();
        if norm > 0.0 {
            y /= norm;
        }
        Ok(y / self.phi_within.mapv(f64::sqrt))
    }

    /// Same-speaker versus different-speaker log-likelihood ratio of two
    /// projected vectors.
    pub fn llr(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        llr_whitened(a, b, self.phi().view())
    }

    /// Full symmetric LLR matrix.
    pub fn pairwise_llr(&self, projected: &[Array1<f64>]) -> Array2<f64> {
        let phi = self.phi();
        let n = projected.len();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = llr_whitened(projected[i].view(), projected[j].view(), phi.view());
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
        out
    }
}

/// LLR under `x = z + e`, `z ~ N(0, phi)`, `e ~ N(0, 1)` per dimension.
/// The expression is symmetric in `a` and `b` term by term.
pub fn llr_whitened(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, phi: ArrayView1<'_, f64>) -> f64 {
    let mut total = 0.0;
    for ((&x, &y), &p) in a.iter().zip(b.iter()).zip(phi.iter()) {
        let sq = x * x + y * y;
        let cross = x * y;
        let det_same = 2.0 * p + 1.0;
        let var_diff = p + 1.0;
        total += -0.5 * det_same.ln() + var_diff.ln()
            - 0.5 * ((var_diff * sq - 2.0 * p * cross) / det_same - sq / var_diff);
    }
    total
}

const PLDA_MAGIC: &str = "# diarize plda v1";

fn write_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let row: Vec<String> = values.map(|v| v.to_string()).collect();
    writeln!(out, "{}", row.join(" ")).unwrap();
}

/// Text model file: a `plda <embedding_dim> <lda_dim>` header followed by
/// the `mean`, `phi_across`, `phi_within` and `lda` sections.
pub fn write_plda(path: &Path, model: &PldaModel) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{PLDA_MAGIC}").unwrap();
    writeln!(out, "plda {} {}", model.embedding_dim(), model.lda_dim()).unwrap();
    for (name, v) in [
        ("mean", &model.mean),
        ("phi_across", &model.phi_across),
        ("phi_within", &model.phi_within),
    ] {
        writeln!(out, "{name}").unwrap();
        write_row(&mut out, v.iter().copied());
    }
    writeln!(out, "lda").unwrap();
    for row in model.lda.rows() {
        write_row(&mut out, row.iter().copied());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_plda(path: &Path) -> Result<PldaModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
    };
    let (no, header) = next("header")?;
    let dims: Vec<usize> = header
        .strip_prefix("plda ")
        .map(|rest| rest.split_whitespace().filter_map(|v| v.parse().ok()).collect())
        .unwrap_or_default();
    let [emb, lda_dim] = dims[..] else {
        return Err(Error::parse(path, no, "expected `plda <embedding_dim> <lda_dim>`"));
    };

    let parse_row = |no: usize, line: &str, len: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse(path, no, format!("{e}")))?;
        if v.len() != len {
            return Err(Error::parse(path, no, format!("{} values, expected {len}", v.len())));
        }
        Ok(v)
    };
    let mut vectors = Vec::new();
    for name in ["mean", "phi_across", "phi_within"] {
        let (no, tag) = next(name)?;
        if tag != name {
            return Err(Error::parse(path, no, format!("expected section `{name}`")));
        }
        let (no, line) = next(name)?;
        vectors.push(Array1::from(parse_row(no, line, lda_dim)?));
    }
    let (no, tag) = next("lda")?;
    if tag != "lda" {
        return Err(Error::parse(path, no, "expected section `lda`"));
    }
    let mut lda = Array2::zeros((emb, lda_dim));
    for r in 0..emb {
        let (no, line) = next("lda row")?;
        lda.row_mut(r).assign(&Array1::from(parse_row(no, line, lda_dim)?));
    }
    let phi_within = vectors.pop().unwrap();
    let phi_across = vectors.pop().unwrap();
    let mean = vectors.pop().unwrap();
    PldaModel::new(mean, lda, phi_across, phi_within)
}

/// Draws speakers and embeddings consistent with a [`PldaModel`] whose LDA
/// has orthonormal columns.
#[derive(Debug, Clone)]
pub struct PldaGenerator {
    pub model: PldaModel,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct LabeledEmbedding {
    pub speaker: usize,
    /// Unit-norm embedding-space vector.
    pub embedding: Array1<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| StandardNormal.sample(rng))
}

fn l2_normalize(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}

impl PldaGenerator {
    pub fn new(model: PldaModel, rng_seed: u64) -> Self {
        Self { model, rng_seed }
    }

    /// A generator over a fresh model: zero mean, random orthonormal LDA and
    /// isotropic variances with `phi_across / phi_within = separation`,
    /// scaled so that projected points sit on the unit sphere.
    pub fn synthetic(embedding_dim: usize, lda_dim: usize, separation: f64, rng_seed: u64) -> Result<Self> {
        if lda_dim == 0 || lda_dim > embedding_dim {
            return Err(Error::Config(format!(
                "lda_dim {lda_dim} must lie in [1, {embedding_dim}]"
            )));
        }
        if !(separation > 0.0) {
            return Err(Error::Config("separation must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        // Gram-Schmidt on Gaussian columns
        let mut lda = Array2::<f64>::zeros((embedding_dim, lda_dim));
        for c in 0..lda_dim {
            let mut v = gaussian(&mut rng, embedding_dim);
            for p in 0..c {
                let prev = lda.column(p);
                let proj = prev.dot(&v);
                v.scaled_add(-proj, &prev);
            }
            lda.column_mut(c).assign(&l2_normalize(v));
        }
        let d = lda_dim as f64;
        let total = separation + 1.0;
        let model = PldaModel::new(
            Array1::zeros(lda_dim),
            lda,
            Array1::from_elem(lda_dim, separation / total / d),
            Array1::from_elem(lda_dim, 1.0 / total / d),
        )?;
        Ok(Self::new(model, rng_seed))
    }

    /// Latent mean of speaker `index` in the LDA space.
    pub fn speaker_mean(&self, index: usize) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.rng_seed ^ 0x5EED_5EED, index as u64));
        gaussian(&mut rng, self.model.lda_dim()) * self.model.phi_across.mapv(f64::sqrt)
    }

    /// One observation of `mean` with within-speaker noise scaled by
    /// `noise_scale`, mapped back to a unit-norm embedding.
    pub fn observe(&self, mean: &Array1<f64>, noise_scale: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let noise = gaussian(rng, self.model.lda_dim()) * self.model.phi_within.mapv(f64::sqrt);
        let latent = mean + &(noise * noise_scale) + &self.model.mean;
        l2_normalize(self.model.lda.dot(&latent))
    }

    /// Labeled embeddings, `counts[s]` for speaker `s`, speaker-major order.
    pub fn sample_speakers_and_embeddings(&self, counts: &[usize]) -> Vec<LabeledEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.rng_seed, u64::MAX));
        let mut out = Vec::new();
        for (speaker, &n) in counts.iter().enumerate() {
            let mean = self.speaker_mean(speaker);
            for _ in 0..n {
                out.push(LabeledEmbedding {
                    speaker,
                    embedding: self.observe(&mean, 1.0, &mut rng),
                });
            }
        }
        out
    }
}
