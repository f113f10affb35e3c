//! Variational Bayes HMM refinement of speaker assignments.
//!
//! Units are whitened PLDA-space vectors in chronological order. Each
//! speaker `s` has a latent `y_s ~ N(0, I)` and emits `x = sqrt(phi) * y_s +
//! e`, `e ~ N(0, I)`. The hidden speaker sequence is a Markov chain that
//! stays with probability `loop_p` and otherwise jumps uniformly to another
//! speaker. `fa` scales the acoustic log-likelihood and `fb` the speaker
//! prior; each iteration updates the Gaussian posteriors `q(y_s)`, then
//! runs forward-backward for the responsibilities, which is coordinate
//! ascent on the ELBO.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbxConfig {
    pub max_iters: usize,
    pub fa: f64,
    pub fb: f64,
    pub loop_p: f64,
    /// Sharpness of the softmax that turns initial hard labels into
    /// responsibilities.
    pub init_smoothing: f64,
    /// Speakers whose total responsibility falls below this are removed.
    pub drop_threshold: f64,
    /// Relative ELBO gain under which iteration stops.
    pub epsilon: f64,
}

impl Default for VbxConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            fa: 0.07,
            fb: 0.8,
            loop_p: 0.9,
            init_smoothing: 7.0,
            drop_threshold: 1e-3,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VbxState {
    /// `units x speakers` responsibilities.
    pub gamma: Array2<f64>,
    /// Posterior means of the latent speaker variables, `speakers x dim`.
    pub means: Array2<f64>,
    /// Posterior variances (diagonal), `speakers x dim`.
    pub variances: Array2<f64>,
    pub elbo_trace: Vec<f64>,
    /// Largest `|row sum - 1|` of gamma after each iteration.
    pub row_sum_errors: Vec<f64>,
    /// Speakers alive after each iteration.
    pub speaker_trace: Vec<usize>,
}

impl VbxState {
    /// Hard label per unit, renumbered contiguously by first appearance.
    pub fn labels(&self) -> Vec<usize> {
        let raw: Vec<usize> = self
            .gamma
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
            .collect();
        renumber(&raw)
    }
}

/// Map arbitrary labels to `0..n` in order of first appearance.
pub fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_transitions(speakers: usize, loop_p: f64) -> Array2<f64> {
    if speakers == 1 {
        return Array2::zeros((1, 1));
    }
    let jump = ((1.0 - loop_p) / (speakers - 1) as f64).ln();
    Array2::from_shape_fn((speakers, speakers), |(i, j)| if i == j { loop_p.ln() } else { jump })
}

/// Forward-backward in the log domain with a uniform initial distribution.
/// Returns the posteriors and the log marginal likelihood.
pub fn forward_backward(log_emission: &Array2<f64>, log_tr: &Array2<f64>) -> (Array2<f64>, f64) {
    let (t_len, s) = log_emission.dim();
    let log_init = -(s as f64).ln();
    let mut fwd = Array2::<f64>::zeros((t_len, s));
    let mut bwd = Array2::<f64>::zeros((t_len, s));
    for j in 0..s {
        fwd[[0, j]] = log_init + log_emission[[0, j]];
    }
    for t in 1..t_len {
        for j in 0..s {
            fwd[[t, j]] = log_emission[[t, j]] + logsumexp((0..s).map(|i| fwd[[t - 1, i]] + log_tr[[i, j]]));
        }
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..s {
            bwd[[t, i]] = logsumexp((0..s).map(|j| log_tr[[i, j]] + log_emission[[t + 1, j]] + bwd[[t + 1, j]]));
        }
    }
    let log_z = logsumexp(fwd.row(t_len - 1).iter().copied());
    let mut gamma = (&fwd + &bwd).mapv(|v| (v - log_z).exp());
    for mut row in gamma.rows_mut() {
        let sum = row.sum();
        row /= sum;
    }
    (gamma, log_z)
}

fn initial_gamma(labels: &[usize], speakers: usize, smoothing: f64) -> Array2<f64> {
    let mut gamma = Array2::zeros((labels.len(), speakers));
    for (t, &l) in labels.iter().enumerate() {
        let mut row = gamma.row_mut(t);
        row.fill(0.0);
        row[l] = smoothing;
        let max = smoothing.max(0.0);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    gamma
}

/// Refine `init_labels` over `units` (whitened PLDA vectors, chronological).
pub fn vbx_refine(
    units: &[Array1<f64>],
    phi: ArrayView1<'_, f64>,
    init_labels: &[usize],
    cfg: &VbxConfig,
) -> Result<VbxState> {
    let t_len = units.len();
    if t_len == 0 {
        return Err(Error::Empty("VB-HMM needs at least one unit".into()));
    }
    if init_labels.len() != t_len {
        return Err(Error::Shape(format!(
            "{} initial labels for {t_len} units",
            init_labels.len()
        )));
    }
    let dim = phi.len();
    if let Some(u) = units.iter().find(|u| u.len() != dim) {
        return Err(Error::Shape(format!("unit of dimension {}, expected {dim}", u.len())));
    }
    let init = renumber(init_labels);
    let speakers = init.iter().max().unwrap() + 1;

    let mut x = Array2::<f64>::zeros((t_len, dim));
    for (t, u) in units.iter().enumerate() {
        x.row_mut(t).assign(u);
    }
    let sqrt_phi = phi.mapv(f64::sqrt);
    let rho = &x * &sqrt_phi;
    // log N(x_t; 0, I)
    let g: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| -0.5 * (r.dot(&r) + dim as f64 * (2.0 * std::f64::consts::PI).ln()))
        .collect();

    let ratio = cfg.fa / cfg.fb;
    let mut gamma = initial_gamma(&init, speakers, cfg.init_smoothing);
    let mut state = VbxState {
        gamma: gamma.clone(),
        means: Array2::zeros((speakers, dim)),
        variances: Array2::ones((speakers, dim)),
        elbo_trace: Vec::new(),
        row_sum_errors: Vec::new(),
        speaker_trace: Vec::new(),
    };

    for iter in 0..cfg.max_iters.max(1) {
        let s = gamma.ncols();
        // q(y): diagonal Gaussian per speaker
        let counts = gamma.sum_axis(Axis(0));
        let inv_l = Array2::from_shape_fn((s, dim), |(k, d)| 1.0 / (1.0 + ratio * counts[k] * phi[d]));
        let means = &inv_l * &gamma.t().dot(&rho) * ratio;

        // q(Z): forward-backward on the expected log-likelihoods
        let quad = (&inv_l + &means.mapv(|a| a * a)).dot(&phi);
        let mut log_p = rho.dot(&means.t());
        for t in 0..t_len {
            for k in 0..s {
                log_p[[t, k]] = cfg.fa * (log_p[[t, k]] - 0.5 * quad[k] + g[t]);
            }
        }
        let (new_gamma, log_z) = forward_backward(&log_p, &log_transitions(s, cfg.loop_p));
        gamma = new_gamma;

        let kl: f64 = inv_l
            .iter()
            .zip(means.iter())
            .map(|(&l, &a)| l.ln() - l - a * a + 1.0)
            .sum();
        let elbo = log_z + cfg.fb * 0.5 * kl;
        if !elbo.is_finite() {
            return Err(Error::NonFiniteElbo { iteration: iter });
        }
        let row_err = gamma
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);

        let prev = state.elbo_trace.last().copied();
        state.elbo_trace.push(elbo);
        state.row_sum_errors.push(row_err);
        state.speaker_trace.push(s);
        state.means = means;
        state.variances = inv_l;
        state.gamma = gamma.clone();

        if let Some(prev) = prev {
            if elbo - prev < cfg.epsilon * prev.abs() {
                break;
            }
        }

        // drop speakers that no unit uses any more
        let totals = gamma.sum_axis(Axis(0));
        let keep: Vec<usize> = (0..s).filter(|&k| totals[k] >= cfg.drop_threshold).collect();
        if keep.len() < s && !keep.is_empty() {
            let mut kept = gamma.select(Axis(1), &keep);
            for mut row in kept.rows_mut() {
                let sum = row.sum();
                if sum > 0.0 {
                    row /= sum;
                } else {
                    row.fill(1.0 / keep.len() as f64);
                }
            }
            gamma = kept;
        }
    }
    Ok(state)
}
