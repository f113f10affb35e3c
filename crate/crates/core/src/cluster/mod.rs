//! Global speaker identities for every `(chunk, local speaker)` slot:
//! PLDA-scored AHC for initialization, VB-HMM for refinement.

pub mod ahc;
pub mod vbx;

use std::fmt;

use ndarray::{Array1, Array2};

pub use ahc::ahc;
pub use vbx::{forward_backward, renumber, vbx_refine, VbxConfig, VbxState};

use crate::config::PipelineConfig;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::plda::PldaModel;
use crate::powerset::MultilabelActivity;

/// Serialized value of an inactive slot.
pub const INACTIVE: i64 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotLabel {
    Speaker(usize),
    Inactive,
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotLabel::Speaker(id) => write!(f, "{id}"),
            SlotLabel::Inactive => write!(f, "{INACTIVE}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// `chunks x S`.
    pub labels: Array2<SlotLabel>,
    pub n_clusters: usize,
}

impl ClusterAssignment {
    /// Integer matrix with [`INACTIVE`] for empty slots.
    pub fn to_matrix(&self) -> Array2<i64> {
        self.labels.mapv(|l| match l {
            SlotLabel::Speaker(id) => id as i64,
            SlotLabel::Inactive => INACTIVE,
        })
    }

    pub fn num_inactive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == SlotLabel::Inactive).count()
    }
}

/// Result of [`assign`], keeping the intermediate stages.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub assignment: ClusterAssignment,
    /// `(chunk, slot)` of every clustered unit, chronological.
    pub units: Vec<(usize, usize)>,
    pub ahc_labels: Vec<usize>,
    pub vbx: Option<VbxState>,
}

impl VbxConfig {
    pub fn from_pipeline(cfg: &PipelineConfig) -> Self {
        Self {
            max_iters: cfg.vbx_max_iters,
            fa: cfg.vbx_fa,
            fb: cfg.vbx_fb,
            loop_p: cfg.vbx_loop_p,
            ..Self::default()
        }
    }
}

/// AHC followed by VB-HMM over already projected units.
pub fn cluster_units(
    projected: &[Array1<f64>],
    model: &PldaModel,
    cfg: &PipelineConfig,
) -> Result<(Vec<usize>, VbxState)> {
    let similarity = model.pairwise_llr(projected);
    let init = ahc(similarity.view(), cfg.ahc_threshold)?;
    let state = vbx_refine(projected, model.phi().view(), &init, &VbxConfig::from_pipeline(cfg))?;
    Ok((init, state))
}

/// Cluster every active slot. Slots without activity, or whose embedding
/// could not be computed, are marked inactive.
pub fn assign(
    embeddings: &EmbeddingSet,
    activity: &[MultilabelActivity],
    model: &PldaModel,
    cfg: &PipelineConfig,
) -> Result<Clustering> {
    let (chunks, speakers, _) = embeddings.dim();
    if activity.len() != chunks || activity.iter().any(|a| a.ncols() != speakers) {
        return Err(Error::Shape(format!(
            "activity for {} chunks does not match {chunks}x{speakers} embeddings",
            activity.len()
        )));
    }
    let mut units = Vec::new();
    let mut projected = Vec::new();
    for c in 0..chunks {
        for k in 0..speakers {
            if activity[c].column(k).sum() <= 0.0 {
                continue;
            }
            match embeddings.get(c, k) {
                Some(v) => {
                    units.push((c, k));
                    projected.push(model.project(v)?);
                }
                None => log::warn!("chunk {c} speaker {k}: active but no embedding, marked inactive"),
            }
        }
    }

    let mut labels = Array2::from_elem((chunks, speakers), SlotLabel::Inactive);
    if units.is_empty() {
        return Ok(Clustering {
            assignment: ClusterAssignment { labels, n_clusters: 0 },
            units,
            ahc_labels: Vec::new(),
            vbx: None,
        });
    }
    let (ahc_labels, state) = cluster_units(&projected, model, cfg)?;
    let final_labels = state.labels();
    for (&(c, k), &l) in units.iter().zip(&final_labels) {
        labels[[c, k]] = SlotLabel::Speaker(l);
    }
    let n_clusters = final_labels.iter().max().map_or(0, |m| m + 1);
    Ok(Clustering {
        assignment: ClusterAssignment { labels, n_clusters },
        units,
        ahc_labels,
        vbx: Some(state),
    })
}
