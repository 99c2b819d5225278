//! Localization followed by windowed glyph injection over a trajectory.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, Latent};
use crate::localize::{
    aggregate_selected, consensus_reference, score_pairs, AnchorTokenSet, AttentionStack,
    Candidates, LocalizationMap, PairScore,
};
use crate::sgmi::{inject_step, InjectionConfig};
use crate::topology::{refine, Refinement, TopologyParams};

/// Default number of (timestep, layer) pairs aggregated.
pub const DEFAULT_TOP_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizeParams {
    pub top_k: usize,
    pub candidates: Candidates,
    pub topology: TopologyParams,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            candidates: Candidates::all(),
            topology: TopologyParams::default(),
        }
    }
}

/// Everything produced by one localization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// Every admitted pair, best first.
    pub pairs: Vec<PairScore>,
    /// The top-K prefix of `pairs`.
    pub selected: Vec<PairScore>,
    pub reference: Grid,
    pub aggregate: LocalizationMap,
    pub refinement: Refinement,
}

/// Runs pair scoring, top-K aggregation and topology refinement.
///
/// `reference` overrides the consensus reference map.
pub fn localize(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    reference: Option<&Grid>,
    params: &LocalizeParams,
    latent_h: usize,
    latent_w: usize,
) -> Result<Localization> {
    if params.top_k == 0 {
        return Err(crate::error::invalid("K", "must be at least 1"));
    }
    let reference = match reference {
        Some(r) => r.clone(),
        None => consensus_reference(stack, anchors, &params.candidates)?,
    };
    let pairs = score_pairs(stack, anchors, &reference, &params.candidates)?;
    let selected: Vec<PairScore> = pairs.iter().take(params.top_k).copied().collect();
    let aggregate = aggregate_selected(stack, anchors, &selected)?;
    let refinement = refine(&aggregate.map, &params.topology, latent_h, latent_w)?;
    Ok(Localization {
        pairs,
        selected,
        reference,
        aggregate,
        refinement,
    })
}

/// One step of an injected trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub timestep: u32,
    pub latent: Latent,
    /// λ(t), or `None` outside the injection window.
    pub lambda: Option<f64>,
}

/// Applies [`inject_step`] to every `(t, z_t)` of a recorded trajectory.
pub fn inject_trajectory(
    trajectory: &[(u32, Latent)],
    cfg: &InjectionConfig,
    z_ref: &Latent,
) -> Result<Vec<StepOutput>> {
    if let Some((_, z)) = trajectory.first() {
        if cfg.mask.shape() != (z.height(), z.width()) {
            return Err(Error::ShapeMismatch {
                what: "region mask vs latent",
                expected: alloc::format!("{}x{}", z.height(), z.width()),
                found: alloc::format!("{}x{}", cfg.mask.height(), cfg.mask.width()),
            });
        }
    }
    trajectory
        .iter()
        .map(|(t, z)| {
            let (latent, lambda) = inject_step(z, *t, cfg, z_ref)?;
            Ok(StepOutput {
                timestep: *t,
                latent,
                lambda,
            })
        })
        .collect()
}

/// Set IoU of two binary grids (`v ≠ 0` is foreground); 0 when both are empty.
pub fn mask_iou(a: &Grid, b: &Grid) -> Result<f64> {
    a.check_same_shape(b, "mask IoU")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}
