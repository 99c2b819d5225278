//! Synthetic attention and latent trajectories with known ground truth.
//!
//! Entity tokens attend to a Gaussian-smoothed rectangular text region with
//! a sharpness that is low early (t ≈ T), peaks mid-trajectory and falls off
//! late; sink tokens attend to the same region with a fixed medium sharpness
//! and a tenth of the entity noise. All randomness is seeded.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::grid::{Grid, Latent};
use crate::localize::{
    aggregate_selected, anchor_map, soft_iou, AnchorMode, AnchorTokenSet, AttentionEntry,
    AttentionStack, PairScore,
};
use crate::pipeline::{localize, mask_iou, LocalizeParams};
use crate::sgmi::{encode_glyph, AvgPoolEncoder, NoiseSchedule};
use crate::stats::mean_and_variance;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Per-step sharpness κ_t of entity attention.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum ConcentrationProfile {
    /// Same κ at every step.
    Constant { kappa: f64 },
    /// `floor + (peak − floor)·exp(−½((t/T − center)/width)²)`.
    Arc {
        floor: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
}

impl ConcentrationProfile {
    pub fn kappa(&self, t: u32, total: u32) -> f64 {
        match *self {
            ConcentrationProfile::Constant { kappa } => kappa,
            ConcentrationProfile::Arc {
                floor,
                peak,
                center,
                width,
            } => {
                let z = (t as f64 / total as f64 - center) / width;
                floor + (peak - floor) * libm::exp(-0.5 * z * z)
            }
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SimSpec {
    pub height: usize,
    pub width: usize,
    pub steps: u32,
    pub layers: u32,
    pub token_texts: Vec<String>,
    pub entity: Vec<usize>,
    pub sink: Vec<usize>,
    pub region: Rect,
    pub profile: ConcentrationProfile,
    /// Fixed sharpness of sink-token attention.
    pub sink_kappa: f64,
    /// Relative sharpness spread across layers (0 = all layers alike).
    pub layer_spread: f64,
    /// Standard deviation of additive entity-token noise; sinks get a tenth.
    pub noise: f64,
    /// Amplitude of uniform attention on non-anchor tokens.
    pub background: f64,
    pub latent_channels: usize,
    /// Latent cells per patch along each axis.
    pub latent_scale: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        let tokens = [
            "<s>", "a", "shop", "sign", "that", "says", "Grand", "Open", "ing", "in", "neon",
            "</s>",
        ];
        Self {
            height: 64,
            width: 64,
            steps: 50,
            layers: 8,
            token_texts: tokens.iter().map(|s| String::from(*s)).collect(),
            entity: vec![6, 7, 8],
            sink: vec![0, 11],
            region: Rect {
                x0: 16,
                y0: 26,
                x1: 48,
                y1: 36,
            },
            profile: ConcentrationProfile::Arc {
                floor: 0.35,
                peak: 3.0,
                center: 0.55,
                width: 0.15,
            },
            sink_kappa: 1.5,
            layer_spread: 0.3,
            noise: 0.35,
            background: 0.05,
            latent_channels: 4,
            latent_scale: 1,
            seed: 0,
        }
    }
}

impl SimSpec {
    /// [`SimSpec::default`] without noise.
    pub fn noiseless() -> Self {
        Self {
            noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.steps == 0 || self.layers == 0 {
            return Err(invalid("sim spec", "grid, steps and layers must be positive"));
        }
        let r = &self.region;
        if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > self.width || r.y1 > self.height {
            return Err(invalid("sim spec", "region must be a non-empty rectangle inside the grid"));
        }
        let n = self.token_texts.len();
        if self.entity.is_empty() || self.sink.is_empty() {
            return Err(invalid("sim spec", "entity and sink token sets must be non-empty"));
        }
        if self.entity.iter().chain(&self.sink).any(|&i| i >= n) {
            return Err(invalid("sim spec", "token index out of range"));
        }
        if self.entity.iter().any(|i| self.sink.contains(i)) {
            return Err(invalid("sim spec", "entity and sink sets must be disjoint"));
        }
        let positive = |k: f64| k > 0.0 && k.is_finite();
        let profile_ok = match self.profile {
            ConcentrationProfile::Constant { kappa } => positive(kappa),
            ConcentrationProfile::Arc {
                floor,
                peak,
                width,
                ..
            } => positive(floor) && positive(peak) && positive(width),
        };
        if !profile_ok || !positive(self.sink_kappa) {
            return Err(invalid("sim spec", "sharpness values must be positive"));
        }
        if !(self.noise >= 0.0) || !(self.background >= 0.0) || !(0.0..1.0).contains(&self.layer_spread) {
            return Err(invalid("sim spec", "noise, background or layer spread out of range"));
        }
        if self.latent_channels == 0 || self.latent_scale == 0 {
            return Err(invalid("sim spec", "latent channels and scale must be positive"));
        }
        Ok(())
    }

    pub fn latent_shape(&self) -> (usize, usize) {
        (self.height * self.latent_scale, self.width * self.latent_scale)
    }

    pub fn anchors(&self, mode: AnchorMode) -> Result<AnchorTokenSet> {
        AnchorTokenSet::new(self.entity.iter().copied(), self.sink.iter().copied(), mode)
    }

    /// Layer sharpness multiplier: mid layers sharpest.
    fn layer_gain(&self, layer: u32) -> f64 {
        if self.layers < 2 {
            return 1.0;
        }
        let pos = layer as f64 / (self.layers - 1) as f64;
        1.0 - self.layer_spread * libm::fabs(2.0 * pos - 1.0)
    }

    /// Entity sharpness at `(t, layer)`.
    pub fn entity_kappa(&self, t: u32, layer: u32) -> f64 {
        self.profile.kappa(t, self.steps) * self.layer_gain(layer)
    }
}

/// Ground truth of a synthetic run.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Region indicator on the patch grid.
    pub mask: Grid,
    /// Region indicator at latent resolution.
    pub latent_mask: Grid,
    /// `(t, layer, κ)` for every generated entry.
    pub concentration: Vec<(u32, u32, f64)>,
}

/// Region indicator smoothed by an isotropic Gaussian of width `1/κ`,
/// sampled at the center of pixel `(y, x)`.
fn blob(region: &Rect, y: usize, x: usize, kappa: f64) -> f64 {
    let cover = |lo: usize, hi: usize, c: f64| {
        let s = kappa * core::f64::consts::FRAC_1_SQRT_2;
        0.5 * (libm::erf(s * (hi as f64 - c)) - libm::erf(s * (lo as f64 - c)))
    };
    cover(region.x0, region.x1, x as f64 + 0.5) * cover(region.y0, region.y1, y as f64 + 0.5)
}

/// Region indicator grids; independent of the seed.
pub fn ground_truth(spec: &SimSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let r = spec.region;
    let mask = Grid::from_fn(spec.height, spec.width, |y, x| r.contains(y, x) as u8 as f32);
    let s = spec.latent_scale;
    let (lh, lw) = spec.latent_shape();
    let latent_mask = Grid::from_fn(lh, lw, |y, x| r.contains(y / s, x / s) as u8 as f32);
    let mut concentration = Vec::new();
    for t in 1..=spec.steps {
        for l in 0..spec.layers {
            concentration.push((t, l, spec.entity_kappa(t, l)));
        }
    }
    Ok(GroundTruth {
        mask,
        latent_mask,
        concentration,
    })
}

/// Generates attention for steps `1..=T` and every layer.
pub fn generate(spec: &SimSpec) -> Result<(AttentionStack, GroundTruth)> {
    let truth = ground_truth(spec)?;
    let (h, w, n) = (spec.height, spec.width, spec.token_texts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sink_noise = spec.noise / 10.0;
    let sink_blob: Vec<f64> = (0..h * w)
        .map(|i| blob(&spec.region, i / w, i % w, spec.sink_kappa))
        .collect();

    let mut entries = Vec::with_capacity((spec.steps * spec.layers) as usize);
    for t in 1..=spec.steps {
        for l in 0..spec.layers {
            let kappa = spec.entity_kappa(t, l);
            let mut data = vec![0.0f32; h * w * n];
            for y in 0..h {
                for x in 0..w {
                    let entity_blob = blob(&spec.region, y, x, kappa);
                    let cell = &mut data[(y * w + x) * n..(y * w + x + 1) * n];
                    for (k, v) in cell.iter_mut().enumerate() {
                        let value = if spec.entity.contains(&k) {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            entity_blob + spec.noise * e
                        } else if spec.sink.contains(&k) {
                            let e: f64 = StandardNormal.sample(&mut rng);
                            sink_blob[y * w + x] + sink_noise * e
                        } else {
                            spec.background * rng.random::<f64>()
                        };
                        *v = value.max(0.0) as f32;
                    }
                }
            }
            entries.push(AttentionEntry::new(t, l, h, w, n, data)?);
        }
    }
    let stack = AttentionStack::new(h, w, spec.token_texts.clone(), spec.sink.clone(), entries)?;
    Ok((stack, truth))
}

/// Heuristic sink detection: tokens whose attention mass varies least over
/// timesteps (averaged over layers), lowest `fraction` of tokens, at least one.
/// For evaluation on synthetic data only.
pub fn heuristic_sink_tokens(stack: &AttentionStack, fraction: f64) -> Vec<usize> {
    let n = stack.n_text();
    let layers = stack.layers();
    let mut variance = vec![0.0f64; n];
    for &l in &layers {
        for (k, var) in variance.iter_mut().enumerate() {
            let masses: Vec<f64> = stack
                .entries()
                .iter()
                .filter(|e| e.layer == l)
                .map(|e| e.token_mass(k))
                .collect();
            let (mean, v) = mean_and_variance(&masses);
            // Relative spread so that low-mass tokens do not trivially win.
            *var += if mean > 0.0 { v / (mean * mean) } else { f64::INFINITY };
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| variance[a].total_cmp(&variance[b]).then(a.cmp(&b)));
    let count = (libm::floor(n as f64 * fraction) as usize).max(1);
    let mut out: Vec<usize> = order.into_iter().take(count).collect();
    out.sort_unstable();
    out
}

/// IoU of a localization result against ground truth at grid resolution;
/// 0 when localization fails.
pub fn localization_iou(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    params: &LocalizeParams,
    truth: &GroundTruth,
) -> Result<f64> {
    match localize(stack, anchors, None, params, stack.height(), stack.width()) {
        Ok(loc) => mask_iou(&loc.refinement.mask.mask, &truth.mask),
        Err(crate::Error::NoRegion) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Soft IoU against ground truth of the layer-averaged map at each step,
/// in ascending step order.
pub fn per_timestep_iou(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    truth: &GroundTruth,
) -> Result<Vec<(u32, f64)>> {
    let mut out = Vec::new();
    for t in stack.timesteps() {
        let pairs: Vec<PairScore> = stack
            .entries()
            .iter()
            .filter(|e| e.timestep == t)
            .map(|e| PairScore {
                timestep: e.timestep,
                layer: e.layer,
                iou: 0.0,
            })
            .collect();
        let map = aggregate_selected(stack, anchors, &pairs)?;
        out.push((t, soft_iou(&map.map, &truth.mask)?));
    }
    Ok(out)
}

/// Summary of one anchor mode across trials.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModeSummary {
    pub mode: AnchorMode,
    /// Mean pipeline-mask IoU over trials.
    pub mean_iou: f64,
    /// Per-trial pipeline-mask IoU.
    pub trial_iou: Vec<f64>,
    /// Mean over trials of the variance of the per-step IoU curve.
    pub timestep_variance: f64,
    /// Mean per-step IoU curve over trials, `(t, iou)` ascending in `t`.
    pub curve: Vec<(u32, f64)>,
}

impl ModeSummary {
    pub fn timestep_std(&self) -> f64 {
        libm::sqrt(self.timestep_variance)
    }
}

/// Runs localization under each anchor mode on the same trajectories.
/// Trial `i` uses seed `spec.seed + i`.
pub fn token_set_experiment(
    spec: &SimSpec,
    trials: usize,
    params: &LocalizeParams,
) -> Result<Vec<ModeSummary>> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let modes = AnchorMode::ALL;
    let mut trial_iou = vec![Vec::with_capacity(trials); modes.len()];
    let mut variances = vec![Vec::with_capacity(trials); modes.len()];
    let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); modes.len()];
    let mut steps: Vec<u32> = Vec::new();
    for i in 0..trials {
        let trial_spec = SimSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        let (stack, truth) = generate(&trial_spec)?;
        for (m, &mode) in modes.iter().enumerate() {
            let anchors = spec.anchors(mode)?;
            trial_iou[m].push(localization_iou(&stack, &anchors, params, &truth)?);
            let curve = per_timestep_iou(&stack, &anchors, &truth)?;
            let values: Vec<f64> = curve.iter().map(|c| c.1).collect();
            variances[m].push(mean_and_variance(&values).1);
            if steps.is_empty() {
                steps = curve.iter().map(|c| c.0).collect();
            }
            curves[m].push(values);
        }
    }
    Ok(modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let curve = steps
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let at_t: Vec<f64> = curves[m].iter().map(|c| c[j]).collect();
                    (t, mean_and_variance(&at_t).0)
                })
                .collect();
            ModeSummary {
                mode,
                mean_iou: mean_and_variance(&trial_iou[m]).0,
                trial_iou: trial_iou[m].clone(),
                timestep_variance: mean_and_variance(&variances[m]).0,
                curve,
            }
        })
        .collect())
}

/// Seed-independent clean scene latent: a smooth background plus the
/// encoded glyph inside the ground-truth region at half strength.
pub fn clean_scene(spec: &SimSpec, glyph: &Grid) -> Result<Latent> {
    let truth = ground_truth(spec)?;
    let (lh, lw) = spec.latent_shape();
    let encoder = AvgPoolEncoder {
        factor: 8,
        channels: spec.latent_channels,
    };
    let text = encode_glyph(glyph, &truth.latent_mask, &encoder)?;
    let mut scene = Latent::zeros(spec.latent_channels, lh, lw);
    for c in 0..spec.latent_channels {
        let fc = (c + 1) as f64;
        let text_c = text.channel(c).to_vec();
        for (i, v) in scene.channel_mut(c).iter_mut().enumerate() {
            let (y, x) = ((i / lw) as f64 / lh as f64, (i % lw) as f64 / lw as f64);
            let bg = 0.5 * libm::sin(core::f64::consts::TAU * fc * x) * libm::cos(core::f64::consts::TAU * y);
            *v = (bg + 0.5 * text_c[i] as f64) as f32;
        }
    }
    Ok(scene)
}

/// Toy trajectory `z_t = α_t·clean + σ_t·ε` for `t = 0..=T`, with one seeded
/// ε shared by all steps. Returned in ascending `t`.
pub fn toy_denoise_trajectory(
    spec: &SimSpec,
    glyph: &Grid,
    schedule: &NoiseSchedule,
) -> Result<Vec<(u32, Latent)>> {
    if schedule.total_steps != spec.steps {
        return Err(invalid("schedule", "T must match the sim spec"));
    }
    let clean = clean_scene(spec, glyph)?;
    let (c, h, w) = clean.shape();
    // Stream 1 keeps the trajectory noise apart from the attention generator.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let eps: Vec<f64> = (0..c * h * w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(spec.steps as usize + 1);
    for t in 0..=spec.steps {
        let (alpha, sigma) = schedule.coefficients(t)?;
        let data = if t == 0 && alpha == 1.0 && sigma == 0.0 {
            clean.as_slice().to_vec()
        } else {
            clean
                .as_slice()
                .iter()
                .zip(&eps)
                .map(|(&z, &e)| (alpha * z as f64 + sigma * e) as f32)
                .collect()
        };
        out.push((t, Latent::new(c, h, w, data)?));
    }
    Ok(out)
}

/// Anchor map of one generated entry; exposed for diagnostics.
pub fn entry_map(stack: &AttentionStack, t: u32, layer: u32, anchors: &AnchorTokenSet) -> Result<Grid> {
    let e = stack.entry(t, layer).ok_or(crate::Error::UnknownPair { timestep: t, layer })?;
    Ok(anchor_map(e, anchors)?.map)
}
