//! End-to-end run: localize once, inject across the recorded trajectory,
//! write artifacts.
//!
//! Outputs are first written to a staging directory inside the output
//! directory and moved into place only after every stage succeeded.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use inkspot_core::localize::{find_span_tokens, AnchorTokenSet, AttentionStack, Candidates, PairScore};
use inkspot_core::pipeline::{inject_trajectory, localize, mask_iou, LocalizeParams, Localization};
use inkspot_core::sgmi::{
    encode_glyph, AvgPoolEncoder, InjectionConfig, InjectionWindow, LogGaborKernel, NoiseSchedule,
};
use inkspot_core::topology::BBox;
use inkspot_core::{Grid, Latent};
use serde::{Deserialize, Serialize};

use crate::config::{InjectionParams, RunConfig};
use crate::error::{Error, Result};
use crate::pgm::{decode_pgm, write_heatmap};
use crate::store::{load_attention, load_reference, load_trajectory};
use crate::tensor_io::{decode, read_grid, write_tensor, Tensor};

pub const MASK_FILE: &str = "mask.ftns";
pub const REPORT_FILE: &str = "report.json";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const LAMBDA_FILE: &str = "lambda.csv";

pub fn blend_file_name(t: u32) -> String {
    format!("blend_t{t}.ftns")
}

/// A glyph input: an image to encode, or a latent used as is.
#[derive(Debug, Clone, PartialEq)]
pub enum Glyph {
    Image(Grid),
    Latent(Latent),
}

/// Reads a PGM image or a 2-D/3-D tensor file.
pub fn load_glyph(path: &Path) -> Result<Glyph> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"FTNS") {
        let t = decode(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        return match t.dims().len() {
            2 => Ok(Glyph::Image(t.into_grid().expect("2-D"))),
            3 => Ok(Glyph::Latent(t.into_latent().expect("3-D"))),
            n => Err(Error::format(path, format!("glyph tensor must be 2-D or 3-D, found {n}-D"))),
        };
    }
    decode_pgm(&bytes)
        .map(Glyph::Image)
        .map_err(|e| Error::format(path, e))
}

/// Resolves the anchor token set from a span or explicit indices.
pub fn resolve_anchors(
    stack: &AttentionStack,
    span: Option<&str>,
    entity: Option<&[usize]>,
    sink: Option<&[usize]>,
    mode: inkspot_core::localize::AnchorMode,
) -> Result<AnchorTokenSet> {
    let entity: Vec<usize> = match (span, entity) {
        (Some(s), _) => find_span_tokens(stack.token_texts(), s)?,
        (None, Some(e)) => e.to_vec(),
        (None, None) => Vec::new(),
    };
    let n = stack.n_text();
    let sink = sink.map_or_else(|| stack.sink_indices().to_vec(), <[usize]>::to_vec);
    if let Some(bad) = entity.iter().chain(&sink).find(|&&i| i >= n) {
        return Err(Error::Config(format!("token index {bad} out of range (N = {n})")));
    }
    let anchors = AnchorTokenSet::new(entity, sink, mode)?;
    if anchors.active().is_empty() {
        return Err(Error::Config(format!(
            "anchor mode {} selects no tokens (set span or entity_tokens, or sink indices)",
            mode.as_str()
        )));
    }
    Ok(anchors)
}

pub fn candidates_from(timesteps: Option<&[u32]>, layers: Option<&[u32]>) -> Candidates {
    Candidates {
        timesteps: timesteps.map(|v| v.iter().copied().collect::<BTreeSet<_>>()),
        layers: layers.map(|v| v.iter().copied().collect::<BTreeSet<_>>()),
    }
}

/// Region statistics of a localization, as reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub threshold_used: f32,
    pub n_regions: usize,
    pub tau: f64,
    /// Quality `q_i` of every region, in region order.
    pub q: Vec<f64>,
    pub region_sizes: Vec<usize>,
    pub chosen_region: usize,
    pub mask_area: usize,
    pub mask_bbox: BBox,
}

impl RegionStats {
    pub fn of(loc: &Localization) -> Self {
        let r = &loc.refinement;
        Self {
            threshold_used: r.binary.threshold_used,
            n_regions: r.regions.len(),
            tau: r.tau,
            q: r.qualities.clone(),
            region_sizes: r.regions.iter().map(|g| g.len()).collect(),
            chosen_region: r.mask.region_index,
            mask_area: r.mask.area(),
            mask_bbox: r.mask.bbox(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub timestep: u32,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub localize_s: f64,
    pub inject_s: f64,
    pub write_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub anchor_mode: inkspot_core::localize::AnchorMode,
    pub entity_tokens: Vec<usize>,
    pub sink_tokens: Vec<usize>,
    /// Every scored pair, best first.
    pub pairs: Vec<PairScore>,
    pub selected: Vec<PairScore>,
    pub regions: RegionStats,
    pub latent_shape: [usize; 3],
    pub total_steps: u32,
    pub window: [u32; 2],
    pub lambda: Vec<LambdaStep>,
    /// IoU of the mask against the supplied ground truth.
    pub truth_iou: Option<f64>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

/// Result of the injection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub window: InjectionWindow,
    pub total_steps: u32,
    /// `(t, λ, z̃)` for trajectory steps inside the window, descending `t`.
    pub blends: Vec<(u32, f64, Latent)>,
}

/// Builds the glyph reference latent for a mask at latent resolution.
pub fn glyph_latent(glyph: &Glyph, mask: &Grid, channels: usize, factor: usize) -> Result<Latent> {
    match glyph {
        Glyph::Latent(z) => {
            if (z.height(), z.width()) != mask.shape() || z.channels() != channels {
                return Err(Error::Config(format!(
                    "glyph latent {:?} does not match trajectory latents ({channels}, {}, {})",
                    z.shape(),
                    mask.height(),
                    mask.width()
                )));
            }
            Ok(z.clone())
        }
        Glyph::Image(img) => Ok(encode_glyph(img, mask, &AvgPoolEncoder { factor, channels })?),
    }
}

/// Stage 2 alone: everything after the mask is known.
pub fn inject_stage(
    trajectory: &[(u32, Latent)],
    mask: &Grid,
    glyph: &Glyph,
    params: &InjectionParams,
    seed: u64,
) -> Result<Injected> {
    let (c, h, w) = trajectory
        .first()
        .map(|(_, z)| z.shape())
        .ok_or_else(|| Error::Config("empty trajectory".into()))?;
    if mask.shape() != (h, w) {
        return Err(Error::Config(format!(
            "mask {}x{} does not match latent {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    let max_t = trajectory.iter().map(|(t, _)| *t).max().unwrap_or(0);
    let total_steps = params.steps.unwrap_or(max_t);
    if max_t > total_steps {
        return Err(Error::Config(format!("trajectory step {max_t} exceeds T = {total_steps}")));
    }
    let window = InjectionWindow::from_fractions(total_steps, params.t_start_frac, params.t_end_frac)?;
    let z_ref = glyph_latent(glyph, mask, c, params.encoder_factor)?;
    let cfg = InjectionConfig {
        window,
        mask: mask.clone(),
        kernel: LogGaborKernel::build(h, w, params.f0, params.sigma_ratio)?,
        schedule: NoiseSchedule::new(params.schedule, total_steps)?,
        seed,
    };
    let in_window: Vec<(u32, Latent)> = trajectory
        .iter()
        .rev()
        .filter(|(t, _)| window.contains(*t))
        .cloned()
        .collect();
    if in_window.is_empty() && window.start > window.end {
        log::warn!(
            "no trajectory step falls inside the injection window [{}, {}]",
            window.end,
            window.start
        );
    }
    let blends = inject_trajectory(&in_window, &cfg, &z_ref)?
        .into_iter()
        .filter_map(|s| s.lambda.map(|l| (s.timestep, l, s.latent)))
        .collect();
    Ok(Injected {
        window,
        total_steps,
        blends,
    })
}

/// Files staged in a private directory and moved into the target directory
/// on [`Staging::commit`]; dropped staging leaves the target untouched.
pub struct Staging {
    dir: tempfile::TempDir,
    target: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        fs::create_dir_all(target).map_err(|e| Error::io(target, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".inkspot-staging-")
            .tempdir_in(target)
            .map_err(|e| Error::io(target, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path for a new staged entry. `name` may contain `/`; entries whose
    /// first component is a directory are moved as a whole.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.path().join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let top = name.split('/').next().unwrap_or(name).to_owned();
        if !self.files.contains(&top) {
            self.files.push(top);
        }
        Ok(p)
    }

    pub fn write_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let p = self.path(name)?;
        Ok(write_tensor(&p, t)?)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn write_heatmap(&mut self, name: &str, map: &Grid) -> Result<()> {
        let p = self.path(name)?;
        write_heatmap(&p, map).map_err(|e| Error::io(&p, e))
    }

    /// Sorted names of everything staged so far (plus `extra`).
    pub fn manifest(&self, extra: &[&str]) -> Vec<String> {
        let mut names: Vec<String> = self.files.iter().cloned().chain(extra.iter().map(|s| s.to_string())).collect();
        names.sort();
        names.dedup();
        names
    }

    /// Moves every staged entry into the target. Existing files are
    /// replaced; an existing directory entry is an error, checked up front.
    pub fn commit(self) -> Result<Vec<String>> {
        let mut names = self.files.clone();
        names.sort();
        for name in &names {
            let dst = self.target.join(name);
            if self.dir.path().join(name).is_dir() && dst.exists() {
                return Err(Error::io(
                    &dst,
                    std::io::Error::new(std::io::ErrorKind::AlreadyExists, "refusing to replace existing directory"),
                ));
            }
        }
        for name in &names {
            let dst = self.target.join(name);
            fs::rename(self.dir.path().join(name), &dst).map_err(|e| Error::io(&dst, e))?;
        }
        Ok(names)
    }
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory write")
}

pub fn pairs_csv(pairs: &[PairScore], k: usize) -> Vec<u8> {
    csv_bytes(&["timestep", "layer", "iou", "selected"], |w| {
        for (i, p) in pairs.iter().enumerate() {
            w.write_record([
                p.timestep.to_string(),
                p.layer.to_string(),
                format!("{:.17}", p.iou),
                ((i < k) as u8).to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn lambda_csv(steps: &[LambdaStep]) -> Vec<u8> {
    csv_bytes(&["timestep", "lambda"], |w| {
        for s in steps {
            w.write_record([s.timestep.to_string(), format!("{:.17}", s.lambda)])?;
        }
        Ok(())
    })
}

/// Stage-1 heatmaps: aggregate, smoothed aggregate, reference, each selected pair.
pub fn stage_heatmaps(
    staging: &mut Staging,
    loc: &Localization,
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
) -> Result<()> {
    staging.write_heatmap("heat_aggregate.pgm", &loc.aggregate.map)?;
    staging.write_heatmap("heat_smoothed.pgm", &loc.refinement.smoothed)?;
    staging.write_heatmap("heat_reference.pgm", &loc.reference)?;
    for p in &loc.selected {
        let e = stack.entry(p.timestep, p.layer).expect("selected from stack");
        let m = inkspot_core::localize::anchor_map(e, anchors)?;
        staging.write_heatmap(&format!("heat_t{}_l{}.pgm", p.timestep, p.layer), &m.map)?;
    }
    Ok(())
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{what} path is not set")));
    }
    if !path.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let diagnostics = cfg.validate();
    if !diagnostics.is_empty() {
        return Err(Error::Config(diagnostics.join("; ")));
    }
    require_exists(&cfg.attention_dir, "attention directory")?;
    require_exists(&cfg.latents_dir, "latents directory")?;
    require_exists(&cfg.glyph, "glyph file")?;
    if let Some(p) = &cfg.reference {
        require_exists(p, "reference map")?;
    }
    if let Some(p) = &cfg.truth {
        require_exists(p, "ground-truth mask")?;
    }
    if cfg.out_dir.as_os_str().is_empty() {
        return Err(Error::Config("output directory path is not set".into()));
    }

    let clock = Instant::now();
    let stack = load_attention(&cfg.attention_dir)?;
    let trajectory = load_trajectory(&cfg.latents_dir)?;
    let glyph = load_glyph(&cfg.glyph)?;
    let reference = match &cfg.reference {
        Some(p) => Some(read_grid(p)?),
        None => load_reference(&cfg.attention_dir)?,
    };
    let truth = cfg.truth.as_deref().map(read_grid).transpose()?;
    let load_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let anchors = resolve_anchors(
        &stack,
        cfg.span.as_deref(),
        cfg.entity_tokens.as_deref(),
        cfg.sink_tokens.as_deref(),
        cfg.anchor_mode,
    )?;
    let (c, lh, lw) = trajectory[0].1.shape();
    let params = LocalizeParams {
        top_k: cfg.top_k,
        candidates: candidates_from(cfg.candidate_timesteps.as_deref(), cfg.candidate_layers.as_deref()),
        topology: cfg.topology,
    };
    let loc = localize(&stack, &anchors, reference.as_ref(), &params, lh, lw)?;
    let mask = &loc.refinement.mask.mask;
    let truth_iou = truth.as_ref().map(|t| mask_iou(mask, t)).transpose()?;
    let localize_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let injected = inject_stage(&trajectory, mask, &glyph, &cfg.injection, cfg.seed)?;
    let inject_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut staging = Staging::new(&cfg.out_dir)?;
    staging.write_tensor(MASK_FILE, &Tensor::from(mask))?;
    let mut lambda = Vec::new();
    for (t, l, z) in &injected.blends {
        staging.write_tensor(&blend_file_name(*t), &Tensor::from(z))?;
        lambda.push(LambdaStep {
            timestep: *t,
            lambda: *l,
        });
    }
    staging.write_bytes(PAIRS_FILE, &pairs_csv(&loc.pairs, loc.selected.len()))?;
    staging.write_bytes(LAMBDA_FILE, &lambda_csv(&lambda))?;
    if cfg.heatmaps {
        stage_heatmaps(&mut staging, &loc, &stack, &anchors)?;
    }
    let mut report = RunReport {
        anchor_mode: anchors.mode(),
        entity_tokens: anchors.entity().to_vec(),
        sink_tokens: anchors.sink().to_vec(),
        pairs: loc.pairs.clone(),
        selected: loc.selected.clone(),
        regions: RegionStats::of(&loc),
        latent_shape: [c, lh, lw],
        total_steps: injected.total_steps,
        window: [injected.window.start, injected.window.end],
        lambda,
        truth_iou,
        files: staging.manifest(&[REPORT_FILE]),
        timings: None,
    };
    if cfg.report_timings {
        report.timings = Some(Timings {
            load_s,
            localize_s,
            inject_s,
            write_s: clock.elapsed().as_secs_f64(),
        });
    }
    let mut json = serde_json::to_vec_pretty(&report).expect("serializable");
    json.push(b'\n');
    staging.write_bytes(REPORT_FILE, &json)?;
    staging.commit()?;
    Ok(report)
}
