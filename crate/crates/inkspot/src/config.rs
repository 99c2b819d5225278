//! Run configuration: JSON file, dotted-key overrides, validation.

use std::path::{Path, PathBuf};

use inkspot_core::localize::AnchorMode;
use inkspot_core::sgmi::ScheduleKind;
use inkspot_core::topology::TopologyParams;
use inkspot_core::pipeline::DEFAULT_TOP_K;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionParams {
    pub schedule: ScheduleKind,
    /// Total steps T; defaults to the largest timestep in the trajectory.
    pub steps: Option<u32>,
    pub t_start_frac: f64,
    pub t_end_frac: f64,
    pub f0: f64,
    pub sigma_ratio: f64,
    /// Canvas pixels per latent cell for the stub glyph encoder.
    pub encoder_factor: usize,
}

impl Default for InjectionParams {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::RectifiedFlow,
            steps: None,
            t_start_frac: 0.8,
            t_end_frac: 0.6,
            f0: 0.15,
            sigma_ratio: 0.55,
            encoder_factor: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub attention_dir: PathBuf,
    pub latents_dir: PathBuf,
    /// PGM image, 2-D tensor (image) or 3-D tensor (ready latent).
    pub glyph: PathBuf,
    pub out_dir: PathBuf,
    /// Reference map overriding `ref.ftns` and the consensus default.
    pub reference: Option<PathBuf>,
    /// Ground-truth mask at latent resolution; adds an IoU to the report.
    pub truth: Option<PathBuf>,
    /// Target text, matched against the token texts.
    pub span: Option<String>,
    /// Explicit entity token indices (alternative to `span`).
    pub entity_tokens: Option<Vec<usize>>,
    /// Sink token indices; defaults to the attention sidecar.
    pub sink_tokens: Option<Vec<usize>>,
    pub anchor_mode: AnchorMode,
    pub top_k: usize,
    pub candidate_timesteps: Option<Vec<u32>>,
    pub candidate_layers: Option<Vec<u32>>,
    pub topology: TopologyParams,
    pub injection: InjectionParams,
    pub seed: u64,
    pub heatmaps: bool,
    /// Adds wall-clock stage timings to the report (breaks byte determinism).
    pub report_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            attention_dir: PathBuf::new(),
            latents_dir: PathBuf::new(),
            glyph: PathBuf::new(),
            out_dir: PathBuf::new(),
            reference: None,
            truth: None,
            span: None,
            entity_tokens: None,
            sink_tokens: None,
            anchor_mode: AnchorMode::EntitySink,
            top_k: DEFAULT_TOP_K,
            candidate_timesteps: None,
            candidate_layers: None,
            topology: TopologyParams::default(),
            injection: InjectionParams::default(),
            seed: 0,
            heatmaps: true,
            report_timings: false,
        }
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl RunConfig {
    /// Every violated parameter constraint; empty when valid. Paths are
    /// checked separately at run start.
    pub fn validate(&self) -> Vec<String> {
        let mut d = Vec::new();
        if self.top_k < 1 {
            d.push("K must be ≥ 1".to_owned());
        }
        if self.span.is_some() && self.entity_tokens.is_some() {
            d.push("set either span or entity_tokens, not both".to_owned());
        }
        let topo = &self.topology;
        if topo.radius < 1 {
            d.push("topology.radius must be ≥ 1".to_owned());
        }
        if topo.bins < 2 {
            d.push("topology.bins must be ≥ 2".to_owned());
        }
        if !(topo.eps > 0.0 && topo.eps.is_finite()) {
            d.push("topology.eps must be positive".to_owned());
        }
        if topo.min_pts < 1 {
            d.push("topology.min_pts must be ≥ 1".to_owned());
        }
        if !in_unit(topo.tau_quantile) {
            d.push("topology.tau_quantile must lie in [0, 1]".to_owned());
        }
        let inj = &self.injection;
        if !in_unit(inj.t_start_frac) || !in_unit(inj.t_end_frac) {
            d.push("injection window fractions must lie in [0, 1]".to_owned());
        }
        if inj.t_end_frac > inj.t_start_frac {
            d.push("injection.t_end_frac must not exceed injection.t_start_frac".to_owned());
        }
        if inj.steps == Some(0) {
            d.push("injection.steps (T) must be ≥ 1".to_owned());
        }
        if !(inj.f0 > 0.0 && inj.f0 <= 0.5) {
            d.push("injection.f0 must lie in (0, 0.5]".to_owned());
        }
        if !(inj.sigma_ratio > 0.0 && inj.sigma_ratio < 1.0) {
            d.push("injection.sigma_ratio must lie in (0, 1)".to_owned());
        }
        if inj.encoder_factor < 1 {
            d.push("injection.encoder_factor must be ≥ 1".to_owned());
        }
        d
    }

    /// Loads a config file, applies `key=value` overrides (values parsed as
    /// JSON when possible, else taken as strings) and resolves relative
    /// paths against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_value(file, overrides)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Builds a config from JSON plus overrides; unknown keys are errors.
    pub fn from_value(file: Value, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("serializable");
        merge(&mut value, file);
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.attention_dir);
        fix(&mut self.latents_dir);
        fix(&mut self.glyph);
        fix(&mut self.out_dir);
        if let Some(p) = self.reference.as_mut() {
            fix(p);
        }
        if let Some(p) = self.truth.as_mut() {
            fix(p);
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `a.b.c=value` override. The key must already exist.
pub fn apply_override(value: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let mut slot = &mut *value;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok(())
}
