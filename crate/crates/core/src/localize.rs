//! Attention-based localization of a text span.
//!
//! Raw image-to-text attention is averaged over an anchor token set, min-max
//! normalized per (timestep, layer), scored against a reference map with a
//! soft IoU, and the top-K pairs are averaged into one localization map.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::grid::{normalize_f64, Grid};

/// Head-averaged attention of one (timestep, layer) pair, laid out
/// `height × width × n_text` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEntry {
    pub timestep: u32,
    pub layer: u32,
    height: usize,
    width: usize,
    n_text: usize,
    data: Vec<f32>,
}

impl AttentionEntry {
    pub fn new(
        timestep: u32,
        layer: u32,
        height: usize,
        width: usize,
        n_text: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || n_text == 0 {
            return Err(invalid("attention entry", "dimensions must be positive"));
        }
        if data.len() != height * width * n_text {
            return Err(Error::ShapeMismatch {
                what: "attention entry",
                expected: format!("{}", height * width * n_text),
                found: format!("{}", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidStack(format!(
                "attention at (t={timestep}, l={layer}) has invalid value {bad}"
            )));
        }
        Ok(Self {
            timestep,
            layer,
            height,
            width,
            n_text,
            data,
        })
    }

    #[inline]
    pub fn key(&self) -> (u32, u32) {
        (self.timestep, self.layer)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.n_text)
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize, token: usize) -> f32 {
        self.data[(y * self.width + x) * self.n_text + token]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Total attention mass a token receives over the grid.
    pub fn token_mass(&self, token: usize) -> f64 {
        self.data
            .iter()
            .skip(token)
            .step_by(self.n_text)
            .map(|&v| v as f64)
            .sum()
    }
}

/// Per-(timestep, layer) attention for one prompt, plus token metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    height: usize,
    width: usize,
    token_texts: Vec<String>,
    sink_indices: Vec<usize>,
    entries: Vec<AttentionEntry>,
}

impl AttentionStack {
    /// Builds a stack; entries are kept sorted by `(timestep, layer)`.
    pub fn new(
        height: usize,
        width: usize,
        token_texts: Vec<String>,
        sink_indices: Vec<usize>,
        mut entries: Vec<AttentionEntry>,
    ) -> Result<Self> {
        let n_text = token_texts.len();
        if n_text == 0 {
            return Err(Error::InvalidStack("token list is empty".into()));
        }
        for e in &entries {
            if e.dims() != (height, width, n_text) {
                return Err(Error::InvalidStack(format!(
                    "entry (t={}, l={}) has dims {:?}, expected {:?}",
                    e.timestep,
                    e.layer,
                    e.dims(),
                    (height, width, n_text)
                )));
            }
        }
        if let Some(&s) = sink_indices.iter().find(|&&s| s >= n_text) {
            return Err(Error::InvalidStack(format!(
                "sink index {s} out of range for {n_text} tokens"
            )));
        }
        entries.sort_by_key(|e| e.key());
        if let Some(w) = entries.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::InvalidStack(format!(
                "duplicate pair (t={}, l={})",
                w[0].timestep, w[0].layer
            )));
        }
        Ok(Self {
            height,
            width,
            token_texts,
            sink_indices,
            entries,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_text(&self) -> usize {
        self.token_texts.len()
    }

    pub fn token_texts(&self) -> &[String] {
        &self.token_texts
    }

    pub fn sink_indices(&self) -> &[usize] {
        &self.sink_indices
    }

    pub fn entries(&self) -> &[AttentionEntry] {
        &self.entries
    }

    pub fn entry(&self, timestep: u32, layer: u32) -> Option<&AttentionEntry> {
        self.entries
            .binary_search_by_key(&(timestep, layer), |e| e.key())
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn timesteps(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.timestep).collect()
    }

    pub fn layers(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.layer).collect()
    }
}

/// Which tokens are averaged into a localization map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AnchorMode {
    EntityOnly,
    SinkOnly,
    EntitySink,
}

impl AnchorMode {
    pub const ALL: [AnchorMode; 3] = [
        AnchorMode::EntityOnly,
        AnchorMode::SinkOnly,
        AnchorMode::EntitySink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnchorMode::EntityOnly => "entity-only",
            AnchorMode::SinkOnly => "sink-only",
            AnchorMode::EntitySink => "entity-sink",
        }
    }
}

impl FromStr for AnchorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity-only" | "entity" => Ok(AnchorMode::EntityOnly),
            "sink-only" | "sink" => Ok(AnchorMode::SinkOnly),
            "entity-sink" | "both" => Ok(AnchorMode::EntitySink),
            other => Err(invalid(
                "anchor mode",
                format!("{other:?} (expected entity-only, sink-only or entity-sink)"),
            )),
        }
    }
}

/// Span tokens, sink-like tokens and the mode that combines them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorTokenSet {
    entity: Vec<usize>,
    sink: Vec<usize>,
    mode: AnchorMode,
}

impl AnchorTokenSet {
    pub fn new(
        entity: impl IntoIterator<Item = usize>,
        sink: impl IntoIterator<Item = usize>,
        mode: AnchorMode,
    ) -> Result<Self> {
        let entity: BTreeSet<usize> = entity.into_iter().collect();
        let sink: BTreeSet<usize> = sink.into_iter().collect();
        if let Some(i) = entity.intersection(&sink).next() {
            return Err(invalid(
                "anchor token set",
                format!("token {i} is both entity and sink"),
            ));
        }
        Ok(Self {
            entity: entity.into_iter().collect(),
            sink: sink.into_iter().collect(),
            mode,
        })
    }

    pub fn mode(&self) -> AnchorMode {
        self.mode
    }

    pub fn with_mode(&self, mode: AnchorMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn entity(&self) -> &[usize] {
        &self.entity
    }

    pub fn sink(&self) -> &[usize] {
        &self.sink
    }

    /// Sorted token indices active under the current mode.
    pub fn active(&self) -> Vec<usize> {
        let mut v: Vec<usize> = match self.mode {
            AnchorMode::EntityOnly => self.entity.clone(),
            AnchorMode::SinkOnly => self.sink.clone(),
            AnchorMode::EntitySink => self.entity.iter().chain(&self.sink).copied().collect(),
        };
        v.sort_unstable();
        v
    }
}

/// Where a localization map came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapSource {
    Single { timestep: u32, layer: u32 },
    Aggregate(Vec<(u32, u32)>),
}

/// A `[0, 1]` field over the patch grid for one target span.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    pub map: Grid,
    pub source: MapSource,
}

/// Soft IoU score of one (timestep, layer) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairScore {
    pub timestep: u32,
    pub layer: u32,
    pub iou: f64,
}

impl PairScore {
    /// Ranking order: higher IoU first, then larger timestep, then smaller layer.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .iou
            .total_cmp(&self.iou)
            .then(other.timestep.cmp(&self.timestep))
            .then(self.layer.cmp(&other.layer))
    }
}

/// Restricts which (timestep, layer) pairs are scored. `None` admits all.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Candidates {
    pub timesteps: Option<BTreeSet<u32>>,
    pub layers: Option<BTreeSet<u32>>,
}

impl Candidates {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn admits(&self, timestep: u32, layer: u32) -> bool {
        self.timesteps.as_ref().is_none_or(|s| s.contains(&timestep))
            && self.layers.as_ref().is_none_or(|s| s.contains(&layer))
    }

    fn filter<'a>(&'a self, stack: &'a AttentionStack) -> impl Iterator<Item = &'a AttentionEntry> {
        stack
            .entries()
            .iter()
            .filter(move |e| self.admits(e.timestep, e.layer))
    }
}

fn normalize_token_text(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Indices of the first contiguous token run whose concatenated text equals
/// `span`, ignoring whitespace on both sides.
pub fn find_span_tokens<S: AsRef<str>>(token_texts: &[S], span: &str) -> Result<Vec<usize>> {
    let target = normalize_token_text(span);
    if target.is_empty() {
        return Err(invalid("span", "must contain non-whitespace text"));
    }
    let tokens: Vec<String> = token_texts
        .iter()
        .map(|t| normalize_token_text(t.as_ref()))
        .collect();
    for start in 0..tokens.len() {
        if tokens[start].is_empty() || !target.starts_with(tokens[start].as_str()) {
            continue;
        }
        let mut acc = String::new();
        for (end, tok) in tokens.iter().enumerate().skip(start) {
            acc.push_str(tok);
            if acc == target {
                return Ok((start..=end).collect());
            }
            if !target.starts_with(acc.as_str()) {
                break;
            }
        }
    }
    Err(Error::SpanNotFound(span.into()))
}

/// Mean attention over the active anchor tokens, min-max normalized.
pub fn anchor_map(entry: &AttentionEntry, anchors: &AnchorTokenSet) -> Result<LocalizationMap> {
    let active = anchors.active();
    if active.is_empty() {
        return Err(Error::EmptyAnchorSet);
    }
    let (h, w, n) = entry.dims();
    if let Some(&bad) = active.iter().find(|&&k| k >= n) {
        return Err(invalid(
            "anchor token set",
            format!("index {bad} out of range for {n} tokens"),
        ));
    }
    let count = active.len() as f64;
    let means: Vec<f64> = entry
        .data
        .chunks_exact(n)
        .map(|cell| active.iter().map(|&k| cell[k] as f64).sum::<f64>() / count)
        .collect();
    let map = Grid::new(h, w, normalize_f64(means.iter().copied()))?;
    Ok(LocalizationMap {
        map,
        source: MapSource::Single {
            timestep: entry.timestep,
            layer: entry.layer,
        },
    })
}

/// `⟨M,Y⟩ / (‖M‖₁ + ‖Y‖₁ − ⟨M,Y⟩)`, or 0 when both maps are all-zero.
pub fn soft_iou(m: &Grid, y: &Grid) -> Result<f64> {
    m.check_same_shape(y, "soft IoU reference")?;
    let (mut inner, mut l1_m, mut l1_y) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in m.as_slice().iter().zip(y.as_slice()) {
        let (a, b) = (a as f64, b as f64);
        inner += a * b;
        l1_m += a.abs();
        l1_y += b.abs();
    }
    let denom = l1_m + l1_y - inner;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((inner / denom).clamp(0.0, 1.0))
}

/// Normalized mean of every candidate anchor map; the default reference for
/// pair selection when no external reference is supplied.
pub fn consensus_reference(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    candidates: &Candidates,
) -> Result<Grid> {
    let keys: Vec<(u32, u32)> = candidates.filter(stack).map(|e| e.key()).collect();
    if keys.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    Ok(mean_of_maps(stack, anchors, &keys)?.map)
}

/// Scores every admitted pair against `reference`, best first.
pub fn score_pairs(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    reference: &Grid,
    candidates: &Candidates,
) -> Result<Vec<PairScore>> {
    let mut scores = Vec::new();
    for entry in candidates.filter(stack) {
        let m = anchor_map(entry, anchors)?;
        scores.push(PairScore {
            timestep: entry.timestep,
            layer: entry.layer,
            iou: soft_iou(&m.map, reference)?,
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    scores.sort_by(PairScore::rank_cmp);
    Ok(scores)
}

/// The `k` best-scoring pairs (fewer if fewer candidates exist).
pub fn select_topk(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    reference: &Grid,
    k: usize,
    candidates: &Candidates,
) -> Result<Vec<PairScore>> {
    if k == 0 {
        return Err(invalid("K", "must be at least 1"));
    }
    let mut scores = score_pairs(stack, anchors, reference, candidates)?;
    scores.truncate(k);
    Ok(scores)
}

/// Pixel-wise mean of the selected pairs' anchor maps, re-normalized.
pub fn aggregate_selected(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    selected: &[PairScore],
) -> Result<LocalizationMap> {
    if selected.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let keys: Vec<(u32, u32)> = selected.iter().map(|p| (p.timestep, p.layer)).collect();
    mean_of_maps(stack, anchors, &keys)
}

fn mean_of_maps(
    stack: &AttentionStack,
    anchors: &AnchorTokenSet,
    keys: &[(u32, u32)],
) -> Result<LocalizationMap> {
    // Summation in key order keeps the result independent of input order.
    let mut keys = keys.to_vec();
    keys.sort_unstable();
    keys.dedup();
    let mut acc = alloc::vec![0.0f64; stack.height() * stack.width()];
    for &(t, l) in &keys {
        let entry = stack.entry(t, l).ok_or(Error::UnknownPair {
            timestep: t,
            layer: l,
        })?;
        let m = anchor_map(entry, anchors)?;
        for (a, &v) in acc.iter_mut().zip(m.map.as_slice()) {
            *a += v as f64;
        }
    }
    let n = keys.len() as f64;
    let map = Grid::new(
        stack.height(),
        stack.width(),
        normalize_f64(acc.iter().map(|v| v / n)),
    )?;
    Ok(LocalizationMap {
        map,
        source: MapSource::Aggregate(keys),
    })
}
