//! Prompt complexity scoring for long-tail text-rendering benchmarks.
//!
//! Character difficulty mixes normalized stroke count and frequency rank;
//! a prompt score is the weighted mean of mean character difficulty, a
//! capped length term and a capped segment-count term.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

use crate::error::{invalid, Error, Result};

/// Stroke count and frequency rank of one character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CharStats {
    pub strokes: u32,
    pub rank: u32,
}

/// Per-character statistics with their observed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CharTable {
    entries: BTreeMap<char, CharStats>,
    strokes: (u32, u32),
    ranks: (u32, u32),
}

impl CharTable {
    /// Bounds are taken over the given entries; both ranges must be
    /// non-degenerate and all values positive.
    pub fn new(entries: impl IntoIterator<Item = (char, CharStats)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (c, s) in entries {
            if s.strokes == 0 || s.rank == 0 {
                return Err(invalid(
                    "character table",
                    format!("{c:?} has non-positive stroke count or rank"),
                ));
            }
            let c = nfc_char(c);
            if map.insert(c, s).is_some() {
                return Err(invalid("character table", format!("duplicate entry {c:?}")));
            }
        }
        let bounds = |f: fn(&CharStats) -> u32| {
            map.values()
                .map(f)
                .fold((u32::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let strokes = bounds(|s| s.strokes);
        let ranks = bounds(|s| s.rank);
        if map.is_empty() || strokes.1 <= strokes.0 || ranks.1 <= ranks.0 {
            return Err(invalid(
                "character table",
                "stroke and rank ranges must both be non-degenerate",
            ));
        }
        Ok(Self {
            entries: map,
            strokes,
            ranks,
        })
    }

    pub fn get(&self, c: char) -> Option<CharStats> {
        self.entries.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(κ_min, κ_max)`.
    pub fn stroke_bounds(&self) -> (u32, u32) {
        self.strokes
    }

    /// `(r_min, r_max)`.
    pub fn rank_bounds(&self) -> (u32, u32) {
        self.ranks
    }

    /// Normalized stroke and rank terms `(K, R)` in `[0, 1]`.
    pub fn normalized(&self, stats: CharStats) -> (f64, f64) {
        let norm = |v: u32, (lo, hi): (u32, u32)| {
            ((v as f64 - lo as f64) / (hi as f64 - lo as f64)).clamp(0.0, 1.0)
        };
        (norm(stats.strokes, self.strokes), norm(stats.rank, self.ranks))
    }
}

fn nfc_char(c: char) -> char {
    let mut it = core::iter::once(c).nfc();
    match (it.next(), it.next()) {
        (Some(n), None) => n,
        _ => c,
    }
}

/// What to do with characters missing from the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum UnknownPolicy {
    /// Treat as maximally difficult (`D = 1`) and report it.
    #[default]
    MaxDifficulty,
    Reject,
}

/// Difficulty weights and caps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScoringWeights {
    pub w_s: f64,
    pub w_f: f64,
    pub w_char: f64,
    pub w_len: f64,
    pub w_seg: f64,
    pub n_max: u32,
    pub m_max: u32,
    pub unknown: UnknownPolicy,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self {
            w_s: 1.0,
            w_f: 1.0,
            w_char: 1.0,
            w_len: 1.0,
            w_seg: 1.0,
            n_max: 20,
            m_max: 5,
            unknown: UnknownPolicy::MaxDifficulty,
        }
    }
}

impl ScoringWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_s", self.w_s),
            ("w_f", self.w_f),
            ("w_char", self.w_char),
            ("w_len", self.w_len),
            ("w_seg", self.w_seg),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid(name, format!("weight {w} must be positive")));
            }
        }
        if self.n_max < 1 {
            return Err(invalid("N_max", "must be at least 1"));
        }
        if self.m_max < 2 {
            return Err(invalid("M_max", "must be at least 2"));
        }
        Ok(())
    }
}

/// `D(c) = (w_s·K(c) + w_f·R(c)) / (w_s + w_f)`.
pub fn char_difficulty(c: char, table: &CharTable, weights: &ScoringWeights) -> Result<f64> {
    match table.get(nfc_char(c)) {
        Some(stats) => {
            let (k, r) = table.normalized(stats);
            Ok(((weights.w_s * k + weights.w_f * r) / (weights.w_s + weights.w_f)).clamp(0.0, 1.0))
        }
        None => match weights.unknown {
            UnknownPolicy::MaxDifficulty => Ok(1.0),
            UnknownPolicy::Reject => Err(Error::UnknownCharacter(c)),
        },
    }
}

/// Whether a character counts toward `N_chars`: whitespace and non-CJK
/// punctuation are skipped.
pub fn is_scorable(c: char) -> bool {
    if c.is_whitespace() || c.is_control() {
        return false;
    }
    let u = c as u32;
    let non_cjk_punct = c.is_ascii_punctuation()
        || (0x00A1..=0x00BF).contains(&u) && u != 0x00AA && u != 0x00BA
        || u == 0x00D7
        || u == 0x00F7
        || (0x2000..=0x206F).contains(&u);
    !non_cjk_punct
}

/// Difficulty breakdown of one character occurrence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CharScore {
    pub ch: char,
    pub difficulty: f64,
    pub known: bool,
}

/// Complexity components and score of one prompt.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PromptComplexity {
    pub c_char: f64,
    pub c_len: f64,
    pub c_seg: f64,
    pub score: f64,
    pub n_chars: usize,
    pub n_segments: usize,
    pub chars: Vec<CharScore>,
    /// Distinct characters that fell back to the unknown-character policy.
    pub unknown: Vec<char>,
}

/// Scores a prompt given as its text segments.
pub fn prompt_score<S: AsRef<str>>(
    segments: &[S],
    table: &CharTable,
    weights: &ScoringWeights,
) -> Result<PromptComplexity> {
    weights.validate()?;
    if segments.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut chars = Vec::new();
    let mut unknown: Vec<char> = Vec::new();
    for seg in segments {
        let normalized: String = seg.as_ref().nfc().collect();
        for c in normalized.chars().filter(|&c| is_scorable(c)) {
            let known = table.get(c).is_some();
            let difficulty = char_difficulty(c, table, weights)?;
            if !known && !unknown.contains(&c) {
                unknown.push(c);
            }
            chars.push(CharScore {
                ch: c,
                difficulty,
                known,
            });
        }
    }
    if chars.is_empty() {
        return Err(Error::NoScorableCharacters);
    }
    let n_chars = chars.len();
    let n_segments = segments.len();

    // Summing in sorted order makes the mean independent of character order
    // and monotone in every individual difficulty.
    let mut ds: Vec<f64> = chars.iter().map(|c| c.difficulty).collect();
    ds.sort_by(f64::total_cmp);
    let c_char = (ds.iter().sum::<f64>() / n_chars as f64).clamp(0.0, 1.0);
    let c_len = (n_chars as f64 / weights.n_max as f64).min(1.0);
    let c_seg = ((n_segments - 1) as f64 / (weights.m_max - 1) as f64).min(1.0);
    let score = combine(weights, c_char, c_len, c_seg);
    unknown.sort_unstable();
    Ok(PromptComplexity {
        c_char,
        c_len,
        c_seg,
        score,
        n_chars,
        n_segments,
        chars,
        unknown,
    })
}

fn combine(w: &ScoringWeights, c_char: f64, c_len: f64, c_seg: f64) -> f64 {
    let num = w.w_char * c_char + w.w_len * c_len + w.w_seg * c_seg;
    (num / (w.w_char + w.w_len + w.w_seg)).clamp(0.0, 1.0)
}

/// Buckets scored items into tiers `[0, e₁), [e₁, e₂), …, [e_k, 1]`.
/// Returns one list of item indices per tier.
pub fn stratify(scores: &[f64], edges: &[f64]) -> Result<Vec<Vec<usize>>> {
    if edges.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(invalid("tier edges", "must lie strictly inside (0, 1)"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("tier edges", "must be strictly ascending"));
    }
    let mut tiers = alloc::vec![Vec::new(); edges.len() + 1];
    for (i, &s) in scores.iter().enumerate() {
        tiers[tier_of(s, edges)].push(i);
    }
    Ok(tiers)
}

/// Tier index of one score: the number of edges at or below it.
pub fn tier_of(score: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| e <= score).count()
}
