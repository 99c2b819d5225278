//! Character tables, prompt files and scored output for the benchmark scorer.

use std::fs;
use std::io::Write;
use std::path::Path;

use inkspot_core::clt::{prompt_score, stratify, CharStats, CharTable, ScoringWeights};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Reads `char<TAB>strokes<TAB>rank` lines. Blank lines, `#` comments and a
/// non-numeric header row are skipped.
pub fn read_char_table(path: &Path) -> Result<CharTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        let bad = |why: &str| Error::format(path, format!("line {line}: {why}"));
        if record.len() != 3 {
            return Err(bad("expected char<TAB>strokes<TAB>rank"));
        }
        let (c, s, r) = (&record[0], record[1].trim(), record[2].trim());
        if i == 0 && s.parse::<u32>().is_err() && r.parse::<u32>().is_err() {
            continue;
        }
        let mut chars = c.chars();
        let ch = match (chars.next(), chars.next()) {
            (Some(ch), None) => ch,
            _ => return Err(bad("first field must be a single character")),
        };
        let strokes = s.parse().map_err(|_| bad("stroke count is not a positive integer"))?;
        let rank = r.parse().map_err(|_| bad("frequency rank is not a positive integer"))?;
        entries.push((ch, CharStats { strokes, rank }));
    }
    CharTable::new(entries).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptLine {
    pub id: Value,
    pub segments: Vec<String>,
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn parse_edges(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("tier edge {p:?} is not a number")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPrompt {
    pub id: Value,
    pub score: f64,
    pub tier: usize,
    pub c_char: f64,
    pub c_len: f64,
    pub c_seg: f64,
    pub n_chars: usize,
    pub n_segments: usize,
    pub unknown: Vec<char>,
}

/// Scores every prompt and assigns tiers.
pub fn score_prompts(
    prompts: &[PromptLine],
    table: &CharTable,
    weights: &ScoringWeights,
    edges: &[f64],
) -> Result<Vec<ScoredPrompt>> {
    let mut scored = Vec::with_capacity(prompts.len());
    for p in prompts {
        let c = prompt_score(&p.segments, table, weights)
            .map_err(|e| Error::Config(format!("prompt {}: {e}", p.id)))?;
        if !c.unknown.is_empty() {
            log::warn!("prompt {}: characters not in table scored as D=1: {:?}", p.id, c.unknown);
        }
        scored.push(ScoredPrompt {
            id: p.id.clone(),
            score: c.score,
            tier: 0,
            c_char: c.c_char,
            c_len: c.c_len,
            c_seg: c.c_seg,
            n_chars: c.n_chars,
            n_segments: c.n_segments,
            unknown: c.unknown,
        });
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let tiers = stratify(&scores, edges)?;
    for (tier, members) in tiers.iter().enumerate() {
        for &i in members {
            scored[i].tier = tier;
        }
    }
    Ok(scored)
}

/// Writes JSONL atomically (temp file in the same directory, then rename).
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    for r in rows {
        serde_json::to_writer(&mut tmp, r).expect("serializable");
        tmp.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
