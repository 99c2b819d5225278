//! On-disk layout of attention stacks and latent trajectories.
//!
//! An attention directory holds `attn_t{t}_l{l}.ftns` (H×W×N each), a
//! `tokens.json` sidecar and optionally `ref.ftns`. A trajectory directory
//! holds `z_t{t}.ftns` (C×H×W each).

use std::fs;
use std::path::{Path, PathBuf};

use inkspot_core::localize::{AttentionEntry, AttentionStack};
use inkspot_core::{Grid, Latent};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{read_grid, read_latent, read_tensor, write_tensor, Tensor};

pub const TOKENS_FILE: &str = "tokens.json";
pub const REFERENCE_FILE: &str = "ref.ftns";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensSidecar {
    pub token_texts: Vec<String>,
    #[serde(default)]
    pub sink_indices: Vec<usize>,
}

pub fn attention_file_name(t: u32, layer: u32) -> String {
    format!("attn_t{t}_l{layer}.ftns")
}

pub fn latent_file_name(t: u32) -> String {
    format!("z_t{t}.ftns")
}

fn parse_attention_name(name: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix("attn_t")?.strip_suffix(".ftns")?;
    let (t, l) = rest.split_once("_l")?;
    Some((parse_index(t)?, parse_index(l)?))
}

fn parse_latent_name(name: &str) -> Option<u32> {
    parse_index(name.strip_prefix("z_t")?.strip_suffix(".ftns")?)
}

fn parse_index(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn list_dir(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            out.push((name.to_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_attention(dir: &Path) -> Result<AttentionStack> {
    let sidecar: TokensSidecar = read_json(&dir.join(TOKENS_FILE))?;
    let mut entries = Vec::new();
    let mut shape = None;
    for (name, path) in list_dir(dir)? {
        let Some((t, l)) = parse_attention_name(&name) else {
            continue;
        };
        let tensor = read_tensor(&path)?;
        let &[h, w, n] = tensor.dims() else {
            return Err(Error::format(&path, format!("expected H×W×N, found dims {:?}", tensor.dims())));
        };
        if *shape.get_or_insert((h, w)) != (h, w) {
            return Err(Error::format(&path, "patch grid differs from other attention files"));
        }
        entries.push(AttentionEntry::new(t, l, h, w, n, tensor.into_data())?);
    }
    let Some((h, w)) = shape else {
        return Err(Error::format(dir, "no attn_t{t}_l{l}.ftns files"));
    };
    Ok(AttentionStack::new(h, w, sidecar.token_texts, sidecar.sink_indices, entries)?)
}

/// `ref.ftns` from the attention directory, if present.
pub fn load_reference(dir: &Path) -> Result<Option<Grid>> {
    let path = dir.join(REFERENCE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_grid(&path)?))
}

pub fn save_attention(dir: &Path, stack: &AttentionStack) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for e in stack.entries() {
        let (h, w, n) = e.dims();
        let t = Tensor::new(vec![h, w, n], e.as_slice().to_vec()).expect("valid entry dims");
        write_tensor(&dir.join(attention_file_name(e.timestep, e.layer)), &t)?;
    }
    write_json(
        &dir.join(TOKENS_FILE),
        &TokensSidecar {
            token_texts: stack.token_texts().to_vec(),
            sink_indices: stack.sink_indices().to_vec(),
        },
    )
}

/// All `z_t{t}.ftns` latents, ascending in `t`, with consistent dims.
pub fn load_trajectory(dir: &Path) -> Result<Vec<(u32, Latent)>> {
    let mut out: Vec<(u32, Latent)> = Vec::new();
    for (name, path) in list_dir(dir)? {
        let Some(t) = parse_latent_name(&name) else {
            continue;
        };
        let z = read_latent(&path)?;
        if let Some((_, first)) = out.first() {
            if first.shape() != z.shape() {
                return Err(Error::format(&path, "latent dims differ within trajectory"));
            }
        }
        out.push((t, z));
    }
    if out.is_empty() {
        return Err(Error::format(dir, "no z_t{t}.ftns files"));
    }
    out.sort_by_key(|(t, _)| *t);
    if out.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::format(dir, "duplicate timestep in trajectory"));
    }
    Ok(out)
}

pub fn save_trajectory(dir: &Path, trajectory: &[(u32, Latent)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, z) in trajectory {
        write_tensor(&dir.join(latent_file_name(*t)), &Tensor::from(z))?;
    }
    Ok(())
}
