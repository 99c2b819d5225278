//! Writing synthetic bundles and token-set experiment tables.

use std::path::Path;

use inkspot_core::pipeline::LocalizeParams;
use inkspot_core::sgmi::{rasterize_block_glyphs, NoiseSchedule, ScheduleKind};
use inkspot_core::sim::{generate, toy_denoise_trajectory, ModeSummary, SimSpec};
use serde_json::json;

use crate::error::{Error, Result};
use crate::pgm::{encode_pgm, heatmap_pixels};
use crate::run::Staging;
use crate::store::{attention_file_name, latent_file_name, TokensSidecar};
use crate::tensor_io::Tensor;

pub const TOKEN_IOU_FILE: &str = "token_iou.csv";
pub const TOKEN_SUMMARY_FILE: &str = "token_summary.json";

/// Span text of the entity tokens, joined without separators.
pub fn entity_span(spec: &SimSpec) -> String {
    spec.entity.iter().map(|&i| spec.token_texts[i].as_str()).collect()
}

/// Writes a complete synthetic bundle into `out`:
///
/// - `attention/` (`attn_t{t}_l{l}.ftns`, `tokens.json`)
/// - `latents/` (`z_t{t}.ftns`, `t = 0..=T`)
/// - `glyph.pgm`, `truth.ftns` (latent resolution), `truth_grid.ftns`
/// - `spec.json` and a ready-to-use `run.json`
pub fn write_bundle(spec: &SimSpec, glyph_text: &str, schedule: ScheduleKind, out: &Path) -> Result<Vec<String>> {
    spec.validate()?;
    let (stack, truth) = generate(spec)?;
    let glyph = rasterize_block_glyphs(glyph_text, 16);
    let sched = NoiseSchedule::new(schedule, spec.steps)?;
    let trajectory = toy_denoise_trajectory(spec, &glyph, &sched)?;

    let mut staging = Staging::new(out)?;
    for e in stack.entries() {
        let (h, w, n) = e.dims();
        let t = Tensor::new(vec![h, w, n], e.as_slice().to_vec()).expect("valid entry");
        staging.write_tensor(&format!("attention/{}", attention_file_name(e.timestep, e.layer)), &t)?;
    }
    let sidecar = TokensSidecar {
        token_texts: stack.token_texts().to_vec(),
        sink_indices: stack.sink_indices().to_vec(),
    };
    staging.write_bytes("attention/tokens.json", &pretty(&sidecar))?;
    for (t, z) in &trajectory {
        staging.write_tensor(&format!("latents/{}", latent_file_name(*t)), &Tensor::from(z))?;
    }
    staging.write_bytes("glyph.pgm", &encode_pgm(glyph.width(), glyph.height(), &heatmap_pixels(&glyph)))?;
    staging.write_tensor("truth.ftns", &Tensor::from(&truth.latent_mask))?;
    staging.write_tensor("truth_grid.ftns", &Tensor::from(&truth.mask))?;
    staging.write_bytes("spec.json", &pretty(spec))?;
    let run = json!({
        "attention_dir": "attention",
        "latents_dir": "latents",
        "glyph": "glyph.pgm",
        "truth": "truth.ftns",
        "out_dir": "run",
        "span": entity_span(spec),
        "injection": { "schedule": schedule, "steps": spec.steps },
        "seed": spec.seed,
    });
    staging.write_bytes("run.json", &pretty(&run))?;
    staging.commit()
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// `mode,timestep,iou` rows of the mean per-step IoU curves.
pub fn token_iou_csv(summaries: &[ModeSummary]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "timestep", "iou"]).expect("in-memory write");
    for s in summaries {
        for (t, iou) in &s.curve {
            w.write_record([s.mode.as_str().to_owned(), t.to_string(), format!("{iou:.17}")])
                .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory write")
}

/// Runs the token-set experiment and writes `token_iou.csv` and
/// `token_summary.json` into `out`.
pub fn write_token_experiment(
    spec: &SimSpec,
    trials: usize,
    params: &LocalizeParams,
    out: &Path,
) -> Result<Vec<ModeSummary>> {
    if trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    let summaries = inkspot_core::sim::token_set_experiment(spec, trials, params)?;
    let mut staging = Staging::new(out)?;
    staging.write_bytes(TOKEN_IOU_FILE, &token_iou_csv(&summaries))?;
    let table: Vec<_> = summaries
        .iter()
        .map(|s| {
            json!({
                "mode": s.mode,
                "mean_iou": s.mean_iou,
                "timestep_variance": s.timestep_variance,
                "timestep_std": s.timestep_std(),
                "trial_iou": s.trial_iou,
            })
        })
        .collect();
    staging.write_bytes(TOKEN_SUMMARY_FILE, &pretty(&table))?;
    staging.commit()?;
    Ok(summaries)
}
