//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use inkspot_core::clt::ScoringWeights;
use inkspot_core::localize::AnchorMode;
use inkspot_core::pipeline::{localize, LocalizeParams};
use inkspot_core::sgmi::ScheduleKind;
use inkspot_core::sim::SimSpec;
use inkspot_core::topology::TopologyParams;
use serde::Serialize;

use crate::clt_io::{parse_edges, read_char_table, read_prompts, score_prompts, write_jsonl};
use crate::config::{InjectionParams, RunConfig};
use crate::error::{Error, ExitCode, Result};
use crate::pgm::write_heatmap;
use crate::run::{
    blend_file_name, candidates_from, inject_stage, lambda_csv, load_glyph, pairs_csv,
    resolve_anchors, run, stage_heatmaps, LambdaStep, RegionStats, Staging, LAMBDA_FILE,
    MASK_FILE, PAIRS_FILE,
};
use crate::sim_io::{write_bundle, write_token_experiment};
use crate::store::{load_attention, load_reference, load_trajectory, read_json};
use crate::tensor_io::{read_grid, read_latent, Tensor};

#[derive(Debug, Parser)]
#[command(name = "inkspot", version, about = "Attention-based text-region localization and spectral glyph injection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Localize the text region from an attention directory.
    Localize(LocalizeArgs),
    /// Inject a glyph into a latent trajectory under a region mask.
    Inject(InjectArgs),
    /// Full localize + inject run from a JSON config.
    Run(RunArgs),
    /// Write a synthetic attention/latent bundle with ground truth.
    Simulate(SimulateArgs),
    /// Compare anchor token sets on synthetic data.
    TokenExp(TokenExpArgs),
    /// Score prompts for text-rendering difficulty.
    CltScore(CltArgs),
    /// Convert a 2-D tensor file to a PGM heatmap.
    Viz(VizArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = h.parse().map_err(|_| "bad height")?;
    let w = w.parse().map_err(|_| "bad width")?;
    Ok((h, w))
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    /// Neighborhood radius for box aggregation.
    #[arg(long, default_value_t = TopologyParams::default().radius)]
    pub radius: usize,
    #[arg(long, default_value_t = TopologyParams::default().bins)]
    pub bins: usize,
    /// DBSCAN neighborhood radius in pixels.
    #[arg(long, default_value_t = TopologyParams::default().eps)]
    pub eps: f64,
    #[arg(long, default_value_t = TopologyParams::default().min_pts)]
    pub min_pts: usize,
    #[arg(long, default_value_t = TopologyParams::default().tau_quantile)]
    pub tau_quantile: f64,
}

impl TopologyArgs {
    fn params(&self) -> TopologyParams {
        TopologyParams {
            radius: self.radius,
            bins: self.bins,
            eps: self.eps,
            min_pts: self.min_pts,
            tau_quantile: self.tau_quantile,
        }
    }
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Directory with attn_t{t}_l{l}.ftns and tokens.json.
    #[arg(long)]
    pub attn: PathBuf,
    /// Target text span.
    #[arg(long, conflicts_with = "entity")]
    pub span: Option<String>,
    /// Entity token indices, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub entity: Option<Vec<usize>>,
    /// Sink token indices (default: from tokens.json).
    #[arg(long, value_delimiter = ',')]
    pub sink: Option<Vec<usize>>,
    #[arg(long, default_value = "entity-sink")]
    pub anchor_mode: AnchorMode,
    /// Number of (timestep, layer) pairs aggregated.
    #[arg(long = "k", default_value_t = inkspot_core::pipeline::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_delimiter = ',')]
    pub timesteps: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    #[command(flatten)]
    pub topology: TopologyArgs,
    /// Mask resolution as HxW (default: the patch grid).
    #[arg(long, value_parser = parse_size)]
    pub latent_size: Option<(usize, usize)>,
    /// Reference map (default: ref.ftns in the attention dir, else consensus).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub no_heatmaps: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Trajectory directory of z_t{t}.ftns, or a single latent file (with --t).
    #[arg(long)]
    pub latent: PathBuf,
    /// Step index of a single latent file.
    #[arg(long)]
    pub t: Option<u32>,
    /// PGM or 2-D tensor image, or a 3-D tensor latent.
    #[arg(long)]
    pub glyph: PathBuf,
    /// Region mask at latent resolution.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value = "rf")]
    pub schedule: ScheduleKind,
    /// Total steps (default: largest trajectory step).
    #[arg(long = "T")]
    pub total_steps: Option<u32>,
    #[arg(long, default_value_t = 0.8)]
    pub t_start_frac: f64,
    #[arg(long, default_value_t = 0.6)]
    pub t_end_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub f0: f64,
    #[arg(long, default_value_t = 0.55)]
    pub sigma_ratio: f64,
    #[arg(long, default_value_t = 8)]
    pub encoder_factor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. --set topology.eps=2.0 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// SimSpec JSON (default: built-in spec).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Text drawn into the glyph image.
    #[arg(long, default_value = "OPEN")]
    pub glyph_text: String,
    #[arg(long, default_value = "rf")]
    pub schedule: ScheduleKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TokenExpArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long = "k", default_value_t = inkspot_core::pipeline::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    /// TSV of char, stroke count, frequency rank.
    #[arg(long)]
    pub table: PathBuf,
    /// JSONL with {"id", "segments": [...]} per line.
    #[arg(long)]
    pub prompts: PathBuf,
    /// ScoringWeights JSON (missing fields take defaults).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Ascending tier edges in (0, 1), comma-separated.
    #[arg(long, default_value = "")]
    pub edges: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Localization summary written by `localize`.
#[derive(Debug, Serialize)]
pub struct LocalizeReport {
    pub anchor_mode: AnchorMode,
    pub entity_tokens: Vec<usize>,
    pub sink_tokens: Vec<usize>,
    pub selected: Vec<inkspot_core::localize::PairScore>,
    #[serde(flatten)]
    pub regions: RegionStats,
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SimSpec> {
    let mut spec = match path {
        Some(p) => read_json::<SimSpec>(p).map_err(|e| Error::Config(e.to_string()))?,
        None => SimSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_localize(a: &LocalizeArgs) -> Result<()> {
    let stack = load_attention(&a.attn)?;
    let reference = match &a.reference {
        Some(p) => Some(read_grid(p)?),
        None => load_reference(&a.attn)?,
    };
    let anchors = resolve_anchors(&stack, a.span.as_deref(), a.entity.as_deref(), a.sink.as_deref(), a.anchor_mode)?;
    let (lh, lw) = a.latent_size.unwrap_or((stack.height(), stack.width()));
    let params = LocalizeParams {
        top_k: a.top_k,
        candidates: candidates_from(a.timesteps.as_deref(), a.layers.as_deref()),
        topology: a.topology.params(),
    };
    let loc = localize(&stack, &anchors, reference.as_ref(), &params, lh, lw)?;
    let mut staging = Staging::new(&a.out)?;
    staging.write_tensor(MASK_FILE, &Tensor::from(&loc.refinement.mask.mask))?;
    staging.write_bytes(PAIRS_FILE, &pairs_csv(&loc.pairs, loc.selected.len()))?;
    if !a.no_heatmaps {
        stage_heatmaps(&mut staging, &loc, &stack, &anchors)?;
    }
    let report = LocalizeReport {
        anchor_mode: anchors.mode(),
        entity_tokens: anchors.entity().to_vec(),
        sink_tokens: anchors.sink().to_vec(),
        selected: loc.selected.clone(),
        regions: RegionStats::of(&loc),
    };
    staging.write_bytes("localize.json", &pretty(&report))?;
    staging.commit()?;
    Ok(())
}

fn cmd_inject(a: &InjectArgs) -> Result<()> {
    let trajectory = if a.latent.is_dir() {
        if a.t.is_some() {
            return Err(Error::Config("--t applies only to a single latent file".into()));
        }
        load_trajectory(&a.latent)?
    } else {
        let t = a
            .t
            .ok_or_else(|| Error::Config("--t is required when --latent is a file".into()))?;
        vec![(t, read_latent(&a.latent)?)]
    };
    let glyph = load_glyph(&a.glyph)?;
    let mask = read_grid(&a.mask)?;
    let params = InjectionParams {
        schedule: a.schedule,
        steps: a.total_steps,
        t_start_frac: a.t_start_frac,
        t_end_frac: a.t_end_frac,
        f0: a.f0,
        sigma_ratio: a.sigma_ratio,
        encoder_factor: a.encoder_factor,
    };
    let injected = inject_stage(&trajectory, &mask, &glyph, &params, a.seed)?;
    let mut staging = Staging::new(&a.out)?;
    let mut lambda = Vec::new();
    for (t, l, z) in &injected.blends {
        staging.write_tensor(&blend_file_name(*t), &Tensor::from(z))?;
        lambda.push(LambdaStep { timestep: *t, lambda: *l });
    }
    staging.write_bytes(LAMBDA_FILE, &lambda_csv(&lambda))?;
    staging.commit()?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config, &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = run(&cfg)?;
    if let Some(iou) = report.truth_iou {
        log::info!("mask IoU vs ground truth: {iou:.4}");
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), a.seed)?;
    write_bundle(&spec, &a.glyph_text, a.schedule, &a.out)?;
    Ok(())
}

fn cmd_token_exp(a: &TokenExpArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref(), a.seed)?;
    let params = LocalizeParams {
        top_k: a.top_k,
        ..LocalizeParams::default()
    };
    if a.top_k == 0 {
        return Err(Error::Config("K must be ≥ 1".into()));
    }
    let summaries = write_token_experiment(&spec, a.trials, &params, &a.out)?;
    for s in &summaries {
        println!(
            "{}\tmean_iou={:.4}\ttimestep_std={:.4}",
            s.mode.as_str(),
            s.mean_iou,
            s.timestep_std()
        );
    }
    Ok(())
}

fn cmd_clt(a: &CltArgs) -> Result<()> {
    let table = read_char_table(&a.table)?;
    let prompts = read_prompts(&a.prompts)?;
    let weights: ScoringWeights = match &a.weights {
        Some(p) => read_json(p)?,
        None => ScoringWeights::default(),
    };
    let edges = parse_edges(&a.edges)?;
    let scored = score_prompts(&prompts, &table, &weights, &edges)?;
    write_jsonl(&a.out, &scored)
}

fn cmd_viz(a: &VizArgs) -> Result<()> {
    let map = read_grid(&a.input)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    write_heatmap(tmp.path(), &map).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(&a.out).map_err(|e| Error::io(&a.out, e.error))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Localize(a) => cmd_localize(a),
        Command::Inject(a) => cmd_inject(a),
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::TokenExp(a) => cmd_token_exp(a),
        Command::CltScore(a) => cmd_clt(a),
        Command::Viz(a) => cmd_viz(a),
    }
}

/// Parses `args`, runs, reports errors on standard error and returns the exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::InvalidInput
            } else {
                ExitCode::Success
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::Success,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
