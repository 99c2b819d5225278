//! Spectral-modulated glyph injection.
//!
//! A glyph reference latent is noise-aligned to the current step by forward
//! diffusion, band-passed with an isotropic Log-Gabor gain in the 2-D
//! frequency domain, and blended into the denoising latent inside the
//! writing mask with a cosine-annealed weight over a mid-early step window.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::fft::{fft_freq, Complex64, Fft2};
use crate::grid::{Grid, Latent};
use crate::topology::BBox;

/// Largest tolerated imaginary part after the inverse FFT.
pub const IMAGINARY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ScheduleKind {
    /// `α = cos(πt/2T)`, `σ = sin(πt/2T)`.
    #[cfg_attr(feature = "serde", serde(rename = "vp"))]
    VariancePreserving,
    /// `α = 1 − t/T`, `σ = t/T`.
    #[cfg_attr(feature = "serde", serde(rename = "rf"))]
    RectifiedFlow,
}

impl core::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" => Ok(ScheduleKind::VariancePreserving),
            "rf" => Ok(ScheduleKind::RectifiedFlow),
            other => Err(invalid("schedule", format!("{other:?} (expected vp or rf)"))),
        }
    }
}

/// Forward-diffusion coefficients over integer steps `0..=T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub total_steps: u32,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, total_steps: u32) -> Result<Self> {
        if total_steps == 0 {
            return Err(invalid("T", "must be at least 1"));
        }
        Ok(Self { kind, total_steps })
    }

    /// `(α_t, σ_t)`.
    pub fn coefficients(&self, t: u32) -> Result<(f64, f64)> {
        if t > self.total_steps {
            return Err(invalid(
                "step",
                format!("{t} exceeds T = {}", self.total_steps),
            ));
        }
        let frac = t as f64 / self.total_steps as f64;
        Ok(match self.kind {
            ScheduleKind::RectifiedFlow => (1.0 - frac, frac),
            ScheduleKind::VariancePreserving => {
                let angle = FRAC_PI_2 * frac;
                (libm::cos(angle), libm::sin(angle))
            }
        })
    }
}

/// Isotropic Log-Gabor gain on the DFT frequency lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGaborKernel {
    pub f0: f64,
    pub sigma_ratio: f64,
    height: usize,
    width: usize,
    gains: Vec<f64>,
}

/// `exp(−ln²(ρ/f0) / (2 ln² σ))`, zero at DC.
pub fn log_gabor_gain(rho: f64, f0: f64, sigma_ratio: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let num = libm::log(rho / f0);
    let den = libm::log(sigma_ratio);
    libm::exp(-(num * num) / (2.0 * den * den))
}

impl LogGaborKernel {
    /// Builds the gain grid for a `height × width` latent.
    pub fn build(height: usize, width: usize, f0: f64, sigma_ratio: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("kernel dims", "must be positive"));
        }
        if !(f0 > 0.0 && f0 <= 0.5) {
            return Err(invalid("f0", format!("{f0} not in (0, 0.5]")));
        }
        if !(sigma_ratio > 0.0 && sigma_ratio < 1.0) {
            return Err(invalid("sigma_ratio", format!("{sigma_ratio} not in (0, 1)")));
        }
        let mut gains = Vec::with_capacity(height * width);
        for ky in 0..height {
            let v = fft_freq(ky, height);
            for kx in 0..width {
                let u = fft_freq(kx, width);
                gains.push(log_gabor_gain(libm::sqrt(u * u + v * v), f0, sigma_ratio));
            }
        }
        gains[0] = 0.0;
        Ok(Self {
            f0,
            sigma_ratio,
            height,
            width,
            gains,
        })
    }

    /// A kernel with arbitrary gains (used for identity and ablation
    /// fixtures). Gains must be finite, in `[0, 1]`, and symmetric under
    /// frequency negation so that real inputs stay real.
    pub fn from_gains(height: usize, width: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != height * width || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch {
                what: "kernel gains",
                expected: format!("{}", height * width),
                found: format!("{}", gains.len()),
            });
        }
        if gains.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(invalid("kernel gains", "must lie in [0, 1]"));
        }
        Ok(Self {
            f0: f64::NAN,
            sigma_ratio: f64::NAN,
            height,
            width,
            gains,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn gain(&self, ky: usize, kx: usize) -> f64 {
        self.gains[ky * self.width + kx]
    }
}

/// Per-channel 2-D FFT, multiplication by the kernel gain, inverse FFT.
///
/// Fails with [`Error::ImaginaryResidue`] if the inverse leaves an imaginary
/// part above [`IMAGINARY_TOLERANCE`].
pub fn spectral_modulate(z: &Latent, kernel: &LogGaborKernel) -> Result<Latent> {
    let (c, h, w) = z.shape();
    if kernel.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            what: "Log-Gabor kernel",
            expected: format!("{h}x{w}"),
            found: format!("{}x{}", kernel.height, kernel.width),
        });
    }
    let plan = Fft2::new(h, w);
    let mut out = Latent::zeros(c, h, w);
    let mut buf = alloc::vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (b, &v) in buf.iter_mut().zip(z.channel(ch)) {
            *b = Complex64::new(v as f64, 0.0);
        }
        plan.forward(&mut buf);
        for (b, &g) in buf.iter_mut().zip(kernel.gains()) {
            *b *= g;
        }
        plan.inverse(&mut buf);
        let residue = buf.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        if residue > IMAGINARY_TOLERANCE {
            return Err(Error::ImaginaryResidue { max_abs: residue });
        }
        for (o, b) in out.channel_mut(ch).iter_mut().zip(&buf) {
            *o = b.re as f32;
        }
    }
    Ok(out)
}

/// `α_t·z_ref + σ_t·ε` with ε drawn from a stream keyed by `(seed, t, channel)`.
pub fn noise_align(z_ref: &Latent, t: u32, schedule: &NoiseSchedule, seed: u64) -> Result<Latent> {
    let (alpha, sigma) = schedule.coefficients(t)?;
    if sigma == 0.0 && alpha == 1.0 {
        return Ok(z_ref.clone());
    }
    let mut out = z_ref.clone();
    for ch in 0..z_ref.channels() {
        let mut rng = noise_stream(seed, t, ch);
        for v in out.channel_mut(ch) {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v = (alpha * (*v as f64) + sigma * eps) as f32;
        }
    }
    Ok(out)
}

/// The seeded normal stream for one (step, channel).
pub fn noise_stream(seed: u64, t: u32, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((t as u64) << 32) | (channel as u64 & 0xffff_ffff));
    rng
}

/// `½(1 + cos(π·(t − start)/(end − start)))` for `t ∈ [end, start]`.
pub fn anneal_weight(t: f64, start: f64, end: f64) -> Result<f64> {
    if !(start > end) {
        return Err(invalid(
            "injection window",
            format!("start {start} must exceed end {end}"),
        ));
    }
    if !(t >= end && t <= start) {
        return Err(Error::OutsideWindow { t, start, end });
    }
    if t == start {
        return Ok(1.0);
    }
    if t == end {
        return Ok(0.0);
    }
    let phase = (t - start) / (end - start);
    Ok(0.5 * (1.0 + libm::cos(PI * phase)))
}

/// Integer step window `[end, start]` of a `T → 0` trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectionWindow {
    pub start: u32,
    pub end: u32,
}

impl InjectionWindow {
    /// Rounds `start_frac·T` and `end_frac·T` to the nearest step.
    pub fn from_fractions(total_steps: u32, start_frac: f64, end_frac: f64) -> Result<Self> {
        for (name, f) in [("t_start_frac", start_frac), ("t_end_frac", end_frac)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(name, format!("{f} not in [0, 1]")));
            }
        }
        if end_frac > start_frac {
            return Err(invalid(
                "injection window",
                "t_end_frac must not exceed t_start_frac",
            ));
        }
        let round = |f: f64| libm::round(f * total_steps as f64) as u32;
        Ok(Self {
            start: round(start_frac),
            end: round(end_frac),
        })
    }

    /// An empty window (`start == end`) contains no step.
    pub fn contains(&self, t: u32) -> bool {
        self.start > self.end && t >= self.end && t <= self.start
    }

    /// λ(t) inside the window, `None` outside.
    pub fn weight(&self, t: u32) -> Option<f64> {
        if !self.contains(t) {
            return None;
        }
        anneal_weight(t as f64, self.start as f64, self.end as f64).ok()
    }

    /// Window steps in trajectory order (descending).
    pub fn steps(&self) -> impl Iterator<Item = u32> + '_ {
        let (s, e) = (self.start, self.end);
        (e..=s).rev().filter(move |_| s > e)
    }
}

/// `(1 − λR)⊙z + λR⊙z_sgmi`, with the mask broadcast over channels.
///
/// Cells with `R = 0` are copied bitwise. λ = 0 and λ = 1 copy `z` and
/// `z_sgmi` exactly inside the mask.
pub fn masked_inject(z: &Latent, z_sgmi: &Latent, mask: &Grid, lambda: f64) -> Result<Latent> {
    z.check_same_shape(z_sgmi, "SGMI latent")?;
    if mask.shape() != (z.height(), z.width()) {
        return Err(Error::ShapeMismatch {
            what: "region mask",
            expected: format!("{}x{}", z.height(), z.width()),
            found: format!("{}x{}", mask.height(), mask.width()),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("lambda", format!("{lambda} not in [0, 1]")));
    }
    let mut out = z.clone();
    if lambda == 0.0 {
        return Ok(out);
    }
    for ch in 0..z.channels() {
        let src = z_sgmi.channel(ch);
        let orig = z.channel(ch);
        for ((o, (&zv, &sv)), &r) in out
            .channel_mut(ch)
            .iter_mut()
            .zip(orig.iter().zip(src))
            .zip(mask.as_slice())
        {
            if r == 0.0 {
                continue;
            }
            let weight = lambda * r as f64;
            *o = if weight == 1.0 {
                sv
            } else {
                ((1.0 - weight) * zv as f64 + weight * sv as f64) as f32
            };
        }
    }
    Ok(out)
}

/// Everything [`inject_step`] needs besides the latents.
#[derive(Debug, Clone)]
pub struct InjectionConfig {
    pub window: InjectionWindow,
    /// Binary writing mask at latent resolution.
    pub mask: Grid,
    pub kernel: LogGaborKernel,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

/// One trajectory step: identity outside the window, otherwise the masked
/// blend with a freshly noise-aligned, band-passed reference. Returns the
/// blended latent and λ(t) (`None` when outside the window).
pub fn inject_step(
    z: &Latent,
    t: u32,
    cfg: &InjectionConfig,
    z_ref: &Latent,
) -> Result<(Latent, Option<f64>)> {
    let Some(lambda) = cfg.window.weight(t) else {
        return Ok((z.clone(), None));
    };
    z.check_same_shape(z_ref, "glyph reference latent")?;
    let aligned = noise_align(z_ref, t, &cfg.schedule, cfg.seed)?;
    let modulated = spectral_modulate(&aligned, &cfg.kernel)?;
    Ok((masked_inject(z, &modulated, &cfg.mask, lambda)?, Some(lambda)))
}

/// Maps a single-channel image canvas to a latent.
pub trait LatentEncoder {
    /// Spatial downsampling factor from canvas to latent.
    fn factor(&self) -> usize;
    fn channels(&self) -> usize;
    fn encode(&self, canvas: &Grid) -> Result<Latent>;
}

/// Average-pools `factor × factor` blocks and replicates the result over
/// `channels`. Stands in for a VAE encoder in standalone runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPoolEncoder {
    pub factor: usize,
    pub channels: usize,
}

impl Default for AvgPoolEncoder {
    fn default() -> Self {
        Self {
            factor: 8,
            channels: 1,
        }
    }
}

impl LatentEncoder for AvgPoolEncoder {
    fn factor(&self) -> usize {
        self.factor
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, canvas: &Grid) -> Result<Latent> {
        let f = self.factor;
        let (h, w) = canvas.shape();
        if f == 0 || self.channels == 0 || h % f != 0 || w % f != 0 {
            return Err(invalid(
                "encoder",
                format!("canvas {h}x{w} not divisible by factor {f}"),
            ));
        }
        let (lh, lw) = (h / f, w / f);
        let mut pooled = Vec::with_capacity(lh * lw);
        for ly in 0..lh {
            for lx in 0..lw {
                let mut s = 0.0f64;
                for y in ly * f..(ly + 1) * f {
                    for x in lx * f..(lx + 1) * f {
                        s += canvas.get(y, x) as f64;
                    }
                }
                pooled.push((s / (f * f) as f64) as f32);
            }
        }
        let mut data = Vec::with_capacity(self.channels * pooled.len());
        for _ in 0..self.channels {
            data.extend_from_slice(&pooled);
        }
        Latent::new(self.channels, lh, lw, data)
    }
}

/// Composites `glyph` into a blank canvas at the placement mask's bounding
/// box (aspect-preserving fit, centered, nearest-neighbor resampling) and
/// encodes it.
pub fn encode_glyph(glyph: &Grid, placement: &Grid, encoder: &dyn LatentEncoder) -> Result<Latent> {
    if !glyph.is_finite() {
        return Err(invalid("glyph", "contains non-finite values"));
    }
    let bbox = BBox::of_mask(placement).ok_or(Error::EmptyRegion)?;
    let f = encoder.factor();
    let canvas = compose_canvas(
        glyph,
        placement.height() * f,
        placement.width() * f,
        BBox {
            x0: bbox.x0 * f as u32,
            y0: bbox.y0 * f as u32,
            x1: (bbox.x1 + 1) * f as u32 - 1,
            y1: (bbox.y1 + 1) * f as u32 - 1,
        },
    );
    encoder.encode(&canvas)
}

/// Places `glyph` inside `target` on a zero canvas, scaled to fit.
pub fn compose_canvas(glyph: &Grid, height: usize, width: usize, target: BBox) -> Grid {
    let mut canvas = Grid::zeros(height, width);
    let (gh, gw) = glyph.shape();
    let (bw, bh) = (target.width() as f64, target.height() as f64);
    let scale = (bw / gw as f64).min(bh / gh as f64);
    let out_w = (libm::floor(gw as f64 * scale) as usize).clamp(1, target.width() as usize);
    let out_h = (libm::floor(gh as f64 * scale) as usize).clamp(1, target.height() as usize);
    let off_x = target.x0 as usize + (target.width() as usize - out_w) / 2;
    let off_y = target.y0 as usize + (target.height() as usize - out_h) / 2;
    for dy in 0..out_h {
        let sy = ((2 * dy + 1) * gh) / (2 * out_h);
        for dx in 0..out_w {
            let sx = ((2 * dx + 1) * gw) / (2 * out_w);
            let (y, x) = (off_y + dy, off_x + dx);
            if y < height && x < width {
                canvas.set(y, x, glyph.get(sy, sx));
            }
        }
    }
    canvas
}

/// Debug glyph rasterizer: one `cell × cell` block per character, drawn as a
/// rectangle outline with bars chosen by the code point. Whitespace leaves
/// its cell blank. Ink is 1.0 on a 0.0 background.
pub fn rasterize_block_glyphs(text: &str, cell: usize) -> Grid {
    let cell = cell.max(4);
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len().max(1);
    let mut g = Grid::zeros(cell, cell * n);
    let inset = cell / 8;
    let stroke = (cell / 8).max(1);
    for (i, ch) in chars.iter().enumerate() {
        if ch.is_whitespace() {
            continue;
        }
        let (x0, x1) = (i * cell + inset, (i + 1) * cell - inset - 1);
        let (y0, y1) = (inset, cell - inset - 1);
        let code = *ch as u32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let border = y < y0 + stroke || y + stroke > y1 || x < x0 + stroke || x + stroke > x1;
                let mid_y = (y0 + y1) / 2;
                let mid_x = (x0 + x1) / 2;
                let hbar = code & 1 == 1 && y >= mid_y && y < mid_y + stroke;
                let vbar = code & 2 == 2 && x >= mid_x && x < mid_x + stroke;
                if border || hbar || vbar {
                    g.set(y, x, 1.0);
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn latent(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> Latent {
        let mut data = vec![];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Latent::new(c, h, w, data).unwrap()
    }

    #[test]
    fn schedules_hit_endpoints() {
        let rf = NoiseSchedule::new(ScheduleKind::RectifiedFlow, 50).unwrap();
        assert_eq!(rf.coefficients(0).unwrap(), (1.0, 0.0));
        assert_eq!(rf.coefficients(50).unwrap(), (0.0, 1.0));
        assert_eq!(rf.coefficients(25).unwrap(), (0.5, 0.5));
        let vp = NoiseSchedule::new(ScheduleKind::VariancePreserving, 50).unwrap();
        assert_eq!(vp.coefficients(0).unwrap(), (1.0, 0.0));
        for t in 0..=50 {
            let (a, s) = vp.coefficients(t).unwrap();
            assert!((a * a + s * s - 1.0).abs() < 1e-12);
        }
        assert!(vp.coefficients(50).unwrap().0 < 1e-12);
        assert!(vp.coefficients(51).is_err());
        assert!(NoiseSchedule::new(ScheduleKind::RectifiedFlow, 0).is_err());
    }

    #[test]
    fn gain_formula() {
        assert_eq!(log_gabor_gain(0.15, 0.15, 0.55), 1.0);
        assert_eq!(log_gabor_gain(0.0, 0.15, 0.55), 0.0);
        let g = log_gabor_gain(0.3, 0.15, 0.55);
        let ln2 = core::f64::consts::LN_2;
        let ln055 = libm::log(0.55);
        assert!((g - libm::exp(-(ln2 * ln2) / (2.0 * ln055 * ln055))).abs() < 1e-15);
        assert!((g - 0.5106).abs() < 5e-4, "{g}");
    }

    #[test]
    fn kernel_dc_blocked_and_unit_at_f0() {
        let k = LogGaborKernel::build(8, 8, 0.25, 0.55).unwrap();
        assert_eq!(k.gain(0, 0), 0.0);
        assert_eq!(k.gain(0, 2), 1.0);
        assert_eq!(k.gain(2, 0), 1.0);
        assert!(k.gains().iter().all(|&g| (0.0..=1.0).contains(&g)));
        assert!(LogGaborKernel::build(8, 8, 0.0, 0.55).is_err());
        assert!(LogGaborKernel::build(8, 8, 0.6, 0.55).is_err());
        assert!(LogGaborKernel::build(8, 8, 0.2, 1.0).is_err());
    }

    #[test]
    fn identity_kernel_round_trips() {
        let z = latent(2, 6, 10, |c, y, x| (c as f32 + 1.0) * libm::sinf(y as f32 * 0.7 + x as f32));
        let k = LogGaborKernel::from_gains(6, 10, vec![1.0; 60]).unwrap();
        let out = spectral_modulate(&z, &k).unwrap();
        for (a, b) in out.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_input_is_blocked() {
        let z = latent(1, 8, 8, |_, _, _| 3.5);
        let k = LogGaborKernel::build(8, 8, 0.15, 0.55).unwrap();
        let out = spectral_modulate(&z, &k).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() < 1e-6));
        let wrong = LogGaborKernel::build(4, 8, 0.15, 0.55).unwrap();
        assert!(spectral_modulate(&z, &wrong).is_err());
    }

    #[test]
    fn noise_align_identity_and_pure_noise() {
        let z = latent(2, 4, 4, |c, y, x| (c * 16 + y * 4 + x) as f32);
        let rf = NoiseSchedule::new(ScheduleKind::RectifiedFlow, 10).unwrap();
        assert_eq!(noise_align(&z, 0, &rf, 7).unwrap(), z);
        let pure = noise_align(&z, 10, &rf, 7).unwrap();
        let zero = Latent::zeros(2, 4, 4);
        assert_eq!(noise_align(&zero, 10, &rf, 7).unwrap(), pure);
        assert_eq!(noise_align(&z, 5, &rf, 7).unwrap(), noise_align(&z, 5, &rf, 7).unwrap());
        assert_ne!(noise_align(&z, 5, &rf, 7).unwrap(), noise_align(&z, 5, &rf, 8).unwrap());
    }

    #[test]
    fn anneal_endpoints() {
        assert_eq!(anneal_weight(40.0, 40.0, 30.0).unwrap(), 1.0);
        assert_eq!(anneal_weight(30.0, 40.0, 30.0).unwrap(), 0.0);
        assert_eq!(anneal_weight(35.0, 40.0, 30.0).unwrap(), 0.5);
        assert!(anneal_weight(41.0, 40.0, 30.0).is_err());
        assert!(anneal_weight(30.0, 30.0, 30.0).is_err());
    }

    #[test]
    fn window_rounding_and_empty() {
        let w = InjectionWindow::from_fractions(50, 0.8, 0.6).unwrap();
        assert_eq!((w.start, w.end), (40, 30));
        assert_eq!(w.steps().count(), 11);
        let empty = InjectionWindow::from_fractions(50, 0.7, 0.7).unwrap();
        assert!(!empty.contains(35));
        assert_eq!(empty.steps().count(), 0);
        assert!(InjectionWindow::from_fractions(50, 0.6, 0.8).is_err());
        assert!(InjectionWindow::from_fractions(50, 1.2, 0.8).is_err());
    }

    #[test]
    fn masked_inject_examples() {
        let z = latent(1, 2, 2, |_, _, _| 2.0);
        let s = latent(1, 2, 2, |_, _, _| 4.0);
        let mut r = Grid::zeros(2, 2);
        r.set(0, 1, 1.0);
        let out = masked_inject(&z, &s, &r, 0.5).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 3.0, 2.0, 2.0]);
        assert_eq!(masked_inject(&z, &s, &r, 0.0).unwrap(), z);
        let full = Grid::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(masked_inject(&z, &s, &full, 1.0).unwrap(), s);
        assert!(masked_inject(&z, &s, &Grid::zeros(3, 2), 0.5).is_err());
        assert!(masked_inject(&z, &s, &r, 1.5).is_err());
    }

    #[test]
    fn inject_step_window_behaviour() {
        let z = latent(2, 8, 8, |c, y, x| (c + y * x) as f32 * 0.1);
        let z_ref = latent(2, 8, 8, |_, y, x| if (2..5).contains(&y) && x > 1 { 1.0 } else { 0.0 });
        let mut mask = Grid::zeros(8, 8);
        mask.set(3, 3, 1.0);
        let cfg = InjectionConfig {
            window: InjectionWindow::from_fractions(50, 0.8, 0.6).unwrap(),
            mask: mask.clone(),
            kernel: LogGaborKernel::build(8, 8, 0.15, 0.55).unwrap(),
            schedule: NoiseSchedule::new(ScheduleKind::RectifiedFlow, 50).unwrap(),
            seed: 3,
        };
        let (out, lam) = inject_step(&z, 45, &cfg, &z_ref).unwrap();
        assert_eq!((out, lam), (z.clone(), None));
        let (out, lam) = inject_step(&z, 30, &cfg, &z_ref).unwrap();
        assert_eq!((out, lam), (z.clone(), Some(0.0)));
        let (out, lam) = inject_step(&z, 35, &cfg, &z_ref).unwrap();
        assert_eq!(lam, Some(0.5));
        assert_ne!(out, z);
        let empty = InjectionConfig {
            mask: Grid::zeros(8, 8),
            ..cfg
        };
        assert_eq!(inject_step(&z, 35, &empty, &z_ref).unwrap().0, z);
    }

    #[test]
    fn stub_encoder_pools_single_cell() {
        let mut canvas = Grid::zeros(64, 64);
        for y in 16..24 {
            for x in 40..48 {
                canvas.set(y, x, 1.0);
            }
        }
        let z = AvgPoolEncoder::default().encode(&canvas).unwrap();
        assert_eq!(z.shape(), (1, 8, 8));
        for (i, &v) in z.as_slice().iter().enumerate() {
            assert_eq!(v, if i == 2 * 8 + 5 { 1.0 } else { 0.0 });
        }
        assert!(AvgPoolEncoder::default().encode(&Grid::zeros(10, 16)).is_err());
    }

    #[test]
    fn black_glyph_encodes_to_zero() {
        let mut placement = Grid::zeros(8, 8);
        placement.set(2, 2, 1.0);
        placement.set(3, 5, 1.0);
        let enc = AvgPoolEncoder {
            factor: 8,
            channels: 4,
        };
        let z = encode_glyph(&Grid::zeros(10, 30), &placement, &enc).unwrap();
        assert_eq!(z.shape(), (4, 8, 8));
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(
            encode_glyph(&Grid::zeros(2, 2), &Grid::zeros(8, 8), &enc),
            Err(Error::EmptyRegion)
        );
    }

    #[test]
    fn wide_glyph_scaled_not_cropped() {
        let glyph = Grid::new(2, 20, vec![1.0; 40]).unwrap();
        let target = BBox {
            x0: 4,
            y0: 4,
            x1: 13,
            y1: 13,
        };
        let canvas = compose_canvas(&glyph, 20, 20, target);
        let ink = BBox::of_mask(&canvas).unwrap();
        // Full glyph width squeezed into the 10-wide box, height scaled by 1/2.
        assert_eq!((ink.x0, ink.x1), (4, 13));
        assert_eq!(ink.height(), 1);
        let inked = canvas.as_slice().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(inked, 10);
    }

    #[test]
    fn block_glyphs_have_ink_per_char() {
        let g = rasterize_block_glyphs("AB C", 16);
        assert_eq!(g.shape(), (16, 64));
        for i in 0..4 {
            let ink: f32 = (0..16)
                .flat_map(|y| (i * 16..(i + 1) * 16).map(move |x| (y, x)))
                .map(|(y, x)| g.get(y, x))
                .sum();
            if i == 2 {
                assert_eq!(ink, 0.0);
            } else {
                assert!(ink > 0.0);
            }
        }
    }
}
