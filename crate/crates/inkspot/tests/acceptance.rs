//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Every expected value comes from an oracle written here, not from
//! the library.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use inkspot::tensor_io::{decode, encode, header_len, Tensor};
use inkspot_core::clt::{
    char_difficulty, prompt_score, stratify, CharStats, CharTable, ScoringWeights, UnknownPolicy,
};
use inkspot_core::fft::Fft2;
use inkspot_core::localize::{soft_iou, AnchorMode};
use inkspot_core::pipeline::LocalizeParams;
use inkspot_core::sgmi::{
    anneal_weight, inject_step, masked_inject, spectral_modulate, InjectionConfig, InjectionWindow,
    LogGaborKernel, NoiseSchedule, ScheduleKind,
};
use inkspot_core::sim::{generate, localization_iou, token_set_experiment, SimSpec};
use inkspot_core::topology::{dbscan_labels, otsu_binarize};
use inkspot_core::{Grid, Latent};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_latent(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Latent {
    let data = (0..c * h * w).map(|_| r.random_range(-2.0f32..2.0)).collect();
    Latent::new(c, h, w, data).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> Grid {
    let p = r.random::<f64>();
    Grid::from_fn(h, w, |_, _| if r.random_bool(p) { 1.0 } else { 0.0 })
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

// ---------------------------------------------------------------- soft IoU

fn soft_iou_oracle() -> Check {
    let mut r = rng(1);
    for case in 0..1000 {
        let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
        let (pa, pb) = (r.random::<f64>(), r.random::<f64>());
        let a: Vec<bool> = (0..h * w).map(|_| r.random_bool(pa)).collect();
        let b: Vec<bool> = (0..h * w).map(|_| r.random_bool(pb)).collect();
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
        let expected = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        let to_grid = |v: &[bool]| Grid::new(h, w, v.iter().map(|&x| x as u8 as f32).collect()).unwrap();
        let got = soft_iou(&to_grid(&a), &to_grid(&b)).map_err(err)?;
        ensure(got == expected, || format!("binary pair {case}: {got} != {expected}"))?;
    }
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let (h, w) = (r.random_range(1..=32), r.random_range(1..=32));
        let sparsity = r.random::<f64>();
        let mut draw = || -> Vec<f32> {
            (0..h * w)
                .map(|_| if r.random_bool(sparsity) { 0.0 } else { r.random::<f32>() })
                .collect()
        };
        let (a, b) = (draw(), draw());
        let mut num = 0.0f64;
        let mut sa = 0.0f64;
        let mut sb = 0.0f64;
        for i in (0..h * w).rev() {
            num += a[i] as f64 * b[i] as f64;
            sa += a[i] as f64;
            sb += b[i] as f64;
        }
        let den = sa + sb - num;
        let expected = if den > 0.0 { num / den } else { 0.0 };
        let got = soft_iou(&Grid::new(h, w, a).unwrap(), &Grid::new(h, w, b).unwrap()).map_err(err)?;
        worst = worst.max((got - expected).abs());
        ensure(worst <= 1e-6, || format!("continuous pair {case}: |Δ| = {worst:e}"))?;
    }
    Ok(format!("1000 binary pairs exact, 1000 continuous pairs max |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------- Otsu

fn bin_of(v: f32) -> u64 {
    ((v.clamp(0.0, 1.0) as f64 * 256.0).floor() as u64).min(255)
}

/// Exhaustive search over every cut, scored from the pixel partition itself.
fn otsu_exhaustive(values: &[f32]) -> Option<u64> {
    let bins: Vec<u64> = values.iter().map(|&v| bin_of(v)).collect();
    let mut best: Option<(u64, u128, u128)> = None;
    for t in 0..256u64 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0u64, 0u64, 0u64);
        for &b in &bins {
            if b <= t {
                n0 += 1;
                s0 += b;
            } else {
                n1 += 1;
                s1 += b;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 as i128) * (n1 as i128) - (s1 as i128) * (n0 as i128);
        let num = d.unsigned_abs() * d.unsigned_abs();
        let den = n0 as u128 * n1 as u128;
        if num == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map(|b| b.0)
}

fn random_map(r: &mut ChaCha8Rng, kind: usize) -> (usize, usize, Vec<f32>) {
    let (h, w) = (r.random_range(1..=32), r.random_range(1..=32));
    let n = h * w;
    let values = match kind {
        0 => (0..n).map(|_| r.random::<f32>()).collect(),
        1 => (0..n)
            .map(|_| {
                let centre = if r.random_bool(0.3) { 0.8 } else { 0.25 };
                let jitter: f32 = (0..3).map(|_| r.random_range(-0.06f32..0.06)).sum();
                (centre + jitter).clamp(0.0, 1.0)
            })
            .collect(),
        2 => {
            let levels: Vec<f32> = (0..r.random_range(1..=4))
                .map(|_| (r.random_range(0..256u32) as f32 + 0.5) / 256.0)
                .collect();
            (0..n).map(|_| levels[r.random_range(0..levels.len())]).collect()
        }
        3 => vec![r.random::<f32>(); n],
        _ => (0..n).map(|_| r.random_range(0..=256u32) as f32 / 256.0).collect(),
    };
    (h, w, values)
}

fn otsu_oracle() -> Check {
    let mut r = rng(2);
    let mut no_cut = 0;
    for case in 0..500 {
        let (h, w, values) = random_map(&mut r, case % 5);
        let expected = otsu_exhaustive(&values);
        let got = otsu_binarize(&Grid::new(h, w, values.clone()).unwrap(), 256).map_err(err)?;
        ensure(got.cut_bin.map(|c| c as u64) == expected, || {
            format!("map {case}: cut {:?}, exhaustive {expected:?}", got.cut_bin)
        })?;
        let want: Vec<f32> = values
            .iter()
            .map(|&v| if expected.is_some_and(|t| bin_of(v) > t) { 1.0 } else { 0.0 })
            .collect();
        ensure(got.mask.as_slice() == want.as_slice(), || format!("map {case}: mask differs"))?;
        no_cut += expected.is_none() as usize;
    }
    Ok(format!("500 maps match exhaustive search ({no_cut} without a separating cut)"))
}

// ---------------------------------------------------------------- DBSCAN

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut root = i;
    while parent[root] != root {
        root = parent[root];
    }
    let mut i = i;
    while parent[i] != root {
        let next = parent[i];
        parent[i] = root;
        i = next;
    }
    root
}

/// O(n²) reference: union-find over core points; a border point joins the
/// neighboring cluster whose first core comes earliest in row-major order.
fn dbscan_brute(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
        (dx * dx + dy * dy).sqrt() <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.1.total_cmp(&pb.1).then(pa.0.total_cmp(&pb.0)).then(a.cmp(&b))
    });
    let mut number: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &order {
        if core[i] {
            let root = find(&mut parent, i);
            let next = number.len();
            number.entry(root).or_insert(next);
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                return Some(number[&find(&mut parent, i)]);
            }
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| number[&find(&mut parent, j)])
                .min()
        })
        .collect()
}

fn canonical(labels: &[Option<usize>]) -> Vec<Option<usize>> {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = seen.len();
                *seen.entry(c).or_insert(next)
            })
        })
        .collect()
}

fn dbscan_oracle() -> Check {
    let mut r = rng(3);
    let (mut noise, mut clusters) = (0usize, 0usize);
    for case in 0..200 {
        let n = r.random_range(1..=200);
        let side = r.random_range(4..=40) as f64;
        let continuous = case % 4 == 3;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if continuous {
                    (r.random::<f64>() * side, r.random::<f64>() * side)
                } else {
                    (r.random_range(0.0..side).floor(), r.random_range(0.0..side).floor())
                }
            })
            .collect();
        let eps = [1.0, 1.5, 2.0, 2.5, 3.0][r.random_range(0..5)];
        let min_pts = r.random_range(1..=6);
        let got = dbscan_labels(&points, eps, min_pts).map_err(err)?;
        let want = dbscan_brute(&points, eps, min_pts);
        ensure(canonical(&got) == canonical(&want), || {
            format!("set {case} (n={n}, eps={eps}, min_pts={min_pts}): partitions differ")
        })?;
        noise += want.iter().filter(|l| l.is_none()).count();
        clusters += want.iter().flatten().max().map_or(0, |m| m + 1);
    }
    Ok(format!("200 sets match brute force ({clusters} clusters, {noise} noise points)"))
}

// ---------------------------------------------------------------- FFT / Log-Gabor

fn rel_err(a: &Latent, b: &Latent) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        num += ((x - y) as f64).powi(2);
        den += (*y as f64).powi(2);
    }
    (num / den).sqrt()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn cosine(c: usize, h: usize, w: usize, ky: usize, kx: usize) -> Latent {
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                let phase = 2.0 * std::f64::consts::PI * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                data.push(phase.cos() as f32);
            }
        }
    }
    Latent::new(c, h, w, data).unwrap()
}

fn fft_analytics() -> Check {
    let mut r = rng(4);
    let shapes = [(4, 64, 64), (4, 48, 40), (2, 17, 23), (1, 1, 7), (3, 30, 1)];
    let mut round_trip = 0.0f64;
    for &(c, h, w) in &shapes {
        let z = random_latent(&mut r, c, h, w);
        let identity = LogGaborKernel::from_gains(h, w, vec![1.0; h * w]).map_err(err)?;
        round_trip = round_trip.max(rel_err(&spectral_modulate(&z, &identity).map_err(err)?, &z));
    }
    ensure(round_trip < 1e-5, || format!("identity round trip relative error {round_trip:e}"))?;

    let mut dc = 0.0f64;
    for &(c, h, w) in &shapes {
        let z = Latent::new(c, h, w, vec![3.7; c * h * w]).unwrap();
        let k = LogGaborKernel::build(h, w, 0.15, 0.55).map_err(err)?;
        let out = spectral_modulate(&z, &k).map_err(err)?;
        dc = dc.max(out.as_slice().iter().map(|v| v.abs() as f64).fold(0.0, f64::max));
    }
    ensure(dc < 1e-6, || format!("constant input leaks {dc:e}"))?;

    // 6/40 cycles per sample is exactly f0 = 0.15.
    let (h, w) = (40, 40);
    let k = LogGaborKernel::build(h, w, 0.15, 0.55).map_err(err)?;
    let mut passband = 0.0f64;
    for (ky, kx) in [(0, 6), (6, 0)] {
        let z = cosine(2, h, w, ky, kx);
        passband = passband.max(max_abs_diff(spectral_modulate(&z, &k).map_err(err)?.as_slice(), z.as_slice()));
    }
    ensure(passband <= 1e-4, || format!("passband gain off by {passband:e}"))?;

    let mut stopband = 0.0f64;
    for (ky, kx) in [(0, 2), (3, 4), (0, 15), (1, 0), (20, 20)] {
        let z = cosine(1, h, w, ky, kx);
        let gain = k.gain(ky, kx) as f32;
        let expected: Vec<f32> = z.as_slice().iter().map(|v| v * gain).collect();
        stopband = stopband.max(max_abs_diff(spectral_modulate(&z, &k).map_err(err)?.as_slice(), &expected));
    }
    ensure(stopband <= 1e-4, || format!("out-of-band response off by {stopband:e}"))?;

    let mut parseval = 0.0f64;
    for case in 0..100 {
        let (c, h, w) = (r.random_range(1..=4), r.random_range(1..=48), r.random_range(1..=48));
        let z = random_latent(&mut r, c, h, w);
        let plan = Fft2::new(h, w);
        let mut buf: Vec<Complex64> = z.channel(0).iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        let time: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        plan.forward(&mut buf);
        let freq: f64 = buf.iter().map(|v| v.norm_sqr()).sum::<f64>() / (h * w) as f64;
        parseval = parseval.max((time - freq).abs() / time);
        let f0 = r.random_range(0.02..=0.5);
        let sigma = r.random_range(0.2..0.95);
        let k = LogGaborKernel::build(h, w, f0, sigma).map_err(err)?;
        let out = spectral_modulate(&z, &k).map_err(err)?;
        let (e_in, e_out) = (z.l2_norm().powi(2), out.l2_norm().powi(2));
        ensure(e_out <= e_in * (1.0 + 1e-6), || format!("latent {case}: energy grew {e_in} -> {e_out}"))?;
    }
    ensure(parseval < 1e-9, || format!("Parseval identity off by {parseval:e}"))?;
    Ok(format!(
        "round trip {round_trip:.1e}, DC {dc:.1e}, passband {passband:.1e}, out-of-band {stopband:.1e}, \
         100 latents energy-bounded"
    ))
}

// ---------------------------------------------------------------- annealing

fn annealing() -> Check {
    let mut r = rng(5);
    for total in [7u32, 10, 20, 50, 100, 1000] {
        let w = InjectionWindow::from_fractions(total, 0.8, 0.6).map_err(err)?;
        ensure(w.weight(w.start) == Some(1.0), || format!("T={total}: λ(start) = {:?}", w.weight(w.start)))?;
        ensure(w.weight(w.end) == Some(0.0), || format!("T={total}: λ(end) = {:?}", w.weight(w.end)))?;
    }
    for _ in 0..1000 {
        let end = r.random_range(0..1000u32);
        let start = r.random_range(end + 1..=1001);
        let (s, e) = (start as f64, end as f64);
        let mid = anneal_weight((s + e) / 2.0, s, e).map_err(err)?;
        ensure(
            anneal_weight(s, s, e) == Ok(1.0) && anneal_weight(e, s, e) == Ok(0.0) && mid == 0.5,
            || format!("window [{end}, {start}]: midpoint {mid}"),
        )?;
    }

    for case in 0..100 {
        let total = r.random_range(10..=100u32);
        let start_frac = r.random_range(0.2..0.9);
        let end_frac = r.random_range(0.0..start_frac);
        let window = InjectionWindow::from_fractions(total, start_frac, end_frac).map_err(err)?;
        let (c, h, w) = (r.random_range(1..=4), r.random_range(2..=12), r.random_range(2..=12));
        let kind = if r.random_bool(0.5) { ScheduleKind::RectifiedFlow } else { ScheduleKind::VariancePreserving };
        let cfg = InjectionConfig {
            window,
            mask: random_mask(&mut r, h, w),
            kernel: LogGaborKernel::build(h, w, 0.15, 0.55).map_err(err)?,
            schedule: NoiseSchedule::new(kind, total).map_err(err)?,
            seed: r.random(),
        };
        let t = loop {
            let t = r.random_range(0..=total);
            if !(t >= window.end && t <= window.start) {
                break t;
            }
        };
        let z = random_latent(&mut r, c, h, w);
        let z_ref = random_latent(&mut r, c, h, w);
        let (out, lambda) = inject_step(&z, t, &cfg, &z_ref).map_err(err)?;
        ensure(lambda.is_none() && same_bits(out.as_slice(), z.as_slice()), || {
            format!("step {case}: t={t} outside [{}, {}] changed the latent", window.end, window.start)
        })?;
    }
    Ok("λ(start)=1, λ(end)=0, λ(mid)=0.5 exactly; 100 out-of-window steps bitwise identity".into())
}

// ---------------------------------------------------------------- masked inject

fn masked_isolation() -> Check {
    let mut r = rng(6);
    for case in 0..100 {
        let (c, h, w) = (r.random_range(1..=4), r.random_range(1..=16), r.random_range(1..=16));
        let z = random_latent(&mut r, c, h, w);
        let zs = random_latent(&mut r, c, h, w);
        let mask = random_mask(&mut r, h, w);
        let lambda = r.random::<f64>();
        let out = masked_inject(&z, &zs, &mask, lambda).map_err(err)?;
        let zero = masked_inject(&z, &zs, &mask, 0.0).map_err(err)?;
        let one = masked_inject(&z, &zs, &mask, 1.0).map_err(err)?;
        ensure(same_bits(zero.as_slice(), z.as_slice()), || format!("case {case}: λ=0 changed z"))?;
        for ch in 0..c {
            for (i, &m) in mask.as_slice().iter().enumerate() {
                let (orig, src) = (z.channel(ch)[i], zs.channel(ch)[i]);
                if m == 0.0 {
                    ensure(
                        out.channel(ch)[i].to_bits() == orig.to_bits() && one.channel(ch)[i].to_bits() == orig.to_bits(),
                        || format!("case {case}: cell ({ch}, {i}) outside the mask changed"),
                    )?;
                } else {
                    ensure(one.channel(ch)[i].to_bits() == src.to_bits(), || {
                        format!("case {case}: λ=1 cell ({ch}, {i}) is not z_sgmi")
                    })?;
                }
            }
        }
    }
    Ok("100 cases: outside cells bitwise unchanged, λ=0 and λ=1 exact".into())
}

// ---------------------------------------------------------------- synthetic

fn synthetic_localization() -> Check {
    let spec = SimSpec::default();
    ensure(
        (spec.height, spec.width, spec.steps, spec.layers) == (64, 64, 50, 8),
        || "default SimSpec is not 64×64, T=50, L=8".into(),
    )?;
    let params = LocalizeParams::default();
    let anchors = spec.anchors(AnchorMode::EntitySink).map_err(err)?;
    let mut ious = Vec::new();
    for seed in 0..20 {
        let s = SimSpec { seed, ..spec.clone() };
        let (stack, truth) = generate(&s).map_err(err)?;
        ious.push(localization_iou(&stack, &anchors, &params, &truth).map_err(err)?);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
    let clean = SimSpec::noiseless();
    let (stack, truth) = generate(&clean).map_err(err)?;
    let clean_iou = localization_iou(&stack, &anchors, &params, &truth).map_err(err)?;
    ensure(mean >= 0.70, || format!("mean IoU {mean:.4} < 0.70"))?;
    ensure(clean_iou >= 0.95, || format!("noiseless IoU {clean_iou:.4} < 0.95"))?;
    Ok(format!("20 seeds mean IoU {mean:.4} (min {min:.4}), noiseless {clean_iou:.4}"))
}

fn token_set_ordering() -> Check {
    let summaries = token_set_experiment(&SimSpec::default(), 20, &LocalizeParams::default()).map_err(err)?;
    let get = |m: AnchorMode| summaries.iter().find(|s| s.mode == m).expect("every mode is run");
    let (eo, so, es) = (get(AnchorMode::EntityOnly), get(AnchorMode::SinkOnly), get(AnchorMode::EntitySink));
    let line = format!(
        "mean IoU entity {:.4} / sink {:.4} / entity+sink {:.4}; step variance entity {:.2e} / sink {:.2e}",
        eo.mean_iou, so.mean_iou, es.mean_iou, eo.timestep_variance, so.timestep_variance
    );
    ensure(es.mean_iou >= eo.mean_iou.max(so.mean_iou) - 0.02, || format!("ordering violated: {line}"))?;
    ensure(so.timestep_variance < eo.timestep_variance, || format!("sink-only not more stable: {line}"))?;
    Ok(line)
}

// ---------------------------------------------------------------- CLT

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn clt_scoring() -> Check {
    let w = ScoringWeights::default();
    let stats = |strokes, rank| CharStats { strokes, rank };
    let table = CharTable::new([('一', stats(1, 1)), ('龘', stats(11, 11)), ('永', stats(5, 7))]).map_err(err)?;
    let d = |c| char_difficulty(c, &table, &w).map_err(err);
    ensure(close(d('一')?, 0.0), || "D at the minima is not 0".into())?;
    ensure(close(d('龘')?, 1.0), || "D at the maxima is not 1".into())?;
    ensure(close(d('永')?, 0.5), || "K=0.4, R=0.6 does not give D=0.5".into())?;
    ensure(close(d('X')?, 1.0), || "unknown character is not D=1".into())?;
    let strict = ScoringWeights { unknown: UnknownPolicy::Reject, ..w };
    ensure(char_difficulty('X', &table, &strict).is_err(), || "reject policy accepted an unknown".into())?;

    let one = prompt_score(&["一"], &table, &w).map_err(err)?;
    ensure(
        close(one.c_char, 0.0) && close(one.c_len, 0.05) && close(one.c_seg, 0.0) && close(one.score, 0.05 / 3.0),
        || format!("single-character prompt: {one:?}"),
    )?;
    for n in [20, 25] {
        let long = prompt_score(&["永".repeat(n)], &table, &w).map_err(err)?;
        ensure(close(long.c_len, 1.0), || format!("{n} characters: C_len {}", long.c_len))?;
    }
    let mixed = prompt_score(&["一永", "龘"], &table, &w).map_err(err)?;
    ensure(
        close(mixed.c_char, 0.5) && close(mixed.c_len, 0.15) && close(mixed.c_seg, 0.25) && close(mixed.score, 0.3),
        || format!("two-segment prompt: {mixed:?}"),
    )?;
    let tiers = stratify(&[0.1, 0.5, 0.9, 0.33], &[0.33, 0.66]).map_err(err)?;
    ensure(tiers == vec![vec![0], vec![1, 3], vec![2]], || format!("tiers {tiers:?}"))?;
    ensure(stratify(&[], &[0.33, 0.66]).map_err(err)? == vec![Vec::<usize>::new(); 3], || "empty list".into())?;
    ensure(stratify(&[0.5], &[0.66, 0.33]).is_err(), || "descending edges accepted".into())?;

    let mut r = rng(9);
    let entries: Vec<(char, CharStats)> = (0..300u32)
        .map(|i| {
            let c = char::from_u32(0x4E00 + i).unwrap();
            (c, stats(r.random_range(1..=30), r.random_range(1..=5000)))
        })
        .collect();
    let table = CharTable::new(entries.clone()).map_err(err)?;
    let extras = [' ', ',', '!', '。', 'Q'];
    for case in 0..1000 {
        let segments: Vec<String> = (0..r.random_range(1..=7))
            .map(|_| {
                (0..r.random_range(1..=10))
                    .map(|i| {
                        if i > 0 && r.random_bool(0.1) {
                            extras[r.random_range(0..extras.len())]
                        } else {
                            entries[r.random_range(0..entries.len())].0
                        }
                    })
                    .collect()
            })
            .collect();
        let base = prompt_score(&segments, &table, &w).map_err(err)?;
        let parts = [base.c_char, base.c_len, base.c_seg, base.score];
        ensure(parts.iter().all(|v| (0.0..=1.0).contains(v)), || format!("prompt {case}: out of range {parts:?}"))?;
        ensure(close(base.score, (base.c_char + base.c_len + base.c_seg) / 3.0), || {
            format!("prompt {case}: score is not the weighted mean")
        })?;

        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let scaled = ScoringWeights { w_char: scale, w_len: scale, w_seg: scale, ..w };
        let s2 = prompt_score(&segments, &table, &scaled).map_err(err)?.score;
        ensure(close(s2, base.score), || format!("prompt {case}: scaling by {scale} moved the score"))?;

        let reversed: Vec<String> = segments.iter().rev().map(|s| s.chars().rev().collect()).collect();
        let s3 = prompt_score(&reversed, &table, &w).map_err(err)?.score;
        ensure(s3 == base.score, || format!("prompt {case}: permutation moved the score"))?;

        let seg = r.random_range(0..segments.len());
        let chars: Vec<char> = segments[seg].chars().collect();
        let pos = r.random_range(0..chars.len());
        let old = char_difficulty(chars[pos], &table, &w).map_err(err)?;
        let harder: Vec<char> = entries
            .iter()
            .map(|e| e.0)
            .chain(['Z'])
            .filter(|&c| char_difficulty(c, &table, &w).unwrap() > old)
            .collect();
        if harder.is_empty() || !inkspot_core::clt::is_scorable(chars[pos]) {
            continue;
        }
        let mut swapped = chars.clone();
        swapped[pos] = harder[r.random_range(0..harder.len())];
        let mut segs = segments.clone();
        segs[seg] = swapped.into_iter().collect();
        let s4 = prompt_score(&segs, &table, &w).map_err(err)?.score;
        ensure(s4 >= base.score, || format!("prompt {case}: harder character lowered {} -> {s4}", base.score))?;
    }
    Ok("hand examples within 1e-12; 1000 fuzzed prompts monotone, homogeneous, permutation-invariant".into())
}

// ---------------------------------------------------------------- determinism

fn inkspot(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_inkspot")).args(args).output().map_err(err)?;
    ensure(out.status.success(), || {
        format!("inkspot {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn tree_hashes(root: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&path).map_err(err)?);
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    inkspot(&["simulate", "--seed", "7", "--out", &p("sim")])?;
    inkspot(&["simulate", "--seed", "7", "--out", &p("sim2")])?;
    let config = dir.path().join("sim").join("run.json");
    let config = config.to_string_lossy();
    for name in ["a", "b"] {
        inkspot(&["run", "--config", &config, "--seed", "3", "--set", &format!("out_dir={}", p(name))])?;
    }
    let (a, b) = (tree_hashes(&dir.path().join("a"))?, tree_hashes(&dir.path().join("b"))?);
    ensure(!a.is_empty() && a == b, || {
        let diff: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
        format!("run trees differ: {diff:?}")
    })?;
    let (s1, s2) = (tree_hashes(&dir.path().join("sim"))?, tree_hashes(&dir.path().join("sim2"))?);
    ensure(s1 == s2, || "simulated bundles differ".into())?;
    Ok(format!("two runs: {} identical files; two simulations: {} identical files", a.len(), s1.len()))
}

// ---------------------------------------------------------------- format fuzz

fn random_tensor(r: &mut ChaCha8Rng) -> Tensor {
    let dims: Vec<usize> = (0..r.random_range(1..=4)).map(|_| r.random_range(1..=5)).collect();
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| r.random_range(-1e3f32..1e3)).collect()).unwrap()
}

fn format_fuzz() -> Check {
    let mut r = rng(11);
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for case in 0..10_000 {
        let base = encode(&random_tensor(&mut r));
        let hlen = header_len(base[6] as usize);
        let mut bytes = base.clone();
        match r.random_range(0..7) {
            0 => bytes[r.random_range(0..hlen)] = r.random(),
            1 => bytes[r.random_range(0..hlen)] ^= r.random_range(1..=255u8),
            2 => bytes.truncate(r.random_range(0..base.len())),
            3 => bytes.extend((0..r.random_range(1..=8)).map(|_| r.random::<u8>())),
            4 => {
                let at = 7 + 4 * r.random_range(0..base[6] as usize);
                let v = [0u32, 1, u32::MAX, r.random()][r.random_range(0..4)];
                bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
            }
            5 => bytes[6] = r.random(),
            _ => {
                bytes = (0..r.random_range(0..64)).map(|_| r.random()).collect();
                if r.random_bool(0.5) && bytes.len() >= 4 {
                    bytes[..4].copy_from_slice(b"FTNS");
                }
            }
        }
        let outcome = catch_unwind(AssertUnwindSafe(|| decode(&bytes)))
            .map_err(|_| format!("mutation {case} panicked the reader"))?;
        let class = match outcome {
            Ok(t) => {
                ensure(encode(&t) == bytes, || format!("mutation {case} accepted but does not re-encode"))?;
                "accepted".to_owned()
            }
            Err(e) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap().to_owned(),
        };
        *classes.entry(class).or_default() += 1;
    }
    let mut single = 0;
    for _ in 0..20 {
        let base = encode(&random_tensor(&mut r));
        for at in 0..header_len(base[6] as usize) {
            for v in 0..=255u8 {
                if v == base[at] {
                    continue;
                }
                let mut bytes = base.clone();
                bytes[at] = v;
                let rejected = catch_unwind(AssertUnwindSafe(|| decode(&bytes).is_err()))
                    .map_err(|_| "single-byte corruption panicked the reader".to_owned())?;
                ensure(rejected, || format!("header byte {at} = {v} accepted"))?;
                single += 1;
            }
        }
    }
    let summary: Vec<String> = classes.iter().map(|(k, v)| format!("{k} {v}")).collect();
    Ok(format!("10000 mutations classified ({}); {single} single-byte header corruptions rejected", summary.join(", ")))
}

// ---------------------------------------------------------------- driver

fn main() {
    let checks: [(&str, Option<u64>, fn() -> Check); 11] = [
        ("soft-IoU oracle", Some(5), soft_iou_oracle),
        ("Otsu oracle", Some(10), otsu_oracle),
        ("DBSCAN oracle", Some(30), dbscan_oracle),
        ("FFT/Log-Gabor analytics", None, fft_analytics),
        ("annealing boundaries", None, annealing),
        ("masked-inject isolation", None, masked_isolation),
        ("synthetic localization", Some(120), synthetic_localization),
        ("token-set ordering", None, token_set_ordering),
        ("CLT scoring", Some(5), clt_scoring),
        ("determinism", None, determinism),
        ("format fuzz", None, format_fuzz),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(s)) if elapsed > Duration::from_secs(s) => {
                Err(format!("took {:.2}s, limit {s}s", elapsed.as_secs_f64()))
            }
            (r, _) => r,
        };
        let budget = limit.map_or(String::new(), |s| format!(" < {s}s"));
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2}s{budget}]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.2}s{budget}]", elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
