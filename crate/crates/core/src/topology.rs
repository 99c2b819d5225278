//! Topology-aware refinement of a localization map into one writing mask.
//!
//! Box-mean smoothing, Otsu binarization, DBSCAN over foreground pixels,
//! quantile-based region quality, and nearest-neighbor resizing to latent
//! resolution.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::grid::{normalize_f64, Grid};
use crate::stats::quantile_linear;

/// A grid cell. Ordering is row-major: by `y`, then `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pixel {
    pub y: u32,
    pub x: u32,
}

impl Pixel {
    pub fn new(x: u32, y: u32) -> Self {
        Self { y, x }
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    /// Bounding box of the nonzero cells of `mask`, if any.
    pub fn of_mask(mask: &Grid) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) != 0.0 {
                    let (x, y) = (x as u32, y as u32);
                    bbox = Some(match bbox {
                        None => BBox { x0: x, y0: y, x1: x, y1: y },
                        Some(b) => BBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        bbox
    }
}

/// Replaces each cell by the mean of its `(2r+1)²` window (clipped at the
/// borders), then re-normalizes to `[0, 1]`.
pub fn neighborhood_aggregate(map: &Grid, radius: usize) -> Result<Grid> {
    if radius == 0 {
        return Err(invalid("radius", "must be at least 1"));
    }
    let (h, w) = map.shape();
    // Summed-area table for O(1) window sums.
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += map.get(y, x) as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut means = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            means.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Grid::new(h, w, normalize_f64(means.iter().copied()))
}

/// Result of Otsu binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap {
    /// Values in `{0, 1}`.
    pub mask: Grid,
    /// Value-space lower edge of the foreground class (`(cut + 1) / bins`);
    /// 1.0 when the map has no split.
    pub threshold_used: f32,
    /// Highest histogram bin assigned to the background, or `None` when no
    /// cut separates the histogram.
    pub cut_bin: Option<usize>,
}

impl BinaryMap {
    pub fn foreground(&self) -> Vec<Pixel> {
        let mut out = Vec::new();
        for y in 0..self.mask.height() {
            for x in 0..self.mask.width() {
                if self.mask.get(y, x) != 0.0 {
                    out.push(Pixel::new(x as u32, y as u32));
                }
            }
        }
        out
    }
}

/// Histogram bin of a `[0, 1]` value under `bins` equal-width levels.
#[inline]
pub fn histogram_bin(v: f32, bins: usize) -> usize {
    let v = v.clamp(0.0, 1.0) as f64;
    (libm::floor(v * bins as f64) as usize).min(bins - 1)
}

/// Between-class variance of a cut, up to the constant factor `1/N²`, as the
/// exact fraction `(s0·N − S·n0)² / (n0·n1)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CutScore {
    num: u128,
    den: u128,
    approx: f64,
}

impl CutScore {
    pub(crate) fn new(n0: u64, s0: u64, n: u64, s: u64) -> Self {
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            return Self {
                num: 0,
                den: 1,
                approx: 0.0,
            };
        }
        let diff = (s0 as i128) * (n as i128) - (s as i128) * (n0 as i128);
        let mag = diff.unsigned_abs();
        let den = (n0 as u128) * (n1 as u128);
        let approx = (diff as f64) * (diff as f64) / den as f64;
        Self {
            num: mag.checked_mul(mag).unwrap_or(u128::MAX),
            den,
            approx,
        }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub(crate) fn cmp(&self, other: &Self) -> Ordering {
        match (
            self.num.checked_mul(other.den),
            other.num.checked_mul(self.den),
        ) {
            (Some(a), Some(b)) if self.num != u128::MAX && other.num != u128::MAX => a.cmp(&b),
            _ => self.approx.total_cmp(&other.approx),
        }
    }
}

/// Otsu binarization over a `bins`-level histogram of `[0, 1]` values.
///
/// A cut at bin `t` puts bins `0..=t` in the background. The cut maximizing
/// between-class variance wins, ties resolved toward the lower cut. Maps with
/// no separating cut (e.g. constant maps) give an all-zero mask.
pub fn otsu_binarize(map: &Grid, bins: usize) -> Result<BinaryMap> {
    if bins < 2 {
        return Err(invalid("bins", "need at least 2 histogram levels"));
    }
    let quantized: Vec<usize> = map.as_slice().iter().map(|&v| histogram_bin(v, bins)).collect();
    let mut hist = vec![0u64; bins];
    for &b in &quantized {
        hist[b] += 1;
    }
    let n: u64 = hist.iter().sum();
    let s: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    let mut best: Option<(usize, CutScore)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &count) in hist.iter().enumerate() {
        n0 += count;
        s0 += t as u64 * count;
        let score = CutScore::new(n0, s0, n, s);
        if best.as_ref().is_none_or(|(_, b)| score.cmp(b) == Ordering::Greater) {
            best = Some((t, score));
        }
    }
    let cut = best.filter(|(_, sc)| !sc.is_zero()).map(|(t, _)| t);
    let mask = Grid::new(
        map.height(),
        map.width(),
        quantized
            .iter()
            .map(|&b| if cut.is_some_and(|t| b > t) { 1.0 } else { 0.0 })
            .collect(),
    )?;
    Ok(BinaryMap {
        mask,
        threshold_used: cut.map_or(1.0, |t| (t + 1) as f32 / bins as f32),
        cut_bin: cut,
    })
}

/// DBSCAN cluster labels for 2-D points (`None` = noise).
///
/// Neighborhoods are closed Euclidean balls (`d ≤ eps`) that include the
/// point itself. Points are visited in row-major order (by `y`, then `x`, then
/// input index) so clusters are numbered by their first core point, and a
/// border point joins the earliest-numbered cluster that reaches it.
pub fn dbscan_labels(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Result<Vec<Option<usize>>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", "must be positive and finite"));
    }
    if min_pts == 0 {
        return Err(invalid("min_pts", "must be at least 1"));
    }
    if let Some(p) = points.iter().find(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(invalid("points", alloc::format!("non-finite point {p:?}")));
    }
    let index = SpatialIndex::new(points, eps);

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .1
            .total_cmp(&points[b].1)
            .then(points[a].0.total_cmp(&points[b].0))
            .then(a.cmp(&b))
    });

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Cluster(usize),
    }
    let mut state = vec![State::Unvisited; points.len()];
    let mut next_cluster = 0;
    let mut neighbors = Vec::new();
    let mut queue = Vec::new();

    for &p in &order {
        if state[p] != State::Unvisited {
            continue;
        }
        index.query(points, p, &mut neighbors);
        if neighbors.len() < min_pts {
            state[p] = State::Noise;
            continue;
        }
        let c = next_cluster;
        next_cluster += 1;
        state[p] = State::Cluster(c);
        queue.clear();
        queue.extend_from_slice(&neighbors);
        while let Some(q) = queue.pop() {
            match state[q] {
                State::Cluster(_) => continue,
                State::Noise => {
                    // Non-core: becomes a border point, not expanded.
                    state[q] = State::Cluster(c);
                    continue;
                }
                State::Unvisited => {}
            }
            state[q] = State::Cluster(c);
            index.query(points, q, &mut neighbors);
            if neighbors.len() >= min_pts {
                queue.extend(neighbors.iter().copied().filter(|&r| !matches!(state[r], State::Cluster(_))));
            }
        }
    }
    Ok(state
        .into_iter()
        .map(|s| match s {
            State::Cluster(c) => Some(c),
            _ => None,
        })
        .collect())
}

/// Uniform bucket grid with cell size `eps`.
struct SpatialIndex {
    eps: f64,
    eps2: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    fn new(points: &[(f64, f64)], eps: f64) -> Self {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self {
            eps,
            eps2: eps * eps,
            cells,
        }
    }

    fn cell(p: &(f64, f64), eps: f64) -> (i64, i64) {
        (libm::floor(p.0 / eps) as i64, libm::floor(p.1 / eps) as i64)
    }

    fn query(&self, points: &[(f64, f64)], i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = points[i];
        let (cx, cy) = Self::cell(&p, self.eps);
        // ±2 cells tolerates rounding in the bucket computation.
        for gy in cy - 2..=cy + 2 {
            for gx in cx - 2..=cx + 2 {
                if let Some(bucket) = self.cells.get(&(gx, gy)) {
                    for &j in bucket {
                        let (dx, dy) = (points[j].0 - p.0, points[j].1 - p.1);
                        if dx * dx + dy * dy <= self.eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
    }
}

/// A connected cluster of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Region {
    /// Sorted row-major.
    pub pixels: Vec<Pixel>,
    pub bbox: BBox,
}

impl Region {
    /// Builds a region from a non-empty pixel set.
    pub fn from_pixels(mut pixels: Vec<Pixel>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::EmptyRegion);
        }
        pixels.sort_unstable();
        pixels.dedup();
        let mut bbox = BBox {
            x0: u32::MAX,
            y0: u32::MAX,
            x1: 0,
            y1: 0,
        };
        for p in &pixels {
            bbox.x0 = bbox.x0.min(p.x);
            bbox.y0 = bbox.y0.min(p.y);
            bbox.x1 = bbox.x1.max(p.x);
            bbox.y1 = bbox.y1.max(p.y);
        }
        Ok(Self { pixels, bbox })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// DBSCAN over pixel coordinates; noise is dropped and regions are returned
/// in cluster order.
pub fn dbscan(pixels: &[Pixel], eps: f64, min_pts: usize) -> Result<Vec<Region>> {
    let points: Vec<(f64, f64)> = pixels.iter().map(|p| (p.x as f64, p.y as f64)).collect();
    let labels = dbscan_labels(&points, eps, min_pts)?;
    let n_clusters = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut groups: Vec<Vec<Pixel>> = vec![Vec::new(); n_clusters];
    for (p, label) in pixels.iter().zip(&labels) {
        if let Some(c) = label {
            groups[*c].push(*p);
        }
    }
    groups.into_iter().map(Region::from_pixels).collect()
}

/// High-quantile threshold τ of `map` over the union of all region pixels.
pub fn quality_threshold(regions: &[Region], map: &Grid, tau_quantile: f64) -> Result<f64> {
    if !(tau_quantile > 0.0 && tau_quantile < 1.0) {
        return Err(invalid("tau_quantile", "must lie in (0, 1)"));
    }
    let mut union: Vec<Pixel> = regions.iter().flat_map(|r| r.pixels.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    let values: Vec<f32> = union
        .iter()
        .map(|p| map.get(p.y as usize, p.x as usize))
        .collect();
    quantile_linear(&values, tau_quantile).ok_or(Error::NoRegion)
}

/// Fraction of the region's pixels whose map value exceeds `tau`.
pub fn score_region(region: &Region, map: &Grid, tau: f64) -> Result<f64> {
    if region.pixels.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let above = region
        .pixels
        .iter()
        .filter(|p| map.get(p.y as usize, p.x as usize) as f64 > tau)
        .count();
    Ok(above as f64 / region.pixels.len() as f64)
}

/// Scores every region against one global threshold; returns `(τ, q_i)`.
pub fn score_regions(regions: &[Region], map: &Grid, tau_quantile: f64) -> Result<(f64, Vec<f64>)> {
    let tau = quality_threshold(regions, map, tau_quantile)?;
    let q = regions
        .iter()
        .map(|r| score_region(r, map, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok((tau, q))
}

/// Binary writing mask at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    /// Values in `{0, 1}`, `latent_h × latent_w`.
    pub mask: Grid,
    /// Index of the chosen region in the candidate list.
    pub region_index: usize,
}

impl RegionMask {
    /// Wraps an existing mask; it must be binary with some foreground.
    pub fn from_grid(mask: Grid) -> Result<Self> {
        if mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("region mask", "values must be 0 or 1"));
        }
        if mask.as_slice().iter().all(|&v| v == 0.0) {
            return Err(Error::EmptyRegion);
        }
        Ok(Self {
            mask,
            region_index: 0,
        })
    }

    pub fn area(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_mask(&self.mask).expect("region mask has foreground")
    }
}

/// Index of the best region: highest quality, then most pixels, then the
/// smallest bounding-box top-left corner in row-major order.
pub fn best_region(regions: &[Region], qualities: &[f64]) -> Result<usize> {
    if regions.is_empty() {
        return Err(Error::NoRegion);
    }
    if regions.len() != qualities.len() {
        return Err(Error::ShapeMismatch {
            what: "region qualities",
            expected: alloc::format!("{}", regions.len()),
            found: alloc::format!("{}", qualities.len()),
        });
    }
    let key = |i: usize| (qualities[i], regions[i].len(), regions[i].bbox.y0, regions[i].bbox.x0);
    Ok((0..regions.len())
        .min_by(|&a, &b| {
            let (qa, na, ya, xa) = key(a);
            let (qb, nb, yb, xb) = key(b);
            qb.total_cmp(&qa)
                .then(nb.cmp(&na))
                .then(ya.cmp(&yb))
                .then(xa.cmp(&xb))
        })
        .expect("non-empty"))
}

/// Nearest-neighbor resize of a binary grid (cell-center sampling).
pub fn resize_nearest(mask: &Grid, out_h: usize, out_w: usize) -> Grid {
    let (h, w) = mask.shape();
    Grid::from_fn(out_h, out_w, |y, x| {
        let sy = ((2 * y + 1) * h) / (2 * out_h);
        let sx = ((2 * x + 1) * w) / (2 * out_w);
        mask.get(sy.min(h - 1), sx.min(w - 1))
    })
}

/// Picks the best region, rasterizes it on the `grid_shape` patch grid and
/// resizes it to `latent_h × latent_w`.
///
/// If nearest-neighbor sampling misses a very small region entirely, every
/// latent cell containing one of its pixels is set instead, so the mask is
/// never empty.
pub fn select_and_resize(
    regions: &[Region],
    qualities: &[f64],
    grid_shape: (usize, usize),
    latent_h: usize,
    latent_w: usize,
) -> Result<RegionMask> {
    if latent_h == 0 || latent_w == 0 {
        return Err(invalid("latent dims", "must be positive"));
    }
    let idx = best_region(regions, qualities)?;
    let (h, w) = grid_shape;
    let mut raster = Grid::zeros(h, w);
    for p in &regions[idx].pixels {
        if p.y as usize >= h || p.x as usize >= w {
            return Err(invalid("region", "pixel outside grid"));
        }
        raster.set(p.y as usize, p.x as usize, 1.0);
    }
    let mut mask = resize_nearest(&raster, latent_h, latent_w);
    if mask.as_slice().iter().all(|&v| v == 0.0) {
        for p in &regions[idx].pixels {
            let y = (p.y as usize * latent_h) / h;
            let x = (p.x as usize * latent_w) / w;
            mask.set(y, x, 1.0);
        }
    }
    Ok(RegionMask {
        mask,
        region_index: idx,
    })
}

/// Parameters of the refinement chain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TopologyParams {
    pub radius: usize,
    pub bins: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub tau_quantile: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            radius: 1,
            bins: 256,
            eps: 1.5,
            min_pts: 4,
            tau_quantile: 0.75,
        }
    }
}

/// Every intermediate of one refinement, for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub smoothed: Grid,
    pub binary: BinaryMap,
    pub regions: Vec<Region>,
    pub tau: f64,
    pub qualities: Vec<f64>,
    pub mask: RegionMask,
}

/// Smooth, binarize, cluster, score on the unsmoothed map, select, resize.
pub fn refine(map: &Grid, params: &TopologyParams, latent_h: usize, latent_w: usize) -> Result<Refinement> {
    let smoothed = neighborhood_aggregate(map, params.radius)?;
    let binary = otsu_binarize(&smoothed, params.bins)?;
    let regions = dbscan(&binary.foreground(), params.eps, params.min_pts)?;
    if regions.is_empty() {
        return Err(Error::NoRegion);
    }
    let (tau, qualities) = score_regions(&regions, map, params.tau_quantile)?;
    let mask = select_and_resize(&regions, &qualities, map.shape(), latent_h, latent_w)?;
    Ok(Refinement {
        smoothed,
        binary,
        regions,
        tau,
        qualities,
        mask,
    })
}
