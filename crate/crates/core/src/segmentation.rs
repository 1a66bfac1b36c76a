//! Supercell extraction.
//!
//! Partitions a [`SemanticGrid`] into 4-connected clusters whose cells carry
//! mutually consistent probability vectors. The clustering is a SLIC-style
//! local k-means in the joint feature space
//! `(x * c / S, y * c / S, logit P_1, ..., logit P_N)` with
//! `S = sqrt(width * height / num_seeds)` and `c` the compactness. Seeds are
//! drawn with probability proportional to the local logit-space variance, so
//! that clusters start where the map changes.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inverse_logit, GridIndex, GridSpec, LogOdds, SemanticGrid};
use crate::io;

/// Share of the sampling mass spread uniformly over all cells.
pub const UNIFORM_SEED_FLOOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    pub num_seeds: usize,
    /// Weight of the spatial term relative to the logit term.
    pub compactness: f64,
    pub max_iters: usize,
    /// Fragments smaller than this are merged into a neighbor.
    pub min_cell_count: usize,
    pub rng_seed: u64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            num_seeds: 64,
            compactness: 0.25,
            max_iters: 10,
            min_cell_count: 4,
            rng_seed: 0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.num_seeds == 0 {
            return Err(Error::invalid("num_seeds must be >= 1"));
        }
        if self.num_seeds > spec.num_cells() {
            return Err(Error::invalid(format!(
                "num_seeds = {} exceeds the {} grid cells",
                self.num_seeds,
                spec.num_cells()
            )));
        }
        if !(self.compactness >= 0.0 && self.compactness.is_finite()) {
            return Err(Error::invalid("compactness must be a nonnegative number"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if self.min_cell_count == 0 {
            return Err(Error::invalid("min_cell_count must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supercell {
    pub id: u32,
    /// Member cells in row-major order.
    #[serde(skip)]
    pub members: Vec<GridIndex>,
    pub size: usize,
    /// Mean member position in cell coordinates (cell centers at `i + 0.5`).
    pub centroid: (f64, f64),
    /// Per-layer mean of member probabilities.
    pub mean_p: Vec<f64>,
    /// Per-layer variance of member log-odds.
    pub var_l: Vec<f64>,
}

impl Supercell {
    pub fn mean_logits(&self) -> Vec<f64> {
        self.mean_p
            .iter()
            .map(|&p| crate::grid::logit(crate::grid::Probability::new(p)).get())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub spec: GridSpec,
    /// Row-major supercell id per cell.
    pub labels: Vec<u32>,
    pub supercells: Vec<Supercell>,
}

impl Segmentation {
    /// Builds supercell statistics from a label array.
    ///
    /// Ids are renumbered to `0..k` in order of first appearance in a
    /// row-major scan. Connectivity is not checked here.
    pub fn from_labels(grid: &SemanticGrid, labels: &[u32]) -> Result<Self> {
        let spec = grid.spec().clone();
        if labels.len() != spec.num_cells() {
            return Err(Error::DimensionError {
                expected: spec.num_cells(),
                found: labels.len(),
            });
        }
        let (compact, count) = compact_ids(labels);
        let n_layers = grid.num_layers();
        let mut members: Vec<Vec<GridIndex>> = vec![Vec::new(); count];
        for (off, &id) in compact.iter().enumerate() {
            members[id as usize].push(spec.at_offset(off));
        }
        let layers: Vec<&[f64]> = (0..n_layers).map(|l| grid.layer_log_odds(l)).collect();
        let supercells = members
            .into_iter()
            .enumerate()
            .map(|(id, members)| {
                let size = members.len();
                let nf = size as f64;
                let (mut sx, mut sy) = (0.0, 0.0);
                let mut sum_p = vec![0.0; n_layers];
                let mut sum_l = vec![0.0; n_layers];
                for m in &members {
                    sx += m.x as f64 + 0.5;
                    sy += m.y as f64 + 0.5;
                    let off = spec.offset(*m);
                    for l in 0..n_layers {
                        let v = layers[l][off];
                        sum_l[l] += v;
                        sum_p[l] += inverse_logit(LogOdds(v)).get();
                    }
                }
                let mean_l: Vec<f64> = sum_l.iter().map(|s| s / nf).collect();
                let mut var_l = vec![0.0; n_layers];
                for m in &members {
                    let off = spec.offset(*m);
                    for l in 0..n_layers {
                        let d = layers[l][off] - mean_l[l];
                        var_l[l] += d * d;
                    }
                }
                Supercell {
                    id: id as u32,
                    size,
                    centroid: (sx / nf, sy / nf),
                    mean_p: sum_p.iter().map(|s| s / nf).collect(),
                    var_l: var_l.iter().map(|v| v / nf).collect(),
                    members,
                }
            })
            .collect();
        Ok(Segmentation {
            spec,
            labels: compact,
            supercells,
        })
    }

    pub fn num_supercells(&self) -> usize {
        self.supercells.len()
    }

    pub fn label_at(&self, idx: GridIndex) -> u32 {
        self.labels[self.spec.offset(idx)]
    }

    pub fn supercell_at(&self, idx: GridIndex) -> &Supercell {
        &self.supercells[self.label_at(idx) as usize]
    }

    /// Mean over supercells of the layer-averaged logit variance.
    pub fn mean_variance(&self) -> f64 {
        if self.supercells.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .supercells
            .iter()
            .map(|s| s.var_l.iter().sum::<f64>() / s.var_l.len().max(1) as f64)
            .sum();
        total / self.supercells.len() as f64
    }
}

fn compact_ids(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let next = map.len() as u32;
        out.push(*map.entry(l).or_insert(next));
    }
    (out, map.len())
}

/// Per-cell variance of log-odds over the 3x3 neighborhood (clipped at the
/// border), summed over layers.
pub fn local_variance(grid: &SemanticGrid) -> Vec<f64> {
    let spec = grid.spec();
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut out = vec![0.0; spec.num_cells()];
    for l in 0..grid.num_layers() {
        let data = grid.layer_log_odds(l);
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            let v = data[(ny * w + nx) as usize];
                            s += v;
                            s2 += v * v;
                            n += 1.0;
                        }
                    }
                }
                let mean = s / n;
                out[(y * w + x) as usize] += (s2 / n - mean * mean).max(0.0);
            }
        }
    }
    out
}

/// Draws `k` distinct cells with probability proportional to local variance
/// plus a uniform floor holding 10% of the sampling mass.
///
/// Returned cells are sorted row-major.
pub fn seed_variance_driven(grid: &SemanticGrid, k: usize, rng_seed: u64) -> Result<Vec<GridIndex>> {
    let spec = grid.spec();
    let n = spec.num_cells();
    if k == 0 {
        return Err(Error::invalid("seed count must be >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot draw {k} seeds from {n} cells"
        )));
    }
    if k == n {
        return Ok((0..n).map(|o| spec.at_offset(o)).collect());
    }
    let var = local_variance(grid);
    let total: f64 = var.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        var.iter()
            .map(|v| (1.0 - UNIFORM_SEED_FLOOR) * v / total + UNIFORM_SEED_FLOOR / n as f64)
            .collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let picked = sample_weighted(&mut rng, n, |i| weights[i], k)
        .map_err(|e| Error::Numerical(format!("seed sampling failed: {e}")))?;
    let mut offsets = picked.into_vec();
    offsets.sort_unstable();
    Ok(offsets.into_iter().map(|o| spec.at_offset(o)).collect())
}

struct Features {
    dim: usize,
    /// Row-major `[x', y', l_1..l_N]` per cell.
    data: Vec<f64>,
}

impl Features {
    fn new(grid: &SemanticGrid, spatial_scale: f64) -> Self {
        let spec = grid.spec();
        let n_layers = grid.num_layers();
        let dim = 2 + n_layers;
        let mut data = vec![0.0; spec.num_cells() * dim];
        for off in 0..spec.num_cells() {
            let idx = spec.at_offset(off);
            let row = &mut data[off * dim..(off + 1) * dim];
            row[0] = idx.x as f64 * spatial_scale;
            row[1] = idx.y as f64 * spatial_scale;
            for l in 0..n_layers {
                row[2 + l] = grid.layer_log_odds(l)[off];
            }
        }
        Features { dim, data }
    }

    #[inline]
    fn row(&self, off: usize) -> &[f64] {
        &self.data[off * self.dim..(off + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Feature of a seed: its position and the 3x3 mean of its log-odds.
fn seed_feature(features: &Features, spec: &GridSpec, idx: GridIndex) -> Vec<f64> {
    let mut f = features.row(spec.offset(idx)).to_vec();
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut acc = vec![0.0; features.dim - 2];
    let mut n = 0.0;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (idx.x as i64 + dx, idx.y as i64 + dy);
            if x >= 0 && y >= 0 && x < w && y < h {
                let row = features.row((y * w + x) as usize);
                for (a, v) in acc.iter_mut().zip(&row[2..]) {
                    *a += v;
                }
                n += 1.0;
            }
        }
    }
    for (dst, a) in f[2..].iter_mut().zip(acc) {
        *dst = a / n;
    }
    f
}

fn calmest_neighbor(spec: &GridSpec, var: &[f64], idx: GridIndex) -> GridIndex {
    let (w, h) = (spec.width as i64, spec.height as i64);
    let mut best = idx;
    let mut best_v = var[spec.offset(idx)];
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (idx.x as i64 + dx, idx.y as i64 + dy);
            if x >= 0 && y >= 0 && x < w && y < h {
                let v = var[(y * w + x) as usize];
                if v < best_v {
                    best_v = v;
                    best = GridIndex::new(x as usize, y as usize);
                }
            }
        }
    }
    best
}

/// Thins a variance-driven candidate pool down to `k` seeds with D^2
/// weighting in feature space, so that seeds spread over distinct regions.
fn select_seeds(
    grid: &SemanticGrid,
    features: &Features,
    params: &SegmentationParams,
) -> Result<Vec<Vec<f64>>> {
    let spec = grid.spec();
    let k = params.num_seeds;
    let pool_size = (4 * k).min(spec.num_cells());
    let pool = seed_variance_driven(grid, pool_size, params.rng_seed)?;
    if pool.len() == k {
        return Ok(pool.iter().map(|&i| seed_feature(features, spec, i)).collect());
    }
    // move candidates off edges, as SLIC does with its grid seeds
    let var = local_variance(grid);
    let mut moved: Vec<GridIndex> = pool.iter().map(|&i| calmest_neighbor(spec, &var, i)).collect();
    moved.sort_unstable_by_key(|&i| spec.offset(i));
    moved.dedup();
    // dense seeding can collapse candidates; keep the raw pool then
    let pool = if moved.len() >= k { moved } else { pool };
    let pool_features: Vec<Vec<f64>> = pool.iter().map(|&i| seed_feature(features, spec, i)).collect();
    if pool.len() == k {
        return Ok(pool_features);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut taken = vec![false; pool.len()];
    let first = rng.random_range(0..pool.len());
    taken[first] = true;
    let mut chosen = vec![pool_features[first].clone()];
    let mut d2: Vec<f64> = pool_features.iter().map(|f| sq_dist(f, &chosen[0])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().zip(&taken).filter(|(_, &t)| !t).map(|(d, _)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, (&d, &t)) in d2.iter().zip(&taken).enumerate() {
                if t {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("pool larger than k")
        } else {
            let free: Vec<usize> = (0..pool.len()).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        taken[pick] = true;
        chosen.push(pool_features[pick].clone());
        for (d, f) in d2.iter_mut().zip(&pool_features) {
            *d = d.min(sq_dist(f, &pool_features[pick]));
        }
    }
    Ok(chosen)
}

/// Segments the grid into supercells and enforces 4-connectivity.
pub fn extract_supercells(grid: &SemanticGrid, params: &SegmentationParams) -> Result<Segmentation> {
    let spec = grid.spec().clone();
    params.validate(&spec)?;
    let n = spec.num_cells();
    let step = (n as f64 / params.num_seeds as f64).sqrt();
    let features = Features::new(grid, params.compactness / step);
    let mut centers = select_seeds(grid, &features, params)?;
    let dim = features.dim;
    let radius = (2.0 * step).ceil() as i64;
    let (w, h) = (spec.width as i64, spec.height as i64);

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.max_iters {
        let mut next = vec![u32::MAX; n];
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        let scale = params.compactness / step;
        for (id, c) in centers.iter().enumerate() {
            // center position back in cell units
            let (cx, cy) = if scale > 0.0 {
                ((c[0] / scale).round() as i64, (c[1] / scale).round() as i64)
            } else {
                (0, 0)
            };
            let (x0, x1, y0, y1) = if scale > 0.0 {
                ((cx - radius).max(0), (cx + radius).min(w - 1), (cy - radius).max(0), (cy + radius).min(h - 1))
            } else {
                (0, w - 1, 0, h - 1)
            };
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let off = (y * w + x) as usize;
                    let d = sq_dist(features.row(off), c);
                    if d < dist[off] {
                        dist[off] = d;
                        next[off] = id as u32;
                    }
                }
            }
        }
        for off in 0..n {
            if next[off] == u32::MAX {
                let row = features.row(off);
                let mut best = (f64::INFINITY, 0u32);
                for (id, c) in centers.iter().enumerate() {
                    let d = sq_dist(row, c);
                    if d < best.0 {
                        best = (d, id as u32);
                    }
                }
                next[off] = best.1;
            }
        }
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (off, &id) in labels.iter().enumerate() {
            counts[id as usize] += 1;
            for (s, v) in sums[id as usize].iter_mut().zip(features.row(off)) {
                *s += v;
            }
        }
        for ((c, s), &cnt) in centers.iter_mut().zip(sums).zip(&counts) {
            if cnt > 0 {
                *c = s.into_iter().map(|v| v / cnt as f64).collect();
            }
        }
    }

    let raw = Segmentation::from_labels(grid, &labels)?;
    enforce_connectivity(grid, &raw, params.min_cell_count)
}

/// Splits every label into its 4-connected components and merges fragments
/// smaller than `min_cell_count` into the adjacent component whose mean
/// log-odds vector is closest. Ids are re-compacted.
pub fn enforce_connectivity(
    grid: &SemanticGrid,
    seg: &Segmentation,
    min_cell_count: usize,
) -> Result<Segmentation> {
    let spec = &seg.spec;
    if spec != grid.spec() {
        return Err(Error::invalid("segmentation and grid specs differ"));
    }
    let n = spec.num_cells();
    let (w, h) = (spec.width, spec.height);
    let n_layers = grid.num_layers();

    // connected components, numbered in row-major order of first cell
    let mut comp = vec![usize::MAX; n];
    let mut comp_members: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_members.len();
        let label = seg.labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(off) = queue.pop_front() {
            members.push(off);
            for nb in neighbors4(off, w, h) {
                if comp[nb] == usize::MAX && seg.labels[nb] == label {
                    comp[nb] = id;
                    queue.push_back(nb);
                }
            }
        }
        comp_members.push(members);
    }

    let mut sums: Vec<Vec<f64>> = comp_members
        .iter()
        .map(|m| {
            (0..n_layers)
                .map(|l| {
                    let data = grid.layer_log_odds(l);
                    m.iter().map(|&o| data[o]).sum()
                })
                .collect()
        })
        .collect();

    // merge small fragments, smallest first
    let mut alive: Vec<bool> = vec![true; comp_members.len()];
    loop {
        let candidate = (0..comp_members.len())
            .filter(|&c| alive[c] && comp_members[c].len() < min_cell_count)
            .min_by_key(|&c| (comp_members[c].len(), c));
        let Some(frag) = candidate else { break };
        let mut neighbors: Vec<usize> = comp_members[frag]
            .iter()
            .flat_map(|&o| neighbors4(o, w, h))
            .map(|nb| comp[nb])
            .filter(|&c| c != frag)
            .collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        if neighbors.is_empty() {
            // the whole grid is one small component
            break;
        }
        let frag_mean = mean_of(&sums[frag], comp_members[frag].len());
        let mut best = neighbors[0];
        let mut best_d = f64::INFINITY;
        for &c in &neighbors {
            let d = sq_dist(&frag_mean, &mean_of(&sums[c], comp_members[c].len()));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        let moved = std::mem::take(&mut comp_members[frag]);
        for &o in &moved {
            comp[o] = best;
        }
        comp_members[best].extend(moved);
        let frag_sum = std::mem::take(&mut sums[frag]);
        for (s, v) in sums[best].iter_mut().zip(frag_sum) {
            *s += v;
        }
        alive[frag] = false;
    }

    let labels: Vec<u32> = comp.iter().map(|&c| c as u32).collect();
    Segmentation::from_labels(grid, &labels)
}

fn mean_of(sum: &[f64], n: usize) -> Vec<f64> {
    sum.iter().map(|s| s / n as f64).collect()
}

fn neighbors4(off: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (off % w, off / w);
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = off - 1;
    }
    if x + 1 < w {
        out[1] = off + 1;
    }
    if y > 0 {
        out[2] = off - w;
    }
    if y + 1 < h {
        out[3] = off + w;
    }
    out.into_iter().filter(|&o| o != usize::MAX)
}

/// True if every label forms a single 4-connected region.
pub fn is_connected(seg: &Segmentation) -> bool {
    let (w, h) = (seg.spec.width, seg.spec.height);
    let mut seen = vec![false; seg.labels.len()];
    let mut visited_labels = vec![false; seg.num_supercells()];
    for start in 0..seg.labels.len() {
        if seen[start] {
            continue;
        }
        let label = seg.labels[start];
        if visited_labels[label as usize] {
            return false;
        }
        visited_labels[label as usize] = true;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(off) = stack.pop() {
            for nb in neighbors4(off, w, h) {
                if !seen[nb] && seg.labels[nb] == label {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    true
}

/// Fraction of true boundary edges (4-neighbor pairs with different truth
/// labels) across which the segmentation labels also differ.
///
/// Returns 1.0 when the truth has no boundary.
pub fn boundary_recall<T: PartialEq>(spec: &GridSpec, truth: &[T], labels: &[u32]) -> f64 {
    let (w, h) = (spec.width, spec.height);
    let (mut total, mut hit) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let off = y * w + x;
            let mut check = |nb: usize| {
                if truth[off] != truth[nb] {
                    total += 1;
                    if labels[off] != labels[nb] {
                        hit += 1;
                    }
                }
            };
            if x + 1 < w {
                check(off + 1);
            }
            if y + 1 < h {
                check(off + w);
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    /// Supercell centroid in cell coordinates.
    pub x: f64,
    pub y: f64,
    pub mean_p: Vec<f64>,
}

/// Topometric reduction: supercell centroids with their statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloudMap {
    pub points: Vec<CloudPoint>,
}

impl PointCloudMap {
    /// Nearest point to a position in cell coordinates; ties go to the lower
    /// point index. Returns `None` for an empty cloud.
    pub fn nearest(&self, x: f64, y: f64) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p.x - x).powi(2) + (p.y - y).powi(2);
            if d < best_d {
                best_d = d;
                best = Some(i);
            }
        }
        best
    }
}

pub fn to_point_cloud(seg: &Segmentation) -> PointCloudMap {
    PointCloudMap {
        points: seg
            .supercells
            .iter()
            .map(|s| CloudPoint {
                x: s.centroid.0,
                y: s.centroid.1,
                mean_p: s.mean_p.clone(),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationManifest {
    pub spec: GridSpec,
    pub params: SegmentationParams,
    pub num_supercells: usize,
    pub mean_variance: f64,
    pub supercells: Vec<Supercell>,
}

pub fn labels_blob_path(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.labels.u32"))
}

pub fn write_segmentation(
    dir: &Path,
    name: &str,
    seg: &Segmentation,
    params: &SegmentationParams,
) -> Result<()> {
    let manifest = SegmentationManifest {
        spec: seg.spec.clone(),
        params: params.clone(),
        num_supercells: seg.num_supercells(),
        mean_variance: seg.mean_variance(),
        supercells: seg.supercells.clone(),
    };
    io::write_json(&dir.join(format!("{name}.segmentation.json")), &manifest)?;
    io::write_u32_blob(&labels_blob_path(dir, name), &seg.labels)
}

/// Reads a label blob back and recomputes statistics against `grid`.
pub fn read_segmentation(dir: &Path, name: &str, grid: &SemanticGrid) -> Result<Segmentation> {
    let labels = io::read_u32_blob(&labels_blob_path(dir, name))?;
    Segmentation::from_labels(grid, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 0.005, (0.0, 0.0)).unwrap()
    }

    fn grid_from_fn(w: usize, h: usize, layers: usize, f: impl Fn(usize, usize, usize) -> f64) -> SemanticGrid {
        let s = spec(w, h);
        let data = (0..layers)
            .map(|l| {
                let v = (0..w * h).map(|o| f(o % w, o / w, l)).collect();
                (format!("l{l}"), v)
            })
            .collect();
        SemanticGrid::from_probabilities(s, data).unwrap()
    }

    #[test]
    fn uniform_grid_seeds_are_distinct() {
        let grid = grid_from_fn(8, 8, 2, |_, _, _| 0.3);
        let seeds = seed_variance_driven(&grid, 4, 3).unwrap();
        assert_eq!(seeds.len(), 4);
        let mut d = seeds.clone();
        d.dedup();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn seeding_all_cells() {
        let grid = grid_from_fn(3, 2, 1, |_, _, _| 0.5);
        let seeds = seed_variance_driven(&grid, 6, 0).unwrap();
        assert_eq!(seeds.len(), 6);
        assert!(seed_variance_driven(&grid, 7, 0).is_err());
        assert!(seed_variance_driven(&grid, 0, 0).is_err());
    }

    #[test]
    fn seeding_follows_variance() {
        // noise only in the lower-left quadrant, away from its border
        let w = 40;
        let mut hits = 0usize;
        let runs = 50;
        for run in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(run);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let vals: Vec<f64> = (0..w * w)
                .map(|o| {
                    let (x, y) = (o % w, o / w);
                    if x < w / 2 - 1 && y < w / 2 - 1 {
                        inverse_logit(LogOdds(noise.sample(&mut rng))).get()
                    } else {
                        0.5
                    }
                })
                .collect();
            let grid = SemanticGrid::from_probabilities(spec(w, w), vec![("a".into(), vals)]).unwrap();
            let seeds = seed_variance_driven(&grid, 100, run).unwrap();
            let inside = seeds.iter().filter(|s| s.x < w / 2 && s.y < w / 2).count();
            assert!(inside >= 85, "run {run}: {inside}");
            hits += inside;
        }
        assert!(hits as f64 / runs as f64 >= 85.0);
    }

    #[test]
    fn seeding_is_deterministic() {
        let grid = grid_from_fn(10, 10, 1, |x, y, _| if (x + y) % 3 == 0 { 0.8 } else { 0.3 });
        assert_eq!(
            seed_variance_driven(&grid, 10, 42).unwrap(),
            seed_variance_driven(&grid, 10, 42).unwrap()
        );
    }

    #[test]
    fn homogeneous_grid_single_seed() {
        let grid = grid_from_fn(30, 7, 3, |_, _, _| 0.7);
        let params = SegmentationParams {
            num_seeds: 1,
            ..Default::default()
        };
        let seg = extract_supercells(&grid, &params).unwrap();
        assert_eq!(seg.num_supercells(), 1);
        assert_eq!(seg.supercells[0].size, 210);
    }

    #[test]
    fn two_halves_full_recall() {
        let grid = grid_from_fn(24, 16, 2, |x, _, l| if l == 0 && x < 12 { 0.9 } else if l == 0 { 0.1 } else { 0.5 });
        let truth: Vec<u8> = (0..24 * 16).map(|o| (o % 24 < 12) as u8).collect();
        for seed in 0..10 {
            let params = SegmentationParams {
                num_seeds: 2,
                compactness: 0.1,
                rng_seed: seed,
                ..Default::default()
            };
            let seg = extract_supercells(&grid, &params).unwrap();
            assert_eq!(boundary_recall(grid.spec(), &truth, &seg.labels), 1.0, "seed {seed}");
        }
    }

    #[test]
    fn four_quadrants_are_pure() {
        let q = |x: usize, y: usize| (x >= 10) as usize + 2 * (y >= 10) as usize;
        let grid = grid_from_fn(20, 20, 2, |x, y, l| {
            let bit = (q(x, y) >> l) & 1;
            if bit == 1 { 0.9 } else { 0.1 }
        });
        for seed in 0..10 {
            let params = SegmentationParams {
                num_seeds: 4,
                rng_seed: seed,
                ..Default::default()
            };
            let seg = extract_supercells(&grid, &params).unwrap();
            assert_eq!(seg.num_supercells(), 4, "seed {seed}");
            for s in &seg.supercells {
                assert_eq!(s.size, 100);
                for v in &s.var_l {
                    assert!(*v < 1e-9);
                }
            }
        }
    }

    #[test]
    fn connected_segmentation_is_preserved() {
        let grid = grid_from_fn(6, 4, 1, |x, _, _| if x < 3 { 0.2 } else { 0.8 });
        let labels: Vec<u32> = (0..24).map(|o| if o % 6 < 3 { 7 } else { 3 }).collect();
        let seg = Segmentation::from_labels(&grid, &labels).unwrap();
        let fixed = enforce_connectivity(&grid, &seg, 4).unwrap();
        assert_eq!(fixed.num_supercells(), 2);
        assert_eq!(boundary_recall(grid.spec(), &labels, &fixed.labels), 1.0);
        assert!(is_connected(&fixed));
    }

    #[test]
    fn islands_are_split_or_merged() {
        // label 0 appears as two islands separated by label 1
        let grid = grid_from_fn(5, 5, 1, |_, _, _| 0.5);
        let labels: Vec<u32> = (0..25)
            .map(|o| {
                let x = o % 5;
                if x == 2 { 1 } else { 0 }
            })
            .collect();
        let seg = Segmentation::from_labels(&grid, &labels).unwrap();
        assert!(!is_connected(&seg));
        for min in [1, 4, 11] {
            let fixed = enforce_connectivity(&grid, &seg, min).unwrap();
            assert!(is_connected(&fixed), "min {min}");
            let total: usize = fixed.supercells.iter().map(|s| s.size).sum();
            assert_eq!(total, 25);
        }
        assert_eq!(enforce_connectivity(&grid, &seg, 1).unwrap().num_supercells(), 3);
    }

    #[test]
    fn fragment_goes_to_closer_region() {
        // strip: AAA x BBB, x is closer to B in logit space
        let vals = [0.1, 0.1, 0.1, 0.7, 0.8, 0.8, 0.8];
        let grid = SemanticGrid::from_probabilities(
            spec(7, 1),
            vec![("a".into(), vals.to_vec())],
        )
        .unwrap();
        let labels = vec![0, 0, 0, 1, 2, 2, 2];
        let seg = Segmentation::from_labels(&grid, &labels).unwrap();
        let fixed = enforce_connectivity(&grid, &seg, 2).unwrap();
        assert_eq!(fixed.num_supercells(), 2);
        assert_eq!(fixed.labels[3], fixed.labels[4]);
        assert_ne!(fixed.labels[3], fixed.labels[2]);
    }

    #[test]
    fn point_cloud_examples() {
        let grid = grid_from_fn(4, 2, 1, |_, _, _| 0.6);
        let seg = Segmentation::from_labels(&grid, &[0; 8]).unwrap();
        let pc = to_point_cloud(&seg);
        assert_eq!(pc.points.len(), 1);
        assert!((pc.points[0].x - 2.0).abs() < 1e-12 && (pc.points[0].y - 1.0).abs() < 1e-12);

        let labels: Vec<u32> = (0..64).map(|o| ((o % 8 >= 4) as u32) + 2 * ((o / 8 >= 4) as u32)).collect();
        let grid = grid_from_fn(8, 8, 1, |_, _, _| 0.5);
        let pc = to_point_cloud(&Segmentation::from_labels(&grid, &labels).unwrap());
        let mut centers: Vec<(f64, f64)> = pc.points.iter().map(|p| (p.x, p.y)).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [(2.0, 2.0), (2.0, 6.0), (6.0, 2.0), (6.0, 6.0)];
        for (c, e) in centers.iter().zip(expected) {
            assert!((c.0 - e.0).abs() <= 0.5 && (c.1 - e.1).abs() <= 0.5);
        }

        let tiny = grid_from_fn(1, 1, 2, |_, _, _| 0.4);
        let pc = to_point_cloud(&extract_supercells(&tiny, &SegmentationParams { num_seeds: 1, ..Default::default() }).unwrap());
        assert_eq!(pc.points.len(), 1);
    }

    #[test]
    fn mean_p_matches_members() {
        let grid = grid_from_fn(9, 9, 2, |x, y, l| 0.05 + 0.1 * ((x * 7 + y * 3 + l) % 9) as f64);
        let seg = extract_supercells(&grid, &SegmentationParams { num_seeds: 6, min_cell_count: 3, ..Default::default() }).unwrap();
        for s in &seg.supercells {
            for l in 0..2 {
                let mean: f64 = s
                    .members
                    .iter()
                    .map(|m| grid.probability(l, *m).unwrap().get())
                    .sum::<f64>()
                    / s.members.len() as f64;
                assert!((mean - s.mean_p[l]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_params() {
        let grid = grid_from_fn(2, 2, 1, |_, _, _| 0.5);
        let too_many = SegmentationParams { num_seeds: 5, ..Default::default() };
        assert!(matches!(extract_supercells(&grid, &too_many), Err(Error::InvalidParams(_))));
        let zero = SegmentationParams { max_iters: 0, num_seeds: 1, ..Default::default() };
        assert!(extract_supercells(&grid, &zero).is_err());
    }
}
