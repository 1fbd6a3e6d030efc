//! The neighborhood baseline: item–item Pearson correlations, shrinkage,
//! a logarithmic distance transform, and metric multidimensional scaling
//! with missing-entry support.
//!
//! Pairs of items with no common raters (or a zero-variance co-rating
//! vector) have an undefined correlation; the flag travels through the
//! whole pipeline and such pairs simply carry no weight in the embedding.

use std::io::{Read, Write};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::RatingDataset;
use crate::rng;
use crate::snapshot::{self, SnapshotError};
use crate::standardize::{self, CoordinateSpace, StandardizeError};

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("cannot build a distance matrix from an empty dataset")]
    EmptyDataset,
    #[error("invalid MDS config: {0}")]
    InvalidConfig(String),
    #[error("distance structure is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error(transparent)]
    Standardize(#[from] StandardizeError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Similarity floor for the distance transform: the pure logarithm diverges
/// at s = -1, so distances are capped at `to_distance(-1 + 1e-6)`.
pub const SIMILARITY_CAP: f64 = -1.0 + 1e-6;

/// Shrinkage constant used for the reference experiments.
pub const PAPER_SHRINK_LAMBDA: f64 = 20.0;

/// Pearson correlation of two items over their common raters.
///
/// Returns `(correlation, co_rater_count)`. The correlation is undefined
/// (`None`) when the items share no raters or either co-rating vector has
/// zero variance. Means are taken over the common raters only.
pub fn pearson(ds: &RatingDataset, item_a: usize, item_b: usize) -> (Option<f64>, usize) {
    let by_item = ds.by_item();
    pearson_rows(&by_item[item_a], &by_item[item_b])
}

/// [`pearson`] on pre-extracted per-item adjacency rows (sorted by user).
pub fn pearson_rows(row_a: &[(u32, f64)], row_b: &[(u32, f64)]) -> (Option<f64>, usize) {
    // Merge the sorted user lists; accumulation order is ascending user id.
    let mut pairs = Vec::new();
    let (mut x, mut y) = (0usize, 0usize);
    while x < row_a.len() && y < row_b.len() {
        match row_a[x].0.cmp(&row_b[y].0) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                pairs.push((row_a[x].1, row_b[y].1));
                x += 1;
                y += 1;
            }
        }
    }
    let n = pairs.len();
    if n == 0 {
        return (None, 0);
    }
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_b = 0.0;
    for &(a, b) in &pairs {
        let (da, db) = (a - mean_a, b - mean_b);
        num += da * db;
        den_a += da * da;
        den_b += db * db;
    }
    if den_a <= 0.0 || den_b <= 0.0 {
        return (None, n);
    }
    let rho = num / (den_a.sqrt() * den_b.sqrt());
    (Some(rho.clamp(-1.0, 1.0)), n)
}

/// Shrinks a correlation toward zero by `n / (n + lambda)` to damp
/// small-sample estimates.
pub fn shrink(rho: f64, n_ij: usize, lambda: f64) -> f64 {
    debug_assert!(rho.abs() <= 1.0 + 1e-12);
    debug_assert!(lambda >= 0.0);
    if n_ij == 0 {
        return 0.0;
    }
    let n = n_ij as f64;
    n / (n + lambda) * rho
}

/// Logarithmic similarity-to-distance transform, capped at the
/// [`SIMILARITY_CAP`] singularity guard.
pub fn to_distance(s: f64) -> f64 {
    debug_assert!((-1.0..=1.0).contains(&s));
    -((1.0 + s.max(SIMILARITY_CAP)) / 2.0).ln()
}

/// Largest representable distance, `to_distance(-1)` after capping.
pub fn max_distance() -> f64 {
    to_distance(-1.0)
}

#[inline]
fn pair_index(i: usize, j: usize, items: usize) -> usize {
    debug_assert!(i < j && j < items);
    i * (2 * items - i - 1) / 2 + (j - i - 1)
}

fn pair_count(items: usize) -> usize {
    items * items.saturating_sub(1) / 2
}

/// Plain bit set over packed pair indices.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Bitmap {
    words: Vec<u64>,
    len: usize,
}

impl Bitmap {
    fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    #[inline]
    fn get(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    #[inline]
    fn set(&mut self, idx: usize) {
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Packed symmetric item–item similarities with co-rater counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    items: usize,
    values: Vec<f64>,
    counts: Vec<u32>,
    missing: Bitmap,
    diag_counts: Vec<u32>,
    shrink_lambda: f64,
}

impl SimilarityMatrix {
    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn shrink_lambda(&self) -> f64 {
        self.shrink_lambda
    }

    /// Shrunk similarity; `None` where the correlation is undefined. The
    /// diagonal is the shrinkage factor itself (an item correlates perfectly
    /// with itself).
    pub fn similarity(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(shrink(1.0, self.diag_counts[i] as usize, self.shrink_lambda));
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let idx = pair_index(i, j, self.items);
        (!self.missing.get(idx)).then(|| self.values[idx])
    }

    /// Number of users who rated both items (raters of `i` on the diagonal).
    pub fn co_raters(&self, i: usize, j: usize) -> usize {
        if i == j {
            return self.diag_counts[i] as usize;
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.counts[pair_index(i, j, self.items)] as usize
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.missing.get(pair_index(i, j, self.items))
    }
}

/// Computes all pairwise shrunk similarities.
pub fn build_similarity_matrix(
    ds: &RatingDataset,
    shrink_lambda: f64,
) -> Result<SimilarityMatrix, NeighborError> {
    if ds.item_count() == 0 {
        return Err(NeighborError::EmptyDataset);
    }
    let items = ds.item_count();
    let by_item = ds.by_item();

    let rows: Vec<Vec<(f64, u32, bool)>> = (0..items)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..items)
                .map(|j| {
                    let (rho, n) = pearson_rows(&by_item[i], &by_item[j]);
                    match rho {
                        Some(rho) => (shrink(rho, n, shrink_lambda), n as u32, false),
                        None => (0.0, n as u32, true),
                    }
                })
                .collect()
        })
        .collect();

    let total = pair_count(items);
    let mut values = vec![0.0; total];
    let mut counts = vec![0u32; total];
    let mut missing = Bitmap::new(total);
    let mut at = 0usize;
    for row in rows {
        for (value, count, miss) in row {
            values[at] = value;
            counts[at] = count;
            if miss {
                missing.set(at);
            }
            at += 1;
        }
    }
    Ok(SimilarityMatrix {
        items,
        values,
        counts,
        missing,
        diag_counts: ds.ratings_per_item().iter().map(|&c| c as u32).collect(),
        shrink_lambda,
    })
}

/// Packed symmetric nonnegative distances with a missing-pair bitmap.
/// Self-distances are fixed at zero and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    items: usize,
    values: Vec<f64>,
    missing: Bitmap,
}

impl DistanceMatrix {
    /// Builds from a callback over ordered pairs `i < j`; `None` marks a
    /// missing entry.
    pub fn from_fn(
        items: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self, NeighborError> {
        let total = pair_count(items);
        let mut values = vec![0.0; total];
        let mut missing = Bitmap::new(total);
        for i in 0..items {
            for j in (i + 1)..items {
                let idx = pair_index(i, j, items);
                match f(i, j) {
                    Some(d) => {
                        if !(d >= 0.0) {
                            return Err(NeighborError::InvalidConfig(format!(
                                "distance ({i},{j}) = {d} is not nonnegative"
                            )));
                        }
                        values[idx] = d;
                    }
                    None => missing.set(idx),
                }
            }
        }
        Ok(Self {
            items,
            values,
            missing,
        })
    }

    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let idx = pair_index(i, j, self.items);
        (!self.missing.get(idx)).then(|| self.values[idx])
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.missing.get(pair_index(i, j, self.items))
    }

    pub fn missing_count(&self) -> usize {
        self.missing.count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = pair_count(self.items);
        if total == 0 {
            0.0
        } else {
            self.missing_count() as f64 / total as f64
        }
    }

    /// Connected components of the defined-pair graph.
    fn components(&self) -> usize {
        if self.items == 0 {
            return 0;
        }
        let mut parent: Vec<usize> = (0..self.items).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..self.items {
            for j in (i + 1)..self.items {
                if !self.missing.get(pair_index(i, j, self.items)) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let mut roots: Vec<usize> = (0..self.items).map(|i| find(&mut parent, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    const MAGIC: &'static [u8; 4] = b"FSDM";
    const VERSION: u32 = 1;

    pub fn write_snapshot<W: Write>(&self, w: &mut W, provenance: &str) -> Result<(), NeighborError> {
        snapshot::write_header(w, Self::MAGIC, Self::VERSION, provenance)?;
        snapshot::write_u32(w, self.items as u32)?;
        for &v in &self.values {
            snapshot::write_f64(w, v)?;
        }
        snapshot::write_u64(w, self.missing.words.len() as u64)?;
        for &word in &self.missing.words {
            snapshot::write_u64(w, word)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(Self, String), NeighborError> {
        let provenance = snapshot::read_header(r, Self::MAGIC, Self::VERSION)?;
        let items = snapshot::read_u32(r)? as usize;
        let total = pair_count(items);
        let mut values = vec![0.0; total];
        for v in &mut values {
            *v = snapshot::read_f64(r)?;
        }
        let words = snapshot::read_u64(r)? as usize;
        if words != total.div_ceil(64) {
            return Err(NeighborError::Snapshot(SnapshotError::Corrupt(format!(
                "bitmap has {words} words for {total} pairs"
            ))));
        }
        let mut missing = Bitmap::new(total);
        for word in &mut missing.words {
            *word = snapshot::read_u64(r)?;
        }
        Ok((
            Self {
                items,
                values,
                missing,
            },
            provenance,
        ))
    }

    /// CSV export, intended for small instances.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), NeighborError> {
        writeln!(w, "i,j,distance")?;
        for i in 0..self.items {
            for j in (i + 1)..self.items {
                match self.distance(i, j) {
                    Some(d) => writeln!(w, "{i},{j},{d}")?,
                    None => writeln!(w, "{i},{j},NA")?,
                }
            }
        }
        Ok(())
    }
}

/// Full pipeline: Pearson → shrinkage → logarithmic distance. Undefined
/// correlations become missing entries.
pub fn build_distance_matrix(
    ds: &RatingDataset,
    shrink_lambda: f64,
) -> Result<DistanceMatrix, NeighborError> {
    let sim = build_similarity_matrix(ds, shrink_lambda)?;
    let values = sim.values.iter().map(|&s| to_distance(s)).collect();
    Ok(DistanceMatrix {
        items: sim.items,
        values,
        missing: sim.missing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsConfig {
    pub max_iterations: usize,
    /// Relative stress-improvement stopping threshold.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MdsOutcome {
    pub space: CoordinateSpace,
    pub stress: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out before the tolerance was met.
    pub converged: bool,
}

/// Weighted metric stress: squared deviation between target and embedded
/// distances over the defined pairs (missing pairs carry zero weight).
pub fn stress(dm: &DistanceMatrix, points: &Array2<f64>) -> f64 {
    let items = dm.item_count();
    let per_item: Vec<f64> = (0..items)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in (i + 1)..items {
                if let Some(target) = dm.distance(i, j) {
                    let rho = row_distance(points, i, j);
                    acc += (target - rho) * (target - rho);
                }
            }
            acc
        })
        .collect();
    per_item.iter().sum()
}

#[inline]
fn row_distance(points: &Array2<f64>, i: usize, j: usize) -> f64 {
    let (a, b) = (points.row(i), points.row(j));
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Embeds the distance matrix into `dims` dimensions by iterative stress
/// majorization. The result is centered at the origin with axes along the
/// principal directions in decreasing-variance order.
pub fn mds_embed(
    dm: &DistanceMatrix,
    dims: usize,
    cfg: &MdsConfig,
) -> Result<MdsOutcome, NeighborError> {
    if dims == 0 {
        return Err(NeighborError::InvalidConfig("dims must be at least 1".into()));
    }
    if cfg.restarts == 0 || cfg.max_iterations == 0 || !(cfg.tolerance > 0.0) {
        return Err(NeighborError::InvalidConfig(
            "restarts, max_iterations and tolerance must be positive".into(),
        ));
    }
    let items = dm.item_count();
    if items == 0 {
        return Err(NeighborError::EmptyDataset);
    }
    let components = dm.components();
    if components > 1 {
        return Err(NeighborError::Disconnected { components });
    }

    let mut defined: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..items {
        for j in (i + 1)..items {
            if let Some(d) = dm.distance(i, j) {
                defined.push((i as u32, j as u32, d));
            }
        }
    }
    let degree: Vec<f64> = {
        let mut deg = vec![0.0; items];
        for &(i, j, _) in &defined {
            deg[i as usize] += 1.0;
            deg[j as usize] += 1.0;
        }
        deg
    };
    let scale = {
        let ss: f64 = defined.iter().map(|&(_, _, d)| d * d).sum();
        (ss / defined.len().max(1) as f64).sqrt().max(1e-9)
    };

    let mut best: Option<(f64, Array2<f64>, usize, bool)> = None;
    for restart in 0..cfg.restarts {
        let mut rng = rng::stream(cfg.seed, "mds-init", restart as u64);
        let mut x = Array2::from_shape_fn((items, dims), |_| rng::normal(&mut rng) * scale * 0.5);
        center(&mut x);

        let mut sigma = stress(dm, &x);
        let mut iterations = 0usize;
        let mut converged = false;
        for _ in 0..cfg.max_iterations {
            iterations += 1;
            let bx = majorize_rhs(&defined, &x, items, dims);
            let next = solve_laplacian(&defined, &degree, &bx, &x);
            let next_sigma = stress(dm, &next);
            if !next_sigma.is_finite() || next_sigma > sigma {
                // Majorization guarantees descent up to numerics; stop at the
                // numerical floor rather than accept an increase.
                converged = true;
                break;
            }
            let improvement = (sigma - next_sigma) / sigma.max(f64::MIN_POSITIVE);
            x = next;
            sigma = next_sigma;
            if sigma <= 1e-30 || improvement < cfg.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "mds_embed: restart {restart} stopped at iteration budget with stress {sigma:e}"
            );
        }
        if best.as_ref().is_none_or(|(b, ..)| sigma < *b) {
            best = Some((sigma, x, iterations, converged));
        }
    }

    let (final_stress, x, iterations, converged) = best.expect("at least one restart");
    let space = standardize::principal_axes(&x, "MDS")?;
    Ok(MdsOutcome {
        space,
        stress: final_stress,
        iterations,
        converged,
    })
}

fn center(x: &mut Array2<f64>) {
    let n = x.nrows().max(1) as f64;
    for mut col in x.columns_mut() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
    }
}

/// The majorization right-hand side B(X)·X.
fn majorize_rhs(
    defined: &[(u32, u32, f64)],
    x: &Array2<f64>,
    items: usize,
    dims: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros((items, dims));
    for &(i, j, target) in defined {
        let (i, j) = (i as usize, j as usize);
        let rho = row_distance(x, i, j);
        if rho <= 0.0 {
            continue;
        }
        let t = target / rho;
        for k in 0..dims {
            let diff = x[(i, k)] - x[(j, k)];
            out[(i, k)] += t * diff;
            out[(j, k)] -= t * diff;
        }
    }
    out
}

/// Solves V·Y = C column-block-wise by conjugate gradients, where V is the
/// weight Laplacian (degree on the diagonal, -1 on defined pairs). V is
/// singular with the constant vector in its null space; everything is kept
/// centered, which pins the translation.
fn solve_laplacian(
    defined: &[(u32, u32, f64)],
    degree: &[f64],
    rhs: &Array2<f64>,
    warm: &Array2<f64>,
) -> Array2<f64> {
    let (items, dims) = rhs.dim();
    let matvec = |v: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((items, dims));
        for i in 0..items {
            for k in 0..dims {
                out[(i, k)] = degree[i] * v[(i, k)];
            }
        }
        for &(i, j, _) in defined {
            let (i, j) = (i as usize, j as usize);
            for k in 0..dims {
                out[(i, k)] -= v[(j, k)];
                out[(j, k)] -= v[(i, k)];
            }
        }
        out
    };

    let mut c = rhs.clone();
    center(&mut c);
    let dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    };
    if dot(&c, &c) == 0.0 {
        return Array2::zeros((items, dims));
    }
    let mut x = warm.clone();
    center(&mut x);
    let mut r = &c - &matvec(&x);
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let c_norm = dot(&c, &c).max(f64::MIN_POSITIVE);
    for _ in 0..(2 * items + 50) {
        if rs <= 1e-24 * c_norm {
            break;
        }
        let ap = matvec(&p);
        let denom = dot(&p, &ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        x.zip_mut_with(&p, |xv, &pv| *xv += alpha * pv);
        r.zip_mut_with(&ap, |rv, &av| *rv -= alpha * av);
        let rs_next = dot(&r, &r);
        let beta = rs_next / rs;
        rs = rs_next;
        p.mapv_inplace(|pv| pv * beta);
        p.zip_mut_with(&r, |pv, &rv| *pv += rv);
    }
    center(&mut x);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Rating, RatingScale};
    use approx::assert_relative_eq;

    fn dataset(triplets: &[(u32, u32, f64)], items: usize, users: usize) -> RatingDataset {
        RatingDataset::new(
            triplets
                .iter()
                .map(|&(item, user, value)| Rating { item, user, value })
                .collect(),
            (0..items).map(|i| format!("i{i}")).collect(),
            (0..users).map(|u| format!("u{u}")).collect(),
            RatingScale { min: 0.0, max: 10.0 },
        )
        .unwrap()
    }

    #[test]
    fn pearson_identical_ratings() {
        // 5 shared users, non-constant ratings, identical across both items.
        let mut t = Vec::new();
        for (u, v) in [1.0, 2.0, 3.0, 4.0, 2.5].iter().enumerate() {
            t.push((0, u as u32, *v));
            t.push((1, u as u32, *v));
        }
        let ds = dataset(&t, 2, 5);
        let (rho, n) = pearson(&ds, 0, 1);
        assert_eq!(n, 5);
        assert_relative_eq!(rho.unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn pearson_no_shared_raters_is_undefined() {
        let ds = dataset(&[(0, 0, 1.0), (1, 1, 2.0)], 2, 2);
        assert_eq!(pearson(&ds, 0, 1), (None, 0));
    }

    #[test]
    fn pearson_reversed_ratings() {
        let t = [
            (0, 0, 1.0),
            (0, 1, 2.0),
            (0, 2, 3.0),
            (1, 0, 3.0),
            (1, 1, 2.0),
            (1, 2, 1.0),
        ];
        let ds = dataset(&t, 2, 3);
        let (rho, n) = pearson(&ds, 0, 1);
        assert_eq!(n, 3);
        assert_relative_eq!(rho.unwrap(), -1.0, max_relative = 1e-12);
    }

    #[test]
    fn pearson_zero_variance_is_undefined() {
        // Item 0 rated constantly by the co-raters.
        let t = [
            (0, 0, 2.0),
            (0, 1, 2.0),
            (1, 0, 1.0),
            (1, 1, 3.0),
        ];
        let ds = dataset(&t, 2, 2);
        let (rho, n) = pearson(&ds, 0, 1);
        assert_eq!(n, 2);
        assert_eq!(rho, None);
    }

    #[test]
    fn shrink_fixed_points() {
        assert_eq!(shrink(0.7, 0, 20.0), 0.0);
        assert_eq!(shrink(0.7, 5, 0.0), 0.7);
        assert_eq!(shrink(0.8, 20, 20.0), 0.4);
    }

    #[test]
    fn shrink_magnitude_and_sign() {
        for &(rho, n, l) in &[(0.9, 3usize, 5.0), (-0.4, 7, 2.0), (0.0, 4, 1.0)] {
            let s = shrink(rho, n, l);
            assert!(s.abs() <= rho.abs() + 1e-15);
            assert!(s * rho >= 0.0);
        }
    }

    #[test]
    fn to_distance_reference_points() {
        assert_eq!(to_distance(1.0), 0.0);
        assert_relative_eq!(to_distance(0.0), std::f64::consts::LN_2, max_relative = 1e-15);
        assert_eq!(to_distance(-1.0), max_distance());
        assert!(max_distance().is_finite());
    }

    #[test]
    fn to_distance_monotone() {
        let mut prev = to_distance(-1.0);
        let steps = 2000;
        for k in 1..=steps {
            let s = -1.0 + 2.0 * k as f64 / steps as f64;
            let d = to_distance(s);
            assert!(d <= prev, "not non-increasing at s={s}");
            if s > SIMILARITY_CAP {
                assert!(d < prev, "not strictly decreasing at s={s}");
            }
            prev = d;
        }
    }

    #[test]
    fn distance_matrix_missing_propagation() {
        // Two items, no co-raters: the single off-diagonal pair is missing.
        let ds = dataset(&[(0, 0, 1.0), (1, 1, 2.0)], 2, 2);
        let dm = build_distance_matrix(&ds, 20.0).unwrap();
        assert_eq!(dm.missing_count(), 1);
        assert!(dm.is_missing(0, 1));
        assert_eq!(dm.distance(0, 0), Some(0.0));

        // Every pair co-rated: no missing entries.
        let mut t = Vec::new();
        for i in 0..3u32 {
            for u in 0..4u32 {
                t.push((i, u, ((i + u) % 3) as f64 + 1.0));
            }
        }
        let ds = dataset(&t, 3, 4);
        let dm = build_distance_matrix(&ds, 20.0).unwrap();
        assert_eq!(dm.missing_count(), 0);
    }

    #[test]
    fn similarity_matrix_symmetry_and_bound() {
        let mut t = Vec::new();
        for i in 0..4u32 {
            for u in 0..6u32 {
                if (i + u) % 2 == 0 {
                    t.push((i, u, ((i * u + u) % 5) as f64));
                }
            }
        }
        let ds = dataset(&t, 4, 6);
        let sm = build_similarity_matrix(&ds, 3.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(sm.similarity(i, j), sm.similarity(j, i));
                assert_eq!(sm.co_raters(i, j), sm.co_raters(j, i));
                if let Some(s) = sm.similarity(i, j) {
                    let n = sm.co_raters(i, j) as f64;
                    assert!(s.abs() <= n / (n + 3.0) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn pipeline_missingness_matches_pearson() {
        let t = [
            (0, 0, 1.0),
            (0, 1, 5.0),
            (1, 0, 2.0),
            (1, 1, 3.0),
            (2, 2, 4.0),
        ];
        let ds = dataset(&t, 3, 3);
        let dm = build_distance_matrix(&ds, 20.0).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let (rho, _) = pearson(&ds, i, j);
                assert_eq!(dm.is_missing(i, j), rho.is_none());
            }
        }
    }

    fn planted_distance_matrix(points: &Array2<f64>) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.nrows(), |i, j| Some(row_distance(points, i, j))).unwrap()
    }

    #[test]
    fn mds_zero_distances_collapse() {
        let dm = DistanceMatrix::from_fn(4, |_, _| Some(0.0)).unwrap();
        let out = mds_embed(&dm, 2, &MdsConfig::default()).unwrap();
        assert!(out.stress < 1e-20);
        // All points coincide; the canonical space has no spread at all.
        assert_eq!(out.space.dim(), 0);
    }

    #[test]
    fn mds_equilateral_triangle() {
        let dm = DistanceMatrix::from_fn(3, |_, _| Some(1.0)).unwrap();
        let cfg = MdsConfig {
            max_iterations: 5000,
            tolerance: 1e-14,
            restarts: 4,
            seed: 7,
        };
        let out = mds_embed(&dm, 2, &cfg).unwrap();
        assert!(out.stress < 1e-6, "stress {}", out.stress);
        let c = out.space.coords();
        let mut dists = Vec::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                dists.push(row_distance(c, i, j));
            }
        }
        for d in dists {
            assert_relative_eq!(d, 1.0, max_relative = 1e-3);
        }
    }

    #[test]
    fn mds_recovers_planted_configuration() {
        let mut rng = rng::stream(11, "mds-test-points", 0);
        let points = Array2::from_shape_fn((10, 3), |_| rng::normal(&mut rng));
        let dm = planted_distance_matrix(&points);
        let cfg = MdsConfig {
            max_iterations: 20000,
            tolerance: 1e-15,
            restarts: 6,
            seed: 3,
        };
        let out = mds_embed(&dm, 3, &cfg).unwrap();
        assert!(out.stress < 1e-6, "stress {}", out.stress);
        for i in 0..10 {
            for j in (i + 1)..10 {
                let want = dm.distance(i, j).unwrap();
                let got = row_distance(out.space.coords(), i, j);
                assert_relative_eq!(got, want, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn mds_stress_non_increasing_and_permutation_invariant() {
        let mut rng = rng::stream(13, "mds-perm", 0);
        let points = Array2::from_shape_fn((8, 2), |_| rng::normal(&mut rng));
        let dm = planted_distance_matrix(&points);
        let cfg = MdsConfig {
            max_iterations: 8000,
            tolerance: 1e-14,
            restarts: 4,
            seed: 9,
        };
        let out = mds_embed(&dm, 2, &cfg).unwrap();

        // Reversed item order: same distances, different indexing.
        let perm = planted_distance_matrix(&{
            let mut rev = points.clone();
            for (k, row) in points.rows().into_iter().enumerate() {
                rev.row_mut(7 - k).assign(&row);
            }
            rev
        });
        let out_perm = mds_embed(&perm, 2, &cfg).unwrap();
        // Both runs realize the planted configuration.
        assert!(out.stress < 1e-8 && out_perm.stress < 1e-8);
        let multiset = |m: &DistanceMatrix, c: &Array2<f64>| {
            let mut v = Vec::new();
            for i in 0..m.item_count() {
                for j in (i + 1)..m.item_count() {
                    v.push(row_distance(c, i, j));
                }
            }
            v.sort_by(f64::total_cmp);
            v
        };
        let a = multiset(&dm, out.space.coords());
        let b = multiset(&perm, out_perm.space.coords());
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-4, epsilon = 1e-6);
        }
    }

    #[test]
    fn mds_disconnected_is_an_error() {
        // Items {0,1} and {2,3} form two defined components.
        let dm = DistanceMatrix::from_fn(4, |i, j| {
            ((i < 2) == (j < 2)).then_some(1.0)
        })
        .unwrap();
        assert!(matches!(
            mds_embed(&dm, 2, &MdsConfig::default()),
            Err(NeighborError::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn mds_with_missing_pairs_still_recovers() {
        let mut rng = rng::stream(17, "mds-missing", 0);
        let points = Array2::from_shape_fn((12, 2), |_| rng::normal(&mut rng));
        let dm = DistanceMatrix::from_fn(12, |i, j| {
            // Mask roughly one pair in seven, scattered across items.
            if (i * 5 + j * 3) % 7 == 0 {
                None
            } else {
                Some(row_distance(&points, i, j))
            }
        })
        .unwrap();
        assert!(dm.missing_count() > 0);
        let cfg = MdsConfig {
            max_iterations: 20000,
            tolerance: 1e-15,
            restarts: 6,
            seed: 21,
        };
        let out = mds_embed(&dm, 2, &cfg).unwrap();
        assert!(out.stress < 1e-6, "stress {}", out.stress);
        for i in 0..12 {
            for j in (i + 1)..12 {
                if let Some(want) = dm.distance(i, j) {
                    let got = row_distance(out.space.coords(), i, j);
                    assert_relative_eq!(got, want, max_relative = 1e-3, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn distance_snapshot_round_trip() {
        let dm = DistanceMatrix::from_fn(5, |i, j| ((i + j) % 3 != 0).then_some((i + j) as f64))
            .unwrap();
        let mut buf = Vec::new();
        dm.write_snapshot(&mut buf, "p").unwrap();
        let (back, prov) = DistanceMatrix::read_snapshot(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, dm);
        assert_eq!(prov, "p");
    }

    #[test]
    fn distance_csv_export() {
        let dm = DistanceMatrix::from_fn(3, |i, j| (i + j != 2).then_some(1.5)).unwrap();
        let mut buf = Vec::new();
        dm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("0,1,1.5"));
        assert!(text.contains("0,2,NA"));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shrink_never_grows(rho in -1.0f64..=1.0, n in 0usize..100, lambda in 0.0f64..50.0) {
                let s = shrink(rho, n, lambda);
                prop_assert!(s.abs() <= rho.abs() + 1e-15);
                prop_assert!(s * rho >= 0.0);
                let bound = if n == 0 { 0.0 } else { n as f64 / (n as f64 + lambda) };
                prop_assert!(s.abs() <= bound + 1e-15);
            }

            #[test]
            fn to_distance_nonnegative(s in -1.0f64..=1.0) {
                let d = to_distance(s);
                prop_assert!(d >= 0.0);
                prop_assert!(d <= max_distance());
            }
        }
    }
}
