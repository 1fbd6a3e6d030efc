//! Shared fixtures and independent oracles for the integration suites.
//!
//! Everything in here deliberately avoids the library's own computation
//! paths: the SVD oracle is a hand-rolled one-sided Jacobi, gradients come
//! from central finite differences of the public objective, and the
//! synthetic rating generator builds datasets directly from planted factors.

#![allow(dead_code)]

use factorspace::ingest::{Rating, RatingDataset, RatingScale};
use factorspace::{rng, LabelSet};
use ndarray::Array2;
use rand::Rng;

/// Builds a validated dataset from raw triplets with a wide-open scale.
pub fn dataset(triplets: &[(u32, u32, f64)], items: usize, users: usize) -> RatingDataset {
    RatingDataset::new(
        triplets
            .iter()
            .map(|&(item, user, value)| Rating { item, user, value })
            .collect(),
        (0..items).map(|i| format!("i{i}")).collect(),
        (0..users).map(|u| format!("u{u}")).collect(),
        RatingScale {
            min: -1000.0,
            max: 1000.0,
        },
    )
    .unwrap()
}

/// One-sided Jacobi SVD. Returns `(u, s, v_t)` with `m = u * diag(s) * v_t`
/// and singular values sorted in decreasing order. Accurate to machine
/// precision for the small dense matrices the oracles need.
pub fn jacobi_svd(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let (rows, cols) = m.dim();
    if rows < cols {
        // m = u s v_t  <=>  m_t = v s u_t
        let (v, s, u_t) = jacobi_svd(&m.t().to_owned());
        return (u_t.t().to_owned(), s, v.t().to_owned());
    }
    let mut w = m.clone();
    let mut v = Array2::eye(cols);
    let eps = 1e-15;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..rows {
                    app += w[(r, p)] * w[(r, p)];
                    aqq += w[(r, q)] * w[(r, q)];
                    apq += w[(r, p)] * w[(r, q)];
                }
                if apq.abs() <= eps * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (wp, wq) = (w[(r, p)], w[(r, q)]);
                    w[(r, p)] = c * wp - s * wq;
                    w[(r, q)] = s * wp + c * wq;
                }
                for r in 0..cols {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp - s * vq;
                    v[(r, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // Column norms are the singular values; sort everything together.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols)
        .map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u = Array2::zeros((rows, cols));
    let mut v_t = Array2::zeros((cols, cols));
    let mut s = Vec::with_capacity(cols);
    for (dst, &src) in order.iter().enumerate() {
        let norm = norms[src];
        s.push(norm);
        if norm > 0.0 {
            for r in 0..rows {
                u[(r, dst)] = w[(r, src)] / norm;
            }
        }
        for r in 0..cols {
            v_t[(dst, r)] = v[(r, src)];
        }
    }
    (u, s, v_t)
}

/// Columnwise comparison up to sign, relative to each column's norm.
pub fn assert_columns_match_up_to_sign(got: &Array2<f64>, want: &Array2<f64>, tol: f64) {
    assert_eq!(got.dim(), want.dim(), "shape mismatch");
    for r in 0..got.ncols() {
        let norm = want
            .column(r)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        let direct: f64 = got
            .column(r)
            .iter()
            .zip(want.column(r).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let flipped: f64 = got
            .column(r)
            .iter()
            .zip(want.column(r).iter())
            .map(|(a, b)| (a + b) * (a + b))
            .sum::<f64>()
            .sqrt();
        assert!(
            direct.min(flipped) <= tol * norm,
            "column {r}: deviation {} exceeds {}",
            direct.min(flipped) / norm,
            tol
        );
    }
}

/// A random invertible d-by-d matrix with controlled condition number,
/// built as Q1 * diag(spread) * Q2 from random rotations.
pub fn random_conditioned_matrix(d: usize, condition: f64, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, "test-conditioned-matrix", 0);
    let random_orthogonal = |rng: &mut rand_chacha::ChaCha8Rng| {
        let g = Array2::from_shape_fn((d, d), |_| rng::normal(rng));
        let (u, _, _) = jacobi_svd(&g);
        u
    };
    let q1 = random_orthogonal(&mut rng);
    let q2 = random_orthogonal(&mut rng);
    let mut m = Array2::zeros((d, d));
    for i in 0..d {
        // Geometric spread from 1 down to 1/condition.
        let f = if d == 1 {
            1.0
        } else {
            condition.powf(-(i as f64) / (d as f64 - 1.0))
        };
        for j in 0..d {
            m[(i, j)] = q2[(i, j)] * f;
        }
    }
    q1.dot(&m)
}

pub fn invert_small(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let n = nalgebra::DMatrix::from_fn(d, d, |i, j| m[(i, j)]);
    let inv = n.try_inverse().expect("matrix is invertible by construction");
    Array2::from_shape_fn((d, d), |(i, j)| inv[(i, j)])
}

/// How planted labels relate to the latent item factors.
pub enum LabelRule {
    /// Label `g` holds for items whose factor projects above the frequency
    /// quantile along a direction: latent axis `g` when `axis_aligned`,
    /// random directions otherwise. Every label is a halfspace.
    Threshold { axis_aligned: bool },
    /// Item factors are built as sums of per-label prototype vectors drawn
    /// by independent membership coin flips, plus item-specific noise. Label
    /// regions are unions of cluster cells rather than halfspaces.
    PrototypeMixture {
        prototype_scale: f64,
        item_noise: f64,
    },
}

/// Planted-structure rating data: item factors with decaying axis scales,
/// labels tied to latent structure per [`LabelRule`], ratings formed as
/// clamped, half-star-quantized noisy dot products.
pub struct SyntheticSpec {
    pub items: usize,
    pub users: usize,
    /// Ratings per item, as a fraction of the user count.
    pub density: f64,
    /// Latent axis scales; the latent dimensionality is the length.
    pub scales: Vec<f64>,
    /// Labels as (name, frequency).
    pub genres: Vec<(String, f64)>,
    pub rule: LabelRule,
    pub user_scale: f64,
    pub noise: f64,
    pub mean: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn scale() -> RatingScale {
        RatingScale { min: 0.5, max: 5.0 }
    }
}

pub struct SyntheticData {
    pub dataset: RatingDataset,
    pub labels: LabelSet,
    /// The planted item factors (items x latent).
    pub item_factors: Array2<f64>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    let latent = spec.scales.len();
    let mut rng = rng::stream(spec.seed, "synthetic-ratings", 0);

    let mut label_names: Vec<String> = spec.genres.iter().map(|(n, _)| n.clone()).collect();
    let mut assignments: Vec<Vec<u16>> = vec![Vec::new(); spec.items];

    let item_factors = match &spec.rule {
        LabelRule::Threshold { axis_aligned } => {
            let factors = Array2::from_shape_fn((spec.items, latent), |(_, r)| {
                rng::normal(&mut rng) * spec.scales[r]
            });
            for (g, (_, frequency)) in spec.genres.iter().enumerate() {
                let direction: Vec<f64> = if *axis_aligned {
                    (0..latent).map(|r| f64::from(r == g % latent)).collect()
                } else {
                    (0..latent).map(|_| rng::normal(&mut rng)).collect()
                };
                let projections: Vec<f64> = (0..spec.items)
                    .map(|i| (0..latent).map(|r| factors[(i, r)] * direction[r]).sum())
                    .collect();
                let mut sorted = projections.clone();
                sorted.sort_by(f64::total_cmp);
                let cut = sorted[((spec.items as f64) * (1.0 - frequency)) as usize];
                for (i, p) in projections.iter().enumerate() {
                    if *p > cut {
                        assignments[i].push(g as u16);
                    }
                }
            }
            factors
        }
        LabelRule::PrototypeMixture {
            prototype_scale,
            item_noise,
        } => {
            let prototypes: Vec<Vec<f64>> = spec
                .genres
                .iter()
                .map(|_| {
                    (0..latent)
                        .map(|r| rng::normal(&mut rng) * prototype_scale * spec.scales[r])
                        .collect()
                })
                .collect();
            let mut factors = Array2::zeros((spec.items, latent));
            for i in 0..spec.items {
                for (g, (_, frequency)) in spec.genres.iter().enumerate() {
                    if rng.gen_bool(*frequency) {
                        assignments[i].push(g as u16);
                        for r in 0..latent {
                            factors[(i, r)] += prototypes[g][r];
                        }
                    }
                }
                for r in 0..latent {
                    factors[(i, r)] += rng::normal(&mut rng) * item_noise * spec.scales[r];
                }
            }
            factors
        }
    };
    label_names.truncate(spec.genres.len());
    let labels = LabelSet::new(label_names, assignments, 0.0).unwrap();

    let user_factors = Array2::from_shape_fn((spec.users, latent), |_| {
        rng::normal(&mut rng) * spec.user_scale
    });

    // Each item gets the same number of ratings from a random user subset.
    let per_item = ((spec.users as f64 * spec.density) as usize).max(1);
    let scale = SyntheticSpec::scale();
    let mut triplets = Vec::with_capacity(spec.items * per_item);
    let mut user_perm: Vec<u32> = (0..spec.users as u32).collect();
    for i in 0..spec.items {
        for k in 0..per_item {
            let swap = rng.gen_range(k..spec.users);
            user_perm.swap(k, swap);
        }
        for &u in &user_perm[..per_item] {
            let mut value = spec.mean;
            for r in 0..latent {
                value += item_factors[(i, r)] * user_factors[(u as usize, r)];
            }
            value += rng::normal(&mut rng) * spec.noise;
            // Half-star quantization, clamped to the scale.
            let value = ((value * 2.0).round() / 2.0).clamp(scale.min, scale.max);
            triplets.push(Rating {
                item: i as u32,
                user: u,
                value,
            });
        }
    }

    let dataset = RatingDataset::new(
        triplets,
        (0..spec.items).map(|i| format!("m{i}")).collect(),
        (0..spec.users).map(|u| format!("u{u}")).collect(),
        scale,
    )
    .unwrap();
    SyntheticData {
        dataset,
        labels,
        item_factors,
    }
}

#[cfg(test)]
mod self_checks {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobi_svd_reconstructs() {
        let mut rng = rng::stream(1, "jacobi-self", 0);
        for &(r, c) in &[(6usize, 4usize), (4, 6), (5, 5)] {
            let m = Array2::from_shape_fn((r, c), |_| rng::normal(&mut rng));
            let (u, s, v_t) = jacobi_svd(&m);
            let k = s.len();
            let mut rebuilt = Array2::zeros((r, c));
            for i in 0..r {
                for j in 0..c {
                    rebuilt[(i, j)] = (0..k).map(|t| u[(i, t)] * s[t] * v_t[(t, j)]).sum();
                }
            }
            for (a, b) in rebuilt.iter().zip(m.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-10);
            }
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
