//! Generators and brute-force oracles shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use mast_core::affinity::NormalizedAffinity;
use mast_core::FeatureMap;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Columns drawn uniformly from `[-1, 1)`.
pub fn random_map(
    rng: &mut ChaCha8Rng,
    channels: usize,
    width: usize,
    height: usize,
) -> FeatureMap {
    let data = DMatrix::from_fn(channels, width * height, |_, _| rng.random_range(-1.0..1.0));
    FeatureMap::new(width, height, data).unwrap()
}

/// Nonnegative columns, as produced by a ReLU encoder.
pub fn relu_map(rng: &mut ChaCha8Rng, channels: usize, width: usize, height: usize) -> FeatureMap {
    let data = DMatrix::from_fn(channels, width * height, |_, _| {
        let v: f64 = rng.random_range(-0.5..1.0);
        v.max(0.0)
    });
    FeatureMap::new(width, height, data).unwrap()
}

/// A map whose columns are drawn from a small pool of prototypes, so exact
/// similarity ties are common. Some columns are exact zeros.
pub fn tied_map(rng: &mut ChaCha8Rng, channels: usize, n: usize, pool: usize) -> FeatureMap {
    let protos: Vec<Vec<f64>> = (0..pool)
        .map(|_| (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut data = DMatrix::zeros(channels, n);
    for j in 0..n {
        let roll: f64 = rng.random();
        if roll < 0.05 {
            continue;
        }
        let p = &protos[rng.random_range(0..pool)];
        for c in 0..channels {
            data[(c, j)] = p[c];
        }
    }
    FeatureMap::new(n, 1, data).unwrap()
}

fn unit_columns(f: &FeatureMap) -> Vec<Option<Vec<f64>>> {
    let d = f.data();
    (0..d.ncols())
        .map(|j| {
            let col: Vec<f64> = (0..d.nrows()).map(|r| d[(r, j)]).collect();
            let mut sq = 0.0;
            for v in &col {
                sq += v * v;
            }
            let norm = sq.sqrt();
            (norm > 0.0).then(|| col.iter().map(|v| v / norm).collect())
        })
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for t in 0..a.len() {
        acc += a[t] * b[t];
    }
    acc
}

// The k best candidates for `query` by full sort (similarity descending, index ascending).
fn brute_top_k(query: &[f64], candidates: &[(usize, &Vec<f64>)], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&(idx, v)| (cosine(query, v), idx))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Brute-force OR-rule k-NN affinity restricted to the given index subsets.
pub fn brute_knn_subset(
    content: &FeatureMap,
    style: &FeatureMap,
    k: usize,
    content_ids: &[usize],
    style_ids: &[usize],
) -> BTreeSet<(usize, usize)> {
    let cu = unit_columns(content);
    let su = unit_columns(style);
    let cands_c: Vec<(usize, &Vec<f64>)> = content_ids
        .iter()
        .filter_map(|&i| cu[i].as_ref().map(|v| (i, v)))
        .collect();
    let cands_s: Vec<(usize, &Vec<f64>)> = style_ids
        .iter()
        .filter_map(|&j| su[j].as_ref().map(|v| (j, v)))
        .collect();
    let mut out = BTreeSet::new();
    for &(i, ci) in &cands_c {
        for j in brute_top_k(ci, &cands_s, k) {
            out.insert((i, j));
        }
    }
    for &(j, sj) in &cands_s {
        for i in brute_top_k(sj, &cands_c, k) {
            out.insert((i, j));
        }
    }
    out
}

pub fn brute_knn(content: &FeatureMap, style: &FeatureMap, k: usize) -> BTreeSet<(usize, usize)> {
    let ci: Vec<usize> = (0..content.len()).collect();
    let si: Vec<usize> = (0..style.len()).collect();
    brute_knn_subset(content, style, k, &ci, &si)
}

/// Union of per-label brute-force k-NN sets.
pub fn brute_semantic(
    content: &FeatureMap,
    style: &FeatureMap,
    k: usize,
    content_labels: &[i32],
    style_labels: &[i32],
) -> BTreeSet<(usize, usize)> {
    let labels: BTreeSet<i32> = content_labels.iter().copied().filter(|&l| l > 0).collect();
    let mut out = BTreeSet::new();
    for l in labels {
        let ci: Vec<usize> = (0..content.len())
            .filter(|&i| content_labels[i] == l)
            .collect();
        let si: Vec<usize> = (0..style.len()).filter(|&j| style_labels[j] == l).collect();
        out.extend(brute_knn_subset(content, style, k, &ci, &si));
    }
    out
}

/// `(1/N) Σ_ij A_ij ‖P_cᵀ f_i − P_sᵀ g_j‖²` by direct double sum over a dense `U`.
pub fn brute_pair_objective(
    p_c: &DMatrix<f64>,
    p_s: &DMatrix<f64>,
    content: &FeatureMap,
    style: &FeatureMap,
    na: &NormalizedAffinity,
) -> f64 {
    let u = na.to_dense();
    let mut total = 0.0;
    for i in 0..content.len() {
        let zi = p_c.transpose() * content.data().column(i);
        for j in 0..style.len() {
            if u[(i, j)] != 0.0 {
                let zj = p_s.transpose() * style.data().column(j);
                total += u[(i, j)] * (&zi - zj).norm_squared();
            }
        }
    }
    total
}

/// `Σ_i d_c(i)‖f_i‖² + Σ_j d_s(j)‖g_j‖²`, the projection-independent part of the objective.
pub fn brute_fixed_terms(content: &FeatureMap, style: &FeatureMap, na: &NormalizedAffinity) -> f64 {
    let mut total = 0.0;
    for (i, w) in na.d_c().iter().enumerate() {
        total += w * content.data().column(i).norm_squared();
    }
    for (j, w) in na.d_s().iter().enumerate() {
        total += w * style.data().column(j).norm_squared();
    }
    total
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
        .qr()
        .q()
}

/// Singular values of `K` from the eigenvalues of `KᵀK`, sorted descending.
pub fn singular_values_via_eigen(k: &DMatrix<f64>) -> Vec<f64> {
    let eig = (k.transpose() * k).symmetric_eigen();
    let mut sv: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Pairwise Euclidean column distances.
pub fn distance_matrix(f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.ncols();
    DMatrix::from_fn(n, n, |a, b| {
        let mut sq = 0.0;
        for r in 0..f.nrows() {
            let d = f[(r, a)] - f[(r, b)];
            sq += d * d;
        }
        sq.sqrt()
    })
}

/// Writes a two-cluster job fixture (features, masks, manifest) into `dir`
/// and returns the manifest path.
///
/// Content columns sit near two prototypes; style columns sit near the same
/// prototypes after a fixed orthogonal change of basis, so a good alignment
/// exists and the affinity is well populated.
pub fn write_two_cluster_fixture(
    dir: &std::path::Path,
    seed: u64,
    channels: usize,
    side: usize,
) -> std::path::PathBuf {
    write_two_cluster_fixture_noisy(dir, seed, channels, side, FIXTURE_NOISE)
}

pub const FIXTURE_NOISE: f64 = 0.5;

pub fn write_two_cluster_fixture_noisy(
    dir: &std::path::Path,
    seed: u64,
    channels: usize,
    side: usize,
    noise: f64,
) -> std::path::PathBuf {
    use mast_core::io::{write_feature_map, write_tensor, Tensor};

    let mut r = rng(seed);
    let protos: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..channels).map(|_| r.random_range(0.0..1.0)).collect())
        .collect();
    let basis = random_orthogonal(&mut r, channels);
    let n = side * side;
    let label_of = |idx: usize| if idx % side < side / 2 { 0 } else { 1 };
    let mut content = DMatrix::zeros(channels, n);
    let mut style = DMatrix::zeros(channels, n);
    for idx in 0..n {
        let p = &protos[label_of(idx)];
        for c in 0..channels {
            content[(c, idx)] = p[c] + noise * r.random_range(-1.0..1.0);
        }
        let q =
            nalgebra::DVector::from_fn(channels, |c, _| p[c] + noise * r.random_range(-1.0..1.0));
        style.set_column(idx, &(&basis * q));
    }
    let content = FeatureMap::new(side, side, content.map(|v| v as f32 as f64)).unwrap();
    let style = FeatureMap::new(side, side, style.map(|v| v as f32 as f64)).unwrap();
    write_feature_map(&content, dir.join("content.mtsr")).unwrap();
    write_feature_map(&style, dir.join("style.mtsr")).unwrap();
    let labels: Vec<i32> = (0..n).map(|i| label_of(i) as i32 + 1).collect();
    write_tensor(
        &Tensor::from_labels(side, side, &labels).unwrap(),
        dir.join("content_mask.mtsr"),
    )
    .unwrap();
    write_tensor(
        &Tensor::from_labels(side, side, &labels).unwrap(),
        dir.join("style_mask.mtsr"),
    )
    .unwrap();
    let manifest = r#"
content_features = "content.mtsr"
style_features = "style.mtsr"
mode = "unsupervised"
content_mask = "content_mask.mtsr"
style_mask = "style_mask.mtsr"
k = 5
bidirectional = true

[solver]
max_iterations = 200

[output]
stylized = "stylized.mtsr"
reverse = "reverse.mtsr"
p_c = "p_c.mtsr"
p_s = "p_s.mtsr"
affinity = "affinity.mtsr"
report = "report.txt"
"#;
    let path = dir.join("job.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}
