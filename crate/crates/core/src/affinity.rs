//! Sparse cross-domain affinity between content and style locations.
//!
//! Entries come from mutual k-nearest-neighbour relations under cosine
//! similarity, optionally OR-ed with user-drawn correspondences or restricted
//! to matching semantic regions. Zero-norm feature columns never take part in
//! a neighbour relation.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{MastError, Result};
use crate::exec::Execution;
use crate::feature::{FeatureMap, RegionKind, RegionSpec};

/// Default neighbourhood size.
pub const DEFAULT_K: usize = 5;

/// Binary correspondence matrix stored as a sorted set of `(content, style)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityMatrix {
    n_content: usize,
    n_style: usize,
    entries: Vec<(usize, usize)>,
}

impl AffinityMatrix {
    pub fn new(
        n_content: usize,
        n_style: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        if let Some(&(i, j)) = entries
            .iter()
            .find(|&&(i, j)| i >= n_content || j >= n_style)
        {
            return Err(MastError::ShapeMismatch(format!(
                "pair ({i}, {j}) outside a {n_content}x{n_style} affinity"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self {
            n_content,
            n_style,
            entries,
        })
    }

    pub fn empty(n_content: usize, n_style: usize) -> Self {
        Self {
            n_content,
            n_style,
            entries: Vec::new(),
        }
    }

    pub fn n_content(&self) -> usize {
        self.n_content
    }

    pub fn n_style(&self) -> usize {
        self.n_style
    }

    /// Pairs in lexicographic order.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// `N`, the number of distinct pairs.
    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.binary_search(&(i, j)).is_ok()
    }

    /// Same correspondences with the content and style roles swapped.
    pub fn transpose(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(i, j)| (j, i)).collect();
        entries.sort_unstable();
        Self {
            n_content: self.n_style,
            n_style: self.n_content,
            entries,
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.n_content != other.n_content || self.n_style != other.n_style {
            return Err(MastError::ShapeMismatch(format!(
                "cannot merge {}x{} and {}x{} affinities",
                self.n_content, self.n_style, other.n_content, other.n_style
            )));
        }
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut a, mut b) = (
            self.entries.iter().peekable(),
            other.entries.iter().peekable(),
        );
        loop {
            let next = match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => match x.cmp(&y) {
                    Ordering::Less => a.next().copied(),
                    Ordering::Greater => b.next().copied(),
                    Ordering::Equal => {
                        b.next();
                        a.next().copied()
                    }
                },
                (Some(_), None) => a.next().copied(),
                (None, Some(_)) => b.next().copied(),
                (None, None) => break,
            };
            entries.extend(next);
        }
        Ok(Self {
            n_content: self.n_content,
            n_style: self.n_style,
            entries,
        })
    }
}

/// `U_cs = A / N` together with its row sums `d_c` and column sums `d_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAffinity {
    affinity: AffinityMatrix,
    weight: f64,
    d_c: Vec<f64>,
    d_s: Vec<f64>,
}

impl NormalizedAffinity {
    pub fn affinity(&self) -> &AffinityMatrix {
        &self.affinity
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        self.affinity.entries()
    }

    /// The common value `1/N` of every nonzero entry.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn u_cs(&self, i: usize, j: usize) -> f64 {
        if self.affinity.contains(i, j) {
            self.weight
        } else {
            0.0
        }
    }

    pub fn d_c(&self) -> &[f64] {
        &self.d_c
    }

    pub fn d_s(&self) -> &[f64] {
        &self.d_s
    }

    pub fn n_content(&self) -> usize {
        self.affinity.n_content
    }

    pub fn n_style(&self) -> usize {
        self.affinity.n_style
    }

    /// Dense `n_content x n_style` copy of `U_cs`. Intended for small problems and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(self.n_content(), self.n_style());
        for &(i, j) in self.entries() {
            u[(i, j)] = self.weight;
        }
        u
    }
}

pub fn normalize_affinity(a: &AffinityMatrix) -> Result<NormalizedAffinity> {
    let n = a.pair_count();
    if n == 0 {
        return Err(MastError::EmptyAffinity);
    }
    let mut row_counts = vec![0usize; a.n_content];
    let mut col_counts = vec![0usize; a.n_style];
    for &(i, j) in a.entries() {
        row_counts[i] += 1;
        col_counts[j] += 1;
    }
    let nf = n as f64;
    Ok(NormalizedAffinity {
        affinity: a.clone(),
        weight: 1.0 / nf,
        d_c: row_counts.into_iter().map(|c| c as f64 / nf).collect(),
        d_s: col_counts.into_iter().map(|c| c as f64 / nf).collect(),
    })
}

/// Scales every column to unit Euclidean norm. Zero columns stay zero and
/// their indices are returned.
pub fn normalize_columns(feature_map: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let mut data = feature_map.data().clone();
    let mut zeros = Vec::new();
    for (idx, mut col) in data.column_iter_mut().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        } else {
            zeros.push(idx);
        }
    }
    let normalized = feature_map
        .with_data(data)
        .expect("normalizing finite columns keeps them finite");
    (normalized, zeros)
}

pub fn knn_affinity(content: &FeatureMap, style: &FeatureMap, k: usize) -> Result<AffinityMatrix> {
    knn_affinity_with(content, style, k, Execution::default())
}

/// Pair `(i, j)` is present when content column `i` is among the `k` most
/// cosine-similar content columns to style column `j`, or style column `j`
/// is among the `k` most similar style columns to content column `i`. Ties
/// go to the lower spatial index.
pub fn knn_affinity_with(
    content: &FeatureMap,
    style: &FeatureMap,
    k: usize,
    exec: Execution,
) -> Result<AffinityMatrix> {
    check_channels(content, style)?;
    check_k(k, content.len().min(style.len()))?;
    let (cn, czero) = normalize_columns(content);
    let (sn, szero) = normalize_columns(style);
    let c_ids = nonzero_indices(content.len(), &czero, |_| true);
    let s_ids = nonzero_indices(style.len(), &szero, |_| true);
    let pairs = knn_pairs(&cn, &sn, &c_ids, &s_ids, k, exec);
    AffinityMatrix::new(content.len(), style.len(), pairs)
}

/// Adds every content/style pair sharing a positive user label.
pub fn merge_user_regions(base: &AffinityMatrix, spec: &RegionSpec) -> Result<AffinityMatrix> {
    if spec.kind != RegionKind::UserCorrespondence {
        return Err(MastError::InvalidConfig(
            "user-region merge needs a UserCorrespondence region spec".into(),
        ));
    }
    spec.validate_sizes(base.n_content(), base.n_style())?;
    let mut extra = Vec::new();
    for label in spec.labels() {
        let cs = label_indices(&spec.content_labels, label);
        let ss = label_indices(&spec.style_labels, label);
        for &i in &cs {
            extra.extend(ss.iter().map(|&j| (i, j)));
        }
    }
    let extra = AffinityMatrix::new(base.n_content(), base.n_style(), extra)?;
    base.union(&extra)
}

pub fn semantic_affinity(
    content: &FeatureMap,
    style: &FeatureMap,
    k: usize,
    spec: &RegionSpec,
) -> Result<AffinityMatrix> {
    semantic_affinity_with(content, style, k, spec, Execution::default())
}

/// k-NN affinity computed separately inside each labelled region pair; the
/// neighbour search for label `p` only sees locations carrying `p`.
pub fn semantic_affinity_with(
    content: &FeatureMap,
    style: &FeatureMap,
    k: usize,
    spec: &RegionSpec,
    exec: Execution,
) -> Result<AffinityMatrix> {
    if spec.kind != RegionKind::SemanticSegmentation {
        return Err(MastError::InvalidConfig(
            "semantic affinity needs a SemanticSegmentation region spec".into(),
        ));
    }
    check_channels(content, style)?;
    spec.validate_sizes(content.len(), style.len())?;
    if k == 0 {
        return Err(MastError::InvalidConfig("k must be positive".into()));
    }
    let labels = spec.labels();
    for &label in &labels {
        let limit = label_indices(&spec.content_labels, label)
            .len()
            .min(label_indices(&spec.style_labels, label).len());
        if k > limit {
            return Err(MastError::KTooLargeForRegion { k, label, limit });
        }
    }
    let (cn, czero) = normalize_columns(content);
    let (sn, szero) = normalize_columns(style);
    let mut pairs = Vec::new();
    for label in labels {
        let c_ids = nonzero_indices(content.len(), &czero, |i| spec.content_labels[i] == label);
        let s_ids = nonzero_indices(style.len(), &szero, |j| spec.style_labels[j] == label);
        pairs.extend(knn_pairs(&cn, &sn, &c_ids, &s_ids, k, exec));
    }
    AffinityMatrix::new(content.len(), style.len(), pairs)
}

fn check_channels(content: &FeatureMap, style: &FeatureMap) -> Result<()> {
    if content.channels() != style.channels() {
        return Err(MastError::ChannelMismatch {
            content: content.channels(),
            style: style.channels(),
        });
    }
    Ok(())
}

fn check_k(k: usize, limit: usize) -> Result<()> {
    if k == 0 {
        return Err(MastError::InvalidConfig("k must be positive".into()));
    }
    if k > limit {
        return Err(MastError::KTooLarge { k, limit });
    }
    Ok(())
}

fn label_indices(labels: &[i32], label: i32) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == label).then_some(i))
        .collect()
}

// Ascending indices in 0..n that are not zero columns and pass `keep`.
fn nonzero_indices(n: usize, zeros: &[usize], keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut z = zeros.iter().peekable();
    (0..n)
        .filter(|&i| {
            while z.peek().is_some_and(|&&x| x < i) {
                z.next();
            }
            z.peek() != Some(&&i) && keep(i)
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Indices of the `k` largest values in `sims`, ties resolved towards the
// lower position. Positions map monotonically onto spatial indices.
fn top_k(sims: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    // partial_cmp so that -0.0 and 0.0 tie; similarities are always finite.
    let by_rank = |&a: &usize, &b: &usize| {
        sims[b]
            .partial_cmp(&sims[a])
            .expect("finite similarity")
            .then(a.cmp(&b))
    };
    if idx.len() > k {
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
    }
    idx
}

fn knn_pairs(
    content: &FeatureMap,
    style: &FeatureMap,
    c_ids: &[usize],
    s_ids: &[usize],
    k: usize,
    exec: Execution,
) -> Vec<(usize, usize)> {
    if c_ids.is_empty() || s_ids.is_empty() {
        return Vec::new();
    }
    // Row-major similarity table: sims[a * ns + b] = <c_a, s_b>.
    let ns = s_ids.len();
    let rows: Vec<Vec<f64>> = exec.map_range(c_ids.len(), |a| {
        let ca = content.column_slice(c_ids[a]);
        s_ids
            .iter()
            .map(|&j| dot(ca, style.column_slice(j)))
            .collect()
    });
    let sims: Vec<f64> = rows.into_iter().flatten().collect();

    let from_content = exec.map_range(c_ids.len(), |a| {
        top_k(&sims[a * ns..(a + 1) * ns], k)
            .into_iter()
            .map(|b| (c_ids[a], s_ids[b]))
            .collect::<Vec<_>>()
    });
    let from_style = exec.map_range(ns, |b| {
        let col: Vec<f64> = (0..c_ids.len()).map(|a| sims[a * ns + b]).collect();
        top_k(&col, k)
            .into_iter()
            .map(|a| (c_ids[a], s_ids[b]))
            .collect::<Vec<_>>()
    });
    from_content
        .into_iter()
        .chain(from_style)
        .flatten()
        .collect()
}
