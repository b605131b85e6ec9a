//! Feature maps, region annotations and projection pairs.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVectorView};

use crate::error::{MastError, Result};

/// Orthogonality tolerance every [`ProjectionPair`] satisfies.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// A `C x (W*H)` matrix of feature vectors, one column per spatial location.
///
/// Column `y * W + x` holds the feature vector at pixel `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    data: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, data: DMatrix<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.nrows() == 0 {
            return Err(MastError::ShapeMismatch(
                "feature map dimensions must be positive".into(),
            ));
        }
        if data.ncols() != width * height {
            return Err(MastError::ShapeMismatch(format!(
                "feature matrix has {} columns, expected {}x{} = {}",
                data.ncols(),
                width,
                height,
                width * height
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % data.nrows(), pos / data.nrows());
            return Err(MastError::NonFinite(format!("channel {r}, location {c}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a map from a channel-major `[C, H, W]` buffer.
    pub fn from_chw(channels: usize, height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let n = width * height;
        if values.len() != channels * n {
            return Err(MastError::ShapeMismatch(format!(
                "buffer has {} values, expected {channels}x{height}x{width}",
                values.len()
            )));
        }
        let data = DMatrix::from_fn(channels, n, |c, i| values[c * n + i]);
        Self::new(width, height, data)
    }

    /// Flattens back to a channel-major `[C, H, W]` buffer.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.channels() {
            out.extend(self.data.row(c).iter().copied());
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of spatial locations, `W * H`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Same spatial shape, new data. Used by transforms that keep `W` and `H`.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        Self::new(self.width, self.height, data)
    }

    /// The feature vector at spatial index `index`.
    pub fn column(&self, index: usize) -> Result<DVectorView<'_, f64>> {
        if index >= self.len() {
            return Err(MastError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(self.data.column(index))
    }

    /// Column `index` as a contiguous slice.
    pub(crate) fn column_slice(&self, index: usize) -> &[f64] {
        let c = self.channels();
        &self.data.as_slice()[index * c..(index + 1) * c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    UserCorrespondence,
    SemanticSegmentation,
}

/// Labeled masks pairing content and style regions.
///
/// Label 0 marks unlabeled locations; a positive label on the content side
/// corresponds to the same label on the style side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub content_labels: Vec<i32>,
    pub style_labels: Vec<i32>,
}

impl RegionSpec {
    pub fn new(kind: RegionKind, content_labels: Vec<i32>, style_labels: Vec<i32>) -> Self {
        Self {
            kind,
            content_labels,
            style_labels,
        }
    }

    /// Distinct positive labels, ascending.
    pub fn labels(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self
            .content_labels
            .iter()
            .chain(&self.style_labels)
            .copied()
            .filter(|&l| l > 0)
            .collect();
        set.into_iter().collect()
    }

    /// Checks the label arrays against the spatial sizes of the two maps and
    /// that every positive label appears on both sides.
    pub fn validate(self, content: &FeatureMap, style: &FeatureMap) -> Result<Self> {
        self.validate_sizes(content.len(), style.len())?;
        Ok(self)
    }

    pub(crate) fn validate_sizes(&self, n_content: usize, n_style: usize) -> Result<()> {
        if self.content_labels.len() != n_content {
            return Err(MastError::ShapeMismatch(format!(
                "content labels have length {}, content map has {} locations",
                self.content_labels.len(),
                n_content
            )));
        }
        if self.style_labels.len() != n_style {
            return Err(MastError::ShapeMismatch(format!(
                "style labels have length {}, style map has {} locations",
                self.style_labels.len(),
                n_style
            )));
        }
        if let Some(&l) = self
            .content_labels
            .iter()
            .chain(&self.style_labels)
            .find(|&&l| l < 0)
        {
            return Err(MastError::InvalidConfig(format!(
                "negative region label {l}"
            )));
        }
        let content: BTreeSet<i32> = self
            .content_labels
            .iter()
            .copied()
            .filter(|&l| l > 0)
            .collect();
        let style: BTreeSet<i32> = self
            .style_labels
            .iter()
            .copied()
            .filter(|&l| l > 0)
            .collect();
        if let Some(&label) = content.difference(&style).next() {
            return Err(MastError::DanglingLabel {
                label,
                side: "content",
            });
        }
        if let Some(&label) = style.difference(&content).next() {
            return Err(MastError::DanglingLabel {
                label,
                side: "style",
            });
        }
        Ok(())
    }
}

/// Free-function form of [`RegionSpec::validate`].
pub fn validate_regions(
    spec: RegionSpec,
    content: &FeatureMap,
    style: &FeatureMap,
) -> Result<RegionSpec> {
    spec.validate(content, style)
}

/// `‖PᵀP − I‖_F`.
pub fn orthogonality_residual(p: &DMatrix<f64>) -> f64 {
    let n = p.ncols();
    (p.transpose() * p - DMatrix::<f64>::identity(n, n)).norm()
}

/// Two square orthogonal projections into the common subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    p_c: DMatrix<f64>,
    p_s: DMatrix<f64>,
}

impl ProjectionPair {
    /// Validates shapes and orthogonality (residual at most [`ORTHOGONALITY_TOL`]).
    pub fn new(p_c: DMatrix<f64>, p_s: DMatrix<f64>) -> Result<Self> {
        let pair = Self::from_parts_unchecked(p_c, p_s)?;
        let residual = pair.orthogonality_residual();
        if residual > ORTHOGONALITY_TOL {
            return Err(MastError::NonOrthogonalPair { residual });
        }
        Ok(pair)
    }

    /// Checks shapes only. Orthogonality is verified again wherever the pair is applied.
    pub fn from_parts_unchecked(p_c: DMatrix<f64>, p_s: DMatrix<f64>) -> Result<Self> {
        if !p_c.is_square() || !p_s.is_square() || p_c.nrows() != p_s.nrows() {
            return Err(MastError::DimensionMismatch(format!(
                "projections must be square and equal-sized, got {}x{} and {}x{}",
                p_c.nrows(),
                p_c.ncols(),
                p_s.nrows(),
                p_s.ncols()
            )));
        }
        Ok(Self { p_c, p_s })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            p_c: DMatrix::identity(channels, channels),
            p_s: DMatrix::identity(channels, channels),
        }
    }

    pub fn dim(&self) -> usize {
        self.p_c.nrows()
    }

    pub fn p_c(&self) -> &DMatrix<f64> {
        &self.p_c
    }

    pub fn p_s(&self) -> &DMatrix<f64> {
        &self.p_s
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.p_c, self.p_s)
    }

    /// The larger of the two orthogonality residuals.
    pub fn orthogonality_residual(&self) -> f64 {
        orthogonality_residual(&self.p_c).max(orthogonality_residual(&self.p_s))
    }
}
