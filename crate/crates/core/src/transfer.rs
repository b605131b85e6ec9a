//! Moving features between the content and style spaces.

use nalgebra::DMatrix;

use crate::error::{MastError, Result};
use crate::exec::Execution;
use crate::feature::{FeatureMap, ProjectionPair};

/// Largest orthogonality residual accepted when applying a pair.
pub const APPLY_TOL: f64 = 1e-6;

// Columns per work unit. Fixed so results do not depend on the thread count.
const CHUNK_COLS: usize = 64;

/// `P_s P_cᵀ F_c`: content features expressed in the style space.
pub fn transfer_to_style(content: &FeatureMap, pair: &ProjectionPair) -> Result<FeatureMap> {
    transfer_to_style_with(content, pair, Execution::default())
}

/// `P_c P_sᵀ F_s`: style features expressed in the content space.
pub fn transfer_to_content(style: &FeatureMap, pair: &ProjectionPair) -> Result<FeatureMap> {
    transfer_to_content_with(style, pair, Execution::default())
}

pub fn transfer_to_style_with(
    content: &FeatureMap,
    pair: &ProjectionPair,
    exec: Execution,
) -> Result<FeatureMap> {
    check(content, pair)?;
    let composite = pair.p_s() * pair.p_c().transpose();
    apply(&composite, content, exec)
}

pub fn transfer_to_content_with(
    style: &FeatureMap,
    pair: &ProjectionPair,
    exec: Execution,
) -> Result<FeatureMap> {
    check(style, pair)?;
    let composite = pair.p_c() * pair.p_s().transpose();
    apply(&composite, style, exec)
}

fn check(features: &FeatureMap, pair: &ProjectionPair) -> Result<()> {
    if features.channels() != pair.dim() {
        return Err(MastError::DimensionMismatch(format!(
            "features have {} channels, projections are {}x{}",
            features.channels(),
            pair.dim(),
            pair.dim()
        )));
    }
    let residual = pair.orthogonality_residual();
    if residual.is_nan() || residual > APPLY_TOL {
        return Err(MastError::NonOrthogonalPair { residual });
    }
    Ok(())
}

/// Left-multiplies every column of `features` by `m`.
pub fn apply(m: &DMatrix<f64>, features: &FeatureMap, exec: Execution) -> Result<FeatureMap> {
    let c = features.channels();
    let n = features.len();
    let src = features.data();
    let mut out = vec![0.0; c * n];
    exec.for_each_chunk_mut(&mut out, CHUNK_COLS * c, |chunk, buf| {
        let start = chunk * CHUNK_COLS;
        let cols = buf.len() / c;
        let block = m * src.columns(start, cols);
        buf.copy_from_slice(block.as_slice());
    });
    features.with_data(DMatrix::from_vec(c, n, out))
}
