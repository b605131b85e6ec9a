//! Alternating Cayley-retraction descent for a pair of orthogonal projections.
//!
//! With both projections orthogonal, the alignment objective
//!
//! ```text
//! J(P_c, P_s) = tr(Z_c D_c Z_cᵀ) + tr(Z_s D_s Z_sᵀ) − 2 tr(Z_c U_cs Z_sᵀ),   Z = Pᵀ F
//! ```
//!
//! reduces to its cross term `−2 tr(P_cᵀ K P_s)` with `K = F_c U_cs F_sᵀ`, since
//! the first two traces do not depend on the projections. Each iteration
//! takes one curvilinear step for `P_c` and then one for `P_s` along
//!
//! ```text
//! Y(τ) = (I + τ/2 S)⁻¹ (I − τ/2 S) P,    S = G Pᵀ − P Gᵀ,
//! ```
//!
//! which stays on the orthogonal group for every `τ`. Steps are accepted by
//! monotone Armijo backtracking, so the objective never increases.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affinity::NormalizedAffinity;
use crate::error::{MastError, Result};
use crate::exec::Execution;
use crate::feature::{orthogonality_residual, FeatureMap, ProjectionPair};

/// Starting point of the alternating descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// `P_c = P_s = I`.
    Identity,
    /// `P_c = I`; `P_s = I` unless `det K < 0`, in which case `P_s` reflects
    /// the last axis. Cayley steps never change a determinant, so this puts
    /// `P_s P_cᵀ` in the connected component that contains the optimum.
    DeterminantMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Tolerance on `‖G − P Gᵀ P‖_F` for both projections.
    pub epsilon: f64,
    /// Trial step for the first search of each projection and after a stall.
    pub tau_init: f64,
    pub backtrack_factor: f64,
    pub armijo_c1: f64,
    pub max_backtracks: usize,
    /// Use Barzilai-Borwein trial steps after the first iteration.
    pub adaptive_step: bool,
    pub initialization: Initialization,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            epsilon: 1e-6,
            tau_init: 1e-2,
            backtrack_factor: 0.5,
            armijo_c1: 1e-4,
            max_backtracks: 30,
            adaptive_step: true,
            initialization: Initialization::DeterminantMatched,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MastError::InvalidConfig(msg.to_string()));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a finite nonnegative number");
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return bad("tau_init must be positive");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if self.max_backtracks == 0 {
            return bad("max_backtracks must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Content,
    Style,
}

/// A curvilinear search that found no acceptable step; the projection was left unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StallStep {
    pub iteration: usize,
    pub block: Block,
}

/// Per-iteration trace of [`align`]. Index 0 of each trace describes the
/// starting point, index `t` the iterate after iteration `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations_run: usize,
    pub objective_trace: Vec<f64>,
    pub residual_c_trace: Vec<f64>,
    pub residual_s_trace: Vec<f64>,
    /// Accepted `(τ_c, τ_s)` for iterations `1..=iterations_run`.
    pub tau_trace: Vec<(f64, f64)>,
    /// `tr(Z_c D_c Z_cᵀ)` at every iterate.
    pub fixed_trace_c: Vec<f64>,
    /// `tr(Z_s D_s Z_sᵀ)` at every iterate.
    pub fixed_trace_s: Vec<f64>,
    /// Larger of the two `‖PᵀP − I‖_F` at every iterate.
    pub orthogonality_trace: Vec<f64>,
    pub stalls: Vec<StallStep>,
    pub termination: Termination,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial point")
    }
}

/// Cached `K = F_c U_cs F_sᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossKernel {
    k: DMatrix<f64>,
}

impl CrossKernel {
    pub fn new(content: &FeatureMap, style: &FeatureMap, na: &NormalizedAffinity) -> Result<Self> {
        Self::new_with(content, style, na, Execution::default())
    }

    pub fn new_with(
        content: &FeatureMap,
        style: &FeatureMap,
        na: &NormalizedAffinity,
        exec: Execution,
    ) -> Result<Self> {
        check_problem(content, style, na)?;
        let c = content.channels();
        let entries = na.entries();
        // Entries are sorted by content index: row i owns entries[starts[i]..starts[i + 1]].
        let mut starts = vec![0usize; content.len() + 1];
        for &(i, _) in entries {
            starts[i + 1] += 1;
        }
        for i in 0..content.len() {
            starts[i + 1] += starts[i];
        }
        // Column i of `pulled` is Σ_j A_ij f_s(j).
        let cols = exec.map_range(content.len(), |i| {
            let mut acc = vec![0.0; c];
            for &(_, j) in &entries[starts[i]..starts[i + 1]] {
                for (a, v) in acc.iter_mut().zip(style.column_slice(j)) {
                    *a += v;
                }
            }
            acc
        });
        let pulled = DMatrix::from_iterator(c, content.len(), cols.into_iter().flatten());
        let k = content.data() * pulled.transpose() * na.weight();
        Ok(Self { k })
    }

    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(MastError::DimensionMismatch(format!(
                "kernel must be square, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(MastError::NonFinite("cross kernel".into()));
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// Nuclear norm `Σσᵢ`.
    pub fn nuclear_norm(&self) -> f64 {
        self.k.singular_values().sum()
    }
}

fn check_problem(content: &FeatureMap, style: &FeatureMap, na: &NormalizedAffinity) -> Result<()> {
    if content.channels() != style.channels() {
        return Err(MastError::ChannelMismatch {
            content: content.channels(),
            style: style.channels(),
        });
    }
    if na.n_content() != content.len() || na.n_style() != style.len() {
        return Err(MastError::DimensionMismatch(format!(
            "affinity is {}x{} but feature maps have {} and {} locations",
            na.n_content(),
            na.n_style(),
            content.len(),
            style.len()
        )));
    }
    Ok(())
}

fn check_dim(pair: &ProjectionPair, kernel: &CrossKernel) -> Result<()> {
    if pair.dim() != kernel.dim() {
        return Err(MastError::DimensionMismatch(format!(
            "projections are {0}x{0}, kernel is {1}x{1}",
            pair.dim(),
            kernel.dim()
        )));
    }
    Ok(())
}

fn cross_value(p_c: &DMatrix<f64>, k: &DMatrix<f64>, p_s: &DMatrix<f64>) -> f64 {
    // tr(P_cᵀ K P_s) = Σ (K P_s) ∘ P_c
    -2.0 * (k * p_s).component_mul(p_c).sum()
}

/// `−2 tr(P_cᵀ K P_s)`: the part of the objective that depends on the projections.
pub fn objective_cross(pair: &ProjectionPair, kernel: &CrossKernel) -> Result<f64> {
    check_dim(pair, kernel)?;
    Ok(cross_value(pair.p_c(), kernel.matrix(), pair.p_s()))
}

/// The full alignment objective, evaluated from the projected features.
pub fn objective_full(
    pair: &ProjectionPair,
    content: &FeatureMap,
    style: &FeatureMap,
    na: &NormalizedAffinity,
) -> Result<f64> {
    check_problem(content, style, na)?;
    if pair.dim() != content.channels() {
        return Err(MastError::DimensionMismatch(format!(
            "projections are {0}x{0}, features have {1} channels",
            pair.dim(),
            content.channels()
        )));
    }
    let z_c = pair.p_c().transpose() * content.data();
    let z_s = pair.p_s().transpose() * style.data();
    let weighted_sq = |z: &DMatrix<f64>, d: &[f64]| -> f64 {
        z.column_iter()
            .zip(d)
            .map(|(col, &w)| w * col.norm_squared())
            .sum()
    };
    let cross: f64 = na
        .entries()
        .iter()
        .map(|&(i, j)| z_c.column(i).dot(&z_s.column(j)))
        .sum::<f64>()
        * na.weight();
    Ok(weighted_sq(&z_c, na.d_c()) + weighted_sq(&z_s, na.d_s()) - 2.0 * cross)
}

/// `tr(Z_c D_c Z_cᵀ)` and `tr(Z_s D_s Z_sᵀ)`, evaluated through cached
/// `F D Fᵀ` products.
#[derive(Debug, Clone)]
pub struct FixedTraces {
    m_c: DMatrix<f64>,
    m_s: DMatrix<f64>,
}

impl FixedTraces {
    pub fn new(content: &FeatureMap, style: &FeatureMap, na: &NormalizedAffinity) -> Result<Self> {
        check_problem(content, style, na)?;
        let weighted = |f: &FeatureMap, d: &[f64]| {
            let mut scaled = f.data().clone();
            for (mut col, &w) in scaled.column_iter_mut().zip(d) {
                col *= w;
            }
            scaled * f.data().transpose()
        };
        Ok(Self {
            m_c: weighted(content, na.d_c()),
            m_s: weighted(style, na.d_s()),
        })
    }

    pub fn evaluate(&self, p_c: &DMatrix<f64>, p_s: &DMatrix<f64>) -> (f64, f64) {
        (
            (&self.m_c * p_c).component_mul(p_c).sum(),
            (&self.m_s * p_s).component_mul(p_s).sum(),
        )
    }
}

/// `∂J/∂P_c = −2 K P_s`.
pub fn gradient_pc(pair: &ProjectionPair, kernel: &CrossKernel) -> Result<DMatrix<f64>> {
    check_dim(pair, kernel)?;
    Ok(kernel.matrix() * pair.p_s() * -2.0)
}

/// `∂J/∂P_s = −2 Kᵀ P_c`.
pub fn gradient_ps(pair: &ProjectionPair, kernel: &CrossKernel) -> Result<DMatrix<f64>> {
    check_dim(pair, kernel)?;
    Ok(kernel.matrix().tr_mul(pair.p_c()) * -2.0)
}

fn check_square_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(MastError::DimensionMismatch(format!(
            "expected equal square matrices, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `S = G Pᵀ − P Gᵀ`, exactly skew-symmetric.
pub fn skew_step(gradient: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_pair(gradient, p)?;
    let a = gradient * p.transpose();
    Ok(&a - a.transpose())
}

/// `‖G − P Gᵀ P‖_F`, zero exactly at stationary points on the orthogonal group.
pub fn stationarity_residual(gradient: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (gradient - p * gradient.transpose() * p).norm()
}

/// `(I + τ/2 S)⁻¹ (I − τ/2 S) P`.
pub fn cayley_retract(p: &DMatrix<f64>, s: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_square_pair(p, s)?;
    if tau == 0.0 {
        return Ok(p.clone());
    }
    let n = p.nrows();
    let half = 0.5 * tau;
    let identity = DMatrix::<f64>::identity(n, n);
    let lhs = &identity + s * half;
    let rhs = (&identity - s * half) * p;
    let y = lhs
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| MastError::NumericalFailure("singular Cayley system".into()))?;
    let residual = (&lhs * &y - &rhs).norm();
    if residual.is_nan() || residual > 1e-8 * rhs.norm().max(1.0) {
        return Err(MastError::NumericalFailure(format!(
            "Cayley solve residual {residual:.3e}"
        )));
    }
    Ok(y)
}

/// Result of one curvilinear search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Accepted step, or 0 when the search stalled.
    pub tau: f64,
    pub p: DMatrix<f64>,
    pub objective: f64,
    pub backtracks: usize,
    pub stalled: bool,
}

/// Backtracks from `tau_init` by `backtrack_factor` until
/// `eval(τ, Y(τ)) ≤ f0 − c₁ τ ‖S‖²_F / 2`. Returns `τ = 0` and `p` unchanged
/// if no trial within `max_backtracks` halvings is accepted, or if `s = 0`.
pub fn curvilinear_search<F>(
    p: &DMatrix<f64>,
    s: &DMatrix<f64>,
    f0: f64,
    mut eval: F,
    tau_init: f64,
    config: &SolverConfig,
) -> Result<SearchOutcome>
where
    F: FnMut(f64, &DMatrix<f64>) -> f64,
{
    let unchanged = |stalled, backtracks| SearchOutcome {
        tau: 0.0,
        p: p.clone(),
        objective: f0,
        backtracks,
        stalled,
    };
    let slope = 0.5 * s.norm_squared();
    if slope == 0.0 {
        return Ok(unchanged(false, 0));
    }
    let mut tau = tau_init;
    for m in 0..=config.max_backtracks {
        let y = cayley_retract(p, s, tau)?;
        let f = eval(tau, &y);
        if f <= f0 - config.armijo_c1 * tau * slope {
            return Ok(SearchOutcome {
                tau,
                p: y,
                objective: f,
                backtracks: m,
                stalled: false,
            });
        }
        tau *= config.backtrack_factor;
    }
    Ok(unchanged(true, config.max_backtracks))
}

/// Closed-form optimum of `min −2 tr(P_cᵀ K P_s)` over orthogonal pairs.
///
/// Returns the optimal transfer matrix `P_s P_cᵀ = V Uᵀ` for `K = U Σ Vᵀ` and
/// the optimal value `−2 Σσᵢ`. The transfer matrix is unique only when the
/// singular values of `K` are distinct and nonzero.
pub fn procrustes_oracle(kernel: &CrossKernel) -> (DMatrix<f64>, f64) {
    let svd = kernel.matrix().clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    (
        v_t.transpose() * u.transpose(),
        -2.0 * svd.singular_values.sum(),
    )
}

fn initial_pair(kernel: &CrossKernel, init: Initialization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = kernel.dim();
    let p_c = DMatrix::identity(n, n);
    let mut p_s = DMatrix::identity(n, n);
    if init == Initialization::DeterminantMatched && n > 0 {
        let sv = kernel.matrix().singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if hi > 0.0 && lo > 1e-12 * hi && kernel.matrix().determinant() < 0.0 {
            p_s[(n - 1, n - 1)] = -1.0;
        }
    }
    (p_c, p_s)
}

// Barzilai-Borwein trial steps for one block, measured on P and D = S P.
#[derive(Debug, Default)]
struct StepMemory {
    prev: Option<(DMatrix<f64>, DMatrix<f64>)>,
    count: usize,
}

impl StepMemory {
    fn trial(&mut self, p: &DMatrix<f64>, d: DMatrix<f64>, fallback: f64) -> f64 {
        let tau = match &self.prev {
            Some((p0, d0)) => {
                let dp = p - p0;
                let dd = &d - d0;
                let sy = dp.dot(&dd).abs();
                let bb = if self.count % 2 == 1 {
                    dp.norm_squared() / sy
                } else {
                    sy / dd.norm_squared()
                };
                if bb.is_finite() && bb > 0.0 {
                    bb.clamp(1e-10, 1e10)
                } else {
                    fallback
                }
            }
            None => fallback,
        };
        self.prev = Some((p.clone(), d));
        self.count += 1;
        tau
    }

    fn reset(&mut self) {
        self.prev = None;
    }
}

/// Learns a projection pair for the given problem, starting from
/// `config.initialization`.
pub fn align(
    content: &FeatureMap,
    style: &FeatureMap,
    na: &NormalizedAffinity,
    config: &SolverConfig,
) -> Result<(ProjectionPair, SolverReport)> {
    align_with(content, style, na, config, Execution::default())
}

pub fn align_with(
    content: &FeatureMap,
    style: &FeatureMap,
    na: &NormalizedAffinity,
    config: &SolverConfig,
    exec: Execution,
) -> Result<(ProjectionPair, SolverReport)> {
    config.validate()?;
    let kernel = CrossKernel::new_with(content, style, na, exec)?;
    let traces = FixedTraces::new(content, style, na)?;
    align_kernel(&kernel, Some(&traces), config)
}

/// The alternating loop on a precomputed kernel. Without `traces` the
/// fixed-trace fields of the report stay empty.
pub fn align_kernel(
    kernel: &CrossKernel,
    traces: Option<&FixedTraces>,
    config: &SolverConfig,
) -> Result<(ProjectionPair, SolverReport)> {
    config.validate()?;
    let k = kernel.matrix();
    let (mut p_c, mut p_s) = initial_pair(kernel, config.initialization);
    let grad_c = |p_s: &DMatrix<f64>| k * p_s * -2.0;
    let grad_s = |p_c: &DMatrix<f64>| k.tr_mul(p_c) * -2.0;

    let mut report = SolverReport {
        iterations_run: 0,
        objective_trace: Vec::new(),
        residual_c_trace: Vec::new(),
        residual_s_trace: Vec::new(),
        tau_trace: Vec::new(),
        fixed_trace_c: Vec::new(),
        fixed_trace_s: Vec::new(),
        orthogonality_trace: Vec::new(),
        stalls: Vec::new(),
        termination: Termination::MaxIterations,
    };
    let mut objective = cross_value(&p_c, k, &p_s);
    let record =
        |report: &mut SolverReport, p_c: &DMatrix<f64>, p_s: &DMatrix<f64>, objective: f64| {
            let rc = stationarity_residual(&grad_c(p_s), p_c);
            let rs = stationarity_residual(&grad_s(p_c), p_s);
            report.objective_trace.push(objective);
            report.residual_c_trace.push(rc);
            report.residual_s_trace.push(rs);
            report
                .orthogonality_trace
                .push(orthogonality_residual(p_c).max(orthogonality_residual(p_s)));
            if let Some(t) = traces {
                let (tc, ts) = t.evaluate(p_c, p_s);
                report.fixed_trace_c.push(tc);
                report.fixed_trace_s.push(ts);
            }
            rc <= config.epsilon && rs <= config.epsilon
        };

    if record(&mut report, &p_c, &p_s, objective) {
        report.termination = Termination::Converged;
        return Ok((ProjectionPair::from_parts_unchecked(p_c, p_s)?, report));
    }

    let mut memory_c = StepMemory::default();
    let mut memory_s = StepMemory::default();
    for t in 1..=config.max_iterations {
        // P_c step with P_s fixed.
        let g_c = grad_c(&p_s);
        let s_c = skew_step(&g_c, &p_c)?;
        let trial = trial_step(&mut memory_c, &p_c, &s_c, config);
        let step = curvilinear_search(
            &p_c,
            &s_c,
            objective,
            |_, y| cross_value(y, k, &p_s),
            trial,
            config,
        )?;
        if step.stalled {
            memory_c.reset();
            report.stalls.push(StallStep {
                iteration: t,
                block: Block::Content,
            });
        }
        let tau_c = step.tau;
        p_c = step.p;
        objective = step.objective;

        // P_s step with the updated P_c fixed.
        let g_s = grad_s(&p_c);
        let s_s = skew_step(&g_s, &p_s)?;
        let trial = trial_step(&mut memory_s, &p_s, &s_s, config);
        let step = curvilinear_search(
            &p_s,
            &s_s,
            objective,
            |_, y| cross_value(&p_c, k, y),
            trial,
            config,
        )?;
        if step.stalled {
            memory_s.reset();
            report.stalls.push(StallStep {
                iteration: t,
                block: Block::Style,
            });
        }
        let tau_s = step.tau;
        p_s = step.p;
        objective = step.objective;

        report.tau_trace.push((tau_c, tau_s));
        report.iterations_run = t;
        if record(&mut report, &p_c, &p_s, objective) {
            report.termination = Termination::Converged;
            break;
        }
    }
    Ok((ProjectionPair::from_parts_unchecked(p_c, p_s)?, report))
}

fn trial_step(
    memory: &mut StepMemory,
    p: &DMatrix<f64>,
    s: &DMatrix<f64>,
    config: &SolverConfig,
) -> f64 {
    if config.adaptive_step {
        memory.trial(p, s * p, config.tau_init)
    } else {
        config.tau_init
    }
}
