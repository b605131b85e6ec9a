//! End-to-end feature-domain jobs: read tensors, build the affinity, align,
//! transfer and write the results plus a line-oriented report.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::{
    knn_affinity_with, merge_user_regions, normalize_affinity, semantic_affinity_with,
    AffinityMatrix, DEFAULT_K,
};
use crate::error::{MastError, Result};
use crate::exec::Execution;
use crate::feature::{FeatureMap, ProjectionPair, RegionKind, RegionSpec};
use crate::io::{read_feature_map, read_tensor, write_feature_map, write_tensor, Tensor};
use crate::optim::{
    align_with, procrustes_oracle, CrossKernel, SolverConfig, SolverReport, Termination,
};
use crate::transfer::{transfer_to_content_with, transfer_to_style_with};

pub const REPORT_HEADER: &str = "# mast-report v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unsupervised,
    UserEdit,
    Semantic,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unsupervised => "unsupervised",
            Mode::UserEdit => "user_edit",
            Mode::Semantic => "semantic",
        }
    }

    pub fn needs_masks(self) -> bool {
        self != Mode::Unsupervised
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = MastError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsupervised" => Ok(Mode::Unsupervised),
            "user_edit" | "user-edit" => Ok(Mode::UserEdit),
            "semantic" => Ok(Mode::Semantic),
            other => Err(MastError::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Content features mapped into the style space.
    pub stylized: PathBuf,
    /// Style features mapped into the content space; required with `bidirectional`.
    pub reverse: Option<PathBuf>,
    pub p_c: Option<PathBuf>,
    pub p_s: Option<PathBuf>,
    pub affinity: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// A job description, usually loaded from a TOML file. Relative paths are
/// resolved against `base_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobManifest {
    pub content_features: PathBuf,
    pub style_features: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    pub content_mask: Option<PathBuf>,
    pub style_mask: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    pub output: OutputPaths,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_k() -> usize {
    DEFAULT_K
}

/// Command-line overrides; `Some` beats the manifest value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobOverrides {
    pub mode: Option<Mode>,
    pub k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub epsilon: Option<f64>,
    pub content_mask: Option<PathBuf>,
    pub style_mask: Option<PathBuf>,
    pub bidirectional: Option<bool>,
}

impl JobManifest {
    /// A manifest with defaults for everything but the required paths.
    pub fn new(
        content: impl Into<PathBuf>,
        style: impl Into<PathBuf>,
        stylized: impl Into<PathBuf>,
    ) -> Self {
        Self {
            content_features: content.into(),
            style_features: style.into(),
            mode: Mode::default(),
            content_mask: None,
            style_mask: None,
            k: DEFAULT_K,
            bidirectional: false,
            solver: SolverConfig::default(),
            output: OutputPaths {
                stylized: stylized.into(),
                ..OutputPaths::default()
            },
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: JobManifest =
            toml::from_str(text).map_err(|e| MastError::InvalidConfig(format!("manifest: {e}")))?;
        manifest.base_dir = base_dir.into();
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MastError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MastError::InvalidConfig(format!("manifest: {e}")))
    }

    pub fn apply(&mut self, o: &JobOverrides) {
        if let Some(mode) = o.mode {
            self.mode = mode;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(n) = o.max_iterations {
            self.solver.max_iterations = n;
        }
        if let Some(eps) = o.epsilon {
            self.solver.epsilon = eps;
        }
        if let Some(p) = &o.content_mask {
            self.content_mask = Some(p.clone());
        }
        if let Some(p) = &o.style_mask {
            self.style_mask = Some(p.clone());
        }
        if let Some(b) = o.bidirectional {
            self.bidirectional = b;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(MastError::InvalidConfig("k must be positive".into()));
        }
        if self.mode.needs_masks() && (self.content_mask.is_none() || self.style_mask.is_none()) {
            return Err(MastError::InvalidConfig(format!(
                "mode {} requires both content_mask and style_mask",
                self.mode
            )));
        }
        if self.bidirectional && self.output.reverse.is_none() {
            return Err(MastError::InvalidConfig(
                "bidirectional jobs need output.reverse".into(),
            ));
        }
        self.solver.validate()
    }

    fn config_line(&self) -> String {
        let s = &self.solver;
        let mask = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("-".to_string(), |p| p.display().to_string())
        };
        format!(
            "config content={} style={} mode={} content_mask={} style_mask={} k={} bidirectional={} \
             max_iterations={} epsilon={:e} tau_init={:e} backtrack_factor={} armijo_c1={:e} \
             max_backtracks={} adaptive_step={} initialization={}",
            self.content_features.display(),
            self.style_features.display(),
            self.mode,
            mask(&self.content_mask),
            mask(&self.style_mask),
            self.k,
            self.bidirectional,
            s.max_iterations,
            s.epsilon,
            s.tau_init,
            s.backtrack_factor,
            s.armijo_c1,
            s.max_backtracks,
            s.adaptive_step,
            match s.initialization {
                crate::optim::Initialization::Identity => "identity",
                crate::optim::Initialization::DeterminantMatched => "determinant_matched",
            }
        )
    }
}

#[derive(Debug, Clone)]
pub struct JobOutcome {
    pub affinity: AffinityMatrix,
    pub pair: ProjectionPair,
    pub solver: SolverReport,
    pub stylized: FeatureMap,
    pub reverse: Option<FeatureMap>,
    /// The report text, also written to `output.report` when set.
    pub report: String,
}

impl JobOutcome {
    pub fn termination(&self) -> Termination {
        self.solver.termination
    }
}

pub fn run_job(manifest: &JobManifest) -> Result<JobOutcome> {
    run_job_with(manifest, Execution::default())
}

pub fn run_job_with(manifest: &JobManifest, exec: Execution) -> Result<JobOutcome> {
    manifest.validate()?;
    let content = read_feature_map(manifest.resolve(&manifest.content_features))?;
    let style = read_feature_map(manifest.resolve(&manifest.style_features))?;
    if content.channels() != style.channels() {
        return Err(MastError::ChannelMismatch {
            content: content.channels(),
            style: style.channels(),
        });
    }
    let affinity = build_affinity(manifest, &content, &style, exec)?;
    let na = normalize_affinity(&affinity)?;
    let (pair, solver) = align_with(&content, &style, &na, &manifest.solver, exec)?;
    let stylized = transfer_to_style_with(&content, &pair, exec)?;
    let reverse = if manifest.bidirectional {
        Some(transfer_to_content_with(&style, &pair, exec)?)
    } else {
        None
    };
    let bound = procrustes_oracle(&CrossKernel::new_with(&content, &style, &na, exec)?).1;
    let report = format_report(manifest, &affinity, bound, &solver);

    let out = &manifest.output;
    write_feature_map(&stylized, manifest.resolve(&out.stylized))?;
    if let (Some(rev), Some(path)) = (&reverse, &out.reverse) {
        write_feature_map(rev, manifest.resolve(path))?;
    }
    if let Some(path) = &out.p_c {
        write_tensor(&Tensor::from_matrix(pair.p_c()), manifest.resolve(path))?;
    }
    if let Some(path) = &out.p_s {
        write_tensor(&Tensor::from_matrix(pair.p_s()), manifest.resolve(path))?;
    }
    if let Some(path) = &out.affinity {
        write_tensor(&Tensor::from_affinity(&affinity)?, manifest.resolve(path))?;
    }
    if let Some(path) = &out.report {
        let path = manifest.resolve(path);
        fs::write(&path, &report).map_err(|e| MastError::io(path, e))?;
    }
    Ok(JobOutcome {
        affinity,
        pair,
        solver,
        stylized,
        reverse,
        report,
    })
}

/// Loads an `[H, W]` label tensor and checks it against the map's spatial shape.
pub fn read_mask(path: &Path, target: &FeatureMap) -> Result<Vec<i32>> {
    let (h, w, labels) = read_tensor(path)?.to_labels()?;
    if (h, w) != (target.height(), target.width()) {
        return Err(MastError::ShapeMismatch(format!(
            "mask {} is {h}x{w}, feature map is {}x{}",
            path.display(),
            target.height(),
            target.width()
        )));
    }
    Ok(labels)
}

/// Mode-dependent affinity for a manifest.
pub fn build_affinity(
    manifest: &JobManifest,
    content: &FeatureMap,
    style: &FeatureMap,
    exec: Execution,
) -> Result<AffinityMatrix> {
    let masks = || -> Result<(Vec<i32>, Vec<i32>)> {
        let missing = || MastError::InvalidConfig(format!("mode {} requires masks", manifest.mode));
        let cm = manifest.content_mask.as_ref().ok_or_else(missing)?;
        let sm = manifest.style_mask.as_ref().ok_or_else(missing)?;
        Ok((
            read_mask(&manifest.resolve(cm), content)?,
            read_mask(&manifest.resolve(sm), style)?,
        ))
    };
    match manifest.mode {
        Mode::Unsupervised => knn_affinity_with(content, style, manifest.k, exec),
        Mode::UserEdit => {
            let (c, s) = masks()?;
            let spec =
                RegionSpec::new(RegionKind::UserCorrespondence, c, s).validate(content, style)?;
            let base = knn_affinity_with(content, style, manifest.k, exec)?;
            merge_user_regions(&base, &spec)
        }
        Mode::Semantic => {
            let (c, s) = masks()?;
            let spec =
                RegionSpec::new(RegionKind::SemanticSegmentation, c, s).validate(content, style)?;
            semantic_affinity_with(content, style, manifest.k, &spec, exec)
        }
    }
}

/// Renders the line-delimited report: header, echoed configuration, affinity
/// summary, one line per iterate and a closing summary.
pub fn format_report(
    manifest: &JobManifest,
    affinity: &AffinityMatrix,
    bound: f64,
    solver: &SolverReport,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_HEADER}");
    let _ = writeln!(out, "{}", manifest.config_line());
    let _ = writeln!(
        out,
        "affinity pairs={} n_content={} n_style={}",
        affinity.pair_count(),
        affinity.n_content(),
        affinity.n_style()
    );
    let _ = writeln!(out, "bound objective={bound:e}");
    for t in 0..solver.objective_trace.len() {
        let (tau_c, tau_s) = if t == 0 {
            (0.0, 0.0)
        } else {
            solver.tau_trace[t - 1]
        };
        let _ = writeln!(
            out,
            "iter={t} objective={:e} residual_c={:e} residual_s={:e} tau_c={tau_c:e} tau_s={tau_s:e}",
            solver.objective_trace[t], solver.residual_c_trace[t], solver.residual_s_trace[t],
        );
    }
    for stall in &solver.stalls {
        let _ = writeln!(
            out,
            "stall iter={} block={:?}",
            stall.iteration, stall.block
        );
    }
    let _ = writeln!(
        out,
        "done termination={} iterations={} objective={:e}",
        match solver.termination {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
        },
        solver.iterations_run,
        solver.final_objective()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_defaults_and_overrides() {
        let text = r#"
            content_features = "c.mtsr"
            style_features = "s.mtsr"
            [output]
            stylized = "out.mtsr"
        "#;
        let mut m = JobManifest::from_toml_str(text, "/tmp/job").unwrap();
        assert_eq!(m.k, 5);
        assert_eq!(m.solver.max_iterations, 100);
        assert_eq!(m.mode, Mode::Unsupervised);
        assert_eq!(
            m.resolve(&m.content_features),
            PathBuf::from("/tmp/job/c.mtsr")
        );
        m.validate().unwrap();

        m.apply(&JobOverrides {
            k: Some(3),
            max_iterations: Some(7),
            ..Default::default()
        });
        assert_eq!((m.k, m.solver.max_iterations), (3, 7));
        assert!(m.config_line().contains("k=3"));
        assert!(m.config_line().contains("max_iterations=7"));
    }

    #[test]
    fn mode_requirements() {
        let mut m = JobManifest::new("c", "s", "o");
        m.mode = Mode::Semantic;
        m.content_mask = Some("cm".into());
        assert!(matches!(m.validate(), Err(MastError::InvalidConfig(_))));
        m.style_mask = Some("sm".into());
        m.validate().unwrap();
        m.bidirectional = true;
        assert!(m.validate().is_err());
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let mut m = JobManifest::new("c", "s", "o");
        m.mode = Mode::UserEdit;
        m.content_mask = Some("cm".into());
        m.style_mask = Some("sm".into());
        m.solver.epsilon = 1e-9;
        let text = m.to_toml_string().unwrap();
        assert_eq!(JobManifest::from_toml_str(&text, "").unwrap(), m);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"
            content_features = "c"
            style_features = "s"
            kk = 3
            [output]
            stylized = "o"
        "#;
        assert!(JobManifest::from_toml_str(text, "").is_err());
        assert!("sideways".parse::<Mode>().is_err());
        assert_eq!("user-edit".parse::<Mode>().unwrap(), Mode::UserEdit);
    }
}
