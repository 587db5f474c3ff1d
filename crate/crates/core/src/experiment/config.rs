use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Regularizer;
use crate::operators::masks::{cs_operator, kspace_rows, MaskPattern};
use crate::operators::{DegradationEnsemble, LinearOperator};
use crate::priors::{io as prior_io, Covariance, GaussianComponent, GmmPrior, GmmRecipe};
use crate::restoration::{Perturbation, RestorationOperator};
use crate::solver::{AuditOptions, SolverConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity {
        dim: usize,
    },
    Scale {
        c: f64,
        dim: usize,
    },
    /// Row-major matrix.
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Mask {
        dim: usize,
        indices: Vec<usize>,
    },
    Fourier {
        height: usize,
        width: usize,
        #[serde(default = "yes")]
        real_input: bool,
    },
    Convolution {
        kernel: Vec<f64>,
        kernel_height: usize,
        kernel_width: usize,
        height: usize,
        width: usize,
    },
    Downsample {
        factor: usize,
        height: usize,
        width: usize,
    },
    /// Row-subsampled unitary Fourier transform of a real image.
    Kspace {
        height: usize,
        width: usize,
        acceleration: usize,
        center_lines: usize,
        pattern: MaskPattern,
    },
    Compose {
        stages: Vec<OperatorSpec>,
    },
    ConvexCombo {
        alpha: f64,
        inner: Box<OperatorSpec>,
    },
    Adjoint {
        inner: Box<OperatorSpec>,
    },
}

fn yes() -> bool {
    true
}

impl OperatorSpec {
    pub fn build(&self) -> Result<LinearOperator> {
        Ok(match self {
            OperatorSpec::Identity { dim } => LinearOperator::identity(*dim),
            OperatorSpec::Scale { c, dim } => LinearOperator::scale(*c, *dim),
            OperatorSpec::Dense { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(Error::Config(format!(
                        "dense operator: {} values for a {rows}x{cols} matrix",
                        data.len()
                    )));
                }
                LinearOperator::dense(DMatrix::from_row_slice(*rows, *cols, data))
            }
            OperatorSpec::Mask { dim, indices } => LinearOperator::mask_indices(*dim, indices)?,
            OperatorSpec::Fourier {
                height,
                width,
                real_input,
            } => LinearOperator::fourier(*height, *width, *real_input),
            OperatorSpec::Convolution {
                kernel,
                kernel_height,
                kernel_width,
                height,
                width,
            } => LinearOperator::convolution_2d(kernel.clone(), *kernel_height, *kernel_width, *height, *width)?,
            OperatorSpec::Downsample {
                factor,
                height,
                width,
            } => LinearOperator::downsample(*factor, *height, *width)?,
            OperatorSpec::Kspace {
                height,
                width,
                acceleration,
                center_lines,
                pattern,
            } => {
                let rows = kspace_rows(*height, *acceleration, *center_lines, *pattern)?;
                cs_operator(*height, *width, &rows)?
            }
            OperatorSpec::Compose { stages } => {
                LinearOperator::compose(stages.iter().map(|s| s.build()).collect::<Result<_>>()?)?
            }
            OperatorSpec::ConvexCombo { alpha, inner } => {
                LinearOperator::convex_combo(*alpha, inner.build()?)?
            }
            OperatorSpec::Adjoint { inner } => inner.build()?.adjoint(),
        })
    }

    /// Image shape implied by the operator, when it has one.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            OperatorSpec::Fourier { height, width, .. }
            | OperatorSpec::Convolution { height, width, .. }
            | OperatorSpec::Downsample { height, width, .. }
            | OperatorSpec::Kspace { height, width, .. } => Some((*height, *width)),
            OperatorSpec::Compose { stages } => stages.first().and_then(|s| s.image_shape()),
            OperatorSpec::ConvexCombo { inner, .. } => inner.image_shape(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthSpec {
    SampledFromPrior,
    File { path: PathBuf },
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        GroundTruthSpec::SampledFromPrior
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub operator: OperatorSpec,
    #[serde(default)]
    pub ground_truth: GroundTruthSpec,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal variances, or a row-major full covariance.
    pub cov: CovarianceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSpec {
    Diagonal(Vec<f64>),
    Full(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    Recipe(GmmRecipe),
    File { path: PathBuf },
    Isotropic { mean: Vec<f64>, variance: f64 },
    Inline { components: Vec<ComponentSpec> },
}

impl PriorSpec {
    pub fn build(&self, base: &Path) -> Result<GmmPrior> {
        match self {
            PriorSpec::Recipe(r) => r.build(),
            PriorSpec::File { path } => prior_io::read(&resolve(base, path)),
            PriorSpec::Isotropic { mean, variance } => {
                GmmPrior::isotropic(DVector::from_column_slice(mean), *variance)
            }
            PriorSpec::Inline { components } => {
                let comps = components
                    .iter()
                    .map(|c| {
                        let n = c.mean.len();
                        let cov = match &c.cov {
                            CovarianceSpec::Diagonal(d) => Covariance::Diagonal(DVector::from_column_slice(d)),
                            CovarianceSpec::Full(f) => {
                                if f.len() != n * n {
                                    return Err(Error::Config(format!(
                                        "full covariance needs {} values, got {}",
                                        n * n,
                                        f.len()
                                    )));
                                }
                                Covariance::Full(DMatrix::from_row_slice(n, n, f))
                            }
                        };
                        GaussianComponent::new(c.weight, DVector::from_column_slice(&c.mean), cov)
                    })
                    .collect::<Result<Vec<_>>>()?;
                GmmPrior::new(comps)
            }
        }
    }

    fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            PriorSpec::Recipe(GmmRecipe { image: Some(img), .. }) => Some((img.height, img.width)),
            _ => None,
        }
    }
}

/// `b` uniform k-space masks with offsets `0..b` (every row covered when `b = acceleration`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KspaceFamily {
    pub height: usize,
    pub width: usize,
    pub acceleration: usize,
    pub center_lines: usize,
    /// Defaults to `0..acceleration`.
    #[serde(default)]
    pub offsets: Option<Vec<usize>>,
}

impl KspaceFamily {
    pub fn members(&self) -> Vec<OperatorSpec> {
        let offsets = self
            .offsets
            .clone()
            .unwrap_or_else(|| (0..self.acceleration).collect());
        offsets
            .into_iter()
            .map(|offset| OperatorSpec::Kspace {
                height: self.height,
                width: self.width,
                acceleration: self.acceleration,
                center_lines: self.center_lines,
                pattern: MaskPattern::Uniform { offset },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(default)]
    pub members: Vec<OperatorSpec>,
    /// Appended after `members`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kspace_family: Option<KspaceFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub sigma: f64,
}

impl EnsembleSpec {
    pub fn member_specs(&self) -> Vec<OperatorSpec> {
        let mut all = self.members.clone();
        if let Some(f) = &self.kspace_family {
            all.extend(f.members());
        }
        all
    }

    pub fn build(&self) -> Result<DegradationEnsemble> {
        let members = self
            .member_specs()
            .iter()
            .map(|m| m.build())
            .collect::<Result<Vec<_>>>()?;
        match &self.weights {
            Some(w) => DegradationEnsemble::weighted(members, w.clone(), self.sigma),
            None => DegradationEnsemble::uniform(members, self.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestorerSpec {
    Exact,
    Offset { c: Vec<f64> },
    /// Offset `value` on every pixel.
    UniformOffset { value: f64 },
    Gain { lambda: f64 },
    Smoothing { strength: f64 },
}

impl Default for RestorerSpec {
    fn default() -> Self {
        RestorerSpec::Exact
    }
}

impl RestorerSpec {
    pub fn build(&self, reg: &Regularizer) -> Result<RestorationOperator> {
        let exact = reg.exact_restorer();
        let n = reg.prior().dim();
        match self {
            RestorerSpec::Exact => Ok(exact),
            RestorerSpec::Offset { c } => {
                exact.biased(Perturbation::ConstantOffset(DVector::from_column_slice(c)))
            }
            RestorerSpec::UniformOffset { value } => {
                exact.biased(Perturbation::ConstantOffset(DVector::from_element(n, *value)))
            }
            RestorerSpec::Gain { lambda } => exact.biased(Perturbation::Gain(*lambda)),
            RestorerSpec::Smoothing { strength } => exact.biased(Perturbation::Smoothing(*strength)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSpec {
    pub psnr: bool,
    pub ssim: bool,
    /// Defaults to the largest absolute ground-truth value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak: Option<f64>,
    pub magnitude: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<(usize, usize)>,
    pub ssim_window: usize,
    /// Track PSNR at every iteration.
    pub psnr_trace: bool,
    /// Mean, std, min and max of the trace columns across seeds.
    pub curves: bool,
    /// Fill `wall_ms`; off by default so summaries stay byte-reproducible.
    pub timing: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            psnr: true,
            ssim: true,
            peak: None,
            magnitude: true,
            image_shape: None,
            ssim_window: 7,
            psnr_trace: true,
            curves: false,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub problem: ProblemSpec,
    pub prior: PriorSpec,
    pub ensemble: EnsembleSpec,
    pub tau: f64,
    #[serde(default)]
    pub restorer: RestorerSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditOptions>,
}

fn default_run_id() -> String {
    "run".to_string()
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.metrics
            .image_shape
            .or_else(|| self.prior.image_shape())
            .or_else(|| self.problem.operator.image_shape())
    }
}

/// Every object a run needs, built and cross-checked once per config.
pub struct Prepared {
    pub a: LinearOperator,
    pub prior: Arc<GmmPrior>,
    pub reg: Regularizer,
    pub restorer: RestorationOperator,
    pub image_shape: Option<(usize, usize)>,
    pub ground_truth: Option<DVector<f64>>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        let cfg_err = |e: Error| match e {
            Error::Io(_) | Error::Numerical(_) | Error::Refused(_) | Error::Divergence { .. } => e,
            other => Error::Config(other.to_string()),
        };
        if cfg.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(cfg.problem.noise_sigma >= 0.0) {
            return Err(Error::Config("problem.noise_sigma must be >= 0".into()));
        }
        if !(cfg.tau >= 0.0) {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        cfg.solver.validate().map_err(cfg_err)?;
        let a = cfg.problem.operator.build().map_err(cfg_err)?;
        let prior = Arc::new(cfg.prior.build(base).map_err(cfg_err)?);
        let ens = cfg.ensemble.build().map_err(cfg_err)?;
        let n = a.in_dim();
        if prior.dim() != n {
            return Err(Error::Config(format!(
                "prior dimension {} differs from operator input {n}",
                prior.dim()
            )));
        }
        if ens.in_dim() != n {
            return Err(Error::Config(format!(
                "ensemble input dimension {} differs from operator input {n}",
                ens.in_dim()
            )));
        }
        let reg = Regularizer::new(cfg.tau, Arc::clone(&prior), ens).map_err(cfg_err)?;
        let restorer = cfg.restorer.build(&reg).map_err(cfg_err)?;
        let image_shape = cfg.image_shape();
        if let Some((h, w)) = image_shape {
            if h * w != n {
                return Err(Error::Config(format!("image shape {h}x{w} does not match dimension {n}")));
            }
        } else if cfg.metrics.ssim {
            return Err(Error::Config("ssim needs metrics.image_shape".into()));
        }
        let ground_truth = match &cfg.problem.ground_truth {
            GroundTruthSpec::SampledFromPrior => None,
            GroundTruthSpec::File { path } => {
                let path = resolve(base, path);
                let (header, data) = super::image_io::read_image(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if data.len() != n {
                    return Err(Error::Config(format!(
                        "ground truth {} holds {} values ({}x{}x{}), expected {n}",
                        path.display(),
                        data.len(),
                        header.height,
                        header.width,
                        header.channels
                    )));
                }
                Some(data)
            }
        };
        if let crate::solver::InitialPoint::Explicit(v) = &cfg.solver.x0 {
            if v.len() != n {
                return Err(Error::Config(format!("solver.x0 has {} values, expected {n}", v.len())));
            }
        }
        if let crate::solver::Selection::Fixed(i) = cfg.solver.selection {
            if i >= reg.ens.len() {
                return Err(Error::Config(format!("fixed selection {i} outside ensemble")));
            }
        }
        Ok(Self {
            a,
            prior,
            reg,
            restorer,
            image_shape,
            ground_truth,
        })
    }
}
