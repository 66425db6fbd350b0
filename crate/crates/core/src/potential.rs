//! Potential families: deterministic built-ins (harmonic, multiscale cosine,
//! checkerboard, piecewise-constant step), explicit random sine series in 1D
//! and 2D, and Gaussian-kernel Karhunen–Loève expansions discretized by the
//! Nyström method.
//!
//! A [`PotentialModel`] is a mean field plus `m` scaled modes; drawing a
//! coordinate vector `xi` through [`PotentialModel::sample`] yields a
//! [`PotentialSample`] whose evaluation is
//! `v(x) = vbar(x) + sum_j s_j xi_j v_j(x)`.

use std::sync::Arc;

use faer::prelude::*;
use faer::Side;

use crate::error::{CoreError, Result};
use crate::fem::PotentialField;
use crate::mesh::Mesh;

type SpaceFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Tag describing which family a model belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelTag {
    Harmonic,
    MultiscaleCos,
    Checkerboard,
    SineSeries1d,
    SineSeries2d,
    KlGaussian,
    DiscontinuousStep,
    Custom,
}

/// Gaussian covariance kernel specification
/// `C(x, y) = sigma^2 exp(-sum_i |x_i - y_i|^2 / (2 l_i^2))`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub variance: f64,
    pub lengths: Vec<f64>,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(CoreError::InvalidArgument(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if self.lengths.is_empty() || self.lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(CoreError::InvalidArgument(
                "kernel correlation lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, x: [f64; 2], y: [f64; 2], dim: usize) -> f64 {
        let mut e = 0.0;
        for ax in 0..dim {
            let d = x[ax] - y[ax];
            e += d * d / (2.0 * self.lengths[ax.min(self.lengths.len() - 1)].powi(2));
        }
        self.variance * (-e).exp()
    }
}

/// Mean field plus scaled modes; immutable and cheap to share.
#[derive(Clone)]
pub struct PotentialModel {
    tag: ModelTag,
    mean: SpaceFn,
    modes: Vec<SpaceFn>,
    scales: Vec<f64>,
}

impl PotentialModel {
    pub fn tag(&self) -> &ModelTag {
        &self.tag
    }

    /// Truncation order `m` (0 for deterministic models).
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn mean_at(&self, x: [f64; 2]) -> f64 {
        (self.mean)(x)
    }

    pub fn mode_at(&self, j: usize, x: [f64; 2]) -> f64 {
        (self.modes[j])(x)
    }

    /// Binds a random coordinate vector to the model.
    pub fn sample(self: &Arc<Self>, xi: &[f64]) -> Result<PotentialSample> {
        if xi.len() != self.modes.len() {
            return Err(CoreError::InvalidArgument(format!(
                "coordinate vector has length {}, model has {} modes",
                xi.len(),
                self.modes.len()
            )));
        }
        Ok(PotentialSample {
            model: Arc::clone(self),
            xi: xi.to_vec(),
        })
    }

    /// The deterministic sample (`xi = 0`); convenient for mean-field runs.
    pub fn mean_sample(self: &Arc<Self>) -> PotentialSample {
        PotentialSample {
            model: Arc::clone(self),
            xi: vec![0.0; self.modes.len()],
        }
    }
}

impl std::fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialModel")
            .field("tag", &self.tag)
            .field("modes", &self.modes.len())
            .field("scales", &self.scales)
            .finish()
    }
}

/// A concrete potential `v(x) = vbar(x) + sum_j s_j xi_j v_j(x)`.
#[derive(Clone)]
pub struct PotentialSample {
    model: Arc<PotentialModel>,
    xi: Vec<f64>,
}

impl PotentialSample {
    pub fn model(&self) -> &Arc<PotentialModel> {
        &self.model
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let mut v = (self.model.mean)(x);
        for j in 0..self.xi.len() {
            v += self.model.scales[j] * self.xi[j] * (self.model.modes[j])(x);
        }
        v
    }

    /// Point values at every mesh node (the form the nodewise phase flow
    /// consumes).
    pub fn nodal_values(&self, mesh: &Mesh) -> Vec<f64> {
        (0..mesh.node_count())
            .map(|p| self.eval(mesh.node_coord(p)))
            .collect()
    }

    /// Supremum proxy `max_x |v|` over mesh nodes, for the `||v||_inf H^2 /
    /// eps^2` diagnostic ratio.
    pub fn sup_on_nodes(&self, mesh: &Mesh) -> f64 {
        (0..mesh.node_count())
            .map(|p| self.eval(mesh.node_coord(p)).abs())
            .fold(0.0, f64::max)
    }
}

impl PotentialField for PotentialSample {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.eval(x)
    }
}

/// Parameters for [`builtin`].
#[derive(Debug, Clone)]
pub enum BuiltinSpec {
    /// `v(x) = 0.5 x^2` in 1D.
    Harmonic,
    /// `v(x1, x2) = cos(x1 x2 + x1/eps + x1 x2 / eps^2)`.
    MultiscaleCos { eps: f64 },
    /// `v = v1 + v2` with the quadratic bowl `v1 = |x1-0.5|^2 + |x2-0.5|^2`
    /// and the two-scale cosine checkerboard `v2` (scale `eps2` on
    /// `[0,1/2]^2 U [1/2,1]^2`, scale `eps1` elsewhere).
    Checkerboard { eps1: f64, eps2: f64 },
    /// `v(x) = shift + sigma sum_{j=1..m} sin(j x) j^-beta xi_j`.
    SineSeries1d {
        sigma: f64,
        beta: f64,
        m: usize,
        mean_shift: f64,
    },
    /// `v(x) = shift + sigma sum_{j=1..m} sin(j x1) sin(j x2) j^-beta xi_j`.
    SineSeries2d {
        sigma: f64,
        beta: f64,
        m: usize,
        mean_shift: f64,
    },
    /// Piecewise-constant 1D potential: `levels[i]` on `[breaks[i-1], breaks[i])`,
    /// with the value at a breakpoint taken from the left.
    Step { breaks: Vec<f64>, levels: Vec<f64> },
}

/// Builds a deterministic or explicit-series potential model.
pub fn builtin(spec: &BuiltinSpec) -> Result<Arc<PotentialModel>> {
    let model = match spec {
        BuiltinSpec::Harmonic => PotentialModel {
            tag: ModelTag::Harmonic,
            mean: Arc::new(|x| 0.5 * x[0] * x[0]),
            modes: Vec::new(),
            scales: Vec::new(),
        },
        BuiltinSpec::MultiscaleCos { eps } => {
            let e = *eps;
            if !(e > 0.0) {
                return Err(CoreError::InvalidArgument(
                    "multiscale cosine needs eps > 0".into(),
                ));
            }
            PotentialModel {
                tag: ModelTag::MultiscaleCos,
                mean: Arc::new(move |x| (x[0] * x[1] + x[0] / e + x[0] * x[1] / (e * e)).cos()),
                modes: Vec::new(),
                scales: Vec::new(),
            }
        }
        BuiltinSpec::Checkerboard { eps1, eps2 } => {
            let (e1, e2) = (*eps1, *eps2);
            if !(e1 > 0.0 && e2 > 0.0) {
                return Err(CoreError::InvalidArgument(
                    "checkerboard needs eps1, eps2 > 0".into(),
                ));
            }
            PotentialModel {
                tag: ModelTag::Checkerboard,
                mean: Arc::new(move |x| {
                    let bowl = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
                    let diag = (x[0] >= 0.0 && x[0] <= 0.5 && x[1] >= 0.0 && x[1] <= 0.5)
                        || (x[0] >= 0.5 && x[0] <= 1.0 && x[1] >= 0.5 && x[1] <= 1.0);
                    let e = if diag { e2 } else { e1 };
                    let osc = ((2.0 * std::f64::consts::PI * x[0] / e).cos() + 1.0)
                        * ((2.0 * std::f64::consts::PI * x[1] / e).cos() + 1.0);
                    bowl + osc
                }),
                modes: Vec::new(),
                scales: Vec::new(),
            }
        }
        BuiltinSpec::SineSeries1d {
            sigma,
            beta,
            m,
            mean_shift,
        } => {
            if !(*sigma >= 0.0) {
                return Err(CoreError::InvalidArgument("sigma must be >= 0".into()));
            }
            let shift = *mean_shift;
            let mut modes: Vec<SpaceFn> = Vec::new();
            let mut scales = Vec::new();
            for j in 1..=*m {
                let jf = j as f64;
                modes.push(Arc::new(move |x: [f64; 2]| (jf * x[0]).sin()));
                scales.push(sigma / jf.powf(*beta));
            }
            PotentialModel {
                tag: ModelTag::SineSeries1d,
                mean: Arc::new(move |_| shift),
                modes,
                scales,
            }
        }
        BuiltinSpec::SineSeries2d {
            sigma,
            beta,
            m,
            mean_shift,
        } => {
            if !(*sigma >= 0.0) {
                return Err(CoreError::InvalidArgument("sigma must be >= 0".into()));
            }
            let shift = *mean_shift;
            let mut modes: Vec<SpaceFn> = Vec::new();
            let mut scales = Vec::new();
            for j in 1..=*m {
                let jf = j as f64;
                modes.push(Arc::new(move |x: [f64; 2]| {
                    (jf * x[0]).sin() * (jf * x[1]).sin()
                }));
                scales.push(sigma / jf.powf(*beta));
            }
            PotentialModel {
                tag: ModelTag::SineSeries2d,
                mean: Arc::new(move |_| shift),
                modes,
                scales,
            }
        }
        BuiltinSpec::Step { breaks, levels } => {
            if levels.len() != breaks.len() + 1 {
                return Err(CoreError::InvalidArgument(format!(
                    "step potential needs {} levels for {} breakpoints, got {}",
                    breaks.len() + 1,
                    breaks.len(),
                    levels.len()
                )));
            }
            if breaks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CoreError::InvalidArgument(
                    "step breakpoints must be strictly increasing".into(),
                ));
            }
            let breaks = breaks.clone();
            let levels = levels.clone();
            PotentialModel {
                tag: ModelTag::DiscontinuousStep,
                mean: Arc::new(move |x| {
                    // value at a breakpoint is the limit from the left
                    let idx = breaks.partition_point(|&b| b < x[0]);
                    levels[idx]
                }),
                modes: Vec::new(),
                scales: Vec::new(),
            }
        }
    };
    Ok(Arc::new(model))
}

/// Builds a custom model from explicit parts.
pub fn custom(mean: SpaceFn, modes: Vec<SpaceFn>, scales: Vec<f64>) -> Result<Arc<PotentialModel>> {
    if modes.len() != scales.len() {
        return Err(CoreError::InvalidArgument(
            "custom model needs one scale per mode".into(),
        ));
    }
    Ok(Arc::new(PotentialModel {
        tag: ModelTag::Custom,
        mean,
        modes,
        scales,
    }))
}

/// Karhunen–Loève model of a Gaussian-kernel random field, discretized by the
/// Nyström method on the mesh nodes with uniform (trapezoidal, periodic)
/// quadrature weights. Returns the `m` largest eigenpairs with L²-normalized
/// mode functions; mode evaluation off the grid uses Nyström interpolation.
pub fn kl_build(kernel: &KernelSpec, mesh: &Mesh, m: usize) -> Result<Arc<PotentialModel>> {
    kernel.validate()?;
    let n = mesh.node_count();
    if m > n {
        return Err(CoreError::InvalidArgument(format!(
            "truncation order {m} exceeds node count {n}"
        )));
    }
    let dim = mesh.dimension();
    // uniform periodic grid: every node carries one cell of measure |D|/n
    let w = mesh.domain_measure() / n as f64;
    let sqrt_w = w.sqrt();
    let kmat = Mat::from_fn(n, n, |i, j| {
        w * kernel.eval(mesh.node_coord(i), mesh.node_coord(j), dim)
    });
    let eig = kmat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| CoreError::EigenFailure(format!("KL eigensolve failed: {e:?}")))?;
    // eigenvalues ascending; take the top m
    let evals: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i]).collect();
    let lambda_max = evals.iter().cloned().fold(0.0, f64::max);
    let mut lambdas = Vec::with_capacity(m);
    let mut nodal_modes: Vec<Vec<f64>> = Vec::with_capacity(m);
    for k in 0..m {
        let idx = n - 1 - k;
        let mut lam = evals[idx];
        if lam < -1e-10 * lambda_max {
            return Err(CoreError::EigenFailure(format!(
                "covariance operator produced eigenvalue {lam:.3e}, below the negativity budget"
            )));
        }
        if lam < 0.0 {
            lam = 0.0;
        }
        lambdas.push(lam);
        // v(x_i) = y_i / sqrt(w); L2-normalized since sum w v^2 = |y|^2 = 1
        let col: Vec<f64> = (0..n).map(|i| eig.U()[(i, idx)] / sqrt_w).collect();
        nodal_modes.push(col);
    }

    let node_coords: Arc<Vec<[f64; 2]>> =
        Arc::new((0..n).map(|i| mesh.node_coord(i)).collect());
    let mut modes: Vec<SpaceFn> = Vec::with_capacity(m);
    let mut scales = Vec::with_capacity(m);
    for k in 0..m {
        let lam = lambdas[k];
        scales.push(lam.max(0.0).sqrt());
        let vals = Arc::new(nodal_modes[k].clone());
        let coords = Arc::clone(&node_coords);
        let kern = kernel.clone();
        modes.push(Arc::new(move |x: [f64; 2]| {
            if lam <= 0.0 {
                return 0.0;
            }
            // Nystrom interpolation: v(x) = (1/lam) sum_i w C(x, x_i) v(x_i)
            let mut acc = 0.0;
            for (i, xi) in coords.iter().enumerate() {
                acc += kern.eval(x, *xi, dim) * vals[i];
            }
            acc * w / lam
        }));
    }
    Ok(Arc::new(PotentialModel {
        tag: ModelTag::KlGaussian,
        mean: Arc::new(|_| 0.0),
        modes,
        scales,
    }))
}

/// Maps uniform unit-cube coordinates to mean-zero unit-variance uniforms on
/// `[-sqrt(3), sqrt(3)]`: `xi_j = sqrt(3) (2 u_j - 1)`.
pub fn map_unit_to_xi(u: &[f64]) -> Result<Vec<f64>> {
    let s3 = 3.0_f64.sqrt();
    u.iter()
        .map(|&uj| {
            if !(0.0..=1.0).contains(&uj) {
                Err(CoreError::InvalidArgument(format!(
                    "unit-cube coordinate {uj} outside [0, 1]"
                )))
            } else {
                Ok(s3 * (2.0 * uj - 1.0))
            }
        })
        .collect()
}
