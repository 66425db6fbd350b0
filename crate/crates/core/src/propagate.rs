//! Strang-splitting time steppers in the fine FEM space or the multiscale
//! space.
//!
//! Two schemes are provided. The eigendecomposition scheme composes a
//! nodewise cubic phase half-step, the exact flow of the full linear part
//! (kinetic plus potential, via the generalized eigendecomposition of the
//! pencil `((eps^2/2) S + V, M)`), and another half phase. The
//! Crank–Nicolson scheme composes a nodewise potential-plus-cubic phase
//! half-step, an M-norm-preserving Crank–Nicolson kinetic step, and another
//! half phase.
//!
//! In the multiscale space the linear flow acts on coarse coefficients while
//! nonlinear phases act on the reconstructed fine field, followed by the
//! L2-optimal compression `uhat = (M^ms)^{-1} C^T M^h u_fine`.

use std::sync::Arc;

use faer::linalg::solvers::{Llt, PartialPivLu, Solve};
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::error::{CoreError, Result};
use crate::fem::{AssembledOperators, WaveField};
use crate::linalg::{dense_matvec_c, pack_complex, pencil_eigen, unpack_complex, CsrMatrix};
use crate::msbasis::{CoarseOperators, MultiscaleBasis};
use crate::observables::{self, ObservableSeries};
use crate::potential::PotentialSample;
use crate::{abs2, cis, C64};

/// Splitting scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exact linear flow by eigendecomposition; cubic-only phase.
    Eigen,
    /// Crank–Nicolson kinetic flow; potential-plus-cubic phase.
    CrankNicolson,
}

/// Stepper parameters shared by both schemes and both spaces.
#[derive(Debug, Clone)]
pub struct StepperConfig {
    pub scheme: Scheme,
    /// Time step. Negative values are permitted for reversal diagnostics
    /// with the eigendecomposition scheme.
    pub dt: f64,
    pub eps: f64,
    /// Cubic nonlinearity coefficient, `>= 0`.
    pub lambda: f64,
    pub steps: usize,
    /// Record observables every this many steps (0 records only the first
    /// and last step).
    pub obs_every: usize,
    pub keep_trajectory: bool,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt == 0.0 || !self.dt.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "time step must be nonzero and finite, got {}",
                self.dt
            )));
        }
        if self.lambda < 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "nonlinearity coefficient must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.dt.abs() >= self.eps {
            log::warn!(
                "time step {} is not below eps = {}; splitting accuracy is outside the supported regime",
                self.dt,
                self.eps
            );
        }
        Ok(())
    }
}

/// Nodewise cubic phase flow `u_p -> exp(-i lambda tau |u_p|^2 / eps) u_p`.
/// The nodal modulus is preserved (up to round-off of the rotation).
pub fn phase_flow_cubic(u: &[C64], tau: f64, lambda: f64, eps: f64) -> Vec<C64> {
    if lambda == 0.0 {
        return u.to_vec();
    }
    u.iter()
        .map(|&z| cis(-lambda * tau * abs2(z) / eps) * z)
        .collect()
}

/// Nodewise potential-plus-cubic phase flow
/// `u_p -> exp(-i tau (v_p + lambda |u_p|^2) / eps) u_p`.
pub fn phase_flow_potential_cubic(
    u: &[C64],
    v_nodal: &[f64],
    tau: f64,
    lambda: f64,
    eps: f64,
) -> Result<Vec<C64>> {
    if v_nodal.len() != u.len() {
        return Err(CoreError::InvalidArgument(
            "nodal potential length does not match state length".into(),
        ));
    }
    if let Some(p) = v_nodal.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite(format!(
            "nodal potential at node {p} is not finite"
        )));
    }
    Ok(u.iter()
        .zip(v_nodal.iter())
        .map(|(&z, &v)| cis(-tau * (v + lambda * abs2(z)) / eps) * z)
        .collect())
}

/// Exact linear propagator from the generalized eigendecomposition
/// `((eps^2/2) S + V) P = M P diag(Lambda)` with `P^T M P = I`.
pub struct EigenPropagator {
    p: Mat<f64>,
    /// `P^T M`; the inverse application (no explicit inverse is formed).
    pt_m: Mat<f64>,
    lambda: Vec<f64>,
    eps: f64,
}

impl EigenPropagator {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn basis(&self) -> &Mat<f64> {
        &self.p
    }

    /// `u' = P exp(-i dt Lambda / eps) P^T M u`; preserves the M-norm.
    pub fn apply(&self, u: &[C64], dt: f64) -> Vec<C64> {
        let mut w = &self.pt_m * pack_complex(u);
        for k in 0..self.lambda.len() {
            let ph = cis(-dt * self.lambda[k] / self.eps);
            let (re, im) = (w[(k, 0)], w[(k, 1)]);
            w[(k, 0)] = ph.re * re - ph.im * im;
            w[(k, 1)] = ph.re * im + ph.im * re;
        }
        unpack_complex(&(&self.p * w))
    }
}

fn eig_from_dense(a_dense: Mat<f64>, m_dense: Mat<f64>, eps: f64) -> Result<EigenPropagator> {
    let n = a_dense.nrows();
    let pe = pencil_eigen(&a_dense, &m_dense)?;
    let mp = &m_dense * &pe.p;
    // residual ||A P - M P diag(lambda)||_F <= 1e-8 ||A||_F
    let ap = &a_dense * &pe.p;
    let mut res2 = 0.0;
    for k in 0..n {
        for i in 0..n {
            let r = ap[(i, k)] - mp[(i, k)] * pe.lambda[k];
            res2 += r * r;
        }
    }
    let a_fro = a_dense.norm_l2();
    if res2.sqrt() > 1e-8 * a_fro.max(f64::MIN_POSITIVE) {
        return Err(CoreError::EigenFailure(format!(
            "pencil residual {:.3e} exceeds 1e-8 * ||A||_F = {:.3e} at size {n}",
            res2.sqrt(),
            1e-8 * a_fro
        )));
    }
    let pt_m = mp.transpose().to_owned();
    // M-orthonormality to 1e-10
    let gram = &pt_m * &pe.p;
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - want).abs());
        }
    }
    if worst > 1e-10 {
        return Err(CoreError::EigenFailure(format!(
            "eigenvector M-orthonormality defect {worst:.3e} exceeds 1e-10 at size {n}"
        )));
    }
    Ok(EigenPropagator {
        p: pe.p,
        pt_m,
        lambda: pe.lambda,
        eps,
    })
}

/// Prepares the eigendecomposition propagator on the fine FEM space.
/// `with_potential` selects the full pencil `((eps^2/2) S + V, M)` or the
/// kinetic-only pencil.
pub fn eig_prepare(ops: &AssembledOperators, with_potential: bool) -> Result<EigenPropagator> {
    let a = if with_potential {
        ops.hamiltonian()
    } else {
        ops.stiffness
            .scale_add(0.5 * ops.eps * ops.eps, &ops.potential, 0.0)
    };
    eig_from_dense(a.to_dense(), ops.mass.to_dense(), ops.eps)
}

/// Prepares the propagator on projected multiscale operators.
pub fn eig_prepare_coarse(coarse: &CoarseOperators) -> Result<EigenPropagator> {
    eig_from_dense(coarse.hamiltonian(), coarse.mass.clone(), coarse.eps)
}

/// Factorized Crank–Nicolson kinetic step
/// `(i M - (dt eps / 4) S) u' = (i M + (dt eps / 4) S) u`.
pub enum CnFactor {
    Sparse {
        lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
        mass: CsrMatrix,
        stiffness: CsrMatrix,
        tau: f64,
        dt: f64,
    },
    Dense {
        lu: PartialPivLu<C64>,
        mass: Mat<f64>,
        stiffness: Mat<f64>,
        tau: f64,
        dt: f64,
    },
}

impl CnFactor {
    pub fn dt(&self) -> f64 {
        match self {
            CnFactor::Sparse { dt, .. } => *dt,
            CnFactor::Dense { dt, .. } => *dt,
        }
    }

    /// One kinetic step. Sparse solves are residual-checked at 1e-12
    /// relative.
    pub fn apply(&self, u: &[C64]) -> Result<Vec<C64>> {
        match self {
            CnFactor::Sparse {
                lu,
                mass,
                stiffness,
                tau,
                ..
            } => {
                let mu = mass.matvec_c(u);
                let su = stiffness.matvec_c(u);
                let rhs: Vec<C64> = mu
                    .iter()
                    .zip(su.iter())
                    .map(|(&m, &s)| C64::new(-m.im + tau * s.re, m.re + tau * s.im))
                    .collect();
                let rhs_m = Mat::from_fn(u.len(), 1, |i, _| rhs[i]);
                let sol = lu.solve(&rhs_m);
                let x: Vec<C64> = (0..u.len()).map(|i| sol[(i, 0)]).collect();
                let mx = mass.matvec_c(&x);
                let sx = stiffness.matvec_c(&x);
                let mut r2 = 0.0;
                let mut b2 = 0.0;
                for i in 0..u.len() {
                    let lhs = C64::new(-mx[i].im - tau * sx[i].re, mx[i].re - tau * sx[i].im);
                    r2 += abs2(lhs - rhs[i]);
                    b2 += abs2(rhs[i]);
                }
                if r2.sqrt() > 1e-12 * b2.sqrt().max(f64::MIN_POSITIVE) {
                    return Err(CoreError::SolverFailure(format!(
                        "Crank-Nicolson solve residual {:.3e} above 1e-12 relative",
                        r2.sqrt() / b2.sqrt()
                    )));
                }
                Ok(x)
            }
            CnFactor::Dense {
                lu,
                mass,
                stiffness,
                tau,
                ..
            } => {
                let mu = dense_matvec_c(mass, u);
                let su = dense_matvec_c(stiffness, u);
                let rhs: Vec<C64> = mu
                    .iter()
                    .zip(su.iter())
                    .map(|(&m, &s)| C64::new(-m.im + tau * s.re, m.re + tau * s.im))
                    .collect();
                let rhs_m = Mat::from_fn(u.len(), 1, |i, _| rhs[i]);
                let sol = lu.solve(&rhs_m);
                Ok((0..u.len()).map(|i| sol[(i, 0)]).collect())
            }
        }
    }
}

/// Builds the sparse Crank–Nicolson factor on the fine FEM space.
pub fn cn_prepare(ops: &AssembledOperators, dt: f64) -> Result<CnFactor> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidArgument(
            "Crank-Nicolson needs dt > 0".into(),
        ));
    }
    let tau = 0.25 * dt * ops.eps;
    let n = ops.mesh.node_count();
    let mut trips: Vec<Triplet<usize, usize, C64>> = Vec::new();
    for i in 0..n {
        for (j, v) in ops.mass.row(i) {
            trips.push(Triplet::new(i, j, C64::new(0.0, v)));
        }
        for (j, v) in ops.stiffness.row(i) {
            trips.push(Triplet::new(i, j, C64::new(-tau * v, 0.0)));
        }
    }
    let lhs = SparseColMat::try_new_from_triplets(n, n, &trips)
        .map_err(|e| CoreError::SolverFailure(format!("CN triplets invalid: {e:?}")))?;
    let lu = lhs
        .sp_lu()
        .map_err(|e| CoreError::SolverFailure(format!("CN factorization failed: {e:?}")))?;
    Ok(CnFactor::Sparse {
        lu,
        mass: ops.mass.clone(),
        stiffness: ops.stiffness.clone(),
        tau,
        dt,
    })
}

/// Builds the dense Crank–Nicolson factor on projected multiscale operators.
pub fn cn_prepare_coarse(coarse: &CoarseOperators, dt: f64) -> Result<CnFactor> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidArgument(
            "Crank-Nicolson needs dt > 0".into(),
        ));
    }
    let tau = 0.25 * dt * coarse.eps;
    let n = coarse.mass.nrows();
    let lhs = Mat::<C64>::from_fn(n, n, |i, j| {
        C64::new(-tau * coarse.stiffness[(i, j)], coarse.mass[(i, j)])
    });
    let lu = lhs.partial_piv_lu();
    Ok(CnFactor::Dense {
        lu,
        mass: coarse.mass.clone(),
        stiffness: coarse.stiffness.clone(),
        tau,
        dt,
    })
}

enum LinearFlow {
    Eigen(EigenPropagator),
    Cn(CnFactor),
}

/// Everything a run needs in the fine FEM space.
pub struct FemWorkspace {
    ops: Arc<AssembledOperators>,
    flow: LinearFlow,
    v_nodal: Vec<f64>,
    sample: PotentialSample,
}

/// Everything a run needs in the multiscale space.
pub struct MsWorkspace {
    basis: Arc<MultiscaleBasis>,
    ops_fine: Arc<AssembledOperators>,
    coarse: CoarseOperators,
    flow: LinearFlow,
    v_nodal_fine: Vec<f64>,
    sample: PotentialSample,
    /// `(M^h C)^T`, the compression test matrix.
    et: Mat<f64>,
    mms_chol: Llt<f64>,
}

/// Time-stepping workspace: fine FEM or multiscale.
pub enum Workspace {
    Fem(FemWorkspace),
    Multiscale(Box<MsWorkspace>),
}

impl Workspace {
    /// Fine-space workspace. The linear flow is built for `scheme`; `dt` is
    /// baked into the Crank–Nicolson factor and must match the run config.
    pub fn fem(
        ops: Arc<AssembledOperators>,
        scheme: Scheme,
        dt: f64,
        sample: &PotentialSample,
    ) -> Result<Self> {
        let flow = match scheme {
            Scheme::Eigen => LinearFlow::Eigen(eig_prepare(&ops, true)?),
            Scheme::CrankNicolson => LinearFlow::Cn(cn_prepare(&ops, dt)?),
        };
        let v_nodal = sample.nodal_values(&ops.mesh);
        Ok(Workspace::Fem(FemWorkspace {
            ops,
            flow,
            v_nodal,
            sample: sample.clone(),
        }))
    }

    /// Multiscale workspace over an already-built basis.
    pub fn multiscale(
        basis: Arc<MultiscaleBasis>,
        ops_fine: Arc<AssembledOperators>,
        scheme: Scheme,
        dt: f64,
        sample: &PotentialSample,
    ) -> Result<Self> {
        let coarse = crate::msbasis::project_operators(&basis, &ops_fine)?;
        let flow = match scheme {
            Scheme::Eigen => LinearFlow::Eigen(eig_prepare_coarse(&coarse)?),
            Scheme::CrankNicolson => LinearFlow::Cn(cn_prepare_coarse(&coarse, dt)?),
        };
        let v_nodal_fine = sample.nodal_values(&ops_fine.mesh);
        let e = crate::msbasis::sparse_times_dense(&ops_fine.mass, basis.coefficients());
        let et = e.transpose().to_owned();
        let mms_chol = coarse.mass.llt(Side::Lower).map_err(|_| {
            CoreError::SolverFailure("projected mass matrix is not positive definite".into())
        })?;
        Ok(Workspace::Multiscale(Box::new(MsWorkspace {
            basis,
            ops_fine,
            coarse,
            flow,
            v_nodal_fine,
            sample: sample.clone(),
            et,
            mms_chol,
        })))
    }

    pub fn fine_ops(&self) -> &Arc<AssembledOperators> {
        match self {
            Workspace::Fem(w) => &w.ops,
            Workspace::Multiscale(w) => &w.ops_fine,
        }
    }

    pub fn sample(&self) -> &PotentialSample {
        match self {
            Workspace::Fem(w) => &w.sample,
            Workspace::Multiscale(w) => &w.sample,
        }
    }

    pub fn coarse_operators(&self) -> Option<&CoarseOperators> {
        match self {
            Workspace::Fem(_) => None,
            Workspace::Multiscale(w) => Some(&w.coarse),
        }
    }

    pub fn basis(&self) -> Option<&Arc<MultiscaleBasis>> {
        match self {
            Workspace::Fem(_) => None,
            Workspace::Multiscale(w) => Some(&w.basis),
        }
    }

    /// Compresses a fine field into the workspace's state representation.
    pub fn initial_state(&self, initial_fine: &WaveField) -> State {
        match self {
            Workspace::Fem(_) => initial_fine.values.clone(),
            Workspace::Multiscale(w) => w.compress(&initial_fine.values),
        }
    }
}

impl MsWorkspace {
    /// L2-optimal compression `(M^ms)^{-1} C^T M^h u`.
    fn compress(&self, fine: &[C64]) -> Vec<C64> {
        let rhs = &self.et * pack_complex(fine);
        unpack_complex(&self.mms_chol.solve(&rhs))
    }

    fn reconstruct(&self, uhat: &[C64]) -> Vec<C64> {
        dense_matvec_c(self.basis.coefficients(), uhat)
    }
}

/// State advanced by [`step`]: fine nodal coefficients in the FEM space,
/// coarse multiscale coefficients otherwise.
pub type State = Vec<C64>;

/// One full Strang step: phase half-step, linear full step, phase half-step
/// (the second phase sees the post-linear-step field).
pub fn step(ws: &Workspace, cfg: &StepperConfig, state: &State) -> Result<State> {
    let half = 0.5 * cfg.dt;
    match ws {
        Workspace::Fem(w) => match &w.flow {
            LinearFlow::Eigen(eig) => {
                let u = phase_flow_cubic(state, half, cfg.lambda, cfg.eps);
                let u = eig.apply(&u, cfg.dt);
                Ok(phase_flow_cubic(&u, half, cfg.lambda, cfg.eps))
            }
            LinearFlow::Cn(cn) => {
                let u = phase_flow_potential_cubic(state, &w.v_nodal, half, cfg.lambda, cfg.eps)?;
                let u = cn.apply(&u)?;
                phase_flow_potential_cubic(&u, &w.v_nodal, half, cfg.lambda, cfg.eps)
            }
        },
        Workspace::Multiscale(w) => match &w.flow {
            LinearFlow::Eigen(eig) => {
                if cfg.lambda == 0.0 {
                    // phases are the identity; stay in coarse coordinates
                    return Ok(eig.apply(state, cfg.dt));
                }
                let fine = w.reconstruct(state);
                let fine = phase_flow_cubic(&fine, half, cfg.lambda, cfg.eps);
                let uhat = w.compress(&fine);
                let uhat = eig.apply(&uhat, cfg.dt);
                let fine = w.reconstruct(&uhat);
                let fine = phase_flow_cubic(&fine, half, cfg.lambda, cfg.eps);
                Ok(w.compress(&fine))
            }
            LinearFlow::Cn(cn) => {
                let fine = w.reconstruct(state);
                let fine = phase_flow_potential_cubic(
                    &fine,
                    &w.v_nodal_fine,
                    half,
                    cfg.lambda,
                    cfg.eps,
                )?;
                let uhat = w.compress(&fine);
                let uhat = cn.apply(&uhat)?;
                let fine = w.reconstruct(&uhat);
                let fine = phase_flow_potential_cubic(
                    &fine,
                    &w.v_nodal_fine,
                    half,
                    cfg.lambda,
                    cfg.eps,
                )?;
                Ok(w.compress(&fine))
            }
        },
    }
}

/// Output of [`run`]: recorded observables, the final fine-mesh field, the
/// final coarse coefficients for multiscale runs, and optionally the
/// fine-mesh trajectory at the observable cadence.
pub struct RunOutput {
    pub series: ObservableSeries,
    pub final_fine: WaveField,
    pub final_coarse: Option<Vec<C64>>,
    pub trajectory: Option<Vec<WaveField>>,
}

fn fine_field(ws: &Workspace, state: &State, t: f64) -> Result<WaveField> {
    match ws {
        Workspace::Fem(w) => WaveField::new(state.clone(), Arc::clone(&w.ops.mesh), t),
        Workspace::Multiscale(w) => {
            WaveField::new(w.reconstruct(state), Arc::clone(&w.ops_fine.mesh), t)
        }
    }
}

/// Advances `initial_fine` by `cfg.steps` steps, recording mass, energy and
/// the second moment at the configured cadence. Observables are always
/// evaluated on the fine mesh; multiscale states are reconstructed first.
pub fn run(ws: &Workspace, cfg: &StepperConfig, initial_fine: &WaveField) -> Result<RunOutput> {
    cfg.validate()?;
    let flow = match ws {
        Workspace::Fem(w) => &w.flow,
        Workspace::Multiscale(w) => &w.flow,
    };
    if let LinearFlow::Cn(cn) = flow {
        if (cn.dt() - cfg.dt).abs() > 1e-15 * cfg.dt.abs().max(1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "Crank-Nicolson factor was built for dt = {}, run requested dt = {}",
                cn.dt(),
                cfg.dt
            )));
        }
    }
    if !Arc::ptr_eq(&initial_fine.mesh, &ws.fine_ops().mesh) {
        return Err(CoreError::MeshMismatch(
            "initial field does not live on the workspace mesh".into(),
        ));
    }

    let mut state = ws.initial_state(initial_fine);
    let mut series = ObservableSeries::default();
    let mut trajectory = if cfg.keep_trajectory {
        Some(Vec::new())
    } else {
        None
    };
    let t0 = initial_fine.time;

    let mut record = |series: &mut ObservableSeries,
                      trajectory: &mut Option<Vec<WaveField>>,
                      state: &State,
                      t: f64|
     -> Result<WaveField> {
        let fine = fine_field(ws, state, t)?;
        let ops = ws.fine_ops();
        series.t.push(t);
        series.mass.push(observables::mass(&fine, ops)?);
        series
            .energy
            .push(observables::energy(&fine, ops, ws.sample(), cfg.lambda)?);
        series
            .second_moment
            .push(observables::second_moment(&fine, ops)?);
        if let Some(traj) = trajectory.as_mut() {
            traj.push(fine.clone());
        }
        Ok(fine)
    };

    let mut last = record(&mut series, &mut trajectory, &state, t0)?;
    for n in 1..=cfg.steps {
        state = step(ws, cfg, &state)?;
        if state.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "state became non-finite at step {n}"
            )));
        }
        let t = t0 + n as f64 * cfg.dt;
        let due = (cfg.obs_every != 0 && n % cfg.obs_every == 0) || n == cfg.steps;
        if due {
            last = record(&mut series, &mut trajectory, &state, t)?;
        }
    }
    Ok(RunOutput {
        series,
        final_fine: last,
        final_coarse: match ws {
            Workspace::Fem(_) => None,
            Workspace::Multiscale(_) => Some(state),
        },
        trajectory,
    })
}
