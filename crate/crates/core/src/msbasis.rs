//! Multiscale basis functions by equality-constrained quadratic minimization.
//!
//! Each basis function minimizes the energy form
//! `a(phi, phi) = (eps^2/2)(grad phi, grad phi) + (v phi, phi)` over the fine
//! P1 space subject to the rescaled orthogonality constraints
//! `(phi_p, phi_q^H) = lambda(H)_p delta_pq`, with
//! `lambda(H)_p = (1, phi_p^H)`. The constraints are global (no patch
//! truncation), so one sparse factorization of the KKT saddle matrix is
//! shared by all right-hand sides.

use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{CoreError, Result};
use crate::fem::{AssembledOperators, WaveField};
use crate::linalg::{CooBuilder, CsrMatrix};
use crate::mesh::{nodal_patch, MeshPair};
use crate::quad;
use crate::C64;

/// The linear map from coarse multiscale coefficients to fine nodal
/// coefficients, with the constraint weights it was built with.
pub struct MultiscaleBasis {
    pair: Arc<MeshPair>,
    /// Dense `N_h x N_H`; column `p` holds the fine coefficients of `phi_p`.
    c: Mat<f64>,
    /// `lambda(H)_p = (1, phi_p^H)` per coarse node.
    lambda_h: Vec<f64>,
    /// Constraint matrix `B_{q,s} = (phi_s^h, phi_q^H)` (sparse `N_H x N_h`).
    b: CsrMatrix,
    eps: f64,
    /// Max relative constraint residual `|B C - diag(lambda)| / max lambda`
    /// measured after the solve.
    constraint_residual: f64,
}

impl MultiscaleBasis {
    pub fn pair(&self) -> &Arc<MeshPair> {
        &self.pair
    }

    pub fn coefficients(&self) -> &Mat<f64> {
        &self.c
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda_h
    }

    pub fn constraint_matrix(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn constraint_residual(&self) -> f64 {
        self.constraint_residual
    }

    pub fn coarse_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn fine_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Builds a basis object directly from a coefficient matrix (used by the
    /// reduced-basis online stage); the constraint residual is measured, not
    /// assumed.
    pub(crate) fn from_coefficients(
        pair: Arc<MeshPair>,
        c: Mat<f64>,
        lambda_h: Vec<f64>,
        b: CsrMatrix,
        eps: f64,
    ) -> Self {
        let rel = constraint_residual_of(&b, &c, &lambda_h);
        MultiscaleBasis {
            pair,
            c,
            lambda_h,
            b,
            eps,
            constraint_residual: rel,
        }
    }
}

fn constraint_residual_of(b: &CsrMatrix, c: &Mat<f64>, lambda: &[f64]) -> f64 {
    let nc = lambda.len();
    let lam_max = lambda.iter().cloned().fold(f64::MIN, f64::max).abs();
    let mut worst = 0.0_f64;
    for q in 0..nc {
        let mut row_acc = vec![0.0; nc];
        for (s, v) in b.row(q) {
            for p in 0..nc {
                row_acc[p] += v * c[(s, p)];
            }
        }
        for p in 0..nc {
            let want = if p == q { lambda[p] } else { 0.0 };
            worst = worst.max((row_acc[p] - want).abs());
        }
    }
    worst / lam_max.max(f64::MIN_POSITIVE)
}

/// Weighted Clément-type quasi-interpolation coefficients
/// `(f, phi_p^H) / (1, phi_p^H)` of a fine-mesh field.
pub fn clement_interpolate(field: &WaveField, pair: &MeshPair) -> Result<Vec<C64>> {
    if !Arc::ptr_eq(&field.mesh, pair.fine()) {
        return Err(CoreError::MeshMismatch(
            "field does not live on the pair's fine mesh".into(),
        ));
    }
    let (b, lambda) = constraint_operator(pair)?;
    let bf = b.matvec_c(&field.values);
    Ok(bf
        .iter()
        .zip(lambda.iter())
        .map(|(&z, &l)| C64::new(z.re / l, z.im / l))
        .collect())
}

/// Builds `B = Pi^T M` (coarse hats tested against fine hats) and the weights
/// `lambda_p = (1, phi_p^H)`, using the fine mass matrix so the inner
/// products are exact for the nested P1 spaces.
pub fn constraint_operator(pair: &MeshPair) -> Result<(CsrMatrix, Vec<f64>)> {
    let fine = pair.fine();
    let nh = fine.node_count();
    let nc = pair.coarse().node_count();
    let mut mb = CooBuilder::new(nh, nh);
    for cell in fine.cells() {
        let nv = cell.node_count(fine.dimension());
        for qp in quad::cell_points(fine, cell) {
            for a in 0..nv {
                for bb in 0..nv {
                    mb.add(
                        cell.nodes[a],
                        cell.nodes[bb],
                        qp.weight * qp.hats[a] * qp.hats[bb],
                    );
                }
            }
        }
    }
    let m = mb.build();
    let pi = pair.prolongation();
    // B = Pi^T M: B_{q,s} = sum_r Pi_{r,q} M_{r,s}
    let mut bb = CooBuilder::new(nc, nh);
    for r in 0..nh {
        for (q, pv) in pi.row(r) {
            for (s, mv) in m.row(r) {
                bb.add(q, s, pv * mv);
            }
        }
    }
    let b = bb.build();
    let lambda: Vec<f64> = (0..nc).map(|q| b.row(q).map(|(_, v)| v).sum()).collect();
    Ok((b, lambda))
}

/// Solves the KKT saddle systems for every coarse node and assembles the
/// basis matrix. The saddle matrix `[A B^T; B 0]` is factorized once (sparse
/// LU) and reused across all `N_H` right-hand sides `[0; lambda(H)_p e_p]`.
pub fn build_basis(ops_fine: &AssembledOperators, pair: &Arc<MeshPair>) -> Result<MultiscaleBasis> {
    build_basis_with_weights(ops_fine, pair, None)
}

/// As [`build_basis`], with optional explicit constraint weights replacing
/// `lambda(H)` (used by the normalization-independence diagnostics).
pub fn build_basis_with_weights(
    ops_fine: &AssembledOperators,
    pair: &Arc<MeshPair>,
    weights: Option<&[f64]>,
) -> Result<MultiscaleBasis> {
    if !Arc::ptr_eq(&ops_fine.mesh, pair.fine()) {
        return Err(CoreError::MeshMismatch(
            "operators do not live on the pair's fine mesh".into(),
        ));
    }
    let nh = pair.fine().node_count();
    let nc = pair.coarse().node_count();
    let (b, lambda_nat) = constraint_operator(pair)?;
    let lambda: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != nc {
                return Err(CoreError::InvalidArgument(
                    "weight vector length must equal the coarse node count".into(),
                ));
            }
            w.to_vec()
        }
        None => lambda_nat,
    };

    let a = ops_fine.hamiltonian();
    if min_diagonal(&ops_fine.potential) < 0.0 {
        log::info!(
            "potential takes negative values; the energy form may be indefinite (saddle solve proceeds)"
        );
    }

    // saddle matrix [A B^T; B 0]
    let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();
    for i in 0..nh {
        for (j, v) in a.row(i) {
            trips.push(Triplet::new(i, j, v));
        }
    }
    for q in 0..nc {
        for (s, v) in b.row(q) {
            trips.push(Triplet::new(nh + q, s, v));
            trips.push(Triplet::new(s, nh + q, v));
        }
    }
    let kkt = SparseColMat::try_new_from_triplets(nh + nc, nh + nc, &trips)
        .map_err(|e| CoreError::SolverFailure(format!("KKT triplets invalid: {e:?}")))?;
    let lu = kkt.sp_lu().map_err(|e| {
        CoreError::SolverFailure(format!(
            "KKT factorization failed at size {} (suspect rank-deficient constraints \
             or an energy form indefinite beyond the constraint complement): {e:?}",
            nh + nc
        ))
    })?;

    let mut rhs = Mat::<f64>::zeros(nh + nc, nc);
    for p in 0..nc {
        rhs[(nh + p, p)] = lambda[p];
    }
    let sol = lu.solve(&rhs);
    let c = sol.subrows(0, nh).to_owned();

    let rel = constraint_residual_of(&b, &c, &lambda);
    if rel > 1e-6 {
        return Err(CoreError::SolverFailure(format!(
            "basis constraint residual {rel:.3e} (relative) indicates a failed saddle solve"
        )));
    }
    Ok(MultiscaleBasis {
        pair: Arc::clone(pair),
        c,
        lambda_h: lambda,
        b,
        eps: ops_fine.eps,
        constraint_residual: rel,
    })
}

fn min_diagonal(m: &CsrMatrix) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..m.nrows() {
        worst = worst.min(m.get(i, i));
    }
    worst
}

/// Galerkin operators congruence-projected onto the multiscale space:
/// `X^ms = C^T X^h C` for mass, stiffness and potential.
pub struct CoarseOperators {
    pub mass: Mat<f64>,
    pub stiffness: Mat<f64>,
    pub potential: Mat<f64>,
    pub eps: f64,
}

impl CoarseOperators {
    pub fn hamiltonian(&self) -> Mat<f64> {
        let n = self.mass.nrows();
        let k = 0.5 * self.eps * self.eps;
        Mat::from_fn(n, n, |i, j| {
            k * self.stiffness[(i, j)] + self.potential[(i, j)]
        })
    }
}

pub fn project_operators(
    basis: &MultiscaleBasis,
    ops_fine: &AssembledOperators,
) -> Result<CoarseOperators> {
    if !Arc::ptr_eq(&ops_fine.mesh, basis.pair.fine()) {
        return Err(CoreError::MeshMismatch(
            "operators do not live on the basis's fine mesh".into(),
        ));
    }
    let project = |x: &CsrMatrix| -> Mat<f64> {
        let xc = sparse_times_dense(x, &basis.c);
        basis.c.transpose() * &xc
    };
    Ok(CoarseOperators {
        mass: project(&ops_fine.mass),
        stiffness: project(&ops_fine.stiffness),
        potential: project(&ops_fine.potential),
        eps: ops_fine.eps,
    })
}

pub(crate) fn sparse_times_dense(a: &CsrMatrix, b: &Mat<f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for (k, v) in a.row(i) {
            for j in 0..b.ncols() {
                out[(i, j)] += v * b[(k, j)];
            }
        }
    }
    out
}

/// Fine-mesh wave field `C uhat` from coarse multiscale coefficients.
pub fn reconstruct_fine(basis: &MultiscaleBasis, uhat: &[C64], time: f64) -> Result<WaveField> {
    if uhat.len() != basis.coarse_dim() {
        return Err(CoreError::InvalidArgument(format!(
            "coarse coefficient vector has length {}, expected {}",
            uhat.len(),
            basis.coarse_dim()
        )));
    }
    let vals = crate::linalg::dense_matvec_c(&basis.c, uhat);
    WaveField::new(vals, Arc::clone(basis.pair.fine()), time)
}

/// Tail gradient energies `e_l = ||grad phi_p||_{L2(D \ D_l)}` for
/// `l = 0..l_max`, computed by restricting the stiffness quadratic form to
/// fine cells whose coarse parent lies outside the layer-`l` patch.
pub fn decay_profile(basis: &MultiscaleBasis, p: usize, l_max: usize) -> Result<Vec<f64>> {
    let pair = &basis.pair;
    let fine = pair.fine();
    if p >= basis.coarse_dim() {
        return Err(CoreError::InvalidArgument(format!(
            "coarse node {p} out of range"
        )));
    }
    let col = basis.c.col(p);
    let mut cell_energy = vec![0.0; fine.cells().len()];
    for (ci, cell) in fine.cells().iter().enumerate() {
        let nv = cell.node_count(fine.dimension());
        let grads = quad::cell_gradients(fine, cell);
        let mut g = [0.0, 0.0];
        for a in 0..nv {
            let u = col[cell.nodes[a]];
            g[0] += u * grads[a][0];
            g[1] += u * grads[a][1];
        }
        cell_energy[ci] = cell.measure * (g[0] * g[0] + g[1] * g[1]);
    }
    let parent: Vec<usize> = (0..fine.cells().len())
        .map(|ci| pair.coarse_cell_of_fine_cell(ci))
        .collect();
    let mut out = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let patch = nodal_patch(pair, p, l)?;
        let inside: std::collections::BTreeSet<usize> = patch.cells.into_iter().collect();
        let tail: f64 = cell_energy
            .iter()
            .zip(parent.iter())
            .filter(|(_, par)| !inside.contains(par))
            .map(|(e, _)| e)
            .sum();
        out.push(tail.max(0.0).sqrt());
    }
    Ok(out)
}

/// Projects a fine vector onto the Clément kernel space
/// `W_h = { w : B w = 0 }`: `w - B^T (B B^T)^{-1} B w`.
pub fn project_to_kernel(pair: &MeshPair, w: &[f64]) -> Result<Vec<f64>> {
    let (b, _) = constraint_operator(pair)?;
    let nc = b.nrows();
    let bw = b.matvec(w);
    let bbt = Mat::from_fn(nc, nc, |i, j| {
        let mut acc = 0.0;
        for (s, v) in b.row(i) {
            acc += v * b.get(j, s);
        }
        acc
    });
    let rhs = Mat::from_fn(nc, 1, |i, _| bw[i]);
    let sol = bbt
        .llt(faer::Side::Lower)
        .map_err(|_| CoreError::SolverFailure("constraint Gram not positive definite".into()))?
        .solve(&rhs);
    let mut out = w.to_vec();
    for q in 0..nc {
        for (s, v) in b.row(q) {
            out[s] -= v * sol[(q, 0)];
        }
    }
    Ok(out)
}
