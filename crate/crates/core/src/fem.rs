//! P1 finite-element assembly on periodic meshes: mass, stiffness and
//! potential matrices, L² projection onto the FEM space, discrete norms, and
//! cross-mesh errors for nested pairs.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::linalg::{CooBuilder, CsrMatrix, SpdSolver};
use crate::mesh::{Mesh, MeshPair};
use crate::quad;
use crate::{abs2, C64};

/// Anything that can be evaluated as a real potential over the domain.
pub trait PotentialField: Sync {
    fn value(&self, x: [f64; 2]) -> f64;
}

impl<F: Fn([f64; 2]) -> f64 + Sync> PotentialField for F {
    fn value(&self, x: [f64; 2]) -> f64 {
        self(x)
    }
}

/// Zero potential.
pub struct ZeroPotential;

impl PotentialField for ZeroPotential {
    fn value(&self, _x: [f64; 2]) -> f64 {
        0.0
    }
}

/// Sparse Galerkin operators of one mesh: mass `M`, stiffness `S` (gradient
/// Gram matrix) and potential `V`, plus the effective Planck constant the
/// Hamiltonian `(eps^2/2) S + V` is built with.
pub struct AssembledOperators {
    pub mesh: Arc<Mesh>,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub potential: CsrMatrix,
    pub eps: f64,
    mass_solver: SpdSolver,
}

impl std::fmt::Debug for AssembledOperators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssembledOperators")
            .field("nodes", &self.mesh.node_count())
            .field("eps", &self.eps)
            .finish()
    }
}

impl AssembledOperators {
    /// `(eps^2/2) S + V`, the Hermitian generator of the linear flow.
    pub fn hamiltonian(&self) -> CsrMatrix {
        self.stiffness
            .scale_add(0.5 * self.eps * self.eps, &self.potential, 1.0)
    }

    pub fn mass_solver(&self) -> &SpdSolver {
        &self.mass_solver
    }

    /// Re-assembles only the potential matrix for a new potential on the same
    /// mesh, reusing mass and stiffness.
    pub fn with_potential(&self, v: &dyn PotentialField) -> Result<AssembledOperators> {
        let potential = assemble_potential(&self.mesh, v)?;
        Ok(AssembledOperators {
            mesh: Arc::clone(&self.mesh),
            mass: self.mass.clone(),
            stiffness: self.stiffness.clone(),
            potential,
            eps: self.eps,
            mass_solver: SpdSolver::new(&self.mass)?,
        })
    }
}

/// Complex nodal coefficient vector on a mesh at a physical time.
#[derive(Clone)]
pub struct WaveField {
    pub values: Vec<C64>,
    pub mesh: Arc<Mesh>,
    pub time: f64,
}

impl WaveField {
    pub fn new(values: Vec<C64>, mesh: Arc<Mesh>, time: f64) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(CoreError::MeshMismatch(format!(
                "field length {} does not match node count {}",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(Self { values, mesh, time })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        Self {
            values: vec![C64::new(0.0, 0.0); mesh.node_count()],
            mesh,
            time: 0.0,
        }
    }

    /// Nodal mass density `|psi(x_p)|^2`.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|&z| abs2(z)).collect()
    }
}

/// Norm kinds for [`norm`] and [`error_between`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    L4,
}

fn assemble_potential(mesh: &Arc<Mesh>, v: &dyn PotentialField) -> Result<CsrMatrix> {
    let n = mesh.node_count();
    let mut vb = CooBuilder::new(n, n);
    for (ci, cell) in mesh.cells().iter().enumerate() {
        let nv = cell.node_count(mesh.dimension());
        for qp in quad::cell_points(mesh, cell) {
            let val = v.value(qp.x);
            if !val.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "potential value {val} at quadrature point ({}, {}) in cell {ci}",
                    qp.x[0], qp.x[1]
                )));
            }
            for a in 0..nv {
                for b in 0..nv {
                    vb.add(
                        cell.nodes[a],
                        cell.nodes[b],
                        qp.weight * val * qp.hats[a] * qp.hats[b],
                    );
                }
            }
        }
    }
    Ok(vb.build())
}

/// Assembles mass, stiffness and potential matrices by cellwise quadrature.
///
/// Mass and stiffness products of P1 hats are polynomials the rules integrate
/// exactly; the potential matrix uses the same rules, pointwise-evaluating
/// `v` (no cut-cell treatment for discontinuous potentials).
pub fn assemble(
    mesh: &Arc<Mesh>,
    v: &dyn PotentialField,
    eps: f64,
) -> Result<AssembledOperators> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "effective Planck constant must be positive and finite, got {eps}"
        )));
    }
    let n = mesh.node_count();
    let mut mb = CooBuilder::new(n, n);
    let mut sb = CooBuilder::new(n, n);
    for cell in mesh.cells() {
        let nv = cell.node_count(mesh.dimension());
        let grads = quad::cell_gradients(mesh, cell);
        for a in 0..nv {
            for b in 0..nv {
                let gdot = grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1];
                sb.add(cell.nodes[a], cell.nodes[b], cell.measure * gdot);
            }
        }
        for qp in quad::cell_points(mesh, cell) {
            for a in 0..nv {
                for b in 0..nv {
                    mb.add(
                        cell.nodes[a],
                        cell.nodes[b],
                        qp.weight * qp.hats[a] * qp.hats[b],
                    );
                }
            }
        }
    }
    let mass = mb.build();
    let stiffness = sb.build();
    let potential = assemble_potential(mesh, v)?;
    let mass_solver = SpdSolver::new(&mass)?;
    Ok(AssembledOperators {
        mesh: Arc::clone(mesh),
        mass,
        stiffness,
        potential,
        eps,
        mass_solver,
    })
}

/// L² projection of a function onto the P1 space: solves `M U = b` with
/// `b_p = (f, phi_p)` by cell quadrature.
pub fn project_l2<F>(f: F, ops: &AssembledOperators) -> Result<WaveField>
where
    F: Fn([f64; 2]) -> C64,
{
    let mesh = &ops.mesh;
    let n = mesh.node_count();
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    for cell in mesh.cells() {
        let nv = cell.node_count(mesh.dimension());
        for qp in quad::cell_points(mesh, cell) {
            let val = f(qp.x);
            for a in 0..nv {
                let w = qp.weight * qp.hats[a];
                rhs[cell.nodes[a]] += C64::new(w * val.re, w * val.im);
            }
        }
    }
    let u = ops.mass_solver().solve_c(&rhs, 1e-12)?;
    WaveField::new(u, Arc::clone(mesh), 0.0)
}

/// Discrete norm of a wave field.
///
/// `L2 = sqrt(U* M U)`, `H1 = sqrt(U* M U + U* S U)` (full norm), and
/// `L4` integrates `|psi_h|^4` of the P1 interpolant cellwise.
pub fn norm(field: &WaveField, ops: &AssembledOperators, kind: NormKind) -> Result<f64> {
    if !Arc::ptr_eq(&field.mesh, &ops.mesh) {
        return Err(CoreError::MeshMismatch(
            "field and operators live on different meshes".into(),
        ));
    }
    match kind {
        NormKind::L2 => Ok(ops.mass.quadratic_form(&field.values).max(0.0).sqrt()),
        NormKind::H1 => {
            let m = ops.mass.quadratic_form(&field.values);
            let s = ops.stiffness.quadratic_form(&field.values);
            Ok((m + s).max(0.0).sqrt())
        }
        NormKind::L4 => {
            let mesh = &field.mesh;
            let mut acc = 0.0;
            for cell in mesh.cells() {
                let nv = cell.node_count(mesh.dimension());
                for qp in quad::cell_points(mesh, cell) {
                    let mut z = C64::new(0.0, 0.0);
                    for a in 0..nv {
                        let u = field.values[cell.nodes[a]];
                        z += C64::new(qp.hats[a] * u.re, qp.hats[a] * u.im);
                    }
                    let d = abs2(z);
                    acc += qp.weight * d * d;
                }
            }
            Ok(acc.max(0.0).powf(0.25))
        }
    }
}

/// Prolongs a coarse-mesh field to the fine mesh of a pair by P1 nodal
/// injection (exact for nested spaces).
pub fn prolong(coarse_field: &WaveField, pair: &MeshPair) -> Result<WaveField> {
    if !Arc::ptr_eq(&coarse_field.mesh, pair.coarse()) {
        return Err(CoreError::MeshMismatch(
            "field does not live on the pair's coarse mesh".into(),
        ));
    }
    let vals = pair.prolongation().matvec_c(&coarse_field.values);
    WaveField::new(vals, Arc::clone(pair.fine()), coarse_field.time)
}

/// Norm of the difference of two fields; `other` may live on the nested
/// coarse mesh of `pair`, in which case it is prolonged first.
pub fn error_between(
    field_fine: &WaveField,
    field_other: &WaveField,
    pair: Option<&MeshPair>,
    ops_fine: &AssembledOperators,
    kind: NormKind,
) -> Result<f64> {
    let other_on_fine = if Arc::ptr_eq(&field_other.mesh, &field_fine.mesh) {
        field_other.clone()
    } else {
        let pair = pair.ok_or_else(|| {
            CoreError::MeshMismatch("fields on different meshes and no mesh pair given".into())
        })?;
        if !Arc::ptr_eq(&field_fine.mesh, pair.fine()) {
            return Err(CoreError::MeshMismatch(
                "fine field does not live on the pair's fine mesh".into(),
            ));
        }
        prolong(field_other, pair)?
    };
    let diff: Vec<C64> = field_fine
        .values
        .iter()
        .zip(other_on_fine.values.iter())
        .map(|(&a, &b)| a - b)
        .collect();
    let dfield = WaveField::new(diff, Arc::clone(&field_fine.mesh), field_fine.time)?;
    norm(&dfield, ops_fine, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh_pair, build_periodic_mesh};
    use std::f64::consts::PI;

    fn ops_1d(n: usize, dom: (f64, f64)) -> AssembledOperators {
        let mesh = Arc::new(build_periodic_mesh(1, &[dom], &[n]).unwrap());
        assemble(&mesh, &ZeroPotential, 1.0).unwrap()
    }

    #[test]
    fn uniform_1d_mass_stiffness_entries() {
        let n = 8;
        let ops = ops_1d(n, (0.0, 1.0));
        let h = 1.0 / n as f64;
        for i in 0..n {
            assert!((ops.mass.get(i, i) - 2.0 * h / 3.0).abs() < 1e-15);
            assert!((ops.mass.get(i, (i + 1) % n) - h / 6.0).abs() < 1e-15);
            assert!((ops.stiffness.get(i, i) - 2.0 / h).abs() < 1e-11);
            assert!((ops.stiffness.get(i, (i + 1) % n) + 1.0 / h).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_and_unit_potentials() {
        let mesh = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[16]).unwrap());
        let ops0 = assemble(&mesh, &ZeroPotential, 1.0).unwrap();
        for i in 0..16 {
            assert!(ops0.potential.row(i).all(|(_, v)| v == 0.0));
        }
        let ops1 = assemble(&mesh, &|_x: [f64; 2]| 1.0, 1.0).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert!((ops1.potential.get(i, j) - ops1.mass.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn non_finite_potential_reports_cell() {
        let mesh = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[4]).unwrap());
        let bad = |x: [f64; 2]| if x[0] > 0.5 { f64::NAN } else { 0.0 };
        let err = assemble(&mesh, &bad, 1.0).unwrap_err();
        assert!(format!("{err}").contains("cell"));
    }

    #[test]
    fn row_sum_identities() {
        let mesh = Arc::new(build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 2.0)], &[6, 4]).unwrap());
        let ops = assemble(&mesh, &|x: [f64; 2]| x[0] + x[1], 0.5).unwrap();
        let n = mesh.node_count();
        let cell_a = 0.5 * (1.0 / 6.0) * (2.0 / 4.0);
        for i in 0..n {
            let srow: f64 = ops.stiffness.row(i).map(|(_, v)| v).sum();
            assert!(srow.abs() < 1e-12, "stiffness row sum {srow}");
            let mrow: f64 = ops.mass.row(i).map(|(_, v)| v).sum();
            // (1, phi_i) = 6 triangles * area/3 each on this uniform grid
            assert!((mrow - 2.0 * cell_a).abs() < 1e-14);
        }
        assert!(ops.mass.max_asymmetry() == 0.0);
        assert!(ops.stiffness.max_asymmetry() == 0.0);
        assert!(ops.potential.max_asymmetry() < 1e-16);
    }

    #[test]
    fn linear_potential_exact_quadrature() {
        // oracle: composite 10-point Gauss-Legendre per cell
        let mesh = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[4]).unwrap());
        let vfun = |x: [f64; 2]| 3.0 * x[0] - 0.7;
        let ops = assemble(&mesh, &vfun, 1.0).unwrap();
        let gl10_x = [
            -0.9739065285171717,
            -0.8650633666889845,
            -0.6794095682990244,
            -0.4333953941292472,
            -0.14887433898163122,
            0.14887433898163122,
            0.4333953941292472,
            0.6794095682990244,
            0.8650633666889845,
            0.9739065285171717,
        ];
        let gl10_w = [
            0.06667134430868814,
            0.14945134915058059,
            0.21908636251598204,
            0.26926671930999635,
            0.29552422471475287,
            0.29552422471475287,
            0.26926671930999635,
            0.21908636251598204,
            0.14945134915058059,
            0.06667134430868814,
        ];
        let h = 0.25;
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let mut exact = 0.0;
                for c in 0..n {
                    let (a, b) = (c as f64 * h, (c as f64 + 1.0) * h);
                    let hat = |node: usize, x: f64| -> f64 {
                        let lo = node as f64 * h;
                        let d = {
                            let mut d = (x - lo).abs();
                            d = d.min((x - lo - 1.0).abs());
                            d.min((x - lo + 1.0).abs())
                        };
                        (1.0 - d / h).max(0.0)
                    };
                    for q in 0..10 {
                        let x = 0.5 * (a + b) + 0.5 * (b - a) * gl10_x[q];
                        exact += 0.5 * (b - a) * gl10_w[q] * vfun([x, 0.0]) * hat(i, x) * hat(j, x);
                    }
                }
                assert!(
                    (ops.potential.get(i, j) - exact).abs() < 1e-14,
                    "V[{i},{j}] = {} vs {}",
                    ops.potential.get(i, j),
                    exact
                );
            }
        }
    }

    #[test]
    fn project_constant_and_hat() {
        let ops = ops_1d(16, (0.0, 1.0));
        let one = project_l2(|_| C64::new(1.0, 0.0), &ops).unwrap();
        for &v in &one.values {
            assert!(abs2(v - C64::new(1.0, 0.0)).sqrt() < 1e-12);
        }
        // projecting the hat at node 3 returns e_3
        let mesh = Arc::clone(&ops.mesh);
        let h = 1.0 / 16.0;
        let hat3 = move |x: [f64; 2]| {
            let lo = 3.0 * h;
            let mut d = (x[0] - lo).abs();
            d = d.min((x[0] - lo - 1.0).abs()).min((x[0] - lo + 1.0).abs());
            C64::new((1.0 - d / h).max(0.0), 0.0)
        };
        let f = project_l2(hat3, &ops).unwrap();
        for p in 0..mesh.node_count() {
            let want = if p == 3 { 1.0 } else { 0.0 };
            assert!((f.values[p].re - want).abs() < 1e-10 && f.values[p].im.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_projection_mass_converges() {
        // closed form: integral of sqrt(10 pi) exp(-40 x^2) over R equals pi/2
        let mut prev_err = f64::INFINITY;
        for n in [128usize, 256, 512] {
            let mesh = Arc::new(build_periodic_mesh(1, &[(-PI, PI)], &[n]).unwrap());
            let ops = assemble(&mesh, &ZeroPotential, 1.0).unwrap();
            let f = project_l2(
                |x| C64::new((10.0 * PI).powf(0.25) * (-20.0 * x[0] * x[0]).exp(), 0.0),
                &ops,
            )
            .unwrap();
            let mass = ops.mass.quadratic_form(&f.values);
            let err = (mass - PI / 2.0).abs();
            assert!(err < prev_err);
            prev_err = err;
        }
        assert!(prev_err < 1e-6, "final error {prev_err}");
    }

    #[test]
    fn norms_of_simple_fields() {
        let ops = ops_1d(64, (0.0, 2.0));
        let zero = WaveField::zeros(Arc::clone(&ops.mesh));
        for kind in [NormKind::L2, NormKind::H1, NormKind::L4] {
            assert_eq!(norm(&zero, &ops, kind).unwrap(), 0.0);
        }
        let c = C64::new(0.3, -0.4); // |c| = 0.5
        let cf = WaveField::new(vec![c; 64], Arc::clone(&ops.mesh), 0.0).unwrap();
        let measure = 2.0_f64;
        assert!((norm(&cf, &ops, NormKind::L2).unwrap() - 0.5 * measure.sqrt()).abs() < 1e-12);
        assert!((norm(&cf, &ops, NormKind::H1).unwrap() - 0.5 * measure.sqrt()).abs() < 1e-9);
        assert!((norm(&cf, &ops, NormKind::L4).unwrap() - 0.5 * measure.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn sine_norms_converge() {
        let mesh = Arc::new(build_periodic_mesh(1, &[(0.0, 2.0 * PI)], &[1024]).unwrap());
        let ops = assemble(&mesh, &ZeroPotential, 1.0).unwrap();
        let f = project_l2(|x| C64::new(x[0].sin(), 0.0), &ops).unwrap();
        assert!((norm(&f, &ops, NormKind::L2).unwrap() - PI.sqrt()).abs() < 1e-4);
        assert!((norm(&f, &ops, NormKind::H1).unwrap() - (2.0 * PI).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn error_between_identical_and_constants() {
        let fine = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[32]).unwrap());
        let pair = build_mesh_pair(Arc::clone(&fine), 4).unwrap();
        let ops = assemble(&fine, &ZeroPotential, 1.0).unwrap();
        let f = project_l2(|x| C64::new(x[0], 0.0), &ops).unwrap();
        assert_eq!(error_between(&f, &f, None, &ops, NormKind::L2).unwrap(), 0.0);

        let cf = WaveField::new(
            vec![C64::new(1.0, 0.0); 8],
            Arc::clone(pair.coarse()),
            0.0,
        )
        .unwrap();
        let ff = WaveField::new(vec![C64::new(1.0, 0.0); 32], Arc::clone(&fine), 0.0).unwrap();
        let e = error_between(&ff, &cf, Some(&pair), &ops, NormKind::L2).unwrap();
        assert!(e < 1e-14);
    }

    #[test]
    fn interpolation_error_second_order() {
        // L2 error of the coarse nodal interpolant of sin(x) halves by ~4x per H/2
        let fine = Arc::new(build_periodic_mesh(1, &[(0.0, 2.0 * PI)], &[512]).unwrap());
        let ops = assemble(&fine, &ZeroPotential, 1.0).unwrap();
        let fexact = project_l2(|x| C64::new(x[0].sin(), 0.0), &ops).unwrap();
        let mut errs = Vec::new();
        for k in [32usize, 16] {
            let pair = build_mesh_pair(Arc::clone(&fine), k).unwrap();
            let coarse = Arc::clone(pair.coarse());
            let vals: Vec<C64> = (0..coarse.node_count())
                .map(|q| C64::new(coarse.node_coord(q)[0].sin(), 0.0))
                .collect();
            let cf = WaveField::new(vals, coarse, 0.0).unwrap();
            errs.push(error_between(&fexact, &cf, Some(&pair), &ops, NormKind::L2).unwrap());
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn projection_idempotent_on_p1_fields() {
        let ops = ops_1d(24, (0.0, 1.0));
        let mesh = Arc::clone(&ops.mesh);
        let vals: Vec<C64> = (0..24)
            .map(|i| C64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        // evaluate the P1 interpolant exactly at quadrature points
        let vals2 = vals.clone();
        let h = 1.0 / 24.0;
        let interp = move |x: [f64; 2]| {
            let s = (x[0] / h).rem_euclid(24.0);
            let i = (s.floor() as usize).min(23);
            let t = s - i as f64;
            let a = vals2[i];
            let b = vals2[(i + 1) % 24];
            C64::new(a.re * (1.0 - t) + b.re * t, a.im * (1.0 - t) + b.im * t)
        };
        let f = project_l2(interp, &ops).unwrap();
        for i in 0..24 {
            assert!(abs2(f.values[i] - vals[i]).sqrt() < 1e-10);
        }
        let _ = mesh;
    }
}
