//! Physical diagnostics: discrete mass, energy, second moment, expected mass
//! density over samples, and linear functionals of wave fields.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::fem::{AssembledOperators, WaveField};
use crate::potential::PotentialSample;
use crate::quad;
use crate::{abs2, C64};

/// Time series of recorded diagnostics; all vectors share the same length.
#[derive(Debug, Clone, Default)]
pub struct ObservableSeries {
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl ObservableSeries {
    pub fn is_consistent(&self) -> bool {
        let n = self.t.len();
        self.mass.len() == n
            && self.energy.len() == n
            && self.second_moment.len() == n
            && self.t.windows(2).all(|w| w[1] > w[0])
    }
}

fn check_mesh(field: &WaveField, ops: &AssembledOperators) -> Result<()> {
    if !Arc::ptr_eq(&field.mesh, &ops.mesh) {
        return Err(CoreError::MeshMismatch(
            "field and operators live on different meshes".into(),
        ));
    }
    Ok(())
}

/// Total discrete mass `U* M U`.
pub fn mass(field: &WaveField, ops: &AssembledOperators) -> Result<f64> {
    check_mesh(field, ops)?;
    Ok(ops.mass.quadratic_form(&field.values).max(0.0))
}

/// Discrete energy
/// `E = (eps^2/2) U* S U + (v, |psi_h|^2) + (lambda/2) ||psi_h||_L4^4`,
/// with the potential and quartic terms by cell quadrature of the P1
/// interpolant.
pub fn energy(
    field: &WaveField,
    ops: &AssembledOperators,
    potential: &PotentialSample,
    lambda: f64,
) -> Result<f64> {
    check_mesh(field, ops)?;
    let kinetic = 0.5 * ops.eps * ops.eps * ops.stiffness.quadratic_form(&field.values);
    let mesh = &field.mesh;
    let mut pot = 0.0;
    let mut quartic = 0.0;
    for cell in mesh.cells() {
        let nv = cell.node_count(mesh.dimension());
        for qp in quad::cell_points(mesh, cell) {
            let mut z = C64::new(0.0, 0.0);
            for a in 0..nv {
                let u = field.values[cell.nodes[a]];
                z += C64::new(qp.hats[a] * u.re, qp.hats[a] * u.im);
            }
            let dens = abs2(z);
            let v = potential.eval(qp.x);
            if !v.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "potential not finite at quadrature point ({}, {})",
                    qp.x[0], qp.x[1]
                )));
            }
            pot += qp.weight * v * dens;
            quartic += qp.weight * dens * dens;
        }
    }
    Ok(kinetic + pot + 0.5 * lambda * quartic)
}

/// Second moment of the mass density, `int |x - c|^2 |psi_h|^2 dx`, with
/// coordinates recentred on the domain midpoint.
pub fn second_moment(field: &WaveField, ops: &AssembledOperators) -> Result<f64> {
    check_mesh(field, ops)?;
    let mesh = &field.mesh;
    let c = mesh.center();
    let mut acc = 0.0;
    for cell in mesh.cells() {
        let nv = cell.node_count(mesh.dimension());
        for qp in quad::cell_points(mesh, cell) {
            let mut z = C64::new(0.0, 0.0);
            for a in 0..nv {
                let u = field.values[cell.nodes[a]];
                z += C64::new(qp.hats[a] * u.re, qp.hats[a] * u.im);
            }
            let r2 = (qp.x[0] - c[0]).powi(2)
                + if mesh.dimension() == 2 {
                    (qp.x[1] - c[1]).powi(2)
                } else {
                    0.0
                };
            acc += qp.weight * r2 * abs2(z);
        }
    }
    Ok(acc.max(0.0))
}

/// Running nodal sum of `|psi|^2` over samples.
#[derive(Debug, Clone)]
pub struct DensityAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl DensityAccumulator {
    pub fn new(node_count: usize) -> Self {
        Self {
            sum: vec![0.0; node_count],
            count: 0,
        }
    }

    pub fn accumulate(&mut self, field: &WaveField) -> Result<()> {
        if field.values.len() != self.sum.len() {
            return Err(CoreError::MeshMismatch(format!(
                "density accumulator of length {} fed a field of length {}",
                self.sum.len(),
                field.values.len()
            )));
        }
        for (s, z) in self.sum.iter_mut().zip(field.values.iter()) {
            *s += abs2(*z);
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &DensityAccumulator) {
        assert_eq!(self.sum.len(), other.sum.len());
        for (s, o) in self.sum.iter_mut().zip(other.sum.iter()) {
            *s += o;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean nodal density; errors on an empty accumulator.
    pub fn expected_density(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(CoreError::InvalidArgument(
                "expected density of an empty accumulator".into(),
            ));
        }
        let inv = 1.0 / self.count as f64;
        Ok(self.sum.iter().map(|s| s * inv).collect())
    }
}

/// Continuous linear functional `(psi_h, g) = sum_pq conj(g_q) M_qp U_p`
/// (conjugate-linear in `g`, linear in the field).
pub fn linear_functional(
    field: &WaveField,
    ops: &AssembledOperators,
    g: &WaveField,
) -> Result<C64> {
    check_mesh(field, ops)?;
    check_mesh(g, ops)?;
    let mu = ops.mass.matvec_c(&field.values);
    let mut acc = C64::new(0.0, 0.0);
    for (gq, mq) in g.values.iter().zip(mu.iter()) {
        let conj_g = C64::new(gq.re, -gq.im);
        acc += conj_g * mq;
    }
    Ok(acc)
}
