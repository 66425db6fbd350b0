//! Cell quadrature rules: 3-point Gauss–Legendre on segments (exact through
//! degree 5) and the 3-point edge-midpoint rule on triangles (exact through
//! degree 2).

use crate::mesh::{Cell, Mesh};

/// One quadrature point: physical position, P1 hat values at the cell's
/// nodes, and the quadrature weight (already scaled by the cell measure).
pub struct QuadPoint {
    pub x: [f64; 2],
    pub hats: [f64; 3],
    pub weight: f64,
}

const GL3_POS: [f64; 3] = [-0.7745966692414834, 0.0, 0.7745966692414834];
const GL3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Quadrature points of one cell.
pub fn cell_points(mesh: &Mesh, cell: &Cell) -> Vec<QuadPoint> {
    if mesh.dimension() == 1 {
        let (a, b) = (cell.verts[0][0], cell.verts[1][0]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        (0..3)
            .map(|q| {
                let x = mid + half * GL3_POS[q];
                let s = (x - a) / (b - a);
                QuadPoint {
                    x: [x, 0.0],
                    hats: [1.0 - s, s, 0.0],
                    weight: half * GL3_W[q],
                }
            })
            .collect()
    } else {
        let v = &cell.verts;
        let w = cell.measure / 3.0;
        // midpoints of the three edges; barycentric hats are (1/2, 1/2, 0) et cyc.
        let mids = [
            ([0.5 * (v[0][0] + v[1][0]), 0.5 * (v[0][1] + v[1][1])], [0.5, 0.5, 0.0]),
            ([0.5 * (v[1][0] + v[2][0]), 0.5 * (v[1][1] + v[2][1])], [0.0, 0.5, 0.5]),
            ([0.5 * (v[2][0] + v[0][0]), 0.5 * (v[2][1] + v[0][1])], [0.5, 0.0, 0.5]),
        ];
        mids.iter()
            .map(|&(x, hats)| QuadPoint { x, hats, weight: w })
            .collect()
    }
}

/// Constant gradients of the P1 hats on a cell, as `grad[local_node][axis]`.
pub fn cell_gradients(mesh: &Mesh, cell: &Cell) -> [[f64; 2]; 3] {
    if mesh.dimension() == 1 {
        let len = cell.verts[1][0] - cell.verts[0][0];
        [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0, 0.0]]
    } else {
        let v = &cell.verts;
        let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
            - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        [
            [(v[1][1] - v[2][1]) / det, (v[2][0] - v[1][0]) / det],
            [(v[2][1] - v[0][1]) / det, (v[0][0] - v[2][0]) / det],
            [(v[0][1] - v[1][1]) / det, (v[1][0] - v[0][0]) / det],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_periodic_mesh;

    #[test]
    fn segment_rule_integrates_quintics() {
        let m = build_periodic_mesh(1, &[(0.0, 1.0)], &[2]).unwrap();
        let cell = &m.cells()[0]; // [0, 0.5]
        let total: f64 = cell_points(&m, cell)
            .iter()
            .map(|qp| qp.weight * qp.x[0].powi(5))
            .sum();
        let exact = 0.5_f64.powi(6) / 6.0;
        assert!((total - exact).abs() < 1e-15);
    }

    #[test]
    fn triangle_rule_integrates_quadratics() {
        let m = build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        let cell = &m.cells()[0]; // triangle (0,0)-(0.5,0)-(0,0.5)
        let total: f64 = cell_points(&m, cell)
            .iter()
            .map(|qp| qp.weight * qp.x[0] * qp.x[1])
            .sum();
        // integral of x*y over that triangle = 0.5^4 / 24
        assert!((total - 0.5_f64.powi(4) / 24.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_sum_to_zero() {
        let m = build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[3, 3]).unwrap();
        for cell in m.cells() {
            let g = cell_gradients(&m, cell);
            for ax in 0..2 {
                let s: f64 = (0..3).map(|l| g[l][ax]).sum();
                assert!(s.abs() < 1e-13);
            }
        }
    }
}
