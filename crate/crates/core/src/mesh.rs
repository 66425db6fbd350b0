//! Periodic structured meshes: uniform interval partitions in 1D and
//! triangulated rectangle grids in 2D, nested coarse/fine pairs, and the
//! nodal patches used by the basis-decay diagnostics.
//!
//! Periodicity is realized by index identification: boundary nodes are the
//! same unknowns as their periodic partners, so a mesh with `n` cells per
//! axis carries exactly `prod(n)` independent nodes and every assembled
//! operator stays square and nonsingular.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::linalg::{CooBuilder, CsrMatrix};

/// A mesh cell: a segment in 1D, a triangle in 2D.
///
/// `nodes` are periodic (wrapped) node indices; `verts` are the geometric
/// vertex coordinates of the unwrapped cell, used for quadrature. In 1D only
/// the first two entries are meaningful.
#[derive(Debug, Clone)]
pub struct Cell {
    pub nodes: [usize; 3],
    pub verts: [[f64; 2]; 3],
    pub measure: f64,
}

impl Cell {
    pub fn node_count(&self, dim: usize) -> usize {
        if dim == 1 {
            2
        } else {
            3
        }
    }
}

/// Uniform periodic mesh of an interval (1D) or a rectangle (2D, split into
/// triangles along the anti-diagonal of each grid rectangle).
#[derive(Debug)]
pub struct Mesh {
    dimension: usize,
    bounds: Vec<(f64, f64)>,
    cells_per_axis: Vec<usize>,
    node_coords: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    h_max: f64,
}

impl Mesh {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn node_count(&self) -> usize {
        self.node_coords.len()
    }

    pub fn node_coord(&self, p: usize) -> [f64; 2] {
        self.node_coords[p]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Characteristic mesh size: the maximum cell diameter.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn axis_spacing(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        (b - a) / self.cells_per_axis[axis] as f64
    }

    pub fn domain_measure(&self) -> f64 {
        self.bounds.iter().map(|(a, b)| b - a).product()
    }

    /// Domain midpoint, the recentring origin for moment observables.
    pub fn center(&self) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for (ax, (a, b)) in self.bounds.iter().enumerate() {
            c[ax] = 0.5 * (a + b);
        }
        c
    }

    /// Flat node index from per-axis indices, wrapping periodically.
    pub fn node_index(&self, ij: [isize; 2]) -> usize {
        let n0 = self.cells_per_axis[0] as isize;
        let i = ij[0].rem_euclid(n0) as usize;
        if self.dimension == 1 {
            i
        } else {
            let n1 = self.cells_per_axis[1] as isize;
            let j = ij[1].rem_euclid(n1) as usize;
            j * self.cells_per_axis[0] + i
        }
    }

    /// Whether two node flat indices are equal after periodic wrap of the
    /// given per-axis offsets (identity map diagnostic).
    pub fn translated_node(&self, p: usize, offset: [isize; 2]) -> usize {
        let (i, j) = self.split_index(p);
        self.node_index([i as isize + offset[0], j as isize + offset[1]])
    }

    fn split_index(&self, p: usize) -> (usize, usize) {
        if self.dimension == 1 {
            (p, 0)
        } else {
            (p % self.cells_per_axis[0], p / self.cells_per_axis[0])
        }
    }
}

/// Builds a uniform periodic mesh.
///
/// 2D rectangles are split into a bottom-left triangle
/// `{(i,j), (i+1,j), (i,j+1)}` and a top-right triangle
/// `{(i+1,j), (i+1,j+1), (i,j+1)}`, a fixed pattern chosen so assembly is
/// deterministic and nested refinements share diagonal directions.
pub fn build_periodic_mesh(
    dimension: usize,
    bounds: &[(f64, f64)],
    cells_per_axis: &[usize],
) -> Result<Mesh> {
    if dimension != 1 && dimension != 2 {
        return Err(CoreError::InvalidArgument(format!(
            "dimension must be 1 or 2, got {dimension}"
        )));
    }
    if bounds.len() != dimension || cells_per_axis.len() != dimension {
        return Err(CoreError::InvalidArgument(format!(
            "expected {dimension} bounds and cell counts, got {} and {}",
            bounds.len(),
            cells_per_axis.len()
        )));
    }
    for (ax, (a, b)) in bounds.iter().enumerate() {
        if !(b - a).is_finite() || b - a <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "degenerate bounds on axis {ax}: [{a}, {b}]"
            )));
        }
    }
    for (ax, &n) in cells_per_axis.iter().enumerate() {
        if n < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "need at least 2 cells per axis, got {n} on axis {ax}"
            )));
        }
    }

    let mut node_coords = Vec::new();
    let mut cells = Vec::new();
    let h0 = (bounds[0].1 - bounds[0].0) / cells_per_axis[0] as f64;

    if dimension == 1 {
        let n = cells_per_axis[0];
        for i in 0..n {
            node_coords.push([bounds[0].0 + i as f64 * h0, 0.0]);
        }
        for i in 0..n {
            let x0 = bounds[0].0 + i as f64 * h0;
            cells.push(Cell {
                nodes: [i, (i + 1) % n, usize::MAX],
                verts: [[x0, 0.0], [x0 + h0, 0.0], [0.0, 0.0]],
                measure: h0,
            });
        }
        Ok(Mesh {
            dimension,
            bounds: bounds.to_vec(),
            cells_per_axis: cells_per_axis.to_vec(),
            node_coords,
            cells,
            h_max: h0,
        })
    } else {
        let (n0, n1) = (cells_per_axis[0], cells_per_axis[1]);
        let h1 = (bounds[1].1 - bounds[1].0) / n1 as f64;
        for j in 0..n1 {
            for i in 0..n0 {
                node_coords.push([
                    bounds[0].0 + i as f64 * h0,
                    bounds[1].0 + j as f64 * h1,
                ]);
            }
        }
        let idx = |i: usize, j: usize| (j % n1) * n0 + (i % n0);
        let area = 0.5 * h0 * h1;
        for j in 0..n1 {
            for i in 0..n0 {
                let x0 = bounds[0].0 + i as f64 * h0;
                let y0 = bounds[1].0 + j as f64 * h1;
                let (x1, y1) = (x0 + h0, y0 + h1);
                cells.push(Cell {
                    nodes: [idx(i, j), idx(i + 1, j), idx(i, j + 1)],
                    verts: [[x0, y0], [x1, y0], [x0, y1]],
                    measure: area,
                });
                cells.push(Cell {
                    nodes: [idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)],
                    verts: [[x1, y0], [x1, y1], [x0, y1]],
                    measure: area,
                });
            }
        }
        Ok(Mesh {
            dimension,
            bounds: bounds.to_vec(),
            cells_per_axis: cells_per_axis.to_vec(),
            node_coords,
            cells,
            h_max: (h0 * h0 + h1 * h1).sqrt(),
        })
    }
}

/// Nested coarse/fine mesh pair with the coarse-to-fine node map and the
/// prolongation matrix of coarse P1 hat functions into the fine space.
#[derive(Debug)]
pub struct MeshPair {
    fine: Arc<Mesh>,
    coarse: Arc<Mesh>,
    ratio: usize,
    coarse_to_fine: Vec<usize>,
    prolongation: CsrMatrix,
}

impl MeshPair {
    pub fn fine(&self) -> &Arc<Mesh> {
        &self.fine
    }

    pub fn coarse(&self) -> &Arc<Mesh> {
        &self.coarse
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn coarse_to_fine(&self) -> &[usize] {
        &self.coarse_to_fine
    }

    /// `N_h x N_H` matrix whose column `q` holds the fine nodal values of the
    /// coarse hat function `q`. Exact for nested P1 spaces.
    pub fn prolongation(&self) -> &CsrMatrix {
        &self.prolongation
    }

    /// Coarse cell containing the given fine cell (by containment of the fine
    /// cell centroid; exact for nested uniform meshes).
    pub fn coarse_cell_of_fine_cell(&self, fine_cell: usize) -> usize {
        let k = self.ratio;
        if self.fine.dimension() == 1 {
            fine_cell / k
        } else {
            let n0 = self.fine.cells_per_axis()[0];
            let rect = fine_cell / 2;
            let upper = fine_cell % 2; // 0 = bottom-left triangle, 1 = top-right
            let (fi, fj) = (rect % n0, rect / n0);
            let (ci, cj) = (fi / k, fj / k);
            // position of the fine sub-rectangle inside the coarse rectangle
            let (di, dj) = (fi % k, fj % k);
            // centroid local coordinates relative to the coarse rectangle
            let s = (di as f64 + if upper == 0 { 1.0 / 3.0 } else { 2.0 / 3.0 }) / k as f64;
            let t = (dj as f64 + if upper == 0 { 1.0 / 3.0 } else { 2.0 / 3.0 }) / k as f64;
            let c0 = self.coarse.cells_per_axis()[0];
            let rect_c = cj * c0 + ci;
            if s + t <= 1.0 {
                2 * rect_c
            } else {
                2 * rect_c + 1
            }
        }
    }
}

/// Builds the nested pair by coarsening `mesh_fine` with the integer `ratio_k`
/// per axis.
pub fn build_mesh_pair(mesh_fine: Arc<Mesh>, ratio_k: usize) -> Result<MeshPair> {
    if ratio_k < 1 {
        return Err(CoreError::InvalidArgument("ratio k must be >= 1".into()));
    }
    let mut coarse_cells = Vec::new();
    for (ax, &n) in mesh_fine.cells_per_axis().iter().enumerate() {
        if n % ratio_k != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "fine cell count {n} on axis {ax} is not divisible by ratio k = {ratio_k}"
            )));
        }
        let nc = n / ratio_k;
        if nc < 2 {
            return Err(CoreError::InvalidArgument(format!(
                "coarse mesh must have at least 2 cells per axis; axis {ax} would have {nc}"
            )));
        }
        coarse_cells.push(nc);
    }
    let coarse = Arc::new(build_periodic_mesh(
        mesh_fine.dimension(),
        mesh_fine.bounds(),
        &coarse_cells,
    )?);

    let dim = mesh_fine.dimension();
    let mut coarse_to_fine = Vec::with_capacity(coarse.node_count());
    for q in 0..coarse.node_count() {
        let (ci, cj) = if dim == 1 {
            (q, 0)
        } else {
            (q % coarse.cells_per_axis()[0], q / coarse.cells_per_axis()[0])
        };
        coarse_to_fine.push(mesh_fine.node_index([(ci * ratio_k) as isize, (cj * ratio_k) as isize]));
    }

    let prolongation = build_prolongation(&mesh_fine, &coarse, ratio_k);
    Ok(MeshPair {
        fine: mesh_fine,
        coarse,
        ratio: ratio_k,
        coarse_to_fine,
        prolongation,
    })
}

/// Fine nodal values of every coarse hat function, by index arithmetic on the
/// uniform grids (no floating-point point location).
fn build_prolongation(fine: &Mesh, coarse: &Mesh, k: usize) -> CsrMatrix {
    let mut b = CooBuilder::new(fine.node_count(), coarse.node_count());
    let dim = fine.dimension();
    let kf = k as f64;
    if dim == 1 {
        let nc = coarse.cells_per_axis()[0];
        for fi in 0..fine.node_count() {
            let ci = fi / k;
            let d = fi % k;
            let s = d as f64 / kf;
            if d == 0 {
                b.add(fi, ci, 1.0);
            } else {
                b.add(fi, ci, 1.0 - s);
                b.add(fi, (ci + 1) % nc, s);
            }
        }
    } else {
        let nf0 = fine.cells_per_axis()[0];
        let (nc0, nc1) = (coarse.cells_per_axis()[0], coarse.cells_per_axis()[1]);
        for fnode in 0..fine.node_count() {
            let (fi, fj) = (fnode % nf0, fnode / nf0);
            let (ci, cj) = (fi / k, fj / k);
            let (di, dj) = (fi % k, fj % k);
            let (s, t) = (di as f64 / kf, dj as f64 / kf);
            let corner = |a: usize, b_: usize| ((b_ % nc1) * nc0) + (a % nc0);
            // barycentric weights on the containing coarse triangle
            if s + t <= 1.0 {
                let w = [(corner(ci, cj), 1.0 - s - t), (corner(ci + 1, cj), s), (corner(ci, cj + 1), t)];
                for (q, v) in w {
                    if v != 0.0 {
                        b.add(fnode, q, v);
                    }
                }
            } else {
                let w = [
                    (corner(ci + 1, cj), 1.0 - t),
                    (corner(ci + 1, cj + 1), s + t - 1.0),
                    (corner(ci, cj + 1), 1.0 - s),
                ];
                for (q, v) in w {
                    if v != 0.0 {
                        b.add(fnode, q, v);
                    }
                }
            }
        }
    }
    b.build()
}

/// Set of coarse cells forming the `l`-layer patch around coarse node `p`.
#[derive(Debug, Clone)]
pub struct NodalPatch {
    pub center: usize,
    pub layer: usize,
    pub cells: Vec<usize>,
}

/// Patch recursion: layer 0 is the support of the hat at `p`; each further
/// layer adds every coarse cell touching the closure of the previous patch.
pub fn nodal_patch(pair: &MeshPair, p: usize, layer: usize) -> Result<NodalPatch> {
    let coarse = pair.coarse();
    if p >= coarse.node_count() {
        return Err(CoreError::InvalidArgument(format!(
            "coarse node index {p} out of range ({} nodes)",
            coarse.node_count()
        )));
    }
    // node -> incident cells adjacency
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); coarse.node_count()];
    for (ci, cell) in coarse.cells().iter().enumerate() {
        for &nn in &cell.nodes[..cell.node_count(coarse.dimension())] {
            incident[nn].push(ci);
        }
    }
    let mut cells: BTreeSet<usize> = incident[p].iter().copied().collect();
    for _ in 0..layer {
        let mut boundary_nodes = BTreeSet::new();
        for &c in &cells {
            let cell = &coarse.cells()[c];
            for &nn in &cell.nodes[..cell.node_count(coarse.dimension())] {
                boundary_nodes.insert(nn);
            }
        }
        let before = cells.len();
        for &nn in &boundary_nodes {
            for &c in &incident[nn] {
                cells.insert(c);
            }
        }
        if cells.len() == before {
            break; // saturated at the full domain
        }
    }
    Ok(NodalPatch {
        center: p,
        layer,
        cells: cells.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn interval_mesh_nodes_and_h() {
        let m = build_periodic_mesh(1, &[(0.0, 2.0 * PI)], &[4]).unwrap();
        assert_eq!(m.node_count(), 4);
        let xs: Vec<f64> = (0..4).map(|i| m.node_coord(i)[0]).collect();
        for (got, want) in xs.iter().zip([0.0, PI / 2.0, PI, 3.0 * PI / 2.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((m.h_max() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn unit_square_two_by_two() {
        let m = build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.cells().len(), 8);
        let total: f64 = m.cells().iter().map(|c| c.measure).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn paper_scale_interval() {
        let m = build_periodic_mesh(1, &[(-2.0, 2.0)], &[600]).unwrap();
        assert!((m.h_max() - 4.0 / 600.0).abs() < 1e-15);
        assert_eq!(m.node_count(), 600);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(build_periodic_mesh(1, &[(1.0, 1.0)], &[4]).is_err());
        assert!(build_periodic_mesh(1, &[(0.0, 1.0)], &[1]).is_err());
        assert!(build_periodic_mesh(3, &[(0.0, 1.0)], &[4]).is_err());
    }

    #[test]
    fn mesh_pair_paper_ratio() {
        let fine = Arc::new(build_periodic_mesh(1, &[(-2.0, 2.0)], &[600]).unwrap());
        let pair = build_mesh_pair(fine, 6).unwrap();
        assert_eq!(pair.coarse().node_count(), 100);
        assert!((pair.coarse().h_max() - 6.0 * pair.fine().h_max()).abs() < 1e-14);
        for (q, &f) in pair.coarse_to_fine().iter().enumerate() {
            let xc = pair.coarse().node_coord(q);
            let xf = pair.fine().node_coord(f);
            assert!((xc[0] - xf[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn mesh_pair_degenerate_coarse_rejected() {
        let fine = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[8]).unwrap());
        let err = build_mesh_pair(fine, 8).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("at least 2"), "unexpected message: {msg}");
    }

    #[test]
    fn mesh_pair_non_divisible_names_axis() {
        let fine = Arc::new(build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[8, 9]).unwrap());
        let err = build_mesh_pair(fine, 4).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("axis 1"), "unexpected message: {msg}");
    }

    #[test]
    fn mesh_pair_2d_shared_coordinates() {
        let fine = Arc::new(build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[64, 64]).unwrap());
        let pair = build_mesh_pair(fine, 4).unwrap();
        assert_eq!(pair.coarse().node_count(), 16 * 16);
        for (q, &f) in pair.coarse_to_fine().iter().enumerate() {
            let xc = pair.coarse().node_coord(q);
            let xf = pair.fine().node_coord(f);
            assert!((xc[0] - xf[0]).abs() < 1e-14 && (xc[1] - xf[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn patch_layers_1d() {
        let fine = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[32]).unwrap());
        let pair = build_mesh_pair(fine, 4).unwrap();
        let p0 = nodal_patch(&pair, 3, 0).unwrap();
        assert_eq!(p0.cells, vec![2, 3]);
        let p1 = nodal_patch(&pair, 3, 1).unwrap();
        assert_eq!(p1.cells, vec![1, 2, 3, 4]);
        let psat = nodal_patch(&pair, 3, 100).unwrap();
        assert_eq!(psat.cells.len(), pair.coarse().cells().len());
    }

    #[test]
    fn patch_wraps_periodically() {
        let fine = Arc::new(build_periodic_mesh(1, &[(0.0, 1.0)], &[32]).unwrap());
        let pair = build_mesh_pair(fine, 4).unwrap();
        let p1 = nodal_patch(&pair, 0, 1).unwrap();
        assert_eq!(p1.cells, vec![0, 1, 6, 7]);
    }

    #[test]
    fn patch_measure_monotone() {
        let fine = Arc::new(build_periodic_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[16, 16]).unwrap());
        let pair = build_mesh_pair(fine, 2).unwrap();
        let mut prev = 0usize;
        for l in 0..6 {
            let p = nodal_patch(&pair, 5, l).unwrap();
            assert!(p.cells.len() >= prev);
            prev = p.cells.len();
        }
        assert_eq!(prev, pair.coarse().cells().len());
    }

    #[test]
    fn translation_leaves_connectivity_invariant() {
        let m = build_periodic_mesh(1, &[(0.0, 1.0)], &[8]).unwrap();
        // translating all node indices by one cell permutes cells onto cells
        let shifted: Vec<[usize; 2]> = m
            .cells()
            .iter()
            .map(|c| [m.translated_node(c.nodes[0], [1, 0]), m.translated_node(c.nodes[1], [1, 0])])
            .collect();
        for pair in &shifted {
            assert!(m
                .cells()
                .iter()
                .any(|c| c.nodes[0] == pair[0] && c.nodes[1] == pair[1]));
        }
    }
}
