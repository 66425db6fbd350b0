//! Reduced multiscale basis pipeline: an offline stage compresses per-node
//! basis snapshots across potential samples into a short orthonormal mode
//! set, and an online stage rebuilds a basis for a new potential by solving
//! small constrained least-squares problems in each node's reduced span.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::prelude::*;
use faer::Side;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fem::AssembledOperators;
use crate::linalg::CsrMatrix;
use crate::mesh::MeshPair;
use crate::msbasis::{build_basis, constraint_operator, MultiscaleBasis};
use crate::potential::PotentialModel;

/// Per-node reduced basis: the snapshot mean and the leading POD modes of
/// the fluctuations, orthonormal in the fine mass inner product.
pub struct PodNodeBasis {
    pub node: usize,
    /// Mean snapshot (fine nodal vector).
    pub mean: Vec<f64>,
    /// `N_h x m_p` mode matrix; columns with zero singular value are zero.
    pub modes: Mat<f64>,
    /// Nonincreasing; length `m_p`.
    pub singular_values: Vec<f64>,
}

/// Offline product: one [`PodNodeBasis`] per coarse node.
pub struct PodBasisSet {
    pub nodes: Vec<PodNodeBasis>,
    pub q_offline: usize,
    pub m_p: usize,
    pub pair: Arc<MeshPair>,
    pub eps: f64,
}

/// Builds the offline set: one full basis per sample, then a per-node POD of
/// the fluctuation snapshots in the `M^h` inner product.
pub fn offline_build(
    model: &Arc<PotentialModel>,
    offline_xi: &[Vec<f64>],
    pair: &Arc<MeshPair>,
    base_ops: &AssembledOperators,
    m_p: usize,
) -> Result<PodBasisSet> {
    let q = offline_xi.len();
    if q < m_p + 1 {
        return Err(CoreError::InvalidArgument(format!(
            "offline stage needs at least m_p + 1 = {} samples, got {q}",
            m_p + 1
        )));
    }
    if !Arc::ptr_eq(&base_ops.mesh, pair.fine()) {
        return Err(CoreError::MeshMismatch(
            "operators do not live on the pair's fine mesh".into(),
        ));
    }
    let snapshots: Vec<Mat<f64>> = offline_xi
        .par_iter()
        .map(|xi| {
            let sample = model.sample(xi)?;
            let ops = base_ops.with_potential(&sample)?;
            Ok(build_basis(&ops, pair)?.coefficients().clone())
        })
        .collect::<Result<Vec<_>>>()?;

    let nh = pair.fine().node_count();
    let nc = pair.coarse().node_count();
    let mass = &base_ops.mass;
    let nodes: Vec<PodNodeBasis> = (0..nc)
        .into_par_iter()
        .map(|p| pod_for_node(p, &snapshots, mass, nh, q, m_p))
        .collect();
    Ok(PodBasisSet {
        nodes,
        q_offline: q,
        m_p,
        pair: Arc::clone(pair),
        eps: base_ops.eps,
    })
}

fn pod_for_node(
    p: usize,
    snapshots: &[Mat<f64>],
    mass: &CsrMatrix,
    nh: usize,
    q: usize,
    m_p: usize,
) -> PodNodeBasis {
    let mut mean = vec![0.0; nh];
    for c in snapshots {
        for s in 0..nh {
            mean[s] += c[(s, p)];
        }
    }
    for v in &mut mean {
        *v /= q as f64;
    }
    // fluctuation matrix and its M-weighted Gram
    let fluct = Mat::from_fn(nh, q, |s, j| snapshots[j][(s, p)] - mean[s]);
    let mfluct = crate::msbasis::sparse_times_dense(mass, &fluct);
    let gram = fluct.transpose() * &mfluct;
    let fro = gram.norm_l2();
    let mut modes = Mat::zeros(nh, m_p);
    let mut singulars = vec![0.0; m_p];
    if fro <= 1e-300 {
        log::info!("POD snapshots for node {p} have zero fluctuation; modes set to zero");
        return PodNodeBasis {
            node: p,
            mean,
            modes,
            singular_values: singulars,
        };
    }
    let eig = match gram.self_adjoint_eigen(Side::Lower) {
        Ok(e) => e,
        Err(_) => {
            log::warn!("POD Gram eigensolve failed for node {p}; falling back to mean only");
            return PodNodeBasis {
                node: p,
                mean,
                modes,
                singular_values: singulars,
            };
        }
    };
    // eigenvalues ascending; keep the top m_p with meaningful energy
    let tol = 1e-14 * eig.S().column_vector()[q - 1].max(0.0);
    for k in 0..m_p.min(q) {
        let idx = q - 1 - k;
        let mu = eig.S().column_vector()[idx];
        if mu <= tol || mu <= 0.0 {
            break;
        }
        let scale = 1.0 / mu.sqrt();
        for s in 0..nh {
            let mut acc = 0.0;
            for j in 0..q {
                acc += fluct[(s, j)] * eig.U()[(j, idx)];
            }
            modes[(s, k)] = acc * scale;
        }
        singulars[k] = mu.sqrt();
    }
    PodNodeBasis {
        node: p,
        mean,
        modes,
        singular_values: singulars,
    }
}

/// Online stage: for each node, restricts the energy form with the new
/// potential to the node's reduced span and matches the orthogonality
/// constraints in the least-squares sense, breaking ties (a rank-deficient
/// constraint system) by minimizing the energy over the residual freedom.
/// A degenerate reduced system falls back to the mean snapshot for that
/// node.
pub fn online_build(
    pod: &PodBasisSet,
    ops_new: &AssembledOperators,
) -> Result<MultiscaleBasis> {
    if !Arc::ptr_eq(&ops_new.mesh, pod.pair.fine()) {
        return Err(CoreError::MeshMismatch(
            "operators do not live on the offline set's fine mesh".into(),
        ));
    }
    if (ops_new.eps - pod.eps).abs() > 1e-15 * pod.eps.max(1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "offline set built for eps = {}, operators have eps = {}",
            pod.eps, ops_new.eps
        )));
    }
    let (b, lambda) = constraint_operator(&pod.pair)?;
    let a = ops_new.hamiltonian();
    let nh = pod.pair.fine().node_count();
    let nc = pod.pair.coarse().node_count();

    let columns: Vec<Vec<f64>> = pod
        .nodes
        .par_iter()
        .map(|nb| online_column(nb, &a, &b, &lambda, nh, nc))
        .collect();

    let c = Mat::from_fn(nh, nc, |s, p| columns[p][s]);
    Ok(MultiscaleBasis::from_coefficients(
        Arc::clone(&pod.pair),
        c,
        lambda,
        b,
        pod.eps,
    ))
}

fn online_column(
    nb: &PodNodeBasis,
    a: &CsrMatrix,
    b: &CsrMatrix,
    lambda: &[f64],
    nh: usize,
    nc: usize,
) -> Vec<f64> {
    // reduced span: mean plus the nonzero POD modes
    let active: Vec<usize> = (0..nb.singular_values.len())
        .filter(|&k| nb.singular_values[k] > 0.0)
        .collect();
    let r = 1 + active.len();
    let z = Mat::from_fn(nh, r, |s, j| {
        if j == 0 {
            nb.mean[s]
        } else {
            nb.modes[(s, active[j - 1])]
        }
    });
    // constraint image BZ and target lambda_p e_p
    let bz = crate::msbasis::sparse_times_dense(b, &z);
    let g = Mat::from_fn(nc, 1, |q_, _| if q_ == nb.node { lambda[nb.node] } else { 0.0 });

    let coeff = reduced_constrained_solve(&bz, &g, &z, a).unwrap_or_else(|| {
        log::warn!(
            "reduced constraint system degenerate for node {}; using the mean snapshot",
            nb.node
        );
        let mut e0 = vec![0.0; r];
        e0[0] = 1.0;
        e0
    });

    let mut col = vec![0.0; nh];
    for s in 0..nh {
        let mut acc = 0.0;
        for j in 0..r {
            acc += z[(s, j)] * coeff[j];
        }
        col[s] = acc;
    }
    col
}

/// Least-squares constraint matching with energy-minimizing tie-break.
///
/// Solves `min ||BZ c - g||` first; if the minimizer is not unique (BZ rank
/// deficient), minimizes `c^T (Z^T A Z) c` over the残 remaining freedom via
/// the SVD null space.
fn reduced_constrained_solve(
    bz: &Mat<f64>,
    g: &Mat<f64>,
    z: &Mat<f64>,
    a: &CsrMatrix,
) -> Option<Vec<f64>> {
    let r = bz.ncols();
    let svd = bz.svd().ok()?;
    let s = svd.S().column_vector();
    let smax = if r > 0 { s[0].abs() } else { 0.0 };
    if !(smax > 0.0) {
        return None;
    }
    let tol = smax * 1e-12 * (bz.nrows().max(r) as f64);
    let rank = (0..r.min(bz.nrows())).take_while(|&i| s[i].abs() > tol).count();
    if rank == 0 {
        return None;
    }
    // minimum-norm least-squares solution
    let utg = svd.U().transpose() * g;
    let mut c = vec![0.0; r];
    for i in 0..rank {
        let w = utg[(i, 0)] / s[i];
        for j in 0..r {
            c[j] += svd.V()[(j, i)] * w;
        }
    }
    if rank == r {
        return Some(c);
    }
    // tie-break on the null space: minimize (c + N w)^T K_a (c + N w)
    let null_dim = r - rank;
    let nbasis = Mat::from_fn(r, null_dim, |i, j| svd.V()[(i, rank + j)]);
    let az = crate::msbasis::sparse_times_dense(a, z);
    let ka = z.transpose() * &az; // r x r
    let kn = &ka * &nbasis;
    let nkn = nbasis.transpose() * &kn;
    let cm = Mat::from_fn(r, 1, |i, _| c[i]);
    let rhs = nbasis.transpose() * (&ka * &cm);
    let sol = nkn.partial_piv_lu().solve(&rhs);
    if (0..null_dim).any(|i| !sol[(i, 0)].is_finite()) {
        return Some(c); // keep the minimum-norm solution
    }
    for j in 0..r {
        let mut corr = 0.0;
        for i in 0..null_dim {
            corr += nbasis[(j, i)] * sol[(i, 0)];
        }
        c[j] -= corr;
    }
    Some(c)
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct PodManifest {
    q_offline: usize,
    m_p: usize,
    eps: f64,
    dimension: usize,
    bounds: Vec<(f64, f64)>,
    fine_cells: Vec<usize>,
    ratio: usize,
    mesh_pair_hash: u64,
}

fn pair_fingerprint(pair: &MeshPair, eps: f64, q: usize, m_p: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(pair.fine().dimension() as u64).to_le_bytes());
    for (a, b) in pair.fine().bounds() {
        eat(&a.to_le_bytes());
        eat(&b.to_le_bytes());
    }
    for &c in pair.fine().cells_per_axis() {
        eat(&(c as u64).to_le_bytes());
    }
    eat(&(pair.ratio() as u64).to_le_bytes());
    eat(&eps.to_le_bytes());
    eat(&(q as u64).to_le_bytes());
    eat(&(m_p as u64).to_le_bytes());
    h
}

const POD_MAGIC: &[u8; 8] = b"PODSET01";

impl PodBasisSet {
    /// Serializes the offline set: a magic tag, a JSON manifest, then raw
    /// little-endian `f64` payload (per node: mean, modes column-major,
    /// singular values).
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = PodManifest {
            q_offline: self.q_offline,
            m_p: self.m_p,
            eps: self.eps,
            dimension: self.pair.fine().dimension(),
            bounds: self.pair.fine().bounds().to_vec(),
            fine_cells: self.pair.fine().cells_per_axis().to_vec(),
            ratio: self.pair.ratio(),
            mesh_pair_hash: pair_fingerprint(&self.pair, self.eps, self.q_offline, self.m_p),
        };
        let json = serde_json::to_vec(&manifest)
            .map_err(|e| CoreError::Io(format!("manifest encode: {e}")))?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(POD_MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        let nh = self.pair.fine().node_count();
        let mut buf = Vec::with_capacity(8 * nh);
        for nb in &self.nodes {
            buf.clear();
            for &v in &nb.mean {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for k in 0..self.m_p {
                for s in 0..nh {
                    buf.extend_from_slice(&nb.modes[(s, k)].to_le_bytes());
                }
            }
            for &v in &nb.singular_values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        Ok(())
    }

    /// Loads an offline set, validating the manifest against `pair`.
    pub fn load(path: &Path, pair: &Arc<MeshPair>) -> Result<PodBasisSet> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != POD_MAGIC {
            return Err(CoreError::Io("not an offline basis container".into()));
        }
        let mut len8 = [0u8; 8];
        f.read_exact(&mut len8)?;
        let jlen = u64::from_le_bytes(len8) as usize;
        let mut jbuf = vec![0u8; jlen];
        f.read_exact(&mut jbuf)?;
        let manifest: PodManifest = serde_json::from_slice(&jbuf)
            .map_err(|e| CoreError::Io(format!("manifest decode: {e}")))?;
        let expect_hash =
            pair_fingerprint(pair, manifest.eps, manifest.q_offline, manifest.m_p);
        if manifest.mesh_pair_hash != expect_hash {
            return Err(CoreError::InvalidArgument(
                "offline container was built for a different mesh pair or parameters".into(),
            ));
        }
        let nh = pair.fine().node_count();
        let nc = pair.coarse().node_count();
        let m_p = manifest.m_p;
        let mut nodes = Vec::with_capacity(nc);
        let mut fbuf = vec![0u8; 8 * nh];
        for p in 0..nc {
            let mut read_f64s = |count: usize, f: &mut std::fs::File| -> Result<Vec<f64>> {
                let need = 8 * count;
                if fbuf.len() < need {
                    fbuf.resize(need, 0);
                }
                f.read_exact(&mut fbuf[..need])?;
                Ok(fbuf[..need]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let mean = read_f64s(nh, &mut f)?;
            let mut modes = Mat::zeros(nh, m_p);
            for k in 0..m_p {
                let col = read_f64s(nh, &mut f)?;
                for s in 0..nh {
                    modes[(s, k)] = col[s];
                }
            }
            let singular_values = read_f64s(m_p, &mut f)?;
            nodes.push(PodNodeBasis {
                node: p,
                mean,
                modes,
                singular_values,
            });
        }
        Ok(PodBasisSet {
            nodes,
            q_offline: manifest.q_offline,
            m_p,
            pair: Arc::clone(pair),
            eps: manifest.eps,
        })
    }
}
