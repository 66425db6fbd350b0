//! Monte Carlo and randomly shifted rank-1 lattice quasi-Monte Carlo
//! estimators over the unit cube, with root-mean-square aggregation over
//! shifts.
//!
//! Per-point evaluations run in parallel; accumulation uses a fixed-order
//! pairwise reduction so results are independent of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};

/// Randomly shifted rank-1 lattice rule over `[0,1)^m`.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    pub dim: usize,
    pub point_count: usize,
    pub gen_vector: Vec<u64>,
    pub shifts: Vec<Vec<f64>>,
    pub seed: u64,
}

impl LatticeRule {
    /// Lattice with a Korobov generating vector and `n_shifts` uniform
    /// shifts drawn from a counter-based generator keyed by `seed`.
    pub fn korobov(dim: usize, point_count: usize, a: u64, n_shifts: usize, seed: u64) -> Result<Self> {
        let gen_vector = korobov_vector(dim, point_count as u64, a)?;
        Self::with_vector(dim, point_count, gen_vector, n_shifts, seed)
    }

    /// Lattice with an explicit generating vector.
    pub fn with_vector(
        dim: usize,
        point_count: usize,
        gen_vector: Vec<u64>,
        n_shifts: usize,
        seed: u64,
    ) -> Result<Self> {
        if gen_vector.len() != dim {
            return Err(CoreError::InvalidArgument(format!(
                "generating vector has {} components for dimension {dim}",
                gen_vector.len()
            )));
        }
        if point_count == 0 || n_shifts == 0 {
            return Err(CoreError::InvalidArgument(
                "lattice needs at least one point and one shift".into(),
            ));
        }
        for (j, &z) in gen_vector.iter().enumerate() {
            if gcd(z, point_count as u64) != 1 {
                log::info!(
                    "lattice component z_{j} = {z} shares a factor with N = {point_count}; projections degenerate"
                );
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let shifts = (0..n_shifts)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        Ok(Self {
            dim,
            point_count,
            gen_vector,
            shifts,
            seed,
        })
    }

    pub fn shift_count(&self) -> usize {
        self.shifts.len()
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Korobov generating vector `(1, a, a^2 mod N, ..., a^{m-1} mod N)`.
pub fn korobov_vector(m: usize, n: u64, a: u64) -> Result<Vec<u64>> {
    if a == 0 {
        return Err(CoreError::InvalidArgument(
            "Korobov parameter a must be nonzero".into(),
        ));
    }
    let mut z = Vec::with_capacity(m);
    let mut cur = 1u64;
    for _ in 0..m {
        z.push(cur.max(1));
        cur = cur.checked_mul(a).map(|x| x % n).ok_or_else(|| {
            CoreError::InvalidArgument("Korobov parameter overflow; reduce a or N".into())
        })?;
        if cur == 0 {
            cur = 1; // a multiple of N collapses the component; keep it valid
        }
    }
    Ok(z)
}

/// The `N` points `frac(i z / N + shift)` for `i = 1..N`.
pub fn lattice_points(rule: &LatticeRule, shift_index: usize) -> Result<Vec<Vec<f64>>> {
    let shift = rule
        .shifts
        .get(shift_index)
        .ok_or_else(|| CoreError::InvalidArgument(format!("shift index {shift_index} out of range")))?;
    let n = rule.point_count as f64;
    Ok((1..=rule.point_count)
        .map(|i| {
            (0..rule.dim)
                .map(|j| {
                    let base = (i as u64).wrapping_mul(rule.gen_vector[j]) % rule.point_count as u64;
                    (base as f64 / n + shift[j]).fract()
                })
                .collect()
        })
        .collect())
}

/// Per-shift estimates, their mean, and the root-mean-square deviation
/// across shifts. Estimands are vectors; scalar estimands use length 1.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub per_shift: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// `sqrt(mean_r ||Q_r - mean||_2^2)`; zero for a single shift.
    pub rms_deviation: f64,
    pub sample_count: usize,
    pub wall_seconds: f64,
}

impl EstimatorReport {
    pub fn scalar_mean(&self) -> f64 {
        self.mean[0]
    }
}

/// Deterministic pairwise reduction of per-point vectors.
fn pairwise_mean(values: &[Vec<f64>]) -> Vec<f64> {
    fn sum_range(values: &[Vec<f64>], lo: usize, hi: usize) -> Vec<f64> {
        if hi - lo == 1 {
            return values[lo].clone();
        }
        let mid = lo + (hi - lo) / 2;
        let mut left = sum_range(values, lo, mid);
        let right = sum_range(values, mid, hi);
        for (l, r) in left.iter_mut().zip(right.iter()) {
            *l += r;
        }
        left
    }
    let mut total = sum_range(values, 0, values.len());
    let inv = 1.0 / values.len() as f64;
    for t in &mut total {
        *t *= inv;
    }
    total
}

fn evaluate_points<F>(
    points: &[Vec<f64>],
    shift_index: usize,
    f: &F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let results: Vec<Result<Vec<f64>>> = points
        .par_iter()
        .map(|u| f(u))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(CoreError::SampleFailure {
                    shift_index,
                    point_index: i,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Quasi-Monte Carlo estimate of `int_{[0,1]^m} F(u) du`: for each shift,
/// the equal-weight average over the shifted lattice; the report aggregates
/// across shifts. The first failing point aborts the estimator.
pub fn qmc_estimate<F>(rule: &LatticeRule, f: F) -> Result<EstimatorReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let start = std::time::Instant::now();
    let mut per_shift = Vec::with_capacity(rule.shift_count());
    for r in 0..rule.shift_count() {
        let pts = lattice_points(rule, r)?;
        let vals = evaluate_points(&pts, r, &f)?;
        per_shift.push(pairwise_mean(&vals));
    }
    let mean = pairwise_mean(&per_shift);
    let rms = rms_deviation(&per_shift, &mean);
    Ok(EstimatorReport {
        per_shift,
        mean,
        rms_deviation: rms,
        sample_count: rule.point_count * rule.shift_count(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn rms_deviation(per_shift: &[Vec<f64>], mean: &[f64]) -> f64 {
    if per_shift.len() <= 1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for q in per_shift {
        let mut d2 = 0.0;
        for (a, b) in q.iter().zip(mean.iter()) {
            d2 += (a - b) * (a - b);
        }
        acc += d2;
    }
    (acc / per_shift.len() as f64).sqrt()
}

/// Monte Carlo estimate with `n` iid uniform points. The generator is
/// counter-based: point `i` is drawn from a stream keyed by `(seed, i)`, so
/// results are independent of evaluation order and worker count.
pub fn mc_estimate<F>(dim: usize, n: usize, seed: u64, f: F) -> Result<EstimatorReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(CoreError::InvalidArgument(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let start = std::time::Instant::now();
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            (0..dim).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    let vals = evaluate_points(&points, 0, &f)?;
    let mean = pairwise_mean(&vals);
    Ok(EstimatorReport {
        per_shift: vec![mean.clone()],
        mean,
        rms_deviation: 0.0,
        sample_count: n,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn korobov_examples() {
        assert_eq!(korobov_vector(4, 16, 1).unwrap(), vec![1, 1, 1, 1]);
        assert_eq!(korobov_vector(3, 7, 3).unwrap(), vec![1, 3, 2]);
        assert!(korobov_vector(3, 7, 0).is_err());
        for &z in korobov_vector(6, 101, 12).unwrap().iter() {
            assert!(z >= 1 && z < 101);
        }
    }

    #[test]
    fn lattice_point_examples() {
        let rule = LatticeRule::with_vector(1, 4, vec![1], 1, 0).unwrap();
        let mut rule0 = rule.clone();
        rule0.shifts = vec![vec![0.0]];
        let pts = lattice_points(&rule0, 0).unwrap();
        let flat: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert_eq!(flat, vec![0.25, 0.5, 0.75, 0.0]);

        let mut rule_shift = LatticeRule::with_vector(1, 2, vec![1], 1, 0).unwrap();
        rule_shift.shifts = vec![vec![0.1]];
        let pts = lattice_points(&rule_shift, 0).unwrap();
        let flat: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert!((flat[0] - 0.6).abs() < 1e-15 && (flat[1] - 0.1).abs() < 1e-15);

        let rule = LatticeRule::korobov(5, 64, 1571, 3, 9).unwrap();
        for r in 0..3 {
            for p in lattice_points(&rule, r).unwrap() {
                for c in p {
                    assert!((0.0..1.0).contains(&c));
                }
            }
        }
    }

    #[test]
    fn shift_equivariance() {
        let rule = LatticeRule::korobov(3, 32, 7, 2, 4).unwrap();
        let a = lattice_points(&rule, 0).unwrap();
        let b = lattice_points(&rule, 1).unwrap();
        let delta: Vec<f64> = (0..3)
            .map(|j| (rule.shifts[1][j] - rule.shifts[0][j]).rem_euclid(1.0))
            .collect();
        for (pa, pb) in a.iter().zip(b.iter()) {
            for j in 0..3 {
                let want = (pa[j] + delta[j]).fract();
                let diff = (pb[j] - want).abs();
                assert!(diff < 1e-12 || (diff - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qmc_constant_and_linear_integrands() {
        let rule = LatticeRule::korobov(2, 16, 5, 4, 3).unwrap();
        let rep = qmc_estimate(&rule, |_| Ok(vec![2.5])).unwrap();
        assert_eq!(rep.scalar_mean(), 2.5);
        assert_eq!(rep.rms_deviation, 0.0);
        for q in &rep.per_shift {
            assert_eq!(q[0], 2.5);
        }

        let mut rule = LatticeRule::with_vector(1, 4, vec![1], 1, 0).unwrap();
        rule.shifts = vec![vec![0.0]];
        let rep = qmc_estimate(&rule, |u| Ok(vec![u[0]])).unwrap();
        assert!((rep.scalar_mean() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn qmc_near_first_order_on_smooth_product() {
        // F(u) = prod_j (1 + c_j (u_j - 1/2)) integrates to exactly 1
        let c = [0.9, 0.6, 0.3];
        let f = |u: &[f64]| {
            let mut v = 1.0;
            for j in 0..3 {
                v *= 1.0 + c[j] * (u[j] - 0.5);
            }
            Ok(vec![v])
        };
        let mut errs = Vec::new();
        let mut ns = Vec::new();
        for n in [64usize, 256, 1024, 4096] {
            let rule = LatticeRule::korobov(3, n, 1571, 8, 11).unwrap();
            let rep = qmc_estimate(&rule, f).unwrap();
            // RMS error against the exact integral over the shifts
            let mut acc = 0.0;
            for q in &rep.per_shift {
                acc += (q[0] - 1.0).powi(2);
            }
            errs.push((acc / rep.per_shift.len() as f64).sqrt());
            ns.push(n as f64);
        }
        // least-squares slope of log err vs log n
        let lx: Vec<f64> = ns.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let slope = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!(slope < -0.8, "qmc slope {slope}, errors {errs:?}");
    }

    #[test]
    fn qmc_linearity_per_shift() {
        let rule = LatticeRule::korobov(2, 32, 7, 3, 5).unwrap();
        let f = |u: &[f64]| Ok(vec![u[0] * u[0] + 0.3]);
        let g = |u: &[f64]| Ok(vec![(u[1] * 2.7).sin()]);
        let alpha = 1.7;
        let combo = |u: &[f64]| {
            let a = u[0] * u[0] + 0.3;
            let b = (u[1] * 2.7).sin();
            Ok(vec![alpha * a + b])
        };
        let ra = qmc_estimate(&rule, f).unwrap();
        let rb = qmc_estimate(&rule, g).unwrap();
        let rc = qmc_estimate(&rule, combo).unwrap();
        for r in 0..3 {
            let want = alpha * ra.per_shift[r][0] + rb.per_shift[r][0];
            assert!((rc.per_shift[r][0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mc_examples() {
        let rep = mc_estimate(2, 100, 7, |_| Ok(vec![1.25])).unwrap();
        assert_eq!(rep.scalar_mean(), 1.25);
        let rep = mc_estimate(1, 100_000, 42, |u| Ok(vec![u[0]])).unwrap();
        assert!((0.497..0.503).contains(&rep.scalar_mean()), "{}", rep.scalar_mean());
        let again = mc_estimate(1, 100_000, 42, |u| Ok(vec![u[0]])).unwrap();
        assert_eq!(rep.mean, again.mean);
    }

    #[test]
    fn failures_carry_point_and_shift() {
        let rule = LatticeRule::korobov(1, 8, 3, 2, 1).unwrap();
        let err = qmc_estimate(&rule, |u| {
            if u[0] > 0.9 {
                Err(CoreError::NonFinite("boom".into()))
            } else {
                Ok(vec![0.0])
            }
        })
        .unwrap_err();
        match err {
            CoreError::SampleFailure { message, .. } => assert!(message.contains("boom")),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn vector_estimands_average_componentwise() {
        let rule = LatticeRule::korobov(1, 16, 5, 2, 2).unwrap();
        let rep = qmc_estimate(&rule, |u| Ok(vec![u[0], 1.0 - u[0]])).unwrap();
        assert_eq!(rep.mean.len(), 2);
        assert!((rep.mean[0] + rep.mean[1] - 1.0).abs() < 1e-14);
    }
}
