//! Every scalar the convergence statements bound: the coupling deviation
//! norm, exceedance frequencies, exact and sliced Wasserstein-2 distances,
//! histogram relative entropy and L1 distance with their
//! Csiszar-Kullback-Pinsker audit, the law-of-large-numbers fluctuation
//! statistic, and log-log rate fitting.

use rayon::prelude::*;

use crate::dynamics::{meanfield_force, PhaseState};
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::kernels::{KernelEval, KernelSpec, MollifierProfile};
use crate::rng::{label, CounterStream};

/// Pseudo-count added to every cell of the second argument of the relative
/// entropy before renormalization, so empirical zeros in q do not blow up.
pub const KL_PSEUDO_COUNT: f64 = 1e-12;

/// Largest atom count the exact assignment solver accepts.
pub const EXACT_W2_CAP: usize = 4096;

/// Coupling deviation `sqrt(log N) * max_i |x_i - xbar_i| + max_i |v_i - vbar_i|`,
/// with the Euclidean norm per particle and the max over particles.
pub fn coupling_deviation(phi: &PhaseState, psi: &PhaseState) -> Result<f64> {
    let (dx, dv) = coupling_deviation_parts(phi, psi)?;
    Ok((phi.n() as f64).ln().sqrt() * dx + dv)
}

/// The two maxima entering the deviation norm: `(max_i |dx_i|, max_i |dv_i|)`.
pub fn coupling_deviation_parts(phi: &PhaseState, psi: &PhaseState) -> Result<(f64, f64)> {
    if phi.n() != psi.n() || phi.d() != psi.d() {
        return Err(Error::GeometryMismatch(
            "coupled states must share N and d".into(),
        ));
    }
    let d = phi.d();
    let mut max_dx: f64 = 0.0;
    let mut max_dv: f64 = 0.0;
    for i in 0..phi.n() {
        let mut sx = 0.0;
        let mut sv = 0.0;
        for k in 0..d {
            let ax = phi.pos(i)[k] - psi.pos(i)[k];
            let av = phi.vel(i)[k] - psi.vel(i)[k];
            sx += ax * ax;
            sv += av * av;
        }
        max_dx = max_dx.max(sx);
        max_dv = max_dv.max(sv);
    }
    Ok((max_dx.sqrt(), max_dv.sqrt()))
}

/// Fraction of runs whose sup deviation exceeds the threshold; exact over
/// the supplied values, invariant under reordering.
pub fn exceedance_probability(sup_deviations: &[f64], threshold: f64) -> Result<f64> {
    if sup_deviations.is_empty() {
        return Err(Error::MetricInput("need at least one run".into()));
    }
    let hits = sup_deviations.iter().filter(|&&s| s > threshold).count();
    Ok(hits as f64 / sup_deviations.len() as f64)
}

/// Relative entropy `sum_{p_c > 0} p_c log(p_c / q_c)` between grids of
/// identical geometry; q is padded by [`KL_PSEUDO_COUNT`] per cell and
/// renormalized, so the result can undershoot by at most `eps * #cells`.
pub fn kl_divergence(p: &DensityGrid, q: &DensityGrid) -> Result<f64> {
    if !p.geometry_matches(q) {
        return Err(Error::GeometryMismatch(
            "relative entropy needs identical grid geometry".into(),
        ));
    }
    let cells = p.masses().len() as f64;
    let q_total = q.total_mass() + KL_PSEUDO_COUNT * cells;
    let mut h = 0.0;
    for (&pc, &qc) in p.masses().iter().zip(q.masses()) {
        if pc > 0.0 {
            h += pc * (pc / ((qc + KL_PSEUDO_COUNT) / q_total)).ln();
        }
    }
    Ok(h)
}

/// `sum_c |p_c - q_c|`, in [0, 2] for probability grids.
pub fn l1_distance(p: &DensityGrid, q: &DensityGrid) -> Result<f64> {
    if !p.geometry_matches(q) {
        return Err(Error::GeometryMismatch(
            "L1 distance needs identical grid geometry".into(),
        ));
    }
    Ok(p.masses()
        .iter()
        .zip(q.masses())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Csiszar-Kullback-Pinsker slack `2 k H_k - (L1)^2`; the audit passes when
/// the slack is above `-eps_est` for the estimator tolerance in use.
pub fn ckp_audit(l1: f64, h_k: f64, k: usize) -> f64 {
    2.0 * k as f64 * h_k - l1 * l1
}

/// Exact Wasserstein-2 distance between two equal-size, equal-weight atom
/// clouds (flat arrays, `d` coordinates per atom) via an exact assignment
/// solve. Errors on unequal counts or more than [`EXACT_W2_CAP`] atoms;
/// use the sliced variant beyond the cap.
pub fn wasserstein2_exact(mu: &[f64], nu: &[f64], d: usize) -> Result<f64> {
    if d == 0 || mu.len() % d != 0 || nu.len() % d != 0 {
        return Err(Error::MetricInput("atom arrays must be n x d".into()));
    }
    let n = mu.len() / d;
    if n != nu.len() / d {
        return Err(Error::MetricInput(format!(
            "unequal atom counts {} vs {}; use the sliced variant",
            n,
            nu.len() / d
        )));
    }
    if n == 0 {
        return Err(Error::MetricInput("empty atom clouds".into()));
    }
    if n > EXACT_W2_CAP {
        return Err(Error::MetricInput(format!(
            "{n} atoms exceed the exact-solver cap {EXACT_W2_CAP}; use the sliced variant"
        )));
    }
    let mut cost = vec![0.0; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a = &mu[i * d..(i + 1) * d];
        for (j, c) in row.iter_mut().enumerate() {
            let b = &nu[j * d..(j + 1) * d];
            *c = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    });
    let assignment = solve_assignment(&cost, n);
    let total: f64 = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    Ok((total / n as f64).sqrt())
}

/// Minimum-cost perfect assignment on a dense square cost matrix
/// (shortest augmenting paths with dual potentials). Returns the column
/// assigned to each row.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    const NONE: usize = usize::MAX;
    let vcol = n; // virtual column hosting the row being inserted
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![NONE; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 0..n {
        col_row[vcol] = i;
        let mut j0 = vcol;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        while col_row[j0] != NONE {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 0..n {
                if !used[j] {
                    let reduced = cost[i0 * n + j] - u[i0] - v[j];
                    if reduced < minv[j] {
                        minv[j] = reduced;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            debug_assert!(j1 != NONE, "augmenting path search stalled");
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else if minv[j].is_finite() {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        }
        while j0 != vcol {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }

    let mut row_col = vec![0usize; n];
    for j in 0..n {
        if col_row[j] != NONE {
            row_col[col_row[j]] = j;
        }
    }
    row_col
}

/// Monte-Carlo sliced Wasserstein-2 surrogate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicedW2 {
    /// `sqrt(d * mean_theta W2^2(theta))`; the sqrt(d) factor is the
    /// direction-average correction calibrated on isotropic cases
    /// (a pure translation projects to `|theta . delta|^2`, whose sphere
    /// average is `|delta|^2 / d`).
    pub value: f64,
    /// Delta-method standard error of `value` from the projection spread.
    pub std_error: f64,
    pub projections: usize,
}

/// Sliced Wasserstein-2 between atom clouds (equal weights; counts may
/// differ): average of squared 1-D distances over `projections` random
/// unit directions, corrected by `sqrt(d)` and reported with a standard
/// error. In d = 1 this equals the exact 1-D distance.
pub fn wasserstein2_sliced(
    mu: &[f64],
    nu: &[f64],
    d: usize,
    projections: usize,
    seed: u64,
) -> Result<SlicedW2> {
    if d == 0 || mu.len() % d != 0 || nu.len() % d != 0 || mu.is_empty() || nu.is_empty() {
        return Err(Error::MetricInput("atom arrays must be nonempty n x d".into()));
    }
    if projections == 0 {
        return Err(Error::MetricInput("need at least one projection".into()));
    }
    let n = mu.len() / d;
    let m = nu.len() / d;
    let sq: Vec<f64> = (0..projections)
        .into_par_iter()
        .map(|p| {
            let mut stream = CounterStream::for_words(&[seed, label::SLICED, p as u64]);
            let dir = stream.unit_vector(d);
            let mut a: Vec<f64> = (0..n)
                .map(|i| {
                    mu[i * d..(i + 1) * d]
                        .iter()
                        .zip(&dir)
                        .map(|(x, t)| x * t)
                        .sum()
                })
                .collect();
            let mut b: Vec<f64> = (0..m)
                .map(|j| {
                    nu[j * d..(j + 1) * d]
                        .iter()
                        .zip(&dir)
                        .map(|(x, t)| x * t)
                        .sum()
                })
                .collect();
            a.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
            w2_squared_1d_sorted(&a, &b)
        })
        .collect();
    let mean = sq.iter().sum::<f64>() / projections as f64;
    let var = if projections > 1 {
        sq.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (projections as f64 - 1.0)
    } else {
        0.0
    };
    let se_mean = (var / projections as f64).sqrt();
    let value = (d as f64 * mean).sqrt();
    let std_error = if value > 0.0 {
        d as f64 * se_mean / (2.0 * value)
    } else {
        0.0
    };
    Ok(SlicedW2 {
        value,
        std_error,
        projections,
    })
}

/// Squared 1-D Wasserstein-2 between sorted equal-weight atom lists via the
/// quantile coupling; handles unequal counts.
fn w2_squared_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64;
    }
    let mut acc = 0.0;
    let mut q = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let qa = (i + 1) as f64 / n as f64;
        let qb = (j + 1) as f64 / m as f64;
        let next = qa.min(qb);
        let diff = a[i] - b[j];
        acc += (next - q) * diff * diff;
        q = next;
        if qa <= next {
            i += 1;
        }
        if qb <= next {
            j += 1;
        }
    }
    acc
}

/// `sup_i |k^N * rho_N(Y_i) - k^N * rho(Y_i)|` for a concrete atom set:
/// the empirical convolution (self-term excluded, weight 1/n) against the
/// quadrature convolution over the law grid.
pub fn empirical_convolution_gap(
    atoms: &[f64],
    rho: &DensityGrid,
    spec: &KernelSpec,
) -> Result<f64> {
    let d = spec.d;
    if rho.axes() != d {
        return Err(Error::GeometryMismatch(
            "law grid axes must match kernel dimension".into(),
        ));
    }
    if atoms.is_empty() || atoms.len() % d != 0 {
        return Err(Error::MetricInput("atoms must be a nonempty n x d array".into()));
    }
    let n = atoms.len() / d;
    let eval = KernelEval::new(spec, Some(MollifierProfile::standard_bump()))?;
    let truth = meanfield_force(atoms, rho, spec)?;
    let sup2 = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &atoms[i * d..(i + 1) * d];
            let mut emp = vec![0.0; d];
            let mut dx = vec![0.0; d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut r2 = 0.0;
                for k in 0..d {
                    dx[k] = yi[k] - atoms[j * d + k];
                    r2 += dx[k] * dx[k];
                }
                let f = eval.factor(r2);
                for k in 0..d {
                    emp[k] += f * dx[k];
                }
            }
            let inv = 1.0 / n as f64;
            let mut diff2 = 0.0;
            for k in 0..d {
                let delta = emp[k] * inv - truth[i * d + k];
                diff2 += delta * delta;
            }
            diff2
        })
        .reduce(|| 0.0f64, f64::max);
    Ok(sup2.sqrt())
}

/// Law-of-large-numbers fluctuation probe: draws `n` i.i.d. atoms from the
/// law grid, compares the empirical convolution `k^N * rho_N` (self-term
/// excluded; for n = 1 the empirical side is identically zero) with the
/// quadrature convolution `k^N * rho` at every atom, and averages
/// `sup_i |difference|^(2m)` over `reps` repetitions.
pub fn lln_fluctuation(
    rho: &DensityGrid,
    spec: &KernelSpec,
    m: u32,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    if m < 1 {
        return Err(Error::MetricInput("moment exponent m must be >= 1".into()));
    }
    if n == 0 || reps == 0 {
        return Err(Error::MetricInput("need n >= 1 and reps >= 1".into()));
    }
    let mut total = 0.0;
    for rep in 0..reps {
        let mut stream = CounterStream::for_words(&[seed, label::GRID_SAMPLE, rep as u64]);
        let atoms = rho.sample(n, &mut stream);
        let gap = empirical_convolution_gap(&atoms, rho, spec)?;
        total += gap.powi(2 * m as i32);
    }
    Ok(total / reps as f64)
}

/// Least-squares power-law fit on `(log N, log value)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope; `slope +- 1.96 se` is the ~95% band.
    pub slope_std_error: f64,
}

/// Fits `value ~ C * N^slope` by ordinary least squares in log-log space.
/// Needs at least three distinct N and strictly positive values.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::MetricInput(
            "rate fitting needs at least 3 points".into(),
        ));
    }
    if pairs.iter().any(|&(n, v)| !(n > 0.0) || !(v > 0.0)) {
        return Err(Error::MetricInput(
            "rate fitting needs positive N and values".into(),
        ));
    }
    {
        let mut ns: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        ns.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        ns.dedup();
        if ns.len() < 3 {
            return Err(Error::MetricInput(
                "rate fitting needs at least 3 distinct N".into(),
            ));
        }
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0 // constant data is fit perfectly by a zero slope
    };
    let slope_std_error = if pts.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        slope_std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelFamily, Sign};
    use proptest::prelude::*;

    fn state(d: usize, x: Vec<f64>, v: Vec<f64>) -> PhaseState {
        PhaseState::new(0.0, d, x, v).unwrap()
    }

    #[test]
    fn deviation_zero_for_identical_states() {
        let a = state(2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]);
        assert_eq!(coupling_deviation(&a, &a.clone()).unwrap(), 0.0);
    }

    #[test]
    fn deviation_single_particle_difference() {
        // only particle 2 differs, by |dx| = a, dv = 0:
        // deviation = sqrt(log N) * a
        let n = 4;
        let mut x = vec![0.0; n * 2];
        let b = x.clone();
        x[2 * 2] += 0.3;
        x[2 * 2 + 1] += 0.4;
        let phi = state(2, x, vec![0.0; n * 2]);
        let psi = state(2, b, vec![0.0; n * 2]);
        let dev = coupling_deviation(&phi, &psi).unwrap();
        let expect = (n as f64).ln().sqrt() * 0.5;
        assert!((dev - expect).abs() < 1e-14);
    }

    #[test]
    fn deviation_positive_homogeneity() {
        let n = 3;
        let base = state(1, vec![0.0, 1.0, 2.0], vec![0.0, 0.5, -0.5]);
        for c in [0.5, 2.0, 7.5] {
            let shifted = state(
                1,
                base.x.iter().map(|a| a + c * 0.1).collect(),
                base.v.iter().map(|a| a + c * 0.2).collect(),
            );
            let dev = coupling_deviation(&base, &shifted).unwrap();
            let expect = (n as f64).ln().sqrt() * c * 0.1 + c * 0.2;
            assert!((dev - expect).abs() < 1e-12, "c = {c}");
        }
    }

    #[test]
    fn exceedance_counting() {
        assert_eq!(exceedance_probability(&[0.1, 0.2], 0.5).unwrap(), 0.0);
        assert_eq!(exceedance_probability(&[0.9, 0.8], 0.5).unwrap(), 1.0);
        let mut sups = vec![0.1; 17];
        sups.extend_from_slice(&[0.9, 0.9, 0.9]);
        assert_eq!(exceedance_probability(&sups, 0.5).unwrap(), 0.15);
        // invariant under reordering
        sups.reverse();
        assert_eq!(exceedance_probability(&sups, 0.5).unwrap(), 0.15);
        assert!(exceedance_probability(&[], 0.5).is_err());
    }

    fn two_cell_grid(a: f64, b: f64) -> DensityGrid {
        DensityGrid::from_parts(vec![0.0], vec![0.5], vec![2], vec![a, b], 0.0).unwrap()
    }

    #[test]
    fn kl_two_cell_example() {
        let p = two_cell_grid(0.5, 0.5);
        let q = two_cell_grid(0.25, 0.75);
        let h = kl_divergence(&p, &q).unwrap();
        let expect = 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((h - expect).abs() < 1e-9);
        assert!((expect - 0.143841).abs() < 1e-6);
        assert!(kl_divergence(&p, &p.clone()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_requires_matching_geometry() {
        let p = two_cell_grid(0.5, 0.5);
        let q = DensityGrid::from_parts(vec![0.0], vec![0.25], vec![4], vec![0.25; 4], 0.0)
            .unwrap();
        assert!(kl_divergence(&p, &q).is_err());
        assert!(l1_distance(&p, &q).is_err());
    }

    #[test]
    fn l1_examples() {
        let p = two_cell_grid(0.5, 0.5);
        let q = two_cell_grid(0.25, 0.75);
        assert!((l1_distance(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(l1_distance(&p, &p.clone()).unwrap(), 0.0);
        let a = two_cell_grid(1.0, 0.0);
        let b = two_cell_grid(0.0, 1.0);
        assert!((l1_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ckp_two_cell_example() {
        let slack = ckp_audit(0.5, 0.14384103622589045, 1);
        assert!((slack - 0.037682).abs() < 1e-5);
        assert_eq!(ckp_audit(0.0, 0.3, 1), 0.6);
        assert_eq!(ckp_audit(0.0, 0.0, 3), 0.0);
    }

    proptest! {
        // Pinsker on exact (non-estimated) grid pairs: (L1)^2 <= 2 KL with
        // only arithmetic slack. Entries are bounded away from zero so the
        // pseudo-count perturbation stays below the 1e-10 tolerance.
        #[test]
        fn pinsker_holds_on_random_grids(
            raw_p in proptest::collection::vec(0.05f64..1.0, 16),
            raw_q in proptest::collection::vec(0.05f64..1.0, 16),
        ) {
            let sp: f64 = raw_p.iter().sum();
            let sq: f64 = raw_q.iter().sum();
            let p = DensityGrid::from_parts(
                vec![0.0], vec![1.0], vec![16],
                raw_p.iter().map(|a| a / sp).collect(), 0.0,
            ).unwrap();
            let q = DensityGrid::from_parts(
                vec![0.0], vec![1.0], vec![16],
                raw_q.iter().map(|a| a / sq).collect(), 0.0,
            ).unwrap();
            let l1 = l1_distance(&p, &q).unwrap();
            let h = kl_divergence(&p, &q).unwrap();
            prop_assert!(ckp_audit(l1, h, 1) >= -1e-10);
        }

        #[test]
        fn kl_nonnegative_and_zero_iff_equal(
            raw in proptest::collection::vec(0.05f64..1.0, 8),
        ) {
            let s: f64 = raw.iter().sum();
            let p = DensityGrid::from_parts(
                vec![0.0], vec![1.0], vec![8],
                raw.iter().map(|a| a / s).collect(), 0.0,
            ).unwrap();
            prop_assert!(kl_divergence(&p, &p.clone()).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn kl_strictly_positive_when_different() {
        let p = two_cell_grid(0.6, 0.4);
        let q = two_cell_grid(0.4, 0.6);
        assert!(kl_divergence(&p, &q).unwrap() > 1e-3);
    }

    // --- Wasserstein ---

    fn brute_force_w2(mu: &[f64], nu: &[f64], d: usize) -> f64 {
        let n = mu.len() / d;
        let idx: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&idx, &mut Vec::new(), &mut vec![false; n], &mut |perm| {
            let total: f64 = (0..n)
                .map(|i| {
                    mu[i * d..(i + 1) * d]
                        .iter()
                        .zip(&nu[perm[i] * d..(perm[i] + 1) * d])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            best = best.min(total);
        });
        (best / n as f64).sqrt()
    }

    fn permute(
        items: &[usize],
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if current.len() == items.len() {
            visit(current);
            return;
        }
        for k in 0..items.len() {
            if !used[k] {
                used[k] = true;
                current.push(items[k]);
                permute(items, current, used, visit);
                current.pop();
                used[k] = false;
            }
        }
    }

    #[test]
    fn w2_trivial_cases() {
        let mu = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(wasserstein2_exact(&mu, &mu, 2).unwrap(), 0.0);
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert!((wasserstein2_exact(&a, &b, 2).unwrap() - 5.0).abs() < 1e-12);
        assert!(wasserstein2_exact(&[0.0, 1.0], &[0.0], 1).is_err());
    }

    #[test]
    fn w2_matches_brute_force_small() {
        let mut stream = CounterStream::for_words(&[31, label::TEST]);
        for n in [2usize, 3, 4, 5, 6] {
            for _ in 0..20 {
                let mu: Vec<f64> = (0..n * 2).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
                let nu: Vec<f64> = (0..n * 2).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
                let exact = wasserstein2_exact(&mu, &nu, 2).unwrap();
                let brute = brute_force_w2(&mu, &nu, 2);
                assert!(
                    (exact - brute).abs() < 1e-10,
                    "n = {n}: solver {exact} vs brute {brute}"
                );
            }
        }
    }

    #[test]
    fn w2_is_a_metric_on_samples() {
        let mut stream = CounterStream::for_words(&[33, label::TEST]);
        for _ in 0..20 {
            let a: Vec<f64> = (0..16).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
            let c: Vec<f64> = (0..16).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
            let ab = wasserstein2_exact(&a, &b, 2).unwrap();
            let ba = wasserstein2_exact(&b, &a, 2).unwrap();
            assert!((ab - ba).abs() < 1e-12, "symmetry");
            let ac = wasserstein2_exact(&a, &c, 2).unwrap();
            let bc = wasserstein2_exact(&b, &c, 2).unwrap();
            assert!(ac <= ab + bc + 1e-9, "triangle: {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn sliced_equals_exact_in_1d() {
        let mut stream = CounterStream::for_words(&[34, label::TEST]);
        let mu: Vec<f64> = (0..32).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
        let nu: Vec<f64> = (0..32).map(|_| stream.uniform_in(-0.5, 1.5)).collect();
        let exact = wasserstein2_exact(&mu, &nu, 1).unwrap();
        let sliced = wasserstein2_sliced(&mu, &nu, 1, 4, 5).unwrap();
        assert!(
            (sliced.value - exact).abs() < 1e-12,
            "sliced {} vs exact {exact}",
            sliced.value
        );
    }

    #[test]
    fn sliced_zero_for_identical_clouds() {
        let mu = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let s = wasserstein2_sliced(&mu, &mu, 3, 16, 1).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn sliced_handles_unequal_counts() {
        // two atoms {0, 1} vs their refinement {0, 0, 1, 1}: distance 0
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0];
        let s = wasserstein2_sliced(&a, &b, 1, 2, 3).unwrap();
        assert!(s.value < 1e-12);
        // {0} vs {1}: distance 1
        let s = wasserstein2_sliced(&[0.0], &[1.0, 1.0, 1.0], 1, 2, 3).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    // --- rate fitting ---

    #[test]
    fn fit_rate_exact_power_law() {
        let pairs: Vec<(f64, f64)> = [256.0f64, 512.0, 1024.0, 2048.0]
            .iter()
            .map(|&n| (n, n.powf(-0.3)))
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        assert!((fit.slope + 0.3).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.slope_std_error < 1e-12);
    }

    #[test]
    fn fit_rate_constant_values() {
        let pairs = vec![(256.0, 2.5), (512.0, 2.5), (1024.0, 2.5)];
        let fit = fit_rate(&pairs).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rate_log_corrected_power_law() {
        // value = N^(-2 delta) e^(sqrt(log N)) at delta = 0.25 over 2^8..2^14:
        // fitted slope sits in (-0.5, -0.3) because of log-correction drag
        let pairs: Vec<(f64, f64)> = (8..=14)
            .map(|e| {
                let n = (2.0f64).powi(e);
                (n, n.powf(-0.5) * (n.ln().sqrt()).exp())
            })
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        assert!(
            fit.slope > -0.5 && fit.slope < -0.3,
            "slope {}",
            fit.slope
        );
    }

    #[test]
    fn fit_rate_rejects_bad_input() {
        assert!(fit_rate(&[(256.0, 1.0), (512.0, 0.5)]).is_err());
        assert!(fit_rate(&[(256.0, 1.0), (512.0, 0.5), (512.0, 0.4)]).is_err());
        assert!(fit_rate(&[(256.0, 1.0), (512.0, -0.5), (1024.0, 0.2)]).is_err());
    }

    // --- LLN probe ---

    #[test]
    fn lln_single_cell_law_is_degenerate() {
        // all samples land in one occupied cell: empirical and quadrature
        // convolutions both nearly vanish (regularized kernel at ~0 distance)
        let mut mass = vec![0.0; 64];
        mass[32] = 1.0;
        let rho =
            DensityGrid::from_parts(vec![-1.0], vec![2.0 / 64.0], vec![64], mass, 0.0).unwrap();
        let spec =
            KernelSpec::new(Sign::Repulsive, 1, None, KernelFamily::Lp, 0.2, 64).unwrap();
        let stat = lln_fluctuation(&rho, &spec, 2, 64, 2, 17).unwrap();
        assert!(stat < 1e-2, "{stat}");
    }

    #[test]
    fn lln_n1_equals_true_convolution_power() {
        let rho = DensityGrid::from_density_fn(
            |p| (-p[0] * p[0]).exp(),
            &[-3.0],
            &[3.0],
            &[64],
            true,
        )
        .unwrap();
        let spec =
            KernelSpec::new(Sign::Repulsive, 1, None, KernelFamily::Lp, 0.2, 2).unwrap();
        let m = 1;
        let stat = lln_fluctuation(&rho, &spec, m, 1, 1, 9).unwrap();
        // recompute: the single atom's statistic is |k * rho(Y_1)|^{2m}
        let mut stream = CounterStream::for_words(&[9, label::GRID_SAMPLE, 0]);
        let atom = rho.sample(1, &mut stream);
        let truth = meanfield_force(&atom, &rho, &spec).unwrap();
        let expect = truth[0].abs().powi(2 * m as i32);
        assert!((stat - expect).abs() < 1e-12 * expect.max(1.0));
    }
}
