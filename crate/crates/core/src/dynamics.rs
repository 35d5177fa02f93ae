//! Second-order particle dynamics: Euler-Maruyama stepping, the pairwise
//! interaction force of the N-body system, and the mean-field force obtained
//! by quadrature against a density grid.
//!
//! Determinism contract: every random increment is a pure function of
//! `(seed, particle, step)`, force sums run in a fixed index order per
//! particle, and parallelism only distributes independent particles across
//! threads. Identical configurations therefore produce bit-identical
//! trajectories regardless of worker-thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::kernels::{KernelEval, KernelFamily, KernelSpec, MollifierProfile};
use crate::rng::{derive_key, label, CounterStream};

/// Positions and velocities of N particles in dimension d at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    n: usize,
    d: usize,
    /// N x d positions, row-major.
    pub x: Vec<f64>,
    /// N x d velocities, row-major.
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(t: f64, d: usize, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidSpec("dimension must be >= 1".into()));
        }
        if x.len() != v.len() || x.len() % d != 0 {
            return Err(Error::InvalidSpec(
                "position/velocity arrays must both be N x d".into(),
            ));
        }
        let n = x.len() / d;
        if n < 2 {
            return Err(Error::InvalidSpec("a phase state holds N >= 2 particles".into()));
        }
        if x.iter().chain(v.iter()).any(|a| !a.is_finite()) {
            return Err(Error::InvalidSpec("phase state entries must be finite".into()));
        }
        Ok(PhaseState { t, n, d, x, v })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn pos(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn vel(&self, i: usize) -> &[f64] {
        &self.v[i * self.d..(i + 1) * self.d]
    }

    /// Index of the first particle with a non-finite coordinate, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        for i in 0..self.n {
            if self.pos(i).iter().chain(self.vel(i)).any(|a| !a.is_finite()) {
                return Some(i);
            }
        }
        None
    }
}

/// Integration parameters of the SDE runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeParams {
    /// Diffusion strength sigma_N >= 0; the velocity noise is sqrt(2 sigma) dB.
    pub sigma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl SdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidSpec("dt must be positive".into()));
        }
        if self.dt > self.t_end {
            return Err(Error::InvalidSpec("dt must not exceed t_end".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidSpec("sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of steps: `ceil(t_end / dt)`, the last one possibly partial.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).ceil() as usize
    }
}

/// Which summation path evaluates the pairwise force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcePath {
    Direct,
    CellList,
}

/// The key of the Brownian sub-stream for `(seed, particle, step)`; folded
/// into the coupling checksum each time an increment is consumed.
#[inline]
pub fn brownian_key(seed: u64, i: usize, step: usize) -> u64 {
    derive_key(&[seed, label::BROWNIAN, i as u64, step as u64])
}

/// N(0, dt I_d) increment for particle `i` at `step`, as a pure function of
/// the key. The interacting flow and its mean-field copy both read this
/// stream, which realizes the synchronous coupling.
pub fn brownian_increment(seed: u64, i: usize, step: usize, d: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; d];
    brownian_increment_into(seed, i, step, dt, &mut out);
    out
}

pub fn brownian_increment_into(seed: u64, i: usize, step: usize, dt: f64, out: &mut [f64]) {
    debug_assert!(dt > 0.0);
    let mut stream = CounterStream::from_key(brownian_key(seed, i, step));
    stream.fill_normals(out);
    let s = dt.sqrt();
    for a in out.iter_mut() {
        *a *= s;
    }
}

/// Pairwise interaction force `a_i = (1/(N-1)) sum_{j != i} k^N(x_i - x_j)`.
///
/// The direct path is the reference. The cell-list path sorts particles by
/// spatial cell (edge = max(N^(-delta), extent/64)) and accumulates in the
/// sorted order, which only re-associates the same terms; the two paths
/// agree to well below 1e-12 per component after the 1/(N-1) normalization.
pub fn pairwise_force(
    state: &PhaseState,
    spec: &KernelSpec,
    path: ForcePath,
) -> Result<Vec<f64>> {
    if spec.family == KernelFamily::Exact {
        return Err(Error::InvalidSpec(
            "pairwise forces need a regularized kernel family (lp or hlp)".into(),
        ));
    }
    if spec.n_particles != state.n() {
        return Err(Error::InvalidSpec(format!(
            "kernel spec is for N = {}, state has N = {}",
            spec.n_particles,
            state.n()
        )));
    }
    let eval = KernelEval::new(spec, Some(MollifierProfile::standard_bump()))?;
    let d = state.d();
    let mut out = vec![0.0; state.x.len()];
    match path {
        ForcePath::Direct => match d {
            1 => direct_forces::<1>(&state.x, &eval, &mut out),
            2 => direct_forces::<2>(&state.x, &eval, &mut out),
            3 => direct_forces::<3>(&state.x, &eval, &mut out),
            _ => direct_forces_dyn(&state.x, d, &eval, &mut out),
        },
        ForcePath::CellList => {
            let order = cell_sorted_order(&state.x, d, spec.cutoff_radius());
            let sorted: Vec<f64> = {
                let mut s = vec![0.0; state.x.len()];
                for (rank, &orig) in order.iter().enumerate() {
                    s[rank * d..(rank + 1) * d]
                        .copy_from_slice(&state.x[orig as usize * d..(orig as usize + 1) * d]);
                }
                s
            };
            let mut sorted_out = vec![0.0; state.x.len()];
            match d {
                1 => direct_forces::<1>(&sorted, &eval, &mut sorted_out),
                2 => direct_forces::<2>(&sorted, &eval, &mut sorted_out),
                3 => direct_forces::<3>(&sorted, &eval, &mut sorted_out),
                _ => direct_forces_dyn(&sorted, d, &eval, &mut sorted_out),
            }
            for (rank, &orig) in order.iter().enumerate() {
                out[orig as usize * d..(orig as usize + 1) * d]
                    .copy_from_slice(&sorted_out[rank * d..(rank + 1) * d]);
            }
        }
    }
    Ok(out)
}

fn direct_forces<const D: usize>(x: &[f64], eval: &KernelEval, out: &mut [f64]) {
    let n = x.len() / D;
    let inv = 1.0 / (n as f64 - 1.0);
    out.par_chunks_mut(D).enumerate().for_each(|(i, row)| {
        let xi: &[f64; D] = x[i * D..(i + 1) * D].try_into().unwrap();
        let mut acc = [0.0f64; D];
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut dx = [0.0f64; D];
            let mut r2 = 0.0;
            for k in 0..D {
                dx[k] = xi[k] - x[j * D + k];
                r2 += dx[k] * dx[k];
            }
            let f = eval.factor(r2);
            for k in 0..D {
                acc[k] += f * dx[k];
            }
        }
        for k in 0..D {
            row[k] = acc[k] * inv;
        }
    });
}

fn direct_forces_dyn(x: &[f64], d: usize, eval: &KernelEval, out: &mut [f64]) {
    let n = x.len() / d;
    let inv = 1.0 / (n as f64 - 1.0);
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let xi = &x[i * d..(i + 1) * d];
        let mut acc = vec![0.0f64; d];
        let mut dx = vec![0.0f64; d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut r2 = 0.0;
            for k in 0..d {
                dx[k] = xi[k] - x[j * d + k];
                r2 += dx[k] * dx[k];
            }
            let f = eval.factor(r2);
            for k in 0..d {
                acc[k] += f * dx[k];
            }
        }
        for (o, a) in row.iter_mut().zip(&acc) {
            *o = a * inv;
        }
    });
}

/// Particle order sorted by uniform spatial cell (ties broken by index),
/// so that near particles are adjacent in memory during summation.
fn cell_sorted_order(x: &[f64], d: usize, cutoff: f64) -> Vec<u32> {
    let n = x.len() / d;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in x.chunks_exact(d) {
        for a in 0..d {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let max_extent = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let edge = cutoff.max(max_extent / 64.0);
    let cells_per_axis: Vec<u64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| (((h - l) / edge).ceil() as u64).clamp(1, 64))
        .collect();
    let mut keyed: Vec<(u64, u32)> = (0..n)
        .map(|i| {
            let p = &x[i * d..(i + 1) * d];
            let mut key = 0u64;
            for a in 0..d {
                let c = (((p[a] - lo[a]) / edge) as u64).min(cells_per_axis[a] - 1);
                key = key * cells_per_axis[a] + c;
            }
            (key, i as u32)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Mean-field force at each query point: midpoint-rule quadrature of
/// `int k^N(p - y) rho(y) dy` over the grid cells (only cells carrying mass
/// contribute). `rho` must be normalized to total mass 1; query points must
/// lie inside a 2x padded copy of the grid box.
pub fn meanfield_force(
    points: &[f64],
    rho: &DensityGrid,
    spec: &KernelSpec,
) -> Result<Vec<f64>> {
    let d = spec.d;
    if rho.axes() != d {
        return Err(Error::GeometryMismatch(format!(
            "density grid has {} axes, kernel dimension is {}",
            rho.axes(),
            d
        )));
    }
    if points.len() % d != 0 {
        return Err(Error::InvalidSpec("query array must be M x d".into()));
    }
    let total = rho.total_mass();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidSpec(format!(
            "density grid is not normalized (total mass {total})"
        )));
    }
    // 2x padded support box
    let lo = rho.lower();
    let hi = rho.upper();
    let mut pad_lo = vec![0.0; d];
    let mut pad_hi = vec![0.0; d];
    for a in 0..d {
        let c = 0.5 * (lo[a] + hi[a]);
        let e = 0.5 * (hi[a] - lo[a]);
        pad_lo[a] = c - 2.0 * e;
        pad_hi[a] = c + 2.0 * e;
    }
    for p in points.chunks_exact(d) {
        if (0..d).any(|a| p[a] < pad_lo[a] || p[a] > pad_hi[a]) {
            return Err(Error::OutsideSupport {
                point: p.to_vec(),
                lo: pad_lo,
                hi: pad_hi,
            });
        }
    }

    let eval = KernelEval::new(spec, Some(MollifierProfile::standard_bump()))?;
    // flatten occupied cells once: [c_0 .. c_{d-1}, mass] per entry
    let mut occupied: Vec<f64> = Vec::new();
    rho.for_each_nonzero(|center, mass| {
        occupied.extend_from_slice(center);
        occupied.push(mass);
    });

    let mut out = vec![0.0; points.len()];
    match d {
        1 => quadrature_forces::<1>(points, &occupied, &eval, &mut out),
        2 => quadrature_forces::<2>(points, &occupied, &eval, &mut out),
        3 => quadrature_forces::<3>(points, &occupied, &eval, &mut out),
        _ => quadrature_forces_dyn(points, d, &occupied, &eval, &mut out),
    }
    Ok(out)
}

fn quadrature_forces<const D: usize>(
    points: &[f64],
    occupied: &[f64],
    eval: &KernelEval,
    out: &mut [f64],
) {
    out.par_chunks_mut(D).enumerate().for_each(|(q, row)| {
        let p: &[f64; D] = points[q * D..(q + 1) * D].try_into().unwrap();
        let mut acc = [0.0f64; D];
        for entry in occupied.chunks_exact(D + 1) {
            let mut dx = [0.0f64; D];
            let mut r2 = 0.0;
            for k in 0..D {
                dx[k] = p[k] - entry[k];
                r2 += dx[k] * dx[k];
            }
            let f = eval.factor(r2) * entry[D];
            for k in 0..D {
                acc[k] += f * dx[k];
            }
        }
        row.copy_from_slice(&acc);
    });
}

fn quadrature_forces_dyn(
    points: &[f64],
    d: usize,
    occupied: &[f64],
    eval: &KernelEval,
    out: &mut [f64],
) {
    out.par_chunks_mut(d).enumerate().for_each(|(q, row)| {
        let p = &points[q * d..(q + 1) * d];
        let mut acc = vec![0.0f64; d];
        let mut dx = vec![0.0f64; d];
        for entry in occupied.chunks_exact(d + 1) {
            let mut r2 = 0.0;
            for k in 0..d {
                dx[k] = p[k] - entry[k];
                r2 += dx[k] * dx[k];
            }
            let f = eval.factor(r2) * entry[d];
            for k in 0..d {
                acc[k] += f * dx[k];
            }
        }
        row.copy_from_slice(&acc);
    });
}

/// One Euler-Maruyama step: `x' = x + v dt` (pre-step velocity),
/// `v' = v + a dt + sqrt(2 sigma) dB`. `step` only labels the blow-up
/// diagnostic.
pub fn em_step(
    state: &PhaseState,
    forces: &[f64],
    params: &SdeParams,
    increments: &[f64],
    step: usize,
) -> Result<PhaseState> {
    let (n, d) = (state.n(), state.d());
    if forces.len() != n * d || increments.len() != n * d {
        return Err(Error::InvalidSpec("force/increment shapes must be N x d".into()));
    }
    let dt = params.dt;
    let noise_scale = (2.0 * params.sigma).sqrt();
    let mut x = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    for idx in 0..n * d {
        x[idx] = state.x[idx] + state.v[idx] * dt;
        v[idx] = state.v[idx] + forces[idx] * dt + noise_scale * increments[idx];
    }
    let out = PhaseState {
        t: state.t + dt,
        n,
        d,
        x,
        v,
    };
    if let Some(particle) = out.first_non_finite() {
        let force_norm = forces[particle * d..(particle + 1) * d]
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt();
        return Err(Error::BlowUp {
            step,
            t: out.t,
            particle,
            force_norm,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Sign;

    fn lp_spec(d: usize, delta: f64, n: usize) -> KernelSpec {
        KernelSpec::new(Sign::Repulsive, d, None, KernelFamily::Lp, delta, n).unwrap()
    }

    #[test]
    fn brownian_increment_is_deterministic() {
        let a = brownian_increment(7, 3, 11, 3, 0.01);
        let b = brownian_increment(7, 3, 11, 3, 0.01);
        assert_eq!(a, b);
        let c = brownian_increment(7, 3, 12, 3, 0.01);
        assert_ne!(a, c);
    }

    #[test]
    fn brownian_increment_variance() {
        let dt = 0.02;
        let m = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..m {
            let z = brownian_increment(1, i, 0, 1, dt)[0];
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / m as f64;
        let var = sumsq / m as f64 - mean * mean;
        assert!((var - dt).abs() < 0.01 * dt, "var {var} vs {dt}");
    }

    #[test]
    fn brownian_steps_uncorrelated() {
        let m = 200_000;
        let mut s01 = 0.0;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut q0 = 0.0;
        let mut q1 = 0.0;
        for i in 0..m {
            let a = brownian_increment(9, i, 0, 1, 1.0)[0];
            let b = brownian_increment(9, i, 1, 1, 1.0)[0];
            s01 += a * b;
            s0 += a;
            s1 += b;
            q0 += a * a;
            q1 += b * b;
        }
        let n = m as f64;
        let cov = s01 / n - (s0 / n) * (s1 / n);
        let r = cov / ((q0 / n - (s0 / n).powi(2)).sqrt() * (q1 / n - (s1 / n).powi(2)).sqrt());
        assert!(r.abs() < 0.01, "correlation {r}");
    }

    #[test]
    fn two_body_forces_are_antisymmetric() {
        let spec = lp_spec(3, 0.3, 2);
        let x = vec![0.5, 0.0, 0.0, -0.5, 0.0, 0.0];
        let state = PhaseState::new(0.0, 3, x, vec![0.0; 6]).unwrap();
        let f = pairwise_force(&state, &spec, ForcePath::Direct).unwrap();
        // a_1 = k^N(x_1 - x_2), and a_2 = -a_1
        let k = crate::kernels::kernel_lp(&[1.0, 0.0, 0.0], &spec);
        for c in 0..3 {
            assert!((f[c] - k[c]).abs() < 1e-15);
            assert!((f[3 + c] + k[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_particles_feel_no_force() {
        let spec = lp_spec(3, 0.3, 4);
        let state = PhaseState::new(0.0, 3, vec![0.25; 12], vec![0.0; 12]).unwrap();
        let f = pairwise_force(&state, &spec, ForcePath::Direct).unwrap();
        assert!(f.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn tetrahedron_matches_hand_summation() {
        // regular tetrahedron, edge length sqrt(2) > cutoff: exact Coulomb pairs
        let spec = lp_spec(3, 0.5, 4);
        let verts: [[f64; 3]; 4] = [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let x: Vec<f64> = verts.iter().flatten().copied().collect();
        let state = PhaseState::new(0.0, 3, x, vec![0.0; 12]).unwrap();
        let f = pairwise_force(&state, &spec, ForcePath::Direct).unwrap();
        for i in 0..4 {
            let mut hand = [0.0f64; 3];
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let dx: Vec<f64> = (0..3).map(|k| verts[i][k] - verts[j][k]).collect();
                let k = crate::kernels::coulomb_kernel(&dx, &spec).unwrap();
                for c in 0..3 {
                    hand[c] += k[c] / 3.0;
                }
            }
            for c in 0..3 {
                assert!((f[i * 3 + c] - hand[c]).abs() < 1e-14, "particle {i}");
            }
        }
    }

    #[test]
    fn cell_list_agrees_with_direct() {
        let spec = lp_spec(3, 0.25, 300);
        let mut stream = CounterStream::for_words(&[21, label::TEST]);
        let x: Vec<f64> = (0..900).map(|_| stream.uniform_in(-2.0, 2.0)).collect();
        let state = PhaseState::new(0.0, 3, x, vec![0.0; 900]).unwrap();
        let fd = pairwise_force(&state, &spec, ForcePath::Direct).unwrap();
        let fc = pairwise_force(&state, &spec, ForcePath::CellList).unwrap();
        for (a, b) in fd.iter().zip(&fc) {
            assert!((a - b).abs() <= 1e-12, "direct {a} vs cell-list {b}");
        }
    }

    #[test]
    fn force_paths_are_thread_count_invariant() {
        let spec = lp_spec(3, 0.25, 200);
        let mut stream = CounterStream::for_words(&[22, label::TEST]);
        let x: Vec<f64> = (0..600).map(|_| stream.uniform_in(-2.0, 2.0)).collect();
        let state = PhaseState::new(0.0, 3, x, vec![0.0; 600]).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| pairwise_force(&state, &spec, ForcePath::CellList).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| pairwise_force(&state, &spec, ForcePath::CellList).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn momentum_is_conserved_without_noise() {
        let spec = lp_spec(3, 0.3, 64);
        let mut stream = CounterStream::for_words(&[23, label::TEST]);
        let x: Vec<f64> = (0..192).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
        let v: Vec<f64> = (0..192).map(|_| stream.uniform_in(-1.0, 1.0)).collect();
        let mut state = PhaseState::new(0.0, 3, x, v).unwrap();
        let p0: f64 = state.v.iter().sum();
        let params = SdeParams {
            sigma: 0.0,
            dt: 1e-2,
            t_end: 0.2,
            seed: 0,
        };
        let zero = vec![0.0; 192];
        for step in 0..params.n_steps() {
            let f = pairwise_force(&state, &spec, ForcePath::Direct).unwrap();
            state = em_step(&state, &f, &params, &zero, step).unwrap();
        }
        let p1: f64 = state.v.iter().sum();
        assert!((p1 - p0).abs() < 1e-10 * (1.0 + p0.abs()), "{p0} -> {p1}");
    }

    #[test]
    fn em_free_streaming() {
        let state = PhaseState::new(
            0.0,
            1,
            vec![0.0, 1.0],
            vec![2.0, -1.0],
        )
        .unwrap();
        let params = SdeParams {
            sigma: 0.0,
            dt: 0.5,
            t_end: 0.5,
            seed: 0,
        };
        let out = em_step(&state, &[0.0, 0.0], &params, &[0.0, 0.0], 0).unwrap();
        assert_eq!(out.x, vec![1.0, 0.5]);
        assert_eq!(out.v, vec![2.0, -1.0]);
        assert_eq!(out.t, 0.5);
    }

    #[test]
    fn em_constant_force_linear_growth() {
        let mut state =
            PhaseState::new(0.0, 1, vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let params = SdeParams {
            sigma: 0.0,
            dt: 0.1,
            t_end: 1.0,
            seed: 0,
        };
        let f = vec![2.0, -3.0];
        let zero = vec![0.0, 0.0];
        for step in 0..10 {
            state = em_step(&state, &f, &params, &zero, step).unwrap();
        }
        assert!((state.v[0] - 2.0).abs() < 1e-12);
        assert!((state.v[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn em_reports_blow_up() {
        let state = PhaseState::new(0.0, 1, vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let params = SdeParams {
            sigma: 0.0,
            dt: 0.5,
            t_end: 0.5,
            seed: 0,
        };
        let err = em_step(&state, &[f64::INFINITY, 0.0], &params, &[0.0, 0.0], 7)
            .unwrap_err();
        match err {
            Error::BlowUp { step, particle, .. } => {
                assert_eq!(step, 7);
                assert_eq!(particle, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn meanfield_symmetric_density_zero_at_origin() {
        let rho = DensityGrid::from_density_fn(
            |p| (-p.iter().map(|a| a * a).sum::<f64>()).exp(),
            &[-3.0, -3.0, -3.0],
            &[3.0, 3.0, 3.0],
            &[16, 16, 16],
            true,
        )
        .unwrap();
        let spec = KernelSpec::new(Sign::Repulsive, 3, None, KernelFamily::Lp, 0.3, 1000)
            .unwrap();
        let f = meanfield_force(&[0.0, 0.0, 0.0], &rho, &spec).unwrap();
        for c in f {
            assert!(c.abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn meanfield_matches_1d_uniform_closed_form() {
        // rho uniform on [-1,1], exact kernel, c_1 = 1/2: field is x/2
        let rho = DensityGrid::from_density_fn(
            |_| 0.5,
            &[-1.0],
            &[1.0],
            &[512],
            true,
        )
        .unwrap();
        let spec =
            KernelSpec::new(Sign::Repulsive, 1, Some(0.5), KernelFamily::Exact, 0.3, 1000)
                .unwrap();
        for q in [-0.7, -0.2, 0.31, 0.66] {
            let f = meanfield_force(&[q], &rho, &spec).unwrap();
            assert!((f[0] - q / 2.0).abs() < 2e-3, "q = {q}: {}", f[0]);
        }
    }

    #[test]
    fn meanfield_far_point_mass_reduces_to_kernel() {
        let mut mass = vec![0.0; 8 * 8 * 8];
        mass[0] = 1.0; // cell center at lower corner + half cell
        let rho = DensityGrid::from_parts(
            vec![0.0, 0.0, 0.0],
            vec![0.25, 0.25, 0.25],
            vec![8, 8, 8],
            mass,
            0.0,
        )
        .unwrap();
        let spec = lp_spec(3, 0.5, 100);
        let q = [1.5, 1.0, 0.75];
        let f = meanfield_force(&q, &rho, &spec).unwrap();
        let dx = [q[0] - 0.125, q[1] - 0.125, q[2] - 0.125];
        let k = crate::kernels::coulomb_kernel(&dx, &spec).unwrap();
        for c in 0..3 {
            assert!((f[c] - k[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn meanfield_rejects_outside_query() {
        let rho =
            DensityGrid::from_density_fn(|_| 1.0, &[0.0], &[1.0], &[8], true).unwrap();
        let spec =
            KernelSpec::new(Sign::Repulsive, 1, None, KernelFamily::Lp, 0.3, 100).unwrap();
        // grid box [0,1], 2x padded box [-0.5, 1.5]
        assert!(meanfield_force(&[1.4], &rho, &spec).is_ok());
        assert!(matches!(
            meanfield_force(&[1.6], &rho, &spec),
            Err(Error::OutsideSupport { .. })
        ));
    }
}
