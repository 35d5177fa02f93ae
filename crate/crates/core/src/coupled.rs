//! Synchronous-coupling runs: the interacting N-body flow and its
//! McKean-Vlasov mean-field copy evolve from identical initial samples and
//! consume identical Brownian increments, so their pathwise distance is the
//! coupling deviation the convergence statements bound.
//!
//! The mean-field copy closes its own drift self-consistently: the position
//! density is re-estimated from the copy ensemble (histogram plus
//! truncated-Gaussian smoothing on a 3-sigma-padded box of both ensembles)
//! every `refresh_every` steps. That closure bias is reported through the
//! grid metadata rather than hidden.

use crate::dynamics::{
    brownian_increment_into, brownian_key, em_step, meanfield_force, pairwise_force, ForcePath,
    PhaseState, SdeParams,
};
use crate::error::{Error, Result};
use crate::grid::{padded_box, DensityGrid};
use crate::initial::{InitialDensity, InitialDensitySpec};
use crate::kernels::{KernelFamily, KernelSpec, Sign};
use crate::metrics::{coupling_deviation, coupling_deviation_parts};
use crate::vp1d::KineticGrid1D;

/// Fraction of ensemble mass the density grid may clip before the run is
/// flagged.
pub const CLIP_FLAG_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConfig {
    pub n: usize,
    pub d: usize,
    pub sign: Sign,
    /// Kernel normalization; `None` picks the Poisson default `1/|S^(d-1)|`.
    pub c_d: Option<f64>,
    pub family: KernelFamily,
    pub delta: f64,
    pub sigma: f64,
    /// Step size; `None` applies the policy `min(1e-2, 0.1 / sup|k^N|)`.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub seed: u64,
    pub initial: InitialDensitySpec,
    pub force_path: ForcePath,
    /// Mean-field density refresh cadence in steps (1 = every step).
    pub refresh_every: usize,
    /// Cells per axis of the position-space force grid.
    pub force_cells: usize,
    /// Smoothing bandwidth in cells.
    pub bandwidth_cells: f64,
    /// Times at which full phase states are captured.
    pub output_times: Vec<f64>,
}

impl CoupledConfig {
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.sign, self.d, self.c_d, self.family, self.delta, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec("coupled runs need N >= 2".into()));
        }
        if self.refresh_every == 0 {
            return Err(Error::InvalidSpec("refresh_every must be >= 1".into()));
        }
        if self.force_cells < 2 {
            return Err(Error::InvalidSpec("force grid needs >= 2 cells per axis".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidSpec("t_end must be positive".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidSpec("sigma must be nonnegative".into()));
        }
        if self.initial.d != self.d {
            return Err(Error::InvalidSpec(
                "initial density dimension must match the dynamics".into(),
            ));
        }
        self.kernel_spec()?.validate()
    }

    /// Step-size policy: explicit `dt`, else `min(1e-2, 0.1 / sup|k^N|)`
    /// (the force magnitude, not the Lipschitz constant, is what limits the
    /// Euler-Maruyama kick size here).
    pub fn resolve_dt(&self) -> Result<f64> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidSpec("dt must be positive".into()));
            }
            return Ok(dt.min(self.t_end));
        }
        let spec = self.kernel_spec()?;
        let sup = spec.sup_bound().ok_or_else(|| {
            Error::InvalidSpec("dt policy needs a bounded (regularized) kernel".into())
        })?;
        Ok((1e-2f64).min(0.1 / sup).min(self.t_end))
    }
}

/// Per-step deviation record; the exceedance event is always evaluated from
/// these, never from endpoint data alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationRecord {
    pub step: usize,
    pub t: f64,
    /// `max_i |x_i - xbar_i|`
    pub dev_x: f64,
    /// `max_i |v_i - vbar_i|`
    pub dev_v: f64,
    /// `sqrt(log N) dev_x + dev_v`
    pub deviation: f64,
    pub running_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub phi: PhaseState,
    pub psi: PhaseState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    pub sigma: f64,
    pub family: KernelFamily,
    pub seed: u64,
    pub dt: f64,
    pub records: Vec<DeviationRecord>,
    pub sup_deviation: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Largest clipped-mass fraction seen by any density refresh.
    pub max_clipped_mass: f64,
    /// True if any refresh clipped more than [`CLIP_FLAG_THRESHOLD`].
    pub clip_flagged: bool,
    pub increment_checksum_phi: u64,
    pub increment_checksum_psi: u64,
    /// (force grid cells per axis, smoothing bandwidth in cells)
    pub grid_meta: (usize, f64),
}

fn fold_checksum(acc: u64, key: u64) -> u64 {
    acc.wrapping_mul(0x0000_0100_0000_01b3).wrapping_add(key)
}

/// Estimates the position density of `sample_points` on a 3-sigma-padded
/// box of `box_points`, with histogram + smoothing, normalized to mass 1.
pub fn estimate_position_density(
    sample_points: &[f64],
    box_points: &[f64],
    d: usize,
    cells: usize,
    bandwidth: f64,
) -> Result<DensityGrid> {
    let (lo, hi) = padded_box(box_points, d, 3.0);
    let shape = vec![cells; d];
    let hist = DensityGrid::histogram(sample_points, d, &lo, &hi, &shape)?;
    let mut smooth = hist.kde_smooth(bandwidth);
    smooth.normalize_to(1.0);
    Ok(smooth)
}

/// Evolves the coupled pair and records the deviation at every step.
/// With `sigma = 0` the same routine produces the noiseless Vlasov-Poisson
/// characteristics comparison.
pub fn run_coupled(cfg: &CoupledConfig) -> Result<CoupledRun> {
    cfg.validate()?;
    let spec = cfg.kernel_spec()?;
    let f0 = InitialDensity::new(cfg.initial)?;
    let init = f0.sample(cfg.n, cfg.seed)?;
    let mut phi = init.clone();
    let mut psi = init;
    let dt = cfg.resolve_dt()?;
    let (n, d) = (cfg.n, cfg.d);

    let mut output_times = cfg.output_times.clone();
    output_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    output_times.dedup();
    let mut next_output = 0usize;

    let mut run = CoupledRun {
        n,
        d,
        delta: cfg.delta,
        sigma: cfg.sigma,
        family: cfg.family,
        seed: cfg.seed,
        dt,
        records: Vec::new(),
        sup_deviation: 0.0,
        checkpoints: Vec::new(),
        max_clipped_mass: 0.0,
        clip_flagged: false,
        increment_checksum_phi: 0,
        increment_checksum_psi: 0,
        grid_meta: (cfg.force_cells, cfg.bandwidth_cells),
    };

    while next_output < output_times.len() && output_times[next_output] <= 1e-12 {
        run.checkpoints.push(Checkpoint {
            t: 0.0,
            phi: phi.clone(),
            psi: psi.clone(),
        });
        next_output += 1;
    }

    let steps = (cfg.t_end / dt).ceil() as usize;
    let mut rho: Option<DensityGrid> = None;
    let mut increments = vec![0.0; n * d];
    let mut union = vec![0.0; 2 * n * d];
    let mut t = 0.0;

    for step in 0..steps {
        let dt_s = dt.min(cfg.t_end - t);
        if dt_s <= 0.0 {
            break;
        }
        let params = SdeParams {
            sigma: cfg.sigma,
            dt: dt_s,
            t_end: cfg.t_end,
            seed: cfg.seed,
        };

        if step % cfg.refresh_every == 0 || rho.is_none() {
            union[..n * d].copy_from_slice(&phi.x);
            union[n * d..].copy_from_slice(&psi.x);
            let grid = estimate_position_density(
                &psi.x,
                &union,
                d,
                cfg.force_cells,
                cfg.bandwidth_cells,
            )?;
            run.max_clipped_mass = run.max_clipped_mass.max(grid.clipped_mass());
            if grid.clipped_mass() > CLIP_FLAG_THRESHOLD {
                run.clip_flagged = true;
            }
            rho = Some(grid);
        }

        let f_phi = pairwise_force(&phi, &spec, cfg.force_path)?;
        let f_psi = meanfield_force(&psi.x, rho.as_ref().unwrap(), &spec)?;

        for i in 0..n {
            brownian_increment_into(cfg.seed, i, step, dt_s, &mut increments[i * d..(i + 1) * d]);
        }
        // both flows consume the same increment stream; fold the keys on
        // each application so the coupling wiring is auditable
        for i in 0..n {
            run.increment_checksum_phi =
                fold_checksum(run.increment_checksum_phi, brownian_key(cfg.seed, i, step));
        }
        phi = em_step(&phi, &f_phi, &params, &increments, step)?;
        for i in 0..n {
            run.increment_checksum_psi =
                fold_checksum(run.increment_checksum_psi, brownian_key(cfg.seed, i, step));
        }
        psi = em_step(&psi, &f_psi, &params, &increments, step)?;
        t += dt_s;

        let (dev_x, dev_v) = coupling_deviation_parts(&phi, &psi)?;
        let deviation = coupling_deviation(&phi, &psi)?;
        run.sup_deviation = run.sup_deviation.max(deviation);
        run.records.push(DeviationRecord {
            step: step + 1,
            t,
            dev_x,
            dev_v,
            deviation,
            running_sup: run.sup_deviation,
        });

        while next_output < output_times.len() && output_times[next_output] <= t + 1e-9 {
            run.checkpoints.push(Checkpoint {
                t,
                phi: phi.clone(),
                psi: psi.clone(),
            });
            next_output += 1;
        }
    }

    assert_eq!(
        run.increment_checksum_phi, run.increment_checksum_psi,
        "coupling invariant violated: the flows consumed different increments"
    );
    Ok(run)
}

/// Snapshot trajectory of a single (uncoupled) system.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRun {
    pub dt: f64,
    pub checkpoints: Vec<(f64, PhaseState)>,
    pub final_state: PhaseState,
}

/// Evolves the interacting system alone (pairwise forces, no mean-field
/// copy); used when only the particle law is needed.
pub fn run_interacting(cfg: &CoupledConfig) -> Result<TrajectoryRun> {
    cfg.validate()?;
    let spec = cfg.kernel_spec()?;
    let f0 = InitialDensity::new(cfg.initial)?;
    let mut state = f0.sample(cfg.n, cfg.seed)?;
    let dt = cfg.resolve_dt()?;
    let (n, d) = (cfg.n, cfg.d);

    let mut output_times = cfg.output_times.clone();
    output_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    output_times.dedup();
    let mut next_output = 0usize;
    let mut checkpoints = Vec::new();
    while next_output < output_times.len() && output_times[next_output] <= 1e-12 {
        checkpoints.push((0.0, state.clone()));
        next_output += 1;
    }

    let steps = (cfg.t_end / dt).ceil() as usize;
    let mut increments = vec![0.0; n * d];
    let mut t = 0.0;
    for step in 0..steps {
        let dt_s = dt.min(cfg.t_end - t);
        if dt_s <= 0.0 {
            break;
        }
        let params = SdeParams {
            sigma: cfg.sigma,
            dt: dt_s,
            t_end: cfg.t_end,
            seed: cfg.seed,
        };
        let f = pairwise_force(&state, &spec, cfg.force_path)?;
        for i in 0..n {
            brownian_increment_into(cfg.seed, i, step, dt_s, &mut increments[i * d..(i + 1) * d]);
        }
        state = em_step(&state, &f, &params, &increments, step)?;
        t += dt_s;
        while next_output < output_times.len() && output_times[next_output] <= t + 1e-9 {
            checkpoints.push((t, state.clone()));
            next_output += 1;
        }
    }
    Ok(TrajectoryRun {
        dt,
        checkpoints,
        final_state: state,
    })
}

/// Where the mean-field drift density comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    /// Histogram + smoothing of the ensemble itself.
    SelfConsistent,
    /// Co-evolved d = 1 kinetic solver sharing the same initial density;
    /// the particle force is the interpolated prefix-sum field.
    Kinetic1d {
        x_range: (f64, f64),
        v_range: (f64, f64),
        nx: usize,
        nv: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldConfig {
    pub base: CoupledConfig,
    pub source: DensitySource,
}

/// Evolves an ensemble of independent mean-field trajectories
/// (`dx = v dt`, `dv = k * rho(x) dt + sqrt(2 sigma) dB`) with the drift
/// density supplied by the configured source.
pub fn run_meanfield(cfg: &MeanFieldConfig) -> Result<TrajectoryRun> {
    cfg.base.validate()?;
    let spec = cfg.base.kernel_spec()?;
    let f0 = InitialDensity::new(cfg.base.initial)?;
    let mut state = f0.sample(cfg.base.n, cfg.base.seed)?;
    let (n, d) = (cfg.base.n, cfg.base.d);

    let mut kinetic = match &cfg.source {
        DensitySource::SelfConsistent => None,
        DensitySource::Kinetic1d {
            x_range,
            v_range,
            nx,
            nv,
        } => {
            if d != 1 {
                return Err(Error::InvalidSpec(
                    "the kinetic density source is d = 1 only".into(),
                ));
            }
            let density = f0.clone();
            Some(KineticGrid1D::from_density_fn(
                move |x, v| density.density(&[x], &[v]),
                *x_range,
                *v_range,
                *nx,
                *nv,
                cfg.base.sigma,
                cfg.base.sign,
                spec.c_d,
                true,
            )?)
        }
    };

    // respect the PDE CFL limit when co-evolving
    let mut dt = cfg.base.resolve_dt()?;
    if let Some(grid) = &kinetic {
        let vmax = grid.v0.abs().max(grid.v1.abs());
        let cfl = grid.dx() / vmax;
        if dt > cfl {
            dt = cfl * 0.9;
        }
    }

    let mut output_times = cfg.base.output_times.clone();
    output_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    output_times.dedup();
    let mut next_output = 0usize;
    let mut checkpoints = Vec::new();
    while next_output < output_times.len() && output_times[next_output] <= 1e-12 {
        checkpoints.push((0.0, state.clone()));
        next_output += 1;
    }

    let steps = (cfg.base.t_end / dt).ceil() as usize;
    let mut rho: Option<DensityGrid> = None;
    let mut increments = vec![0.0; n * d];
    let mut t = 0.0;
    for step in 0..steps {
        let dt_s = dt.min(cfg.base.t_end - t);
        if dt_s <= 0.0 {
            break;
        }
        let params = SdeParams {
            sigma: cfg.base.sigma,
            dt: dt_s,
            t_end: cfg.base.t_end,
            seed: cfg.base.seed,
        };
        let forces = match &mut kinetic {
            Some(grid) => {
                let f = grid.field_at(&state.x);
                grid.splitting_step(dt_s)?;
                f
            }
            None => {
                if step % cfg.base.refresh_every == 0 || rho.is_none() {
                    rho = Some(estimate_position_density(
                        &state.x,
                        &state.x,
                        d,
                        cfg.base.force_cells,
                        cfg.base.bandwidth_cells,
                    )?);
                }
                meanfield_force(&state.x, rho.as_ref().unwrap(), &spec)?
            }
        };
        for i in 0..n {
            brownian_increment_into(
                cfg.base.seed,
                i,
                step,
                dt_s,
                &mut increments[i * d..(i + 1) * d],
            );
        }
        state = em_step(&state, &forces, &params, &increments, step)?;
        t += dt_s;
        while next_output < output_times.len() && output_times[next_output] <= t + 1e-9 {
            checkpoints.push((t, state.clone()));
            next_output += 1;
        }
    }
    Ok(TrajectoryRun {
        dt,
        checkpoints,
        final_state: state,
    })
}

/// Noiseless Vlasov-Poisson characteristics: [`run_meanfield`] with
/// `sigma = 0` regardless of the configured value.
pub fn characteristics_vp(cfg: &MeanFieldConfig) -> Result<TrajectoryRun> {
    let mut quiet = cfg.clone();
    quiet.base.sigma = 0.0;
    run_meanfield(&quiet)
}
