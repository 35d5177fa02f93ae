//! Sweep orchestration: runs the (N, sigma, seed) matrix of coupled
//! simulations, evaluates the selected metrics at the output times, and
//! persists everything as versioned CSV plus a JSON summary.
//!
//! Persistence is atomic at the batch level: each cell's rows land in
//! `rows/cell_NNNN.csv` via temp-file-plus-rename, and the assembled
//! `metrics.csv` / `summary.json` are renamed into place at the end, so a
//! killed sweep never leaves partial rows behind. Cells run in a worker
//! pool; every run is a pure function of (config, seed), so reruns are
//! byte-identical regardless of the thread budget.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::coupled::{estimate_position_density, run_coupled, Checkpoint, CoupledConfig};
use crate::error::{Error, Result};
use crate::grid::{padded_box, DensityGrid};
use crate::harness::config::{ExperimentConfig, MetricKind, Pde1dConfig, TheoremMode};
use crate::harness::report::{build_summary, SweepSummary};
use crate::harness::snapshot::{write_snapshot, Snapshot};
use crate::kernels::KernelSpec;
use crate::metrics;
use crate::vp1d::KineticGrid1D;

pub const CSV_SCHEMA: &str = "vpfp-metrics-v1";

/// One cell of the sweep matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// One CSV row: metrics of one run at one output time. Unselected metrics
/// stay `None` and produce no column.
#[derive(Debug, Clone, Default)]
pub struct MetricRow {
    pub n: usize,
    pub delta: f64,
    pub sigma: f64,
    pub seed: u64,
    pub t: f64,
    pub clipped: f64,
    pub dev: Option<f64>,
    pub sup_dev: Option<f64>,
    pub exceed: Option<bool>,
    pub threshold: Option<f64>,
    pub w2: Option<f64>,
    pub w2_sliced: Option<f64>,
    pub w2_sliced_se: Option<f64>,
    pub h1: Option<f64>,
    pub l1: Option<f64>,
    pub ckp_slack: Option<f64>,
    pub lln: Option<f64>,
}

/// Canonical column order; the column set is a function of the metric
/// selection only.
pub fn csv_columns(selection: &[MetricKind]) -> Vec<&'static str> {
    let mut cols = vec!["schema", "n", "delta", "sigma", "seed", "t", "clipped"];
    let has = |k: MetricKind| selection.contains(&k);
    if has(MetricKind::Deviation) {
        cols.push("dev");
        cols.push("sup_dev");
    }
    if has(MetricKind::Exceedance) {
        cols.push("exceed");
        cols.push("threshold");
    }
    if has(MetricKind::W2Exact) {
        cols.push("w2");
    }
    if has(MetricKind::W2Sliced) {
        cols.push("w2_sliced");
        cols.push("w2_sliced_se");
    }
    if has(MetricKind::Kl1) || has(MetricKind::Ckp) {
        cols.push("h1");
    }
    if has(MetricKind::L1) || has(MetricKind::Ckp) {
        cols.push("l1");
    }
    if has(MetricKind::Ckp) {
        cols.push("ckp_slack");
    }
    if has(MetricKind::Lln) {
        cols.push("lln");
    }
    cols
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl MetricRow {
    fn field(&self, col: &str) -> String {
        match col {
            "schema" => CSV_SCHEMA.to_string(),
            "n" => self.n.to_string(),
            "delta" => fmt_f64(self.delta),
            "sigma" => fmt_f64(self.sigma),
            "seed" => self.seed.to_string(),
            "t" => fmt_f64(self.t),
            "clipped" => fmt_f64(self.clipped),
            "dev" => self.dev.map(fmt_f64).unwrap_or_default(),
            "sup_dev" => self.sup_dev.map(fmt_f64).unwrap_or_default(),
            "exceed" => self
                .exceed
                .map(|e| if e { "1" } else { "0" }.to_string())
                .unwrap_or_default(),
            "threshold" => self.threshold.map(fmt_f64).unwrap_or_default(),
            "w2" => self.w2.map(fmt_f64).unwrap_or_default(),
            "w2_sliced" => self.w2_sliced.map(fmt_f64).unwrap_or_default(),
            "w2_sliced_se" => self.w2_sliced_se.map(fmt_f64).unwrap_or_default(),
            "h1" => self.h1.map(fmt_f64).unwrap_or_default(),
            "l1" => self.l1.map(fmt_f64).unwrap_or_default(),
            "ckp_slack" => self.ckp_slack.map(fmt_f64).unwrap_or_default(),
            "lln" => self.lln.map(fmt_f64).unwrap_or_default(),
            other => panic!("unknown column {other}"),
        }
    }

    fn to_csv_line(&self, cols: &[&str]) -> String {
        let mut line = String::new();
        for (i, col) in cols.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{}", self.field(col));
        }
        line
    }
}

/// Builds the per-run configuration for one sweep cell.
pub fn cell_config(cfg: &ExperimentConfig, cell: &SweepCell) -> CoupledConfig {
    CoupledConfig {
        n: cell.n,
        d: cfg.d,
        sign: cfg.kernel.sign,
        c_d: cfg.kernel.c_d,
        family: cfg.kernel.family,
        delta: cfg.kernel.delta,
        sigma: cell.sigma,
        dt: cfg.dt,
        t_end: cfg.t_end,
        seed: cell.seed,
        initial: cfg.initial,
        force_path: cfg.force_path,
        refresh_every: cfg.refresh_every,
        force_cells: cfg.grids.force_cells,
        bandwidth_cells: cfg.grids.bandwidth_cells,
        output_times: cfg.resolved_output_times(),
    }
}

/// Phase-space histogram (positions and velocities stacked per particle)
/// of both ensembles on a shared padded box, smoothed and normalized.
fn phase_grids(
    chk: &Checkpoint,
    cells_per_axis: usize,
    bandwidth: f64,
) -> Result<(DensityGrid, DensityGrid)> {
    let (n, d) = (chk.phi.n(), chk.phi.d());
    let axes = 2 * d;
    let mut phi_pts = vec![0.0; n * axes];
    let mut psi_pts = vec![0.0; n * axes];
    for i in 0..n {
        phi_pts[i * axes..i * axes + d].copy_from_slice(chk.phi.pos(i));
        phi_pts[i * axes + d..(i + 1) * axes].copy_from_slice(chk.phi.vel(i));
        psi_pts[i * axes..i * axes + d].copy_from_slice(chk.psi.pos(i));
        psi_pts[i * axes + d..(i + 1) * axes].copy_from_slice(chk.psi.vel(i));
    }
    let mut union = phi_pts.clone();
    union.extend_from_slice(&psi_pts);
    let (lo, hi) = padded_box(&union, axes, 3.0);
    let shape = vec![cells_per_axis; axes];
    let mut p = DensityGrid::histogram(&phi_pts, axes, &lo, &hi, &shape)?.kde_smooth(bandwidth);
    let mut q = DensityGrid::histogram(&psi_pts, axes, &lo, &hi, &shape)?.kde_smooth(bandwidth);
    p.normalize_to(1.0);
    q.normalize_to(1.0);
    Ok((p, q))
}

/// Runs one cell and produces its metric rows.
pub fn run_cell(cfg: &ExperimentConfig, cell: &SweepCell) -> Result<Vec<MetricRow>> {
    let ccfg = cell_config(cfg, cell);
    let run = run_coupled(&ccfg)?;
    let spec = ccfg.kernel_spec()?;
    let threshold = (cell.n as f64).powf(-cfg.threshold_exponent());
    let has = |k: MetricKind| cfg.metrics.contains(&k);

    let mut rows = Vec::with_capacity(run.checkpoints.len());
    for chk in &run.checkpoints {
        let mut row = MetricRow {
            n: cell.n,
            delta: cfg.kernel.delta,
            sigma: cell.sigma,
            seed: cell.seed,
            t: chk.t,
            clipped: run.max_clipped_mass,
            ..Default::default()
        };
        // running sup of the per-step deviation records up to this time
        let (dev, sup) = run
            .records
            .iter()
            .take_while(|r| r.t <= chk.t + 1e-9)
            .last()
            .map(|r| (r.deviation, r.running_sup))
            .unwrap_or((0.0, 0.0));
        if has(MetricKind::Deviation) {
            row.dev = Some(dev);
            row.sup_dev = Some(sup);
        }
        if has(MetricKind::Exceedance) {
            row.exceed = Some(sup > threshold);
            row.threshold = Some(threshold);
        }
        if has(MetricKind::W2Exact) {
            row.w2 = Some(metrics::wasserstein2_exact(&chk.phi.x, &chk.psi.x, cfg.d)?);
        }
        if has(MetricKind::W2Sliced) {
            let s = metrics::wasserstein2_sliced(
                &chk.phi.x,
                &chk.psi.x,
                cfg.d,
                cfg.w2_projections,
                cell.seed,
            )?;
            row.w2_sliced = Some(s.value);
            row.w2_sliced_se = Some(s.std_error);
        }
        if has(MetricKind::Kl1) || has(MetricKind::L1) || has(MetricKind::Ckp) {
            let (p, q) = phase_grids(chk, cfg.phase_cells(), cfg.grids.bandwidth_cells)?;
            let h1 = metrics::kl_divergence(&p, &q)?;
            let l1 = metrics::l1_distance(&p, &q)?;
            if has(MetricKind::Kl1) || has(MetricKind::Ckp) {
                row.h1 = Some(h1);
            }
            if has(MetricKind::L1) || has(MetricKind::Ckp) {
                row.l1 = Some(l1);
            }
            if has(MetricKind::Ckp) {
                row.ckp_slack = Some(metrics::ckp_audit(l1, h1, 1));
            }
        }
        if has(MetricKind::Lln) {
            row.lln = Some(lln_row_statistic(chk, &spec, cfg)?);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-row LLN statistic: the mean-field ensemble is (approximately) an
/// i.i.d. sample of its own estimated law, so
/// `sup_i |k^N * rho_N(x_i) - k^N * rho(x_i)|^(2m)` probes the
/// law-of-large-numbers proposition on live sweep data.
fn lln_row_statistic(
    chk: &Checkpoint,
    spec: &KernelSpec,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    let rho = estimate_position_density(
        &chk.psi.x,
        &chk.psi.x,
        cfg.d,
        cfg.grids.force_cells,
        cfg.grids.bandwidth_cells,
    )?;
    let gap = metrics::empirical_convolution_gap(&chk.psi.x, &rho, spec)?;
    Ok(gap.powi(2 * cfg.lln_m as i32))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub row_count: usize,
    /// (cell, diagnostic) for cells that failed and were skipped.
    pub failures: Vec<(SweepCell, String)>,
    pub summary: SweepSummary,
}

fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Executes the full sweep matrix. Failed cells are recorded with their
/// diagnostic and skipped; the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, out_root: &Path) -> Result<SweepOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let rows_dir = out_root.join("rows");
    std::fs::create_dir_all(&rows_dir).map_err(|e| Error::io(&rows_dir, e))?;

    let mut cells = Vec::new();
    for &n in &cfg.particle_counts {
        for &sigma in &cfg.sigma {
            for &seed in &cfg.seeds {
                cells.push(SweepCell { n, sigma, seed });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let results: Vec<(SweepCell, std::result::Result<Vec<MetricRow>, String>)> =
        pool.install(|| {
            cells
                .par_iter()
                .map(|cell| (*cell, run_cell(cfg, cell).map_err(|e| e.to_string())))
                .collect()
        });

    let cols = csv_columns(&cfg.metrics);
    let header = cols.join(",");
    let mut all_rows = Vec::new();
    let mut failures = Vec::new();
    for (idx, (cell, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(rows) => {
                let mut batch = String::new();
                batch.push_str(&header);
                batch.push('\n');
                for row in rows {
                    batch.push_str(&row.to_csv_line(&cols));
                    batch.push('\n');
                }
                atomic_write(&rows_dir.join(format!("cell_{idx:04}.csv")), batch.as_bytes())?;
                all_rows.extend(rows.iter().cloned());
            }
            Err(diag) => failures.push((*cell, diag.clone())),
        }
    }

    let csv_path = out_root.join("metrics.csv");
    let mut assembled = String::new();
    assembled.push_str(&header);
    assembled.push('\n');
    for row in &all_rows {
        assembled.push_str(&row.to_csv_line(&cols));
        assembled.push('\n');
    }
    atomic_write(&csv_path, assembled.as_bytes())?;

    let failure_notes: Vec<String> = failures
        .iter()
        .map(|(c, d)| format!("n={} sigma={} seed={}: {}", c.n, c.sigma, c.seed, d))
        .collect();
    let summary = build_summary(Some(cfg), &csv_path, failure_notes)?;
    let summary_path = out_root.join("summary.json");
    atomic_write(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;

    Ok(SweepOutput {
        csv_path,
        summary_path,
        row_count: all_rows.len(),
        failures,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub deviations_csv: PathBuf,
    pub snapshots: Vec<PathBuf>,
}

/// Runs the first cell of the matrix (or the whole single-cell config) and
/// writes per-step deviation records plus paired phase snapshots at the
/// output times.
pub fn run_simulate(cfg: &ExperimentConfig, out_root: &Path) -> Result<SimulateOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let cell = SweepCell {
        n: cfg.particle_counts[0],
        sigma: cfg.sigma[0],
        seed: cfg.seeds[0],
    };
    let run = run_coupled(&cell_config(cfg, &cell))?;

    let mut csv = String::from("schema,step,t,dev_x,dev_v,deviation,running_sup\n");
    for r in &run.records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            CSV_SCHEMA, r.step, r.t, r.dev_x, r.dev_v, r.deviation, r.running_sup
        );
    }
    let deviations_csv = out_root.join("deviations.csv");
    atomic_write(&deviations_csv, csv.as_bytes())?;

    let mut snapshots = Vec::new();
    for (k, chk) in run.checkpoints.iter().enumerate() {
        for (tag, state) in [("phi", &chk.phi), ("psi", &chk.psi)] {
            let path = out_root.join(format!("{tag}_{k:02}.vpfp"));
            write_snapshot(&Snapshot::Phase(state.clone()), &path)?;
            snapshots.push(path);
        }
    }
    Ok(SimulateOutput {
        deviations_csv,
        snapshots,
    })
}

#[derive(Debug, Clone)]
pub struct Pde1dOutput {
    pub moments_csv: PathBuf,
    pub snapshot: PathBuf,
}

/// Runs the d = 1 kinetic solver from the configured initial density and
/// writes moment rows at the output times plus a final grid snapshot.
pub fn run_pde1d(cfg: &ExperimentConfig, out_root: &Path) -> Result<Pde1dOutput> {
    if cfg.d != 1 {
        return Err(Error::InvalidSpec(
            "the pde1d solver runs the d = 1 kinetic equation; set d = 1".into(),
        ));
    }
    cfg.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let pde = cfg.pde1d.unwrap_or_default();
    let f0 = crate::initial::InitialDensity::new(cfg.initial)?;
    let c1 = cfg
        .kernel
        .c_d
        .unwrap_or(1.0 / crate::kernels::unit_sphere_area(1));
    let mut grid = KineticGrid1D::from_density_fn(
        move |x, v| f0.density(&[x], &[v]),
        pde.x_range,
        pde.v_range,
        pde.n_x,
        pde.n_v,
        pde.sigma,
        cfg.kernel.sign,
        c1,
        true,
    )?;

    let vmax = grid.v0.abs().max(grid.v1.abs());
    let cfl = grid.dx() / vmax;
    let dt = pde.dt.unwrap_or(0.9 * cfl).min(0.9 * cfl);
    let mut output_times: Vec<f64> = (0..=4).map(|k| pde.t_end * k as f64 / 4.0).collect();
    output_times.dedup();

    let mut csv = String::from(
        "schema,t,mass,momentum,kinetic_energy,v_variance,outflow,clipped_negative\n",
    );
    let mut emit = |g: &mut KineticGrid1D| {
        g.flush_diffusion();
        let m = g.moments();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            CSV_SCHEMA,
            g.t,
            m.mass,
            m.momentum,
            m.kinetic_energy,
            m.v_variance,
            g.outflow,
            g.clipped_negative
        );
    };

    let mut next_output = 0usize;
    if output_times[0] <= 1e-12 {
        emit(&mut grid);
        next_output = 1;
    }
    let mut t = 0.0;
    while t < pde.t_end - 1e-12 {
        let dt_s = dt.min(pde.t_end - t);
        grid.splitting_step(dt_s)?;
        t += dt_s;
        while next_output < output_times.len() && output_times[next_output] <= t + 1e-9 {
            emit(&mut grid);
            next_output += 1;
        }
    }

    let moments_csv = out_root.join("pde1d_moments.csv");
    atomic_write(&moments_csv, csv.as_bytes())?;
    let snapshot = out_root.join("pde1d_final.vpfp");
    grid.flush_diffusion();
    write_snapshot(&Snapshot::Kinetic(grid), &snapshot)?;
    Ok(Pde1dOutput {
        moments_csv,
        snapshot,
    })
}

/// Offline metric computation between two snapshot files of the same kind.
pub fn offline_metrics(
    a_path: &Path,
    b_path: &Path,
    cfg: Option<&ExperimentConfig>,
) -> Result<serde_json::Value> {
    use crate::harness::snapshot::read_snapshot;
    let a = read_snapshot(a_path)?;
    let b = read_snapshot(b_path)?;
    match (a, b) {
        (Snapshot::Phase(phi), Snapshot::Phase(psi)) => {
            let d = phi.d();
            let (dev_x, dev_v) = metrics::coupling_deviation_parts(&phi, &psi)?;
            let deviation = metrics::coupling_deviation(&phi, &psi)?;
            let w2 = if phi.n() <= metrics::EXACT_W2_CAP && phi.n() == psi.n() {
                Some(metrics::wasserstein2_exact(&phi.x, &psi.x, d)?)
            } else {
                None
            };
            let sliced = metrics::wasserstein2_sliced(
                &phi.x,
                &psi.x,
                d,
                cfg.map(|c| c.w2_projections).unwrap_or(256),
                0,
            )?;
            let cells = cfg.map(|c| c.phase_cells()).unwrap_or(match d {
                1 => 32,
                2 => 16,
                _ => 12,
            });
            let bandwidth = cfg.map(|c| c.grids.bandwidth_cells).unwrap_or(2.0);
            let chk = Checkpoint {
                t: phi.t,
                phi,
                psi,
            };
            let (p, q) = phase_grids(&chk, cells, bandwidth)?;
            let h1 = metrics::kl_divergence(&p, &q)?;
            let l1 = metrics::l1_distance(&p, &q)?;
            Ok(serde_json::json!({
                "kind": "phase",
                "deviation": deviation,
                "dev_x": dev_x,
                "dev_v": dev_v,
                "w2_exact": w2,
                "w2_sliced": sliced.value,
                "w2_sliced_se": sliced.std_error,
                "h1": h1,
                "l1": l1,
                "ckp_slack": metrics::ckp_audit(l1, h1, 1),
            }))
        }
        (Snapshot::Density(p), Snapshot::Density(q)) => Ok(serde_json::json!({
            "kind": "density",
            "kl": metrics::kl_divergence(&p, &q)?,
            "l1": metrics::l1_distance(&p, &q)?,
        })),
        (Snapshot::Kinetic(mut a), Snapshot::Kinetic(mut b)) => {
            a.flush_diffusion();
            b.flush_diffusion();
            if a.nx != b.nx || a.nv != b.nv {
                return Err(Error::GeometryMismatch(
                    "kinetic snapshots have different grids".into(),
                ));
            }
            let w = a.dx() * a.dv();
            let l1: f64 = a
                .f
                .iter()
                .zip(&b.f)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                * w;
            Ok(serde_json::json!({
                "kind": "kinetic",
                "l1": l1,
                "mass_a": a.mass(),
                "mass_b": b.mass(),
            }))
        }
        _ => Err(Error::MetricInput(
            "snapshots must be of the same kind to compare".into(),
        )),
    }
}

/// Threshold-exponent note used by the summary: delta for thm1/thm3 sweeps,
/// lambda2 for thm2.
pub fn mode_name(mode: TheoremMode) -> &'static str {
    match mode {
        TheoremMode::Thm1 => "thm1",
        TheoremMode::Thm2 => "thm2",
        TheoremMode::Thm3 => "thm3",
        TheoremMode::Custom => "custom",
    }
}

pub fn default_pde_config() -> Pde1dConfig {
    Pde1dConfig::default()
}
