//! Declarative experiment configuration: a JSON document validated against
//! the constraint set of the theorem mode in use, with dotted-path
//! `--set key=value` overrides applied before deserialization.

use serde::{Deserialize, Serialize};

use crate::dynamics::ForcePath;
use crate::error::{ConstraintViolation, Error, Result};
use crate::initial::InitialDensitySpec;
use crate::kernels::{KernelFamily, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremMode {
    /// Entropy rate for the piecewise regularization: delta in (0, 1/d),
    /// sigma > 0.
    Thm1,
    /// Improved rate for the mollified kernel in d = 3: lambda windows and
    /// delta in [1/3, min((lambda1 + 3 lambda2 + 1)/6, (1 - lambda2)/2)).
    Thm2,
    /// Vanishing-noise comparison against Vlasov-Poisson: the sigma schedule
    /// may include 0; extra hypotheses are recorded as metadata notes.
    Thm3,
    /// Only structural checks.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sign: Sign,
    /// `None` picks the Poisson-consistent default `1/|S^(d-1)|`.
    #[serde(default)]
    pub c_d: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per axis of the position-space force grid.
    #[serde(default = "default_force_cells")]
    pub force_cells: usize,
    /// Cells per axis of the phase-space metric grid; `None` picks the
    /// dimension default (32 in d = 1, 16 in d = 2, 12 in d = 3).
    #[serde(default)]
    pub phase_cells: Option<usize>,
    /// Smoothing bandwidth, in cells, for both grids.
    #[serde(default = "default_bandwidth")]
    pub bandwidth_cells: f64,
}

fn default_force_cells() -> usize {
    64
}

fn default_bandwidth() -> f64 {
    2.0
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            force_cells: default_force_cells(),
            phase_cells: None,
            bandwidth_cells: default_bandwidth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Deviation,
    Exceedance,
    W2Exact,
    W2Sliced,
    Kl1,
    L1,
    Ckp,
    Lln,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pde1dConfig {
    #[serde(default = "default_pde_cells")]
    pub n_x: usize,
    #[serde(default = "default_pde_cells")]
    pub n_v: usize,
    #[serde(default = "default_pde_range")]
    pub x_range: (f64, f64),
    #[serde(default = "default_pde_range")]
    pub v_range: (f64, f64),
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_pde_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_pde_cells() -> usize {
    256
}

fn default_pde_range() -> (f64, f64) {
    (-6.0, 6.0)
}

fn default_pde_t_end() -> f64 {
    1.0
}

impl Default for Pde1dConfig {
    fn default() -> Self {
        Pde1dConfig {
            n_x: default_pde_cells(),
            n_v: default_pde_cells(),
            x_range: default_pde_range(),
            v_range: default_pde_range(),
            sigma: 0.0,
            t_end: default_pde_t_end(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: TheoremMode,
    pub d: usize,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    pub particle_counts: Vec<usize>,
    /// Diffusion schedule; one run matrix cell per value.
    pub sigma: Vec<f64>,
    pub initial: InitialDensitySpec,
    pub t_end: f64,
    /// `None` applies the step-size policy `min(1e-2, 0.1/sup|k^N|)`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    /// `None` means the five checkpoints {0, T/4, T/2, 3T/4, T}.
    #[serde(default)]
    pub output_times: Option<Vec<f64>>,
    #[serde(default = "default_refresh")]
    pub refresh_every: usize,
    #[serde(default = "default_force_path")]
    pub force_path: ForcePath,
    #[serde(default)]
    pub grids: GridConfig,
    /// Exceedance threshold exponent `e` (threshold = N^-e); `None` picks
    /// delta (thm1/thm3) or lambda2 (thm2).
    #[serde(default)]
    pub exceedance_exponent: Option<f64>,
    /// Exponent m of the per-row LLN fluctuation statistic.
    #[serde(default = "default_lln_m")]
    pub lln_m: u32,
    /// Sliced-W2 projection count.
    #[serde(default = "default_projections")]
    pub w2_projections: usize,
    /// Worker threads; 0 means the hardware default. Results are
    /// bit-identical regardless.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub pde1d: Option<Pde1dConfig>,
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Deviation, MetricKind::Exceedance]
}

fn default_refresh() -> usize {
    1
}

fn default_force_path() -> ForcePath {
    ForcePath::CellList
}

fn default_lln_m() -> u32 {
    2
}

fn default_projections() -> usize {
    256
}

fn default_out_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    /// Default phase-space cells per axis by dimension.
    pub fn phase_cells(&self) -> usize {
        self.grids.phase_cells.unwrap_or(match self.d {
            1 => 32,
            2 => 16,
            _ => 12,
        })
    }

    /// Output times: configured list or the five default checkpoints.
    pub fn resolved_output_times(&self) -> Vec<f64> {
        match &self.output_times {
            Some(ts) => ts.clone(),
            None => (0..=4).map(|k| self.t_end * k as f64 / 4.0).collect(),
        }
    }

    /// Threshold exponent for the exceedance event.
    pub fn threshold_exponent(&self) -> f64 {
        self.exceedance_exponent.unwrap_or(match self.mode {
            TheoremMode::Thm2 => self.lambda2.unwrap_or(self.kernel.delta),
            _ => self.kernel.delta,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let mut check = |ok: bool, field: &str, message: String| {
            if !ok {
                violations.push(ConstraintViolation {
                    field: field.into(),
                    message,
                });
            }
        };

        check(
            (1..=3).contains(&self.d),
            "d",
            format!("dimension must be 1, 2 or 3 (got {})", self.d),
        );
        check(
            !self.particle_counts.is_empty(),
            "particle_counts",
            "must not be empty".into(),
        );
        check(
            self.particle_counts.iter().all(|&n| n >= 2),
            "particle_counts",
            "every N must be >= 2".into(),
        );
        check(!self.seeds.is_empty(), "seeds", "must not be empty".into());
        check(!self.sigma.is_empty(), "sigma", "must not be empty".into());
        check(
            self.sigma.iter().all(|&s| s >= 0.0),
            "sigma",
            "sigma values must be nonnegative".into(),
        );
        check(self.t_end > 0.0, "t_end", "must be positive".into());
        check(
            self.refresh_every >= 1,
            "refresh_every",
            "must be >= 1".into(),
        );
        check(
            self.grids.force_cells >= 2,
            "grids.force_cells",
            "needs at least 2 cells per axis".into(),
        );
        let pc = self.phase_cells();
        check(
            pc >= 2 && (pc as f64).powi(2 * self.d.min(3) as i32) <= 17_000_000.0,
            "grids.phase_cells",
            format!("{pc}^(2d) exceeds the phase-grid cap (16^6)"),
        );
        check(
            self.grids.bandwidth_cells >= 0.0,
            "grids.bandwidth_cells",
            "must be nonnegative".into(),
        );
        check(
            self.initial.d == self.d,
            "initial.d",
            format!("must equal d = {}", self.d),
        );
        if let Err(e) = self.initial.validate() {
            check(false, "initial", e.to_string());
        }
        let delta = self.kernel.delta;
        check(
            delta > 0.0 && delta < 1.0,
            "kernel.delta",
            format!("delta must lie in (0, 1), got {delta}"),
        );
        if let Some(c) = self.kernel.c_d {
            check(c > 0.0, "kernel.c_d", "must be positive".into());
        }
        if self.kernel.family == KernelFamily::Hlp {
            check(
                self.d == 3,
                "kernel.family",
                "the hlp (mollified) kernel is defined for d = 3 only".into(),
            );
        }
        check(
            self.kernel.family != KernelFamily::Exact,
            "kernel.family",
            "sweeps need a regularized family (lp or hlp)".into(),
        );
        if let Some(e) = self.exceedance_exponent {
            check(e > 0.0, "exceedance_exponent", "must be positive".into());
        }
        if let Some(dt) = self.dt {
            check(
                dt > 0.0 && dt <= self.t_end,
                "dt",
                "must be positive and at most t_end".into(),
            );
        }
        check(self.lln_m >= 1, "lln_m", "must be >= 1".into());
        check(
            self.w2_projections >= 1,
            "w2_projections",
            "must be >= 1".into(),
        );

        match self.mode {
            TheoremMode::Thm1 => {
                let limit = 1.0 / self.d as f64;
                check(
                    delta > 0.0 && delta < limit,
                    "kernel.delta",
                    format!("thm1 mode requires delta in (0, 1/d) = (0, {limit}), got {delta}"),
                );
                check(
                    self.sigma.iter().all(|&s| s > 0.0),
                    "sigma",
                    "thm1 mode requires sigma > 0".into(),
                );
                check(
                    self.initial.m0 > self.d as f64,
                    "initial.m0",
                    format!("thm1 mode requires m0 > d = {}", self.d),
                );
            }
            TheoremMode::Thm2 => {
                check(self.d == 3, "d", "thm2 mode requires d = 3".into());
                check(
                    self.kernel.family == KernelFamily::Hlp,
                    "kernel.family",
                    "thm2 mode uses the mollified (hlp) kernel".into(),
                );
                check(
                    self.sigma.iter().all(|&s| s > 0.0),
                    "sigma",
                    "thm2 mode requires sigma > 0".into(),
                );
                check(
                    self.initial.m0 > 6.0,
                    "initial.m0",
                    "thm2 mode requires m0 > 6".into(),
                );
                match (self.lambda1, self.lambda2) {
                    (Some(l1), Some(l2)) => {
                        check(
                            l2 > 0.3 && l2 < 1.0 / 3.0,
                            "lambda2",
                            format!("must lie in (3/10, 1/3), got {l2}"),
                        );
                        check(
                            l1 > 0.0 && l1 < l2 / 3.0,
                            "lambda1",
                            format!("must lie in (0, lambda2/3) = (0, {}), got {l1}", l2 / 3.0),
                        );
                        let upper = ((l1 + 3.0 * l2 + 1.0) / 6.0).min((1.0 - l2) / 2.0);
                        check(
                            delta >= 1.0 / 3.0 && delta < upper,
                            "kernel.delta",
                            format!(
                                "thm2 mode requires delta in [1/3, {upper}) (half-open), got {delta}"
                            ),
                        );
                    }
                    _ => check(
                        false,
                        "lambda1",
                        "thm2 mode requires explicit lambda1 and lambda2".into(),
                    ),
                }
            }
            TheoremMode::Thm3 => {
                let limit = 1.0 / self.d as f64;
                check(
                    delta > 0.0 && delta < limit,
                    "kernel.delta",
                    format!("thm3 mode requires delta in (0, 1/d) = (0, {limit}), got {delta}"),
                );
                // sigma may include 0 here; the m > 3 and grad-log-f0
                // hypotheses are recorded in the summary metadata notes.
            }
            TheoremMode::Custom => {}
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(violations))
        }
    }

    /// Hypothesis notes the summary carries verbatim (thm3 assumptions that
    /// are recorded rather than enforced).
    pub fn metadata_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.mode == TheoremMode::Thm3 {
            notes.push(
                "thm3 hypotheses noted, not enforced: m > 3 velocity moments and bounded \
                 grad log f0 (satisfied by the polynomial_decay family)"
                    .into(),
            );
            if self.sigma.iter().any(|&s| s == 0.0) {
                notes.push("sigma schedule includes 0 (noiseless Vlasov-Poisson runs)".into());
            }
        }
        notes
    }
}

/// Parses, applies `--set` overrides (dotted paths), and validates.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    for (path, raw) in overrides {
        apply_override(&mut value, path, raw)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(value: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidSpec(format!("bad override path `{path}`")));
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::InvalidSpec(format!("override path `{path}` does not address an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_json() -> String {
        serde_json::json!({
            "mode": "thm1",
            "d": 3,
            "kernel": {"family": "lp", "sign": "repulsive", "delta": 0.25},
            "particle_counts": [64, 128, 256],
            "sigma": [0.5],
            "initial": {
                "d": 3,
                "kind": "gauss_x_truncgauss_v",
                "s_x": 1.0, "s_v": 1.0, "q_v": 4.0,
                "m0": 8.0
            },
            "t_end": 0.5,
            "seeds": [1, 2, 3]
        })
        .to_string()
    }

    #[test]
    fn parses_and_fills_defaults() {
        let cfg = parse_config(&base_json(), &[]).unwrap();
        assert_eq!(cfg.refresh_every, 1);
        assert_eq!(cfg.force_path, ForcePath::CellList);
        assert_eq!(cfg.grids.force_cells, 64);
        assert_eq!(cfg.phase_cells(), 12);
        assert_eq!(cfg.resolved_output_times().len(), 5);
        assert_eq!(cfg.threshold_exponent(), 0.25);
    }

    #[test]
    fn thm1_delta_upper_bound() {
        let err = parse_config(&base_json(), &[("kernel.delta".into(), "0.4".into())])
            .unwrap_err();
        match err {
            Error::ConfigViolations(v) => {
                assert!(v.iter().any(|c| c.field == "kernel.delta"
                    && c.message.contains("(0, 1/d)")
                    && c.message.contains("0.3333333333333333")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_seeds_rejected() {
        let err =
            parse_config(&base_json(), &[("seeds".into(), "[]".into())]).unwrap_err();
        match err {
            Error::ConfigViolations(v) => {
                assert!(v.iter().any(|c| c.field == "seeds"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thm2_window_boundary_is_half_open() {
        let mk = |delta: f64, l1: f64, l2: f64| {
            parse_config(
                &base_json(),
                &[
                    ("mode".into(), "\"thm2\"".into()),
                    ("kernel.family".into(), "\"hlp\"".into()),
                    ("kernel.delta".into(), delta.to_string()),
                    ("lambda1".into(), l1.to_string()),
                    ("lambda2".into(), l2.to_string()),
                ],
            )
        };
        // lambda2 = 0.32, lambda1 = 0.05: upper = min((0.05+0.96+1)/6, 0.34)
        //                                        = min(0.335, 0.34) = 0.335
        assert!(mk(0.334, 0.05, 0.32).is_ok());
        // the interval is half-open on the right
        assert!(mk(0.335, 0.05, 0.32).is_err());
        assert!(mk(1.0 / 3.0, 0.05, 0.32).is_ok());
        assert!(mk(0.33, 0.05, 0.32).is_err()); // below 1/3
        assert!(mk(0.334, 0.12, 0.32).is_err()); // lambda1 >= lambda2/3
        assert!(mk(0.334, 0.05, 0.30).is_err()); // lambda2 at the open edge
    }

    #[test]
    fn thm2_requires_m0_above_six() {
        let err = parse_config(
            &base_json(),
            &[
                ("mode".into(), "\"thm2\"".into()),
                ("kernel.family".into(), "\"hlp\"".into()),
                ("kernel.delta".into(), "0.334".into()),
                ("lambda1".into(), "0.05".into()),
                ("lambda2".into(), "0.32".into()),
                ("initial.m0".into(), "5.0".into()),
            ],
        )
        .unwrap_err();
        match err {
            Error::ConfigViolations(v) => {
                assert!(v.iter().any(|c| c.field == "initial.m0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thm3_allows_zero_sigma_and_notes_it() {
        let cfg = parse_config(
            &base_json(),
            &[
                ("mode".into(), "\"thm3\"".into()),
                ("sigma".into(), "[0.1, 0.01, 0.0]".into()),
            ],
        )
        .unwrap();
        assert!(!cfg.metadata_notes().is_empty());
        // thm1 rejects the same schedule
        assert!(parse_config(
            &base_json(),
            &[("sigma".into(), "[0.1, 0.0]".into())],
        )
        .is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = parse_config(&base_json(), &[("typo_field".into(), "1".into())]);
        assert!(err.is_err());
    }

    #[test]
    fn overrides_nest_and_parse_json() {
        let cfg = parse_config(
            &base_json(),
            &[
                ("grids.force_cells".into(), "32".into()),
                ("metrics".into(), "[\"deviation\",\"kl1\",\"l1\",\"ckp\"]".into()),
                ("out_dir".into(), "results/run1".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.grids.force_cells, 32);
        assert_eq!(cfg.metrics.len(), 4);
        assert_eq!(cfg.out_dir, "results/run1");
    }
}
