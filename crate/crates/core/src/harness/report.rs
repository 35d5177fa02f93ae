//! Aggregation of sweep CSVs into a JSON summary: per-N medians and IQRs,
//! exceedance frequencies, fitted convergence rates, and the trend verdicts
//! the acceptance criteria ask about.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::sweep::{mode_name, CSV_SCHEMA};
use crate::metrics::{fit_rate, RateFit};

/// Statement of the deviation-norm convention, carried in every summary so
/// the inner-norm choice is auditable downstream.
pub const DEVIATION_NORM_NOTE: &str =
    "sqrt(log N) * max_i |x_i - xbar_i|_2 + max_i |v_i - vbar_i|_2 (Euclidean per particle)";

#[derive(Debug, Clone, Serialize)]
pub struct NSeries {
    pub n: usize,
    pub seeds: usize,
    /// Median over seeds of the sup-over-time deviation.
    pub median_sup_deviation: Option<f64>,
    pub iqr_sup_deviation: Option<f64>,
    pub exceedance_frequency: Option<f64>,
    /// Median over seeds, at the final output time, per metric column.
    pub medians_at_final: BTreeMap<String, f64>,
    /// Plot-ready (t, median sup deviation) series.
    pub deviation_series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaGroup {
    pub sigma: f64,
    pub per_n: Vec<NSeries>,
    /// Log-log fits of final-time medians against N, per metric column.
    pub fits: BTreeMap<String, RateFit>,
    pub verdicts: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NTrend {
    pub n: usize,
    /// (sigma, medians at final time) with sigma descending.
    pub per_sigma: Vec<(f64, BTreeMap<String, f64>)>,
    pub verdicts: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema: String,
    pub mode: Option<String>,
    pub deviation_norm: String,
    pub threshold_exponent: Option<f64>,
    pub notes: Vec<String>,
    pub row_count: usize,
    pub sigma_groups: Vec<SigmaGroup>,
    pub n_trends: Vec<NTrend>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
struct ParsedRow {
    n: usize,
    sigma: f64,
    seed: u64,
    t: f64,
    values: BTreeMap<String, f64>,
}

fn parse_csv(path: &Path) -> Result<Vec<ParsedRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvRow {
        path: path.to_path_buf(),
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let col_index = |name: &str| cols.iter().position(|c| *c == name);
    for required in ["schema", "n", "sigma", "seed", "t"] {
        if col_index(required).is_none() {
            return Err(Error::CsvRow {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing required column `{required}`"),
            });
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::CsvRow {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let get = |name: &str| -> Option<&str> { col_index(name).map(|i| fields[i]) };
        if get("schema") != Some(CSV_SCHEMA) {
            return Err(Error::CsvRow {
                path: path.to_path_buf(),
                line: lineno,
                message: format!(
                    "schema `{}` does not match `{CSV_SCHEMA}`",
                    get("schema").unwrap_or("")
                ),
            });
        }
        let parse_f = |name: &str, raw: &str| -> Result<f64> {
            raw.parse::<f64>().map_err(|_| Error::CsvRow {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("column `{name}` is not a number: `{raw}`"),
            })
        };
        let n = parse_f("n", get("n").unwrap())? as usize;
        let sigma = parse_f("sigma", get("sigma").unwrap())?;
        let seed = parse_f("seed", get("seed").unwrap())? as u64;
        let t = parse_f("t", get("t").unwrap())?;
        let mut values = BTreeMap::new();
        for (c, f) in cols.iter().zip(&fields) {
            if matches!(*c, "schema" | "n" | "sigma" | "seed" | "t") || f.is_empty() {
                continue;
            }
            values.insert((*c).to_string(), parse_f(c, f)?);
        }
        rows.push(ParsedRow {
            n,
            sigma,
            seed,
            t,
            values,
        });
    }
    Ok(rows)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn median_iqr(values: &mut Vec<f64>) -> (f64, f64) {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let q = |p: f64| -> f64 {
        // nearest-rank percentile; adequate at sweep seed counts
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        values[idx]
    };
    (median(values), q(0.75) - q(0.25))
}

/// Aggregates one or more sweep CSVs into a summary.
pub fn report(csv_paths: &[PathBuf], cfg: Option<&ExperimentConfig>) -> Result<SweepSummary> {
    if csv_paths.is_empty() {
        return Err(Error::MetricInput("report needs at least one CSV".into()));
    }
    let mut rows = Vec::new();
    for p in csv_paths {
        rows.extend(parse_csv(p)?);
    }
    Ok(summarize(cfg, rows, Vec::new()))
}

pub(crate) fn build_summary(
    cfg: Option<&ExperimentConfig>,
    csv_path: &Path,
    failures: Vec<String>,
) -> Result<SweepSummary> {
    let rows = parse_csv(csv_path)?;
    Ok(summarize(cfg, rows, failures))
}

fn summarize(
    cfg: Option<&ExperimentConfig>,
    rows: Vec<ParsedRow>,
    failures: Vec<String>,
) -> SweepSummary {
    let mut sigmas: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
    sigmas.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    sigmas.dedup();

    let mut sigma_groups = Vec::new();
    for &sigma in &sigmas {
        let group_rows: Vec<&ParsedRow> = rows.iter().filter(|r| r.sigma == sigma).collect();
        let mut ns: Vec<usize> = group_rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();

        let mut per_n = Vec::new();
        for &n in &ns {
            let n_rows: Vec<&&ParsedRow> = group_rows.iter().filter(|r| r.n == n).collect();
            let final_t = n_rows
                .iter()
                .map(|r| r.t)
                .fold(f64::NEG_INFINITY, f64::max);
            let final_rows: Vec<&&&ParsedRow> = n_rows
                .iter()
                .filter(|r| (r.t - final_t).abs() < 1e-9)
                .collect();
            let seeds = {
                let mut s: Vec<u64> = final_rows.iter().map(|r| r.seed).collect();
                s.sort_unstable();
                s.dedup();
                s.len()
            };

            let mut sup_devs: Vec<f64> = final_rows
                .iter()
                .filter_map(|r| r.values.get("sup_dev").copied())
                .collect();
            let (median_sup, iqr_sup) = if sup_devs.is_empty() {
                (None, None)
            } else {
                let (m, i) = median_iqr(&mut sup_devs);
                (Some(m), Some(i))
            };

            let exceed: Vec<f64> = final_rows
                .iter()
                .filter_map(|r| r.values.get("exceed").copied())
                .collect();
            let exceedance_frequency = if exceed.is_empty() {
                None
            } else {
                Some(exceed.iter().sum::<f64>() / exceed.len() as f64)
            };

            let mut medians_at_final = BTreeMap::new();
            let metric_cols: Vec<String> = final_rows
                .iter()
                .flat_map(|r| r.values.keys().cloned())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            for col in metric_cols {
                let mut vals: Vec<f64> = final_rows
                    .iter()
                    .filter_map(|r| r.values.get(&col).copied())
                    .collect();
                if !vals.is_empty() {
                    let (m, _) = median_iqr(&mut vals);
                    medians_at_final.insert(col, m);
                }
            }

            // (t, median sup_dev) series over all output times
            let mut times: Vec<f64> = n_rows.iter().map(|r| r.t).collect();
            times.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let deviation_series: Vec<(f64, f64)> = times
                .iter()
                .filter_map(|&t| {
                    let mut vals: Vec<f64> = n_rows
                        .iter()
                        .filter(|r| (r.t - t).abs() < 1e-9)
                        .filter_map(|r| r.values.get("sup_dev").copied())
                        .collect();
                    if vals.is_empty() {
                        None
                    } else {
                        Some((t, median_iqr(&mut vals).0))
                    }
                })
                .collect();

            per_n.push(NSeries {
                n,
                seeds,
                median_sup_deviation: median_sup,
                iqr_sup_deviation: iqr_sup,
                exceedance_frequency,
                medians_at_final,
                deviation_series,
            });
        }

        let mut fits = BTreeMap::new();
        let mut notes = Vec::new();
        for col in ["sup_dev", "w2", "w2_sliced", "h1", "l1", "lln"] {
            let pairs: Vec<(f64, f64)> = per_n
                .iter()
                .filter_map(|s| {
                    s.medians_at_final
                        .get(col)
                        .map(|&v| (s.n as f64, v))
                })
                .filter(|&(_, v)| v > 0.0)
                .collect();
            if pairs.len() >= 3 {
                match fit_rate(&pairs) {
                    Ok(fit) => {
                        fits.insert(col.to_string(), fit);
                    }
                    Err(e) => notes.push(format!("fit of {col} failed: {e}")),
                }
            } else if per_n.iter().any(|s| s.medians_at_final.contains_key(col)) {
                notes.push(format!(
                    "insufficient points to fit {col} (need >= 3 distinct N with positive medians, have {})",
                    pairs.len()
                ));
            }
        }

        let mut verdicts = BTreeMap::new();
        let meds: Vec<f64> = per_n
            .iter()
            .filter_map(|s| s.median_sup_deviation)
            .collect();
        if meds.len() >= 2 {
            verdicts.insert(
                "median_sup_deviation_strictly_decreasing_in_n".into(),
                meds.windows(2).all(|w| w[1] < w[0]),
            );
        }
        if let Some(fit) = fits.get("sup_dev") {
            verdicts.insert("sup_deviation_slope_le_-0.10".into(), fit.slope <= -0.10);
        }
        let freqs: Vec<f64> = per_n
            .iter()
            .filter_map(|s| s.exceedance_frequency)
            .collect();
        if freqs.len() >= 2 {
            verdicts.insert(
                "exceedance_nonincreasing_in_n".into(),
                freqs.windows(2).all(|w| w[1] <= w[0]),
            );
        }
        let slacks: Vec<f64> = group_rows
            .iter()
            .filter_map(|r| r.values.get("ckp_slack").copied())
            .collect();
        if !slacks.is_empty() {
            verdicts.insert(
                "ckp_audit_all_rows".into(),
                slacks.iter().all(|&s| s >= -0.05),
            );
        }

        sigma_groups.push(SigmaGroup {
            sigma,
            per_n,
            fits,
            verdicts,
            notes,
        });
    }

    // trends across sigma at fixed N (sigma descending)
    let mut all_ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    all_ns.sort_unstable();
    all_ns.dedup();
    let mut n_trends = Vec::new();
    if sigmas.len() >= 2 {
        for &n in &all_ns {
            let mut per_sigma = Vec::new();
            for &sigma in sigmas.iter().rev() {
                let group = sigma_groups
                    .iter()
                    .find(|g| g.sigma == sigma)
                    .and_then(|g| g.per_n.iter().find(|s| s.n == n));
                if let Some(series) = group {
                    per_sigma.push((sigma, series.medians_at_final.clone()));
                }
            }
            let mut verdicts = BTreeMap::new();
            let l1s: Vec<f64> = per_sigma
                .iter()
                .filter_map(|(_, m)| m.get("l1").copied())
                .collect();
            if l1s.len() >= 2 {
                verdicts.insert(
                    "l1_nonincreasing_as_sigma_decreases".into(),
                    l1s.windows(2).all(|w| w[1] <= w[0]),
                );
            }
            n_trends.push(NTrend {
                n,
                per_sigma,
                verdicts,
            });
        }
    }

    SweepSummary {
        schema: "vpfp-summary-v1".into(),
        mode: cfg.map(|c| mode_name(c.mode).to_string()),
        deviation_norm: DEVIATION_NORM_NOTE.into(),
        threshold_exponent: cfg.map(|c| c.threshold_exponent()),
        notes: cfg.map(|c| c.metadata_notes()).unwrap_or_default(),
        row_count: rows.len(),
        sigma_groups,
        n_trends,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn planted_power_law_recovers_slope() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("schema,n,delta,sigma,seed,t,clipped,dev,sup_dev\n");
        for &n in &[256u32, 512, 1024, 2048] {
            for seed in 0..3 {
                let v = (n as f64).powf(-0.25);
                body.push_str(&format!(
                    "{CSV_SCHEMA},{n},0.25,0.5,{seed},1,0,{v},{v}\n"
                ));
            }
        }
        let path = write_csv(dir.path(), "m.csv", &body);
        let summary = report(&[path], None).unwrap();
        let fit = &summary.sigma_groups[0].fits["sup_dev"];
        assert!((fit.slope + 0.25).abs() < 1e-12, "slope {}", fit.slope);
        assert_eq!(
            summary.sigma_groups[0].verdicts["median_sup_deviation_strictly_decreasing_in_n"],
            true
        );
    }

    #[test]
    fn single_row_notes_insufficient_points() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "schema,n,delta,sigma,seed,t,clipped,dev,sup_dev\n{CSV_SCHEMA},256,0.25,0.5,1,1,0,0.5,0.5\n"
        );
        let path = write_csv(dir.path(), "m.csv", &body);
        let summary = report(&[path], None).unwrap();
        assert_eq!(summary.row_count, 1);
        assert!(summary.sigma_groups[0].fits.is_empty());
        assert!(summary.sigma_groups[0]
            .notes
            .iter()
            .any(|n| n.contains("insufficient points")));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "schema,n,delta,sigma,seed,t,clipped,sup_dev\n{CSV_SCHEMA},256,0.25,0.5,1,1,0,0.5\n{CSV_SCHEMA},oops,0.25,0.5,1,1,0,0.4\n"
        );
        let path = write_csv(dir.path(), "m.csv", &body);
        match report(&[path], None).unwrap_err() {
            Error::CsvRow { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("n"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sigma_trend_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("schema,n,delta,sigma,seed,t,clipped,l1\n");
        for (sigma, l1) in [(0.1, 0.5), (0.01, 0.3), (0.001, 0.2)] {
            body.push_str(&format!("{CSV_SCHEMA},512,0.25,{sigma},1,1,0,{l1}\n"));
        }
        let path = write_csv(dir.path(), "m.csv", &body);
        let summary = report(&[path], None).unwrap();
        assert_eq!(summary.n_trends.len(), 1);
        assert_eq!(
            summary.n_trends[0].verdicts["l1_nonincreasing_as_sigma_decreases"],
            true
        );
    }
}
