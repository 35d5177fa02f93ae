//! Initial phase-space densities and their samplers.
//!
//! Two families, both meeting the hypotheses the convergence statements
//! place on the common single-particle density f_0:
//!
//! * `gauss_x_truncgauss_v` — Gaussian positions times a Gaussian velocity
//!   profile smoothly truncated at radius `q_v` (multiplied by the standard
//!   C^2 bump rescaled to radius `q_v`, then renormalized), so that the
//!   velocity support is compact without breaking gradient bounds;
//! * `polynomial_decay`   — `(1 + |x|^2)^(-alpha) (1 + |v|^2)^(-beta)`,
//!   normalized; its log-gradient is bounded by `alpha + beta`.
//!
//! Sampling is deterministic: particle `i` draws from the sub-stream keyed
//! by `(seed, INIT, i)`, so permuting sub-keys permutes samples.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::dynamics::PhaseState;
use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{label, CounterStream};

/// Retry budget per particle for the velocity rejection sampler.
const REJECTION_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    GaussXTruncgaussV { s_x: f64, s_v: f64, q_v: f64 },
    PolynomialDecay { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDensitySpec {
    pub d: usize,
    #[serde(flatten)]
    pub kind: InitialKind,
    /// Velocity-moment exponent hypothesis metadata: `(1+|v|^2)^(m0/2) f_0`
    /// must stay bounded. Config validation checks it against the theorem
    /// mode in use; here it constrains `beta` for the polynomial family.
    pub m0: f64,
}

impl InitialDensitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("initial density needs d >= 1".into()));
        }
        match self.kind {
            InitialKind::GaussXTruncgaussV { s_x, s_v, q_v } => {
                if !(s_x > 0.0 && s_v > 0.0 && q_v > 0.0) {
                    return Err(Error::InvalidSpec(
                        "gauss_x_truncgauss_v needs positive s_x, s_v, q_v".into(),
                    ));
                }
            }
            InitialKind::PolynomialDecay { alpha, beta } => {
                let d = self.d as f64;
                if !(alpha > d / 2.0 && beta > d / 2.0) {
                    return Err(Error::InvalidSpec(
                        "polynomial_decay needs alpha, beta > d/2 for integrability".into(),
                    ));
                }
                if !(beta > self.m0 / 2.0 + d / 2.0) {
                    return Err(Error::InvalidSpec(format!(
                        "polynomial_decay moment bound requires beta > m0/2 + d/2 = {}",
                        self.m0 / 2.0 + d / 2.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Spec plus precomputed normalization constants; immutable once built.
#[derive(Debug, Clone)]
pub struct InitialDensity {
    spec: InitialDensitySpec,
    /// normalizer of the position factor
    z_x: f64,
    /// normalizer of the velocity factor
    z_v: f64,
}

/// `int_{R^d} (1 + |y|^2)^(-gamma) dy = pi^(d/2) Gamma(gamma - d/2) / Gamma(gamma)`.
fn polynomial_factor_mass(d: usize, exponent: f64) -> f64 {
    use statrs::function::gamma::gamma;
    std::f64::consts::PI.powf(d as f64 / 2.0) * gamma(exponent - d as f64 / 2.0)
        / gamma(exponent)
}

/// The C^2 bump profile used for the smooth velocity truncation,
/// `(1 - (r/q)^2)^3` on `r < q`.
#[inline]
fn bump_factor(r: f64, q: f64) -> f64 {
    if r >= q {
        0.0
    } else {
        let w = 1.0 - (r / q) * (r / q);
        w * w * w
    }
}

impl InitialDensity {
    pub fn new(spec: InitialDensitySpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        let (z_x, z_v) = match spec.kind {
            InitialKind::GaussXTruncgaussV { s_x, s_v, q_v } => {
                let z_x = (2.0 * std::f64::consts::PI * s_x * s_x).powf(d as f64 / 2.0);
                let radial = quad::integrate(
                    |r| {
                        r.powi(d as i32 - 1)
                            * (-0.5 * r * r / (s_v * s_v)).exp()
                            * bump_factor(r, q_v)
                    },
                    0.0,
                    q_v,
                    16,
                );
                let z_v = crate::kernels::unit_sphere_area(d) * radial;
                (z_x, z_v)
            }
            InitialKind::PolynomialDecay { alpha, beta } => (
                polynomial_factor_mass(d, alpha),
                polynomial_factor_mass(d, beta),
            ),
        };
        if !(z_x > 0.0 && z_v > 0.0) {
            return Err(Error::InvalidSpec("degenerate normalization".into()));
        }
        Ok(InitialDensity { spec, z_x, z_v })
    }

    pub fn spec(&self) -> &InitialDensitySpec {
        &self.spec
    }

    /// Pointwise f_0(x, v), normalized.
    pub fn density(&self, x: &[f64], v: &[f64]) -> f64 {
        let rx2: f64 = x.iter().map(|a| a * a).sum();
        let rv2: f64 = v.iter().map(|a| a * a).sum();
        match self.spec.kind {
            InitialKind::GaussXTruncgaussV { s_x, s_v, q_v } => {
                let px = (-0.5 * rx2 / (s_x * s_x)).exp() / self.z_x;
                let pv =
                    (-0.5 * rv2 / (s_v * s_v)).exp() * bump_factor(rv2.sqrt(), q_v) / self.z_v;
                px * pv
            }
            InitialKind::PolynomialDecay { alpha, beta } => {
                (1.0 + rx2).powf(-alpha) / self.z_x * (1.0 + rv2).powf(-beta) / self.z_v
            }
        }
    }

    /// Gradient of `log f_0` split into (x-part, v-part). For the truncated
    /// Gaussian family the v-part diverges at the support edge; the
    /// polynomial family is bounded by `alpha + beta` everywhere.
    pub fn grad_log_density(&self, x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.spec.kind {
            InitialKind::GaussXTruncgaussV { s_x, s_v, q_v } => {
                let gx = x.iter().map(|a| -a / (s_x * s_x)).collect();
                let rv2: f64 = v.iter().map(|a| a * a).sum();
                let w = 1.0 - rv2 / (q_v * q_v);
                let extra = if w > 0.0 {
                    -6.0 / (q_v * q_v * w)
                } else {
                    f64::NEG_INFINITY
                };
                let gv = v
                    .iter()
                    .map(|a| -a / (s_v * s_v) + extra * a)
                    .collect();
                (gx, gv)
            }
            InitialKind::PolynomialDecay { alpha, beta } => {
                let rx2: f64 = x.iter().map(|a| a * a).sum();
                let rv2: f64 = v.iter().map(|a| a * a).sum();
                let gx = x.iter().map(|a| -2.0 * alpha * a / (1.0 + rx2)).collect();
                let gv = v.iter().map(|a| -2.0 * beta * a / (1.0 + rv2)).collect();
                (gx, gv)
            }
        }
    }

    /// Draws `n` i.i.d. particles; particle `i` is a pure function of
    /// `(seed, i)`, so the ensemble is exchangeable by construction.
    pub fn sample(&self, n: usize, seed: u64) -> Result<PhaseState> {
        let d = self.spec.d;
        let mut x = vec![0.0; n * d];
        let mut v = vec![0.0; n * d];
        for i in 0..n {
            let (xi, vi) = self.sample_particle(seed, i)?;
            x[i * d..(i + 1) * d].copy_from_slice(&xi);
            v[i * d..(i + 1) * d].copy_from_slice(&vi);
        }
        PhaseState::new(0.0, d, x, v)
    }

    /// Single-particle draw from sub-stream `(seed, INIT, i)`.
    pub fn sample_particle(&self, seed: u64, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.spec.d;
        let mut stream = CounterStream::for_words(&[seed, label::INIT, i as u64]);
        match self.spec.kind {
            InitialKind::GaussXTruncgaussV { s_x, s_v, q_v } => {
                let mut x = vec![0.0; d];
                stream.fill_normals(&mut x);
                for a in &mut x {
                    *a *= s_x;
                }
                // rejection from the dominating Gaussian: accept with
                // probability equal to the bump factor (<= 1)
                let mut v = vec![0.0; d];
                for attempt in 0.. {
                    if attempt >= REJECTION_BUDGET {
                        return Err(Error::SamplerExhausted {
                            attempts: REJECTION_BUDGET,
                            reason: "truncated-Gaussian velocity rejection".into(),
                        });
                    }
                    stream.fill_normals(&mut v);
                    for a in &mut v {
                        *a *= s_v;
                    }
                    let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if stream.uniform() < bump_factor(r, q_v) {
                        break;
                    }
                }
                Ok((x, v))
            }
            InitialKind::PolynomialDecay { alpha, beta } => {
                let x = sample_polynomial_factor(d, alpha, &mut stream);
                let v = sample_polynomial_factor(d, beta, &mut stream);
                Ok((x, v))
            }
        }
    }
}

/// Draws from the density proportional to `(1 + |y|^2)^(-gamma)` on R^d via
/// the Student-t representation `y = z / sqrt(u)`, `z ~ N(0, I_d)`,
/// `u ~ chi^2(2 gamma - d)`. A dominating Gaussian does not exist for these
/// heavy tails, so rejection sampling is not an option here.
fn sample_polynomial_factor(d: usize, gamma: f64, stream: &mut CounterStream) -> Vec<f64> {
    let nu = 2.0 * gamma - d as f64;
    let chi2 = rand_distr::ChiSquared::new(nu).expect("validated dof");
    let u: f64 = chi2.sample(stream);
    let scale = 1.0 / u.sqrt();
    let mut z = vec![0.0; d];
    stream.fill_normals(&mut z);
    for a in &mut z {
        *a *= scale;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trunc_spec(d: usize) -> InitialDensitySpec {
        InitialDensitySpec {
            d,
            kind: InitialKind::GaussXTruncgaussV {
                s_x: 1.0,
                s_v: 1.0,
                q_v: 4.0,
            },
            m0: 8.0,
        }
    }

    fn poly_spec(d: usize, alpha: f64, beta: f64) -> InitialDensitySpec {
        InitialDensitySpec {
            d,
            kind: InitialKind::PolynomialDecay { alpha, beta },
            m0: 4.0,
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(InitialDensitySpec {
            d: 3,
            kind: InitialKind::GaussXTruncgaussV {
                s_x: 0.0,
                s_v: 1.0,
                q_v: 4.0
            },
            m0: 4.0,
        }
        .validate()
        .is_err());
        // beta too small for the moment bound m0
        assert!(InitialDensitySpec {
            d: 3,
            kind: InitialKind::PolynomialDecay {
                alpha: 4.0,
                beta: 3.0
            },
            m0: 4.0,
        }
        .validate()
        .is_err());
        assert!(poly_spec(3, 4.0, 4.0).validate().is_ok());
    }

    #[test]
    fn sample_mean_is_centered() {
        let f0 = InitialDensity::new(trunc_spec(3)).unwrap();
        let n = 100_000;
        let state = f0.sample(n, 42).unwrap();
        for a in 0..3 {
            let mean: f64 = (0..n).map(|i| state.pos(i)[a]).sum::<f64>() / n as f64;
            let se = 1.0 / (n as f64).sqrt();
            assert!(mean.abs() < 4.0 * se, "axis {a}: mean {mean}");
        }
    }

    #[test]
    fn velocity_support_is_compact() {
        let f0 = InitialDensity::new(trunc_spec(3)).unwrap();
        let state = f0.sample(50_000, 7).unwrap();
        for i in 0..state.n() {
            let r: f64 = state.vel(i).iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(r < 4.0, "sampled |v| = {r} >= q_v");
        }
    }

    #[test]
    fn density_vanishes_at_velocity_cutoff() {
        let f0 = InitialDensity::new(trunc_spec(3)).unwrap();
        assert_eq!(f0.density(&[0.0; 3], &[4.0, 0.0, 0.0]), 0.0);
        assert_eq!(f0.density(&[0.0; 3], &[5.0, 0.0, 0.0]), 0.0);
        assert!(f0.density(&[0.0; 3], &[3.9, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn polynomial_peak_is_normalization_product() {
        let f0 = InitialDensity::new(poly_spec(3, 4.0, 4.0)).unwrap();
        let z = polynomial_factor_mass(3, 4.0);
        let peak = f0.density(&[0.0; 3], &[0.0; 3]);
        assert!((peak - 1.0 / (z * z)).abs() < 1e-12 * peak);
    }

    #[test]
    fn polynomial_separable_ratio() {
        let f0 = InitialDensity::new(poly_spec(3, 4.0, 5.5)).unwrap();
        let x = [0.7, -0.3, 1.2];
        let rx2: f64 = x.iter().map(|a| a * a).sum();
        let ratio = f0.density(&x, &[0.0; 3]) / f0.density(&[0.0; 3], &[0.0; 3]);
        assert!((ratio - (1.0 + rx2).powf(-4.0)).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one_d1() {
        // quadrature check of the full phase-space integral in d = 1
        let f0 = InitialDensity::new(InitialDensitySpec {
            d: 1,
            kind: InitialKind::GaussXTruncgaussV {
                s_x: 0.8,
                s_v: 1.3,
                q_v: 3.0,
            },
            m0: 8.0,
        })
        .unwrap();
        let ix = quad::integrate(
            |x| quad::integrate(|v| f0.density(&[x], &[v]), -3.0, 3.0, 8),
            -8.0,
            8.0,
            16,
        );
        assert!((ix - 1.0).abs() < 1e-6, "{ix}");

        let fp = InitialDensity::new(poly_spec(1, 2.0, 3.0)).unwrap();
        let ip = quad::integrate(
            |x| quad::integrate(|v| fp.density(&[x], &[v]), -200.0, 200.0, 256),
            -200.0,
            200.0,
            256,
        );
        assert!((ip - 1.0).abs() < 1e-3, "{ip}");
    }

    #[test]
    fn polynomial_second_moment_matches_quadrature() {
        // E|x|^2 for the alpha-factor in d = 3 against the radial quadrature
        // oracle |S^2| int r^4 (1+r^2)^(-4) dr / Z
        let d = 3;
        let alpha = 4.0;
        let z = polynomial_factor_mass(d, alpha);
        // substitute r = tan(theta) to make the integrand compactly supported
        let target = crate::kernels::unit_sphere_area(d)
            * quad::integrate(
                |th| {
                    let r = th.tan();
                    let sec2 = 1.0 + r * r;
                    r.powi(4) * (1.0 + r * r).powf(-alpha) * sec2
                },
                0.0,
                std::f64::consts::FRAC_PI_2 * (1.0 - 1e-12),
                64,
            )
            / z;
        let f0 = InitialDensity::new(poly_spec(3, alpha, alpha)).unwrap();
        let n = 400_000;
        let state = f0.sample(n, 11).unwrap();
        let emp: f64 = (0..n)
            .map(|i| state.pos(i).iter().map(|a| a * a).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!(
            (emp - target).abs() < 0.01 * target,
            "empirical {emp} vs quadrature {target}"
        );
    }

    #[test]
    fn sampling_is_exchangeable_by_subkey() {
        let f0 = InitialDensity::new(poly_spec(2, 3.0, 4.0)).unwrap();
        let state = f0.sample(16, 99).unwrap();
        for i in [0usize, 5, 15] {
            let (x, v) = f0.sample_particle(99, i).unwrap();
            assert_eq!(state.pos(i), &x[..]);
            assert_eq!(state.vel(i), &v[..]);
        }
    }

    #[test]
    fn grad_log_density_bound_polynomial() {
        let (alpha, beta) = (4.0, 5.0);
        let f0 = InitialDensity::new(poly_spec(3, alpha, beta)).unwrap();
        let state = f0.sample(5_000, 3).unwrap();
        for i in 0..state.n() {
            let (gx, gv) = f0.grad_log_density(state.pos(i), state.vel(i));
            let norm = |g: &[f64]| g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(norm(&gx) <= alpha + 1e-12);
            assert!(norm(&gv) <= beta + 1e-12);
            assert!(norm(&gx) + norm(&gv) <= alpha + beta + 1e-12);
        }
    }
}
