//! Small 1-D quadrature helper used for normalization constants and oracles.

/// 16-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// Composite 16-point Gauss-Legendre quadrature of `f` over `[a, b]`
/// with `panels` equal panels. Machine precision for smooth integrands
/// with a handful of panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels >= 1, "at least one panel");
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for k in 0..8 {
            acc += GL16_W[k] * (f(mid + half * GL16_X[k]) + f(mid - half * GL16_X[k]));
        }
        total += acc * half;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1);
        assert!((v - 8.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_integral() {
        // erf normalization: int_{-6}^{6} exp(-x^2/2)/sqrt(2 pi) ~ 1
        let v = integrate(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -6.0,
            6.0,
            8,
        );
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }
}
