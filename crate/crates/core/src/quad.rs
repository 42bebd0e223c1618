//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Segment { a, b, value: kron * h, error: ((kron - gauss) * h).abs() }
}

/// ∫ f over the union of consecutive `breaks` intervals, to relative
/// tolerance `rel_tol` (or absolute `abs_tol`, whichever is looser).
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_evals: usize,
) -> Result<f64> {
    // Negated so that NaN breakpoints are rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("quadrature breakpoints must be increasing"));
    }
    let mut segs: Vec<Segment> = breaks.windows(2).map(|w| gk15(&f, w[0], w[1])).collect();
    let mut evals = 15 * segs.len();
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if !value.is_finite() {
            return Err(Error::Quadrature { lo: breaks[0], hi: breaks[breaks.len() - 1], error, evaluations: evals });
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(value);
        }
        if evals >= max_evals {
            return Err(Error::Quadrature { lo: breaks[0], hi: breaks[breaks.len() - 1], error, evaluations: evals });
        }
        let worst = (0..segs.len())
            .max_by(|&i, &j| segs[i].error.total_cmp(&segs[j].error))
            .expect("nonempty");
        let Segment { a, b, .. } = segs.swap_remove(worst);
        let mid = 0.5 * (a + b);
        segs.push(gk15(&f, a, mid));
        segs.push(gk15(&f, mid, b));
        evals += 30;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| x.powi(7) - 3.0 * x * x, &[0.0, 2.0], 1e-14, 0.0, 1000).unwrap();
        assert!((v - (32.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        let v = integrate(|x| 1.0 / (1e-4 + x * x), &[-1.0, 0.0, 1.0], 1e-10, 0.0, 100_000).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v / exact - 1.0).abs() < 1e-9);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let r = integrate(|x| (1.0 / x).sin(), &[1e-6, 1.0], 1e-14, 0.0, 200);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
