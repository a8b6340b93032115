//! Adaptive Gauss–Kronrod (7/15) integration.

use crate::error::{DinaError, Result};

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Integrates `f` over `[a, b]` to absolute error `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut pending = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut worst = 0.0_f64;
    let mut evaluations = 0usize;
    while let Some((lo, hi, t)) = pending.pop() {
        let (v, err) = kronrod(&f, lo, hi);
        evaluations += 1;
        if !v.is_finite() {
            return Err(DinaError::Quadrature { tol, err: f64::INFINITY });
        }
        if err <= t || (hi - lo).abs() < 1e-12 * (b - a).abs() {
            total += v;
            worst = worst.max(err - t);
        } else if evaluations > 20_000 {
            return Err(DinaError::Quadrature { tol, err });
        } else {
            let mid = 0.5 * (lo + hi);
            pending.push((lo, mid, 0.5 * t));
            pending.push((mid, hi, 0.5 * t));
        }
    }
    if worst > tol {
        return Err(DinaError::Quadrature { tol, err: worst });
    }
    Ok(total)
}
