//! Globally adaptive Gauss–Kronrod (7/15) quadrature for smooth real integrands.

use crate::error::{KdsError, Result};
use std::collections::BinaryHeap;

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
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-13,
            max_intervals: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Piece> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    let value = k * h;
    let error = ((k - g) * h).abs();
    if !value.is_finite() || !error.is_finite() {
        return Err(KdsError::QuadratureFailure(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok(Piece { a, b, value, error })
}

/// ∫_a^b f. The interval is bisected where the Kronrod–Gauss difference is largest.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    let first = kronrod(&f, a, b)?;
    let (mut value, mut error) = (first.value, first.error);
    heap.push(first);
    while error > opts.abs_tol.max(opts.rel_tol * value.abs()) {
        if heap.len() >= opts.max_intervals {
            return Err(KdsError::QuadratureFailure(format!(
                "{} intervals, error estimate {error:e}",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap never empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a.min(worst.b) || m >= worst.a.max(worst.b) {
            // cannot split further; accept what we have
            heap.push(worst);
            break;
        }
        let l = kronrod(&f, worst.a, m)?;
        let r = kronrod(&f, m, worst.b)?;
        value += l.value + r.value - worst.value;
        error += l.error + r.error - worst.error;
        heap.push(l);
        heap.push(r);
    }
    // re-sum to shed the drift of the running totals
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value,
        error,
        intervals: heap.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_and_peaked() {
        let r = integrate(|x: f64| x.cos(), 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((r.value - 2f64.sin()).abs() < 1e-14);
        let r = integrate(|x: f64| 1.0 / (1.0 + x), 0.0, 1e4, QuadOptions::default()).unwrap();
        assert!((r.value - 10001f64.ln()).abs() < 1e-11);
        let r = integrate(|x: f64| x * x, 3.0, 1.0, QuadOptions::default()).unwrap();
        assert!((r.value + 26.0 / 3.0).abs() < 1e-13);
    }
}
