//! Adaptive Gauss–Kronrod quadrature (7-point Gauss, 15-point Kronrod) and a
//! bracketed root finder.

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Values that can be integrated: real or complex.
pub trait QuadValue: Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<f64, Output = Self> {
    const ZERO: Self;
    fn magnitude(self) -> f64;
}

impl QuadValue for f64 {
    const ZERO: Self = 0.0;
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for num_complex::Complex64 {
    const ZERO: Self = num_complex::Complex64 { re: 0.0, im: 0.0 };
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// One Gauss–Kronrod panel: returns (Kronrod estimate, |Kronrod − Gauss|).
fn panel<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k = k + s * WGK[j];
        if j % 2 == 1 {
            g = g + s * WG[j / 2];
        }
    }
    (k * h, (k - g).magnitude() * h.abs())
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<V = f64> {
    pub value: V,
    pub error: f64,
    pub panels: usize,
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol·|I|)` by bisecting the
/// panel with the largest error estimate. Panels are processed in a fixed order,
/// so the result is deterministic.
pub fn integrate<V: QuadValue, F: FnMut(f64) -> V>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Quadrature<V> {
    if a == b {
        return Quadrature {
            value: V::ZERO,
            error: 0.0,
            panels: 0,
        };
    }
    let (v, e) = panel(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let value = panels.iter().fold(V::ZERO, |acc, p| acc + p.2);
        let error: f64 = panels.iter().map(|p| p.3).sum();
        if error <= abs_tol.max(rel_tol * value.magnitude()) || panels.len() >= max_panels {
            return Quadrature {
                value,
                error,
                panels: panels.len(),
            };
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (lo, hi, _, _) = panels[worst];
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = panel(&mut f, lo, mid);
        let (v2, e2) = panel(&mut f, mid, hi);
        panels[worst] = (lo, mid, v1, e1);
        panels.push((mid, hi, v2, e2));
    }
}

/// `E_p(iy) = ∫₁^∞ e^{−iyx} x^{−p} dx` for `p > 1`, `y ≥ 0`.
///
/// Quadrature in `ln x` up to `|y|x = 20`, then a Lentz continued fraction.
pub fn expint_imag(p: f64, y: f64) -> num_complex::Complex64 {
    use num_complex::Complex64 as C;
    if y == 0.0 {
        return C::new(1.0 / (p - 1.0), 0.0);
    }
    let x_split = (20.0 / y).max(1.0);
    let head = integrate(
        |v: f64| C::new(0.0, -y * v.exp()).exp() * ((1.0 - p) * v).exp(),
        0.0,
        x_split.ln(),
        1e-15,
        1e-13,
        4000,
    )
    .value;
    // E_p(w) on |w| ≥ 20 by its continued fraction.
    let w = C::new(0.0, y * x_split);
    let tiny = 1e-300;
    let mut b = w + p;
    let mut c = C::new(1.0 / tiny, 0.0);
    let mut d = C::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (p - 1.0 + i as f64);
        b += 2.0;
        d = C::new(1.0, 0.0) / (d * an + b);
        c = b + C::new(an, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-15 {
            break;
        }
    }
    let tail = h * (-w).exp() * x_split.powf(1.0 - p);
    head + tail
}

/// Brent root of `f` in `[lo, hi]`; `f(lo)` and `f(hi)` must differ in sign.
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::BracketFailure { lo, hi, f_lo, f_hi });
    }
    let mut conv = roots::SimpleConvergency { eps: tol, max_iter: 200 };
    roots::find_root_brent(lo, hi, f, &mut conv).map_err(|_| Error::BracketFailure { lo, hi, f_lo, f_hi })
}

/// Least-squares line through `(x, y)` points: `(slope, intercept, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
