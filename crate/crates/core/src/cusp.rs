//! Cusp profiles `τ` and geodesics of the warped metric `τ²(t)dx² + dt²`.
//!
//! Profiles are handled through `g = ln τ`. Base profiles are given by their
//! formula for `t ≥ 0` and continued as `τ(0)e^{−t}` below height 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{find_root, integrate};

/// Curvature pinching data: `(A − η)² < τ''/τ < (B + η)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pinching {
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
}

impl Pinching {
    pub fn admits(&self, ratio: f64) -> bool {
        let lo = (self.lower - self.eta).powi(2);
        let hi = (self.upper + self.eta).powi(2);
        ratio > lo && ratio < hi
    }
}

/// Cubic Hermite interpolation of `g'` across a transition band, integrated exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub start: f64,
    pub width: f64,
    pub g_start: f64,
    pub slope0: f64,
    pub curv0: f64,
    pub slope1: f64,
    pub curv1: f64,
}

impl Transition {
    fn x(&self, t: f64) -> f64 {
        (t - self.start) / self.width
    }

    pub fn g(&self, t: f64) -> f64 {
        let x = self.x(t);
        let (x2, x3, x4) = (x * x, x * x * x, x * x * x * x);
        let w = self.width;
        let h00 = x4 / 2.0 - x3 + x;
        let h10 = x4 / 4.0 - 2.0 * x3 / 3.0 + x2 / 2.0;
        let h01 = -x4 / 2.0 + x3;
        let h11 = x4 / 4.0 - x3 / 3.0;
        self.g_start + w * (self.slope0 * h00 + w * self.curv0 * h10 + self.slope1 * h01 + w * self.curv1 * h11)
    }

    pub fn d1(&self, t: f64) -> f64 {
        let x = self.x(t);
        let (x2, x3) = (x * x, x * x * x);
        let w = self.width;
        self.slope0 * (2.0 * x3 - 3.0 * x2 + 1.0)
            + w * self.curv0 * (x3 - 2.0 * x2 + x)
            + self.slope1 * (-2.0 * x3 + 3.0 * x2)
            + w * self.curv1 * (x3 - x2)
    }

    pub fn d2(&self, t: f64) -> f64 {
        let x = self.x(t);
        let x2 = x * x;
        let w = self.width;
        (self.slope0 * (6.0 * x2 - 6.0 * x)
            + w * self.curv0 * (3.0 * x2 - 4.0 * x + 1.0)
            + self.slope1 * (-6.0 * x2 + 6.0 * x)
            + w * self.curv1 * (3.0 * x2 - 2.0 * x))
            / w
    }

    pub fn end(&self) -> f64 {
        self.start + self.width
    }
}

/// The profile `τ_{a,b,η}`: hyperbolic up to `a`, slope `−ω` on `[a+Δ, a+Δ+b]`,
/// then the inner profile from its height `t₀` on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandProfile {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub omega: f64,
    pub pinch: Pinching,
    pub inner: Profile,
    pub inner_t0: f64,
    pub first: Transition,
    pub second: Transition,
    /// `g` at the start of the tail, `T₀ = a + 2Δ + b`.
    pub g_tail: f64,
}

impl BandProfile {
    fn new(inner: Profile, a: f64, b: f64, pinch: Pinching, delta: f64) -> Self {
        let omega = inner.omega();
        let t0 = inner.t0();
        let first = Transition {
            start: a,
            width: delta,
            g_start: -a,
            slope0: -1.0,
            curv0: 0.0,
            slope1: -omega,
            curv1: 0.0,
        };
        let g_band = first.g(first.end());
        let second_start = a + delta + b;
        let second = Transition {
            start: second_start,
            width: delta,
            g_start: g_band - omega * b,
            slope0: -omega,
            curv0: 0.0,
            slope1: inner.d1(t0),
            curv1: inner.d2(t0),
        };
        let g_tail = second.g(second.end());
        Self {
            a,
            b,
            delta,
            omega,
            pinch,
            inner,
            inner_t0: t0,
            first,
            second,
            g_tail,
        }
    }

    pub fn tail_start(&self) -> f64 {
        self.second.end()
    }

    fn piece(&self, t: f64) -> u8 {
        if t <= self.a {
            0
        } else if t <= self.first.end() {
            1
        } else if t <= self.second.start {
            2
        } else if t <= self.second.end() {
            3
        } else {
            4
        }
    }

    fn g(&self, t: f64) -> f64 {
        match self.piece(t) {
            0 => -t,
            1 => self.first.g(t),
            2 => self.second.g_start + self.omega * (self.second.start - t),
            3 => self.second.g(t),
            _ => self.g_tail + self.inner.g(t - self.tail_start() + self.inner_t0) - self.inner.g(self.inner_t0),
        }
    }

    fn d1(&self, t: f64) -> f64 {
        match self.piece(t) {
            0 => -1.0,
            1 => self.first.d1(t),
            2 => -self.omega,
            3 => self.second.d1(t),
            _ => self.inner.d1(t - self.tail_start() + self.inner_t0),
        }
    }

    fn d2(&self, t: f64) -> f64 {
        match self.piece(t) {
            0 | 2 => 0.0,
            1 => self.first.d2(t),
            3 => self.second.d2(t),
            _ => self.inner.d2(t - self.tail_start() + self.inner_t0),
        }
    }

    fn delta(&self, s: f64, gap: f64) -> f64 {
        let t = s - gap;
        match (self.piece(t), self.piece(s)) {
            (0, 0) => gap,
            (2, 2) => self.omega * gap,
            (4, 4) => {
                let off = self.inner_t0 - self.tail_start();
                self.inner.delta(s + off, gap)
            }
            _ => generic_delta(|x| self.g(x), |x| self.d1(x), |x| self.d2(x), s, gap),
        }
    }
}

/// A sampled profile, interpolated by cubic Hermite splines in `ln τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableProfile {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub slope: Vec<f64>,
    pub omega: f64,
}

impl TableProfile {
    pub fn new(t: Vec<f64>, tau: Vec<f64>, omega: f64) -> Result<Self> {
        if t.len() < 3 || t.len() != tau.len() {
            return Err(Error::InvalidArgument("table profile needs at least 3 rows".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("table heights must be strictly increasing".into()));
        }
        if tau.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("table values must be positive".into()));
        }
        let g: Vec<f64> = tau.iter().map(|v| v.ln()).collect();
        let n = t.len();
        let mut slope = vec![0.0; n];
        for i in 0..n {
            slope[i] = if i == 0 {
                (g[1] - g[0]) / (t[1] - t[0])
            } else if i == n - 1 {
                (g[n - 1] - g[n - 2]) / (t[n - 1] - t[n - 2])
            } else {
                // Three-point derivative on a nonuniform grid.
                let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
                let s0 = (g[i] - g[i - 1]) / h0;
                let s1 = (g[i + 1] - g[i]) / h1;
                (h1 * s0 + h0 * s1) / (h0 + h1)
            };
        }
        Ok(Self { t, g, slope, omega })
    }

    /// Parses a two-column `t,tau` CSV with a header row.
    pub fn from_csv(text: &str, omega: f64) -> Result<Self> {
        let mut t = Vec::new();
        let mut tau = Vec::new();
        for (k, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64> {
                p.and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad table row {}", k + 1)))
            };
            t.push(parse(parts.next())?);
            tau.push(parse(parts.next())?);
        }
        Self::new(t, tau, omega)
    }

    fn locate(&self, x: f64) -> Option<usize> {
        if x < self.t[0] || x > *self.t.last().unwrap() {
            return None;
        }
        let i = self.t.partition_point(|&v| v <= x);
        Some(i.clamp(1, self.t.len() - 1) - 1)
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.t.len();
        let Some(i) = self.locate(x) else {
            let (k, s) = if x < self.t[0] {
                (0, self.slope[0])
            } else {
                (n - 1, self.slope[n - 1])
            };
            return (self.g[k] + s * (x - self.t[k]), s, 0.0);
        };
        let h = self.t[i + 1] - self.t[i];
        let u = (x - self.t[i]) / h;
        let (p0, p1, m0, m1) = (self.g[i], self.g[i + 1], self.slope[i] * h, self.slope[i + 1] * h);
        let (u2, u3) = (u * u, u * u * u);
        let g = (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1;
        let d1 = ((6.0 * u2 - 6.0 * u) * p0 + (3.0 * u2 - 4.0 * u + 1.0) * m0 + (-6.0 * u2 + 6.0 * u) * p1 + (3.0 * u2 - 2.0 * u) * m1) / h;
        let d2 = ((12.0 * u - 6.0) * p0 + (6.0 * u - 4.0) * m0 + (-12.0 * u + 6.0) * p1 + (6.0 * u - 2.0) * m1) / (h * h);
        (g, d1, d2)
    }
}

/// An analytic cusp profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Profile {
    /// `τ(t) = e^{−t}`.
    Hyperbolic,
    /// `τ(t) = e^{−ωt}`.
    ExpRate {
        omega: f64,
    },
    /// `τ(t) = (1 + t)^{1+κ} e^{−ωt}`.
    PolyLog {
        omega: f64,
        kappa_tail: f64,
    },
    /// `τ_a(t) = e^{−a} τ(t − a)`.
    Shifted {
        a: f64,
        inner: Box<Profile>,
    },
    Band(Box<BandProfile>),
    Table(TableProfile),
}

/// Below this gap, `g(s − gap) − g(s)` is evaluated by a second-order Taylor expansion.
const TAYLOR_GAP: f64 = 1e-5;

fn generic_delta(g: impl Fn(f64) -> f64, d1: impl Fn(f64) -> f64, d2: impl Fn(f64) -> f64, s: f64, gap: f64) -> f64 {
    if gap < TAYLOR_GAP {
        -d1(s) * gap + 0.5 * d2(s) * gap * gap
    } else {
        g(s - gap) - g(s)
    }
}

impl Profile {
    pub fn exp_rate(omega: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::InvalidArgument(format!("growth rate {omega} must be positive")));
        }
        Ok(Profile::ExpRate { omega })
    }

    pub fn poly_log(omega: f64, kappa_tail: f64) -> Result<Self> {
        if !(omega > 1.0 + kappa_tail) || !(kappa_tail > -1.0) {
            return Err(Error::InvalidArgument(format!(
                "PolyLog needs ω > 1 + κ (got ω = {omega}, κ = {kappa_tail})"
            )));
        }
        Ok(Profile::PolyLog { omega, kappa_tail })
    }

    /// `ln τ(t)`.
    pub fn g(&self, t: f64) -> f64 {
        match self {
            Profile::Hyperbolic => -t,
            Profile::ExpRate { omega } => {
                if t >= 0.0 {
                    -omega * t
                } else {
                    -t
                }
            }
            Profile::PolyLog { omega, kappa_tail } => {
                if t >= 0.0 {
                    (1.0 + kappa_tail) * t.ln_1p() - omega * t
                } else {
                    -t
                }
            }
            Profile::Shifted { a, inner } => -a + inner.g(t - a),
            Profile::Band(b) => b.g(t),
            Profile::Table(tb) => tb.eval(t).0,
        }
    }

    /// `(ln τ)'(t)`.
    pub fn d1(&self, t: f64) -> f64 {
        match self {
            Profile::Hyperbolic => -1.0,
            Profile::ExpRate { omega } => {
                if t >= 0.0 {
                    -omega
                } else {
                    -1.0
                }
            }
            Profile::PolyLog { omega, kappa_tail } => {
                if t >= 0.0 {
                    (1.0 + kappa_tail) / (1.0 + t) - omega
                } else {
                    -1.0
                }
            }
            Profile::Shifted { a, inner } => inner.d1(t - a),
            Profile::Band(b) => b.d1(t),
            Profile::Table(tb) => tb.eval(t).1,
        }
    }

    /// `(ln τ)''(t)`.
    pub fn d2(&self, t: f64) -> f64 {
        match self {
            Profile::Hyperbolic | Profile::ExpRate { .. } => 0.0,
            Profile::PolyLog { kappa_tail, .. } => {
                if t >= 0.0 {
                    -(1.0 + kappa_tail) / ((1.0 + t) * (1.0 + t))
                } else {
                    0.0
                }
            }
            Profile::Shifted { a, inner } => inner.d2(t - a),
            Profile::Band(b) => b.d2(t),
            Profile::Table(tb) => tb.eval(t).2,
        }
    }

    pub fn tau(&self, t: f64) -> f64 {
        self.g(t).exp()
    }

    /// `τ''/τ = g'' + g'²`.
    pub fn curvature_ratio(&self, t: f64) -> f64 {
        let d1 = self.d1(t);
        self.d2(t) + d1 * d1
    }

    /// `g(s − gap) − g(s)` for `gap ≥ 0`, free of cancellation for small gaps.
    pub fn delta(&self, s: f64, gap: f64) -> f64 {
        let t = s - gap;
        match self {
            Profile::Hyperbolic => gap,
            Profile::ExpRate { omega } if t >= 0.0 => omega * gap,
            Profile::PolyLog { omega, kappa_tail } if t >= 0.0 => (1.0 + kappa_tail) * (-gap / (1.0 + s)).ln_1p() + omega * gap,
            Profile::Shifted { a, inner } => inner.delta(s - a, gap),
            Profile::Band(b) => b.delta(s, gap),
            _ => generic_delta(|x| self.g(x), |x| self.d1(x), |x| self.d2(x), s, gap),
        }
    }

    /// Declared growth rate `ω_τ`.
    pub fn omega(&self) -> f64 {
        match self {
            Profile::Hyperbolic => 1.0,
            Profile::ExpRate { omega } | Profile::PolyLog { omega, .. } => *omega,
            Profile::Shifted { inner, .. } => inner.omega(),
            Profile::Band(b) => b.omega,
            Profile::Table(tb) => tb.omega,
        }
    }

    /// Height from which the profile satisfies `τ''/τ ≥ 1`.
    pub fn t0(&self) -> f64 {
        match self {
            Profile::PolyLog { .. } => {
                let f = |t: f64| self.curvature_ratio(t) - 1.0;
                if f(0.0) >= 0.0 {
                    0.0
                } else {
                    let mut hi = 1.0;
                    while f(hi) < 0.0 {
                        hi *= 2.0;
                    }
                    find_root(f, 0.0, hi, 1e-14).unwrap_or(hi)
                }
            }
            Profile::Shifted { a, inner } => a + inner.t0(),
            _ => 0.0,
        }
    }

    /// Heights where the analytic form changes; used as quadrature breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Shifted { a, inner } => {
                let mut v: Vec<f64> = inner.breakpoints().into_iter().map(|t| t + a).collect();
                v.push(*a);
                v
            }
            Profile::Band(b) => vec![b.a, b.first.end(), b.second.start, b.second.end()],
            Profile::Table(tb) => tb.t.clone(),
            _ => vec![0.0],
        }
    }

    /// `max_{t ∈ [T, 2T]} |ln τ(t)|/t`, the finite-horizon growth-rate estimator.
    pub fn omega_estimate(&self, t_chk: f64) -> f64 {
        (0..=100)
            .map(|k| {
                let t = t_chk * (1.0 + k as f64 / 100.0);
                self.g(t).abs() / t
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether the growth-rate estimator agrees with the declared `ω_τ` within 1%.
    pub fn omega_consistent(&self, t_chk: f64) -> bool {
        (self.omega_estimate(t_chk) / self.omega() - 1.0).abs() <= 0.01
    }
}

/// `τ_a(t) = e^{−a}τ(t − a)`.
pub fn tau_a(inner: Profile, a: f64) -> Result<Profile> {
    let t0 = inner.t0();
    if a < t0 {
        return Err(Error::InvalidArgument(format!("shift a = {a} is below t₀ = {t0}")));
    }
    Ok(Profile::Shifted { a, inner: Box::new(inner) })
}

/// Candidate transition widths searched for `Δ(A, B, η)`.
pub const DELTA_GRID_STEP: f64 = 0.25;
pub const DELTA_GRID_MAX: f64 = 40.0;
const PINCH_SAMPLES: usize = 400;

/// The profile `τ_{a,b,η}` with the smallest grid width `Δ` meeting the pinching.
pub fn tau_abeta(inner: Profile, a: f64, b: f64, pinch: Pinching) -> Result<Profile> {
    let t0 = inner.t0();
    if a < t0 || b < 0.0 || !(pinch.eta > 0.0 && pinch.eta < pinch.lower) {
        return Err(Error::InvalidArgument(format!(
            "tau_abeta needs a ≥ t₀ = {t0}, b ≥ 0 and 0 < η < A"
        )));
    }
    let check = |tr: &Transition| -> Option<String> {
        (0..=PINCH_SAMPLES).find_map(|k| {
            let t = tr.start + tr.width * k as f64 / PINCH_SAMPLES as f64;
            let (d1, d2) = (tr.d1(t), tr.d2(t));
            let r = d2 + d1 * d1;
            (!pinch.admits(r) || !pinch.admits(d1 * d1)).then(|| format!("τ''/τ = {r:.6} at t = {t:.4}"))
        })
    };
    let inner_ok = (0..=PINCH_SAMPLES).find_map(|k| {
        let t = t0 + 200.0 * k as f64 / PINCH_SAMPLES as f64;
        let (d1, r) = (inner.d1(t), inner.curvature_ratio(t));
        (!pinch.admits(r) || !pinch.admits(d1 * d1)).then(|| format!("inner τ''/τ = {r:.6} at t = {t:.4}"))
    });
    if let Some(msg) = inner_ok {
        return Err(Error::Pinching(msg));
    }
    let mut last = String::from("no width tried");
    let steps = (DELTA_GRID_MAX / DELTA_GRID_STEP).round() as usize;
    for k in 1..=steps {
        let delta = k as f64 * DELTA_GRID_STEP;
        let band = BandProfile::new(inner.clone(), a, b, pinch, delta);
        match check(&band.first).or_else(|| check(&band.second)) {
            None => return Ok(Profile::Band(Box::new(band))),
            Some(msg) => last = msg,
        }
    }
    Err(Error::Pinching(last))
}

/// Extrema of `−(τ'/τ)²` and `−τ''/τ` on a uniform grid of 2001 heights.
pub fn curvature_range(p: &Profile, t_lo: f64, t_hi: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..=2000 {
        let t = t_lo + (t_hi - t_lo) * k as f64 / 2000.0;
        let d1 = p.d1(t);
        for v in [-d1 * d1, -p.curvature_ratio(t)] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// A cusp: profile, dimension and flat translation length on the reference horosphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CuspGeometry {
    pub profile: Profile,
    pub dim: usize,
    pub w0: f64,
    /// Largest turning height considered by the geodesic solver.
    pub t_max: f64,
}

/// Convergence status of a parabolic subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ConvergenceStatus {
    Convergent { value: f64 },
    Divergent { partial: f64 },
    Inconclusive { partial: f64 },
}

/// Turning-point data of the geodesic with apex at height `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turning {
    pub height: f64,
    pub ln_displacement: f64,
    pub length: f64,
}

const QUAD_ABS: f64 = 1e-13;
const QUAD_REL: f64 = 1e-12;
const QUAD_PANELS: usize = 400;

impl CuspGeometry {
    pub fn new(profile: Profile, dim: usize, w0: f64) -> Result<Self> {
        if dim < 2 || !(w0 > 0.0) {
            return Err(Error::InvalidArgument("cusp needs N ≥ 2 and w₀ > 0".into()));
        }
        Ok(Self {
            profile,
            dim,
            w0,
            t_max: 2000.0,
        })
    }

    /// `𝒜(t) = w₀^{N−1} τ(t)^{N−1}`.
    pub fn horo_area(&self, t: f64) -> f64 {
        let k = (self.dim - 1) as f64;
        (k * (self.w0.ln() + self.profile.g(t))).exp()
    }

    /// `δ_P = (N − 1)ω_τ/2`.
    pub fn delta_parabolic(&self) -> f64 {
        (self.dim - 1) as f64 * self.profile.omega() / 2.0
    }

    /// Decides finiteness of `∫₀^∞ e^{−ω(N−1)t}/τ^{N−1}(t) dt`.
    ///
    /// With `h = −ln(integrand)`, a sampled bound `h'(t)(1+t) ≥ p > 1` past the
    /// horizon certifies a tail `≤ f(T)(1+T)/(p−1)`; `h'(t)(1+t) ≤ 1` certifies divergence.
    pub fn convergence_test(&self, horizon: f64) -> ConvergenceStatus {
        let k = (self.dim - 1) as f64;
        let w = self.profile.omega();
        let p = &self.profile;
        let h = |t: f64| k * (w * t + p.g(t));
        let dh = |t: f64| k * (w + p.d1(t));
        let mut breaks: Vec<f64> = p.breakpoints().into_iter().filter(|&b| b > 0.0 && b < horizon).collect();
        breaks.push(0.0);
        breaks.push(horizon);
        breaks.sort_by(f64::total_cmp);
        let partial: f64 = breaks
            .windows(2)
            .map(|s| integrate(|t| (-h(t)).exp(), s[0], s[1], 1e-14, 1e-12, 2000).value)
            .sum();
        let rates: Vec<f64> = (0..=200)
            .map(|j| {
                let t = horizon * 64f64.powf(j as f64 / 200.0);
                dh(t) * (1.0 + t)
            })
            .collect();
        let p_min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let p_max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if p_min > 1.0 {
            let tail = (-h(horizon)).exp() * (1.0 + horizon) / (p_min - 1.0);
            ConvergenceStatus::Convergent { value: partial + tail }
        } else if p_max <= 1.0 {
            ConvergenceStatus::Divergent { partial }
        } else {
            ConvergenceStatus::Inconclusive { partial }
        }
    }

    fn integrand_limit(&self, s: f64) -> f64 {
        (2.0 * s / -self.profile.d1(s)).sqrt()
    }

    /// Breakpoints in `v` (with `t = s(1 − v²)`) for the turning integrals.
    fn v_breaks(&self, s: f64) -> Vec<f64> {
        let slope = -self.profile.d1(s);
        let scale = 1.0 / (slope * s).max(1e-300).sqrt();
        let mut v = vec![0.0, 1.0];
        for m in [1.0, 4.0, 16.0] {
            if m * scale < 1.0 {
                v.push(m * scale);
            }
        }
        for t in self.profile.breakpoints() {
            if t > 0.0 && t < s {
                v.push((1.0 - t / s).sqrt());
            }
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn turning_integral(&self, s: f64, displacement: bool) -> f64 {
        let p = &self.profile;
        let limit = self.integrand_limit(s);
        let f = |v: f64| {
            let gap = s * v * v;
            let d = p.delta(s, gap);
            if !(d > 0.0) {
                // Both integrands tend to √(2s/|g'(s)|) at the apex.
                return limit;
            }
            let one_minus_u = -(-2.0 * d).exp_m1();
            let jac = 2.0 * s * v;
            if displacement {
                jac * (-2.0 * d).exp() / one_minus_u.sqrt()
            } else {
                jac / one_minus_u.sqrt()
            }
        };
        self.v_breaks(s)
            .windows(2)
            .map(|w| integrate(f, w[0], w[1], QUAD_ABS, QUAD_REL, QUAD_PANELS).value)
            .sum()
    }

    /// `ln ℓ(s)` for the geodesic with apex at height `s`.
    pub fn ln_displacement(&self, s: f64) -> f64 {
        std::f64::consts::LN_2 - self.profile.g(s) + self.turning_integral(s, true).ln()
    }

    /// Length `L(s)` of the geodesic with apex at height `s`.
    pub fn turning_length(&self, s: f64) -> f64 {
        2.0 * self.turning_integral(s, false)
    }

    pub fn turning(&self, s: f64) -> Turning {
        Turning {
            height: s,
            ln_displacement: self.ln_displacement(s),
            length: self.turning_length(s),
        }
    }

    /// Apex height of the geodesic with horizontal displacement `e^{ln_ell}`.
    pub fn turning_height(&self, ln_ell: f64) -> Result<f64> {
        let f = |s: f64| self.ln_displacement(s) - ln_ell;
        let mut hi = 1.0_f64.min(self.t_max);
        while f(hi) < 0.0 {
            if hi >= self.t_max {
                return Err(Error::DisplacementTooLarge {
                    requested: ln_ell.exp(),
                    max: self.ln_displacement(self.t_max).exp(),
                });
            }
            hi = (2.0 * hi).min(self.t_max);
        }
        let mut lo = hi / 2.0;
        while f(lo) > 0.0 {
            hi = lo;
            lo /= 4.0;
            if lo < 1e-300 {
                return Err(Error::InvalidArgument("displacement too small".into()));
            }
        }
        find_root(f, lo, hi, 1e-14 * hi.max(1e-300))
    }

    /// Distance between two points of the reference horosphere at flat distance `ℓ`.
    pub fn cusp_distance(&self, ell: f64) -> Result<f64> {
        if !(ell > 0.0) {
            return Err(Error::InvalidArgument(format!("displacement {ell} must be positive")));
        }
        self.cusp_distance_ln(ell.ln())
    }

    /// [`Self::cusp_distance`] for a displacement given by its logarithm.
    pub fn cusp_distance_ln(&self, ln_ell: f64) -> Result<f64> {
        let s = self.turning_height(ln_ell)?;
        Ok(self.turning_length(s))
    }

    /// Model distance `d(x₀, pⁿx₀)`: the cusp geodesic at displacement `|n|w₀`
    /// plus `2·base_depth`.
    pub fn parabolic_orbit_distance(&self, base_depth: f64, n: i64) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("parabolic power n must be nonzero".into()));
        }
        let ln_ell = (n.unsigned_abs() as f64).ln() + self.w0.ln();
        Ok(self.cusp_distance_ln(ln_ell)? + 2.0 * base_depth)
    }
}
