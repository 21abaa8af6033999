//! Hyperbolic plane geometry in the Poincaré disk model.
//!
//! Isometries are normalized Möbius maps `z ↦ (a z + c)/(c̄ z + ā)` with
//! `|a|² − |c|² = 1`. Busemann functions follow the convention that horoballs
//! are sup-level sets: `B_ξ(x₀, y)` grows as `y` moves toward `ξ`.

use std::f64::consts::TAU;

use num_complex::Complex64 as Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances of the geometry engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub disk: f64,
    pub norm: f64,
    pub buse: f64,
    pub class: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            disk: 1e-12,
            norm: 1e-10,
            buse: 1e-8,
            class: 1e-8,
        }
    }
}

pub const EPS_DISK: f64 = 1e-12;
pub const EPS_ANGLE: f64 = 1e-12;
/// Compositions between two renormalizations of an [`Isometry`].
pub const K_RENORM: u32 = 64;

/// A point of the open unit disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskPoint(Complex);

impl DiskPoint {
    pub const ORIGIN: DiskPoint = DiskPoint(Complex { re: 0.0, im: 0.0 });

    pub fn new(z: Complex) -> Result<Self> {
        let r = z.norm();
        if r.is_finite() && r < 1.0 - EPS_DISK {
            Ok(Self(z))
        } else {
            Err(Error::OutsideDisk(r))
        }
    }

    /// Builds a point without the strict interior check; callers guarantee `|z| < 1`.
    pub fn new_unchecked(z: Complex) -> Self {
        Self(z)
    }

    pub fn from_polar(r: f64, theta: f64) -> Result<Self> {
        Self::new(Complex::from_polar(r, theta))
    }

    pub fn z(self) -> Complex {
        self.0
    }
}

/// A point of the circle at infinity, stored by its angle in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct BoundaryPoint(f64);

impl BoundaryPoint {
    pub fn new(theta: f64) -> Self {
        Self(normalize_angle(theta))
    }

    pub fn from_complex(z: Complex) -> Self {
        Self::new(z.arg())
    }

    pub fn theta(self) -> f64 {
        self.0
    }

    pub fn z(self) -> Complex {
        Complex::from_polar(1.0, self.0)
    }

    pub fn approx_eq(self, other: Self, tol: f64) -> bool {
        angle_gap(self.0, other.0) <= tol
    }
}

/// Reduces an angle to `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Unsigned angular distance on the circle, in `[0, π]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Classification of an isometry by its trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IsometryKind {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Orientation-preserving isometry of the disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    a: Complex,
    c: Complex,
    since_renorm: u32,
}

impl Isometry {
    pub const IDENTITY: Isometry = Isometry {
        a: Complex { re: 1.0, im: 0.0 },
        c: Complex { re: 0.0, im: 0.0 },
        since_renorm: 0,
    };

    /// Builds `z ↦ (a z + c)/(c̄ z + ā)`, rescaling so that `|a|² − |c|² = 1`.
    pub fn new(a: Complex, c: Complex) -> Result<Self> {
        let det = a.norm_sqr() - c.norm_sqr();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::InvalidArgument(format!("isometry determinant {det} is not positive")));
        }
        let s = det.sqrt();
        Ok(Self {
            a: a / s,
            c: c / s,
            since_renorm: 0,
        })
    }

    /// Rotation `z ↦ e^{iθ} z`.
    pub fn rotation(theta: f64) -> Self {
        Self {
            a: Complex::from_polar(1.0, theta / 2.0),
            c: Complex::new(0.0, 0.0),
            since_renorm: 0,
        }
    }

    /// The isometry `z ↦ (z + p)/(1 + p̄ z)` taking `0` to `p`.
    pub fn translation_to(p: DiskPoint) -> Self {
        let s = (1.0 - p.0.norm_sqr()).sqrt();
        Self {
            a: Complex::new(1.0 / s, 0.0),
            c: p.0 / s,
            since_renorm: 0,
        }
    }

    pub fn coefficients(&self) -> (Complex, Complex) {
        (self.a, self.c)
    }

    pub fn det(&self) -> f64 {
        self.a.norm_sqr() - self.c.norm_sqr()
    }

    /// Real trace `2 Re(a)` of the normalized representative.
    pub fn trace(&self) -> f64 {
        2.0 * self.a.re
    }

    pub fn compose(&self, other: &Isometry) -> Isometry {
        let a = self.a * other.a + self.c * other.c.conj();
        let c = self.a * other.c + self.c * other.a.conj();
        let mut g = Isometry {
            a,
            c,
            since_renorm: self.since_renorm.max(other.since_renorm) + 1,
        };
        if g.since_renorm >= K_RENORM {
            g.renormalize();
        }
        g
    }

    pub fn renormalize(&mut self) {
        let s = self.det().sqrt();
        self.a /= s;
        self.c /= s;
        self.since_renorm = 0;
    }

    pub fn inverse(&self) -> Isometry {
        Isometry {
            a: self.a.conj(),
            c: -self.c,
            since_renorm: self.since_renorm,
        }
    }

    pub fn pow(&self, n: i64) -> Isometry {
        let base = if n < 0 { self.inverse() } else { *self };
        let mut e = n.unsigned_abs();
        let mut acc = Isometry::IDENTITY;
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.compose(&sq);
            }
            e >>= 1;
            if e > 0 {
                sq = sq.compose(&sq);
            }
        }
        acc
    }

    pub fn apply_complex(&self, z: Complex) -> Complex {
        (self.a * z + self.c) / (self.c.conj() * z + self.a.conj())
    }

    pub fn apply(&self, p: DiskPoint) -> DiskPoint {
        DiskPoint(self.apply_complex(p.0))
    }

    pub fn apply_boundary(&self, x: BoundaryPoint) -> BoundaryPoint {
        BoundaryPoint::from_complex(self.apply_complex(x.z()))
    }

    /// Image of the basepoint `x₀ = 0`.
    pub fn orbit_origin(&self) -> DiskPoint {
        DiskPoint(self.c / self.a.conj())
    }

    pub fn classify(&self, eps_class: f64) -> IsometryKind {
        if (self.a - Complex::new(self.a.re.signum(), 0.0)).norm() < eps_class && self.c.norm() < eps_class {
            return IsometryKind::Identity;
        }
        let t2 = self.trace() * self.trace();
        if (t2 - 4.0).abs() <= eps_class * 4.0_f64.max(t2) {
            IsometryKind::Parabolic
        } else if t2 < 4.0 {
            IsometryKind::Elliptic
        } else {
            IsometryKind::Hyperbolic
        }
    }

    pub fn approx_eq(&self, other: &Isometry, tol: f64) -> bool {
        // The normalized representative is defined up to a global sign.
        let same = (self.a - other.a).norm() + (self.c - other.c).norm();
        let flip = (self.a + other.a).norm() + (self.c + other.c).norm();
        same.min(flip) <= tol
    }
}

/// Hyperbolic distance `2 asinh(|p − q| / √((1 − |p|²)(1 − |q|²)))`.
pub fn hyp_dist(p: DiskPoint, q: DiskPoint) -> f64 {
    let num = (p.0 - q.0).norm();
    let den = ((1.0 - p.0.norm_sqr()) * (1.0 - q.0.norm_sqr())).sqrt();
    2.0 * (num / den).asinh()
}

/// Distance from the basepoint, `2 artanh |z|`.
pub fn dist_origin(p: DiskPoint) -> f64 {
    2.0 * p.0.norm().atanh()
}

/// Busemann function `B_ξ(p, q)` via the Poisson kernel.
pub fn busemann(xi: BoundaryPoint, p: DiskPoint, q: DiskPoint) -> f64 {
    let x = xi.z();
    log_poisson(x, q.0) - log_poisson(x, p.0)
}

fn log_poisson(x: Complex, z: Complex) -> f64 {
    (1.0 - z.norm_sqr()).ln() - 2.0 * (x - z).norm().ln()
}

/// Gromov product `(x|y)_o` of two boundary points.
pub fn gromov_product(x: BoundaryPoint, y: BoundaryPoint, o: DiskPoint) -> Result<f64> {
    let (xz, yz) = if o.0 == Complex::new(0.0, 0.0) {
        (x.z(), y.z())
    } else {
        let m = Isometry::translation_to(o).inverse();
        (m.apply_complex(x.z()), m.apply_complex(y.z()))
    };
    let d = (xz - yz).norm();
    if d <= EPS_ANGLE {
        return Err(Error::InfiniteProduct);
    }
    Ok(-(d / 2.0).ln())
}

/// Gromov product `(x|y)_{x₀}` of a boundary point with an interior point.
pub fn gromov_product_interior(x: BoundaryPoint, y: DiskPoint) -> f64 {
    0.5 * (dist_origin(y) + busemann(x, DiskPoint::ORIGIN, y))
}

/// Boundary metric `D₀(x, y) = e^{−κ (x|y)_{x₀}} = (|x − y|/2)^κ`.
pub fn boundary_metric(x: BoundaryPoint, y: BoundaryPoint, kappa: f64) -> f64 {
    ((x.z() - y.z()).norm() / 2.0).powf(kappa)
}

/// Coefficient of conformality `|g'(x)| = e^{−κ B_x(g⁻¹x₀, x₀)}` for the metric `D₀`.
pub fn conformal_derivative(g: &Isometry, x: BoundaryPoint, kappa: f64) -> f64 {
    let back = g.inverse().orbit_origin();
    (-kappa * busemann(x, back, DiskPoint::ORIGIN)).exp()
}

/// Cayley-type coordinate `i(1 + u)/(1 − u)`, real on the unit circle.
fn cayley(u: Complex) -> f64 {
    let w = Complex::new(0.0, 1.0) * (Complex::new(1.0, 0.0) + u) / (Complex::new(1.0, 0.0) - u);
    w.re
}

/// The parabolic isometry fixing `ξ` and sending `η_prev` to `η_next`.
pub fn parabolic_from_points(xi: BoundaryPoint, eta_prev: BoundaryPoint, eta_next: BoundaryPoint) -> Result<Isometry> {
    let min_gap = angle_gap(xi.0, eta_prev.0)
        .min(angle_gap(xi.0, eta_next.0))
        .min(angle_gap(eta_prev.0, eta_next.0));
    if min_gap <= EPS_ANGLE {
        return Err(Error::CoincidentPoints);
    }
    // Conjugating ξ to 1 and sending 1 to ∞ turns p into a real translation by T.
    let x = xi.z();
    let t = cayley(x.conj() * eta_next.z()) - cayley(x.conj() * eta_prev.z());
    let half = Complex::new(0.0, t / 2.0);
    Isometry::new(Complex::new(1.0, 0.0) + half, -half * x)
}

/// Horoball based at `ξ` of Busemann height `t`, i.e. `{y : B_ξ(x₀, y) ≥ t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horoball {
    pub base: BoundaryPoint,
    pub height: f64,
}

impl Horoball {
    pub fn new(base: BoundaryPoint, height: f64) -> Self {
        Self { base, height }
    }

    /// Euclidean radius `1/(1 + e^t)`.
    pub fn radius(&self) -> f64 {
        1.0 / (1.0 + self.height.exp())
    }

    pub fn center(&self) -> Complex {
        self.base.z() * (1.0 - self.radius())
    }

    pub fn contains(&self, p: DiskPoint) -> bool {
        busemann(self.base, DiskPoint::ORIGIN, p) >= self.height
    }

    /// Image of the horoball under `g`.
    pub fn image(&self, g: &Isometry) -> Horoball {
        let base = g.apply_boundary(self.base);
        let shift = busemann(base, DiskPoint::ORIGIN, g.orbit_origin());
        Horoball::new(base, self.height + shift)
    }
}

/// Sub-segment of a geodesic arc, given by its endpoints and their arc-length
/// positions measured from the start of the arc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub entry: DiskPoint,
    pub exit: DiskPoint,
    pub s_entry: f64,
    pub s_exit: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.s_exit - self.s_entry
    }
}

/// Part of the geodesic arc `[p, q]` lying inside the horoball `h`.
pub fn geodesic_horoball_intersection(p: DiskPoint, q: DiskPoint, h: &Horoball) -> Option<Segment> {
    let total = hyp_dist(p, q);
    if total == 0.0 {
        return h.contains(p).then_some(Segment {
            entry: p,
            exit: p,
            s_entry: 0.0,
            s_exit: 0.0,
        });
    }
    // Move p to 0 and rotate q onto the positive real axis; the arc becomes [0, r].
    let m = Isometry::translation_to(p).inverse();
    let qm = m.apply_complex(q.0);
    let rot = Isometry::rotation(-qm.arg());
    let g = rot.compose(&m);
    let hb = h.image(&g);
    let r = qm.norm();
    // Horoball circle: |z − c| = ρ. Real-axis points x with (x − cx)² + cy² ≤ ρ².
    let rho = hb.radius();
    let c = hb.center();
    let disc = rho * rho - c.im * c.im;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let lo = (c.re - sq).max(0.0);
    let hi = (c.re + sq).min(r);
    if lo > hi {
        return None;
    }
    let back = g.inverse();
    let s_of = |x: f64| 2.0 * x.atanh();
    Some(Segment {
        entry: DiskPoint(back.apply_complex(Complex::new(lo, 0.0))),
        exit: DiskPoint(back.apply_complex(Complex::new(hi, 0.0))),
        s_entry: s_of(lo),
        s_exit: s_of(hi).min(total),
    })
}

/// Counterclockwise position of `theta` relative to `start`, in `[0, 2π)`.
pub fn ccw_offset(start: f64, theta: f64) -> f64 {
    normalize_angle(theta - start)
}

/// Half-open counterclockwise arc `[lo, hi)` of the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub lo: f64,
    pub hi: f64,
}

impl Arc {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo: normalize_angle(lo),
            hi: normalize_angle(hi),
        }
    }

    pub fn length(&self) -> f64 {
        let l = ccw_offset(self.lo, self.hi);
        if l == 0.0 {
            TAU
        } else {
            l
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        ccw_offset(self.lo, theta) < self.length()
    }

    /// Angle at ccw fraction `f ∈ [0, 1]` along the arc.
    pub fn at(&self, f: f64) -> f64 {
        normalize_angle(self.lo + f * self.length())
    }

    pub fn midpoint(&self) -> f64 {
        self.at(0.5)
    }

    /// Whether `other` is contained in `self` (closed-arc sense, up to `tol`).
    pub fn contains_arc(&self, other: &Arc, tol: f64) -> bool {
        let a = ccw_offset(self.lo, other.lo);
        let len = self.length();
        let a = if a > TAU - tol { 0.0 } else { a };
        a <= len + tol && a + other.length() <= len + tol
    }
}
