//! Discretized transfer operators `L_z` on boundary grid functions, their
//! dominant spectral data, the critical exponent, the `b`-sweep and the
//! eigenvalue curve `λ_t`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{alphabet, can_follow, AlphabetTruncation, Block, GroupSpec};
use crate::error::{Error, Result};
use crate::hypcore::{busemann, ccw_offset, dist_origin, gromov_product, Arc, BoundaryPoint, DiskPoint, Isometry};
use crate::metric::{CuspTail, PerturbedMetric, RoofModel};
use crate::numerics::{find_root, linear_fit};

/// Minimal number of nodes per grid piece.
pub const N_MIN: usize = 4;
/// Snap tolerance for locating image points next to piece boundaries.
const LOCATE_EPS: f64 = 1e-11;
/// Plain power steps before switching to shift-and-invert.
const POWER_STEPS: usize = 40;

/// Truncation of the operator: alphabet cutoffs, grid size and roof model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorTruncation {
    pub n_max: u32,
    pub m_max: usize,
    /// Target number of grid nodes `G`.
    pub grid: usize,
    pub roof: RoofModel,
    /// Close each parabolic sum past `n_max` with its tail integral.
    pub closure: bool,
}

impl OperatorTruncation {
    pub fn validate(&self, r: usize) -> Result<()> {
        if self.n_max < 2 || self.m_max < 1 || self.grid < r * N_MIN {
            return Err(Error::Config(format!(
                "truncation needs n_max ≥ 2, m_max ≥ 1, grid ≥ {}; got {:?}",
                r * N_MIN,
                self
            )));
        }
        Ok(())
    }

    pub fn alphabet(&self) -> AlphabetTruncation {
        AlphabetTruncation {
            n_max: self.n_max,
            m_max: self.m_max,
        }
    }
}

/// One of the three sub-arcs of `I_i` cut at the endpoints of `I'_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Piece {
    pub arc: Arc,
    pub first: usize,
    pub count: usize,
    pub big: usize,
    pub small: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridNode {
    pub theta: f64,
    pub piece: usize,
    /// The node is the right endpoint of its piece, evaluated as a left limit.
    pub left_limit: bool,
}

/// Boundary grid: piecewise uniform nodes on every piece, endpoints included.
#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub pieces: Vec<Piece>,
    pub nodes: Vec<GridNode>,
}

impl Grid {
    pub fn new(spec: &GroupSpec, target: usize) -> Self {
        let mut pieces = Vec::new();
        let mut nodes = Vec::new();
        for i in 1..=spec.r {
            let (big, small) = (spec.big_arc(i), spec.small_arc(i));
            let arcs = [
                (Arc::new(big.lo, small.lo), false),
                (small, true),
                (Arc::new(small.hi, big.hi), false),
            ];
            for (arc, is_small) in arcs {
                let count = ((target as f64 * arc.length() / TAU).round() as usize).max(N_MIN);
                let p = pieces.len();
                for j in 0..count {
                    nodes.push(GridNode {
                        theta: arc.at(j as f64 / (count - 1) as f64),
                        piece: p,
                        left_limit: j + 1 == count,
                    });
                }
                pieces.push(Piece {
                    arc,
                    first: nodes.len() - count,
                    count,
                    big: i,
                    small: is_small,
                });
            }
        }
        Self { pieces, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point(&self, k: usize) -> BoundaryPoint {
        BoundaryPoint::new(self.nodes[k].theta)
    }

    /// `x_k ∈ K_β`, decided by the piece label of the node.
    pub fn in_k(&self, k: usize, beta: &Block) -> bool {
        let p = &self.pieces[self.nodes[k].piece];
        p.big != beta.last_index() && (!beta.is_level1() || p.small)
    }

    /// Piece containing `θ`, with points within `LOCATE_EPS` of a boundary
    /// assigned to the side given by `left_limit`.
    pub fn piece_of(&self, theta: f64, left_limit: bool) -> (usize, f64) {
        for (p, piece) in self.pieces.iter().enumerate() {
            let len = piece.arc.length();
            let off = ccw_offset(piece.arc.lo, theta);
            if left_limit {
                if off > LOCATE_EPS && off <= len + LOCATE_EPS {
                    return (p, (off / len).min(1.0));
                }
            } else if off >= TAU - LOCATE_EPS {
                return (p, 0.0);
            } else if off < len - LOCATE_EPS {
                return (p, off / len);
            }
        }
        // Only reachable through rounding exactly at a boundary.
        (0, 0.0)
    }

    /// Column and weight of the linear interpolation at `θ`:
    /// `φ(θ) ≈ (1 − frac)·φ[col] + frac·φ[col + 1]`.
    pub fn locate(&self, theta: f64, left_limit: bool) -> (usize, f64) {
        let (p, f) = self.piece_of(theta, left_limit);
        let piece = &self.pieces[p];
        let pos = f * (piece.count - 1) as f64;
        let j = (pos.floor() as usize).min(piece.count - 2);
        (piece.first + j, pos - j as f64)
    }

    pub fn interpolate(&self, values: &[f64], theta: f64, left_limit: bool) -> f64 {
        let (c, f) = self.locate(theta, left_limit);
        (1.0 - f) * values[c] + f * values[c + 1]
    }

    /// Node closest to `θ` (first match on ties).
    pub fn nearest(&self, theta: f64) -> usize {
        let d = |k: usize| {
            let o = ccw_offset(theta, self.nodes[k].theta);
            o.min(TAU - o)
        };
        (0..self.len()).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap_or(0)
    }
}

/// Values of a function on the grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridFunction {
    pub theta: Vec<f64>,
    pub values: Vec<Complex>,
}

/// One branch `β` of `L` at a point: roof value and the interpolation target of `βx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub roof: f64,
    pub col: u32,
    pub frac: f64,
}

/// The limiting branch of the parabolic tail of cusp `cusp` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureEntry {
    pub cusp: usize,
    /// Roof offset `𝔯 = d_n − gp` of the limiting branch.
    pub gp: f64,
    pub col: u32,
    pub frac: f64,
}

/// Precomputed kernel of `L_z`: roofs and interpolation data per row.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub grid: Grid,
    pub truncation: OperatorTruncation,
    pub b: f64,
    pub blocks: usize,
    /// Number of (node, block) pairs where the roof was clamped.
    pub clamped: usize,
    rows: Vec<Vec<Entry>>,
    closure_rows: Vec<Vec<ClosureEntry>>,
    tails: Vec<CuspTail>,
    data: Vec<BlockData>,
}

/// Per-block data shared by all rows.
#[derive(Debug, Clone)]
struct BlockData {
    block: Block,
    iso: Isometry,
    distance: f64,
    back: DiskPoint,
}

fn block_data(m: &PerturbedMetric, alpha: Vec<Block>) -> Result<Vec<BlockData>> {
    alpha
        .into_par_iter()
        .map(|block| {
            let iso = m.spec.block_isometry(&block);
            Ok(BlockData {
                distance: m.block_distance(&block)?,
                back: iso.inverse().orbit_origin(),
                iso,
                block,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_row(
    m: &PerturbedMetric,
    data: &[BlockData],
    grid: &Grid,
    tr: OperatorTruncation,
    x: BoundaryPoint,
    left_limit: bool,
    big: usize,
    in_k: impl Fn(&BlockData) -> bool,
) -> Result<(Vec<Entry>, Vec<ClosureEntry>, usize)> {
    let spec = &m.spec;
    let mut row = Vec::new();
    let mut clamped = 0;
    for bd in data.iter().filter(|bd| in_k(bd)) {
        let (roof, c) = m.roof_raw(bd.distance, bd.back, x, tr.roof);
        clamped += c as usize;
        let (col, frac) = grid.locate(bd.iso.apply_boundary(x).theta(), left_limit);
        row.push(Entry {
            roof,
            col: col as u32,
            frac,
        });
    }
    let mut closure = Vec::new();
    if tr.closure {
        for i in (1..=spec.r).filter(|&i| i != big) {
            let xi = spec.xi[i - 1];
            let gp = match tr.roof {
                RoofModel::DistanceOnly => 0.0,
                RoofModel::BusemannCorrected => (2.0 * gromov_product(x, xi, DiskPoint::ORIGIN)?).clamp(0.0, m.calibration.c_buse),
            };
            let (col, frac) = grid.locate(xi.theta(), false);
            closure.push(ClosureEntry {
                cusp: i,
                gp,
                col: col as u32,
                frac,
            });
        }
    }
    Ok((row, closure, clamped))
}

/// Per-cusp closure sums and the entry map applied to the rest of the tail.
type Closure<'a, T> = (Vec<T>, &'a (dyn Fn(f64) -> T + Sync));

impl TransferOperator {
    pub fn assemble(m: &PerturbedMetric, tr: OperatorTruncation) -> Result<Self> {
        let spec = &m.spec;
        tr.validate(spec.r)?;
        let data = block_data(m, alphabet(spec.r, tr.alphabet()))?;
        let grid = Grid::new(spec, tr.grid);
        let built: Vec<(Vec<Entry>, Vec<ClosureEntry>, usize)> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let node = grid.nodes[k];
                let big = grid.pieces[node.piece].big;
                build_row(m, &data, &grid, tr, grid.point(k), node.left_limit, big, |bd| {
                    grid.in_k(k, &bd.block)
                })
            })
            .collect::<Result<_>>()?;
        let tails = if tr.closure {
            (1..=spec.r).map(|i| m.tail(i, tr.n_max as f64 + 0.5)).collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let clamped = built.iter().map(|b| b.2).sum();
        let (rows, closure_rows) = built.into_iter().map(|(r, c, _)| (r, c)).unzip();
        Ok(Self {
            grid,
            truncation: tr,
            b: m.b,
            blocks: data.len(),
            clamped,
            rows,
            closure_rows,
            tails,
            data,
        })
    }

    /// Branches of row `k`.
    pub fn row(&self, k: usize) -> &[Entry] {
        &self.rows[k]
    }

    /// Closure branches of row `k` (empty without closure).
    pub fn closure_row(&self, k: usize) -> &[ClosureEntry] {
        &self.closure_rows[k]
    }

    /// Per-cusp tail tables (empty without closure).
    pub fn tails(&self) -> &[CuspTail] {
        &self.tails
    }

    /// Branches of `L` at an arbitrary boundary point, with the same targets
    /// and closure rule as the grid rows.
    pub fn point_row(&self, m: &PerturbedMetric, x: BoundaryPoint) -> Result<(Vec<Entry>, Vec<ClosureEntry>)> {
        let big = m.spec.big_index(x.theta());
        let (row, closure, _) = build_row(m, &self.data, &self.grid, self.truncation, x, false, big, |bd| {
            m.spec.in_k(&bd.block, x)
        })?;
        Ok((row, closure))
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    /// Per-cusp closure sums `2·Σ_{n > N_max} e^{−z d_n}`; `None` if one diverges.
    pub fn closure_sums(&self, z: Complex) -> Option<Vec<Complex>> {
        self.tails.iter().map(|t| t.sum(z).map(|s| 2.0 * s)).collect()
    }

    fn fill<T>(&self, weight: impl Fn(f64) -> T + Sync, closure: Option<Closure<'_, T>>) -> DMatrix<T>
    where
        T: nalgebra::Scalar + Copy + Send + Sync + num_traits::Zero + std::ops::Mul<f64, Output = T> + std::ops::Mul<Output = T>,
    {
        let n = self.dim();
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let mut row = vec![T::zero(); n];
                for e in &self.rows[k] {
                    let w = weight(e.roof);
                    let c = e.col as usize;
                    row[c] = row[c] + w * (1.0 - e.frac);
                    row[c + 1] = row[c + 1] + w * e.frac;
                }
                if let Some((sums, gp_weight)) = &closure {
                    for e in &self.closure_rows[k] {
                        let w = gp_weight(e.gp) * sums[e.cusp - 1];
                        let c = e.col as usize;
                        row[c] = row[c] + w * (1.0 - e.frac);
                        row[c + 1] = row[c + 1] + w * e.frac;
                    }
                }
                row
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| rows[i][j])
    }

    /// Matrix of `L_z`; `None` when a closure sum diverges at `Re z`.
    pub fn matrix(&self, z: Complex) -> Option<DMatrix<Complex>> {
        if self.truncation.closure {
            let sums = self.closure_sums(z)?;
            let gpw = move |gp: f64| (z * gp).exp();
            Some(self.fill(|r| (-z * r).exp(), Some((sums, &gpw))))
        } else {
            Some(self.fill(|r| (-z * r).exp(), None))
        }
    }

    /// Matrix of `L_s` for real `s`.
    pub fn matrix_real(&self, s: f64) -> Option<DMatrix<f64>> {
        if self.truncation.closure {
            let sums = self.closure_sums(Complex::new(s, 0.0))?.iter().map(|c| c.re).collect();
            let gpw = move |gp: f64| (s * gp).exp();
            Some(self.fill(|r| (-s * r).exp(), Some((sums, &gpw))))
        } else {
            Some(self.fill(|r| (-s * r).exp(), None))
        }
    }

    /// `ρ(L_s)`, `+∞` when a closure sum diverges.
    pub fn spectral_radius(&self, s: f64) -> Result<f64> {
        match self.matrix_real(s) {
            Some(a) => Ok(perron(&a, 1e-11, 2000)?.0),
            None => Ok(f64::INFINITY),
        }
    }

    pub fn spectrum(&self, s: f64) -> Result<SpectralResult> {
        let a = self
            .matrix_real(s)
            .ok_or_else(|| Error::InvalidArgument(format!("closure sum diverges at s = {s}")))?;
        dominant_spectrum(&a, 1e-11, 2000)
    }
}

/// Dominant spectral data of a real nonnegative operator.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub rho: f64,
    pub h: Vec<f64>,
    /// Left eigenvector as a discrete measure, `Σσ = 1`.
    pub sigma: Vec<f64>,
    /// `σ(h)`, equal to 1 after normalization.
    pub sigma_h: f64,
    pub iterations: usize,
    pub residual: f64,
    pub residual_adjoint: f64,
}

/// Collatz–Wielandt bounds `min (Av)_i/v_i ≤ ρ ≤ max (Av)_i/v_i` over the
/// support of `Av`; the upper bound is `+∞` if `Av` leaves the support of `v`.
fn cw_bounds(v: &DVector<f64>, w: &DVector<f64>) -> (f64, f64) {
    v.iter().zip(w.iter()).fold((f64::INFINITY, 0.0f64), |(lo, hi), (&a, &b)| {
        if a > 0.0 && b > 0.0 {
            let q = b / a;
            (lo.min(q), hi.max(q))
        } else if b > 0.0 {
            (lo, f64::INFINITY)
        } else {
            (lo, hi)
        }
    })
}

/// Perron root and vector of a nonnegative matrix: power iteration, then
/// shift-and-invert at the Collatz–Wielandt upper bound. Converged when the
/// relative width of the bounds is below `tol`.
fn perron(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, DVector<f64>, usize, f64)> {
    let scale = a.amax();
    if scale == 0.0 {
        return Ok((0.0, DVector::from_element(a.nrows(), 1.0), 0, 0.0));
    }
    let (rho, v, it, width) = perron_scaled(&a.unscale(scale), tol, max_iter)?;
    Ok((rho * scale, v, it, width))
}

fn perron_scaled(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, DVector<f64>, usize, f64)> {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0);
    let mut width = f64::INFINITY;
    for it in 1..=max_iter {
        let w = a * &v;
        let (lo, hi) = cw_bounds(&v, &w);
        if hi == 0.0 {
            return Ok((0.0, v, it, 0.0));
        }
        width = (hi - lo) / hi;
        if width <= tol {
            return Ok((0.5 * (lo + hi), w.unscale(w.max()), it, width));
        }
        if it > POWER_STEPS {
            let mu = hi * (1.0 + 1e-9);
            let lu = (DMatrix::identity(n, n) * mu - a).lu();
            if let Some(y) = lu.solve(&v) {
                if y.iter().all(|&c| c >= 0.0 && c.is_finite()) && y.max() > 0.0 {
                    v = y.unscale(y.max());
                    continue;
                }
            }
        }
        v = w.unscale(w.max());
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: width,
    })
}

/// Left eigenvector for a known Perron root by inverse iteration on `Aᵀ`.
fn left_vector(a: &DMatrix<f64>, rho: f64, tol: f64, max_iter: usize) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows();
    let at = a.transpose();
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    if rho == 0.0 {
        return Ok((v, 0.0));
    }
    let lu = (DMatrix::identity(n, n) * (rho * (1.0 + 1e-10)) - &at).lu();
    let mut res = f64::INFINITY;
    for _ in 0..max_iter {
        let y = lu.solve(&v).ok_or(Error::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        v = y.map(|c| c.max(0.0));
        v.unscale_mut(v.sum());
        res = (&at * &v - &v * rho).abs().sum() / rho;
        if res <= tol {
            return Ok((v, res));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// `ρ`, `h > 0` and `σ ≥ 0` with `Σσ = 1`, `σ(h) = 1`.
pub fn dominant_spectrum(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SpectralResult> {
    let (rho, h, iterations, _) = perron(a, tol, max_iter)?;
    let (sigma, residual_adjoint) = left_vector(a, rho, tol.max(1e-10), 50)?;
    let sh = sigma.dot(&h);
    let h = h.unscale(sh);
    if let Some((k, &v)) = h.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NotPositive { index: k, value: v });
    }
    let residual = (a * &h - &h * rho).amax() / h.amax().max(f64::MIN_POSITIVE);
    Ok(SpectralResult {
        rho,
        sigma_h: sigma.dot(&h),
        h: h.iter().copied().collect(),
        sigma: sigma.iter().copied().collect(),
        iterations,
        residual,
        residual_adjoint,
    })
}

/// Result of the exponent search.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalExponent {
    pub delta: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub truncation: OperatorTruncation,
    /// `ρ` jumps from `+∞` to below 1 at the root: `δ̂` equals the parabolic exponent.
    pub at_parabolic_threshold: bool,
    pub evaluations: usize,
}

/// Bisection on `s ↦ ln ρ(L_s)` in `[s_lo, s_hi]`.
pub fn critical_exponent(op: &TransferOperator, s_lo: f64, s_hi: f64, tol_s: f64) -> Result<CriticalExponent> {
    let (r_lo, r_hi) = (op.spectral_radius(s_lo)?, op.spectral_radius(s_hi)?);
    if !(r_lo > 1.0 && r_hi < 1.0) {
        return Err(Error::BracketFailure {
            lo: s_lo,
            hi: s_hi,
            f_lo: r_lo - 1.0,
            f_hi: r_hi - 1.0,
        });
    }
    let (mut lo, mut hi) = (s_lo, s_hi);
    let mut rho_hi = r_hi;
    let mut rho_lo = r_lo;
    let mut evaluations = 2;
    while hi - lo > tol_s {
        let mid = 0.5 * (lo + hi);
        let r = op.spectral_radius(mid)?;
        evaluations += 1;
        if r > 1.0 {
            lo = mid;
            rho_lo = r;
        } else {
            hi = mid;
            rho_hi = r;
        }
    }
    Ok(CriticalExponent {
        delta: 0.5 * (lo + hi),
        rho_lo,
        rho_hi,
        truncation: op.truncation,
        at_parabolic_threshold: rho_lo.is_infinite() && rho_hi < 1.0 - 1e-6,
        evaluations,
    })
}

/// Result of the `b`-sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub b_star: f64,
    pub delta: f64,
    pub rho_at_b_star: f64,
    /// `ρ(b*, δ + ds)`, the exoticity witness when below 1.
    pub rho_shifted: f64,
    pub ds: f64,
    /// `(b, ρ(b, δ))` on a uniform grid of the bracket.
    pub samples: Vec<(f64, f64)>,
}

/// Root of `b ↦ ρ(L_{b,δ}) − 1`; `make(b)` builds the metric for `b`.
pub fn sweep_b<F>(
    make: F,
    tr: OperatorTruncation,
    b_lo: f64,
    b_hi: f64,
    delta: f64,
    tol_b: f64,
    ds: f64,
    n_samples: usize,
) -> Result<SweepResult>
where
    F: Fn(f64) -> Result<PerturbedMetric>,
{
    let rho = |b: f64| -> Result<f64> { TransferOperator::assemble(&make(b)?, tr)?.spectral_radius(delta) };
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let b = b_lo + (b_hi - b_lo) * k as f64 / (n_samples.max(2) - 1) as f64;
        samples.push((b, rho(b)?));
    }
    let mut err = None;
    let b_star = find_root(
        |b| match rho(b) {
            Ok(r) => r.ln(),
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        b_lo,
        b_hi,
        tol_b,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let b_star = b_star?;
    let op = TransferOperator::assemble(&make(b_star)?, tr)?;
    Ok(SweepResult {
        b_star,
        delta,
        rho_at_b_star: op.spectral_radius(delta)?,
        rho_shifted: op.spectral_radius(delta + ds)?,
        ds,
        samples,
    })
}

/// One point of the `λ_t` curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaPoint {
    pub t: f64,
    pub lambda: Complex,
    /// `|λ₂|/|λ_t|`.
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaCurve {
    pub delta: f64,
    pub points: Vec<LambdaPoint>,
    /// First `t` where the gap collapsed; the curve stops there.
    pub stopped_at: Option<f64>,
}

/// Eigenvalues of a complex matrix, by decreasing modulus.
fn eigenvalues_by_modulus(a: &DMatrix<Complex>) -> Option<Vec<Complex>> {
    let n = a.nrows();
    let (_, t) = a.clone().schur().unpack();
    let scale = t.camax().max(f64::MIN_POSITIVE);
    if (1..n).any(|k| t[(k, k - 1)].norm() > 1e-10 * scale) {
        return None;
    }
    let mut ev: Vec<Complex> = t.diagonal().iter().copied().collect();
    ev.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    Some(ev)
}

/// Dominant eigenvalue of `L_{δ+it}` along `ts` (sorted by `|t|`), continued from
/// `λ₀ = ρ(δ)`: at each `t` the eigenvalue closest to the previous one is taken
/// and must be the one of largest modulus, separated by `1 − gap ≥ tol_gap`.
pub fn lambda_curve(op: &TransferOperator, delta: f64, ts: &[f64], tol_gap: f64) -> Result<LambdaCurve> {
    let mut prev = Complex::new(op.spectral_radius(delta)?, 0.0);
    let mut points = Vec::new();
    let mut stopped_at = None;
    for &t in ts {
        let a = op
            .matrix(Complex::new(delta, t))
            .ok_or_else(|| Error::InvalidArgument(format!("closure sum diverges at δ = {delta}")))?;
        let ev = eigenvalues_by_modulus(&a).ok_or(Error::GapCollapse(t))?;
        let near = *ev
            .iter()
            .min_by(|x, y| (**x - prev).norm().total_cmp(&(**y - prev).norm()))
            .expect("nonempty spectrum");
        let lead = ev[0];
        let second = ev.get(1).map_or(0.0, |c| c.norm());
        let gap = second / lead.norm();
        if (near - lead).norm() > 1e-12 * lead.norm() || 1.0 - gap < tol_gap {
            stopped_at = Some(t);
            break;
        }
        points.push(LambdaPoint { t, lambda: lead, gap });
        prev = lead;
    }
    if points.is_empty() {
        return Err(Error::GapCollapse(ts.first().copied().unwrap_or(0.0)));
    }
    Ok(LambdaCurve { delta, points, stopped_at })
}

/// Fit of `1 − λ̄_t ≈ C e^{−iπκ/2} t^κ L(1/t)`.
#[derive(Debug, Clone, Serialize)]
pub struct LocalFit {
    pub kappa: f64,
    pub c: f64,
    pub r2: f64,
    /// Mean of `arg(1 − λ̄_t)` over the window.
    pub phase_mean: f64,
    /// `max |arg(1 − λ̄_t) + πκ̂/2|` over the window.
    pub phase_max_dev: f64,
    pub points: usize,
}

impl LocalFit {
    pub fn require_quality(&self, min_r2: f64) -> Result<()> {
        if self.r2 >= min_r2 {
            Ok(())
        } else {
            Err(Error::PoorFit(self.r2))
        }
    }
}

/// Regression of `ln|1 − λ̄_t| − ln L(1/t)` on `ln t` over points with `t > 0`.
pub fn fit_local_expansion(points: &[LambdaPoint], slowly_varying: impl Fn(f64) -> f64) -> Result<LocalFit> {
    let pts: Vec<&LambdaPoint> = points.iter().filter(|p| p.t > 0.0).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument("local fit needs at least 3 points with t > 0".into()));
    }
    let one = Complex::new(1.0, 0.0);
    let xy: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| (p.t.ln(), (one - p.lambda.conj()).norm().ln() - slowly_varying(1.0 / p.t).ln()))
        .collect();
    let (kappa, intercept, r2) = linear_fit(&xy);
    let phases: Vec<f64> = pts.iter().map(|p| (one - p.lambda.conj()).arg()).collect();
    let phase_mean = phases.iter().sum::<f64>() / phases.len() as f64;
    let target = -PI * kappa / 2.0;
    let phase_max_dev = phases.iter().map(|a| (a - target).abs()).fold(0.0, f64::max);
    Ok(LocalFit {
        kappa,
        c: intercept.exp(),
        r2,
        phase_mean,
        phase_max_dev,
        points: pts.len(),
    })
}

/// `‖L_{δ+it'} − L_{δ+it}‖` on the grid: sup norm (max absolute row sum) plus
/// the `α`-Hölder seminorm of `(L_{δ+it'} − L_{δ+it})1` within pieces.
pub fn continuity_modulus(op: &TransferOperator, delta: f64, t: f64, t2: f64, alpha: f64) -> Result<f64> {
    if t == t2 {
        return Ok(0.0);
    }
    let diverges = || Error::InvalidArgument(format!("closure sum diverges at δ = {delta}"));
    let a = op.matrix(Complex::new(delta, t)).ok_or_else(diverges)?;
    let b = op.matrix(Complex::new(delta, t2)).ok_or_else(diverges)?;
    let d = b - a;
    let sup = d.row_iter().map(|r| r.iter().map(|c| c.norm()).sum::<f64>()).fold(0.0, f64::max);
    let f: Vec<Complex> = d.row_iter().map(|r| r.iter().sum()).collect();
    let mut semi = 0.0f64;
    for p in &op.grid.pieces {
        for k in p.first..p.first + p.count - 1 {
            let dx = ccw_offset(op.grid.nodes[k].theta, op.grid.nodes[k + 1].theta);
            semi = semi.max((f[k + 1] - f[k]).norm() / dx.powf(alpha));
        }
    }
    Ok(sup + semi)
}

/// `(L_z^k 1)(x)` by exact recursion over the truncated alphabet (no grid).
pub fn iterate_exact(m: &PerturbedMetric, tr: OperatorTruncation, x: BoundaryPoint, k: usize, z: Complex) -> Result<Complex> {
    let data = block_data(m, alphabet(m.spec.r, tr.alphabet()))?;
    fn rec(m: &PerturbedMetric, data: &[BlockData], roof: RoofModel, x: BoundaryPoint, k: usize, z: Complex) -> Complex {
        if k == 0 {
            return Complex::new(1.0, 0.0);
        }
        let mut acc = Complex::new(0.0, 0.0);
        for bd in data.iter().filter(|bd| m.spec.in_k(&bd.block, x)) {
            let (r, _) = m.roof_raw(bd.distance, bd.back, x, roof);
            acc += (-z * r).exp() * rec(m, data, roof, bd.iso.apply_boundary(x), k - 1, z);
        }
        acc
    }
    let first: Vec<&BlockData> = data.iter().filter(|bd| m.spec.in_k(&bd.block, x)).collect();
    Ok(first
        .par_iter()
        .map(|bd| {
            let (r, _) = m.roof_raw(bd.distance, bd.back, x, tr.roof);
            (-z * r).exp() * rec(m, &data, tr.roof, bd.iso.apply_boundary(x), k - 1, z)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum())
}

/// `Σ_{|γ|_𝔅 = k} e^{−z(B_x(γ⁻¹x₀, x₀) + Σ_β (d_b(β) − d₀(β)))}` over canonical
/// words `γ = β_k⋯β₁` with `x ∈ K_{β₁}`, from the group element alone.
pub fn group_sum(m: &PerturbedMetric, tr: OperatorTruncation, x: BoundaryPoint, k: usize, z: Complex) -> Result<Complex> {
    let alpha = alphabet(m.spec.r, tr.alphabet());
    let excess: Vec<f64> = alpha
        .iter()
        .map(|b| Ok(m.block_distance(b)? - dist_origin(m.spec.block_isometry(b).orbit_origin())))
        .collect::<Result<_>>()?;
    let inv: Vec<Isometry> = alpha.iter().map(|b| m.spec.block_isometry(b).inverse()).collect();
    // `g` is `β₁⁻¹⋯β_j⁻¹` for the blocks chosen so far, `j` the leftmost one.
    fn rec(
        alpha: &[Block],
        inv: &[Isometry],
        excess: &[f64],
        x: BoundaryPoint,
        j: usize,
        g: Isometry,
        ex: f64,
        k: usize,
        z: Complex,
    ) -> Complex {
        if k == 0 {
            let b = busemann(x, g.orbit_origin(), DiskPoint::ORIGIN);
            return (-z * (b + ex)).exp();
        }
        let mut acc = Complex::new(0.0, 0.0);
        for i in 0..alpha.len() {
            if can_follow(&alpha[i], &alpha[j]) {
                acc += rec(alpha, inv, excess, x, i, g.compose(&inv[i]), ex + excess[i], k - 1, z);
            }
        }
        acc
    }
    let first: Vec<usize> = (0..alpha.len()).filter(|&i| m.spec.in_k(&alpha[i], x)).collect();
    if k == 0 {
        return Ok(Complex::new(1.0, 0.0));
    }
    Ok(first
        .par_iter()
        .map(|&i| rec(&alpha, &inv, &excess, x, i, inv[i], excess[i], k - 1, z))
        .collect::<Vec<_>>()
        .into_iter()
        .sum())
}
