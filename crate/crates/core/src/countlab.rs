//! Poincaré partial sums, orbital counts, parabolic tail diagnostics, the
//! special-series criterion, renewal sums `W_j` and asymptotic fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coder::{alphabet, can_follow, AlphabetTruncation, Block, GroupSpec, Letter, Word};
use crate::cusp::CuspGeometry;
use crate::error::{Error, Result};
use crate::hypcore::{busemann, dist_origin, BoundaryPoint, DiskPoint, Isometry};
use crate::metric::{CuspTail, PerturbedMetric, RoofModel};
use crate::numerics::{find_root, integrate, linear_fit};
use crate::transfer::{ClosureEntry, Entry, SpectralResult, TransferOperator};

/// Slowly varying factor `L` of the asymptotic models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlowlyVaryingModel {
    Constant {
        c: f64,
    },
    /// `L(t) = c·(ln t)^p`.
    LogPower {
        c: f64,
        p: f64,
    },
}

impl Default for SlowlyVaryingModel {
    fn default() -> Self {
        SlowlyVaryingModel::Constant { c: 1.0 }
    }
}

impl SlowlyVaryingModel {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            SlowlyVaryingModel::Constant { c } => c,
            SlowlyVaryingModel::LogPower { c, p } => c * t.ln().powf(p),
        }
    }

    /// `max |L(λt)/L(t) − 1|` over `λ ∈ {2, 10}`, `t ∈ {10³, …, 10⁶}`.
    pub fn ratio_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 3..=6 {
            let t = 10f64.powi(k);
            for lambda in [2.0, 10.0] {
                worst = worst.max((self.eval(lambda * t) / self.eval(t) - 1.0).abs());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let c = match *self {
            SlowlyVaryingModel::Constant { c } | SlowlyVaryingModel::LogPower { c, .. } => c,
        };
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("slowly varying constant must be positive, got {c}")));
        }
        let dev = self.ratio_deviation();
        if !(dev <= 0.05) {
            return Err(Error::Config(format!("L(λt)/L(t) deviates from 1 by {dev:.3} on t ∈ [1e3, 1e6]")));
        }
        Ok(())
    }
}

/// One-sided verdict of a series test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Partial Poincaré series `Σ e^{−s d_b}` over canonical words of at most `K` blocks.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub s: f64,
    pub max_blocks: usize,
    pub words: u64,
    /// `level_sums[k−1] = Σ_{|γ|_𝔅 = k} e^{−s·d_b^upper(γ)}`.
    pub level_sums: Vec<f64>,
    /// Includes the identity.
    pub partial: f64,
    pub rho: f64,
    /// `r·(max h/min h)·ρ^{K+1}/(1 − ρ)` when `ρ < 1`.
    pub tail_bound: Option<f64>,
    pub verdict: Verdict,
}

/// Partial Poincaré sum with the conservative (upper) `d_b` bracket over the
/// operator's alphabet, and a tail bound from the spectral data of `L_s`.
pub fn poincare_partial(
    m: &PerturbedMetric,
    op: &TransferOperator,
    s: f64,
    max_blocks: usize,
    budget: u64,
    divergence_threshold: f64,
) -> Result<PoincareReport> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("Poincaré exponent must be positive, got {s}")));
    }
    let alpha = alphabet(m.spec.r, op.truncation.alphabet());
    let dist: Vec<f64> = alpha.iter().map(|b| m.block_distance(b)).collect::<Result<_>>()?;
    let mut level_sums = vec![0.0; max_blocks];
    let mut words = 0u64;
    let mut over = false;
    let mut cur: Vec<usize> = Vec::with_capacity(max_blocks);
    fn rec(
        alpha: &[Block],
        dist: &[f64],
        s: f64,
        d: f64,
        cur: &mut Vec<usize>,
        sums: &mut [f64],
        words: &mut u64,
        budget: u64,
        over: &mut bool,
    ) {
        for j in 0..alpha.len() {
            if *over {
                return;
            }
            if cur.last().is_none_or(|&p| can_follow(&alpha[p], &alpha[j])) {
                let dj = d + dist[j];
                *words += 1;
                if *words > budget {
                    *over = true;
                    return;
                }
                sums[cur.len()] += (-s * dj).exp();
                if cur.len() + 1 < sums.len() {
                    cur.push(j);
                    rec(alpha, dist, s, dj, cur, sums, words, budget, over);
                    cur.pop();
                }
            }
        }
    }
    if max_blocks > 0 {
        rec(&alpha, &dist, s, 0.0, &mut cur, &mut level_sums, &mut words, budget, &mut over);
    }
    if over {
        return Err(Error::BudgetExceeded(max_blocks as f64));
    }
    let partial = 1.0 + level_sums.iter().sum::<f64>();
    let (rho, tail_bound) = match op.spectrum(s) {
        Ok(sp) => {
            let hmax = sp.h.iter().cloned().fold(0.0, f64::max);
            let hmin = sp.h.iter().cloned().fold(f64::INFINITY, f64::min);
            let tail = (sp.rho < 1.0).then(|| m.spec.r as f64 * hmax / hmin * sp.rho.powi(max_blocks as i32 + 1) / (1.0 - sp.rho));
            (sp.rho, tail)
        }
        Err(_) => (op.spectral_radius(s)?, None),
    };
    let verdict = if rho < 1.0 {
        Verdict::Convergent
    } else if partial >= divergence_threshold {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    };
    Ok(PoincareReport {
        s,
        max_blocks,
        words,
        level_sums,
        partial,
        rho,
        tail_bound,
        verdict,
    })
}

/// Orbital counts on an `R` grid.
#[derive(Debug, Clone, Serialize)]
pub struct CountReport {
    pub r_grid: Vec<f64>,
    /// Words with `d_b^upper ≤ R` (identity included).
    pub conservative: Vec<u64>,
    /// Words with `d_b^lower ≤ R`.
    pub liberal: Vec<u64>,
    /// Exact hyperbolic count of reduced words, when computed.
    pub exact: Option<Vec<u64>>,
    pub words: u64,
    /// Alphabet needed to reach `R_max`.
    pub alphabet: AlphabetTruncation,
    /// `ln v(R_max)/R_max` of the conservative and liberal counts.
    pub growth_conservative: f64,
    pub growth_liberal: f64,
}

/// `ParaPower` blocks and `Level1` words whose own distance is at most `r_max`,
/// sorted by distance.
fn count_alphabet(m: &PerturbedMetric, r_max: f64, budget: u64) -> Result<(Vec<Block>, Vec<f64>, AlphabetTruncation)> {
    let spec = &m.spec;
    let mut blocks = Vec::new();
    let mut n_max = 1u32;
    for i in 1..=spec.r {
        let mut n = 2i64;
        loop {
            let d = m.para_distance(i, n)?;
            if d > r_max {
                break;
            }
            blocks.push((Block::ParaPower { index: i, n }, d));
            blocks.push((Block::ParaPower { index: i, n: -n }, d));
            n_max = n_max.max(n as u32);
            n += 1;
            if blocks.len() as u64 > budget {
                return Err(Error::BudgetExceeded(d));
            }
        }
    }
    let mut m_max = 0;
    let mut level1 = Vec::new();
    let mut cur = Vec::new();
    level1_walk(spec, r_max, &mut cur, Isometry::IDENTITY, &mut level1, budget)?;
    for (w, d) in level1 {
        m_max = m_max.max(w.len());
        blocks.push((Block::Level1(w), d));
    }
    blocks.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (b, d) = blocks.into_iter().unzip();
    Ok((b, d, AlphabetTruncation { n_max, m_max }))
}

/// Alternating words with all exponents `±1` and `d₀ ≤ r_max`; distance is
/// monotone along prefixes of reduced words in the ping-pong group, so the
/// walk prunes at the first prefix past `r_max`.
fn level1_walk(spec: &GroupSpec, r_max: f64, cur: &mut Vec<Letter>, g: Isometry, out: &mut Vec<(Word, f64)>, budget: u64) -> Result<()> {
    for i in 1..=spec.r {
        if cur.last().is_some_and(|l| l.idx() == i) {
            continue;
        }
        for sign in [1i8, -1] {
            let l = Letter::new(i, sign);
            let h = g.compose(&spec.letter_isometry(l));
            let d = dist_origin(h.orbit_origin());
            if d > r_max {
                continue;
            }
            cur.push(l);
            out.push((Word(cur.clone()), d));
            if out.len() as u64 > budget {
                return Err(Error::BudgetExceeded(d));
            }
            level1_walk(spec, r_max, cur, h, out, budget)?;
            cur.pop();
        }
    }
    Ok(())
}

fn grid_index(r_grid: &[f64], d: f64) -> usize {
    r_grid.partition_point(|&r| r < d)
}

fn cumulate(hist: &[u64]) -> Vec<u64> {
    hist.iter()
        .scan(0u64, |acc, &h| {
            *acc += h;
            Some(*acc)
        })
        .collect()
}

/// Orbital counts with the `d_b` bracket over canonical block words. The
/// lower bracket grows along extensions (block distances exceed `C_junction`),
/// so the walk prunes on it. `BudgetExceeded` carries the largest grid `R`
/// that fits the budget.
pub fn orbital_count(m: &PerturbedMetric, r_grid: &[f64], budget: u64) -> Result<CountReport> {
    if r_grid.is_empty() || r_grid.windows(2).any(|w| w[1] <= w[0]) || r_grid[0] < 0.0 {
        return Err(Error::InvalidArgument("R grid must be nonnegative and increasing".into()));
    }
    match count_once(m, r_grid, budget) {
        Err(Error::BudgetExceeded(_)) => {
            let mut reach = 0.0;
            for k in 0..r_grid.len() {
                match count_once(m, &r_grid[..=k], budget) {
                    Ok(_) => reach = r_grid[k],
                    Err(Error::BudgetExceeded(_)) => break,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::BudgetExceeded(reach))
        }
        other => other,
    }
}

fn count_once(m: &PerturbedMetric, r_grid: &[f64], budget: u64) -> Result<CountReport> {
    let r_max = *r_grid.last().expect("nonempty grid");
    let c_j = m.calibration.c_junction;
    let (alpha, dist, tr) = count_alphabet(m, r_max, budget)?;
    if dist.iter().any(|&d| d <= c_j) {
        return Err(Error::InvalidArgument("a block distance does not exceed C_junction".into()));
    }
    let n = r_grid.len();
    let mut cons = vec![0u64; n + 1];
    let mut lib = vec![0u64; n + 1];
    cons[grid_index(r_grid, 0.0)] += 1;
    lib[grid_index(r_grid, 0.0)] += 1;
    let mut words = 1u64;
    let mut cur: Vec<usize> = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        alpha: &[Block],
        dist: &[f64],
        r_grid: &[f64],
        c_j: f64,
        upper: f64,
        cur: &mut Vec<usize>,
        cons: &mut [u64],
        lib: &mut [u64],
        words: &mut u64,
        budget: u64,
    ) -> Result<()> {
        let r_max = *r_grid.last().expect("nonempty grid");
        for j in 0..alpha.len() {
            if !cur.last().is_none_or(|&p| can_follow(&alpha[p], &alpha[j])) {
                continue;
            }
            let up = upper + dist[j];
            let lo = up - cur.len() as f64 * c_j;
            if lo > r_max {
                // Blocks are sorted by distance.
                break;
            }
            *words += 1;
            if *words > budget {
                return Err(Error::BudgetExceeded(r_max));
            }
            cons[grid_index(r_grid, up)] += 1;
            lib[grid_index(r_grid, lo)] += 1;
            cur.push(j);
            rec(alpha, dist, r_grid, c_j, up, cur, cons, lib, words, budget)?;
            cur.pop();
        }
        Ok(())
    }
    rec(&alpha, &dist, r_grid, c_j, 0.0, &mut cur, &mut cons, &mut lib, &mut words, budget)?;
    let conservative: Vec<u64> = cumulate(&cons)[..n].to_vec();
    let liberal: Vec<u64> = cumulate(&lib)[..n].to_vec();
    let growth = |v: &[u64]| {
        if r_max > 0.0 {
            (*v.last().expect("nonempty") as f64).ln() / r_max
        } else {
            0.0
        }
    };
    Ok(CountReport {
        r_grid: r_grid.to_vec(),
        growth_conservative: growth(&conservative),
        growth_liberal: growth(&liberal),
        conservative,
        liberal,
        exact: None,
        words,
        alphabet: tr,
    })
}

/// Exhaustive count of reduced words with hyperbolic `d₀(x₀, γx₀) ≤ R`.
pub fn exact_orbit_count(spec: &GroupSpec, r_grid: &[f64], budget: u64) -> Result<Vec<u64>> {
    let r_max = *r_grid.last().ok_or_else(|| Error::InvalidArgument("empty R grid".into()))?;
    let n = r_grid.len();
    let mut hist = vec![0u64; n + 1];
    hist[grid_index(r_grid, 0.0)] += 1;
    let mut visited = 1u64;
    fn rec(
        spec: &GroupSpec,
        r_grid: &[f64],
        r_max: f64,
        last: Option<Letter>,
        g: Isometry,
        hist: &mut [u64],
        visited: &mut u64,
        budget: u64,
    ) -> Result<()> {
        for i in 1..=spec.r {
            for sign in [1i8, -1] {
                let l = Letter::new(i, sign);
                if last.is_some_and(|p| p == l.inverse()) {
                    continue;
                }
                let h = g.compose(&spec.letter_isometry(l));
                let d = dist_origin(h.orbit_origin());
                if d > r_max {
                    continue;
                }
                *visited += 1;
                if *visited > budget {
                    return Err(Error::BudgetExceeded(r_max));
                }
                hist[grid_index(r_grid, d)] += 1;
                rec(spec, r_grid, r_max, Some(l), h, hist, visited, budget)?;
            }
        }
        Ok(())
    }
    rec(spec, r_grid, r_max, None, Isometry::IDENTITY, &mut hist, &mut visited, budget)?;
    Ok(cumulate(&hist)[..n].to_vec())
}

/// One row of [`vp_vs_area`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VpRow {
    pub r: f64,
    /// `v_P(R) = #{n ∈ ℤ : d(x₀, pⁿx₀) ≤ R}`.
    pub count: f64,
    pub area: f64,
    pub ratio: f64,
}

/// Continuous index `n*` with `d(n*) = t`, by inverting the turning length.
pub fn parabolic_index_at(geom: &CuspGeometry, t: f64) -> Result<f64> {
    let f = |s: f64| geom.turning_length(s) - t;
    let mut hi = 1.0f64;
    while f(hi) < 0.0 {
        if hi >= geom.t_max {
            return Err(Error::DisplacementTooLarge {
                requested: t,
                max: geom.turning_length(geom.t_max),
            });
        }
        hi = (2.0 * hi).min(geom.t_max);
    }
    let mut lo = 0.5 * hi;
    while f(lo) > 0.0 {
        hi = lo;
        lo *= 0.25;
        if lo < 1e-12 {
            return Ok(0.0);
        }
    }
    let s = find_root(f, lo, hi, 1e-14 * hi)?;
    Ok((geom.ln_displacement(s) - geom.w0.ln()).exp())
}

/// `v_P(R)·𝒜(R/2)` on an `R` grid.
pub fn vp_vs_area(geom: &CuspGeometry, r_grid: &[f64]) -> Result<Vec<VpRow>> {
    r_grid
        .iter()
        .map(|&r| {
            let n = parabolic_index_at(geom, r)?.floor();
            let count = 1.0 + 2.0 * n;
            let area = geom.horo_area(0.5 * r);
            Ok(VpRow {
                r,
                count,
                area,
                ratio: count * area,
            })
        })
        .collect()
}

/// Explicit terms are summed up to this index; the rest is the tail integral.
const EXPLICIT_N: i64 = 2000;

/// One row of [`tail_sum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub t: f64,
    /// `Σ_{p : d > t} e^{−δd}` over `pⁿ`, `n ≥ 1` (or both signs of `n`).
    pub tail: f64,
    /// `tail·t^κ/L(t)`.
    pub compensated: f64,
    /// `Σ_{p : d ≤ t} d·e^{−δd}`.
    pub moment: f64,
}

/// Tail table with the fitted exponents.
#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub delta: f64,
    pub two_sided: bool,
    pub kappa: f64,
    pub rows: Vec<TailRow>,
    /// Slope of `−ln(tail/L)` against `ln t`.
    pub kappa_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    /// Exponent `p` of the least-squares model `moment ≈ A + B·t^p`
    /// (expected `1 − κ`; `A` absorbs the finite head of the sum).
    pub moment_exponent: f64,
}

/// Parabolic distance data of one cusp: explicit `d_n` and a tail table past them.
struct ParabolicSums {
    d: Vec<f64>,
    tail: CuspTail,
}

impl ParabolicSums {
    fn new(geom: &CuspGeometry) -> Result<Self> {
        let d = (1..=EXPLICIT_N)
            .into_par_iter()
            .map(|n| geom.parabolic_orbit_distance(0.0, n))
            .collect::<Result<Vec<f64>>>()?;
        let tail = CuspTail::build(geom, EXPLICIT_N as f64 + 0.5)?;
        Ok(Self { d, tail })
    }

    /// One-sided `Σ_{n ≥ 1, d_n ≤ t} d_n e^{−δd_n}`.
    fn moment(&self, delta: f64, t: f64) -> f64 {
        let head: f64 = self.d.iter().filter(|&&d| d <= t).map(|&d| d * (-delta * d).exp()).sum();
        head + self.tail.moment(delta, 1, t)
    }
}

/// One-sided `Σ_{n ≥ 1, d_n > t} e^{−δd_n}`; `∞` if the tail diverges.
fn one_sided_tail(geom: &CuspGeometry, sums: &ParabolicSums, delta: f64, t: f64) -> Result<f64> {
    let n_star = parabolic_index_at(geom, t)?;
    if n_star < EXPLICIT_N as f64 {
        let head: f64 = sums.d.iter().filter(|&&d| d > t).map(|&d| (-delta * d).exp()).sum();
        Ok(sums.tail.sum(Complex::new(delta, 0.0)).map_or(f64::INFINITY, |s| head + s.re))
    } else {
        let tail = CuspTail::build(geom, n_star.floor() + 0.5)?;
        Ok(tail.sum(Complex::new(delta, 0.0)).map_or(f64::INFINITY, |s| s.re))
    }
}

/// Parabolic tail `Σ_{d > t} e^{−δd}` and moment `Σ_{d ≤ t} d e^{−δd}` on a `t` grid,
/// over positive powers only or over both signs.
pub fn tail_sum(geom: &CuspGeometry, delta: f64, kappa: f64, l: SlowlyVaryingModel, t_grid: &[f64], two_sided: bool) -> Result<TailReport> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidArgument("tail fit needs at least two t values".into()));
    }
    let sums = ParabolicSums::new(geom)?;
    let sides = if two_sided { 2.0 } else { 1.0 };
    let rows: Vec<TailRow> = t_grid
        .iter()
        .map(|&t| {
            let tail = sides * one_sided_tail(geom, &sums, delta, t)?;
            Ok(TailRow {
                t,
                tail,
                compensated: tail * t.powf(kappa) / l.eval(t),
                moment: sides * sums.moment(delta, t),
            })
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t.ln(), (r.tail / l.eval(r.t)).ln())).collect();
    let (slope, intercept, r2) = linear_fit(&pts);
    let mslope = offset_power_fit(&rows.iter().map(|r| (r.t, r.moment)).collect::<Vec<_>>());
    Ok(TailReport {
        delta,
        two_sided,
        kappa,
        rows,
        kappa_hat: -slope,
        c_hat: intercept.exp(),
        r2,
        moment_exponent: mslope,
    })
}

/// Exponent `p ∈ [0.01, 2]` minimizing the residual of the linear fit `y ≈ A + B·t^p`.
fn offset_power_fit(pts: &[(f64, f64)]) -> f64 {
    let resid = |p: f64| {
        let q: Vec<(f64, f64)> = pts.iter().map(|&(t, y)| (t.powf(p), y)).collect();
        let (b, a, _) = linear_fit(&q);
        q.iter().map(|&(x, y)| (y - a - b * x).powi(2)).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.01f64, 2.0f64);
    let best = (0..=200)
        .map(|k| lo + (hi - lo) * k as f64 / 200.0)
        .min_by(|a, b| resid(*a).total_cmp(&resid(*b)))
        .unwrap_or(lo);
    lo = (best - 0.01).max(0.01);
    hi = (best + 0.01).min(2.0);
    // Golden-section refinement around the grid minimum.
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    for _ in 0..60 {
        if resid(a) < resid(b) {
            hi = b;
        } else {
            lo = a;
        }
        a = hi - g * (hi - lo);
        b = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

/// Outcome of the special-series test `Σ_P d·e^{−δd}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DopVerdict {
    SeriesDiverges,
    SeriesConverges { bound: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct DopReport {
    pub delta: f64,
    pub horizon: f64,
    /// `Σ_{d ≤ horizon} d e^{−δd}` over both signs.
    pub partial: f64,
    /// Sampled power-law rates `q = u·(−d/du ln(L e^{u−δL}))` past the horizon.
    pub q_min: f64,
    pub q_max: f64,
    pub verdict: DopVerdict,
}

/// Integral comparison for `Σ_{p∈P} d(x₀,px₀)e^{−δd(x₀,px₀)}`. In `u = ln(nw)`
/// the summand density is `F(u) = L e^{u − ln w − δL}`; a sampled rate `q ≥ q_min > 1`
/// past the horizon bounds the tail by `F(T)·T/(q_min − 1)`, and `q ≤ 1` throughout
/// certifies divergence.
pub fn dop_criterion(geom: &CuspGeometry, delta: f64, horizon: f64) -> Result<DopReport> {
    let sums = ParabolicSums::new(geom)?;
    let partial = 2.0 * sums.moment(delta, horizon);
    let s_h = {
        let n = parabolic_index_at(geom, horizon)?.max(1.0);
        geom.turning_height(n.ln() + geom.w0.ln())?
    };
    let s_end = geom.t_max * 0.999;
    let rate = |s: f64| {
        let u = geom.ln_displacement(s);
        let l = geom.turning_length(s);
        let dl = (u + geom.profile.g(s)).exp();
        (u, l, u * (delta * dl - 1.0 - dl / l))
    };
    let samples: Vec<(f64, f64, f64)> = (0..=64)
        .into_par_iter()
        .map(|k| rate(s_h * (s_end / s_h).powf(k as f64 / 64.0)))
        .collect();
    let q_min = samples.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    let q_max = samples.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    let verdict = if q_min > 1.0 {
        let (u, l, _) = samples[0];
        let f_t = l * (u - geom.w0.ln() - delta * l).exp();
        DopVerdict::SeriesConverges {
            bound: partial + 2.0 * f_t * u / (q_min - 1.0),
        }
    } else if q_max <= 1.0 {
        DopVerdict::SeriesDiverges
    } else {
        DopVerdict::Inconclusive
    };
    Ok(DopReport {
        delta,
        horizon,
        partial,
        q_min,
        q_max,
        verdict,
    })
}

/// Point data of the enumerations behind `W_j`: roofs along the coding and the
/// group element, for canonical words `γ = β_k⋯β₁` with `β₁` ending in `j`.
struct WordWalk<'a> {
    m: &'a PerturbedMetric,
    alpha: Vec<Block>,
    iso: Vec<Isometry>,
    inv: Vec<Isometry>,
    dist: Vec<f64>,
    back: Vec<DiskPoint>,
    excess: Vec<f64>,
    roof: RoofModel,
}

impl<'a> WordWalk<'a> {
    fn new(m: &'a PerturbedMetric, tr: AlphabetTruncation, roof: RoofModel) -> Result<Self> {
        let alpha = alphabet(m.spec.r, tr);
        let iso: Vec<Isometry> = alpha.iter().map(|b| m.spec.block_isometry(b)).collect();
        let inv: Vec<Isometry> = iso.iter().map(|g| g.inverse()).collect();
        let dist: Vec<f64> = alpha.iter().map(|b| m.block_distance(b)).collect::<Result<_>>()?;
        let back = inv.iter().map(|g| g.orbit_origin()).collect();
        let excess = iso.iter().zip(&dist).map(|(g, d)| d - dist_origin(g.orbit_origin())).collect();
        Ok(Self {
            m,
            alpha,
            iso,
            inv,
            dist,
            back,
            excess,
            roof,
        })
    }

    fn first_blocks(&self, j: usize, x: BoundaryPoint) -> Vec<usize> {
        (0..self.alpha.len())
            .filter(|&i| self.alpha[i].last_index() == j && self.m.spec.in_k(&self.alpha[i], x))
            .collect()
    }

    /// Visits `ℬ = S_k𝔯` along the coding for every word with `ℬ ≤ cap`.
    fn visit_roofs(&self, j: usize, x: BoundaryPoint, cap: f64, budget: u64, f: &mut dyn FnMut(f64)) -> Result<u64> {
        let mut count = 0u64;
        for i in self.first_blocks(j, x) {
            self.roof_step(i, x, 0.0, cap, budget, &mut count, f)?;
        }
        Ok(count)
    }

    #[allow(clippy::too_many_arguments)]
    fn roof_step(&self, i: usize, y: BoundaryPoint, b: f64, cap: f64, budget: u64, count: &mut u64, f: &mut dyn FnMut(f64)) -> Result<()> {
        let (r, _) = self.m.roof_raw(self.dist[i], self.back[i], y, self.roof);
        if r <= 0.0 {
            return Err(Error::InvalidArgument(format!("nonpositive roof {r} blocks pruning")));
        }
        let bn = b + r;
        if bn > cap {
            return Ok(());
        }
        *count += 1;
        if *count > budget {
            return Err(Error::BudgetExceeded(cap));
        }
        f(bn);
        let z = self.iso[i].apply_boundary(y);
        for k in 0..self.alpha.len() {
            if can_follow(&self.alpha[k], &self.alpha[i]) {
                self.roof_step(k, z, bn, cap, budget, count, f)?;
            }
        }
        Ok(())
    }

    /// Visits `ℬ_j(γ) = B_x(γ⁻¹x₀, x₀) + Σ(d_b − d₀)` computed from the group element.
    fn visit_group(&self, j: usize, x: BoundaryPoint, cap: f64, budget: u64, f: &mut dyn FnMut(f64)) -> Result<u64> {
        let mut count = 0u64;
        #[allow(clippy::too_many_arguments)]
        fn rec(
            w: &WordWalk,
            x: BoundaryPoint,
            prev: usize,
            g: Isometry,
            ex: f64,
            cap: f64,
            budget: u64,
            count: &mut u64,
            f: &mut dyn FnMut(f64),
        ) -> Result<()> {
            let b = busemann(x, g.orbit_origin(), DiskPoint::ORIGIN) + ex;
            if b > cap {
                return Ok(());
            }
            *count += 1;
            if *count > budget {
                return Err(Error::BudgetExceeded(cap));
            }
            f(b);
            for i in 0..w.alpha.len() {
                if can_follow(&w.alpha[i], &w.alpha[prev]) {
                    rec(w, x, i, g.compose(&w.inv[i]), ex + w.excess[i], cap, budget, count, f)?;
                }
            }
            Ok(())
        }
        for i in self.first_blocks(j, x) {
            rec(self, x, i, self.inv[i], self.excess[i], cap, budget, &mut count, f)?;
        }
        Ok(count)
    }
}

/// Enumerated renewal sum `W_j(R, ψ) = Σ_{γ∈Γ_j} e^{−δℬ}ψ(ℬ − R)` with `ℬ` the
/// roof cocycle at `x`; `ψ` vanishes outside `support`. Roofs must be positive,
/// which makes `ℬ` increase along extensions.
#[allow(clippy::too_many_arguments)]
pub fn renewal_w(
    m: &PerturbedMetric,
    tr: AlphabetTruncation,
    roof: RoofModel,
    j: usize,
    x: BoundaryPoint,
    delta: f64,
    r: f64,
    psi: &dyn Fn(f64) -> f64,
    support: (f64, f64),
    budget: u64,
) -> Result<f64> {
    let walk = WordWalk::new(m, tr, roof)?;
    let mut acc = 0.0;
    walk.visit_roofs(j, x, r + support.1, budget, &mut |b| {
        let u = b - r;
        if u >= support.0 {
            acc += (-delta * b).exp() * psi(u);
        }
    })?;
    Ok(acc)
}

/// `#{γ ∈ Γ_j : ℬ_j(γ) ≤ R}` from group elements (Busemann function of `γ⁻¹x₀`).
pub fn busemann_count(m: &PerturbedMetric, tr: AlphabetTruncation, j: usize, x: BoundaryPoint, r: f64, budget: u64) -> Result<u64> {
    let walk = WordWalk::new(m, tr, RoofModel::BusemannCorrected)?;
    let mut n = 0u64;
    walk.visit_group(j, x, r, budget, &mut |_| n += 1)?;
    Ok(n)
}

/// Band-limited test function with `ψ̂(t) = ½[c(t − t₀) + c(t + t₀)]`,
/// `c(t) = ½(1 + cos(πt/h))` on `|t| ≤ h`, and `ψ(u) = (1/2π)∫ψ̂(t)e^{−itu}dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandLimited {
    pub center: f64,
    pub half_width: f64,
}

impl BandLimited {
    fn bump(&self, t: f64) -> f64 {
        if t.abs() >= self.half_width {
            0.0
        } else {
            0.5 * (1.0 + (PI * t / self.half_width).cos())
        }
    }

    pub fn psi_hat(&self, t: f64) -> f64 {
        0.5 * (self.bump(t - self.center) + self.bump(t + self.center))
    }

    pub fn psi(&self, u: f64) -> f64 {
        let h = self.half_width;
        let a = PI / h;
        let sinc = |v: f64| {
            if v.abs() < 1e-6 {
                h * (1.0 - (h * v).powi(2) / 6.0)
            } else {
                (h * v).sin() / v
            }
        };
        let base = (2.0 * sinc(u) + sinc(a - u) + sinc(a + u)) / (4.0 * PI);
        (self.center * u).cos() * base
    }

    fn breaks(&self) -> Vec<f64> {
        let (c, h) = (self.center, self.half_width);
        let mut v: Vec<f64> = [0.0, c - h, c, c + h, h - c].into_iter().filter(|&t| t >= 0.0).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        v
    }
}

/// Value at a point of a grid function, through the point's branches of `L_z`.
fn apply_point_row(op: &TransferOperator, row: &(Vec<Entry>, Vec<ClosureEntry>), z: Complex, g: &DVector<Complex>) -> Option<Complex> {
    let at = |col: u32, frac: f64| g[col as usize] * (1.0 - frac) + g[col as usize + 1] * frac;
    let mut acc: Complex = row.0.iter().map(|e| (-z * e.roof).exp() * at(e.col, e.frac)).sum();
    if !row.1.is_empty() {
        let sums = op.closure_sums(z)?;
        for e in &row.1 {
            acc += (z * e.gp).exp() * sums[e.cusp - 1] * at(e.col, e.frac);
        }
    }
    Some(acc)
}

/// `W_j(s, R, ψ) = (1/2π)∫e^{itR}ψ̂(t)[sL(I − sL_{δ+it})⁻¹1](x)dt`, the `k ≥ 1`
/// part of the renewal series on the truncated grid operator.
#[allow(clippy::too_many_arguments)]
pub fn renewal_w_fourier(
    m: &PerturbedMetric,
    op: &TransferOperator,
    x: BoundaryPoint,
    delta: f64,
    s: f64,
    r: f64,
    psi: &BandLimited,
    rel_tol: f64,
) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("renewal parameter s must lie in (0, 1), got {s}")));
    }
    let row = op.point_row(m, x)?;
    let n = op.dim();
    let ones = DVector::from_element(n, Complex::new(1.0, 0.0));
    let mut failure: Option<f64> = None;
    let mut f = |t: f64| -> Complex {
        let z = Complex::new(delta, t);
        let a = match op.matrix(z) {
            Some(a) => a,
            None => {
                failure.get_or_insert(t);
                return Complex::new(0.0, 0.0);
            }
        };
        let lhs = DMatrix::<Complex>::identity(n, n) - a * Complex::new(s, 0.0);
        match lhs.lu().solve(&ones).and_then(|g| apply_point_row(op, &row, z, &g)) {
            Some(v) if v.re.is_finite() && v.im.is_finite() => psi.psi_hat(t) * (Complex::new(0.0, t * r)).exp() * v * s,
            _ => {
                failure.get_or_insert(t);
                Complex::new(0.0, 0.0)
            }
        }
    };
    let breaks = psi.breaks();
    let mut total = Complex::new(0.0, 0.0);
    for w in breaks.windows(2) {
        total += integrate(&mut f, w[0], w[1], 1e-14, rel_tol, 2000).value;
    }
    if let Some(t) = failure {
        return Err(Error::ResolventIllConditioned(t));
    }
    Ok(total.re / PI)
}

/// Four-point moment-preserving split of a unit mass at fractional bin
/// position `f ∈ [0, 1)` onto bins `−1, 0, 1, 2`.
fn split4(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

/// Binned renewal measure `μ(dB) = Σ_{k≥1} s^k Σ_{|γ|_𝔅=k} e^{−δℬ}δ_ℬ(dB)` at a
/// point, propagated through the grid operator with moment-preserving binning.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalMeasure {
    pub delta: f64,
    pub s: f64,
    pub bin: f64,
    /// Mass at `B = i·bin`, summed over grid nodes.
    pub mass: Vec<f64>,
    pub steps: usize,
    /// Mass left inside the window when the iteration stopped.
    pub remaining: f64,
}

/// Bins left of `B = 0` used by the closure offsets `−gp`.
const LEAD_BINS: usize = 8;

impl RenewalMeasure {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        m: &PerturbedMetric,
        op: &TransferOperator,
        x: BoundaryPoint,
        delta: f64,
        s: f64,
        bin: f64,
        b_max: f64,
        tol: f64,
        max_steps: usize,
    ) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0 && bin > 0.0 && b_max > bin) {
            return Err(Error::InvalidArgument(
                "renewal measure needs s ∈ (0,1], bin > 0, b_max > bin".into(),
            ));
        }
        let nb = (b_max / bin).ceil() as usize + 1;
        let g = op.dim();
        let lead = LEAD_BINS.max((m.calibration.c_buse / bin).ceil() as usize + 3);
        // Closure kernels: mass of `2·s·e^{−δd}` per bin of `d`, for each cusp.
        let kernels: Vec<Vec<f64>> = op
            .tails()
            .iter()
            .map(|t| {
                let edges: Vec<f64> = (0..=nb).map(|i| (i as f64 - 0.5) * bin).collect();
                t.binned(delta, &edges).into_iter().map(|v| 2.0 * s * v).collect()
            })
            .collect();
        let deposit = |buf: &mut [f64], col: u32, frac: f64, pos: f64, w: f64| {
            let i0 = pos.floor();
            let sp = split4(pos - i0);
            for (c, wc) in [(col as usize, 1.0 - frac), (col as usize + 1, frac)] {
                if wc == 0.0 {
                    continue;
                }
                let row = &mut buf[c * nb..(c + 1) * nb];
                for (d, &ws) in sp.iter().enumerate() {
                    let i = i0 as i64 - 1 + d as i64;
                    if i >= 0 && (i as usize) < nb {
                        row[i as usize] += w * wc * ws;
                    }
                }
            }
        };
        let (row0, closure0) = op.point_row(m, x)?;
        let mut cur = vec![0.0; g * nb];
        for e in &row0 {
            deposit(&mut cur, e.col, e.frac, e.roof / bin, s * (-delta * e.roof).exp());
        }
        let mut mass = vec![0.0; nb];
        let closure_step = |src: &[(f64, &[f64])], target: &mut [f64], cusp: usize, col: u32, frac: f64| {
            // Aggregate shifted sources, then convolve with the cusp kernel.
            let mut agg = vec![0.0; nb + lead];
            for &(gp, v) in src {
                let w = (delta * gp).exp();
                let shift = lead as f64 - gp / bin;
                let i0 = shift.floor();
                let sp = split4(shift - i0);
                for (d, &ws) in sp.iter().enumerate() {
                    let off = i0 as i64 - 1 + d as i64;
                    for (b, &vb) in v.iter().enumerate() {
                        if vb != 0.0 {
                            let i = b as i64 + off;
                            if i >= 0 && (i as usize) < agg.len() {
                                agg[i as usize] += w * ws * vb;
                            }
                        }
                    }
                }
            }
            let ker = &kernels[cusp - 1];
            let mut out = vec![0.0; nb];
            for (a, &va) in agg.iter().enumerate() {
                if va == 0.0 {
                    continue;
                }
                for (kk, &vk) in ker.iter().enumerate() {
                    let i = a + kk;
                    if i < lead {
                        continue;
                    }
                    let i = i - lead;
                    if i >= nb {
                        break;
                    }
                    out[i] += va * vk;
                }
            }
            for (c, wc) in [(col as usize, 1.0 - frac), (col as usize + 1, frac)] {
                for (b, &o) in out.iter().enumerate() {
                    target[c * nb + b] += wc * o;
                }
            }
        };
        if !closure0.is_empty() {
            let point_mass: Vec<f64> = {
                let mut v = vec![0.0; nb];
                v[0] = 1.0;
                v
            };
            for e in &closure0 {
                closure_step(&[(e.gp, &point_mass)], &mut cur, e.cusp, e.col, e.frac);
            }
        }
        let mut steps = 1;
        let mut first_total = 0.0;
        loop {
            let total: f64 = cur.iter().map(|v| v.abs()).sum();
            for (k, v) in cur.iter().enumerate() {
                mass[k % nb] += v;
            }
            if steps == 1 {
                first_total = total;
            }
            if total <= tol * first_total.max(f64::MIN_POSITIVE) || steps >= max_steps {
                return Ok(Self {
                    delta,
                    s,
                    bin,
                    mass,
                    steps,
                    remaining: total,
                });
            }
            let mut next = vec![0.0; g * nb];
            for k in 0..g {
                let src = &cur[k * nb..(k + 1) * nb];
                let Some(lo) = src.iter().position(|&v| v != 0.0) else { continue };
                let hi = src.iter().rposition(|&v| v != 0.0).expect("nonzero entry");
                for e in op.row(k) {
                    let w = s * (-delta * e.roof).exp();
                    let shift = e.roof / bin;
                    let i0 = shift.floor() as i64;
                    let sp = split4(shift - i0 as f64);
                    for (c, wc) in [(e.col as usize, 1.0 - e.frac), (e.col as usize + 1, e.frac)] {
                        if wc == 0.0 {
                            continue;
                        }
                        let dst = &mut next[c * nb..(c + 1) * nb];
                        for (d, &ws) in sp.iter().enumerate() {
                            let off = i0 - 1 + d as i64;
                            let f = w * wc * ws;
                            let b_lo = (lo as i64).max(-off) as usize;
                            let b_hi = (hi as i64).min(nb as i64 - 1 - off);
                            if b_hi < b_lo as i64 {
                                continue;
                            }
                            for b in b_lo..=b_hi as usize {
                                dst[(b as i64 + off) as usize] += f * src[b];
                            }
                        }
                    }
                }
            }
            if !op.tails().is_empty() {
                let r = m.spec.r;
                for cusp in 1..=r {
                    let mut src: Vec<(f64, &[f64])> = Vec::new();
                    let mut target = None;
                    for k in 0..g {
                        for e in op.closure_row(k).iter().filter(|e| e.cusp == cusp) {
                            src.push((e.gp, &cur[k * nb..(k + 1) * nb]));
                            target = Some((e.col, e.frac));
                        }
                    }
                    if let Some((col, frac)) = target {
                        closure_step(&src, &mut next, cusp, col, frac);
                    }
                }
            }
            cur = next;
            steps += 1;
        }
    }

    /// `∫ψ(B − R)μ(dB)`.
    pub fn integrate(&self, psi: impl Fn(f64) -> f64, r: f64) -> f64 {
        self.mass.iter().enumerate().map(|(i, &w)| w * psi(i as f64 * self.bin - r)).sum()
    }

    /// `e^{δR}∫_{B≤R} e^{δ(B−R)}μ(dB)`: the Busemann count at `s = 1`.
    pub fn count(&self, r: f64) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .take_while(|(i, _)| *i as f64 * self.bin <= r + 1e-12)
            .map(|(i, &w)| w * (self.delta * i as f64 * self.bin).exp())
            .sum()
    }
}

/// `σ(∂X ∖ I_j)·h(x_j)`, the constant in front of the `Γ_j` asymptotics.
pub fn c_j_structure(op: &TransferOperator, sp: &SpectralResult, spec: &GroupSpec, j: usize) -> f64 {
    let big = spec.big_arc(j);
    let sigma: f64 = (0..op.dim())
        .filter(|&k| !big.contains(op.grid.nodes[k].theta))
        .map(|k| sp.sigma[k])
        .sum();
    let x = spec.x_default(j);
    sigma * op.grid.interpolate(sp.h.as_slice(), x.theta(), false)
}

/// Row of an asymptotic fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitRow {
    pub r: f64,
    pub v: f64,
    /// `v·R^{1−κ}L(R)e^{−δR}`.
    pub compensated: f64,
    /// `v·e^{−δR}`.
    pub uncompensated: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticFit {
    pub delta: f64,
    pub kappa: f64,
    pub window: (f64, f64),
    pub rows: Vec<FitRow>,
    /// Geometric mean of the compensated sequence over the window.
    pub c_hat: f64,
    pub flatness: f64,
    pub flatness_uncompensated: f64,
}

/// Compensates counts by the model `C e^{δR}/(R^{1−κ}L(R))` and measures flatness
/// (max/min) over the window.
pub fn asymptotic_fit(r: &[f64], v: &[f64], delta: f64, kappa: f64, l: SlowlyVaryingModel, window: (f64, f64)) -> Result<AsymptoticFit> {
    if r.len() != v.len() {
        return Err(Error::InvalidArgument("R and count arrays differ in length".into()));
    }
    let rows: Vec<FitRow> = r
        .iter()
        .zip(v)
        .map(|(&r, &v)| FitRow {
            r,
            v,
            compensated: v * r.powf(1.0 - kappa) * l.eval(r) * (-delta * r).exp(),
            uncompensated: v * (-delta * r).exp(),
        })
        .collect();
    let inside: Vec<&FitRow> = rows.iter().filter(|x| x.r >= window.0 && x.r <= window.1).collect();
    if inside.is_empty() || inside.iter().any(|x| !(x.v > 0.0)) {
        return Err(Error::InvalidArgument("fit window holds no positive counts".into()));
    }
    let flat = |f: &dyn Fn(&FitRow) -> f64| {
        let hi = inside.iter().map(|x| f(x)).fold(0.0, f64::max);
        let lo = inside.iter().map(|x| f(x)).fold(f64::INFINITY, f64::min);
        hi / lo
    };
    let c_hat = (inside.iter().map(|x| x.compensated.ln()).sum::<f64>() / inside.len() as f64).exp();
    Ok(AsymptoticFit {
        delta,
        kappa,
        window,
        c_hat,
        flatness: flat(&|x| x.compensated),
        flatness_uncompensated: flat(&|x| x.uncompensated),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cusp::Profile;
    use crate::metric::calibrate;
    use crate::transfer::{critical_exponent, OperatorTruncation};
    use approx::assert_relative_eq;

    fn hyp_metric() -> PerturbedMetric {
        let spec = GroupSpec::standard();
        let cal = calibrate(&spec, AlphabetTruncation { n_max: 50, m_max: 6 }).unwrap();
        PerturbedMetric::hyperbolic(spec, cal, 50).unwrap()
    }

    fn small_tr() -> OperatorTruncation {
        OperatorTruncation {
            n_max: 6,
            m_max: 2,
            grid: 64,
            roof: RoofModel::BusemannCorrected,
            closure: false,
        }
    }

    #[test]
    fn slowly_varying_models() {
        assert!(SlowlyVaryingModel::Constant { c: 2.0 }.validate().is_ok());
        assert!(SlowlyVaryingModel::LogPower { c: 1.0, p: 0.1 }.validate().is_ok());
        assert!(SlowlyVaryingModel::LogPower { c: 1.0, p: 1.0 }.validate().is_err());
        assert!(SlowlyVaryingModel::Constant { c: 0.0 }.validate().is_err());
        let l = SlowlyVaryingModel::LogPower { c: 2.0, p: 0.5 };
        assert_relative_eq!(l.eval(std::f64::consts::E.powi(4)), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn split_preserves_low_moments() {
        for f in [0.0, 0.1, 0.37, 0.5, 0.93] {
            let w = split4(f);
            for k in 0..4 {
                let m: f64 = w.iter().enumerate().map(|(i, wi)| wi * (i as f64 - 1.0).powi(k)).sum();
                assert_relative_eq!(m, f.powi(k), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn band_limited_pair_matches_quadrature() {
        for psi in [
            BandLimited {
                center: 0.0,
                half_width: 1.0,
            },
            BandLimited {
                center: 1.5,
                half_width: 0.7,
            },
        ] {
            for u in [0.0, 0.3, -2.1, PI / psi.half_width, 7.5] {
                let q = integrate(|t: f64| psi.psi_hat(t) * (t * u).cos(), -3.0, 3.0, 1e-14, 1e-12, 400).value / (2.0 * PI);
                assert_relative_eq!(psi.psi(u), q, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn synthetic_counts_are_flat_after_compensation() {
        let r: Vec<f64> = (0..=40).map(|k| 4.0 + 0.2 * k as f64).collect();
        let v: Vec<f64> = r.iter().map(|&r| ((1.5 * r).exp() / r.powf(0.3)).ceil()).collect();
        let fit = asymptotic_fit(&r, &v, 1.5, 0.7, SlowlyVaryingModel::Constant { c: 1.0 }, (4.0, 12.0)).unwrap();
        assert!(fit.flatness < 1.05, "flatness {}", fit.flatness);
        assert_relative_eq!(fit.c_hat, 1.0, epsilon = 0.01);
        assert!(fit.flatness_uncompensated > fit.flatness);
    }

    #[test]
    fn exact_count_small_radii() {
        let spec = GroupSpec::standard();
        // The four generators sit at distance 2·asinh(1) ≈ 1.763.
        let c = exact_orbit_count(&spec, &[0.0, 1.5, 2.0], 1000).unwrap();
        assert_eq!(c, vec![1, 1, 5]);
    }

    #[test]
    fn bracket_contains_exact_count() {
        let m = hyp_metric();
        let r: Vec<f64> = (0..=16).map(|k| 0.5 * k as f64).collect();
        let c = orbital_count(&m, &r, 10_000_000).unwrap();
        let ex = exact_orbit_count(&m.spec, &r, 10_000_000).unwrap();
        assert_eq!(c.conservative[0], 1);
        for k in 0..r.len() {
            assert!(c.conservative[k] <= ex[k] && ex[k] <= c.liberal[k], "R = {}", r[k]);
        }
        assert!(c.conservative.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(orbital_count(&m, &r, 100), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn hyperbolic_parabolic_count_times_area_tends_to_two() {
        // d_n = 2 asinh(nw/2) gives v_P(R) ≈ 2e^{R/2}/w and 𝒜(R/2) = w e^{−R/2}.
        let g = CuspGeometry::new(Profile::Hyperbolic, 2, 2.0).unwrap();
        let rows = vp_vs_area(&g, &[20.0, 30.0, 40.0]).unwrap();
        for row in rows {
            assert_relative_eq!(row.ratio, 2.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn hyperbolic_tail_matches_direct_sum() {
        let w = 2.0;
        let g = CuspGeometry::new(Profile::Hyperbolic, 2, w).unwrap();
        let delta = 1.5;
        let rep = tail_sum(&g, delta, 0.7, SlowlyVaryingModel::Constant { c: 1.0 }, &[3.0, 6.0], false).unwrap();
        for row in &rep.rows {
            let direct: f64 = (1..2_000_000)
                .map(|n| 2.0 * (n as f64 * w / 2.0).asinh())
                .filter(|&d| d > row.t)
                .map(|d| (-delta * d).exp())
                .sum();
            assert_relative_eq!(row.tail, direct, max_relative = 1e-6);
        }
    }

    #[test]
    fn special_series_verdicts() {
        let g = CuspGeometry::new(Profile::poly_log(3.0, 0.7).unwrap(), 2, 2.0).unwrap();
        assert_eq!(dop_criterion(&g, 1.5, 40.0).unwrap().verdict, DopVerdict::SeriesDiverges);
        let h = CuspGeometry::new(Profile::Hyperbolic, 2, 2.0).unwrap();
        let rep = dop_criterion(&h, 1.0, 20.0).unwrap();
        let direct: f64 = (1..200_000).map(|n| 2.0 * (n as f64).asinh()).map(|d| 2.0 * d * (-d).exp()).sum();
        match rep.verdict {
            DopVerdict::SeriesConverges { bound } => assert!(bound >= direct * (1.0 - 1e-9), "{bound} < {direct}"),
            v => panic!("unexpected verdict {v:?}"),
        }
    }

    #[test]
    fn renewal_identity_and_translation() {
        let m = hyp_metric();
        let tr = AlphabetTruncation { n_max: 12, m_max: 2 };
        let delta = 0.9;
        let r = 7.3;
        let mut w = 0.0;
        let mut count = 0;
        for j in 1..=2 {
            let x = m.spec.x_default(j);
            w += renewal_w(
                &m,
                tr,
                RoofModel::BusemannCorrected,
                j,
                x,
                delta,
                r,
                &|u: f64| (delta * u).exp(),
                (f64::NEG_INFINITY, 0.0),
                10_000_000,
            )
            .unwrap();
            count += busemann_count(&m, tr, j, x, r, 10_000_000).unwrap();
        }
        assert!(count > 100);
        assert_relative_eq!(w, (-delta * r).exp() * count as f64, max_relative = 1e-12);
        let x = m.spec.x_default(1);
        let bump = |u: f64| if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        let zero = renewal_w(
            &m,
            tr,
            RoofModel::BusemannCorrected,
            1,
            x,
            delta,
            r,
            &|_| 0.0,
            (-1.0, 1.0),
            10_000_000,
        )
        .unwrap();
        assert_eq!(zero, 0.0);
        let shifted = renewal_w(
            &m,
            tr,
            RoofModel::BusemannCorrected,
            1,
            x,
            delta,
            r,
            &|u| bump(u - 0.5),
            (-0.5, 1.5),
            10_000_000,
        )
        .unwrap();
        let moved = renewal_w(
            &m,
            tr,
            RoofModel::BusemannCorrected,
            1,
            x,
            delta,
            r + 0.5,
            &bump,
            (-1.0, 1.0),
            10_000_000,
        )
        .unwrap();
        assert_relative_eq!(shifted, moved, max_relative = 1e-12);
    }

    #[test]
    fn fourier_resolvent_matches_geometric_series() {
        let m = hyp_metric();
        let op = TransferOperator::assemble(&m, small_tr()).unwrap();
        let delta = critical_exponent(&op, 0.3, 1.5, 1e-10).unwrap().delta;
        let x = m.spec.x_default(2);
        let rm = RenewalMeasure::compute(&m, &op, x, delta, 0.5, 0.05, 60.0, 1e-14, 1000).unwrap();
        let psi = BandLimited {
            center: 0.0,
            half_width: 1.5,
        };
        for r in [3.0, 8.0] {
            let direct = rm.integrate(|u| psi.psi(u), r);
            let four = renewal_w_fourier(&m, &op, x, delta, 0.5, r, &psi, 1e-10).unwrap();
            assert_relative_eq!(direct, four, max_relative = 1e-3);
        }
        // Total mass is `s·L(I − sL)⁻¹1(x)` at `t = 0`, up to mass past the window.
        let n = op.dim();
        let a = op.matrix(Complex::new(delta, 0.0)).unwrap();
        let lhs = DMatrix::<Complex>::identity(n, n) - a * Complex::new(0.5, 0.0);
        let g = lhs.lu().solve(&DVector::from_element(n, Complex::new(1.0, 0.0))).unwrap();
        let row = op.point_row(&m, x).unwrap();
        let expect = 0.5 * apply_point_row(&op, &row, Complex::new(delta, 0.0), &g).unwrap().re;
        let total: f64 = rm.mass.iter().sum();
        assert_relative_eq!(total, expect, max_relative = 1e-5);
    }

    #[test]
    fn poincare_partial_at_large_exponent() {
        let m = hyp_metric();
        let op = TransferOperator::assemble(&m, small_tr()).unwrap();
        let rep = poincare_partial(&m, &op, 8.0, 3, 10_000_000, 1e6).unwrap();
        assert_eq!(rep.verdict, Verdict::Convergent);
        assert!(rep.partial - 1.0 < 1e-4 && rep.tail_bound.unwrap() < 1e-4);
        assert!(rep.level_sums.windows(2).all(|w| w[1] < w[0]));
        let low = poincare_partial(&m, &op, 0.5, 2, 10_000_000, 1e6).unwrap();
        assert_eq!(low.verdict, Verdict::Inconclusive);
        assert!(low.rho > 1.0);
    }
}
