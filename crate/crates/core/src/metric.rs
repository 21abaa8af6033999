//! The perturbed metric model: block distances, the block-additive distance
//! bracket, roofs and weights, horospherical decomposition, parabolic tail
//! sums and the convergence/divergence certificates.

use crate::coder::{
    alphabet, level1_words, reduced_words, visit_admissible, AlphabetTruncation, Block, BlockWord, GroupSpec, Letter, Word,
};
use crate::cusp::{CuspGeometry, Profile};
use crate::error::{Error, Result};
use crate::hypcore::{
    dist_origin, geodesic_horoball_intersection, gromov_product_interior, hyp_dist, BoundaryPoint, DiskPoint, Horoball, Isometry,
};
use crate::numerics::{expint_imag, integrate};
use num_complex::Complex64 as Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Word length for the horoball disjointness check.
pub const L_CHECK: usize = 6;
/// Safety factor applied to empirically calibrated constants.
pub const SAFETY: f64 = 1.5;
/// Apex height where parabolic tail tables stop.
pub const TAIL_S_END: f64 = 1500.0;

/// How the roof function depends on the boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoofModel {
    DistanceOnly,
    BusemannCorrected,
}

/// Base points of the fundamental horoballs with their parabolic class
/// (`i` for `ξ_i`, `0` for the `η`'s).
pub fn anchors(spec: &GroupSpec) -> Vec<(BoundaryPoint, usize)> {
    (0..spec.r).flat_map(|i| [(spec.xi[i], i + 1), (spec.eta[i], 0)]).collect()
}

fn words_up_to(r: usize, len: usize) -> Vec<Word> {
    (0..=len).flat_map(|l| reduced_words(r, l)).collect()
}

fn horoballs_disjoint(isos: &[Isometry], bases: &[BoundaryPoint], h: f64) -> bool {
    let mut balls: Vec<(f64, Complex, f64)> = Vec::with_capacity(isos.len() * bases.len());
    for g in isos {
        for &b in bases {
            let hb = Horoball::new(b, h).image(g);
            balls.push((hb.base.theta(), hb.center(), hb.radius()));
        }
    }
    balls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let r_max = balls.iter().map(|b| b.2).fold(0.0, f64::max);
    let n = balls.len();
    for i in 0..n {
        let (ti, ci, ri) = balls[i];
        for k in 1..n {
            let (tj, cj, rj) = balls[(i + k) % n];
            let dt = (tj - ti).rem_euclid(std::f64::consts::TAU);
            let chord = 2.0 * (dt / 2.0).sin();
            if chord >= 2.0 * (ri + r_max) {
                break;
            }
            if !(1e-9..=std::f64::consts::TAU - 1e-9).contains(&dt) {
                if (ri - rj).abs() > 1e-7 * ri.max(rj) {
                    return false;
                }
            } else if (ci - cj).norm() < ri + rj - 1e-12 {
                return false;
            }
        }
    }
    true
}

/// Smallest common height `h` such that the translates of the anchor
/// horoballs `ℋ_B(h)` by reduced words of length `≤ l_check` are pairwise
/// disjoint or equal (bisection to `1e-10`).
pub fn disjointness_height(spec: &GroupSpec, l_check: usize) -> Result<f64> {
    let isos: Vec<Isometry> = words_up_to(spec.r, l_check).iter().map(|w| spec.word_isometry(w)).collect();
    let bases: Vec<BoundaryPoint> = anchors(spec).into_iter().map(|a| a.0).collect();
    let (mut lo, mut hi) = (-2.0, 10.0);
    if !horoballs_disjoint(&isos, &bases, hi) {
        return Err(Error::InvalidArgument("anchor horoballs overlap at every height".into()));
    }
    if horoballs_disjoint(&isos, &bases, lo) {
        return Ok(lo);
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if horoballs_disjoint(&isos, &bases, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Flat translation length of `p_i` on the horosphere through `x₀`:
/// `w_i = 2 sinh(d₀(x₀, p_i x₀)/2)`.
pub fn translation_length(spec: &GroupSpec, i: usize) -> f64 {
    2.0 * (0.5 * dist_origin(spec.gen(i).orbit_origin())).sinh()
}

/// Minimal hyperbolic displacement of `x₀` over reduced words of length `≤ 4`.
pub fn minimal_displacement(spec: &GroupSpec) -> f64 {
    words_up_to(spec.r, 4)
        .iter()
        .filter(|w| !w.is_empty())
        .map(|w| dist_origin(spec.word_isometry(w).orbit_origin()))
        .fold(f64::INFINITY, f64::min)
}

/// Estimate of `diam(𝒦)`: points of the Dirichlet domain at `x₀` (tested
/// against reduced words of length `≤ 3`) outside the horoballs `ℋ(h)` and their
/// translates by words of length `≤ 2`, on a polar sample grid.
pub fn compact_diameter(spec: &GroupSpec, h: f64) -> f64 {
    let backs: Vec<DiskPoint> = words_up_to(spec.r, 3)
        .iter()
        .filter(|w| !w.is_empty())
        .map(|w| spec.word_isometry(w).inverse().orbit_origin())
        .collect();
    let balls: Vec<Horoball> = words_up_to(spec.r, 2)
        .iter()
        .flat_map(|w| {
            let g = spec.word_isometry(w);
            anchors(spec).into_iter().map(move |(b, _)| Horoball::new(b, h).image(&g))
        })
        .collect();
    let mut pts = Vec::new();
    for ir in 0..=60 {
        let rad = 0.999 * ir as f64 / 60.0;
        let n_ang = if ir == 0 { 1 } else { 8 * ir };
        for ia in 0..n_ang {
            let z = Complex::from_polar(rad, std::f64::consts::TAU * ia as f64 / n_ang as f64);
            let p = DiskPoint::new_unchecked(z);
            let d0 = dist_origin(p);
            if backs.iter().any(|&q| hyp_dist(p, q) < d0) || balls.iter().any(|b| b.contains(p)) {
                continue;
            }
            pts.push(p);
        }
    }
    pts.par_iter()
        .enumerate()
        .map(|(i, &p)| pts[i + 1..].iter().map(|&q| hyp_dist(p, q)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
}

/// Calibrated constants of the group, independent of the cusp profiles.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    /// Common disjointness height of the anchor horoballs.
    pub horoball_height: f64,
    pub l_check: usize,
    /// Largest per-junction defect `(Σ d₀(β_i) − d₀(γ))/(k − 1)` observed.
    pub junction_defect: f64,
    pub c_junction: f64,
    /// Largest `2(x|β⁻¹x₀)_{x₀}` observed on the coding sets.
    pub buse_max: f64,
    pub c_buse: f64,
    /// Largest per-excursion defect of the horospherical decomposition.
    pub horo_defect: f64,
    pub c_horo: f64,
    pub diam_k: f64,
    /// `4·diam(𝒦)`.
    pub c_diam: f64,
    pub d_min: f64,
    pub truncation: AlphabetTruncation,
    pub junction_depth: usize,
}

/// Junction calibration: alphabet capped at `|n| ≤ 6`, `Level1` length `≤ 3`, three blocks.
const JUNCTION_N: u32 = 6;
const JUNCTION_M: usize = 3;
const JUNCTION_DEPTH: usize = 3;
const HORO_WORD_LEN: usize = 7;
const BUSE_SAMPLES: usize = 33;

/// Calibrates all group constants for the given alphabet truncation.
pub fn calibrate(spec: &GroupSpec, tr: AlphabetTruncation) -> Result<Calibration> {
    let h0 = disjointness_height(spec, L_CHECK)?;
    let small = AlphabetTruncation {
        n_max: tr.n_max.min(JUNCTION_N),
        m_max: tr.m_max.min(JUNCTION_M),
    };
    let junction_defect = max_junction_defect(spec, &alphabet(spec.r, small), JUNCTION_DEPTH);
    let buse_max = max_buse_correction(spec, &alphabet(spec.r, tr));
    let horo_defect = words_up_to(spec.r, HORO_WORD_LEN)
        .par_iter()
        .map(|w| horo_decompose(spec, w, h0).map(|d| d.defect_per_excursion(spec)).unwrap_or(0.0))
        .reduce(|| 0.0, f64::max);
    let diam_k = compact_diameter(spec, h0);
    Ok(Calibration {
        horoball_height: h0,
        l_check: L_CHECK,
        junction_defect,
        c_junction: SAFETY * junction_defect,
        buse_max,
        c_buse: SAFETY * buse_max,
        horo_defect,
        c_horo: SAFETY * horo_defect,
        diam_k,
        c_diam: 4.0 * diam_k,
        d_min: minimal_displacement(spec),
        truncation: tr,
        junction_depth: JUNCTION_DEPTH,
    })
}

/// Largest per-junction defect over canonical words of `2..=depth` blocks in the
/// hyperbolic metric.
pub fn max_junction_defect(spec: &GroupSpec, alpha: &[Block], depth: usize) -> f64 {
    let isos: Vec<Isometry> = alpha.iter().map(|b| spec.block_isometry(b)).collect();
    let d0: Vec<f64> = isos.iter().map(|g| dist_origin(g.orbit_origin())).collect();
    let mut worst = 0.0_f64;
    visit_admissible(alpha, depth, |w| {
        if w.len() >= 2 {
            let g = w.iter().fold(Isometry::IDENTITY, |acc, &j| acc.compose(&isos[j]));
            let sum: f64 = w.iter().map(|&j| d0[j]).sum();
            worst = worst.max((sum - dist_origin(g.orbit_origin())) / (w.len() - 1) as f64);
        }
        true
    });
    worst
}

fn sample_arc_points(arcs: &[crate::hypcore::Arc], per_arc: usize) -> Vec<BoundaryPoint> {
    arcs.iter()
        .flat_map(|a| (0..per_arc).map(move |k| BoundaryPoint::new(a.at((k as f64 / (per_arc - 1) as f64).min(1.0 - 1e-12)))))
        .collect()
}

/// Largest `2(x|β⁻¹x₀)_{x₀}` over the alphabet, sampled points of `K_β` (arc
/// endpoints included) and the `|n| → ∞` limits `2(x|ξ_i)_{x₀}`.
pub fn max_buse_correction(spec: &GroupSpec, alpha: &[Block]) -> f64 {
    let mut worst = 0.0_f64;
    for b in alpha {
        let back = spec.block_isometry(b).inverse().orbit_origin();
        for x in sample_arc_points(&spec.k_arcs(b), BUSE_SAMPLES) {
            worst = worst.max(2.0 * gromov_product_interior(x, back));
        }
    }
    for i in 1..=spec.r {
        let probe = Block::ParaPower { index: i, n: 2 };
        let xi = spec.xi[i - 1];
        for x in sample_arc_points(&spec.k_arcs(&probe), BUSE_SAMPLES) {
            let gap = (x.z() - xi.z()).norm();
            worst = worst.max(-2.0 * (gap / 2.0).ln());
        }
    }
    worst
}

/// One excursion of `[x₀, γx₀]` into a translate of a fundamental horoball.
#[derive(Debug, Clone, Serialize)]
pub struct Excursion {
    pub base: f64,
    pub class: usize,
    pub entry: f64,
    pub exit: f64,
    /// Letter positions bounding the parabolic part.
    pub start: usize,
    pub end: usize,
}

/// `γ = g₁p₁⋯g_rp_rg_{r+1}` at a given height.
#[derive(Debug, Clone, Serialize)]
pub struct HoroDecomposition {
    pub height: f64,
    #[serde(skip)]
    pub g_parts: Vec<Word>,
    #[serde(skip)]
    pub p_parts: Vec<Word>,
    pub excursions: Vec<Excursion>,
}

impl HoroDecomposition {
    pub fn r(&self) -> usize {
        self.p_parts.len()
    }

    pub fn reconstruct(&self) -> Word {
        let mut v: Vec<Letter> = Vec::new();
        for (k, g) in self.g_parts.iter().enumerate() {
            v.extend(g.0.iter().copied());
            if let Some(p) = self.p_parts.get(k) {
                v.extend(p.0.iter().copied());
            }
        }
        Word(v)
    }

    /// `(Σ d₀(g_i) + Σ d₀(p_i) − d₀(γ))/r`, zero when `r = 0`.
    pub fn defect_per_excursion(&self, spec: &GroupSpec) -> f64 {
        if self.r() == 0 {
            return 0.0;
        }
        let d = |w: &Word| dist_origin(spec.word_isometry(w).orbit_origin());
        let parts: f64 = self.g_parts.iter().chain(self.p_parts.iter()).map(d).sum();
        (parts - d(&self.reconstruct())) / self.r() as f64
    }
}

/// Horospherical decomposition of a reduced word at height `h`. Candidate
/// horoballs are the translates `u_k·ℋ_B(h)` for the prefixes `u_k` of the word.
pub fn horo_decompose(spec: &GroupSpec, word: &Word, h: f64) -> Result<HoroDecomposition> {
    let anchors = anchors(spec);
    let mut prefixes = Vec::with_capacity(word.len() + 1);
    let mut u = Isometry::IDENTITY;
    prefixes.push(u);
    for &l in &word.0 {
        u = u.compose(&spec.letter_isometry(l));
        prefixes.push(u);
    }
    let target = u.orbit_origin();
    // (base, class, entry, exit, positions adjacent to the horoball)
    let mut hits: Vec<(BoundaryPoint, usize, f64, f64, Vec<usize>)> = Vec::new();
    for (k, g) in prefixes.iter().enumerate() {
        for &(b, class) in &anchors {
            let ball = Horoball::new(b, h).image(g);
            if let Some(known) = hits.iter_mut().find(|e| e.0.approx_eq(ball.base, 1e-9)) {
                known.4.push(k);
                continue;
            }
            if let Some(seg) = geodesic_horoball_intersection(DiskPoint::ORIGIN, target, &ball) {
                if seg.length() > 0.0 {
                    hits.push((ball.base, class, seg.s_entry, seg.s_exit, vec![k]));
                }
            }
        }
    }
    hits.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut g_parts = Vec::new();
    let mut p_parts = Vec::new();
    let mut excursions = Vec::new();
    let mut pos = 0;
    for (base, class, entry, exit, ks) in hits {
        // Consecutive excursions may share adjacent orbit points; the parabolic
        // part starts at the first adjacent position not used by the previous one.
        let start = ks.iter().copied().filter(|&k| k >= pos).min().ok_or(Error::CandidatesExhausted)?;
        let end = *ks.iter().max().expect("nonempty");
        g_parts.push(Word(word.0[pos..start].to_vec()));
        p_parts.push(Word(word.0[start..end].to_vec()));
        excursions.push(Excursion {
            base: base.theta(),
            class,
            entry,
            exit,
            start,
            end,
        });
        pos = end;
    }
    g_parts.push(Word(word.0[pos..].to_vec()));
    Ok(HoroDecomposition {
        height: h,
        g_parts,
        p_parts,
        excursions,
    })
}

/// One cusp of the perturbed metric.
#[derive(Debug, Clone, Serialize)]
pub struct CuspModel {
    pub index: usize,
    pub geometry: CuspGeometry,
    /// Height where the profile leaves the hyperbolic one.
    pub a: f64,
    /// Flat translation length of `p_i` on the horosphere through `x₀`.
    pub w: f64,
}

impl CuspModel {
    /// `d(x₀, p_iⁿx₀)`: the cusp geodesic between two points of the
    /// horosphere through `x₀` at flat distance `|n|·w_i`.
    pub fn distance(&self, n: i64) -> Result<f64> {
        self.geometry.parabolic_orbit_distance(0.0, n)
    }
}

/// Value of the roof function at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoofValue {
    pub value: f64,
    pub block: Block,
    pub at: f64,
    pub clamped: bool,
}

/// The metric `g_{a₀,…,a_r,b}` on the ping-pong group.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedMetric {
    pub spec: GroupSpec,
    pub calibration: Calibration,
    pub cusps: Vec<CuspModel>,
    /// `a₀`, the height of the unperturbed class `𝒫₀` (recorded only).
    pub a0: f64,
    pub b: f64,
    /// Index of the dominant cusp carrying the band.
    pub dominant: usize,
    #[serde(skip)]
    cache: Vec<Vec<f64>>,
}

impl PerturbedMetric {
    /// `profiles[i − 1]` is the full profile of cusp `i` measured from the
    /// horosphere through `x₀`; it must be hyperbolic on `[0, a_i]`.
    /// Distances of `ParaPower` blocks with `|n| ≤ cache_n` are precomputed.
    pub fn new(
        spec: GroupSpec,
        calibration: Calibration,
        profiles: Vec<Profile>,
        heights: &[f64],
        b: f64,
        dominant: usize,
        cache_n: u32,
    ) -> Result<Self> {
        let r = spec.r;
        if profiles.len() != r || heights.len() != r + 1 {
            return Err(Error::Config(format!("need {r} cusp profiles and {} heights", r + 1)));
        }
        if dominant == 0 || dominant > r {
            return Err(Error::Config(format!("dominant cusp {dominant} is not in 1..={r}")));
        }
        let h0 = calibration.horoball_height;
        if let Some((i, a)) = heights.iter().enumerate().find(|(_, &a)| a < h0 - 1e-12) {
            return Err(Error::Config(format!(
                "height a_{i} = {a} is below the horoball disjointness height {h0}"
            )));
        }
        let mut cusps = Vec::with_capacity(r);
        for (k, p) in profiles.into_iter().enumerate() {
            let a = heights[k + 1];
            let bad = (0..=64).map(|j| a * j as f64 / 64.0).find(|&t| (p.g(t) + t).abs() > 1e-12);
            if let Some(t) = bad {
                return Err(Error::Config(format!("profile of cusp {} is not hyperbolic at t = {t} < a", k + 1)));
            }
            let w = translation_length(&spec, k + 1);
            cusps.push(CuspModel {
                index: k + 1,
                geometry: CuspGeometry::new(p, 2, w)?,
                a,
                w,
            });
        }
        let cache = cusps
            .iter()
            .map(|c| {
                (1..=cache_n as i64)
                    .into_par_iter()
                    .map(|n| c.distance(n))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            calibration,
            cusps,
            a0: heights[0],
            b,
            dominant,
            cache,
        })
    }

    /// All cusps hyperbolic, heights at the disjointness threshold.
    pub fn hyperbolic(spec: GroupSpec, calibration: Calibration, cache_n: u32) -> Result<Self> {
        let r = spec.r;
        let h = vec![calibration.horoball_height; r + 1];
        Self::new(spec, calibration, vec![Profile::Hyperbolic; r], &h, 0.0, r, cache_n)
    }

    pub fn cusp(&self, i: usize) -> &CuspModel {
        &self.cusps[i - 1]
    }

    /// `d(x₀, p_iⁿx₀)`, from the cache when available.
    pub fn para_distance(&self, i: usize, n: i64) -> Result<f64> {
        let m = n.unsigned_abs() as usize;
        match self.cache[i - 1].get(m.wrapping_sub(1)) {
            Some(&d) if m > 0 => Ok(d),
            _ => self.cusp(i).distance(n),
        }
    }

    /// Per-block distance: cusp geodesic for `ParaPower`, hyperbolic for `Level1`.
    pub fn block_distance(&self, beta: &Block) -> Result<f64> {
        match beta {
            Block::ParaPower { index, n } => self.para_distance(*index, *n),
            Block::Level1(w) => Ok(dist_origin(self.spec.word_isometry(w).orbit_origin())),
        }
    }

    /// `(lower, upper)` bracket of `d_b(γ)`: upper is the sum of block distances,
    /// lower subtracts `C_junction` per junction.
    pub fn d_b(&self, gamma: &BlockWord) -> Result<(f64, f64)> {
        let upper = gamma.0.iter().map(|b| self.block_distance(b)).sum::<Result<f64>>()?;
        let k = gamma.block_length().max(1) as f64;
        Ok((upper - (k - 1.0) * self.calibration.c_junction, upper))
    }

    /// Roof from precomputed block data: `d_b` and the point `β⁻¹x₀`.
    pub fn roof_raw(&self, d_block: f64, back: DiskPoint, x: BoundaryPoint, model: RoofModel) -> (f64, bool) {
        match model {
            RoofModel::DistanceOnly => (d_block, false),
            RoofModel::BusemannCorrected => {
                let raw = d_block - 2.0 * gromov_product_interior(x, back);
                let lo = d_block - self.calibration.c_buse;
                if raw < lo {
                    (lo, true)
                } else {
                    (raw.min(d_block), raw > d_block + 1e-12)
                }
            }
        }
    }

    /// `𝔯(β, x)`; errors when `x ∉ K_β`.
    pub fn roof(&self, beta: &Block, x: BoundaryPoint, model: RoofModel) -> Result<RoofValue> {
        if !self.spec.in_k(beta, x) {
            return Err(Error::OutsideK);
        }
        let d = self.block_distance(beta)?;
        let back = self.spec.block_isometry(beta).inverse().orbit_origin();
        let (value, clamped) = self.roof_raw(d, back, x, model);
        Ok(RoofValue {
            value,
            block: beta.clone(),
            at: x.theta(),
            clamped,
        })
    }

    /// `w_{b,z}(β, x) = 1_{K_β}(x)·e^{−z𝔯(β,x)}`.
    pub fn weight(&self, beta: &Block, x: BoundaryPoint, z: Complex, model: RoofModel) -> Result<Complex> {
        match self.roof(beta, x, model) {
            Ok(r) => Ok((-z * r.value).exp()),
            Err(Error::OutsideK) => Ok(Complex::new(0.0, 0.0)),
            Err(e) => Err(e),
        }
    }

    pub fn horospherical_decomposition(&self, word: &Word, h: f64) -> Result<HoroDecomposition> {
        horo_decompose(&self.spec, word, h)
    }

    /// Tail table of cusp `i` starting at the continuous index `n_start`.
    pub fn tail(&self, i: usize, n_start: f64) -> Result<CuspTail> {
        CuspTail::build(&self.cusp(i).geometry, n_start)
    }

    /// Convergence certificate `e^{Cδ}·Σ_Γ e^{−δd₀}·Σ_{P_a} e^{−δd} < 1` for
    /// the dominant cusp group `P`, with `P_a = {p : d₀(x₀, px₀) ≥ 2a}`.
    pub fn convergence_certificate(&self, a: f64, delta: f64, n_partial: u32) -> Result<ConvergenceCertificate> {
        if !(delta > 1.0) {
            return Err(Error::InvalidArgument(format!("certificate needs δ > 1, got {delta}")));
        }
        let cusp = self.cusp(self.dominant);
        let eps = 0.5 * self.calibration.d_min;
        let gamma_sum = lattice_sum_bound(delta, self.calibration.d_min);
        let n_a = ((2.0 * a.sinh() / cusp.w).ceil() as i64).max(1);
        let n_hi = (n_partial as i64).max(n_a);
        let mut partial = 0.0;
        for n in n_a..=n_hi {
            partial += (-delta * self.para_distance(self.dominant, n)?).exp();
        }
        let tail = self.tail(self.dominant, n_hi as f64)?;
        let tail_bound = tail.upper_bound(delta);
        let c = self.calibration.c_horo;
        let parabolic_sum = tail_bound.map(|t| 2.0 * (partial + t));
        let product = parabolic_sum.map(|p| (c * delta).exp() * gamma_sum * p);
        Ok(ConvergenceCertificate {
            certified: product.is_some_and(|p| p < 1.0),
            product,
            c,
            gamma_sum_bound: gamma_sum,
            parabolic_sum_bound: parabolic_sum,
            packing_radius: eps,
            n_a,
            a,
            delta,
        })
    }

    /// Divergence certificate: `(Σ_{|l|≥2} e^{−δd_b(p^l)})·(Σ_{𝒲₁} e^{−δd_b(Q)}) > 1`
    /// from lower bounds (finite sums and an integral minorant of the tail).
    pub fn divergence_certificate(&self, delta: f64, n_partial: u32, m_max: usize) -> Result<DivergenceCertificate> {
        let mut partial = 0.0;
        for n in 2..=n_partial.max(2) as i64 {
            partial += (-delta * self.para_distance(self.dominant, n)?).exp();
        }
        let tail = self.tail(self.dominant, n_partial.max(2) as f64 + 1.0)?;
        let factor_p = 2.0 * (partial + tail.lower_bound(delta));
        let mut factor_w = 0.0;
        for m in 1..=m_max {
            for w in level1_words(self.spec.r, m) {
                factor_w += (-delta * dist_origin(self.spec.word_isometry(&w).orbit_origin())).exp();
            }
        }
        let product = factor_p * factor_w;
        Ok(DivergenceCertificate {
            certified: product > 1.0,
            product,
            parabolic_factor: factor_p,
            level1_factor: factor_w,
            delta,
            b: self.b,
        })
    }
}

/// Upper bound on `Σ_Γ e^{−δd₀(x₀,γx₀)}` from the packing bound
/// `#{d₀ ≤ R} ≤ (cosh(R+ε) − 1)/(cosh ε − 1)`, `ε = d_min/2`, and `#{d₀ < d_min} = 1`.
pub fn lattice_sum_bound(delta: f64, d_min: f64) -> f64 {
    let eps = 0.5 * d_min;
    let norm = eps.cosh() - 1.0;
    let d = d_min;
    // δ∫_d^∞ e^{−δR}(cosh(R+ε) − 1) dR in closed form.
    let tail = delta
        * (0.5 * eps.exp() * ((1.0 - delta) * d).exp() / (delta - 1.0) + 0.5 * (-eps).exp() * (-(1.0 + delta) * d).exp() / (delta + 1.0)
            - (-delta * d).exp() / delta);
    (1.0 - (-delta * d).exp()) + tail / norm
}

/// Outcome of the convergence certificate.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceCertificate {
    pub certified: bool,
    /// `None` when the parabolic tail could not be bounded.
    pub product: Option<f64>,
    pub c: f64,
    pub gamma_sum_bound: f64,
    pub parabolic_sum_bound: Option<f64>,
    pub packing_radius: f64,
    pub n_a: i64,
    pub a: f64,
    pub delta: f64,
}

/// Outcome of the divergence certificate.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceCertificate {
    pub certified: bool,
    pub product: f64,
    pub parabolic_factor: f64,
    pub level1_factor: f64,
    pub delta: f64,
    pub b: f64,
}

/// Node `(u, L, dL/du)` of a tail table, `u = ln ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailNode {
    pub u: f64,
    pub length: f64,
    pub slope: f64,
}

/// Tabulated cusp geodesics `u ↦ L(u)` for the parabolic tail
/// `Σ_{n > n_start} e^{−z d(n)} ≈ ∫_{n_start}^∞ e^{−zL(ln(n w))} dn`.
#[derive(Debug, Clone, Serialize)]
pub struct CuspTail {
    pub ln_w: f64,
    pub u0: f64,
    pub nodes: Vec<TailNode>,
    /// Samples `(u, dL/du)` past the table, used for the remainder bound.
    pub rates: Vec<(f64, f64)>,
}

const TAIL_DENSE_STEP: f64 = 0.05;
const TAIL_GROWTH: f64 = 1.05;

impl CuspTail {
    pub fn build(geom: &CuspGeometry, n_start: f64) -> Result<Self> {
        let ln_w = geom.w0.ln();
        let u0 = n_start.ln() + ln_w;
        let s0 = geom.turning_height(u0)?;
        let s_end = TAIL_S_END.min(0.75 * geom.t_max);
        let last_break = geom.profile.breakpoints().into_iter().fold(0.0, f64::max);
        let dense_end = s0.max(last_break) + 5.0;
        let mut grid = vec![s0];
        let mut s = s0;
        while s < s_end {
            s = if s < dense_end { s + TAIL_DENSE_STEP } else { s * TAIL_GROWTH };
            grid.push(s.min(s_end));
        }
        let node = |s: f64| {
            let u = geom.ln_displacement(s);
            TailNode {
                u,
                length: geom.turning_length(s),
                slope: (u + geom.profile.g(s)).exp(),
            }
        };
        let mut nodes: Vec<TailNode> = grid.par_iter().map(|&s| node(s)).collect();
        nodes[0].u = nodes[0].u.min(u0);
        let rates = (0..=16)
            .map(|k| {
                let s = s_end + (geom.t_max - s_end) * k as f64 / 16.0;
                let u = geom.ln_displacement(s);
                (u, (u + geom.profile.g(s)).exp())
            })
            .collect();
        Ok(Self { ln_w, u0, nodes, rates })
    }

    fn interval_integral(&self, k: usize, lo: f64, z: Complex) -> Complex {
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        let h = b.u - a.u;
        let lfun = |u: f64| {
            let t = (u - a.u) / h;
            let (t2, t3) = (t * t, t * t * t);
            (2.0 * t3 - 3.0 * t2 + 1.0) * a.length
                + (t3 - 2.0 * t2 + t) * h * a.slope
                + (-2.0 * t3 + 3.0 * t2) * b.length
                + (t3 - t2) * h * b.slope
        };
        let f = |u: f64| (Complex::new(u - self.ln_w, 0.0) - z * lfun(u)).exp();
        integrate(f, lo.max(a.u), b.u, 1e-300, 1e-12, 200).value
    }

    fn hermite(&self, k: usize, u: f64) -> f64 {
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        let h = b.u - a.u;
        let t = (u - a.u) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * a.length
            + (t3 - 2.0 * t2 + t) * h * a.slope
            + (-2.0 * t3 + 3.0 * t2) * b.length
            + (t3 - t2) * h * b.slope
    }

    /// `u` with `L(u) = d`, clamped to the table range `[u0, u_end]`.
    pub fn u_at(&self, d: f64) -> f64 {
        let n = self.nodes.len();
        let first = self.nodes.partition_point(|e| e.u <= self.u0).saturating_sub(1);
        let lo_len = self.hermite(first, self.u0.max(self.nodes[0].u));
        if d <= lo_len {
            return self.u0;
        }
        if d >= self.nodes[n - 1].length {
            return self.nodes[n - 1].u;
        }
        let k = self.nodes.partition_point(|e| e.length <= d).saturating_sub(1).max(first);
        let (mut lo, mut hi) = (self.nodes[k].u.max(self.u0), self.nodes[k + 1].u);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.hermite(k, mid) < d {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `∫_{u_lo}^{u_hi} L(u)^power e^{u − ln w − δL(u)} du` on the table.
    pub fn integral_between(&self, delta: f64, power: i32, u_lo: f64, u_hi: f64) -> f64 {
        let lo = u_lo.max(self.u0);
        (0..self.nodes.len() - 1)
            .filter(|&k| self.nodes[k + 1].u > lo && self.nodes[k].u < u_hi)
            .map(|k| {
                let a = lo.max(self.nodes[k].u);
                let b = u_hi.min(self.nodes[k + 1].u);
                let f = |u: f64| {
                    let l = self.hermite(k, u);
                    l.powi(power) * (u - self.ln_w - delta * l).exp()
                };
                integrate(f, a, b, 1e-300, 1e-12, 200).value
            })
            .sum()
    }

    /// `∫ L^power e^{−δL} dn` over the tabulated part with `L ≤ d_max`.
    pub fn moment(&self, delta: f64, power: i32, d_max: f64) -> f64 {
        self.integral_between(delta, power, self.u0, self.u_at(d_max))
    }

    /// Tail mass `∫ e^{−δL} dn` falling in each bin `[edges[i], edges[i+1])` of `L`.
    pub fn binned(&self, delta: f64, edges: &[f64]) -> Vec<f64> {
        let us: Vec<f64> = edges.iter().map(|&d| self.u_at(d)).collect();
        us.windows(2)
            .map(|w| {
                if w[1] > w[0] {
                    self.integral_between(delta, 0, w[0], w[1])
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn table_integral(&self, z: Complex) -> Complex {
        (0..self.nodes.len() - 1)
            .filter(|&k| self.nodes[k + 1].u > self.u0)
            .map(|k| self.interval_integral(k, self.u0, z))
            .fold(Complex::new(0.0, 0.0), |a, b| a + b)
    }

    /// Local power-law exponent `p = −u·(1 − δ L'(u))` at the end of the table.
    pub fn end_exponent(&self, delta: f64) -> f64 {
        let e = self.nodes.last().expect("nonempty table");
        -e.u * (1.0 - delta * e.slope)
    }

    /// `∫_{n_start}^∞ e^{−z d(n)} dn`, with the remainder past the table from the
    /// model `f(u) ≈ f(T)(u/T)^{−p}e^{−iβ(u−T)}`. `None` when `p ≤ 1` (divergent).
    pub fn sum(&self, z: Complex) -> Option<Complex> {
        let p = self.end_exponent(z.re);
        if !(p > 1.0 + 1e-9) {
            return None;
        }
        let e = *self.nodes.last().expect("nonempty table");
        let f_t = (Complex::new(e.u - self.ln_w, 0.0) - z * e.length).exp();
        let rem = if f_t.norm() == 0.0 {
            Complex::new(0.0, 0.0)
        } else {
            let beta = z.im * e.slope;
            let y = beta * e.u;
            let ep = if y >= 0.0 { expint_imag(p, y) } else { expint_imag(p, -y).conj() };
            f_t * e.u * Complex::new(0.0, y).exp() * ep
        };
        Some(self.table_integral(z) + rem)
    }

    /// Lower bound for real `δ`: the tabulated part only.
    pub fn lower_bound(&self, delta: f64) -> f64 {
        self.table_integral(Complex::new(delta, 0.0)).re
    }

    /// Upper bound for real `δ`: table plus `f(T)·T/(p_min − 1)` where `p_min` is the
    /// smallest sampled exponent on `[T, u(t_max)]`. `None` if `p_min ≤ 1`.
    pub fn upper_bound(&self, delta: f64) -> Option<f64> {
        let e = self.nodes.last().expect("nonempty table");
        let p_min = self
            .rates
            .iter()
            .map(|&(u, slope)| -u * (1.0 - delta * slope))
            .fold(self.end_exponent(delta), f64::min);
        if !(p_min > 1.0) {
            return None;
        }
        let f_t = (e.u - self.ln_w - delta * e.length).exp();
        Some(self.lower_bound(delta) + f_t * e.u / (p_min - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::enumerate_admissible;
    use crate::hypcore::busemann;
    use approx::assert_relative_eq;

    fn tr(n: u32, m: usize) -> AlphabetTruncation {
        AlphabetTruncation { n_max: n, m_max: m }
    }

    fn hyp_metric(n: u32, m: usize) -> PerturbedMetric {
        let spec = GroupSpec::standard();
        let cal = calibrate(&spec, tr(n, m)).unwrap();
        PerturbedMetric::hyperbolic(spec, cal, n).unwrap()
    }

    #[test]
    fn disjointness_threshold_of_standard_group() {
        // Adjacent anchors are a quarter turn apart; tangency of two horoballs of
        // Euclidean radius ρ at angle π/2 needs √2(1 − ρ) = 2ρ, i.e. e^h = 1/ρ − 1 = √2.
        let h = disjointness_height(&GroupSpec::standard(), 3).unwrap();
        assert_relative_eq!(h, 0.5 * 2f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn translation_length_matches_distance() {
        let spec = GroupSpec::standard();
        for i in 1..=2 {
            let w = translation_length(&spec, i);
            let d = dist_origin(spec.gen(i).pow(3).orbit_origin());
            assert_relative_eq!(d, 2.0 * (1.5 * w).asinh(), max_relative = 1e-12);
        }
    }

    #[test]
    fn hyperbolic_block_distance_is_exact() {
        let m = hyp_metric(6, 2);
        for b in alphabet(2, tr(6, 2)) {
            let exact = dist_origin(m.spec.block_isometry(&b).orbit_origin());
            assert_relative_eq!(m.block_distance(&b).unwrap(), exact, max_relative = 1e-9);
            assert_relative_eq!(
                m.block_distance(&b).unwrap(),
                m.block_distance(&b.inverse()).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn bracket_contains_hyperbolic_distance() {
        let m = hyp_metric(4, 2);
        let alpha = alphabet(2, tr(4, 2));
        for k in 1..=3 {
            for w in enumerate_admissible(&alpha, k) {
                let bw = BlockWord(w.iter().map(|&j| alpha[j].clone()).collect());
                let (lo, hi) = m.d_b(&bw).unwrap();
                let d = dist_origin(m.spec.blockword_isometry(&bw).orbit_origin());
                assert!(lo <= d + 1e-9 && d <= hi + 1e-9, "{lo} {d} {hi}");
                if k == 1 {
                    assert_eq!(lo, hi);
                }
            }
        }
    }

    #[test]
    fn roof_sandwich_and_limit() {
        let m = hyp_metric(8, 2);
        for b in alphabet(2, tr(8, 2)) {
            let d = m.block_distance(&b).unwrap();
            for x in sample_arc_points(&m.spec.k_arcs(&b), 17) {
                let r = m.roof(&b, x, RoofModel::BusemannCorrected).unwrap();
                assert!(r.value <= d + 1e-12 && r.value >= d - m.calibration.c_buse - 1e-12);
                assert!(!r.clamped);
            }
        }
        // Hyperbolic ParaPower roof equals the Busemann cocycle B_x(β⁻¹x₀, x₀) exactly.
        let x = m.spec.x_default(2);
        let mut prev = f64::INFINITY;
        for n in [2i64, 8, 32, 128, 512] {
            let b = Block::ParaPower { index: 2, n };
            let g = m.spec.block_isometry(&b);
            let exact = busemann(x, g.inverse().orbit_origin(), DiskPoint::ORIGIN);
            let r = m.roof(&b, x, RoofModel::BusemannCorrected).unwrap();
            let eps = (r.value - exact).abs();
            assert!(eps <= prev + 1e-9);
            prev = eps;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn weights() {
        let m = hyp_metric(4, 1);
        let b = Block::ParaPower { index: 1, n: 3 };
        let outside = BoundaryPoint::new(0.0);
        assert_eq!(
            m.weight(&b, outside, Complex::new(1.0, 0.0), RoofModel::DistanceOnly).unwrap(),
            Complex::new(0.0, 0.0)
        );
        let x = m.spec.x_default(1);
        let w_real = m.weight(&b, x, Complex::new(1.2, 0.0), RoofModel::BusemannCorrected).unwrap();
        let w_cplx = m.weight(&b, x, Complex::new(1.2, 0.7), RoofModel::BusemannCorrected).unwrap();
        assert_relative_eq!(w_cplx.norm(), w_real.re, max_relative = 1e-14);
        let d = m.block_distance(&b).unwrap();
        assert!(w_real.re > 0.0 && w_real.re <= (-1.2 * (d - m.calibration.c_buse)).exp());
    }

    #[test]
    fn decomposition_of_parabolic_power() {
        let spec = GroupSpec::standard();
        let h = disjointness_height(&spec, L_CHECK).unwrap() + 1.0;
        let w = Word(vec![Letter::new(1, 1); 40]);
        let d = horo_decompose(&spec, &w, h).unwrap();
        assert_eq!(d.r(), 1);
        assert_eq!(d.p_parts[0], w);
        assert!(d.g_parts.iter().all(|g| g.is_empty()));
        // A short word stays below a high horoball.
        let d = horo_decompose(&spec, &Word(vec![Letter::new(1, 1), Letter::new(2, 1)]), h + 2.0).unwrap();
        assert_eq!(d.r(), 0);
    }

    #[test]
    fn decomposition_reconstructs_and_is_almost_additive() {
        let spec = GroupSpec::standard();
        let cal = calibrate(&spec, tr(4, 2)).unwrap();
        let h = cal.horoball_height + 0.5;
        for len in 1..=7 {
            for w in reduced_words(2, len) {
                let d = horo_decompose(&spec, &w, h).unwrap_or_else(|e| panic!("{w}: {e}"));
                assert_eq!(d.reconstruct(), w);
                let parts: f64 = d
                    .g_parts
                    .iter()
                    .chain(&d.p_parts)
                    .map(|u| dist_origin(spec.word_isometry(u).orbit_origin()))
                    .sum();
                let total = dist_origin(spec.word_isometry(&w).orbit_origin());
                assert!(total >= parts - d.r() as f64 * cal.c_diam - 1e-9);
                for e in &d.excursions {
                    assert!(e.exit - e.entry > 0.0);
                }
            }
        }
    }

    #[test]
    fn lattice_sum_bound_dominates_partial_sums() {
        let spec = GroupSpec::standard();
        let d_min = minimal_displacement(&spec);
        for delta in [1.2, 1.5, 2.0] {
            let partial: f64 = words_up_to(2, 7)
                .iter()
                .map(|w| (-delta * dist_origin(spec.word_isometry(w).orbit_origin())).exp())
                .sum();
            assert!(lattice_sum_bound(delta, d_min) > partial);
        }
    }

    #[test]
    fn hyperbolic_tail_matches_direct_sum() {
        let m = hyp_metric(1, 1);
        let tail = m.tail(1, 40.5).unwrap();
        for z in [Complex::new(0.8, 0.0), Complex::new(1.0, 0.3), Complex::new(1.5, 2.0)] {
            let direct: Complex = (41..200_000i64)
                .map(|n| {
                    let d = 2.0 * (0.5 * n as f64 * m.cusp(1).w).asinh();
                    (-z * d).exp()
                })
                .sum();
            // Remainder past 2·10⁵ from d(n) ≈ 2 ln(n w).
            let big = 200_000.0_f64;
            let direct = direct
                + (Complex::new(m.cusp(1).w, 0.0).ln() * (-2.0 * z)).exp() * (Complex::new(big, 0.0).ln() * (1.0 - 2.0 * z)).exp()
                    / (2.0 * z - 1.0);
            let got = tail.sum(z).unwrap();
            assert!((got - direct).norm() < 2e-3 * direct.norm(), "{z}: {got} vs {direct}");
        }
        assert!(tail.sum(Complex::new(0.5, 0.0)).is_none());
        let lo = tail.lower_bound(1.2);
        let hi = tail.upper_bound(1.2).unwrap();
        assert!(lo <= hi);
    }
}
