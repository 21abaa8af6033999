//! The ping-pong group `Γ = ⟨p₁, …, p_r⟩`, reduced words and their block coding.
//!
//! A reduced word factors into maximal runs `p_{i₁}^{ℓ₁} ⋯ p_{i_m}^{ℓ_m}`. Runs with
//! `|ℓ| ≥ 2` become `ParaPower` blocks; maximal stretches of runs with `ℓ = ±1`
//! become `Level1` blocks. Consecutive blocks are admissible when the last index
//! of one differs from the first index of the next.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypcore::{ccw_offset, conformal_derivative, parabolic_from_points, Arc, BoundaryPoint, DiskPoint, Isometry, IsometryKind};

/// A generator `p_i^{±1}`; `index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Letter {
    pub index: u8,
    pub sign: i8,
}

impl Letter {
    pub fn new(index: usize, sign: i8) -> Self {
        Self { index: index as u8, sign }
    }

    pub fn inverse(self) -> Self {
        Self {
            index: self.index,
            sign: -self.sign,
        }
    }

    pub fn idx(self) -> usize {
        self.index as usize
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign > 0 {
            write!(f, "p{}", self.index)
        } else {
            write!(f, "p{}^-1", self.index)
        }
    }
}

/// A word in the generators.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn is_reduced(&self) -> bool {
        self.0.windows(2).all(|w| w[1] != w[0].inverse())
    }

    /// Free reduction.
    pub fn reduce(letters: impl IntoIterator<Item = Letter>) -> Word {
        let mut out: Vec<Letter> = Vec::new();
        for l in letters {
            if out.last() == Some(&l.inverse()) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| l.inverse()).collect())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        for (k, l) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Maximal runs `(i_j, ℓ_j)` of a reduced word; consecutive indices differ.
pub fn powers_decomposition(w: &Word) -> Vec<(usize, i64)> {
    let mut runs: Vec<(usize, i64)> = Vec::new();
    for l in &w.0 {
        match runs.last_mut() {
            Some((i, e)) if *i == l.idx() => *e += l.sign as i64,
            _ => runs.push((l.idx(), l.sign as i64)),
        }
    }
    runs
}

/// A letter of the block alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Block {
    /// `p_i^n` with `|n| ≥ 2`.
    ParaPower { index: usize, n: i64 },
    /// A word whose runs all have exponent `±1`.
    Level1(Word),
}

impl Block {
    pub fn first_index(&self) -> usize {
        match self {
            Block::ParaPower { index, .. } => *index,
            Block::Level1(w) => w.0[0].idx(),
        }
    }

    pub fn last_index(&self) -> usize {
        match self {
            Block::ParaPower { index, .. } => *index,
            Block::Level1(w) => w.0[w.0.len() - 1].idx(),
        }
    }

    pub fn is_level1(&self) -> bool {
        matches!(self, Block::Level1(_))
    }

    pub fn letters(&self) -> Vec<Letter> {
        match self {
            Block::ParaPower { index, n } => {
                let l = Letter::new(*index, n.signum() as i8);
                vec![l; n.unsigned_abs() as usize]
            }
            Block::Level1(w) => w.0.clone(),
        }
    }

    pub fn inverse(&self) -> Block {
        match self {
            Block::ParaPower { index, n } => Block::ParaPower { index: *index, n: -n },
            Block::Level1(w) => Block::Level1(w.inverse()),
        }
    }

    /// Whether the block satisfies its variant's invariant.
    pub fn is_valid(&self) -> bool {
        match self {
            Block::ParaPower { n, .. } => n.unsigned_abs() >= 2,
            Block::Level1(w) => !w.is_empty() && w.is_reduced() && powers_decomposition(w).iter().all(|r| r.1.abs() == 1),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::ParaPower { index, n } => write!(f, "p{index}^{n}"),
            Block::Level1(w) => write!(f, "[{w}]"),
        }
    }
}

/// A sequence of blocks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct BlockWord(pub Vec<Block>);

impl BlockWord {
    /// `|γ|_𝔅`.
    pub fn block_length(&self) -> usize {
        self.0.len()
    }

    /// Concatenation of the blocks, freely reduced.
    pub fn to_word(&self) -> Word {
        Word::reduce(self.0.iter().flat_map(|b| b.letters()))
    }
}

/// Splits a reduced word into blocks: runs with `|ℓ| ≥ 2` and maximal stretches of unit runs.
pub fn block_decomposition(w: &Word) -> BlockWord {
    let mut blocks = Vec::new();
    let mut stretch: Vec<Letter> = Vec::new();
    for (i, e) in powers_decomposition(w) {
        if e.abs() >= 2 {
            if !stretch.is_empty() {
                blocks.push(Block::Level1(Word(std::mem::take(&mut stretch))));
            }
            blocks.push(Block::ParaPower { index: i, n: e });
        } else {
            stretch.push(Letter::new(i, e as i8));
        }
    }
    if !stretch.is_empty() {
        blocks.push(Block::Level1(Word(stretch)));
    }
    BlockWord(blocks)
}

/// Adjacent blocks have distinct last/first indices.
pub fn is_admissible(bw: &BlockWord) -> bool {
    bw.0.windows(2).all(|p| p[0].last_index() != p[1].first_index())
}

/// Admissible and free of adjacent `Level1` blocks, i.e. the output shape of
/// [`block_decomposition`].
pub fn is_canonical(bw: &BlockWord) -> bool {
    is_admissible(bw) && bw.0.windows(2).all(|p| !(p[0].is_level1() && p[1].is_level1()))
}

/// Whether block `next` may follow block `prev` in a canonical word.
pub fn can_follow(prev: &Block, next: &Block) -> bool {
    prev.last_index() != next.first_index() && !(prev.is_level1() && next.is_level1())
}

/// The ping-pong group with its anchors and interval combinatorics.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSpec {
    pub r: usize,
    /// `ξ_i`, indexed `0..r` for `i = 1..=r`.
    pub xi: Vec<BoundaryPoint>,
    /// `η_i`, indexed `0..r` for `i = 1..=r`; `η₀ = η_r`.
    pub eta: Vec<BoundaryPoint>,
    #[serde(skip)]
    pub gens: Vec<Isometry>,
    #[serde(skip)]
    pub p0: Isometry,
    /// `I_i = [η_{i−1}, η_i)`.
    pub big: Vec<Arc>,
    /// `I'_i = [p_i⁻¹η_{i−1}, p_iη_i)`.
    pub small: Vec<Arc>,
    pub eps_class: f64,
}

/// Outcome of one ping-pong inclusion check.
#[derive(Debug, Clone, Serialize)]
pub struct PingPongCheck {
    pub name: String,
    pub holds: bool,
}

/// Parabolic class summary for reports.
#[derive(Debug, Clone, Serialize)]
pub struct ParabolicClass {
    pub name: String,
    pub fixed_point: f64,
    pub trace_sq: f64,
}

impl GroupSpec {
    /// Builds `Γ` from the angles `ξ₁, η₁, …, ξ_r, η_r` in counterclockwise order.
    pub fn build(angles: &[f64], eps_class: f64) -> Result<GroupSpec> {
        if angles.len() < 4 || !angles.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument("need 2r ≥ 4 anchor angles".into()));
        }
        let offs: Vec<f64> = angles.iter().map(|&a| ccw_offset(angles[0], a)).collect();
        if offs.windows(2).any(|w| !(w[1] > w[0] + 1e-9)) || offs.last().copied().unwrap_or(0.0) >= TAU - 1e-9 {
            return Err(Error::AnchorOrder);
        }
        let r = angles.len() / 2;
        let xi: Vec<BoundaryPoint> = (0..r).map(|i| BoundaryPoint::new(angles[2 * i])).collect();
        let eta: Vec<BoundaryPoint> = (0..r).map(|i| BoundaryPoint::new(angles[2 * i + 1])).collect();
        let prev = |i: usize| eta[(i + r - 1) % r];
        let mut gens = Vec::with_capacity(r);
        for i in 0..r {
            let p = parabolic_from_points(xi[i], prev(i), eta[i])?;
            if p.classify(eps_class) != IsometryKind::Parabolic {
                return Err(Error::NotParabolic {
                    index: i + 1,
                    trace_sq: p.trace().powi(2),
                });
            }
            gens.push(p);
        }
        let p0 = gens.iter().fold(Isometry::IDENTITY, |acc, g| g.compose(&acc));
        if p0.classify(eps_class) != IsometryKind::Parabolic {
            return Err(Error::NotParabolic {
                index: 0,
                trace_sq: p0.trace().powi(2),
            });
        }
        let big: Vec<Arc> = (0..r).map(|i| Arc::new(prev(i).theta(), eta[i].theta())).collect();
        let small: Vec<Arc> = (0..r)
            .map(|i| {
                Arc::new(
                    gens[i].inverse().apply_boundary(prev(i)).theta(),
                    gens[i].apply_boundary(eta[i]).theta(),
                )
            })
            .collect();
        let spec = GroupSpec {
            r,
            xi,
            eta,
            gens,
            p0,
            big,
            small,
            eps_class,
        };
        if let Some(bad) = spec.ping_pong_checks().into_iter().find(|c| !c.holds) {
            return Err(Error::PingPong(bad.name));
        }
        Ok(spec)
    }

    /// The standard thrice-punctured sphere anchors `0, π/2, π, 3π/2`.
    pub fn standard() -> GroupSpec {
        use std::f64::consts::PI;
        GroupSpec::build(&[0.0, PI / 2.0, PI, 1.5 * PI], 1e-8).expect("standard anchors are valid")
    }

    /// `p_i` for 1-based `i`.
    pub fn gen(&self, i: usize) -> &Isometry {
        &self.gens[i - 1]
    }

    pub fn big_arc(&self, i: usize) -> Arc {
        self.big[i - 1]
    }

    pub fn small_arc(&self, i: usize) -> Arc {
        self.small[i - 1]
    }

    /// Complement of `I_i`, the arc `[η_i, η_{i−1})`.
    pub fn complement_arc(&self, i: usize) -> Arc {
        let b = self.big_arc(i);
        Arc::new(b.hi, b.lo)
    }

    /// Default renewal point `x_j`: the midpoint of the complement of `I_j`.
    pub fn x_default(&self, j: usize) -> BoundaryPoint {
        BoundaryPoint::new(self.complement_arc(j).midpoint())
    }

    pub fn letter_isometry(&self, l: Letter) -> Isometry {
        let g = *self.gen(l.idx());
        if l.sign > 0 {
            g
        } else {
            g.inverse()
        }
    }

    pub fn word_isometry(&self, w: &Word) -> Isometry {
        w.0.iter().fold(Isometry::IDENTITY, |acc, &l| acc.compose(&self.letter_isometry(l)))
    }

    pub fn block_isometry(&self, b: &Block) -> Isometry {
        match b {
            Block::ParaPower { index, n } => self.gen(*index).pow(*n),
            Block::Level1(w) => self.word_isometry(w),
        }
    }

    pub fn blockword_isometry(&self, bw: &BlockWord) -> Isometry {
        bw.0.iter().fold(Isometry::IDENTITY, |acc, b| acc.compose(&self.block_isometry(b)))
    }

    /// Index `i` with `θ ∈ I_i`.
    pub fn big_index(&self, theta: f64) -> usize {
        (1..=self.r).find(|&i| self.big_arc(i).contains(theta)).unwrap_or(self.r)
    }

    /// The coding set `K_β` as a list of arcs.
    pub fn k_arcs(&self, b: &Block) -> Vec<Arc> {
        let l = b.last_index();
        (1..=self.r)
            .filter(|&i| i != l)
            .map(|i| if b.is_level1() { self.small_arc(i) } else { self.big_arc(i) })
            .collect()
    }

    pub fn in_k(&self, b: &Block, x: BoundaryPoint) -> bool {
        self.k_arcs(b).iter().any(|a| a.contains(x.theta()))
    }

    /// Image arcs `β·K_β`.
    pub fn j_arcs(&self, b: &Block) -> Vec<Arc> {
        let g = self.block_isometry(b);
        self.k_arcs(b)
            .iter()
            .map(|a| {
                let lo = g.apply_boundary(BoundaryPoint::new(a.lo)).theta();
                let hi = g.apply_boundary(BoundaryPoint::new(a.hi)).theta();
                Arc::new(lo, hi)
            })
            .collect()
    }

    /// Ping-pong inclusions on interval endpoints:
    /// `p_i^{±1}(∁I_i) ⊂ I_i ∖ I'_i` and `p_i^{±2}(∁I_i) ⊂ I'_i`.
    pub fn ping_pong_checks(&self) -> Vec<PingPongCheck> {
        let mut out = Vec::new();
        let tol = 1e-9;
        for i in 1..=self.r {
            let comp = self.complement_arc(i);
            let big = self.big_arc(i);
            let small = self.small_arc(i);
            let image = |g: &Isometry| {
                Arc::new(
                    g.apply_boundary(BoundaryPoint::new(comp.lo)).theta(),
                    g.apply_boundary(BoundaryPoint::new(comp.hi)).theta(),
                )
            };
            out.push(PingPongCheck {
                name: format!("I'_{i} ⊂ I_{i}"),
                holds: big.contains_arc(&small, tol),
            });
            for n in [1i64, -1] {
                let img = image(&self.gen(i).pow(n));
                let inside = big.contains_arc(&img, tol);
                // Disjoint from I'_i: the image lies in I_i and avoids the interior of I'_i.
                let mid = img.midpoint();
                let apart = inside && !small.contains(mid) && !small.contains(img.lo + tol) && !small.contains(img.hi - tol);
                out.push(PingPongCheck {
                    name: format!("p_{i}^{n}(∁I_{i}) ⊂ I_{i}∖I'_{i}"),
                    holds: apart,
                });
            }
            for n in [2i64, -2, 5, -5] {
                let img = image(&self.gen(i).pow(n));
                out.push(PingPongCheck {
                    name: format!("p_{i}^{n}(∁I_{i}) ⊂ I'_{i}"),
                    holds: small.contains_arc(&img, tol),
                });
            }
        }
        out
    }

    pub fn parabolic_classes(&self) -> Vec<ParabolicClass> {
        let mut v: Vec<ParabolicClass> = (1..=self.r)
            .map(|i| ParabolicClass {
                name: format!("P_{i}"),
                fixed_point: self.xi[i - 1].theta(),
                trace_sq: self.gen(i).trace().powi(2),
            })
            .collect();
        v.push(ParabolicClass {
            name: "P_0".into(),
            fixed_point: self.eta[self.r - 1].theta(),
            trace_sq: self.p0.trace().powi(2),
        });
        v
    }
}

/// Truncation of the infinite block alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlphabetTruncation {
    /// Largest `|n|` of a `ParaPower` block.
    pub n_max: u32,
    /// Largest length of a `Level1` block.
    pub m_max: usize,
}

/// All `Level1` words of length `m` over `r` generators, in lexicographic order.
pub fn level1_words(r: usize, m: usize) -> Vec<Word> {
    let letters: Vec<Letter> = (1..=r).flat_map(|i| [Letter::new(i, 1), Letter::new(i, -1)]).collect();
    let mut out = vec![Word(Vec::new())];
    for _ in 0..m {
        let mut next = Vec::new();
        for w in &out {
            for &l in &letters {
                if w.0.last().is_none_or(|p| p.index != l.index) {
                    let mut v = w.0.clone();
                    v.push(l);
                    next.push(Word(v));
                }
            }
        }
        out = next;
    }
    out
}

/// The truncated alphabet in its fixed order: `ParaPower` blocks by
/// (index, |n|, sign), then `Level1` blocks by (length, word).
pub fn alphabet(r: usize, tr: AlphabetTruncation) -> Vec<Block> {
    let mut v = Vec::new();
    for i in 1..=r {
        for m in 2..=tr.n_max as i64 {
            v.push(Block::ParaPower { index: i, n: m });
            v.push(Block::ParaPower { index: i, n: -m });
        }
    }
    for m in 1..=tr.m_max {
        v.extend(level1_words(r, m).into_iter().map(Block::Level1));
    }
    v
}

/// Canonical block words of exactly `k` blocks, as index sequences into `alphabet`,
/// in lexicographic order.
pub fn enumerate_admissible(alphabet: &[Block], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(alpha: &[Block], k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..alpha.len() {
            if cur.last().is_none_or(|&p| can_follow(&alpha[p], &alpha[j])) {
                cur.push(j);
                rec(alpha, k, cur, out);
                cur.pop();
            }
        }
    }
    if k > 0 {
        rec(alphabet, k, &mut cur, &mut out);
    }
    out
}

/// Depth-first visit of canonical block words up to `max_blocks` blocks. The
/// visitor receives the current prefix and returns whether to descend further.
pub fn visit_admissible<F: FnMut(&[usize]) -> bool>(alphabet: &[Block], max_blocks: usize, mut visit: F) {
    fn rec<F: FnMut(&[usize]) -> bool>(alpha: &[Block], max: usize, cur: &mut Vec<usize>, visit: &mut F) {
        for j in 0..alpha.len() {
            if cur.last().is_none_or(|&p| can_follow(&alpha[p], &alpha[j])) {
                cur.push(j);
                if visit(cur) && cur.len() < max {
                    rec(alpha, max, cur, visit);
                }
                cur.pop();
            }
        }
    }
    let mut cur = Vec::with_capacity(max_blocks);
    rec(alphabet, max_blocks, &mut cur, &mut visit);
}

/// Transfer-matrix count of canonical words of `k` blocks.
pub fn count_admissible(alphabet: &[Block], k: usize) -> u128 {
    if k == 0 {
        return 1;
    }
    let mut v = vec![1u128; alphabet.len()];
    for _ in 1..k {
        v = (0..alphabet.len())
            .map(|j| {
                (0..alphabet.len())
                    .filter(|&p| can_follow(&alphabet[p], &alphabet[j]))
                    .map(|p| v[p])
                    .sum()
            })
            .collect();
    }
    v.iter().sum()
}

/// `π(β̄) = lim β₁⋯β_n·x₀`, stopping when successive boundary projections agree within `tol`.
pub fn limit_point<F: FnMut(usize) -> Block>(spec: &GroupSpec, mut seq: F, tol: f64, n_max: usize) -> Result<BoundaryPoint> {
    let mut g = Isometry::IDENTITY;
    let mut prev: Option<BoundaryPoint> = None;
    for k in 0..n_max {
        g = g.compose(&spec.block_isometry(&seq(k)));
        let z = g.orbit_origin().z();
        let est = BoundaryPoint::from_complex(z);
        if let Some(p) = prev {
            if p.approx_eq(est, tol) && 1.0 - z.norm() < tol.sqrt() {
                return Ok(est);
            }
        }
        prev = Some(est);
    }
    Err(Error::NoConvergence(n_max))
}

/// A boundary point together with a prefix of its block code.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedPoint {
    pub point: BoundaryPoint,
    pub code: Vec<Block>,
}

/// The shift `T`: drops the first block and applies its inverse.
pub fn shift(spec: &GroupSpec, x: &CodedPoint) -> Option<CodedPoint> {
    let (first, rest) = x.code.split_first()?;
    Some(CodedPoint {
        point: spec.block_isometry(first).inverse().apply_boundary(x.point),
        code: rest.to_vec(),
    })
}

/// Contraction diagnostics: `sup_{x ∈ K_γ} |γ'(x)|₀` per block length and the
/// fitted geometric ratio.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionFit {
    pub sup_by_length: Vec<(usize, f64)>,
    pub ratio: f64,
    pub r_squared: f64,
}

/// Samples canonical words of each block length and fits `sup |γ'| ≈ C r̂^k`.
pub fn contraction_fit(
    spec: &GroupSpec,
    alphabet: &[Block],
    max_len: usize,
    words_per_len: usize,
    points_per_arc: usize,
    seed: u64,
) -> ContractionFit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let isos: Vec<Isometry> = alphabet.iter().map(|b| spec.block_isometry(b)).collect();
    let mut sup_by_length = Vec::new();
    for k in 1..=max_len {
        let mut sup = 0.0_f64;
        for _ in 0..words_per_len {
            let mut word: Vec<usize> = Vec::with_capacity(k);
            while word.len() < k {
                let j = rng.gen_range(0..alphabet.len());
                if word.last().is_none_or(|&p| can_follow(&alphabet[p], &alphabet[j])) {
                    word.push(j);
                }
            }
            let g = word.iter().fold(Isometry::IDENTITY, |acc, &j| acc.compose(&isos[j]));
            for arc in spec.k_arcs(&alphabet[*word.last().unwrap()]) {
                for s in 0..points_per_arc {
                    let x = BoundaryPoint::new(arc.at((s as f64 + 0.5) / points_per_arc as f64));
                    sup = sup.max(conformal_derivative(&g, x, 1.0));
                }
            }
        }
        sup_by_length.push((k, sup));
    }
    let pts: Vec<(f64, f64)> = sup_by_length.iter().map(|&(k, s)| (k as f64, s.ln())).collect();
    let (slope, _, r2) = crate::numerics::linear_fit(&pts);
    ContractionFit {
        sup_by_length,
        ratio: slope.exp(),
        r_squared: r2,
    }
}

/// All reduced words of length exactly `len` over `r` generators.
pub fn reduced_words(r: usize, len: usize) -> Vec<Word> {
    let letters: Vec<Letter> = (1..=r).flat_map(|i| [Letter::new(i, 1), Letter::new(i, -1)]).collect();
    let mut out = vec![Word(Vec::new())];
    for _ in 0..len {
        let mut next = Vec::with_capacity(out.len() * (2 * r - 1));
        for w in &out {
            for &l in &letters {
                if w.0.last().is_none_or(|p| *p != l.inverse()) {
                    let mut v = w.0.clone();
                    v.push(l);
                    next.push(Word(v));
                }
            }
        }
        out = next;
    }
    out
}

/// Distinctness of a set of boundary points at scale `tol`.
pub fn pairwise_separated(points: &[BoundaryPoint], tol: f64) -> bool {
    let mut th: Vec<f64> = points.iter().map(|p| p.theta()).collect();
    th.sort_by(f64::total_cmp);
    let wrap = th.len() > 1 && (th[0] + TAU - th[th.len() - 1]) <= tol;
    !wrap && th.windows(2).all(|w| w[1] - w[0] > tol)
}

/// Whether every block word in the set is emitted once.
pub fn no_duplicates(words: &[Vec<usize>]) -> bool {
    let mut seen = HashSet::with_capacity(words.len());
    words.iter().all(|w| seen.insert(w.clone()))
}

/// Basepoint orbit point of a block word.
pub fn orbit_point(spec: &GroupSpec, bw: &BlockWord) -> DiskPoint {
    spec.blockword_isometry(bw).orbit_origin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypcore::hyp_dist;
    use std::f64::consts::PI;

    fn w(spec: &[(usize, i8)]) -> Word {
        Word(spec.iter().map(|&(i, s)| Letter::new(i, s)).collect())
    }

    #[test]
    fn standard_group_is_valid() {
        let g = GroupSpec::standard();
        assert_eq!(g.parabolic_classes().len(), 3);
        assert!(g.ping_pong_checks().iter().all(|c| c.holds));
        let p1 = g.gen(1);
        let img = p1.apply_boundary(BoundaryPoint::new(1.5 * PI));
        assert!(img.approx_eq(BoundaryPoint::new(0.5 * PI), 1e-12));
        // p₀ = p₂p₁ fixes η₂.
        let fixed = g.p0.apply_boundary(g.eta[1]);
        assert!(fixed.approx_eq(g.eta[1], 1e-9));
    }

    #[test]
    fn anchors_out_of_order_are_rejected() {
        assert!(matches!(
            GroupSpec::build(&[0.0, PI, PI / 2.0, 1.5 * PI], 1e-8),
            Err(Error::AnchorOrder)
        ));
    }

    #[test]
    fn powers_examples() {
        assert_eq!(powers_decomposition(&w(&[(1, 1), (1, 1), (2, -1)])), vec![(1, 2), (2, -1)]);
        assert!(powers_decomposition(&Word::default()).is_empty());
        assert_eq!(
            powers_decomposition(&w(&[(1, 1), (2, 1), (1, 1), (2, 1)])),
            vec![(1, 1), (2, 1), (1, 1), (2, 1)]
        );
    }

    #[test]
    fn block_examples() {
        let bw = block_decomposition(&w(&[(1, 1), (2, 1), (2, 1), (2, 1), (1, -1)]));
        assert_eq!(
            bw.0,
            vec![
                Block::Level1(w(&[(1, 1)])),
                Block::ParaPower { index: 2, n: 3 },
                Block::Level1(w(&[(1, -1)])),
            ]
        );
        assert_eq!(bw.block_length(), 3);
        let bw = block_decomposition(&w(&[(1, 1), (2, 1), (1, 1), (2, 1)]));
        assert_eq!(bw.block_length(), 1);
        let bw = block_decomposition(&w(&[(1, 1); 5]));
        assert_eq!(bw.0, vec![Block::ParaPower { index: 1, n: 5 }]);
    }

    #[test]
    fn admissibility_examples() {
        let a = BlockWord(vec![Block::ParaPower { index: 1, n: 2 }, Block::ParaPower { index: 1, n: 3 }]);
        assert!(!is_admissible(&a));
        let b = BlockWord(vec![Block::ParaPower { index: 1, n: 2 }, Block::ParaPower { index: 2, n: 3 }]);
        assert!(is_admissible(&b));
    }

    #[test]
    fn round_trip_small_words() {
        for len in 0..=7 {
            for word in reduced_words(2, len) {
                let bw = block_decomposition(&word);
                assert_eq!(bw.to_word(), word);
                assert!(is_canonical(&bw));
                assert!(bw.0.iter().all(|b| b.is_valid()));
            }
        }
    }

    #[test]
    fn enumeration_examples() {
        let alpha = alphabet(2, AlphabetTruncation { n_max: 2, m_max: 1 });
        let k1 = enumerate_admissible(&alpha, 1);
        assert_eq!(k1.len(), 8);
        for k in 2..=4 {
            let words = enumerate_admissible(&alpha, k);
            assert_eq!(words.len() as u128, count_admissible(&alpha, k));
            assert!(no_duplicates(&words));
        }
        let alpha = alphabet(2, AlphabetTruncation { n_max: 4, m_max: 3 });
        let words = enumerate_admissible(&alpha, 3);
        assert_eq!(words.len() as u128, count_admissible(&alpha, 3));
        // Distinct canonical words give distinct group elements.
        let mut seen = HashSet::new();
        for wd in &words {
            let bw = BlockWord(wd.iter().map(|&j| alpha[j].clone()).collect());
            assert!(seen.insert(bw.to_word()));
        }
    }

    #[test]
    fn k_sets_follow_the_bullets() {
        let g = GroupSpec::standard();
        let k = g.k_arcs(&Block::ParaPower { index: 2, n: 3 });
        assert_eq!(k, vec![g.big_arc(1)]);
        let k = g.k_arcs(&Block::Level1(w(&[(2, 1), (1, 1)])));
        assert_eq!(k, vec![g.small_arc(2)]);
    }

    #[test]
    fn blocks_map_k_into_j() {
        let g = GroupSpec::standard();
        for b in alphabet(2, AlphabetTruncation { n_max: 6, m_max: 3 }) {
            let iso = g.block_isometry(&b);
            let first = b.first_index();
            let target = if b.is_level1() { g.big_arc(first) } else { g.small_arc(first) };
            for arc in g.k_arcs(&b) {
                for s in 0..50 {
                    let x = BoundaryPoint::new(arc.at(s as f64 / 50.0));
                    assert!(
                        target.contains(iso.apply_boundary(x).theta()) || {
                            let y = iso.apply_boundary(x).theta();
                            crate::hypcore::angle_gap(y, target.lo).min(crate::hypcore::angle_gap(y, target.hi)) < 1e-9
                        }
                    );
                    if b.is_level1() {
                        assert!(
                            !g.small_arc(first).contains(iso.apply_boundary(x).theta()) || {
                                let y = iso.apply_boundary(x).theta();
                                let s = g.small_arc(first);
                                crate::hypcore::angle_gap(y, s.lo).min(crate::hypcore::angle_gap(y, s.hi)) < 1e-9
                            }
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn limit_points() {
        let g = GroupSpec::standard();
        let b = Block::ParaPower { index: 1, n: 2 };
        // Parabolic orbits approach ξ₁ only at rate 1/k.
        let x = limit_point(&g, |_| b.clone(), 1e-8, 100_000).unwrap();
        assert!(x.approx_eq(g.xi[0], 1e-3));
        // Equivariance: π(γ ∗ β̄) = γ·π(β̄).
        let tail = |k: usize| {
            if k.is_multiple_of(2) {
                Block::ParaPower { index: 2, n: 2 }
            } else {
                Block::ParaPower { index: 1, n: -3 }
            }
        };
        let gamma = Block::ParaPower { index: 1, n: 4 };
        let y = limit_point(&g, tail, 1e-12, 200).unwrap();
        let z = limit_point(&g, |k| if k == 0 { gamma.clone() } else { tail(k - 1) }, 1e-12, 200).unwrap();
        assert!(g.block_isometry(&gamma).apply_boundary(y).approx_eq(z, 1e-9));
    }

    #[test]
    fn limit_point_is_injective_at_scale() {
        let g = GroupSpec::standard();
        let alpha = alphabet(2, AlphabetTruncation { n_max: 3, m_max: 1 });
        let words = enumerate_admissible(&alpha, 3);
        let pts: Vec<BoundaryPoint> = words
            .iter()
            .map(|wd| {
                let seq = |k: usize| {
                    if k < 3 {
                        alpha[wd[k]].clone()
                    } else {
                        // Continue with an admissible periodic tail.
                        let last = alpha[wd[2]].last_index();
                        let i = if (k - 3).is_multiple_of(2) { 3 - last } else { last };
                        Block::ParaPower { index: i, n: 2 }
                    }
                };
                limit_point(&g, seq, 1e-13, 400).unwrap()
            })
            .collect();
        assert!(pairwise_separated(&pts, 1e-10));
    }

    #[test]
    fn shift_inverts_the_first_block() {
        let g = GroupSpec::standard();
        let b = Block::ParaPower { index: 1, n: 2 };
        let x = limit_point(&g, |_| b.clone(), 1e-7, 1_000_000).unwrap();
        let cp = CodedPoint {
            point: x,
            code: vec![b.clone(), b.clone()],
        };
        let t = shift(&g, &cp).unwrap();
        assert!(t.point.approx_eq(x, 1e-6));
        let beta = Block::Level1(w(&[(2, 1)]));
        let y = BoundaryPoint::new(g.small_arc(1).midpoint());
        assert!(g.in_k(&beta, y));
        let img = g.block_isometry(&beta).apply_boundary(y);
        let back = shift(
            &g,
            &CodedPoint {
                point: img,
                code: vec![beta],
            },
        )
        .unwrap();
        assert!(back.point.approx_eq(y, 1e-12));
    }

    #[test]
    fn contraction_is_geometric() {
        let g = GroupSpec::standard();
        let alpha = alphabet(2, AlphabetTruncation { n_max: 5, m_max: 2 });
        let fit = contraction_fit(&g, &alpha, 6, 200, 8, 7);
        assert!(fit.ratio < 1.0, "ratio {}", fit.ratio);
    }

    #[test]
    fn level1_distance_is_positive() {
        let g = GroupSpec::standard();
        let d = hyp_dist(DiskPoint::ORIGIN, g.gen(1).orbit_origin());
        assert!((d - 2.0 * 1.0_f64.asinh()).abs() < 1e-12);
    }
}
