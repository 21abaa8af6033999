use std::f64::consts::TAU;
use std::sync::LazyLock;

use cusplab::cli::num;
use cusplab::coder::{block_decomposition, is_admissible, is_canonical, AlphabetTruncation, Block, GroupSpec, Letter, Word};
use cusplab::countlab::{asymptotic_fit, BandLimited, SlowlyVaryingModel};
use cusplab::cusp::{curvature_range, tau_abeta, CuspGeometry, Pinching, Profile};
use cusplab::hypcore::{busemann, hyp_dist, BoundaryPoint, DiskPoint, Isometry};
use cusplab::metric::{calibrate, PerturbedMetric, RoofModel};
use proptest::prelude::*;

static HYPERBOLIC: LazyLock<PerturbedMetric> = LazyLock::new(|| {
    let spec = GroupSpec::standard();
    let cal = calibrate(&spec, AlphabetTruncation { n_max: 50, m_max: 6 }).unwrap();
    PerturbedMetric::hyperbolic(spec, cal, 60).unwrap()
});

fn disk_point() -> impl Strategy<Value = DiskPoint> {
    (0.0..0.95f64, 0.0..TAU).prop_map(|(r, t)| DiskPoint::from_polar(r, t).unwrap())
}

fn isometry() -> impl Strategy<Value = Isometry> {
    (disk_point(), 0.0..TAU).prop_map(|(p, t)| Isometry::translation_to(p).compose(&Isometry::rotation(t)))
}

fn letters(max_len: usize) -> impl Strategy<Value = Vec<Letter>> {
    prop::collection::vec((1usize..=2, prop::bool::ANY), 0..max_len)
        .prop_map(|v| v.into_iter().map(|(i, s)| Letter::new(i, if s { 1 } else { -1 })).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn isometries_preserve_distance(g in isometry(), p in disk_point(), q in disk_point()) {
        let d = hyp_dist(p, q);
        prop_assert!((hyp_dist(g.apply(p), g.apply(q)) - d).abs() < 1e-8 * (1.0 + d));
        let back = g.inverse().apply(g.apply(p));
        prop_assert!(hyp_dist(back, p) < 1e-8);
    }

    #[test]
    fn busemann_is_a_cocycle(t in 0.0..TAU, p in disk_point(), q in disk_point(), r in disk_point()) {
        let xi = BoundaryPoint::new(t);
        let res = busemann(xi, p, r) - busemann(xi, p, q) - busemann(xi, q, r);
        prop_assert!(res.abs() < 1e-8);
    }

    #[test]
    fn reduction_and_inverse(ls in letters(14)) {
        let w = Word::reduce(ls.clone());
        prop_assert!(w.is_reduced());
        let both = Word::reduce(w.0.iter().copied().chain(w.inverse().0.iter().copied()));
        prop_assert!(both.is_empty());
        prop_assert_eq!(Word::reduce(w.0.clone()), w);
    }

    #[test]
    fn block_decomposition_round_trips(ls in letters(14)) {
        let w = Word::reduce(ls);
        let bw = block_decomposition(&w);
        prop_assert!(is_admissible(&bw) && is_canonical(&bw));
        prop_assert_eq!(bw.to_word(), w.clone());
        let spec = GroupSpec::standard();
        prop_assert!(spec.blockword_isometry(&bw).approx_eq(&spec.word_isometry(&w), 1e-8));
    }

    #[test]
    fn exp_rate_distance_closed_form(omega in 0.5..4.0f64, ln_l in -2.0..9.0f64) {
        let geom = CuspGeometry::new(Profile::exp_rate(omega).unwrap(), 2, 1.0).unwrap();
        let l = ln_l.exp();
        let d = geom.cusp_distance(l).unwrap();
        let exact = 2.0 / omega * (omega * l / 2.0).asinh();
        prop_assert!((d - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn cusp_distance_is_increasing(ln_l in -1.0..6.0f64, step in 0.01..1.0f64) {
        let geom = CuspGeometry::new(Profile::poly_log(3.0, 0.7).unwrap(), 2, 2.0).unwrap();
        let a = geom.cusp_distance(ln_l.exp()).unwrap();
        let b = geom.cusp_distance((ln_l + step).exp()).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn roofs_lie_in_the_sandwich(n in 2i64..60, sign in prop::bool::ANY, index in 1usize..=2, f in 0.001..0.999f64) {
        let m = &*HYPERBOLIC;
        let b = Block::ParaPower { index, n: if sign { n } else { -n } };
        let d = m.block_distance(&b).unwrap();
        for arc in m.spec.k_arcs(&b) {
            let r = m.roof(&b, BoundaryPoint::new(arc.at(f)), RoofModel::BusemannCorrected).unwrap();
            prop_assert!(!r.clamped);
            prop_assert!(r.value <= d + 1e-12 && r.value >= d - m.calibration.c_buse - 1e-12);
        }
    }

    #[test]
    fn band_limited_pair_is_even_and_nonnegative(c in 0.0..3.0f64, h in 0.2..3.0f64, t in -8.0..8.0f64, u in -50.0..50.0f64) {
        let psi = BandLimited { center: c, half_width: h };
        prop_assert!(psi.psi_hat(t) >= 0.0);
        prop_assert!((psi.psi_hat(t) - psi.psi_hat(-t)).abs() < 1e-15);
        prop_assert!((psi.psi(u) - psi.psi(-u)).abs() < 1e-12);
    }

    #[test]
    fn flatness_is_at_least_one(v in prop::collection::vec(1.0..1e6f64, 5..20), delta in 0.5..2.0f64, kappa in 0.1..1.0f64) {
        let r: Vec<f64> = (0..v.len()).map(|k| 1.0 + k as f64).collect();
        let fit = asymptotic_fit(&r, &v, delta, kappa, SlowlyVaryingModel::default(), (1.0, v.len() as f64)).unwrap();
        prop_assert!(fit.flatness >= 1.0 && fit.flatness_uncompensated >= 1.0);
        prop_assert!(fit.c_hat > 0.0);
    }

    #[test]
    fn csv_numbers_round_trip(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let s = num(x);
        prop_assert_eq!(s.parse::<f64>().unwrap(), x);
        prop_assert!(!s.contains(','));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn band_profiles_respect_pinching(a in 0.5..2.0f64, b in 0.0..60.0f64) {
        let pinch = Pinching { lower: 1.0, upper: 3.2, eta: 0.5 };
        let p = tau_abeta(Profile::poly_log(3.0, 0.7).unwrap(), a, b, pinch).unwrap();
        for k in 0..=64 {
            let t = a * k as f64 / 64.0;
            prop_assert!((p.g(t) + t).abs() < 1e-12);
        }
        // Curvatures are negative: `−τ''/τ` and `−(τ'/τ)²`.
        let (lo, hi) = curvature_range(&p, a, a + b + 20.0);
        prop_assert!(-hi > (pinch.lower - pinch.eta).powi(2) - 1e-9);
        prop_assert!(-lo < (pinch.upper + pinch.eta).powi(2) + 1e-9);
    }
}
