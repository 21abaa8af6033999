//! Browser bindings: cusp distance curves, the spectral radius of the
//! hyperbolic transfer operator, and compensated parabolic tails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use cusplab::coder::{AlphabetTruncation, GroupSpec};
use cusplab::countlab::{tail_sum, SlowlyVaryingModel};
use cusplab::cusp::{CuspGeometry, Profile};
use cusplab::metric::{calibrate, PerturbedMetric, RoofModel};
use cusplab::transfer::{critical_exponent, OperatorTruncation, TransferOperator};
use wasm_bindgen::prelude::*;

/// Flat translation length of the standard group's parabolic generators.
const W_STANDARD: f64 = 2.0;

fn profile(kind: &str, omega: f64, kappa: f64) -> Result<Profile, String> {
    match kind {
        "hyperbolic" => Ok(Profile::Hyperbolic),
        "exp_rate" => Profile::exp_rate(omega).map_err(|e| e.to_string()),
        "poly_log" => Profile::poly_log(omega, kappa).map_err(|e| e.to_string()),
        other => Err(format!("unknown profile `{other}`")),
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err("need 0 < lo < hi and at least two points".into());
    }
    Ok((0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect())
}

/// `d(ℓ)` between two points at flat distance `ℓ` on the reference horosphere,
/// at `n` log-spaced `ℓ ∈ [l_min, l_max]`.
pub fn distance_curve_impl(kind: &str, omega: f64, kappa: f64, l_min: f64, l_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let geom = CuspGeometry::new(profile(kind, omega, kappa)?, 2, 1.0).map_err(|e| e.to_string())?;
    log_grid(l_min, l_max, n)?
        .into_iter()
        .map(|l| geom.cusp_distance(l).map_err(|e| e.to_string()))
        .collect()
}

/// `[δ̂, ρ(s₀), …, ρ(s_{n−1})]` for the hyperbolic standard group on a uniform `s` grid.
pub fn spectral_curve_impl(n_max: u32, m_max: usize, grid: usize, s_lo: f64, s_hi: f64, n: usize) -> Result<Vec<f64>, String> {
    let err = |e: cusplab::Error| e.to_string();
    if n < 2 || !(s_hi > s_lo) {
        return Err("need s_lo < s_hi and at least two points".into());
    }
    let spec = GroupSpec::standard();
    let cal = calibrate(&spec, AlphabetTruncation { n_max, m_max }).map_err(err)?;
    let m = PerturbedMetric::hyperbolic(spec, cal, n_max).map_err(err)?;
    let tr = OperatorTruncation {
        n_max,
        m_max,
        grid,
        roof: RoofModel::BusemannCorrected,
        closure: false,
    };
    tr.validate(2).map_err(err)?;
    let op = TransferOperator::assemble(&m, tr).map_err(err)?;
    let delta = critical_exponent(&op, 0.3, 2.0, 1e-8).map_err(err)?.delta;
    let mut out = vec![delta];
    for k in 0..n {
        let s = s_lo + (s_hi - s_lo) * k as f64 / (n - 1) as f64;
        out.push(op.spectral_radius(s).map_err(err)?);
    }
    Ok(out)
}

/// `tail(t)·t^κ` of a `poly_log` cusp over `n` log-spaced `t ∈ [t_min, t_max]`,
/// followed by the fitted `κ̂`.
pub fn tail_curve_impl(omega: f64, kappa: f64, delta: f64, t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let geom = CuspGeometry::new(profile("poly_log", omega, kappa)?, 2, W_STANDARD).map_err(|e| e.to_string())?;
    let rep = tail_sum(
        &geom,
        delta,
        kappa,
        SlowlyVaryingModel::default(),
        &log_grid(t_min, t_max, n)?,
        false,
    )
    .map_err(|e| e.to_string())?;
    let mut out: Vec<f64> = rep.rows.iter().map(|r| r.compensated).collect();
    out.push(rep.kappa_hat);
    Ok(out)
}

#[wasm_bindgen]
pub fn distance_curve(kind: &str, omega: f64, kappa: f64, l_min: f64, l_max: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    distance_curve_impl(kind, omega, kappa, l_min, l_max, n).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spectral_curve(n_max: u32, m_max: usize, grid: usize, s_lo: f64, s_hi: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    spectral_curve_impl(n_max, m_max, grid, s_lo, s_hi, n).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn tail_curve(omega: f64, kappa: f64, delta: f64, t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>, JsValue> {
    tail_curve_impl(omega, kappa, delta, t_min, t_max, n).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn library_version() -> String {
    cusplab::cli::VERSION.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperbolic_distance_is_closed_form() {
        let d = distance_curve_impl("hyperbolic", 1.0, 0.0, 0.1, 100.0, 7).unwrap();
        for (k, v) in d.iter().enumerate() {
            let l = 0.1 * 1000f64.powf(k as f64 / 6.0);
            assert!((v - 2.0 * (l / 2.0).asinh()).abs() < 1e-8 * v.max(1.0));
        }
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(distance_curve_impl("spiral", 1.0, 0.0, 0.1, 1.0, 3).is_err());
        assert!(distance_curve_impl("exp_rate", -1.0, 0.0, 0.1, 1.0, 3).is_err());
        assert!(tail_curve_impl(1.5, 0.7, 1.5, 5.0, 40.0, 4).is_err());
        assert!(spectral_curve_impl(10, 2, 32, 1.0, 0.5, 4).is_err());
    }
}
