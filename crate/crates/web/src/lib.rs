//! Browser bindings: point densities, codebooks, and the distortion-vs-n curve
//! for n iid uniform sources.

use std::str::FromStr;

use dfsq::design::{design, DesignProblem, DesignResult};
use dfsq::distortion::simulate;
use dfsq::functions::from_name;
use dfsq::rate::resolution_for_rate;
use dfsq::{Regime, Result, SourceModel};
use wasm_bindgen::prelude::*;

fn design_for(function: &str, n: usize, regime: &str, rbar: f64) -> Result<(DesignProblem, DesignResult)> {
    let regime = Regime::from_str(regime)?;
    let g = from_name(function, Some(n), &[])?;
    let problem = DesignProblem::new(SourceModel::uniform(n)?, g, regime, rbar * n as f64);
    let d = design(&problem)?;
    Ok((problem, d))
}

/// `λ_var` at `points` equally spaced midpoints of `[0, 1]`.
pub fn density_values(function: &str, n: usize, regime: &str, var: usize, points: usize) -> Result<Vec<f64>> {
    let (_, d) = design_for(function, n, regime, 8.0)?;
    let lambda = d
        .densities
        .get(var)
        .ok_or_else(|| dfsq::Error::Config(format!("variable {var} out of range")))?;
    Ok((0..points).map(|i| lambda.eval((i as f64 + 0.5) / points as f64)).collect())
}

/// Cell boundaries of variable `var` at `rbar` bits per variable.
pub fn codebook_boundaries(function: &str, n: usize, regime: &str, rbar: f64, var: usize) -> Result<Vec<f64>> {
    let (p, d) = design_for(function, n, regime, rbar)?;
    let s = resolution_for_rate(p.regime, &d.densities, &p.source, &d.alpha, p.total_rate)?;
    let dq = d.quantizer(s.k)?;
    let q = dq.parts().get(var).ok_or_else(|| dfsq::Error::Config(format!("variable {var} out of range")))?;
    let mut edges = vec![0.0];
    edges.extend((0..q.levels()).map(|i| q.regions(i).last().map_or(1.0, |r| r.1)));
    Ok(edges)
}

/// `12 D^HR 2^{2R̄}` for `n = 1..=n_max`; NaN where the function is undefined.
pub fn normalized_curve(function: &str, regime: &str, n_max: usize) -> Vec<f64> {
    (1..=n_max)
        .map(|n| match design_for(function, n, regime, 8.0) {
            Ok((p, d)) => 12.0 * d.distortion_at(p.total_rate) * (2.0 * p.total_rate / n as f64).exp2(),
            Err(_) => f64::NAN,
        })
        .collect()
}

/// `[D^HR, D_emp, stderr]` from a Monte Carlo run.
pub fn simulated(function: &str, n: usize, regime: &str, rbar: f64, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let (p, d) = design_for(function, n, regime, rbar)?;
    let s = resolution_for_rate(p.regime, &d.densities, &p.source, &d.alpha, p.total_rate)?;
    let dq = d.quantizer(s.k)?;
    let emp = simulate(&dq, &p.source, p.function.as_ref(), samples, seed)?;
    Ok(vec![d.distortion_at(s.rate), emp.mean(), emp.stderr()])
}

fn js(e: dfsq::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn density(function: &str, n: usize, regime: &str, var: usize, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    density_values(function, n, regime, var, points).map_err(js)
}

#[wasm_bindgen]
pub fn codebook(function: &str, n: usize, regime: &str, rbar: f64, var: usize) -> std::result::Result<Vec<f64>, JsError> {
    codebook_boundaries(function, n, regime, rbar, var).map_err(js)
}

#[wasm_bindgen]
pub fn curve(function: &str, regime: &str, n_max: usize) -> Vec<f64> {
    normalized_curve(function, regime, n_max)
}

#[wasm_bindgen]
pub fn simulate_point(
    function: &str,
    n: usize,
    regime: &str,
    rbar: f64,
    samples: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    simulated(function, n, regime, rbar, samples, seed).map_err(js)
}
