//! Randomized property checks of the theory's inequalities and optimality
//! claims. Each suite returns one [`CheckResult`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{allocate, fixed_rate_density, variable_rate_density};
use crate::distortion::{cell_variance, cell_variance_bounds};
use crate::error::Result;
use crate::functions::{from_name, sensitivity_profile, FunctionModel, ProfileOptions, SensitivityProfile};
use crate::numeric::{integrate_split, merge_breaks};
use crate::sources::{Marginal, SourceModel};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, cases: usize, failures: Vec<String>) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            format!("{cases} cases, no violations")
        } else {
            format!("{} of {cases} violated; first: {}", failures.len(), failures[0])
        };
        Self { name: name.into(), passed, detail }
    }
}

fn rng(seed: u64, suite: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ suite.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// `‖·‖_{1/3}` of a step function with equal-width steps on `[0, 1]`.
fn step_norm_third(v: &[f64]) -> f64 {
    (v.iter().map(|a| a.cbrt()).sum::<f64>() / v.len() as f64).powi(3)
}

/// `‖x + y‖_{1/3} <= 4(‖x‖_{1/3} + ‖y‖_{1/3})` for random nonnegative step
/// functions, including nearly disjoint supports where the constant is tight.
pub fn quasi_triangle(cases: usize, seed: u64) -> CheckResult {
    const CELLS: usize = 64;
    let mut r = rng(seed, 1);
    let norm = |v: &[f64]| step_norm_third(v);
    let mut failures = Vec::new();
    for case in 0..cases {
        let draw = |r: &mut ChaCha8Rng| -> Vec<f64> {
            let density = r.random_range(0.05..1.0);
            (0..CELLS)
                .map(|_| if r.random_bool(density) { 10f64.powf(r.random_range(-3.0..3.0)) } else { 0.0 })
                .collect()
        };
        let x = draw(&mut r);
        let mut y = draw(&mut r);
        if case % 4 == 0 {
            // Disjoint supports with matching norms approach equality.
            y = x.iter().rev().copied().collect();
            for (i, v) in y.iter_mut().enumerate() {
                if x[i] > 0.0 {
                    *v = 0.0;
                }
            }
        }
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (lhs, rhs) = (norm(&sum), 4.0 * (norm(&x) + norm(&y)));
        if lhs > rhs * (1.0 + 1e-12) {
            failures.push(format!("case {case}: {lhs} > {rhs}"));
        }
    }
    CheckResult::new("quasi-triangle inequality", cases, failures)
}

/// `var(aX) <= var(g(X)) <= var(bX)` for `g(x) = c₁x + c₂x^p` on random
/// subintervals under random power densities.
pub fn one_dimensional_variance(cases: usize, seed: u64) -> CheckResult {
    let mut r = rng(seed, 2);
    let mut failures = Vec::new();
    for case in 0..cases {
        let (c1, c2) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        let p = r.random_range(1.5..3.0);
        let k = r.random_range(0.0..3.0);
        let lo = r.random_range(0.0..0.9);
        let hi = r.random_range(lo + 0.01..1.0);
        let f = |x: f64| x.powf(k);
        let g = |x: f64| c1 * x + c2 * x.powf(p);
        let dg = |x: f64| c1 + c2 * p * x.powf(p - 1.0);
        let mass = integrate_split(f, lo, hi, &[]);
        let mean = |h: &dyn Fn(f64) -> f64| integrate_split(|x| h(x) * f(x), lo, hi, &[]) / mass;
        let var = |h: &dyn Fn(f64) -> f64| {
            let m = mean(h);
            mean(&|x| (h(x) - m).powi(2))
        };
        // g' is monotone, so its extremes sit at the ends.
        let (d0, d1) = (dg(lo), dg(hi));
        let b = d0.abs().max(d1.abs());
        let a = if d0.signum() != d1.signum() { 0.0 } else { d0.abs().min(d1.abs()) };
        let vx = var(&|x| x);
        let vg = var(&g);
        let tol = 1e-10 * (b * b * vx).max(1e-300);
        if vg > b * b * vx + tol || vg < a * a * vx - tol {
            failures.push(format!("case {case}: {} <= {vg} <= {} fails", a * a * vx, b * b * vx));
        }
    }
    CheckResult::new("one-dimensional variance bounds", cases, failures)
}

/// Lower and upper envelopes of the variance of `g` on random boxes.
pub fn cell_variance_envelopes(cases: usize, seed: u64) -> CheckResult {
    let mut r = rng(seed, 3);
    let names: [(&str, usize); 6] =
        [("linear", 2), ("square", 1), ("max", 2), ("sep_parabola", 2), ("median", 3), ("max", 3)];
    let mut failures = Vec::new();
    for case in 0..cases {
        let (name, n) = names[r.random_range(0..names.len())];
        let params: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let g = match from_name(name, Some(n), &params) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let marginal = if r.random_bool(0.5) {
            Marginal::Uniform
        } else {
            Marginal::Power { k: r.random_range(0.0..2.0) }
        };
        let source = SourceModel::iid(n, marginal).expect("valid source");
        let cell: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let w = 10f64.powf(r.random_range(-2.5..-0.5));
                let a = r.random_range(0.0..1.0 - w);
                (a, a + w)
            })
            .collect();
        let bounds = match cell_variance_bounds(g.as_ref(), &source, &cell) {
            Ok(b) => b,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let v = cell_variance(g.as_ref(), &source, &cell);
        let tol = 1e-9 * bounds.upper.max(1e-300);
        if v > bounds.upper + tol || v < bounds.lower - tol {
            failures.push(format!("case {case} ({name}, {cell:?}): {} <= {v} <= {}", bounds.lower, bounds.upper));
        }
    }
    CheckResult::new("cell variance envelopes", cases, failures)
}

/// Minimize `Σ c_j 2^{-2R_j}` over a shrinking grid of rate vectors.
fn grid_minimum(c: &[f64], rbar: f64) -> f64 {
    let n = c.len();
    let total = rbar * n as f64;
    let eval = |free: &[f64]| {
        let last = total - free.iter().sum::<f64>();
        free.iter().chain([&last]).zip(c).map(|(r, v)| v * (-2.0 * r).exp2()).sum::<f64>()
    };
    if n == 1 {
        return eval(&[]);
    }
    let dims = n - 1;
    let mut center = vec![rbar; dims];
    let (mut half, mut steps) = (8.0f64, 64usize);
    let mut best = eval(&center);
    for _ in 0..12 {
        let h = 2.0 * half / steps as f64;
        let origin = center.clone();
        let mut point = vec![0.0; dims];
        for idx in 0..(steps + 1).pow(dims as u32) {
            let mut t = idx;
            for d in 0..dims {
                point[d] = origin[d] - half + h * (t % (steps + 1)) as f64;
                t /= steps + 1;
            }
            let v = eval(&point);
            if v < best {
                best = v;
                center.copy_from_slice(&point);
            }
        }
        half = 2.0 * h;
        steps = if dims == 3 { 20 } else { 40 };
    }
    best
}

/// The closed-form allocation matches a brute-force grid minimum.
pub fn allocation_optimality(cases: usize, seed: u64) -> CheckResult {
    let mut r = rng(seed, 4);
    let mut failures = Vec::new();
    for case in 0..cases {
        let n = 1 + case % 4;
        let c: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
        let rbar = r.random_range(1.0..6.0);
        let a = match allocate(&c, rbar) {
            Ok(a) => a,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let grid = grid_minimum(&c, rbar);
        if (a.distortion - grid).abs() > 1e-6 * grid || a.distortion > grid * (1.0 + 1e-12) {
            failures.push(format!("case {case}: c = {c:?}, closed form {} vs grid {grid}", a.distortion));
        }
    }
    CheckResult::new("allocation against grid search", cases, failures)
}

/// `E[(γ/λ)²]` and `E[log₂ λ]` under `f`.
fn density_terms(gamma: &dyn Fn(f64) -> f64, lambda: &dyn Fn(f64) -> f64, m: &Marginal, breaks: &[f64]) -> (f64, f64) {
    let b = merge_breaks(&[breaks, &m.breaks()]);
    let msr = m.expect(
        |x| {
            let g = gamma(x);
            if g == 0.0 {
                0.0
            } else {
                (g / lambda(x)).powi(2)
            }
        },
        &b,
    );
    (msr, m.expect(|x| lambda(x).log2(), &b))
}

fn perturbation_cases(seed: u64) -> Result<Vec<(String, SensitivityProfile, Marginal)>> {
    let mut out = Vec::new();
    for (name, n, marginal) in [
        ("square", 1, Marginal::Uniform),
        ("max", 2, Marginal::Uniform),
        ("median", 3, Marginal::Uniform),
        ("identity", 1, Marginal::Power { k: 2.0 }),
    ] {
        let g: std::sync::Arc<dyn FunctionModel> = from_name(name, Some(n), &[])?;
        let source = SourceModel::iid(n, marginal.clone())?;
        let opts = ProfileOptions { seed, ..ProfileOptions::default() };
        out.push((format!("{name} n={n}"), sensitivity_profile(g.as_ref(), &source, 0, opts)?, marginal));
    }
    Ok(out)
}

/// No random perturbation of the optimal density lowers the distortion
/// constant. Fixed rate minimizes `E[(γ/λ)²]`; variable rate minimizes
/// `E[(γ/λ)²] 2^{2E[log λ]}`.
pub fn density_optimality(perturbations: usize, seed: u64) -> Result<Vec<CheckResult>> {
    const CELLS: usize = 16;
    let steps: Vec<f64> = (1..CELLS).map(|i| i as f64 / CELLS as f64).collect();
    let mut r = rng(seed, 5);
    let cases = perturbation_cases(seed)?;
    let mut fixed_failures = Vec::new();
    let mut variable_failures = Vec::new();
    for (label, profile, marginal) in &cases {
        let gamma = |x: f64| profile.eval(x);
        for (fixed, failures) in [(true, &mut fixed_failures), (false, &mut variable_failures)] {
            let density = if fixed {
                fixed_rate_density(profile, marginal)?
            } else {
                variable_rate_density(profile, marginal)?
            };
            let breaks = merge_breaks(&[density.breaks(), &steps]);
            let objective = |terms: (f64, f64)| if fixed { terms.0 } else { terms.0 * (2.0 * terms.1).exp2() };
            let best = objective(density_terms(&gamma, &|x| density.eval(x), marginal, &breaks));
            for t in 0..perturbations {
                let eps = r.random_range(0.01..0.5);
                let u: Vec<f64> = (0..CELLS).map(|_| r.random_range(0.0..1.0)).collect();
                let mass = u.iter().sum::<f64>() / CELLS as f64;
                let lambda = |x: f64| {
                    (density.eval(x) + eps * u[((x * CELLS as f64) as usize).min(CELLS - 1)]) / (1.0 + eps * mass)
                };
                let v = objective(density_terms(&gamma, &lambda, marginal, &breaks));
                if v < best * (1.0 - 1e-10) {
                    failures.push(format!("{label}, perturbation {t}: {v} < {best}"));
                }
            }
        }
    }
    let total = perturbations * cases.len();
    Ok(vec![
        CheckResult::new("fixed-rate density optimality", total, fixed_failures),
        CheckResult::new("variable-rate density optimality", total, variable_failures),
    ])
}

/// Every suite with the default case counts.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        quasi_triangle(100, seed),
        one_dimensional_variance(100, seed),
        cell_variance_envelopes(100, seed),
        allocation_optimality(40, seed),
    ];
    out.extend(density_optimality(20, seed)?);
    Ok(out)
}
