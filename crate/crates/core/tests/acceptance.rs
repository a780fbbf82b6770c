//! Acceptance criteria 1–10. Runs without the libtest harness so that the
//! one-line verdicts always reach the terminal.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use dfsq::chatting::{
    fixed_rate_chat_constant, simulate_chat, variable_rate_chat_constant, variable_rate_chat_constant_stated,
    ChatComparison, ChatScenario,
};
use dfsq::design::design_ordinary;
use dfsq::distortion::simulate;
use dfsq::dontcare::{detect, simulate_dontcare, DontCareRun};
use dfsq::equivalence::{build_binning_compander, compander_sweep, distortion_floor_demo, Pairing, SweepCompander};
use dfsq::functions::{
    sensitivity_profile, Linear, Max, Median, MinClip, ProfileOptions, SepParabola, SlopeGrid, Square, ThresholdEvent,
};
use dfsq::numeric::fit_log2_line;
use dfsq::rate::{hr_resolution_for_rate, output_entropy, rate_report, resolution_for_rate};
use dfsq::report::codebook_table;
use dfsq::verify::run_all;
use dfsq::{
    design, Compander, CompandingQuantizer, DesignProblem, DistributedQuantizer, FunctionModel, Marginal, PointDensity,
    Regime, Result, ScalarQuantizer, SourceModel,
};
use statrs::function::beta::beta;
use statrs::function::factorial::binomial;

const SAMPLES: usize = 1 << 20;
const SEED: u64 = 0x0dfc_5eed;

/// Criteria whose stated targets rest on the inflated variable-rate
/// constants. They are run and reported like the rest, and are expected to
/// fail; if one starts passing the run fails so that this list is revisited.
const KNOWN_DEVIATIONS: &[usize] = &[3, 4, 6];

struct Verdict {
    passed: bool,
    detail: String,
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

/// Successive ratios approach 1, up to three combined standard errors.
fn toward_one(points: &[(f64, f64)]) -> bool {
    points.windows(2).all(|w| (w[1].0 - 1.0).abs() <= (w[0].0 - 1.0).abs() + 3.0 * (w[0].1 + w[1].1))
}

/// Midpoint rule with `n` nodes, enough for the smooth or log-singular
/// integrands below.
fn midpoint(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
}

struct Run {
    rate: f64,
    d: f64,
    se: f64,
}

impl Run {
    /// `D 2^{2R/n}`, distortion with the rate scaled out.
    fn scaled(&self, n: usize) -> (f64, f64) {
        let s = (2.0 * self.rate / n as f64).exp2();
        (self.d * s, self.se * s)
    }
}

fn simulate_problem(p: &DesignProblem, ordinary: bool, seed: u64) -> Result<Run> {
    let d = if ordinary { design_ordinary(p)? } else { design(p)? };
    let (k, rate) = match p.regime {
        Regime::Fixed => (p.total_rate.exp2().floor(), p.total_rate),
        _ => {
            let s = resolution_for_rate(p.regime, &d.densities, &p.source, &d.alpha, p.total_rate)?;
            (s.k, s.rate)
        }
    };
    let dq = d.quantizer(k)?;
    let emp = simulate(&dq, &p.source, p.function.as_ref(), SAMPLES, seed)?;
    Ok(Run { rate, d: emp.mean(), se: emp.stderr() })
}

fn criterion_1() -> Result<Verdict> {
    let start = Instant::now();
    let src = SourceModel::uniform(1)?;
    let g: Arc<dyn FunctionModel> = Arc::new(Square);
    // γ(x) = 2x under a uniform source.
    let oracle = [
        midpoint(|x| 4.0 * x * x, 1 << 20) / 12.0,
        midpoint(|x| (4.0 * x * x).cbrt(), 1 << 20).powi(3) / 12.0,
        (2.0 * midpoint(|x| (2.0 * x).log2(), 1 << 20)).exp2() / 12.0,
    ];
    let stated = [1.0 / 9.0, 9.0 / 125.0, (-2.0f64).exp() / 3.0];
    let mut ok = oracle.iter().zip(&stated).all(|(o, s)| within(*o, *s, 1e-5));
    let cases = [("ordinary", Regime::Fixed, true), ("fixed", Regime::Fixed, false), ("variable", Regime::Variable, false)];
    let mut detail = Vec::new();
    for ((label, regime, ordinary), c) in cases.into_iter().zip(stated) {
        let mut trail = Vec::new();
        for r in [8.0, 9.0, 10.0] {
            let p = DesignProblem::new(src.clone(), g.clone(), regime, r);
            let run = simulate_problem(&p, ordinary, SEED)?;
            let (d, se) = run.scaled(1);
            trail.push((d / c, se / c));
        }
        let last = trail[2].0;
        ok &= (0.9..=1.1).contains(&last) && toward_one(&trail);
        detail.push(format!("{label} {last:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    Ok(Verdict { passed: ok, detail: format!("D/D_HR at R=10: {}; {secs:.1}s", detail.join(", ")) })
}

fn criterion_2() -> Result<Verdict> {
    let src = SourceModel::independent(vec![Marginal::power(2.0)?])?;
    let p = DesignProblem::new(src, Arc::new(Square), Regime::Fixed, 2.0);
    let d = design(&p)?;
    let dq = d.quantizer(4.0)?;
    let table = codebook_table(&dq.parts()[0]);
    let mut worst = 0.0f64;
    for (i, row) in table.rows.iter().enumerate() {
        let (lo, hi, c): (f64, f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap(), row[3].parse().unwrap());
        let w = |x: f64| x.powf(7.0 / 3.0);
        worst = worst
            .max((w(lo) - i as f64 / 4.0).abs())
            .max((w(hi) - (i + 1) as f64 / 4.0).abs())
            .max((w(c) - (2 * i + 1) as f64 / 8.0).abs());
    }
    let ok = table.rows.len() == 4 && worst <= 1e-9;
    Ok(Verdict { passed: ok, detail: format!("{} cells, max |w(b) - i/4| = {worst:.2e}", table.rows.len()) })
}

fn criterion_3() -> Result<Verdict> {
    let mut ok = true;
    let mut detail = Vec::new();
    // n = 1 reduces to ordinary quantization in the predictor.
    for regime in [Regime::Fixed, Regime::Variable] {
        let p = DesignProblem::new(SourceModel::uniform(1)?, Arc::new(Max { n: 1 }), regime, 8.0);
        ok &= (design(&p)?.predicted / design_ordinary(&p)?.predicted - 1.0).abs() < 1e-12;
    }
    let fixed = |n: f64| 9.0 * n * 12.0 / (4.0 * (n + 2.0).powi(3));
    let stated = |n: f64| 12.0 * std::f64::consts::E * n * (-n).exp() / (3.0 * (n + 1.0).powi(2));
    ok &= fixed(1.0) == 1.0 && (stated(1.0) - 1.0).abs() < 1e-15;
    for n in [2usize, 4, 8] {
        let nf = n as f64;
        // γ² = x^{n-1}; ordinary quantization gives 1/(12n) per variable.
        let fixed_oracle = nf * midpoint(|x| x.powf((nf - 1.0) / 3.0), 1 << 16).powi(3);
        ok &= within(fixed_oracle, fixed(nf), 1e-6);
        let corrected = nf * (1.0 - nf).exp();
        let src = SourceModel::uniform(n)?;
        let g: Arc<dyn FunctionModel> = Arc::new(Max { n });
        let mut ratios = Vec::new();
        for (regime, target) in [(Regime::Fixed, fixed(nf)), (Regime::Variable, stated(nf))] {
            let mut trail = Vec::new();
            for rbar in [7.0, 8.0] {
                let p = DesignProblem::new(src.clone(), g.clone(), regime, rbar * nf);
                let (opt, opt_se) = simulate_problem(&p, false, SEED)?.scaled(n);
                let (ord, ord_se) = simulate_problem(&p, true, SEED + 1)?.scaled(n);
                let r = opt / ord / target;
                trail.push((r, r * ((opt_se / opt).powi(2) + (ord_se / ord).powi(2)).sqrt()));
            }
            ok &= within(trail[1].0, 1.0, 0.15) && toward_one(&trail);
            ratios.push(trail[1].0 * target);
        }
        detail.push(format!(
            "n={n} fixed {:.4}/{:.4} variable {:.4}/{:.4} (corrected {:.4})",
            ratios[0],
            fixed(nf),
            ratios[1],
            stated(nf),
            corrected
        ));
    }
    Ok(Verdict { passed: ok, detail: detail.join("; ") })
}

fn criterion_4() -> Result<Verdict> {
    let mut ok = true;
    let mut detail = Vec::new();
    for n in [3usize, 5, 7] {
        let m = (n / 2) as u64;
        let mf = m as f64;
        let nf = n as f64;
        let choose = binomial(2 * m, m);
        let fixed_c = choose * beta(mf / 3.0 + 1.0, mf / 3.0 + 1.0).powi(3);
        let stated_c = choose.powi(2) * beta(mf / 2.0 + 1.0, mf / 2.0 + 1.0).powi(2) * (-2.0 * mf).exp();
        let corrected_c = choose * (-2.0 * mf).exp();
        let oracle = midpoint(|x| (choose * (x * (1.0 - x)).powf(mf)).cbrt(), 1 << 16).powi(3);
        ok &= within(oracle, fixed_c, 1e-6);
        let src = SourceModel::uniform(n)?;
        let g: Arc<dyn FunctionModel> = Arc::new(Median { n });
        let unit = nf / 12.0;
        let mut last = Vec::new();
        for (regime, c) in [(Regime::Fixed, fixed_c), (Regime::Variable, stated_c)] {
            let mut trail = Vec::new();
            for rbar in [7.0, 8.0] {
                let (d, se) = simulate_problem(&DesignProblem::new(src.clone(), g.clone(), regime, rbar * nf), false, SEED)?
                    .scaled(n);
                trail.push((d / (unit * c), se / (unit * c)));
            }
            ok &= (0.85..=1.15).contains(&trail[1].0) && toward_one(&trail);
            last.push(trail[1].0);
        }
        let (fr_ratio, vr_ratio) = (last[0], last[1]);
        let vr_corrected = vr_ratio * stated_c / corrected_c;
        detail.push(format!("n={n} fixed {fr_ratio:.4} variable {vr_ratio:.4} (corrected {vr_corrected:.4})"));
    }
    Ok(Verdict { passed: ok, detail: detail.join("; ") })
}

fn criterion_5() -> Result<Verdict> {
    let src = SourceModel::uniform(1)?;
    let g = MinClip;
    let profile = sensitivity_profile(&g, &src, 0, ProfileOptions::default())?;
    let spec = detect(&profile, &Marginal::Uniform)?;
    let rates = [4.0, 6.0, 8.0];
    // One bit names A = {X < 1/2}; on A, 2(R-1) bits quantize U[0,1/2].
    let vr_constant = 0.5 * (1.0 / 12.0) * 0.25 * 16.0;
    let fr_constant = (1.0 / 12.0) * 0.125;
    let mut ok = within(vr_constant, 1.0 / 6.0, 1e-15) && within(fr_constant, 1.0 / 96.0, 1e-15);
    let mut detail = Vec::new();
    for (regime, slope_target, slope_tol, constant) in
        [(Regime::Variable, -4.0, 0.2, vr_constant), (Regime::Fixed, -2.0, 0.1, fr_constant)]
    {
        let runs: Vec<DontCareRun> = rates
            .iter()
            .map(|&r| simulate_dontcare(regime, std::slice::from_ref(&spec), std::slice::from_ref(&profile), &src, &g, &[1.0], r, SAMPLES, SEED))
            .collect::<Result<_>>()?;
        let d: Vec<f64> = runs.iter().map(|r| r.report.d_emp).collect();
        let (slope, intercept) = fit_log2_line(&rates, &d);
        let scale = |i: usize| (-slope_target * rates[i]).exp2() / constant;
        let trail: Vec<(f64, f64)> = (0..3).map(|i| (d[i] * scale(i), runs[i].report.stderr * scale(i))).collect();
        let last = trail[2].0;
        ok &= (slope - slope_target).abs() <= slope_tol && within(last, 1.0, 0.10) && toward_one(&trail);
        detail.push(format!(
            "{regime} slope {slope:.3}, D 2^{{{}R}} / C at R=8 {last:.4}, fitted constant {:.4e}",
            -slope_target,
            intercept.exp2()
        ));
    }
    Ok(Verdict { passed: ok, detail: detail.join("; ") })
}

fn criterion_6() -> Result<Verdict> {
    let l = 16.0f64;
    let g = SlopeGrid::quadrant(l)?;
    let src = SourceModel::uniform(2)?;
    let sc = ChatScenario::new(&g, &src, ThresholdEvent { companion: 1, threshold: 0.5 }, ProfileOptions::default())?;
    let m = src.marginal(0);
    let target = (l * l + 1.0).powi(2) / ((l + 1.0).powi(2) * l);
    let stated = variable_rate_chat_constant_stated(&sc, m)?;
    let corrected = variable_rate_chat_constant(&sc, m)?;
    let fixed = fixed_rate_chat_constant(&sc, m)?;
    let mut ok = within(stated.gain(), target, 1e-3);
    let vr: ChatComparison = simulate_chat(Regime::Variable, &sc, &src, &g, 8.0, SAMPLES, SEED)?;
    let fr: ChatComparison = simulate_chat(Regime::Fixed, &sc, &src, &g, 8.0, SAMPLES, SEED)?;
    ok &= within(vr.ratio, target, 0.15);
    ok &= fr.ratio <= 4.0 * (1.0 + 3.0 * fr.ratio_stderr);
    Ok(Verdict {
        passed: ok,
        detail: format!(
            "variable ratio {:.3} vs stated {target:.3} (corrected {:.3}); fixed ratio {:.3} (predicted {:.3}, bound 4)",
            vr.ratio,
            corrected.gain(),
            fr.ratio,
            fixed.gain()
        ),
    })
}

fn criterion_7() -> Result<Verdict> {
    // (source power k, density power p): f = (k+1)x^k, λ = (p+1)x^p.
    let pairs = [(0.0, 0.0), (0.0, 1.0), (2.0, 2.0 / 3.0), (1.0, 0.5), (2.0, 0.0)];
    let mut ok = true;
    let mut worst = 0.0f64;
    for (k, p) in pairs {
        let src = SourceModel::independent(vec![Marginal::power(k)?])?;
        let lambda = PointDensity::power(p)?;
        // E ln X = -1/(k+1).
        let e_log_x = -1.0 / ((k + 1.0) * std::f64::consts::LN_2);
        let h = -(k + 1.0).log2() - k * e_log_x;
        let e_log_lambda = (p + 1.0).log2() + p * e_log_x;
        let mut trail = Vec::new();
        for bits in [8, 10, 12] {
            let kk = 1usize << bits;
            let exact = -(0..kk)
                .map(|i| {
                    let b = |i: usize| (i as f64 / kk as f64).powf((k + 1.0) / (p + 1.0));
                    let q = b(i + 1) - b(i);
                    if q > 0.0 {
                        q * q.log2()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>();
            let q = ScalarQuantizer::Regular(CompandingQuantizer::new(Compander::new(lambda.clone()), kk)?);
            let lib = output_entropy(&q, &src, 0);
            ok &= (lib - exact).abs() < 1e-9;
            let dq = DistributedQuantizer::from_parts(vec![q])?;
            let report = rate_report(Regime::Variable, &dq, std::slice::from_ref(&lambda), &src)?;
            ok &= (report.hr_bits - (h + bits as f64 + e_log_lambda)).abs() < 1e-9;
            trail.push(exact - (h + bits as f64 + e_log_lambda));
        }
        ok &= trail[2].abs() <= 0.05 && trail.windows(2).all(|w| w[1].abs() <= w[0].abs() + 1e-12);
        worst = worst.max(trail[2].abs());
    }
    let src = SourceModel::uniform(1)?;
    let p = DesignProblem::new(src.clone(), Arc::new(Square), Regime::Variable, 4.0);
    let d = design(&p)?;
    let hr_k = hr_resolution_for_rate(Regime::Variable, &d.densities, &src, 4.0)?;
    let exact_k = resolution_for_rate(Regime::Variable, &d.densities, &src, &d.alpha, 4.0)?.k;
    ok &= hr_k == 21.0;
    Ok(Verdict {
        passed: ok,
        detail: format!("max |H - H_HR| at K=2^12: {worst:.4} bits; K_vr(4) = {hr_k} (exact entropy search: {exact_k})"),
    })
}

fn criterion_8() -> Result<Verdict> {
    let results = run_all(SEED)?;
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.name, r.detail)).collect();
    Ok(Verdict {
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} suites clean", results.len())
        } else {
            failed.join("; ")
        },
    })
}

fn criterion_9() -> Result<Verdict> {
    let src = SourceModel::uniform(2)?;
    let rates = [3.0, 4.0, 5.0, 6.0, 7.0];
    let opts = ProfileOptions::default();
    let g = Max { n: 2 };
    let profiles = (0..2).map(|j| sensitivity_profile(&g, &src, j, opts)).collect::<Result<Vec<_>>>()?;
    let demo = distortion_floor_demo(&g, &src, &profiles, 0, 0.5, &rates, SAMPLES, SEED)?;
    let parabola = sensitivity_profile(&SepParabola, &src, 0, opts)?;
    let binned = build_binning_compander(&SepParabola, &src, &parabola, Pairing::Mirror(0.375), 1 << 12, SEED)?;
    let sweep = compander_sweep(
        &SepParabola,
        &src,
        &[SweepCompander::Binned(binned), SweepCompander::Regular(Compander::new(PointDensity::uniform()))],
        &rates,
        SAMPLES,
        SEED,
    )?;
    let ok = demo.scan.equivalence_free()
        && demo.binned.plateau()
        && demo.regular.min_drop_per_bit() >= 3.5
        && !sweep.plateau();
    let last = |s: &dfsq::equivalence::FloorSweep| {
        let p = &s.points;
        p[p.len() - 2].distortion.mean / p[p.len() - 1].distortion.mean
    };
    Ok(Verdict {
        passed: ok,
        detail: format!(
            "max binned final ratio {:.3}, regular min drop {:.2}x/bit, sep_parabola binned final ratio {:.3}",
            last(&demo.binned),
            demo.regular.min_drop_per_bit(),
            last(&sweep)
        ),
    })
}

fn criterion_10() -> Result<Verdict> {
    let weights = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let src = SourceModel::grid(2, 3, w.clone())?;
    let row = |i: usize| (0..3).map(|j| w[3 * i + j]).sum::<f64>();
    let col = |j: usize| (0..3).map(|i| w[3 * i + j]).sum::<f64>();
    let mut multiinfo = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let p = w[3 * i + j];
            if p > 0.0 {
                multiinfo += p * (p / (row(i) * col(j))).log2();
            }
        }
    }
    let g: Arc<dyn FunctionModel> = Arc::new(Linear { coeffs: vec![1.0, 2.0] });
    let p = DesignProblem::new(src.clone(), g, Regime::SlepianWolf, 10.0);
    let d = design(&p)?;
    let error = |k: f64| -> Result<f64> {
        let dq = d.quantizer(k)?;
        let vr = rate_report(Regime::Variable, &dq, &d.densities, &src)?;
        let sw = rate_report(Regime::SlepianWolf, &dq, &d.densities, &src)?;
        Ok((vr.exact_bits - sw.exact_bits) - multiinfo)
    };
    let at = error(1024.0)?;
    // Cells straddling grid lines make the error oscillate with K, so
    // convergence is judged on the worst case over an octave.
    let mut envelope = Vec::new();
    for b in [10, 13, 16] {
        let mut worst = 0.0f64;
        for i in 0..8 {
            worst = worst.max(error((b as f64).exp2() * (1.0 + i as f64 / 8.0))?.abs());
        }
        envelope.push(worst);
    }
    let ok = at.abs() <= 0.1 && envelope.windows(2).all(|e| e[1] < e[0]);
    Ok(Verdict {
        passed: ok,
        detail: format!(
            "multiinformation {multiinfo:.4} bits, gap error at K=2^10 {at:+.4} bits, worst error per octave {:.4}/{:.4}/{:.4}",
            envelope[0], envelope[1], envelope[2]
        ),
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Verdict>); 10] = [
        ("example 1 constants", criterion_1),
        ("example 2 codebook", criterion_2),
        ("max ratios", criterion_3),
        ("median constants", criterion_4),
        ("don't-care amplification", criterion_5),
        ("chatting quadrant", criterion_6),
        ("rate accounting", criterion_7),
        ("property suites", criterion_8),
        ("equivalence floor", criterion_9),
        ("joint entropy gap", criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let v = run().unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        let mark = if v.passed { "PASS" } else { "FAIL" };
        let known = KNOWN_DEVIATIONS.contains(&id);
        println!(
            "criterion {id:>2} {mark} {name}: {} [{:.1}s]{}",
            v.detail,
            start.elapsed().as_secs_f64(),
            if known { " (known deviation)" } else { "" }
        );
        if v.passed == known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
