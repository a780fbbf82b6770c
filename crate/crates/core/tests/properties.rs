use std::sync::Arc;

use dfsq::compander::marginal_resolution;
use dfsq::design::{design, variable_rate_density as vr_density, DesignProblem};
use dfsq::distortion::{estimator, hr_distortion_resolution, hr_distortion_resolutions, simulate, EstimatorMode};
use dfsq::dontcare::{vr_distortion_amplified, DontCareSpec};
use dfsq::equivalence::{equivalence_scan, equivalence_statistic};
use dfsq::functions::{sensitivity_profile, Linear, Max, Median, ProfileOptions, SepParabola, Square};
use dfsq::numeric::integrate_unit;
use dfsq::rate::{hr_log_resolution, resolution_for_rate};
use dfsq::sampling::stream_rng;
use dfsq::{Compander, CompandingQuantizer, DistributedQuantizer, FunctionModel, Marginal, PointDensity, Regime, SourceModel};
use proptest::prelude::*;

fn marginal() -> impl Strategy<Value = Marginal> {
    prop_oneof![
        (-0.5f64..4.0).prop_map(|k| Marginal::power(k).unwrap()),
        prop::collection::vec(0.05f64..1.0, 1..6).prop_map(|w| {
            let t: f64 = w.iter().sum();
            Marginal::piecewise(w.iter().map(|v| v / t).collect()).unwrap()
        }),
    ]
}

fn power_density() -> impl Strategy<Value = PointDensity> {
    (-0.5f64..3.0).prop_map(|p| PointDensity::power(p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_integrate_to_one(m in marginal()) {
        let total = integrate_unit(|x| m.pdf(x), &m.breaks());
        prop_assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn inverse_cdf_undoes_cdf(m in marginal()) {
        for i in 0..1000 {
            let x = (i as f64 + 0.5) / 1000.0;
            let back = m.inverse_cdf(m.cdf(x));
            prop_assert!((back - x).abs() < 1e-9, "{x} -> {back}");
        }
    }

    #[test]
    fn reconstruction_stays_in_its_cell(d in power_density(), k in 1usize..2000, seed in any::<u64>()) {
        let q = CompandingQuantizer::new(Compander::new(d), k).unwrap();
        let mut rng = stream_rng(seed, 0);
        for _ in 0..10_000 {
            let x: f64 = rand::Rng::random(&mut rng);
            let i = q.cell(x);
            let (a, b) = q.interval(i);
            prop_assert!(x >= a && x <= b);
            prop_assert_eq!(q.cell(q.reconstruct(i)), i);
        }
    }

    #[test]
    fn marginal_resolutions_fit_in_k(raw in prop::collection::vec(0.1f64..1.0, 1..5), extra in 0.0f64..20.0) {
        let t: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|a| a / t).collect();
        let min_log = alpha.iter().map(|a| 1.0 / a).fold(0.0, f64::max);
        let k = (min_log + extra).exp2();
        let n = alpha.len();
        let dq = DistributedQuantizer::new(vec![Compander::new(PointDensity::uniform()); n], alpha.clone(), k).unwrap();
        let ks = dq.resolutions();
        prop_assert!(ks.iter().all(|&v| v >= 1));
        prop_assert!(ks.iter().map(|&v| v as f64).product::<f64>() <= k * (1.0 + 1e-9));
        for (a, &v) in alpha.iter().zip(&ks) {
            prop_assert_eq!(marginal_resolution(k, *a), v);
        }
    }

    #[test]
    fn grid_multiinformation_matches_discrete(w in prop::collection::vec(0.01f64..1.0, 9)) {
        let t: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / t).collect();
        let src = SourceModel::grid(2, 3, w.clone()).unwrap();
        let row = |i: usize| (0..3).map(|j| w[3 * i + j]).sum::<f64>();
        let col = |j: usize| (0..3).map(|i| w[3 * i + j]).sum::<f64>();
        let mut mi = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                mi += w[3 * i + j] * (w[3 * i + j] / (row(i) * col(j))).log2();
            }
        }
        let gap = src.marginal_entropy(0) + src.marginal_entropy(1) - src.joint_entropy();
        prop_assert!((gap - mi).abs() < 1e-9, "{gap} vs {mi}");
        // The same gap separates the two rate accountings at equal resolution.
        let d = vec![PointDensity::uniform(), PointDensity::uniform()];
        let vr = hr_log_resolution(Regime::Variable, &d, &src, 10.0).unwrap();
        let sw = hr_log_resolution(Regime::SlepianWolf, &d, &src, 10.0).unwrap();
        prop_assert!((sw - vr - mi).abs() < 1e-9);
    }

    #[test]
    fn resolution_is_monotone_in_rate(d in power_density(), r in 1.0f64..10.0, dr in 0.0f64..3.0) {
        let src = SourceModel::uniform(1).unwrap();
        let dens = [d];
        let lo = resolution_for_rate(Regime::Variable, &dens, &src, &[1.0], r).unwrap();
        let hi = resolution_for_rate(Regime::Variable, &dens, &src, &[1.0], r + dr).unwrap();
        prop_assert!(hi.k >= lo.k);
        prop_assert!(lo.rate <= r + 1e-12);
    }

    #[test]
    fn predictor_is_additive(n in 1usize..4, raw in prop::collection::vec(0.1f64..1.0, 3), logk in 4.0f64..30.0) {
        let src = SourceModel::uniform(n).unwrap();
        let g: Arc<dyn FunctionModel> = Arc::new(Max { n });
        let d = design(&DesignProblem::new(src, g, Regime::Fixed, 8.0 * n as f64)).unwrap();
        let t: f64 = raw[..n].iter().sum();
        let alpha: Vec<f64> = raw[..n].iter().map(|a| a / t).collect();
        let k = logk.exp2();
        let joint = hr_distortion_resolution(&d.terms, &alpha, k);
        let parts: f64 = (0..n)
            .map(|j| hr_distortion_resolutions(&d.terms[j..=j], &[k.powf(alpha[j])]))
            .sum();
        prop_assert!((joint / parts - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equivalence_statistic_is_symmetric(s in 0.01f64..0.99, t in 0.01f64..0.99, which in 0usize..3) {
        prop_assume!((s - t).abs() > 1e-3);
        let src = SourceModel::uniform(if which == 2 { 3 } else { 2 }).unwrap();
        let g: Box<dyn FunctionModel> = match which {
            0 => Box::new(Max { n: 2 }),
            1 => Box::new(SepParabola),
            _ => Box::new(Median { n: 3 }),
        };
        let a = equivalence_statistic(g.as_ref(), &src, 0, s, t, 1 << 10, 7).unwrap();
        let b = equivalence_statistic(g.as_ref(), &src, 0, t, s, 1 << 10, 7).unwrap();
        prop_assert!(a.mean >= 0.0);
        prop_assert!((a.mean - b.mean).abs() <= 1e-12 * a.mean.max(1e-300));
    }
}

#[test]
fn sampled_uniform_quantization_entropy() {
    const K: usize = 1 << 12;
    const N: usize = 1 << 22;
    for m in [Marginal::Uniform, Marginal::power(1.0).unwrap(), Marginal::power(2.5).unwrap(), Marginal::piecewise(vec![0.1, 0.6, 0.3]).unwrap()] {
        let mut counts = vec![0u32; K];
        let mut rng = stream_rng(11, 0);
        for _ in 0..N {
            counts[((m.sample(&mut rng) * K as f64) as usize).min(K - 1)] += 1;
        }
        let h: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / N as f64;
                -p * p.log2()
            })
            .sum();
        let hr = m.entropy() + (K as f64).log2();
        assert!((h - hr).abs() < 0.05, "{m:?}: {h} vs {hr}");
    }
}

#[test]
fn cell_lengths_follow_the_density() {
    let d = PointDensity::new(|x| 1.0 + 0.8 * (3.0 * x).sin(), vec![]).unwrap();
    let mut prev = f64::INFINITY;
    for bits in [4, 6, 8, 10, 12] {
        let k = 1usize << bits;
        let q = CompandingQuantizer::new(Compander::new(d.clone()), k).unwrap();
        let worst = (0..k)
            .map(|i| {
                let (a, b) = q.interval(i);
                ((b - a) * k as f64 * d.eval(q.reconstruct(i)) - 1.0).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < prev, "{bits}: {worst} after {prev}");
        prev = worst;
    }
    assert!(prev < 1e-3);
}

#[test]
fn entropy_search_tracks_high_resolution_resolution() {
    let src = SourceModel::uniform(1).unwrap();
    let p = sensitivity_profile(&Square, &src, 0, ProfileOptions::default()).unwrap();
    let d = [vr_density(&p, &Marginal::Uniform).unwrap()];
    let exact = resolution_for_rate(Regime::Variable, &d, &src, &[1.0], 12.0).unwrap();
    let hr = hr_log_resolution(Regime::Variable, &d, &src, 12.0).unwrap();
    assert!((exact.k.log2() - hr).abs() < 0.1, "{} vs {hr}", exact.k.log2());
}

#[test]
fn monotone_profiles_dominate_partial_infimum() {
    let opts = ProfileOptions { grid_size: 65, mc_samples: 1 << 12, seed: 3 };
    let src = SourceModel::independent(vec![Marginal::power(1.0).unwrap(), Marginal::Uniform]).unwrap();
    let g = Linear { coeffs: vec![0.5, 2.0] };
    for j in 0..2 {
        let inf = g.partial_bounds(j, &[(0.0, 1.0), (0.0, 1.0)]).inf;
        let p = sensitivity_profile(&g, &src, j, opts).unwrap();
        assert!(p.values.iter().all(|&v| v >= inf - 1e-12));
    }
    let src = SourceModel::uniform(2).unwrap();
    let g = Max { n: 2 };
    let inf = g.partial_bounds(0, &[(0.0, 1.0), (0.0, 1.0)]).inf;
    let p = sensitivity_profile(&g, &src, 0, opts).unwrap();
    assert!(p.values.iter().all(|&v| v >= inf));
}

#[test]
fn monotone_function_has_no_equivalences() {
    let src = SourceModel::uniform(2).unwrap();
    let scan = equivalence_scan(&Linear { coeffs: vec![1.0, 3.0] }, &src, 0, 16, 1 << 10, 5).unwrap();
    assert!(scan.equivalence_free());
    let src = SourceModel::uniform(3).unwrap();
    let scan = equivalence_scan(&Median { n: 3 }, &src, 1, 16, 1 << 10, 5).unwrap();
    assert!(scan.equivalence_free());
}

#[test]
fn distortion_converges_for_examples() {
    let cases: Vec<(Arc<dyn FunctionModel>, usize)> =
        vec![(Arc::new(Square), 1), (Arc::new(Max { n: 2 }), 2), (Arc::new(Median { n: 3 }), 3)];
    for (g, n) in cases {
        let src = SourceModel::uniform(n).unwrap();
        let d = design(&DesignProblem::new(src.clone(), g.clone(), Regime::Fixed, 10.0)).unwrap();
        let mut trail = Vec::new();
        for bits in [6, 8, 10] {
            let dq = d.quantizer((bits as f64).exp2()).unwrap();
            let ks: Vec<f64> = dq.resolutions().iter().map(|&v| v as f64).collect();
            let emp = simulate(&dq, &src, g.as_ref(), 1 << 18, 2).unwrap();
            let hr = hr_distortion_resolutions(&d.terms, &ks);
            trail.push((emp.mean() / hr, emp.stderr() / hr));
        }
        for w in trail.windows(2) {
            assert!((w[1].0 - 1.0).abs() <= (w[0].0 - 1.0).abs() + 3.0 * (w[0].1 + w[1].1), "{}: {trail:?}", g.name());
        }
        assert!((trail[2].0 - 1.0).abs() < 0.1, "{}: {trail:?}", g.name());
    }
}

#[test]
fn conditional_mean_beats_representative() {
    let src = SourceModel::uniform(2).unwrap();
    let g = Max { n: 2 };
    let d = design(&DesignProblem::new(src.clone(), Arc::new(g), Regime::Fixed, 8.0)).unwrap();
    let dq = d.quantizer(64.0).unwrap();
    let est = estimator(&dq, &src, &g, EstimatorMode::Numeric).unwrap();
    let mut rng = stream_rng(9, 0);
    let (mut x, mut c) = (vec![0.0; 2], vec![0usize; 2]);
    let n = 1 << 18;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        src.sample_into(&mut rng, &mut x);
        dq.cells_into(&x, &mut c);
        let rep: Vec<f64> = c.iter().zip(dq.parts()).map(|(&i, q)| q.representative(i)).collect();
        let v = g.evaluate(&x);
        let diff = (v - g.evaluate(&rep)).powi(2) - (v - est.value(&c).0).powi(2);
        sum += diff;
        sq += diff * diff;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(mean >= -3.0 * se, "{mean} ± {se}");
}

#[test]
fn amplified_formula_is_continuous_in_zone_probability() {
    let src = SourceModel::uniform(1).unwrap();
    let p = sensitivity_profile(&Square, &src, 0, ProfileOptions::default()).unwrap();
    let rate = 10.0;
    // (1/12) 2^{-2(R - h - E log γ)} with γ = 2x, h = 0, E log₂ 2X = 1 - 1/ln 2.
    let standard = (-2.0 * (rate - (1.0 - std::f64::consts::LOG2_E))).exp2() / 12.0;
    let mut prev = f64::INFINITY;
    for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
        let spec = DontCareSpec::from_zones(0, vec![(1.0 - eps, 1.0)], &Marginal::Uniform).unwrap();
        let v = vr_distortion_amplified(&[spec], std::slice::from_ref(&p), &src, &[1.0], rate).unwrap().value;
        let gap = (v / standard - 1.0).abs();
        assert!(gap < prev);
        if eps < 1e-3 {
            assert!(gap < 0.01, "{eps}: {gap}");
        }
        prev = gap;
    }
}

#[test]
fn dontcare_quantizer_matches_fixed_rate_formula() {
    use dfsq::dontcare::{detect, simulate_dontcare};
    use dfsq::functions::MinClip;
    let src = SourceModel::uniform(1).unwrap();
    let p = sensitivity_profile(&MinClip, &src, 0, ProfileOptions::default()).unwrap();
    let spec = detect(&p, &Marginal::Uniform).unwrap();
    for rate in [9.0, 10.0] {
        let run = simulate_dontcare(Regime::Fixed, std::slice::from_ref(&spec), std::slice::from_ref(&p), &src, &MinClip, &[1.0], rate, 1 << 18, 4)
            .unwrap();
        assert!(run.complement_cells[0] >= 256);
        assert!((run.report.ratio - 1.0).abs() < 0.1, "{:?}", run.report);
    }
}
