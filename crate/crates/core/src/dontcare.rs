//! Don't-care intervals: regions where the function ignores a variable.
//!
//! Each interval gets a single codeword, so the encoder only has to say
//! whether `X_j` landed there. When it did not, the remaining rate is spent on
//! the complement, which amplifies the effective rate by `1 / P(A_j)`.

use crate::compander::{
    Compander, CompandingQuantizer, DistributedQuantizer, DontCareQuantizer, PointDensity, ScalarQuantizer,
};
use crate::design::Regime;
use crate::distortion::{simulate, DistortionReport};
use crate::error::{Error, Result};
use crate::functions::{FunctionModel, SensitivityProfile};
use crate::numeric::{generalized_inverse, integrate_unit, merge_breaks};
use crate::rate::entropy_bits;
use crate::sources::{Marginal, SourceModel};

/// Minimum run of zero grid points that counts as an interval.
pub const MIN_RUN: usize = 4;
/// Minimum probability of a don't-care interval.
pub const MIN_PROBABILITY: f64 = 1e-4;

/// Don't-care structure of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DontCareSpec {
    pub var: usize,
    /// Closed intervals where `γ_j = 0`.
    pub zones: Vec<(f64, f64)>,
    pub zone_probs: Vec<f64>,
    /// `P(A_j) = P(X_j ∉ Z_j)`.
    pub p_a: f64,
    /// `ρ_j = 1 / P(A_j)`.
    pub rho: f64,
    /// `H(I_j)` in bits.
    pub indicator_entropy: f64,
}

impl DontCareSpec {
    pub fn none(var: usize) -> Self {
        Self { var, zones: Vec::new(), zone_probs: Vec::new(), p_a: 1.0, rho: 1.0, indicator_entropy: 0.0 }
    }

    pub fn from_zones(var: usize, zones: Vec<(f64, f64)>, marginal: &Marginal) -> Result<Self> {
        let zone_probs: Vec<f64> = zones.iter().map(|&(a, b)| marginal.cdf(b) - marginal.cdf(a)).collect();
        let p_a = 1.0 - zone_probs.iter().sum::<f64>();
        if p_a <= 1e-12 {
            return Err(Error::Unsupported(format!("variable {var} is don't-care almost everywhere")));
        }
        let mut probs = zone_probs.clone();
        probs.push(p_a);
        Ok(Self { var, indicator_entropy: entropy_bits(&probs), zones, zone_probs, p_a, rho: 1.0 / p_a })
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.zones.iter().any(|&(a, b)| x >= a && x <= b)
    }
}

/// Find maximal runs of zero sensitivity with positive probability.
pub fn detect(profile: &SensitivityProfile, marginal: &Marginal) -> Result<DontCareSpec> {
    let grid = &profile.grid;
    let zero = |x: f64| profile.is_zero(x);
    let mut zones = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if profile.values[i] > 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < grid.len() && profile.values[i] == 0.0 {
            i += 1;
        }
        if i - start < MIN_RUN {
            continue;
        }
        // Refine both ends between the last nonzero and first zero grid points.
        let left = if start == 0 {
            0.0
        } else {
            generalized_inverse(|x| if zero(x) { 1.0 } else { 0.0 }, 1.0, grid[start - 1], grid[start], 1e-13)
        };
        let right = if i == grid.len() {
            1.0
        } else {
            let (a, b) = (grid[i - 1], grid[i]);
            // Last zero point: first x where the profile turns nonzero, from the right.
            generalized_inverse(|x| if zero(x) { 0.0 } else { 1.0 }, 1.0, a, b, 1e-13)
        };
        if marginal.cdf(right) - marginal.cdf(left) >= MIN_PROBABILITY {
            zones.push((left, right));
        }
    }
    DontCareSpec::from_zones(profile.var, zones, marginal)
}

/// `M` codewords for the zones and `K - M` companding cells on the complement.
pub fn build_dontcare_quantizer(spec: &DontCareSpec, lambda: &PointDensity, k: usize) -> Result<ScalarQuantizer> {
    let m = spec.zones.len();
    if m == 0 {
        return Ok(ScalarQuantizer::Regular(CompandingQuantizer::new(Compander::new(lambda.clone()), k)?));
    }
    if k <= m {
        return Err(Error::Resolution(format!("{k} cells cannot cover {m} don't-care intervals and the rest")));
    }
    let inner = CompandingQuantizer::new(Compander::new(lambda.restricted(&spec.zones)?), k - m)?;
    Ok(ScalarQuantizer::DontCare(DontCareQuantizer { zones: spec.zones.clone(), inner }))
}

fn conditional_breaks(spec: &DontCareSpec, extra: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = spec.zones.iter().flat_map(|&(a, b)| [a, b]).collect();
    b.extend_from_slice(extra);
    merge_breaks(&[&b])
}

/// `E[h(X_j) | A_j]`.
fn expect_on_complement(spec: &DontCareSpec, marginal: &Marginal, breaks: &[f64], h: impl Fn(f64) -> f64) -> f64 {
    let b = conditional_breaks(spec, &[breaks, &marginal.breaks()].concat());
    integrate_unit(
        |x| {
            if spec.contains(x) {
                return 0.0;
            }
            let f = marginal.pdf(x);
            if f == 0.0 {
                0.0
            } else {
                f * h(x)
            }
        },
        &b,
    ) / spec.p_a
}

/// `h(X_j | A_j)` in bits.
pub fn conditional_entropy(spec: &DontCareSpec, marginal: &Marginal) -> f64 {
    -expect_on_complement(spec, marginal, &[], |x| (marginal.pdf(x) / spec.p_a).log2())
}

/// `λ ∝ γ` on the complement.
pub fn variable_rate_density(spec: &DontCareSpec, profile: &SensitivityProfile) -> Result<PointDensity> {
    let p = profile.clone();
    let s = spec.clone();
    PointDensity::new(move |x| if s.contains(x) { 0.0 } else { p.eval(x) }, conditional_breaks(spec, profile.breaks()))
}

/// `λ ∝ (γ² f)^{1/3}` on the complement.
pub fn fixed_rate_density(spec: &DontCareSpec, profile: &SensitivityProfile, marginal: &Marginal) -> Result<PointDensity> {
    let (p, s, m) = (profile.clone(), spec.clone(), marginal.clone());
    PointDensity::new(
        move |x| if s.contains(x) { 0.0 } else { (p.eval(x).powi(2) * m.pdf(x)).cbrt() },
        conditional_breaks(spec, &[profile.breaks(), &marginal.breaks()].concat()),
    )
}

/// Distortion estimate with warnings about the regime of validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplified {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Variable-rate distortion with rate amplification:
/// `(1/12) Σ_j ρ_j⁻¹ 2^{-2(ρ_j(α_j R - H(I_j)) - h(X_j|A_j) - E[log γ_j | A_j])}`.
pub fn vr_distortion_amplified(
    specs: &[DontCareSpec],
    profiles: &[SensitivityProfile],
    source: &SourceModel,
    alpha: &[f64],
    rate: f64,
) -> Result<Amplified> {
    if specs.len() != source.n() || profiles.len() != source.n() || alpha.len() != source.n() {
        return Err(Error::Config("need one spec, profile and allocation per variable".into()));
    }
    let mut warnings = Vec::new();
    let mut value = 0.0;
    for (j, (spec, p)) in specs.iter().zip(profiles).enumerate() {
        let m = source.marginal(j);
        let budget = alpha[j] * rate;
        if budget < spec.indicator_entropy {
            warnings.push(format!(
                "variable {j}: rate {budget} is below the indicator entropy {}",
                spec.indicator_entropy
            ));
        }
        let h = conditional_entropy(spec, m);
        let elog = expect_on_complement(spec, m, p.breaks(), |x| p.eval(x).max(f64::MIN_POSITIVE).log2());
        if !elog.is_finite() {
            return Err(Error::Numeric(format!("E[log γ_{j} | A] diverges")));
        }
        let exponent = spec.rho * (budget - spec.indicator_entropy) - h - elog;
        value += (-2.0 * exponent).exp2() / (12.0 * spec.rho);
    }
    Ok(Amplified { value, warnings })
}

/// Fixed-rate distortion with `K_j - M_j` cells on the complement:
/// `Σ_j P(A_j) E[(γ_j/λ_j)² | A_j] / (12 (K_j - M_j)²)`.
pub fn fr_distortion_dontcare(
    specs: &[DontCareSpec],
    profiles: &[SensitivityProfile],
    densities: &[PointDensity],
    source: &SourceModel,
    resolutions: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for (j, spec) in specs.iter().enumerate() {
        let cells = resolutions[j].checked_sub(spec.zones.len()).filter(|&c| c > 0).ok_or_else(|| {
            Error::Resolution(format!("variable {j} has no cells left for the complement"))
        })?;
        let (p, d) = (&profiles[j], &densities[j]);
        let msr = expect_on_complement(spec, source.marginal(j), &[p.breaks(), d.breaks()].concat(), |x| {
            let g = p.eval(x);
            if g == 0.0 {
                0.0
            } else {
                (g / d.eval(x)).powi(2)
            }
        });
        total += spec.p_a * msr / (12.0 * (cells * cells) as f64);
    }
    Ok(total)
}

fn conditional_output_entropy(spec: &DontCareSpec, q: &CompandingQuantizer, marginal: &Marginal) -> f64 {
    let probs: Vec<f64> = (0..q.levels())
        .map(|i| {
            let (a, b) = q.interval(i);
            let mut p = marginal.cdf(b) - marginal.cdf(a);
            for &(za, zb) in &spec.zones {
                let (l, r) = (a.max(za), b.min(zb));
                if r > l {
                    p -= marginal.cdf(r) - marginal.cdf(l);
                }
            }
            p.max(0.0) / spec.p_a
        })
        .collect();
    entropy_bits(&probs)
}

/// Largest complement resolution with `H(Q(X_j) | A_j) <= budget`.
pub fn conditional_resolution(spec: &DontCareSpec, lambda: &PointDensity, marginal: &Marginal, budget: f64) -> Result<usize> {
    let restricted = Compander::new(lambda.restricted(&spec.zones)?);
    let h = |k: usize| -> Result<f64> {
        Ok(conditional_output_entropy(spec, &CompandingQuantizer::new(restricted.clone(), k)?, marginal))
    };
    if budget < 0.0 {
        return Err(Error::Resolution("rate does not cover the indicator".into()));
    }
    // H(Q_K) ≈ log K + c at high resolution; calibrate c on a small K.
    let k0 = budget.min(10.0).exp2().floor().max(1.0) as usize;
    let c = h(k0)? - (k0 as f64).log2();
    let guess = (budget - c).exp2().floor().clamp(1.0, (1u64 << 26) as f64) as usize;
    crate::rate::largest_within(h, budget, guess, 1 << 26)
}

/// A simulated don't-care operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct DontCareRun {
    pub report: DistortionReport,
    /// Cells spent on each complement.
    pub complement_cells: Vec<usize>,
    pub warnings: Vec<String>,
}

/// A two-stage quantizer for independent sources.
#[derive(Debug, Clone)]
pub struct DontCareDesign {
    pub quantizer: DistributedQuantizer,
    pub densities: Vec<PointDensity>,
    /// Cells spent on each complement.
    pub complement_cells: Vec<usize>,
}

/// Variable rate: send `I_j`, then quantize the complement at rate
/// `ρ_j(α_j R - H(I_j))` with `λ ∝ γ`. Fixed rate: `2^{α_j R}` cells of which
/// `M_j` go to the zones.
pub fn dontcare_quantizer(
    regime: Regime,
    specs: &[DontCareSpec],
    profiles: &[SensitivityProfile],
    source: &SourceModel,
    alpha: &[f64],
    rate: f64,
) -> Result<DontCareDesign> {
    if !source.is_independent() {
        return Err(Error::Unsupported("don't-care coding needs independent sources".into()));
    }
    let n = source.n();
    if specs.len() != n || profiles.len() != n || alpha.len() != n {
        return Err(Error::Config("need one spec, profile and allocation per variable".into()));
    }
    let mut parts = Vec::with_capacity(n);
    let mut densities = Vec::with_capacity(n);
    let mut complement_cells = Vec::with_capacity(n);
    for j in 0..n {
        let (spec, p, m) = (&specs[j], &profiles[j], source.marginal(j));
        let budget = alpha[j] * rate;
        let (lambda, cells) = match regime {
            Regime::Variable => {
                let lambda = variable_rate_density(spec, p)?;
                let cells = conditional_resolution(spec, &lambda, m, spec.rho * (budget - spec.indicator_entropy))?;
                (lambda, cells)
            }
            Regime::Fixed => {
                let k = budget.exp2().floor() as usize;
                let cells = k.checked_sub(spec.zones.len()).filter(|&c| c > 0).ok_or_else(|| {
                    Error::Resolution(format!("2^{budget} cells cannot cover the don't-care intervals"))
                })?;
                (fixed_rate_density(spec, p, m)?, cells)
            }
            Regime::SlepianWolf => return Err(Error::Unsupported("don't-care coding with joint entropy".into())),
        };
        parts.push(build_dontcare_quantizer(spec, &lambda, cells + spec.zones.len())?);
        densities.push(lambda);
        complement_cells.push(cells);
    }
    Ok(DontCareDesign { quantizer: DistributedQuantizer::from_parts(parts)?, densities, complement_cells })
}

/// Simulate the two-stage scheme of [`dontcare_quantizer`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_dontcare(
    regime: Regime,
    specs: &[DontCareSpec],
    profiles: &[SensitivityProfile],
    source: &SourceModel,
    g: &dyn FunctionModel,
    alpha: &[f64],
    rate: f64,
    samples: usize,
    seed: u64,
) -> Result<DontCareRun> {
    let DontCareDesign { quantizer: dq, densities, complement_cells } =
        dontcare_quantizer(regime, specs, profiles, source, alpha, rate)?;
    let (d_hr, warnings) = match regime {
        Regime::Variable => {
            let a = vr_distortion_amplified(specs, profiles, source, alpha, rate)?;
            (a.value, a.warnings)
        }
        _ => (fr_distortion_dontcare(specs, profiles, &densities, source, &dq.resolutions())?, Vec::new()),
    };
    let emp = simulate(&dq, source, g, samples, seed)?;
    Ok(DontCareRun {
        report: DistortionReport::new(regime, rate, dq.resolutions(), d_hr, &emp),
        complement_cells,
        warnings,
    })
}


#[cfg(test)]
mod simulation_tests {
    use super::*;
    use crate::functions::{from_name, sensitivity_profile, ProfileOptions};
    use crate::numeric::fit_log2_line;

    #[test]
    fn min_clip_slope_four() {
        let src = SourceModel::uniform(1).unwrap();
        let g = from_name("min_clip", None, &[]).unwrap();
        let p = sensitivity_profile(g.as_ref(), &src, 0, ProfileOptions::default()).unwrap();
        let spec = detect(&p, &Marginal::Uniform).unwrap();
        let rates = [4.0, 6.0, 8.0];
        let runs: Vec<DontCareRun> = rates
            .iter()
            .map(|&r| {
                simulate_dontcare(Regime::Variable, std::slice::from_ref(&spec), std::slice::from_ref(&p), &src, g.as_ref(), &[1.0], r, 1 << 16, 3)
                    .unwrap()
            })
            .collect();
        for r in &runs {
            eprintln!("{:?} {:?}", r.complement_cells, r.report);
        }
        let d: Vec<f64> = runs.iter().map(|r| r.report.d_emp).collect();
        let (slope, _) = fit_log2_line(&rates, &d);
        assert!((slope + 4.0).abs() < 0.2, "{slope}");
    }
}
