//! Optimal point densities, distortion constants and rate allocation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::compander::{Compander, DistributedQuantizer, PointDensity};
use crate::distortion::hr_distortion_rate;
use crate::error::{Error, Result};
use crate::functions::{sensitivity_profile, FunctionModel, ProfileOptions, SensitivityProfile};
use crate::numeric::{integrate_unit, merge_breaks};
use crate::sources::{Marginal, SourceModel};

/// Sensitivity mass above which a design is sent to the don't-care path.
pub const DONT_CARE_MASS: f64 = 1e-6;

/// How the encoders' outputs are charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// `R = log K`.
    Fixed,
    /// Each encoder's output is entropy coded separately.
    Variable,
    /// Outputs are entropy coded jointly.
    SlepianWolf,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Fixed => "fixed",
            Self::Variable => "variable",
            Self::SlepianWolf => "slepian-wolf",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "variable" => Ok(Self::Variable),
            "slepian-wolf" | "sw" => Ok(Self::SlepianWolf),
            other => Err(Error::Config(format!("unknown regime '{other}'"))),
        }
    }
}

/// `(∫ h^{1/3})³`.
pub fn quasinorm_third(h: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    integrate_unit(|x| h(x).max(0.0).cbrt(), breaks).powi(3)
}

/// Probability that `γ_j(X_j)` is (numerically) zero.
pub fn zero_sensitivity_mass(profile: &SensitivityProfile, marginal: &Marginal) -> f64 {
    const CELLS: usize = 1 << 14;
    let mut mass = 0.0;
    let mut prev = marginal.cdf(0.0);
    for i in 0..CELLS {
        let b = (i + 1) as f64 / CELLS as f64;
        let next = marginal.cdf(b);
        let mid = (i as f64 + 0.5) / CELLS as f64;
        if profile.is_zero(mid) {
            mass += next - prev;
        }
        prev = next;
    }
    mass
}

fn admissible(profile: &SensitivityProfile, marginal: &Marginal) -> Result<()> {
    let mass = zero_sensitivity_mass(profile, marginal);
    if mass > DONT_CARE_MASS {
        return Err(Error::DontCare { var: profile.var, mass });
    }
    Ok(())
}

fn breaks_of(profile: &SensitivityProfile, marginal: &Marginal) -> Vec<f64> {
    merge_breaks(&[profile.breaks(), &marginal.breaks()])
}

/// `λ ∝ (γ² f)^{1/3}`.
pub fn fixed_rate_density(profile: &SensitivityProfile, marginal: &Marginal) -> Result<PointDensity> {
    admissible(profile, marginal)?;
    let (p, m) = (profile.clone(), marginal.clone());
    PointDensity::new(move |x| (p.eval(x).powi(2) * m.pdf(x)).cbrt(), breaks_of(profile, marginal))
}

/// `λ ∝ γ`.
pub fn variable_rate_density(profile: &SensitivityProfile, marginal: &Marginal) -> Result<PointDensity> {
    admissible(profile, marginal)?;
    let p = profile.clone();
    PointDensity::new(move |x| p.eval(x), breaks_of(profile, marginal))
}

/// `E[log₂ γ_j(X_j)]`.
pub fn expected_log_sensitivity(profile: &SensitivityProfile, marginal: &Marginal) -> Result<f64> {
    admissible(profile, marginal)?;
    let v = marginal.expect(|x| profile.eval(x).max(f64::MIN_POSITIVE).log2(), profile.breaks());
    if !v.is_finite() {
        return Err(Error::Numeric(format!("E[log γ_{}] diverges", profile.var)));
    }
    Ok(v)
}

/// The constant `c_j` in `D_j = (c_j / 12) 2^{-2 R_j}` for the optimal density.
///
/// Fixed rate: `‖γ² f‖_{1/3}`. Variable rate: `2^{2h(X_j) + 2E[log γ_j(X_j)]}`.
/// Slepian–Wolf: `2^{2E[log γ_j(X_j)]}`; the joint entropy enters separately.
pub fn distortion_constant(regime: Regime, profile: &SensitivityProfile, marginal: &Marginal) -> Result<f64> {
    let c = match regime {
        Regime::Fixed => {
            admissible(profile, marginal)?;
            quasinorm_third(|x| profile.eval(x).powi(2) * marginal.pdf(x), &breaks_of(profile, marginal))
        }
        Regime::Variable => (2.0 * marginal.entropy() + 2.0 * expected_log_sensitivity(profile, marginal)?).exp2(),
        Regime::SlepianWolf => (2.0 * expected_log_sensitivity(profile, marginal)?).exp2(),
    };
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Numeric(format!("distortion constant for variable {} is {c}", profile.var)));
    }
    Ok(c)
}

/// Result of splitting a rate budget across variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub rates: Vec<f64>,
    pub distortion: f64,
    /// `R_j / Σ R_k`, present when every `R_j > 0`.
    pub alpha: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Minimize `Σ c_j 2^{-2R_j}` subject to `Σ R_j = n R̄`, allowing negative rates.
pub fn allocate(c: &[f64], rbar: f64) -> Result<Allocation> {
    if c.is_empty() || c.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::Config(format!("allocation constants must be positive, got {c:?}")));
    }
    let n = c.len() as f64;
    let log_geo = c.iter().map(|v| v.log2()).sum::<f64>() / n;
    let rates: Vec<f64> = c.iter().map(|v| rbar + 0.5 * (v.log2() - log_geo)).collect();
    let distortion = n * (log_geo - 2.0 * rbar).exp2();
    Ok(finish(rates, distortion))
}

fn finish(rates: Vec<f64>, distortion: f64) -> Allocation {
    let total: f64 = rates.iter().sum();
    let mut warnings = Vec::new();
    let alpha = if rates.iter().all(|&r| r > 0.0) {
        Some(rates.iter().map(|r| r / total).collect())
    } else {
        warnings.push(format!("some rates are not positive: {rates:?}"));
        None
    };
    Allocation { rates, distortion, alpha, warnings }
}

/// Reverse water-filling with `R_j >= 0`. Not part of the high-resolution
/// theory; offered for low rates where [`allocate`] goes negative.
pub fn allocate_clipped(c: &[f64], rbar: f64) -> Result<Allocation> {
    let a = allocate(c, rbar)?;
    if a.rates.iter().all(|&r| r >= 0.0) {
        return Ok(a);
    }
    let budget = rbar * c.len() as f64;
    let rates_at = |theta: f64| -> Vec<f64> { c.iter().map(|v| (0.5 * (v / theta).log2()).max(0.0)).collect() };
    let (mut lo, mut hi) = (1e-300f64.ln(), c.iter().fold(0.0f64, |m, &v| m.max(v)).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rates_at(mid.exp()).iter().sum::<f64>() > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rates = rates_at(hi.exp());
    let distortion = c.iter().zip(&rates).map(|(v, r)| v * (-2.0 * r).exp2()).sum();
    let mut out = finish(rates, distortion);
    out.warnings.push("clipped allocation (reverse water-filling)".into());
    Ok(out)
}

/// Per-variable quantities that determine high-resolution distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableTerms {
    /// `E[(γ_j / λ_j)²]`.
    pub mean_sq_ratio: f64,
    /// `E[log₂ λ_j(X_j)]`.
    pub e_log_lambda: f64,
    /// `h(X_j)` in bits.
    pub entropy: f64,
}

/// Evaluate [`VariableTerms`] for given densities.
pub fn variable_terms(
    source: &SourceModel,
    profiles: &[SensitivityProfile],
    densities: &[PointDensity],
) -> Result<Vec<VariableTerms>> {
    profiles
        .iter()
        .zip(densities)
        .enumerate()
        .map(|(j, (p, d))| {
            let m = source.marginal(j);
            let breaks = merge_breaks(&[p.breaks(), d.breaks(), &m.breaks()]);
            let msr = m.expect(
                |x| {
                    let g = p.eval(x);
                    if g == 0.0 {
                        0.0
                    } else {
                        (g / d.eval(x)).powi(2)
                    }
                },
                &breaks,
            );
            let ell = m.expect(|x| d.eval(x).log2(), &breaks);
            if !(msr.is_finite() && ell.is_finite()) {
                return Err(Error::Numeric(format!(
                    "variable {j}: E[(γ/λ)²] = {msr}, E[log λ] = {ell}; density too small where sensitivity is not"
                )));
            }
            Ok(VariableTerms { mean_sq_ratio: msr, e_log_lambda: ell, entropy: m.entropy() })
        })
        .collect()
}

/// A design request.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub source: SourceModel,
    pub function: Arc<dyn FunctionModel>,
    pub regime: Regime,
    /// Total rate `R = n R̄` in bits.
    pub total_rate: f64,
    /// Precomputed profiles; computed from `function` when absent.
    pub profiles: Option<Vec<SensitivityProfile>>,
    pub profile_options: ProfileOptions,
}

impl DesignProblem {
    pub fn new(source: SourceModel, function: Arc<dyn FunctionModel>, regime: Regime, total_rate: f64) -> Self {
        Self { source, function, regime, total_rate, profiles: None, profile_options: ProfileOptions::default() }
    }

    pub fn n(&self) -> usize {
        self.source.n()
    }

    pub fn profiles(&self) -> Result<Vec<SensitivityProfile>> {
        if let Some(p) = &self.profiles {
            if p.len() != self.n() {
                return Err(Error::Config("one profile per variable is required".into()));
            }
            return Ok(p.clone());
        }
        if self.function.arity() != self.n() {
            return Err(Error::Config(format!(
                "function {} takes {} variables but the source has {}",
                self.function.name(),
                self.function.arity(),
                self.n()
            )));
        }
        (0..self.n())
            .map(|j| sensitivity_profile(self.function.as_ref(), &self.source, j, self.profile_options))
            .collect()
    }
}

/// Densities, constants and allocation for a problem.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub regime: Regime,
    pub densities: Vec<PointDensity>,
    pub profiles: Vec<SensitivityProfile>,
    pub terms: Vec<VariableTerms>,
    /// `h(X_1, ..., X_n)` in bits.
    pub joint_entropy: f64,
    /// Regime constants `c_j` of the optimal densities, or the equivalent
    /// effective constants for other densities.
    pub constants: Vec<f64>,
    pub allocation: Allocation,
    pub alpha: Vec<f64>,
    pub total_rate: f64,
    /// `D^HR` at `total_rate`.
    pub predicted: f64,
}

impl DesignResult {
    /// `D^HR(R)` with this design's allocation held fixed.
    pub fn distortion_at(&self, total_rate: f64) -> f64 {
        hr_distortion_rate(self.regime, &self.terms, self.joint_entropy, &self.alpha, total_rate)
    }

    /// `D^HR(R)` with the allocation re-optimized at `R`.
    pub fn optimized_distortion_at(&self, total_rate: f64) -> Result<f64> {
        let (_, alloc) = allocate_terms(self.regime, &self.terms, self.joint_entropy, total_rate)?;
        Ok(alloc.distortion)
    }

    pub fn companders(&self) -> Vec<Compander> {
        self.densities.iter().cloned().map(Compander::new).collect()
    }

    /// The distributed quantizer with total resolution `k`.
    pub fn quantizer(&self, k: f64) -> Result<DistributedQuantizer> {
        DistributedQuantizer::new(self.companders(), self.alpha.clone(), k)
    }

    pub fn n(&self) -> usize {
        self.densities.len()
    }
}

/// Effective constants and the Lemma 4 allocation for given terms.
fn allocate_terms(
    regime: Regime,
    terms: &[VariableTerms],
    joint_entropy: f64,
    total_rate: f64,
) -> Result<(Vec<f64>, Allocation)> {
    let n = terms.len() as f64;
    match regime {
        Regime::Fixed | Regime::Variable => {
            let c: Vec<f64> = terms
                .iter()
                .map(|t| match regime {
                    Regime::Fixed => t.mean_sq_ratio,
                    _ => t.mean_sq_ratio * (2.0 * (t.entropy + t.e_log_lambda)).exp2(),
                })
                .collect();
            let scaled: Vec<f64> = c.iter().map(|v| v / 12.0).collect();
            Ok((c, allocate(&scaled, total_rate / n)?))
        }
        Regime::SlepianWolf => {
            let effective = total_rate - joint_entropy - terms.iter().map(|t| t.e_log_lambda).sum::<f64>();
            let c: Vec<f64> = terms.iter().map(|t| t.mean_sq_ratio).collect();
            let scaled: Vec<f64> = c.iter().map(|v| v / 12.0).collect();
            // Here the allocation splits log K rather than the coded rate.
            Ok((c, allocate(&scaled, effective / n)?))
        }
    }
}

/// Build a design from explicit densities. With `alpha = None` the
/// allocation is optimized; otherwise it is held fixed.
pub fn design_with_densities(
    source: &SourceModel,
    regime: Regime,
    total_rate: f64,
    profiles: Vec<SensitivityProfile>,
    densities: Vec<PointDensity>,
    alpha: Option<Vec<f64>>,
) -> Result<DesignResult> {
    let terms = variable_terms(source, &profiles, &densities)?;
    let joint_entropy = source.joint_entropy();
    let (constants, allocation) = allocate_terms(regime, &terms, joint_entropy, total_rate)?;
    let alpha = match alpha {
        Some(a) => a,
        None => allocation.alpha.clone().ok_or_else(|| {
            Error::Resolution(format!(
                "rate {total_rate} is too low for a positive allocation: {:?}",
                allocation.rates
            ))
        })?,
    };
    let predicted = hr_distortion_rate(regime, &terms, joint_entropy, &alpha, total_rate);
    Ok(DesignResult {
        regime,
        densities,
        profiles,
        terms,
        joint_entropy,
        constants,
        allocation,
        alpha,
        total_rate,
        predicted,
    })
}

/// Optimal design: profiles, then densities, then allocation.
pub fn design(problem: &DesignProblem) -> Result<DesignResult> {
    let profiles = problem.profiles()?;
    let densities = profiles
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let m = problem.source.marginal(j);
            match problem.regime {
                Regime::Fixed => fixed_rate_density(p, m),
                Regime::Variable | Regime::SlepianWolf => variable_rate_density(p, m),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    design_with_densities(&problem.source, problem.regime, problem.total_rate, profiles, densities, None)
}

/// Uniform quantizers with equal allocation, the function-blind baseline.
pub fn design_ordinary(problem: &DesignProblem) -> Result<DesignResult> {
    let profiles = problem.profiles()?;
    let n = problem.n();
    let densities = match problem.regime {
        // Without knowledge of g the fixed-rate optimum is λ ∝ f^{1/3}.
        Regime::Fixed => (0..n)
            .map(|j| {
                let m = problem.source.marginal(j).clone();
                PointDensity::new(move |x| m.pdf(x).cbrt(), problem.source.breaks(j))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => vec![PointDensity::uniform(); n],
    };
    design_with_densities(
        &problem.source,
        problem.regime,
        problem.total_rate,
        profiles,
        densities,
        Some(vec![1.0 / n as f64; n]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{from_name, Square};

    fn profile_of(g: &dyn FunctionModel, src: &SourceModel, j: usize) -> SensitivityProfile {
        sensitivity_profile(g, src, j, ProfileOptions::default()).unwrap()
    }

    #[test]
    fn example_one_densities_and_constants() {
        let src = SourceModel::uniform(1).unwrap();
        let p = profile_of(&Square, &src, 0);
        let m = src.marginal(0);
        let fr = fixed_rate_density(&p, m).unwrap();
        let vr = variable_rate_density(&p, m).unwrap();
        for &x in &[0.1, 0.5, 0.9] {
            assert!((fr.eval(x) - 5.0 / 3.0 * x.powf(2.0 / 3.0)).abs() < 1e-10);
            assert!((vr.eval(x) - 2.0 * x).abs() < 1e-10);
        }
        let cf = distortion_constant(Regime::Fixed, &p, m).unwrap();
        assert!((cf - 108.0 / 125.0).abs() < 1e-10);
        let cv = distortion_constant(Regime::Variable, &p, m).unwrap();
        assert!((cv / (4.0 * (-2.0f64).exp()) - 1.0).abs() < 1e-8, "{cv}");
    }

    #[test]
    fn example_two_density() {
        let src = SourceModel::iid(1, Marginal::power(2.0).unwrap()).unwrap();
        let p = profile_of(&Square, &src, 0);
        let fr = fixed_rate_density(&p, src.marginal(0)).unwrap();
        for &x in &[0.2, 0.7] {
            assert!((fr.eval(x) - 7.0 / 3.0 * x.powf(4.0 / 3.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn allocation_examples() {
        let a = allocate(&[1.0, 1.0], 3.0).unwrap();
        assert_eq!(a.rates, vec![3.0, 3.0]);
        assert!((a.distortion - 2.0 * 2f64.powi(-6)).abs() < 1e-15);
        let a = allocate(&[1.0, 4.0], 3.0).unwrap();
        assert!((a.rates[0] - 2.5).abs() < 1e-12 && (a.rates[1] - 3.5).abs() < 1e-12);
        assert!((a.distortion - 4.0 * 2f64.powi(-6)).abs() < 1e-15);
        let a = allocate(&[0.3], 5.0).unwrap();
        assert!((a.distortion - 0.3 * 2f64.powi(-10)).abs() < 1e-18);
        let low = allocate(&[1.0, 1e6], 1.0).unwrap();
        assert!(low.alpha.is_none() && !low.warnings.is_empty());
        let clipped = allocate_clipped(&[1.0, 1e6], 1.0).unwrap();
        assert!(clipped.rates.iter().all(|&r| r >= 0.0));
        assert!((clipped.rates.iter().sum::<f64>() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn max_design_matches_closed_forms() {
        for n in 1..=5usize {
            let src = SourceModel::uniform(n).unwrap();
            let g = from_name("max", Some(n), &[]).unwrap();
            let rbar = 8.0;
            let nf = n as f64;
            let fixed = design(&DesignProblem::new(src.clone(), g.clone(), Regime::Fixed, nf * rbar)).unwrap();
            let expect = 9.0 * nf / (4.0 * (nf + 2.0).powi(3)) * (-2.0 * rbar).exp2();
            assert!((fixed.predicted / expect - 1.0).abs() < 1e-8, "n={n}");
            let var = design(&DesignProblem::new(src.clone(), g.clone(), Regime::Variable, nf * rbar)).unwrap();
            // (n/12) e^{-(n-1)} 2^{-2R̄}: the corrected variable-rate constant.
            let expect = nf / 12.0 * (-(nf - 1.0)).exp() * (-2.0 * rbar).exp2();
            assert!((var.predicted / expect - 1.0).abs() < 1e-8, "n={n}");
            let x = 0.6f64;
            assert!((var.densities[0].eval(x) - (nf + 1.0) / 2.0 * x.powf((nf - 1.0) / 2.0)).abs() < 1e-9);
            let ord = design_ordinary(&DesignProblem::new(src, g, Regime::Fixed, nf * rbar)).unwrap();
            assert!((ord.predicted / ((-2.0 * rbar).exp2() / 12.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slepian_wolf_equals_variable_for_independent_sources() {
        let src = SourceModel::independent(vec![Marginal::power(1.0).unwrap(), Marginal::Uniform]).unwrap();
        let g = from_name("linear", None, &[1.0, 3.0]).unwrap();
        let v = design(&DesignProblem::new(src.clone(), g.clone(), Regime::Variable, 12.0)).unwrap();
        let s = design(&DesignProblem::new(src, g, Regime::SlepianWolf, 12.0)).unwrap();
        assert!((v.predicted / s.predicted - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dont_care_routing() {
        let src = SourceModel::uniform(1).unwrap();
        let g = from_name("min_clip", None, &[]).unwrap();
        let e = design(&DesignProblem::new(src, g, Regime::Fixed, 4.0)).unwrap_err();
        assert!(matches!(e, Error::DontCare { var: 0, .. }), "{e:?}");
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("slepian-wolf".parse::<Regime>().unwrap(), Regime::SlepianWolf);
        assert!("fast".parse::<Regime>().is_err());
    }
}
