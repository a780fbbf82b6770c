//! One bit from encoder 2 to encoder 1.
//!
//! The bit is `Y = 1{X_k <= t}` for a companion variable `k`. Encoder 1 then
//! switches between two quantizers designed for the conditional profiles
//! `γ_{1|Y}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compander::{Compander, CompandingQuantizer, PointDensity, ScalarQuantizer};
use crate::design::{distortion_constant, fixed_rate_density, variable_rate_density, Regime};
use crate::distortion::{DistortionReport, EmpiricalDistortion};
use crate::error::{Error, Result};
use crate::functions::{
    conditional_sensitivity_profile, sensitivity_profile, FunctionModel, ProfileOptions, SensitivityProfile,
    SlopeGrid, ThresholdEvent,
};
use crate::numeric::{integrate_unit, merge_breaks, GL8_NODES, GL8_WEIGHTS};
use crate::rate::{largest_within, output_entropy};
use crate::sampling::{map_batches, stream_rng, Estimate, Moments};
use crate::sources::{Marginal, SourceModel};

/// Profiles of `X_1` with and without the chat bit.
#[derive(Debug, Clone)]
pub struct ChatScenario {
    pub event: ThresholdEvent,
    /// `P(Y = 1)`, the probability that the companion is below the threshold.
    pub p_below: f64,
    pub nochat: SensitivityProfile,
    /// `γ_{1|Y=1}` (below) and `γ_{1|Y=0}` (above).
    pub below: SensitivityProfile,
    pub above: SensitivityProfile,
}

impl ChatScenario {
    pub fn new(g: &dyn FunctionModel, source: &SourceModel, event: ThresholdEvent, opts: ProfileOptions) -> Result<Self> {
        let p_below = event.probability(source, true);
        if !(p_below > 0.0 && p_below < 1.0) {
            return Err(Error::Domain(format!("chat bit is constant: P(Y = 1) = {p_below}")));
        }
        Ok(Self {
            event,
            p_below,
            nochat: sensitivity_profile(g, source, 0, opts)?,
            below: conditional_sensitivity_profile(g, source, 0, event, true, opts)?,
            above: conditional_sensitivity_profile(g, source, 0, event, false, opts)?,
        })
    }

    fn branches(&self) -> [(f64, &SensitivityProfile); 2] {
        [(self.p_below, &self.below), (1.0 - self.p_below, &self.above)]
    }
}

/// `D_1` constants with and without the bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChatConstants {
    pub chat: f64,
    pub nochat: f64,
}

impl ChatConstants {
    /// How much the bit reduces `D_1`.
    pub fn gain(&self) -> f64 {
        self.nochat / self.chat
    }
}

/// `Σ_y P(Y=y) ‖γ²_{1|y} f_{1|y}‖_{1/3}` against `‖γ_1² f_1‖_{1/3}`.
pub fn fixed_rate_chat_constant(scenario: &ChatScenario, marginal: &Marginal) -> Result<ChatConstants> {
    let mut chat = 0.0;
    for (p, prof) in scenario.branches() {
        chat += p * distortion_constant(Regime::Fixed, prof, marginal)?;
    }
    Ok(ChatConstants { chat, nochat: distortion_constant(Regime::Fixed, &scenario.nochat, marginal)? })
}

/// Variable-rate constants for the optimal `λ ∝ γ`:
/// `Σ_y P(Y=y) 2^{2h(X_1) + 2E[log γ_{1|y}]}`.
pub fn variable_rate_chat_constant(scenario: &ChatScenario, marginal: &Marginal) -> Result<ChatConstants> {
    let mut chat = 0.0;
    for (p, prof) in scenario.branches() {
        chat += p * distortion_constant(Regime::Variable, prof, marginal)?;
    }
    Ok(ChatConstants { chat, nochat: distortion_constant(Regime::Variable, &scenario.nochat, marginal)? })
}

fn l1_norm(profile: &SensitivityProfile) -> f64 {
    integrate_unit(|x| profile.eval(x), profile.breaks())
}

/// The variable-rate constants with an extra `‖γ‖₁²` factor on every term,
/// as they are usually quoted for this example.
pub fn variable_rate_chat_constant_stated(scenario: &ChatScenario, marginal: &Marginal) -> Result<ChatConstants> {
    let mut chat = 0.0;
    for (p, prof) in scenario.branches() {
        chat += p * l1_norm(prof).powi(2) * distortion_constant(Regime::Variable, prof, marginal)?;
    }
    let nochat = l1_norm(&scenario.nochat).powi(2) * distortion_constant(Regime::Variable, &scenario.nochat, marginal)?;
    Ok(ChatConstants { chat, nochat })
}

/// Constants for the regime.
pub fn chat_constants(regime: Regime, scenario: &ChatScenario, marginal: &Marginal) -> Result<ChatConstants> {
    match regime {
        Regime::Fixed => fixed_rate_chat_constant(scenario, marginal),
        Regime::Variable => variable_rate_chat_constant(scenario, marginal),
        Regime::SlepianWolf => Err(Error::Unsupported("chatting with joint entropy coding".into())),
    }
}

/// Simulated `D_1` with and without the bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatComparison {
    pub chat: DistortionReport,
    pub nochat: DistortionReport,
    /// `12 D_1 2^{2R}` from simulation.
    pub chat_constant: f64,
    pub nochat_constant: f64,
    /// `D_1` no-chat over chat, with a standard error from batch ratios.
    pub ratio: f64,
    pub ratio_stderr: f64,
}

fn design_quantizer(regime: Regime, prof: &SensitivityProfile, source: &SourceModel, rate: f64) -> Result<CompandingQuantizer> {
    let m = source.marginal(0);
    let lambda: PointDensity = match regime {
        Regime::Fixed => fixed_rate_density(prof, m)?,
        _ => variable_rate_density(prof, m)?,
    };
    let c = Compander::new(lambda);
    let k = match regime {
        Regime::Fixed => rate.exp2().floor() as usize,
        _ => {
            let h = |k: usize| -> Result<f64> {
                Ok(output_entropy(&ScalarQuantizer::Regular(CompandingQuantizer::new(c.clone(), k)?), source, 0))
            };
            let k0 = rate.min(8.0).exp2().floor().max(1.0) as usize;
            let offset = h(k0)? - (k0 as f64).log2();
            largest_within(h, rate, (rate - offset).exp2().floor() as usize, 1 << 26)?
        }
    };
    CompandingQuantizer::new(c, k.max(1))
}

/// `E[g(X_1, x_rest) | X_1 ∈ (a, b]]`.
fn cell_mean(g: &dyn FunctionModel, m: &Marginal, a: f64, b: f64, breaks: &[f64], x: &mut [f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let mut left = a;
    for right in breaks.iter().copied().filter(|&t| t > a && t < b).chain([b]) {
        let (c, h) = (0.5 * (left + right), 0.5 * (right - left));
        for (u, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            x[0] = c + h * u;
            let f = m.pdf(x[0]) * w * h;
            num += g.evaluate(x) * f;
            den += f;
        }
        left = right;
    }
    if den > 0.0 {
        num / den
    } else {
        x[0] = 0.5 * (a + b);
        g.evaluate(x)
    }
}

/// Simulate encoder 1 alone at rate `R` with and without the bit. The decoder
/// knows the other variables exactly, so the measured distortion is the `D_1`
/// term on its own. Both branches use the same rate.
#[allow(clippy::too_many_arguments)]
pub fn simulate_chat(
    regime: Regime,
    scenario: &ChatScenario,
    source: &SourceModel,
    g: &dyn FunctionModel,
    rate: f64,
    samples: usize,
    seed: u64,
) -> Result<ChatComparison> {
    if !source.is_independent() || source.n() < 2 {
        return Err(Error::Unsupported("chatting needs at least two independent sources".into()));
    }
    if samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let consts = chat_constants(regime, scenario, source.marginal(0))?;
    let scale = (-2.0 * rate).exp2() / 12.0;
    let nochat_q = design_quantizer(regime, &scenario.nochat, source, rate)?;
    let below_q = design_quantizer(regime, &scenario.below, source, rate)?;
    let above_q = design_quantizer(regime, &scenario.above, source, rate)?;
    let m0 = source.marginal(0);
    let breaks = merge_breaks(&[
        &m0.breaks(),
        scenario.nochat.breaks(),
        scenario.below.breaks(),
        scenario.above.breaks(),
    ]);
    let n = source.n();
    let ev = scenario.event;
    let parts = map_batches(samples, |b, len| {
        let mut rng = stream_rng(seed, b);
        let mut x = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let (mut with, mut without) = (Moments::default(), Moments::default());
        for _ in 0..len {
            source.sample_into(&mut rng, &mut x);
            let gx = g.evaluate(&x);
            let q = if x[ev.companion] <= ev.threshold { &below_q } else { &above_q };
            let mut err = |q: &CompandingQuantizer| {
                let (a, b) = q.interval(q.cell(x[0]));
                scratch.copy_from_slice(&x);
                let e = gx - cell_mean(g, m0, a, b, &breaks, &mut scratch);
                e * e
            };
            let (ec, en) = (err(q), err(&nochat_q));
            with.push(ec);
            without.push(en);
        }
        (with, without)
    });
    let with: Vec<Moments> = parts.iter().map(|p| p.0).collect();
    let without: Vec<Moments> = parts.iter().map(|p| p.1).collect();
    let (ec, en) = (Estimate::from_batches(&with), Estimate::from_batches(&without));
    if !(ec.mean > 0.0 && en.mean.is_finite()) {
        return Err(Error::Numeric("chat simulation produced a degenerate distortion".into()));
    }
    let ratio = en.mean / ec.mean;
    let batch_ratios: Vec<f64> = with.iter().zip(&without).map(|(w, o)| o.mean / w.mean).collect();
    let ratio_stderr = if batch_ratios.len() >= 2 {
        let mut m = Moments::default();
        batch_ratios.iter().for_each(|&r| m.push(r));
        (m.variance() / batch_ratios.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    let report = |est: &Estimate, ks: Vec<usize>, c: f64| {
        let emp = EmpiricalDistortion { estimate: *est, flagged_fraction: 0.0 };
        DistortionReport::new(regime, rate, ks, c * scale, &emp)
    };
    Ok(ChatComparison {
        chat: report(&ec, vec![below_q.levels(), above_q.levels()], consts.chat),
        nochat: report(&en, vec![nochat_q.levels()], consts.nochat),
        chat_constant: ec.mean / scale,
        nochat_constant: en.mean / scale,
        ratio,
        ratio_stderr,
    })
}

/// One random slope-grid scenario of the bound sweep.
#[derive(Debug, Clone)]
pub struct BoundCase {
    pub slopes: Vec<Vec<f64>>,
    pub threshold: f64,
    pub constants: ChatConstants,
}

/// Random slope grids (2–4 rows and columns, log-uniform slopes in
/// `[0.1, 10]`) with random thresholds, and their fixed-rate chat constants.
pub fn fixed_rate_bound_sweep(count: usize, seed: u64, source: &SourceModel, opts: ProfileOptions) -> Result<Vec<BoundCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rows = rng.random_range(2..=4);
            let cols = rng.random_range(2..=4);
            let slopes: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect())
                .collect();
            let threshold = rng.random_range(0.1..0.9);
            let g = SlopeGrid::new(slopes.clone())?;
            let sc = ChatScenario::new(&g, source, ThresholdEvent { companion: 1, threshold }, opts)?;
            Ok(BoundCase { slopes, threshold, constants: fixed_rate_chat_constant(&sc, source.marginal(0))? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrant(l: f64) -> (SlopeGrid, SourceModel, ChatScenario) {
        let g = SlopeGrid::quadrant(l).unwrap();
        let src = SourceModel::uniform(2).unwrap();
        let sc = ChatScenario::new(&g, &src, ThresholdEvent { companion: 1, threshold: 0.5 }, ProfileOptions::default())
            .unwrap();
        (g, src, sc)
    }

    #[test]
    fn quadrant_constants() {
        for l in [1.0, 2.0, 16.0] {
            let (_, src, sc) = quadrant(l);
            let m = src.marginal(0);
            let stated = variable_rate_chat_constant_stated(&sc, m).unwrap();
            assert!((stated.nochat / (0.25 * (l * l + 1.0).powi(2)) - 1.0).abs() < 1e-9);
            assert!((stated.chat / (0.25 * (l + 1.0).powi(2) * l) - 1.0).abs() < 1e-9);
            let v = variable_rate_chat_constant(&sc, m).unwrap();
            assert!((v.nochat / (0.5 * (l * l + 1.0)) - 1.0).abs() < 1e-9);
            assert!((v.chat / l - 1.0).abs() < 1e-9);
            let f = fixed_rate_chat_constant(&sc, m).unwrap();
            assert!((f.nochat / (0.5 * (l * l + 1.0)) - 1.0).abs() < 1e-9);
            let oracle = (0.5 + 0.5 * l.powf(2.0 / 3.0)).powi(3);
            assert!((f.chat / oracle - 1.0).abs() < 1e-9);
            assert!(f.gain() <= 4.0);
        }
    }

    #[test]
    fn uninformative_bit() {
        let src = SourceModel::uniform(2).unwrap();
        let lin = crate::functions::Linear { coeffs: vec![2.0, 1.0] };
        let sc = ChatScenario::new(&lin, &src, ThresholdEvent { companion: 1, threshold: 0.3 }, ProfileOptions::default())
            .unwrap();
        let f = fixed_rate_chat_constant(&sc, src.marginal(0)).unwrap();
        assert!((f.chat - f.nochat).abs() < 1e-9 * f.nochat);
    }

    #[test]
    fn bound_sweep_respects_factor_four() {
        let src = SourceModel::uniform(2).unwrap();
        for case in fixed_rate_bound_sweep(20, 5, &src, ProfileOptions::default()).unwrap() {
            assert!(case.constants.gain() <= 4.0, "{case:?}");
        }
    }

    #[test]
    fn simulated_quadrant_gain() {
        let (g, src, sc) = quadrant(4.0);
        let r = simulate_chat(Regime::Variable, &sc, &src, &g, 6.0, 1 << 16, 1).unwrap();
        assert!((r.nochat_constant / 8.5 - 1.0).abs() < 0.05, "{r:?}");
        assert!((r.ratio / (8.5 / 4.0) - 1.0).abs() < 0.05, "{r:?}");
    }
}
