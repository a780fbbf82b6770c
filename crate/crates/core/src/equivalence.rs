//! Functional equivalences and binning.
//!
//! A pair `(s, t)` is an equivalence in variable `j` when knowing only
//! `X_j ∈ {s, t}` loses nothing about `g`. Such pairs can share a cell.
//! Binning pairs that are not equivalent leaves a distortion floor that no
//! resolution removes.

use crate::compander::{
    Compander, CompandingQuantizer, DistributedQuantizer, GeneralizedCompander, NonRegularQuantizer, ScalarQuantizer,
};
use crate::design::variable_rate_density;
use crate::distortion::simulate;
use crate::error::{Error, Result};
use crate::functions::{FunctionModel, SensitivityProfile};
use crate::sampling::{map_indices, stream_rng, Estimate, Moments, BATCH};
use crate::sources::SourceModel;

/// Values below this, or below three standard errors, count as zero.
pub const EQUIVALENCE_FLOOR: f64 = 1e-8;
/// Points per axis of the equivalence-free scan.
pub const SCAN_SIZE: usize = 64;

const EQUIVALENCE_STREAM: u64 = 3 << 40;

/// `v_j(s, t) = E[var(g(X) | X_j ∈ {s, t}, X_{-j})]` for independent sources.
pub fn equivalence_statistic(
    g: &dyn FunctionModel,
    source: &SourceModel,
    j: usize,
    s: f64,
    t: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if s == t {
        return Err(Error::Domain(format!("equivalence needs distinct points, got {s} twice")));
    }
    crate::error::check_unit(s)?;
    crate::error::check_unit(t)?;
    if !source.is_independent() {
        return Err(Error::Unsupported("equivalence statistics need independent sources".into()));
    }
    if j >= source.n() || g.arity() != source.n() {
        return Err(Error::Config(format!("variable {j} is out of range")));
    }
    let m = source.marginal(j);
    let (fs, ft) = (m.pdf(s), m.pdf(t));
    if fs + ft <= 0.0 {
        return Err(Error::Domain(format!("neither {s} nor {t} is in the support")));
    }
    let p = fs / (fs + ft);
    let n = source.n();
    let batches = mc_samples.div_ceil(BATCH).max(1);
    let parts = map_indices(batches, |b| {
        let len = if b + 1 == batches { mc_samples - b * BATCH } else { BATCH };
        let mut rng = stream_rng(seed, EQUIVALENCE_STREAM + b as u64);
        let mut x = vec![0.0; n];
        let mut acc = Moments::default();
        for _ in 0..len.max(1) {
            source.sample_into(&mut rng, &mut x);
            x[j] = s;
            let a = g.evaluate(&x);
            x[j] = t;
            let d = a - g.evaluate(&x);
            acc.push(p * (1.0 - p) * d * d);
        }
        acc
    });
    Ok(Estimate::from_batches(&parts))
}

/// Whether an estimate of `v` is zero up to noise.
pub fn is_equivalence(v: &Estimate) -> bool {
    v.mean < EQUIVALENCE_FLOOR.max(3.0 * v.stderr)
}

/// How values of one variable are paired for binning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pairing {
    /// No binning; a regular compander.
    None,
    /// `t(s) = 2c - s`.
    Mirror(f64),
}

/// Pairs checked before a binning compander is built.
const PAIRING_CHECKS: usize = 16;

/// A compander that bins the paired values and otherwise follows `λ ∝ γ`.
/// The pairing is checked with [`equivalence_statistic`] first.
pub fn build_binning_compander(
    g: &dyn FunctionModel,
    source: &SourceModel,
    profile: &SensitivityProfile,
    pairing: Pairing,
    mc_samples: usize,
    seed: u64,
) -> Result<GeneralizedCompander> {
    let j = profile.var;
    match pairing {
        Pairing::None => {
            let lambda = variable_rate_density(profile, source.marginal(j))?;
            Ok(GeneralizedCompander::monotone(Compander::new(lambda)))
        }
        Pairing::Mirror(c) => {
            let half = c.min(1.0 - c);
            for i in 0..PAIRING_CHECKS {
                let d = half * (i as f64 + 0.5) / PAIRING_CHECKS as f64;
                let v = equivalence_statistic(g, source, j, c - d, c + d, mc_samples, seed)?;
                if !is_equivalence(&v) {
                    return Err(Error::Domain(format!(
                        "{} and {} are not equivalent in variable {j}: v = {:.3e} ± {:.1e}",
                        c - d,
                        c + d,
                        v.mean,
                        v.stderr
                    )));
                }
            }
            GeneralizedCompander::mirrored(profile.curve(), c)
        }
    }
}

/// `v_j` on the midpoint grid, for pairs `s < t`.
#[derive(Debug, Clone)]
pub struct EquivalenceScan {
    pub points: Vec<f64>,
    /// Row-major over `(s, t)` with `s < t`.
    pub pairs: Vec<(f64, f64, Estimate)>,
}

impl EquivalenceScan {
    pub fn equivalences(&self) -> impl Iterator<Item = &(f64, f64, Estimate)> {
        self.pairs.iter().filter(|p| is_equivalence(&p.2))
    }

    /// No pair on the grid looks like an equivalence.
    pub fn equivalence_free(&self) -> bool {
        self.equivalences().next().is_none()
    }
}

/// Scan `size × size` midpoints for equivalences in variable `j`.
pub fn equivalence_scan(
    g: &dyn FunctionModel,
    source: &SourceModel,
    j: usize,
    size: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<EquivalenceScan> {
    let points: Vec<f64> = (0..size).map(|i| (i as f64 + 0.5) / size as f64).collect();
    let index: Vec<(usize, usize)> = (0..size).flat_map(|a| (a + 1..size).map(move |b| (a, b))).collect();
    let pairs = map_indices(index.len(), |i| {
        let (a, b) = index[i];
        let v = equivalence_statistic(g, source, j, points[a], points[b], mc_samples, seed)?;
        Ok((points[a], points[b], v))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EquivalenceScan { points, pairs })
}

/// One point of a rate sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// Bits per sample per variable.
    pub rate: f64,
    pub resolution: usize,
    pub distortion: Estimate,
}

/// Distortion against rate for one family of quantizers.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorSweep {
    pub points: Vec<SweepPoint>,
}

impl FloorSweep {
    /// The last two points are within 10% of each other.
    pub fn plateau(&self) -> bool {
        match self.points.as_slice() {
            [.., a, b] => (a.distortion.mean / b.distortion.mean - 1.0).abs() < 0.1,
            _ => false,
        }
    }

    /// Smallest per-bit reduction factor between consecutive points.
    pub fn min_drop_per_bit(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[0].distortion.mean / w[1].distortion.mean).powf(1.0 / (w[1].rate - w[0].rate)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// The compander used for one variable in a sweep.
#[derive(Debug, Clone)]
pub enum SweepCompander {
    Regular(Compander),
    Binned(GeneralizedCompander),
}

impl SweepCompander {
    fn quantizer(&self, k: usize) -> Result<ScalarQuantizer> {
        Ok(match self {
            Self::Regular(c) => ScalarQuantizer::Regular(CompandingQuantizer::new(c.clone(), k)?),
            Self::Binned(c) => ScalarQuantizer::NonRegular(NonRegularQuantizer::new(c.clone(), k)?),
        })
    }
}

/// Simulate `K = ⌊2^R⌋` cells per variable with the given companders.
pub fn compander_sweep(
    g: &dyn FunctionModel,
    source: &SourceModel,
    companders: &[SweepCompander],
    rates: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FloorSweep> {
    let points = rates
        .iter()
        .map(|&r| {
            let k = r.exp2().floor() as usize;
            let parts = companders.iter().map(|c| c.quantizer(k)).collect::<Result<Vec<_>>>()?;
            let dq = DistributedQuantizer::from_parts(parts)?;
            let emp = simulate(&dq, source, g, samples, seed)?;
            Ok(SweepPoint { rate: r, resolution: k, distortion: emp.estimate })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FloorSweep { points })
}

/// Binned and regular sweeps for an equivalence-free `g`.
#[derive(Debug, Clone)]
pub struct FloorDemo {
    pub scan: EquivalenceScan,
    pub binned: FloorSweep,
    pub regular: FloorSweep,
}

/// Force mirror binning about `center` in variable `j` of an
/// equivalence-free `g` and compare with the regular `λ ∝ γ` design.
#[allow(clippy::too_many_arguments)]
pub fn distortion_floor_demo(
    g: &dyn FunctionModel,
    source: &SourceModel,
    profiles: &[SensitivityProfile],
    j: usize,
    center: f64,
    rates: &[f64],
    samples: usize,
    seed: u64,
) -> Result<FloorDemo> {
    let scan = equivalence_scan(g, source, j, SCAN_SIZE, 1 << 12, seed)?;
    if !scan.equivalence_free() {
        return Err(Error::Domain(format!("variable {j} has functional equivalences")));
    }
    let regular: Vec<SweepCompander> = profiles
        .iter()
        .map(|p| Ok(SweepCompander::Regular(Compander::new(variable_rate_density(p, source.marginal(p.var))?))))
        .collect::<Result<_>>()?;
    let mut binned = regular.clone();
    binned[j] = SweepCompander::Binned(GeneralizedCompander::mirrored(profiles[j].curve(), center)?);
    Ok(FloorDemo {
        scan,
        binned: compander_sweep(g, source, &binned, rates, samples, seed)?,
        regular: compander_sweep(g, source, &regular, rates, samples, seed)?,
    })
}
