//! Exact and high-resolution rate accounting.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::compander::{
    marginal_resolution, Compander, CompandingQuantizer, DistributedQuantizer, PointDensity, ScalarQuantizer,
};
use crate::design::Regime;
use crate::error::{Error, Result};
use crate::sampling::map_indices;
use crate::sources::{Marginal, SourceModel};

/// Largest product-cell count enumerated for a joint entropy.
pub const MAX_JOINT_CELLS: f64 = (1u64 << 24) as f64;
const MAX_LINEAR_SCAN: f64 = (1u64 << 16) as f64;
/// Above this `K` is no longer an exact integer and the bisection runs on `log K`.
/// Searches expected to exceed `2^SEEDED_SEARCH_BITS` start near the estimate.
const SEEDED_SEARCH_BITS: f64 = 24.0;
const EXACT_INTEGERS: f64 = (1u64 << 53) as f64;

/// `-Σ p log₂ p`, skipping zero cells.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

/// Exact probability of each cell under a marginal.
pub fn cell_probabilities(q: &ScalarQuantizer, marginal: &Marginal) -> Vec<f64> {
    (0..q.levels())
        .map(|i| {
            q.regions(i)
                .iter()
                .map(|&(a, b)| (marginal.cdf(b) - marginal.cdf(a)).max(0.0))
                .sum()
        })
        .collect()
}

/// `H(Q(X_j))` from cdf differences.
pub fn output_entropy(q: &ScalarQuantizer, source: &SourceModel, j: usize) -> f64 {
    entropy_bits(&cell_probabilities(q, source.marginal(j)))
}

/// `h(X_j) + log₂ K + E[log₂ λ(X_j)]`.
pub fn hr_entropy(lambda: &PointDensity, source: &SourceModel, j: usize, k: f64) -> Result<f64> {
    let m = source.marginal(j);
    let breaks = crate::numeric::merge_breaks(&[lambda.breaks(), &m.breaks()]);
    let ell = m.expect(|x| lambda.eval(x).log2(), &breaks);
    if !ell.is_finite() {
        return Err(Error::Numeric(format!("E[log λ_{j}] diverges; use a don't-care design")));
    }
    Ok(m.entropy() + k.log2() + ell)
}

/// Joint entropy of the product cells. Independent sources reduce to the sum
/// of marginal entropies; grid joints are enumerated exactly.
pub fn joint_entropy(dq: &DistributedQuantizer, source: &SourceModel) -> Result<f64> {
    if source.n() != dq.n() {
        return Err(Error::Config("quantizer and source dimensions differ".into()));
    }
    if source.is_independent() {
        return Ok((0..dq.n()).map(|j| output_entropy(&dq.parts()[j], source, j)).sum());
    }
    let total = dq.product_cells();
    if total > MAX_JOINT_CELLS {
        return Err(Error::Resolution(format!("{total} product cells exceed the joint entropy limit")));
    }
    let regions: Vec<Vec<Vec<(f64, f64)>>> = dq
        .parts()
        .iter()
        .map(|q| (0..q.levels()).map(|i| q.regions(i)).collect())
        .collect();
    let levels = dq.resolutions();
    let n = dq.n();
    let first = levels[0];
    let rest: usize = levels[1..].iter().product();
    let parts = map_indices(first, |c0| {
        let mut h = 0.0;
        let mut idx = vec![0usize; n];
        idx[0] = c0;
        for r in 0..rest {
            let mut t = r;
            for d in (1..n).rev() {
                idx[d] = t % levels[d];
                t /= levels[d];
            }
            let p = box_union_probability(source, &regions, &idx);
            if p > 0.0 {
                h -= p * p.log2();
            }
        }
        h
    });
    Ok(parts.iter().sum())
}

fn box_union_probability(source: &SourceModel, regions: &[Vec<Vec<(f64, f64)>>], idx: &[usize]) -> f64 {
    let n = idx.len();
    let lists: Vec<&Vec<(f64, f64)>> = (0..n).map(|d| &regions[d][idx[d]]).collect();
    let mut pick = vec![0usize; n];
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut total = 0.0;
    'outer: loop {
        for d in 0..n {
            (lo[d], hi[d]) = lists[d][pick[d]];
        }
        total += source.prob_box(&lo, &hi);
        for d in (0..n).rev() {
            pick[d] += 1;
            if pick[d] < lists[d].len() {
                continue 'outer;
            }
            pick[d] = 0;
        }
        break;
    }
    total
}

/// Outcome of a resolution search.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionSearch {
    pub k: f64,
    pub resolutions: Vec<usize>,
    /// Rate actually used at `k`.
    pub rate: f64,
    /// True when a non-monotone entropy forced a linear scan.
    pub linear_scan: bool,
}

struct RateFamily<'a> {
    regime: Regime,
    companders: Vec<Compander>,
    source: &'a SourceModel,
    alpha: &'a [f64],
    marginal_cache: Mutex<HashMap<(usize, usize), f64>>,
}

impl<'a> RateFamily<'a> {
    fn resolutions(&self, k: f64) -> Vec<usize> {
        self.alpha.iter().map(|&a| marginal_resolution(k, a)).collect()
    }

    fn rate(&self, k: f64) -> Result<f64> {
        let ks = self.resolutions(k);
        if ks.contains(&0) {
            return Err(Error::Resolution("a variable would get no cells".into()));
        }
        match self.regime {
            Regime::Fixed => Ok(k.log2()),
            Regime::Variable => {
                let mut total = 0.0;
                for (j, &kj) in ks.iter().enumerate() {
                    if let Some(h) = self.marginal_cache.lock().expect("cache lock").get(&(j, kj)) {
                        total += h;
                        continue;
                    }
                    let q = ScalarQuantizer::Regular(CompandingQuantizer::new(self.companders[j].clone(), kj)?);
                    let h = output_entropy(&q, self.source, j);
                    self.marginal_cache.lock().expect("cache lock").insert((j, kj), h);
                    total += h;
                }
                Ok(total)
            }
            Regime::SlepianWolf => {
                let dq = DistributedQuantizer::from_parts(
                    ks.iter()
                        .zip(&self.companders)
                        .map(|(&kj, c)| Ok(ScalarQuantizer::Regular(CompandingQuantizer::new(c.clone(), kj)?)))
                        .collect::<Result<Vec<_>>>()?,
                )?;
                joint_entropy(&dq, self.source)
            }
        }
    }
}

/// Largest `K` whose rate does not exceed `rate`.
///
/// Fixed rate: `⌊2^R⌋`. Otherwise an exponential search brackets `K` and a
/// bisection finishes; if the entropy decreased anywhere along the stride
/// the bracket is scanned linearly instead. Past `2^53` the bisection runs on
/// `log K` and stops once the per-variable resolutions are pinned down.
pub fn resolution_for_rate(
    regime: Regime,
    densities: &[PointDensity],
    source: &SourceModel,
    alpha: &[f64],
    rate: f64,
) -> Result<ResolutionSearch> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::Config(format!("rate must be nonnegative, got {rate}")));
    }
    if densities.len() != alpha.len() || densities.len() != source.n() {
        return Err(Error::Config("need one density and one allocation per variable".into()));
    }
    let fam = RateFamily {
        regime,
        companders: densities.iter().cloned().map(Compander::new).collect(),
        source,
        alpha,
        marginal_cache: Mutex::new(HashMap::new()),
    };
    if regime == Regime::Fixed {
        let k = rate.exp2().floor();
        return Ok(ResolutionSearch { k, resolutions: fam.resolutions(k), rate: k.log2(), linear_scan: false });
    }
    let mut lo = 1.0;
    let mut lo_rate = fam.rate(1.0)?;
    if lo_rate > rate {
        return Err(Error::Resolution(format!("rate {rate} is below the rate of a single cell")));
    }
    // Large K: start the doubling a few octaves below the high-resolution
    // estimate rather than at 1, if that point is feasible.
    if let Ok(log_k) = hr_log_resolution(regime, densities, source, rate) {
        if log_k > SEEDED_SEARCH_BITS {
            let seed = (log_k - 2.0).floor().exp2();
            let r = fam.rate(seed)?;
            if r <= rate {
                lo = seed;
                lo_rate = r;
            }
        }
    }
    let mut hi = 2.0 * lo;
    let mut nonmonotone = false;
    loop {
        let r = fam.rate(hi)?;
        if r > rate {
            break;
        }
        nonmonotone |= r < lo_rate - 1e-12;
        lo = hi;
        lo_rate = r;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Resolution("resolution search diverged".into()));
        }
    }
    if nonmonotone && hi - lo <= MAX_LINEAR_SCAN {
        let mut best = lo;
        let mut k = lo;
        while k < hi {
            if fam.rate(k)? <= rate {
                best = k;
            }
            k += 1.0;
        }
        let r = fam.rate(best)?;
        return Ok(ResolutionSearch { k: best, resolutions: fam.resolutions(best), rate: r, linear_scan: true });
    }
    if hi <= EXACT_INTEGERS {
        while hi - lo > 1.0 {
            let mid = lo + ((hi - lo) / 2.0).floor();
            if fam.rate(mid)? <= rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    } else {
        // Per-variable resolutions are piecewise constant in K, so stop once
        // the bracket no longer changes them or cannot shrink further.
        while fam.resolutions(lo) != fam.resolutions(hi) {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if fam.rate(mid)? <= rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let r = fam.rate(lo)?;
    Ok(ResolutionSearch { k: lo, resolutions: fam.resolutions(lo), rate: r, linear_scan: false })
}

/// Largest `k` in `1..=max` with `h(k) <= budget`, searching outward from
/// `guess` in doubling steps and then bisecting. Assumes `h` nondecreasing.
pub fn largest_within(h: impl Fn(usize) -> Result<f64>, budget: f64, guess: usize, max: usize) -> Result<usize> {
    let guess = guess.clamp(1, max);
    let (mut lo, mut hi);
    let mut step = 1;
    if h(guess)? <= budget {
        lo = guess;
        loop {
            if lo == max {
                return Ok(max);
            }
            let next = (lo + step).min(max);
            if h(next)? > budget {
                hi = next;
                break;
            }
            lo = next;
            step *= 2;
        }
    } else {
        hi = guess;
        loop {
            let next = hi.saturating_sub(step).max(1);
            if h(next)? <= budget {
                lo = next;
                break;
            }
            if next == 1 {
                return Err(Error::Resolution(format!("budget {budget} is below the rate of a single cell")));
            }
            hi = next;
            step *= 2;
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if h(mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `log₂ K` predicted by the high-resolution rate approximation.
pub fn hr_log_resolution(regime: Regime, densities: &[PointDensity], source: &SourceModel, rate: f64) -> Result<f64> {
    match regime {
        Regime::Fixed => Ok(rate),
        Regime::Variable | Regime::SlepianWolf => {
            let mut offset = if regime == Regime::Variable {
                (0..source.n()).map(|j| source.marginal_entropy(j)).sum::<f64>()
            } else {
                source.joint_entropy()
            };
            for (j, d) in densities.iter().enumerate() {
                offset += hr_entropy(d, source, j, 1.0)? - source.marginal_entropy(j);
            }
            Ok(rate - offset)
        }
    }
}

/// `⌊2^{log K^HR}⌋`.
pub fn hr_resolution_for_rate(regime: Regime, densities: &[PointDensity], source: &SourceModel, rate: f64) -> Result<f64> {
    Ok(hr_log_resolution(regime, densities, source, rate)?.exp2().floor())
}

/// Exact versus high-resolution rate for one quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub regime: Regime,
    pub k: f64,
    pub exact_bits: f64,
    pub hr_bits: f64,
    pub gap: f64,
}

pub fn rate_report(
    regime: Regime,
    dq: &DistributedQuantizer,
    densities: &[PointDensity],
    source: &SourceModel,
) -> Result<RateReport> {
    let k = dq.total_resolution();
    let (exact, hr) = match regime {
        Regime::Fixed => (dq.product_cells().log2(), dq.product_cells().log2()),
        Regime::Variable => {
            let mut exact = 0.0;
            let mut hr = 0.0;
            for (j, (q, d)) in dq.parts().iter().zip(densities).enumerate() {
                exact += output_entropy(q, source, j);
                hr += hr_entropy(d, source, j, q.levels() as f64)?;
            }
            (exact, hr)
        }
        Regime::SlepianWolf => {
            let exact = joint_entropy(dq, source)?;
            let mut hr = source.joint_entropy();
            for (j, (q, d)) in dq.parts().iter().zip(densities).enumerate() {
                hr += hr_entropy(d, source, j, q.levels() as f64)? - source.marginal_entropy(j);
            }
            (exact, hr)
        }
    };
    Ok(RateReport { regime, k, exact_bits: exact, hr_bits: hr, gap: exact - hr })
}
