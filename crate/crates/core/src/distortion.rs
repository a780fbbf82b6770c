//! Predicted and simulated functional distortion.

use std::collections::HashMap;

use crate::compander::DistributedQuantizer;
use crate::design::{Regime, VariableTerms};
use crate::error::{Error, Result};
use crate::functions::FunctionModel;
use crate::numeric::{merge_breaks, GL8_NODES, GL8_WEIGHTS};
use crate::sampling::{map_batches, map_indices, stream_rng, Estimate, Moments, TRAINING_STREAM};
use crate::sources::SourceModel;

/// Largest product-cell count for which per-cell tables are built.
pub const MAX_TABLE_CELLS: f64 = (1u64 << 24) as f64;
/// MC cells with fewer training hits fall back to `g` at the cell representative.
pub const MIN_CELL_HITS: u32 = 8;
/// Most coordinates integrated numerically for one cell.
const MAX_ACTIVE_DIMS: usize = 3;

/// `Σ_j E[(γ_j/λ_j)²] / (12 K_j²)` for given per-variable resolutions.
pub fn hr_distortion_resolutions(terms: &[VariableTerms], resolutions: &[f64]) -> f64 {
    terms
        .iter()
        .zip(resolutions)
        .map(|(t, k)| t.mean_sq_ratio / (12.0 * k * k))
        .sum()
}

/// `Σ_j E[(γ_j/λ_j)²] / (12 K^{2α_j})`.
pub fn hr_distortion_resolution(terms: &[VariableTerms], alpha: &[f64], k: f64) -> f64 {
    let ks: Vec<f64> = alpha.iter().map(|a| k.powf(*a)).collect();
    hr_distortion_resolutions(terms, &ks)
}

/// High-resolution distortion at total rate `R` for the regime's rate accounting.
///
/// Fixed: `K = 2^R`. Variable: `K_j = 2^{α_j R - h_j - E log λ_j}`.
/// Slepian–Wolf: `K = 2^{R - h(X) - Σ E log λ_k}`.
pub fn hr_distortion_rate(regime: Regime, terms: &[VariableTerms], joint_entropy: f64, alpha: &[f64], rate: f64) -> f64 {
    let log_k: Vec<f64> = match regime {
        Regime::Fixed => alpha.iter().map(|a| a * rate).collect(),
        Regime::Variable => alpha
            .iter()
            .zip(terms)
            .map(|(a, t)| a * rate - t.entropy - t.e_log_lambda)
            .collect(),
        Regime::SlepianWolf => {
            let eff = rate - joint_entropy - terms.iter().map(|t| t.e_log_lambda).sum::<f64>();
            alpha.iter().map(|a| a * eff).collect()
        }
    };
    terms
        .iter()
        .zip(log_k)
        .map(|(t, lk)| t.mean_sq_ratio / 12.0 * (-2.0 * lk).exp2())
        .sum()
}

/// How conditional means are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorMode {
    /// Tensor Gauss–Legendre quadrature over each cell; `n <= 3`.
    Numeric,
    /// Per-cell averages of a training sample.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, Default)]
struct CellStat {
    sum: f64,
    hits: u32,
}

#[derive(Debug)]
enum Kind {
    Numeric { table: Option<Vec<(f64, bool)>> },
    Table { cells: HashMap<Box<[usize]>, CellStat> },
}

/// The optimal decoder `ĝ(cell) = E[g(X) | X ∈ cell]`.
#[derive(Debug)]
pub struct Estimator<'a> {
    dq: &'a DistributedQuantizer,
    source: &'a SourceModel,
    g: &'a dyn FunctionModel,
    kind: Kind,
    radix: Vec<u128>,
}

/// Build the estimator. In numeric mode small cell counts are tabulated up
/// front; larger ones are integrated on demand.
pub fn estimator<'a>(
    dq: &'a DistributedQuantizer,
    source: &'a SourceModel,
    g: &'a dyn FunctionModel,
    mode: EstimatorMode,
) -> Result<Estimator<'a>> {
    let n = dq.n();
    if source.n() != n || g.arity() != n {
        return Err(Error::Config(format!(
            "quantizer has {n} variables, source {}, function {}",
            source.n(),
            g.arity()
        )));
    }
    // Mixed-radix cell indices; only needed for tabulation, so a product
    // count beyond u128 is fine for the Monte Carlo table.
    let radix = cell_radix(dq);
    if radix.is_none() && mode == EstimatorMode::Numeric {
        return Err(Error::Resolution("too many product cells to index".into()));
    }
    let radix = radix.unwrap_or_default();
    let mut est = Estimator { dq, source, g, kind: Kind::Numeric { table: None }, radix };
    match mode {
        EstimatorMode::Numeric => {
            if n > 3 {
                return Err(Error::Unsupported("numeric conditional means need n <= 3".into()));
            }
        }
        EstimatorMode::MonteCarlo { samples, seed } => {
            let parts = map_batches(samples, |b, len| {
                let mut rng = stream_rng(seed, TRAINING_STREAM + b);
                let mut x = vec![0.0; n];
                let mut c = vec![0usize; n];
                let mut local: HashMap<Box<[usize]>, CellStat> = HashMap::new();
                for _ in 0..len {
                    source.sample_into(&mut rng, &mut x);
                    dq.cells_into(&x, &mut c);
                    if !local.contains_key(c.as_slice()) {
                        local.insert(c.clone().into_boxed_slice(), CellStat::default());
                    }
                    let e = local.get_mut(c.as_slice()).expect("just inserted");
                    e.sum += g.evaluate(&x);
                    e.hits += 1;
                }
                local
            });
            let mut cells: HashMap<Box<[usize]>, CellStat> = HashMap::new();
            for part in parts {
                for (k, v) in part {
                    let e = cells.entry(k).or_default();
                    e.sum += v.sum;
                    e.hits += v.hits;
                }
            }
            est.kind = Kind::Table { cells };
        }
    }
    Ok(est)
}

fn cell_radix(dq: &DistributedQuantizer) -> Option<Vec<u128>> {
    let n = dq.n();
    let mut radix = vec![1u128; n];
    for j in (0..n.saturating_sub(1)).rev() {
        radix[j] = radix[j + 1].checked_mul(dq.parts()[j + 1].levels() as u128)?;
    }
    radix[0].checked_mul(dq.parts()[0].levels() as u128)?;
    Some(radix)
}

impl<'a> Estimator<'a> {
    fn key(&self, cells: &[usize]) -> u128 {
        cells.iter().zip(&self.radix).map(|(&c, &r)| c as u128 * r).sum()
    }

    fn unkey(&self, mut key: u128) -> Vec<usize> {
        self.radix
            .iter()
            .map(|&r| {
                let c = key / r;
                key %= r;
                c as usize
            })
            .collect()
    }

    /// Tabulate every cell in numeric mode when the product count is modest.
    pub fn precompute(mut self, max_cells: f64) -> Self {
        if let Kind::Numeric { table: None } = self.kind {
            let total = self.dq.product_cells();
            if total <= max_cells.min(MAX_TABLE_CELLS) {
                let count = total as usize;
                // Few cells: afford extra subdivision for kinks of g inside a cell.
                let sub = if count <= 1 << 12 { 4 } else { 1 };
                let table = map_indices(count, |i| {
                    let cells = self.unkey(i as u128);
                    self.numeric_value(&cells, sub)
                });
                self.kind = Kind::Numeric { table: Some(table) };
            }
        }
        self
    }

    fn fallback(&self, cells: &[usize]) -> f64 {
        let x: Vec<f64> = cells
            .iter()
            .zip(self.dq.parts())
            .map(|(&c, q)| q.representative(c))
            .collect();
        self.g.evaluate(&x)
    }

    /// Exact conditional mean from the partial bounds of `g` on the cell.
    /// Where every partial is constant `g` is affine and `E[g | cell] =
    /// g(E[X | cell])`; otherwise coordinates whose partial vanishes on the
    /// whole cell are held fixed and only the rest are integrated.
    fn structured_value(&self, cells: &[usize], sub: usize) -> Option<f64> {
        if !self.g.exact_partial_bounds() || !self.source.is_independent() {
            return None;
        }
        let boxes: Vec<(f64, f64)> = cells
            .iter()
            .zip(self.dq.parts())
            .map(|(&c, q)| match q.regions(c).as_slice() {
                [r] => Some(*r),
                _ => None,
            })
            .collect::<Option<_>>()?;
        let bounds: Vec<_> = (0..boxes.len()).map(|j| self.g.partial_bounds(j, &boxes)).collect();
        if bounds.iter().all(|b| b.everywhere_defined && b.inf == b.sup) {
            let mut x = Vec::with_capacity(boxes.len());
            for (j, &(a, b)) in boxes.iter().enumerate() {
                x.push(if bounds[j].inf == 0.0 { a } else { self.conditional_mean(j, a, b)? });
            }
            return Some(self.g.evaluate(&x));
        }
        let active: Vec<bool> = bounds.iter().map(|b| !(b.everywhere_defined && b.inf == 0.0 && b.sup == 0.0)).collect();
        if active.iter().filter(|&&a| a).count() > MAX_ACTIVE_DIMS {
            return None;
        }
        match self.quadrature(cells, sub, Some(&active)) {
            (v, false) => Some(v),
            _ => None,
        }
    }

    fn conditional_mean(&self, j: usize, a: f64, b: f64) -> Option<f64> {
        let m = self.source.marginal(j);
        let mut edges = vec![a];
        edges.extend(m.breaks().into_iter().filter(|&s| s > a && s < b));
        edges.push(b);
        let (mut num, mut den) = (0.0, 0.0);
        for w in edges.windows(2) {
            let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            for (t, wt) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                let xv = mid + half * t;
                let f = wt * half * m.pdf(xv);
                num += f * xv;
                den += f;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    fn numeric_value(&self, cells: &[usize], sub: usize) -> (f64, bool) {
        if let Some(v) = self.structured_value(cells, sub) {
            return (v, false);
        }
        self.quadrature(cells, sub, None)
    }

    /// Tensor Gauss–Legendre over the cell; coordinates not marked `active`
    /// sit at their codeword.
    fn quadrature(&self, cells: &[usize], sub: usize, active: Option<&[bool]>) -> (f64, bool) {
        let n = cells.len();
        let nodes: Vec<Vec<(f64, f64)>> = cells
            .iter()
            .zip(self.dq.parts())
            .enumerate()
            .map(|(j, (&c, q))| {
                if active.is_some_and(|a| !a[j]) {
                    return vec![(q.representative(c), 1.0)];
                }
                let mut splits = self.source.breaks(j);
                splits.extend(self.g.jumps(j));
                let splits = merge_breaks(&[&splits]);
                let mut pts = Vec::new();
                for (a, b) in q.regions(c) {
                    let mut edges = vec![a];
                    edges.extend(splits.iter().copied().filter(|&s| s > a && s < b));
                    edges.push(b);
                    for w in edges.windows(2) {
                        let step = (w[1] - w[0]) / sub as f64;
                        for s in 0..sub {
                            let lo = w[0] + s as f64 * step;
                            let (mid, half) = (lo + 0.5 * step, 0.5 * step);
                            for (t, wt) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
                                pts.push((mid + half * t, wt * half));
                            }
                        }
                    }
                }
                pts
            })
            .collect();
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        let (mut num, mut den) = (0.0, 0.0);
        'outer: loop {
            let mut w = 1.0;
            for d in 0..n {
                let (xv, wv) = nodes[d][idx[d]];
                x[d] = xv;
                w *= wv;
            }
            let wf = w * self.source.joint_pdf(&x);
            if wf > 0.0 {
                num += wf * self.g.evaluate(&x);
                den += wf;
            }
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < nodes[d].len() {
                    continue 'outer;
                }
                idx[d] = 0;
            }
            break;
        }
        if den > 0.0 {
            (num / den, false)
        } else {
            (self.fallback(cells), true)
        }
    }

    /// `ĝ` for a product cell, and whether a fallback was used.
    pub fn value(&self, cells: &[usize]) -> (f64, bool) {
        match &self.kind {
            Kind::Numeric { table: Some(t) } => t[self.key(cells) as usize],
            Kind::Numeric { table: None } => self.numeric_value(cells, 1),
            Kind::Table { cells: map } => {
                if let Some(v) = self.structured_value(cells, 1) {
                    return (v, false);
                }
                match map.get(cells) {
                    Some(s) if s.hits >= MIN_CELL_HITS => (s.sum / s.hits as f64, false),
                    _ => (self.fallback(cells), true),
                }
            }
        }
    }

    /// Every cell's value in mixed-radix order (last variable fastest).
    pub fn table(&self) -> Result<Vec<(f64, bool)>> {
        let total = self.dq.product_cells();
        if total > MAX_TABLE_CELLS {
            return Err(Error::Resolution(format!("{total} cells exceed the table limit")));
        }
        Ok(map_indices(total as usize, |i| self.value(&self.unkey(i as u128))))
    }
}

/// Monte Carlo estimate of `E[(g(X) - ĝ(Q(X)))²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalDistortion {
    pub estimate: Estimate,
    /// Share of samples whose cell used the fallback estimate.
    pub flagged_fraction: f64,
}

impl EmpiricalDistortion {
    pub fn mean(&self) -> f64 {
        self.estimate.mean
    }

    pub fn stderr(&self) -> f64 {
        self.estimate.stderr
    }
}

pub fn empirical_distortion(
    dq: &DistributedQuantizer,
    source: &SourceModel,
    g: &dyn FunctionModel,
    est: &Estimator<'_>,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalDistortion> {
    if samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let n = dq.n();
    let parts = map_batches(samples, |b, len| {
        let mut rng = stream_rng(seed, b);
        let mut x = vec![0.0; n];
        let mut c = vec![0usize; n];
        let mut m = Moments::default();
        let mut flagged = 0usize;
        for _ in 0..len {
            source.sample_into(&mut rng, &mut x);
            dq.cells_into(&x, &mut c);
            let (ghat, flag) = est.value(&c);
            flagged += flag as usize;
            let e = g.evaluate(&x) - ghat;
            m.push(e * e);
        }
        (m, flagged)
    });
    let moments: Vec<Moments> = parts.iter().map(|p| p.0).collect();
    let flagged: usize = parts.iter().map(|p| p.1).sum();
    let estimate = Estimate::from_batches(&moments);
    if !estimate.mean.is_finite() {
        return Err(Error::Numeric("empirical distortion is not finite".into()));
    }
    Ok(EmpiricalDistortion { estimate, flagged_fraction: flagged as f64 / samples as f64 })
}

/// Build the estimator that suits the dimension and simulate.
pub fn simulate(
    dq: &DistributedQuantizer,
    source: &SourceModel,
    g: &dyn FunctionModel,
    samples: usize,
    seed: u64,
) -> Result<EmpiricalDistortion> {
    let est = if dq.n() <= 3 {
        estimator(dq, source, g, EstimatorMode::Numeric)?.precompute(samples as f64 / 4.0)
    } else {
        estimator(dq, source, g, EstimatorMode::MonteCarlo { samples, seed })?
    };
    empirical_distortion(dq, source, g, &est, samples, seed)
}

/// Predicted versus simulated distortion at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub regime: Regime,
    pub rate: f64,
    pub resolutions: Vec<usize>,
    pub d_hr: f64,
    pub d_emp: f64,
    pub stderr: f64,
    pub ratio: f64,
    pub flagged_fraction: f64,
}

impl DistortionReport {
    pub fn new(regime: Regime, rate: f64, resolutions: Vec<usize>, d_hr: f64, emp: &EmpiricalDistortion) -> Self {
        Self {
            regime,
            rate,
            resolutions,
            d_hr,
            d_emp: emp.mean(),
            stderr: emp.stderr(),
            ratio: emp.mean() / d_hr,
            flagged_fraction: emp.flagged_fraction,
        }
    }
}

/// Bounds on `var(g(X) | X ∈ S)` for a box `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceBounds {
    pub lower: f64,
    pub upper: f64,
}

/// `Σ a_j² Δ_j² / 12` and `Σ b_j² Δ_j² / 12`, scaled by the extremes of the
/// conditional density times the cell volume. `a_j` is zero when the partial
/// is undefined somewhere in the cell.
pub fn cell_variance_bounds(g: &dyn FunctionModel, source: &SourceModel, cell: &[(f64, f64)]) -> Result<VarianceBounds> {
    let n = cell.len();
    if n != g.arity() || n != source.n() {
        return Err(Error::Config("cell dimension mismatch".into()));
    }
    let lo: Vec<f64> = cell.iter().map(|c| c.0).collect();
    let hi: Vec<f64> = cell.iter().map(|c| c.1).collect();
    let p = source.prob_box(&lo, &hi);
    if !(p > 0.0) {
        return Err(Error::Domain("cell has zero probability".into()));
    }
    let vol: f64 = cell.iter().map(|(a, b)| b - a).product();
    let per = 9usize;
    let mut x = vec![0.0; n];
    let (mut fmin, mut fmax) = (f64::INFINITY, 0.0f64);
    for t in 0..per.pow(n as u32) {
        let mut c = t;
        for (d, &(a, b)) in cell.iter().enumerate() {
            x[d] = a + (b - a) * (c % per) as f64 / (per - 1) as f64;
            c /= per;
        }
        let f = source.joint_pdf(&x);
        fmin = fmin.min(f);
        fmax = fmax.max(f);
    }
    let (mut lower, mut upper) = (0.0, 0.0);
    for (j, &(a, b)) in cell.iter().enumerate() {
        let pb = g.partial_bounds(j, cell);
        let d2 = (b - a) * (b - a) / 12.0;
        if pb.everywhere_defined {
            lower += pb.inf * pb.inf * d2;
        }
        upper += pb.sup * pb.sup * d2;
    }
    Ok(VarianceBounds { lower: lower * fmin * vol / p, upper: upper * fmax * vol / p })
}

/// `var(g(X) | X ∈ S)` by subdivided tensor Gauss–Legendre quadrature.
pub fn cell_variance(g: &dyn FunctionModel, source: &SourceModel, cell: &[(f64, f64)]) -> f64 {
    let n = cell.len();
    let split = match n {
        1 => 64,
        2 => 12,
        _ => 4,
    };
    let axes: Vec<Vec<(f64, f64)>> = cell
        .iter()
        .map(|&(a, b)| {
            let h = (b - a) / split as f64;
            (0..split)
                .flat_map(|s| {
                    let mid = a + (s as f64 + 0.5) * h;
                    GL8_NODES
                        .iter()
                        .zip(GL8_WEIGHTS)
                        .map(move |(t, w)| (mid + 0.5 * h * t, 0.5 * h * w))
                })
                .collect()
        })
        .collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    'outer: loop {
        let mut w = 1.0;
        for d in 0..n {
            x[d] = axes[d][idx[d]].0;
            w *= axes[d][idx[d]].1;
        }
        points.push((w * source.joint_pdf(&x), g.evaluate(&x)));
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    let m0: f64 = points.iter().map(|p| p.0).sum();
    let mean = points.iter().map(|p| p.0 * p.1).sum::<f64>() / m0;
    points.iter().map(|p| p.0 * (p.1 - mean).powi(2)).sum::<f64>() / m0
}
