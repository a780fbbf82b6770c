//! Source models on the unit cube.

use std::f64::consts::LN_2;
use std::sync::Arc;

use rand::Rng;

use crate::error::{check_unit, Error, Result};
use crate::numeric::{integrate_split, integrate_unit, Curve};

const CDF_TABLE: usize = 1 << 14;

/// A density on `[0, 1]`.
#[derive(Debug, Clone)]
pub enum Marginal {
    Uniform,
    /// `f(x) = (k + 1) x^k` for `k > -1`.
    Power { k: f64 },
    /// Equal-width bins carrying the given probabilities.
    Piecewise { probs: Vec<f64> },
    Custom(CustomMarginal),
}

/// A user density with a tabulated cdf.
#[derive(Debug, Clone)]
pub struct CustomMarginal {
    pdf: Curve,
    table: Arc<Vec<f64>>,
    node_pdf: Arc<Vec<f64>>,
}

impl CustomMarginal {
    /// Within a table segment the cdf follows the integral of the linear
    /// interpolant of the density, rescaled to the exact segment mass.
    fn shape(&self, i: usize) -> (f64, f64) {
        let h = 1.0 / CDF_TABLE as f64;
        let mass = self.table[i + 1] - self.table[i];
        let (mut p0, mut p1) = (self.node_pdf[i], self.node_pdf[i + 1]);
        if !(p0.is_finite() && p1.is_finite()) {
            p0 = mass / h;
            p1 = p0;
        }
        (p0, p1)
    }

    fn cdf(&self, x: f64) -> f64 {
        let h = 1.0 / CDF_TABLE as f64;
        let i = ((x / h).floor() as usize).min(CDF_TABLE - 1);
        let t = x - i as f64 * h;
        let mass = self.table[i + 1] - self.table[i];
        let (p0, p1) = self.shape(i);
        let q = |t: f64| p0 * t + (p1 - p0) * t * t / (2.0 * h);
        let qh = q(h);
        let frac = if qh > 0.0 { q(t) / qh } else { t / h };
        (self.table[i] + mass * frac.clamp(0.0, 1.0)).min(1.0)
    }

    fn inverse(&self, u: f64) -> f64 {
        let h = 1.0 / CDF_TABLE as f64;
        let i = self.table.partition_point(|&t| t < u).clamp(1, CDF_TABLE) - 1;
        let mass = self.table[i + 1] - self.table[i];
        if mass <= 0.0 {
            return i as f64 * h;
        }
        let (p0, p1) = self.shape(i);
        let qh = p0 * h + (p1 - p0) * h / 2.0;
        let target = (u - self.table[i]) / mass;
        let t = if qh <= 0.0 {
            target * h
        } else {
            // Solve a t² + p0 t - target·qh = 0 for t in [0, h].
            let a = (p1 - p0) / (2.0 * h);
            let c = target * qh;
            if c <= 0.0 {
                0.0
            } else if a.abs() < 1e-300 {
                c / p0
            } else {
                2.0 * c / (p0 + (p0 * p0 + 4.0 * a * c).max(0.0).sqrt())
            }
        };
        (i as f64 * h + t.clamp(0.0, h)).clamp(0.0, 1.0)
    }
}

impl Marginal {
    pub fn power(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > -1.0) {
            return Err(Error::Config(format!("power source needs k > -1, got {k}")));
        }
        Ok(Self::Power { k })
    }

    pub fn piecewise(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("piecewise source needs finite nonnegative probabilities".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("piecewise probabilities sum to {total}, not 1")));
        }
        Ok(Self::Piecewise { probs })
    }

    /// Build a density from an unnormalized nonnegative function. The total mass
    /// must already be 1 to within 1e-6; it is then normalized exactly.
    pub fn custom(pdf: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Result<Self> {
        let raw = Curve::new(pdf, breaks);
        let mass = raw.integral();
        if !mass.is_finite() || (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("custom density integrates to {mass}, not 1")));
        }
        let breaks = raw.breaks().to_vec();
        let pdf = Curve::new(move |x| raw.eval(x).max(0.0) / mass, breaks);
        let step = 1.0 / CDF_TABLE as f64;
        let mut table = Vec::with_capacity(CDF_TABLE + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for i in 0..CDF_TABLE {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            acc += integrate_split(|x| pdf.eval(x), a, b, pdf.breaks());
            table.push(acc);
        }
        let last = acc;
        table.iter_mut().for_each(|t| *t /= last);
        let node_pdf = (0..=CDF_TABLE).map(|i| pdf.eval(i as f64 * step) / last).collect();
        Ok(Self::Custom(CustomMarginal { pdf, table: Arc::new(table), node_pdf: Arc::new(node_pdf) }))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform => 1.0,
            Self::Power { k } => (k + 1.0) * x.powf(*k),
            Self::Piecewise { probs } => {
                let m = probs.len();
                probs[bin(x, m)] * m as f64
            }
            Self::Custom(c) => c.pdf.eval(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            Self::Uniform => x,
            Self::Power { k } => x.powf(k + 1.0),
            Self::Piecewise { probs } => {
                let m = probs.len();
                let t = x * m as f64;
                let i = (t.floor() as usize).min(m);
                let below: f64 = probs[..i].iter().sum();
                if i == m {
                    below
                } else {
                    below + probs[i] * (t - i as f64)
                }
            }
            Self::Custom(c) => c.cdf(x),
        }
    }

    /// Generalized inverse of the cdf.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Self::Uniform => u,
            Self::Power { k } => u.powf(1.0 / (k + 1.0)),
            Self::Piecewise { probs } => {
                let m = probs.len();
                let mut below = 0.0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > 0.0 && (u <= below + p || i == m - 1) {
                        let t = ((u - below) / p).clamp(0.0, 1.0);
                        return (i as f64 + t) / m as f64;
                    }
                    below += p;
                }
                1.0
            }
            Self::Custom(c) => c.inverse(u),
        }
    }

    /// Interior points where the density is not smooth.
    pub fn breaks(&self) -> Vec<f64> {
        match self {
            Self::Piecewise { probs } => {
                let m = probs.len();
                (1..m).map(|i| i as f64 / m as f64).collect()
            }
            Self::Custom(c) => c.pdf.breaks().to_vec(),
            _ => Vec::new(),
        }
    }

    /// `E[h(X)]`.
    pub fn expect(&self, h: impl Fn(f64) -> f64, extra_breaks: &[f64]) -> f64 {
        let mut breaks = self.breaks();
        breaks.extend_from_slice(extra_breaks);
        integrate_unit(
            |x| {
                let p = self.pdf(x);
                if p == 0.0 {
                    0.0
                } else {
                    p * h(x)
                }
            },
            &crate::numeric::merge_breaks(&[&breaks]),
        )
    }

    /// Differential entropy in bits.
    pub fn entropy(&self) -> f64 {
        match self {
            Self::Uniform => 0.0,
            Self::Power { k } => -(k + 1.0).log2() + k / ((k + 1.0) * LN_2),
            Self::Piecewise { probs } => {
                let m = probs.len() as f64;
                -probs.iter().filter(|&&p| p > 0.0).map(|p| p * (p * m).log2()).sum::<f64>()
            }
            Self::Custom(_) => -self.expect(|x| self.pdf(x).max(f64::MIN_POSITIVE).log2(), &[]),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cdf(rng.random::<f64>())
    }

    fn is_uniform(&self) -> bool {
        match self {
            Self::Uniform => true,
            Self::Power { k } => *k == 0.0,
            Self::Piecewise { probs } => {
                let m = probs.len() as f64;
                probs.iter().all(|p| (p * m - 1.0).abs() < 1e-12)
            }
            Self::Custom(_) => false,
        }
    }
}

fn bin(x: f64, m: usize) -> usize {
    ((x * m as f64).floor() as usize).min(m - 1)
}

/// A piecewise-constant joint density on an equal grid over `[0,1]^dims`.
#[derive(Debug, Clone)]
pub struct GridJoint {
    dims: usize,
    size: usize,
    weights: Vec<f64>,
    cell_cum: Vec<f64>,
    corner_cum: Vec<f64>,
    marginals: Vec<Marginal>,
}

impl GridJoint {
    /// `weights` are cell probabilities in row-major order (last index fastest).
    pub fn new(dims: usize, size: usize, weights: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dims) || size == 0 {
            return Err(Error::Unsupported(format!("grid sources need 1..=3 dims, got {dims}")));
        }
        if weights.len() != size.pow(dims as u32) {
            return Err(Error::Config(format!(
                "grid needs {} weights, got {}",
                size.pow(dims as u32),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("grid weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("grid weights sum to {total}, not 1")));
        }
        let cell_cum = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let s1 = size + 1;
        let mut corner_cum = vec![0.0; s1.pow(dims as u32)];
        for c in 0..corner_cum.len() {
            let idx = unflatten(c, s1, dims);
            if idx.contains(&0) {
                continue;
            }
            // Inclusion–exclusion over the lower neighbours.
            let mut v = weights[flatten(&idx.iter().map(|i| i - 1).collect::<Vec<_>>(), size)];
            for mask in 1..(1usize << dims) {
                let mut n = idx.clone();
                for (d, ni) in n.iter_mut().enumerate() {
                    if mask >> d & 1 == 1 {
                        *ni -= 1;
                    }
                }
                let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
                v += sign * corner_cum[flatten(&n, s1)];
            }
            corner_cum[c] = v;
        }
        let marginals = (0..dims)
            .map(|j| {
                let mut probs = vec![0.0; size];
                for (c, w) in weights.iter().enumerate() {
                    probs[unflatten(c, size, dims)[j]] += w;
                }
                Marginal::Piecewise { probs }
            })
            .collect();
        Ok(Self { dims, size, weights, cell_cum, corner_cum, marginals })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let idx: Vec<usize> = x.iter().map(|&v| bin(v, self.size)).collect();
        self.weights[flatten(&idx, self.size)] * (self.size as f64).powi(self.dims as i32)
    }

    /// Joint cdf, exact since the density is constant on cells.
    pub fn cdf(&self, x: &[f64]) -> f64 {
        let s1 = self.size + 1;
        let mut base = Vec::with_capacity(self.dims);
        let mut frac = Vec::with_capacity(self.dims);
        for &v in x {
            let t = v.clamp(0.0, 1.0) * self.size as f64;
            let i = (t.floor() as usize).min(self.size - 1);
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut total = 0.0;
        for mask in 0..(1usize << self.dims) {
            let mut w = 1.0;
            let mut n = base.clone();
            for d in 0..self.dims {
                if mask >> d & 1 == 1 {
                    n[d] += 1;
                    w *= frac[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                total += w * self.corner_cum[flatten(&n, s1)];
            }
        }
        total
    }

    pub fn entropy(&self) -> f64 {
        let cells = (self.size as f64).powi(self.dims as i32);
        -self.weights.iter().filter(|&&w| w > 0.0).map(|w| w * (w * cells).log2()).sum::<f64>()
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.random();
        let c = self.cell_cum.partition_point(|&t| t <= u).min(self.weights.len() - 1);
        let idx = unflatten(c, self.size, self.dims);
        for (o, i) in out.iter_mut().zip(idx) {
            *o = (i as f64 + rng.random::<f64>()) / self.size as f64;
        }
    }

    fn slice_cumulative(&self, j: usize, x: f64) -> (Vec<Vec<usize>>, Vec<f64>) {
        let s = bin(x, self.size);
        let mut cells = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for (c, &w) in self.weights.iter().enumerate() {
            let idx = unflatten(c, self.size, self.dims);
            if idx[j] == s && w > 0.0 {
                acc += w;
                cells.push(idx);
                cum.push(acc);
            }
        }
        (cells, cum)
    }
}

fn flatten(idx: &[usize], size: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * size + i)
}

fn unflatten(mut c: usize, size: usize, dims: usize) -> Vec<usize> {
    let mut idx = vec![0; dims];
    for d in (0..dims).rev() {
        idx[d] = c % size;
        c /= size;
    }
    idx
}

#[derive(Debug, Clone)]
enum Kind {
    Independent(Vec<Marginal>),
    Grid(GridJoint),
}

/// Joint distribution of `(X_1, ..., X_n)` on `[0, 1]^n`.
#[derive(Debug, Clone)]
pub struct SourceModel {
    kind: Kind,
}

impl SourceModel {
    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Config("a source needs at least one variable".into()));
        }
        Ok(Self { kind: Kind::Independent(marginals) })
    }

    pub fn iid(n: usize, marginal: Marginal) -> Result<Self> {
        Self::independent(vec![marginal; n])
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::iid(n, Marginal::Uniform)
    }

    pub fn grid(dims: usize, size: usize, weights: Vec<f64>) -> Result<Self> {
        Ok(Self { kind: Kind::Grid(GridJoint::new(dims, size, weights)?) })
    }

    pub fn n(&self) -> usize {
        match &self.kind {
            Kind::Independent(m) => m.len(),
            Kind::Grid(g) => g.dims,
        }
    }

    pub fn marginal(&self, j: usize) -> &Marginal {
        match &self.kind {
            Kind::Independent(m) => &m[j],
            Kind::Grid(g) => &g.marginals[j],
        }
    }

    pub fn grid_joint(&self) -> Option<&GridJoint> {
        match &self.kind {
            Kind::Grid(g) => Some(g),
            Kind::Independent(_) => None,
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.kind, Kind::Independent(_))
    }

    pub fn is_iid_uniform(&self) -> bool {
        match &self.kind {
            Kind::Independent(m) => m.iter().all(Marginal::is_uniform),
            Kind::Grid(g) => g.weights.iter().all(|w| (w * g.weights.len() as f64 - 1.0).abs() < 1e-12),
        }
    }

    pub fn joint_pdf(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Independent(m) => m.iter().zip(x).map(|(m, &v)| m.pdf(v)).product(),
            Kind::Grid(g) => g.pdf(x),
        }
    }

    /// Probability of the box `Π (lo_j, hi_j]`.
    pub fn prob_box(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match &self.kind {
            Kind::Independent(m) => m
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(m, (&a, &b))| (m.cdf(b) - m.cdf(a)).max(0.0))
                .product(),
            Kind::Grid(g) => {
                let n = g.dims;
                let mut total = 0.0;
                let mut corner = vec![0.0; n];
                for mask in 0..(1usize << n) {
                    for d in 0..n {
                        corner[d] = if mask >> d & 1 == 1 { lo[d] } else { hi[d] };
                    }
                    let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    total += sign * g.cdf(&corner);
                }
                total.max(0.0)
            }
        }
    }

    /// Interior points where the joint density jumps along coordinate `j`.
    pub fn breaks(&self, j: usize) -> Vec<f64> {
        self.marginal(j).breaks()
    }

    pub fn marginal_entropy(&self, j: usize) -> f64 {
        self.marginal(j).entropy()
    }

    /// Joint differential entropy in bits.
    pub fn joint_entropy(&self) -> f64 {
        match &self.kind {
            Kind::Independent(m) => m.iter().map(Marginal::entropy).sum(),
            Kind::Grid(g) => g.entropy(),
        }
    }

    /// Draw one vector into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            Kind::Independent(m) => {
                for (o, m) in out.iter_mut().zip(m) {
                    *o = m.sample(rng);
                }
            }
            Kind::Grid(g) => g.sample_into(rng, out),
        }
    }

    /// Draw `count` vectors, flattened with stride `n`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; count * n];
        for chunk in out.chunks_mut(n) {
            self.sample_into(rng, chunk);
        }
        out
    }

    /// A sampler for the other coordinates given `X_j = x`, driven by
    /// caller-supplied uniforms so that draws can be shared across `x`.
    pub fn conditional_given(&self, j: usize, x: f64) -> Result<ConditionalSampler> {
        check_unit(x)?;
        Ok(match &self.kind {
            Kind::Independent(m) => ConditionalSampler::Independent { marginals: m.clone(), j, x },
            Kind::Grid(g) => {
                let (cells, cum) = g.slice_cumulative(j, x);
                if cells.is_empty() {
                    return Err(Error::Domain(format!("X_{j} = {x} has zero density")));
                }
                ConditionalSampler::Grid { cells, cum, j, x, size: g.size }
            }
        })
    }
}

/// See [`SourceModel::conditional_given`].
#[derive(Debug, Clone)]
pub enum ConditionalSampler {
    Independent { marginals: Vec<Marginal>, j: usize, x: f64 },
    Grid { cells: Vec<Vec<usize>>, cum: Vec<f64>, j: usize, x: f64, size: usize },
}

impl ConditionalSampler {
    /// Fill `out` (length `n`) from `n` uniforms in `[0, 1)`.
    pub fn fill(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Self::Independent { marginals, j, x } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if k == *j { *x } else { marginals[k].inverse_cdf(u[k]) };
                }
            }
            Self::Grid { cells, cum, j, x, size } => {
                let total = *cum.last().expect("slice is nonempty");
                let c = cum.partition_point(|&t| t <= u[*j] * total).min(cells.len() - 1);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if k == *j { *x } else { (cells[c][k] as f64 + u[k]) / *size as f64 };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;

    #[test]
    fn power_entropy_matches_quadrature() {
        let m = Marginal::power(2.0).unwrap();
        let q = -m.expect(|x| m.pdf(x).log2(), &[]);
        assert!((m.entropy() - q).abs() < 1e-10);
        assert!((m.entropy() - (-(3f64).log2() + 2.0 / (3.0 * LN_2))).abs() < 1e-15);
    }

    #[test]
    fn custom_matches_power() {
        let c = Marginal::custom(|x| 3.0 * x * x, vec![]).unwrap();
        let p = Marginal::power(2.0).unwrap();
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((c.cdf(x) - p.cdf(x)).abs() < 1e-11, "{x}");
            assert!((c.inverse_cdf(p.cdf(x)) - x).abs() < 1e-9, "{x} {}", c.inverse_cdf(p.cdf(x)));
        }
        assert!((c.entropy() - p.entropy()).abs() < 1e-9);
    }

    #[test]
    fn custom_rejects_unnormalized() {
        assert!(matches!(Marginal::custom(|_| 2.0, vec![]), Err(Error::Numeric(_))));
    }

    #[test]
    fn piecewise_cdf_inverse_round_trip() {
        let m = Marginal::piecewise(vec![0.1, 0.0, 0.6, 0.3]).unwrap();
        for &u in &[0.05, 0.1, 0.4, 0.7, 0.95] {
            assert!((m.cdf(m.inverse_cdf(u)) - u).abs() < 1e-12);
        }
        assert_eq!(m.breaks(), vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn grid_box_probabilities() {
        let s = SourceModel::grid(2, 2, vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        assert!((s.prob_box(&[0.0, 0.0], &[0.5, 0.5]) - 0.4).abs() < 1e-15);
        assert!((s.prob_box(&[0.25, 0.0], &[0.75, 1.0]) - 0.5).abs() < 1e-15);
        assert!((s.prob_box(&[0.0, 0.0], &[0.25, 0.25]) - 0.1).abs() < 1e-15);
        assert!((s.marginal(0).cdf(0.5) - 0.5).abs() < 1e-15);
        let h = s.joint_entropy();
        let direct = -(2.0 * 0.4 * (0.4f64 * 4.0).log2() + 2.0 * 0.1 * (0.1f64 * 4.0).log2());
        assert!((h - direct).abs() < 1e-14);
    }

    #[test]
    fn grid_sampling_frequencies() {
        let s = SourceModel::grid(2, 2, vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        let mut rng = stream_rng(1, 0);
        let xs = s.sample(&mut rng, 100_000);
        let hits = xs.chunks(2).filter(|p| p[0] < 0.5 && p[1] < 0.5).count() as f64 / 1e5;
        assert!((hits - 0.4).abs() < 0.01);
    }

    #[test]
    fn grid_conditional_slices() {
        let s = SourceModel::grid(2, 2, vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        let c = s.conditional_given(0, 0.2).unwrap();
        let mut out = [0.0; 2];
        c.fill(&[0.5, 0.5], &mut out);
        assert_eq!(out[0], 0.2);
        // P(X2 < 1/2 | X1 < 1/2) = 0.8, so u = 0.5 picks the lower cell.
        assert!(out[1] < 0.5);
        c.fill(&[0.9, 0.5], &mut out);
        assert!(out[1] > 0.5);
    }
}
