//! Point densities, companders and the scalar quantizers they induce.
//!
//! Cells are right-closed: cell `i` (0-based) of a regular quantizer is
//! `(b_i, b_{i+1}]`, and `x = 0` belongs to cell 0.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_unit, Error, Result};
use crate::numeric::{generalized_inverse, integrate_split, merge_breaks, newton_inverse, Curve};

const TABLE_SEGMENTS: usize = 1024;
const INVERSE_TOL: f64 = 1e-13;
const MAX_PIECES: usize = 64;

/// A normalized density `λ` on `[0, 1]` with a tabulated cumulative integral.
#[derive(Clone)]
pub struct PointDensity {
    curve: Curve,
    nodes: Vec<f64>,
    cum: Vec<f64>,
    cdf: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
    inv: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for PointDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointDensity")
            .field("segments", &(self.nodes.len() - 1))
            .field("closed_cdf", &self.cdf.is_some())
            .finish()
    }
}

impl PointDensity {
    /// Normalize a nonnegative function into a point density.
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Result<Self> {
        Self::from_curve(Curve::new(f, breaks))
    }

    pub fn from_curve(raw: Curve) -> Result<Self> {
        let grid: Vec<f64> = (1..TABLE_SEGMENTS).map(|i| i as f64 / TABLE_SEGMENTS as f64).collect();
        let mut nodes = vec![0.0];
        nodes.extend(merge_breaks(&[&grid, raw.breaks()]));
        nodes.push(1.0);
        let mut pieces = Vec::with_capacity(nodes.len() - 1);
        for w in nodes.windows(2) {
            let v = integrate_split(|x| raw.eval(x), w[0], w[1], &[]);
            if !v.is_finite() || v < -1e-15 {
                return Err(Error::Numeric(format!("point density is negative or not integrable near {}", w[0])));
            }
            pieces.push(v.max(0.0));
        }
        let mass: f64 = pieces.iter().sum();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Numeric(format!("point density has mass {mass}")));
        }
        let mut cum = Vec::with_capacity(nodes.len());
        cum.push(0.0);
        let mut acc = 0.0;
        for p in pieces {
            acc += p / mass;
            cum.push(acc.min(1.0));
        }
        *cum.last_mut().expect("nonempty") = 1.0;
        let breaks = raw.breaks().to_vec();
        let curve = Curve::new(move |x| raw.eval(x).max(0.0) / mass, breaks);
        Ok(Self { curve, nodes, cum, cdf: None, inv: None })
    }

    pub fn uniform() -> Self {
        Self::power(0.0).expect("uniform density is valid")
    }

    /// `λ(x) = (p + 1) x^p` with the closed-form cumulative `x^{p+1}`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > -1.0) {
            return Err(Error::Config(format!("power density needs p > -1, got {p}")));
        }
        let mut d = Self::new(move |x| (p + 1.0) * x.powf(p), vec![])?;
        d.cdf = Some(Arc::new(move |x| x.powf(p + 1.0)));
        d.inv = Some(Arc::new(move |y| y.powf(1.0 / (p + 1.0))));
        Ok(d)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval(x)
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn breaks(&self) -> &[f64] {
        self.curve.breaks()
    }

    /// `w(x) = ∫_0^x λ`.
    pub fn cumulative(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if let Some(cdf) = &self.cdf {
            return cdf(x);
        }
        let i = self.nodes.partition_point(|&t| t <= x).clamp(1, self.nodes.len() - 1) - 1;
        let part = integrate_split(|s| self.curve.eval(s), self.nodes[i], x, &[]);
        (self.cum[i] + part).clamp(0.0, 1.0)
    }

    /// Smallest `x` with `w(x) >= y`.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if let Some(inv) = &self.inv {
            return inv(y.min(1.0)).clamp(0.0, 1.0);
        }
        if y >= 1.0 {
            // The last point where w reaches 1, skipping a flat tail.
            let i = self.cum.partition_point(|&c| c < 1.0 - 1e-15).clamp(1, self.nodes.len() - 1);
            return generalized_inverse(|x| self.cumulative(x), 1.0 - 1e-15, self.nodes[i - 1], self.nodes[i], INVERSE_TOL)
                .max(self.nodes[i - 1]);
        }
        let i = self.cum.partition_point(|&c| c < y).clamp(1, self.nodes.len() - 1);
        newton_inverse(|x| self.cumulative(x), |x| self.curve.eval(x), y, self.nodes[i - 1], self.nodes[i], INVERSE_TOL)
    }

    /// `λ` restricted to the complement of `zones` and renormalized.
    pub fn restricted(&self, zones: &[(f64, f64)]) -> Result<Self> {
        let zs = zones.to_vec();
        let base = self.curve.clone();
        let mut breaks = base.breaks().to_vec();
        zones.iter().for_each(|&(a, b)| breaks.extend([a, b]));
        Self::new(
            move |x| if zs.iter().any(|&(a, b)| x >= a && x <= b) { 0.0 } else { base.eval(x) },
            breaks,
        )
    }

    pub fn tabulate(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.eval(x)).collect()
    }
}

/// `w(x) = ∫_0^x λ` and its inverse.
#[derive(Debug, Clone)]
pub struct Compander {
    density: Arc<PointDensity>,
}

impl Compander {
    pub fn new(density: PointDensity) -> Self {
        Self { density: Arc::new(density) }
    }

    pub fn density(&self) -> &PointDensity {
        &self.density
    }

    pub fn w(&self, x: f64) -> f64 {
        self.density.cumulative(x)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.density.inverse(y)
    }
}

/// `Q_K(x) = w⁻¹(Q_K^U(w(x)))` with companded-midpoint codewords.
#[derive(Debug, Clone)]
pub struct CompandingQuantizer {
    compander: Compander,
    boundaries: Vec<f64>,
    codewords: Vec<f64>,
}

impl CompandingQuantizer {
    pub fn new(compander: Compander, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Resolution("a quantizer needs at least one cell".into()));
        }
        let mut boundaries = Vec::with_capacity(k + 1);
        boundaries.push(0.0);
        for i in 1..k {
            boundaries.push(compander.inverse(i as f64 / k as f64));
        }
        boundaries.push(1.0);
        Self::from_boundaries(compander, boundaries)
    }

    fn from_boundaries(compander: Compander, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Numeric("quantizer boundaries are not strictly increasing".into()));
        }
        let codewords = boundaries
            .windows(2)
            .map(|w| compander.inverse(0.5 * (compander.w(w[0]) + compander.w(w[1]))).clamp(w[0], w[1]))
            .collect();
        Ok(Self { compander, boundaries, codewords })
    }

    /// Split the cell containing `x` at `x`, adding one cell. Used to align a
    /// boundary with a jump of the function of interest.
    pub fn with_boundary(&self, x: f64) -> Result<Self> {
        check_unit(x)?;
        if self.boundaries.iter().any(|&b| (b - x).abs() < 1e-15) {
            return Ok(self.clone());
        }
        let mut b = self.boundaries.clone();
        let i = b.partition_point(|&t| t < x);
        b.insert(i, x);
        Self::from_boundaries(self.compander.clone(), b)
    }

    pub fn levels(&self) -> usize {
        self.codewords.len()
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn codewords(&self) -> &[f64] {
        &self.codewords
    }

    pub fn compander(&self) -> &Compander {
        &self.compander
    }

    /// Cell index of `x`, which must lie in `[0, 1]`.
    pub fn quantize(&self, x: f64) -> Result<usize> {
        check_unit(x)?;
        Ok(self.cell(x))
    }

    #[inline]
    pub fn cell(&self, x: f64) -> usize {
        self.boundaries.partition_point(|&b| b < x).clamp(1, self.levels()) - 1
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    pub fn reconstruct(&self, i: usize) -> f64 {
        self.codewords[i]
    }
}

/// One monotone piece of a generalized compander.
#[derive(Clone)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub increasing: bool,
    map: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Piece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Piece")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("increasing", &self.increasing)
            .finish()
    }
}

impl Piece {
    pub fn new(a: f64, b: f64, increasing: bool, map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { a, b, increasing, map: Arc::new(map) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.map)(x).clamp(0.0, 1.0)
    }

    /// The subinterval of the piece where the map lies in `(lo, hi]`.
    fn preimage(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let s = if self.increasing { 1.0 } else { -1.0 };
        let f = |x: f64| s * self.eval(x);
        let inv = |y: f64| generalized_inverse(f, y, self.a, self.b, INVERSE_TOL);
        let (l, r) = if self.increasing { (inv(lo), inv(hi)) } else { (inv(-hi), inv(-lo)) };
        let (vl, vr) = (self.eval(self.a), self.eval(self.b));
        let (pmin, pmax) = (vl.min(vr), vl.max(vr));
        if pmax <= lo || pmin > hi {
            return None;
        }
        let l = l.clamp(self.a, self.b);
        let r = if self.increasing {
            if hi >= pmax { self.b } else { r.clamp(self.a, self.b) }
        } else if lo < pmin {
            self.b
        } else {
            r.clamp(self.a, self.b)
        };
        let l = if self.increasing {
            if lo < pmin { self.a } else { l }
        } else if hi >= pmax {
            self.a
        } else {
            l
        };
        (r > l).then_some((l, r))
    }
}

/// A continuous, piecewise monotone map `[0, 1] → [0, 1]`.
#[derive(Debug, Clone)]
pub struct GeneralizedCompander {
    pieces: Vec<Piece>,
}

impl GeneralizedCompander {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() || pieces.len() > MAX_PIECES {
            return Err(Error::Config(format!("a generalized compander needs 1..={MAX_PIECES} pieces")));
        }
        if pieces[0].a != 0.0 || pieces.last().expect("nonempty").b != 1.0 {
            return Err(Error::Config("pieces must cover [0, 1]".into()));
        }
        for w in pieces.windows(2) {
            if w[0].b != w[1].a {
                return Err(Error::Config("pieces must be contiguous".into()));
            }
            let (l, r) = (w[0].eval(w[0].b), w[1].eval(w[1].a));
            if (l - r).abs() > 1e-9 {
                return Err(Error::Config(format!("compander jumps from {l} to {r} at {}", w[0].b)));
            }
        }
        Ok(Self { pieces })
    }

    /// A single increasing piece given by a compander.
    pub fn monotone(c: Compander) -> Self {
        Self { pieces: vec![Piece::new(0.0, 1.0, true, move |x| c.w(x))] }
    }

    /// Pair each `x` with its mirror `2c - x` around `center`. The longer side
    /// carries `w = 1 - ∫ λ / Z` from the center outward, where `λ` is the
    /// given density restricted to that side; the shorter side reuses the
    /// mirrored values.
    pub fn mirrored(density: &Curve, center: f64) -> Result<Self> {
        check_unit(center)?;
        if center <= 0.0 || center >= 1.0 {
            return Err(Error::Config("mirror center must be interior".into()));
        }
        let right_primary = center < 0.5;
        let (lo, hi) = if right_primary { (center, 1.0) } else { (0.0, center) };
        let d = density.clone();
        let z = integrate_split(|x| d.eval(x), lo, hi, d.breaks());
        if !(z > 0.0) {
            return Err(Error::Numeric("mirror density has no mass on the primary side".into()));
        }
        let d1 = density.clone();
        let primary = Arc::new(move |x: f64| {
            let part = if right_primary {
                integrate_split(|s| d1.eval(s), center, x, d1.breaks())
            } else {
                integrate_split(|s| d1.eval(s), x, center, d1.breaks())
            };
            1.0 - part / z
        });
        let p1 = primary.clone();
        let mirror = move |x: f64| p1(2.0 * center - x);
        let pieces = if right_primary {
            vec![
                Piece::new(0.0, center, true, mirror),
                Piece::new(center, 1.0, false, move |x| primary(x)),
            ]
        } else {
            vec![
                Piece::new(0.0, center, true, move |x| primary(x)),
                Piece::new(center, 1.0, false, mirror),
            ]
        };
        Self::new(pieces)
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn w(&self, x: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p.b < x).min(self.pieces.len() - 1);
        self.pieces[i].eval(x)
    }
}

/// Cells are preimages under a generalized compander of the uniform cells
/// `(i/K, (i+1)/K]`, so each may be a union of intervals.
#[derive(Debug, Clone)]
pub struct NonRegularQuantizer {
    compander: GeneralizedCompander,
    k: usize,
    regions: Vec<Vec<(f64, f64)>>,
}

impl NonRegularQuantizer {
    pub fn new(compander: GeneralizedCompander, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Resolution("a quantizer needs at least one cell".into()));
        }
        let mut regions = vec![Vec::new(); k];
        for (i, region) in regions.iter_mut().enumerate() {
            let lo = if i == 0 { -1.0 } else { i as f64 / k as f64 };
            let hi = (i + 1) as f64 / k as f64;
            for p in &compander.pieces {
                if let Some(iv) = p.preimage(lo, hi) {
                    region.push(iv);
                }
            }
            region.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Merge intervals that meet at a piece junction.
            let mut merged: Vec<(f64, f64)> = Vec::with_capacity(region.len());
            for iv in region.drain(..) {
                match merged.last_mut() {
                    Some(last) if (iv.0 - last.1).abs() < 1e-12 => last.1 = iv.1,
                    _ => merged.push(iv),
                }
            }
            *region = merged;
        }
        Ok(Self { compander, k, regions })
    }

    pub fn levels(&self) -> usize {
        self.k
    }

    pub fn cell(&self, x: f64) -> usize {
        let y = self.compander.w(x);
        ((y * self.k as f64).ceil() as usize).clamp(1, self.k) - 1
    }

    pub fn regions(&self, i: usize) -> &[(f64, f64)] {
        &self.regions[i]
    }
}

/// Regular cells on the complement of the don't-care zones, plus one cell per zone.
#[derive(Debug, Clone)]
pub struct DontCareQuantizer {
    pub(crate) zones: Vec<(f64, f64)>,
    pub(crate) inner: CompandingQuantizer,
}

impl DontCareQuantizer {
    pub fn levels(&self) -> usize {
        self.inner.levels() + self.zones.len()
    }

    pub fn zones(&self) -> &[(f64, f64)] {
        &self.zones
    }

    pub fn inner(&self) -> &CompandingQuantizer {
        &self.inner
    }

    pub fn cell(&self, x: f64) -> usize {
        match self.zones.iter().position(|&(a, b)| x >= a && x <= b) {
            Some(z) => self.inner.levels() + z,
            None => self.inner.cell(x),
        }
    }

    pub fn regions(&self, i: usize) -> Vec<(f64, f64)> {
        let m = self.inner.levels();
        if i >= m {
            return vec![self.zones[i - m]];
        }
        let mut parts = vec![self.inner.interval(i)];
        for &(za, zb) in &self.zones {
            parts = parts
                .into_iter()
                .flat_map(|(a, b)| {
                    let mut out = Vec::new();
                    if za > a {
                        out.push((a, b.min(za)));
                    }
                    if zb < b {
                        out.push((a.max(zb), b));
                    }
                    out.into_iter().filter(|(l, r)| r > l)
                })
                .collect();
        }
        parts
    }
}

/// Any scalar quantizer used by one encoder.
#[derive(Debug, Clone)]
pub enum ScalarQuantizer {
    Regular(CompandingQuantizer),
    NonRegular(NonRegularQuantizer),
    DontCare(DontCareQuantizer),
}

impl ScalarQuantizer {
    pub fn levels(&self) -> usize {
        match self {
            Self::Regular(q) => q.levels(),
            Self::NonRegular(q) => q.levels(),
            Self::DontCare(q) => q.levels(),
        }
    }

    #[inline]
    pub fn cell(&self, x: f64) -> usize {
        match self {
            Self::Regular(q) => q.cell(x),
            Self::NonRegular(q) => q.cell(x),
            Self::DontCare(q) => q.cell(x),
        }
    }

    /// The cell as a list of disjoint intervals.
    pub fn regions(&self, i: usize) -> Vec<(f64, f64)> {
        match self {
            Self::Regular(q) => vec![q.interval(i)],
            Self::NonRegular(q) => q.regions(i).to_vec(),
            Self::DontCare(q) => q.regions(i),
        }
    }

    /// A point of the cell used when no better estimate exists.
    pub fn representative(&self, i: usize) -> f64 {
        match self {
            Self::Regular(q) => q.reconstruct(i),
            Self::DontCare(q) if i < q.inner.levels() => q.inner.reconstruct(i),
            _ => {
                let r = self.regions(i);
                r.first().map_or(0.5, |&(a, b)| 0.5 * (a + b))
            }
        }
    }
}

/// Per-variable resolution `⌊K^α⌋`, snapping values within 1e-9 of an integer.
pub fn marginal_resolution(k: f64, alpha: f64) -> usize {
    let v = k.powf(alpha);
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        v.floor() as usize
    }
}

/// One scalar quantizer per variable.
#[derive(Debug, Clone)]
pub struct DistributedQuantizer {
    parts: Vec<ScalarQuantizer>,
    alpha: Vec<f64>,
    k: f64,
}

impl DistributedQuantizer {
    /// Quantizers with resolutions `⌊K^{α_j}⌋`.
    pub fn new(companders: Vec<Compander>, alpha: Vec<f64>, k: f64) -> Result<Self> {
        if companders.len() != alpha.len() || alpha.is_empty() {
            return Err(Error::Config("need one allocation per compander".into()));
        }
        if alpha.iter().any(|&a| !(a > 0.0)) || (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("allocation {alpha:?} must be positive and sum to 1")));
        }
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::Resolution(format!("total resolution {k} is invalid")));
        }
        let parts = companders
            .into_iter()
            .zip(&alpha)
            .map(|(c, &a)| {
                let kj = marginal_resolution(k, a);
                if kj == 0 {
                    return Err(Error::Resolution(format!("K^α = {} is below one cell", k.powf(a))));
                }
                Ok(ScalarQuantizer::Regular(CompandingQuantizer::new(c, kj)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { parts, alpha, k })
    }

    /// Assemble from arbitrary scalar quantizers; the allocation is read off
    /// the resolutions.
    pub fn from_parts(parts: Vec<ScalarQuantizer>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Config("need at least one quantizer".into()));
        }
        let logs: Vec<f64> = parts.iter().map(|p| (p.levels() as f64).ln()).collect();
        let total: f64 = logs.iter().sum();
        let alpha = if total > 0.0 {
            logs.iter().map(|l| l / total).collect()
        } else {
            vec![1.0 / parts.len() as f64; parts.len()]
        };
        Ok(Self { k: total.exp(), parts, alpha })
    }

    pub fn n(&self) -> usize {
        self.parts.len()
    }

    pub fn parts(&self) -> &[ScalarQuantizer] {
        &self.parts
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn total_resolution(&self) -> f64 {
        self.k
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.parts.iter().map(ScalarQuantizer::levels).collect()
    }

    /// Number of product cells.
    pub fn product_cells(&self) -> f64 {
        self.parts.iter().map(|p| p.levels() as f64).product()
    }

    pub fn cells_into(&self, x: &[f64], out: &mut [usize]) {
        for ((o, q), &v) in out.iter_mut().zip(&self.parts).zip(x) {
            *o = q.cell(v);
        }
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.n() {
            return Err(Error::Config(format!("expected {} coordinates, got {}", self.n(), x.len())));
        }
        x.iter().try_for_each(|&v| check_unit(v))?;
        let mut out = vec![0; self.n()];
        self.cells_into(x, &mut out);
        Ok(out)
    }
}
