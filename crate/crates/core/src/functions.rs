//! Functions of interest and their functional sensitivity profiles.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::Curve;
use crate::sampling::{map_indices, stream_rng, PROFILE_STREAM};
use crate::sources::SourceModel;

/// Sensitivities below this are treated as exact zeros.
pub const ZERO_CLAMP: f64 = 1e-12;

/// Infimum and supremum of `|∂g/∂x_j|` over a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialBounds {
    pub inf: f64,
    pub sup: f64,
    /// False when the partial is undefined somewhere in the cell.
    pub everywhere_defined: bool,
}

/// A function `g: [0,1]^n → R` with its partial derivatives.
pub trait FunctionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn arity(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> f64;
    /// `∂g/∂x_j`, or `None` where it does not exist.
    fn partial(&self, j: usize, x: &[f64]) -> Option<f64>;
    /// Bound on every `|∂g/∂x_j|`.
    fn gradient_bound(&self) -> f64;

    /// `γ_j` in closed form for iid uniform sources.
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        None
    }

    /// True when the closed form holds for every source, as for `n = 1`.
    fn sensitivity_is_distribution_free(&self) -> bool {
        self.arity() == 1
    }

    /// `γ_{j|Y}` in closed form for iid uniform sources, where `Y` tells
    /// whether `x_companion <= threshold`.
    fn closed_form_conditional(&self, _j: usize, _companion: usize, _threshold: f64, _below: bool) -> Option<Curve> {
        None
    }

    /// Values of `x_j` across which `g` jumps. A quantizer for `x_j` should
    /// put a cell boundary at each of them.
    fn jumps(&self, _j: usize) -> Vec<f64> {
        Vec::new()
    }

    fn partial_bounds(&self, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        sampled_partial_bounds(self, j, cell)
    }

    /// True when [`FunctionModel::partial_bounds`] is exact rather than sampled.
    fn exact_partial_bounds(&self) -> bool {
        false
    }
}

/// Estimate partial bounds by evaluating on a lattice inside the cell.
pub fn sampled_partial_bounds<G: FunctionModel + ?Sized>(g: &G, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
    let n = cell.len();
    let per = match n {
        1 => 257,
        2 => 33,
        3 => 11,
        _ => 5,
    };
    let total = (per as u64).pow(n as u32).min(1 << 16) as usize;
    let mut rng = stream_rng(0x5eed, 0);
    let mut x = vec![0.0; n];
    let mut b = PartialBounds { inf: f64::INFINITY, sup: 0.0, everywhere_defined: true };
    for t in 0..total {
        let mut c = t;
        for (d, &(lo, hi)) in cell.iter().enumerate() {
            let frac = if (per as u64).pow(n as u32) as usize == total {
                let k = c % per;
                c /= per;
                (k as f64 + 0.5) / per as f64
            } else {
                rng.random::<f64>()
            };
            x[d] = lo + frac * (hi - lo);
        }
        match g.partial(j, &x) {
            Some(v) => {
                b.inf = b.inf.min(v.abs());
                b.sup = b.sup.max(v.abs());
            }
            None => b.everywhere_defined = false,
        }
    }
    if !b.inf.is_finite() {
        b.inf = 0.0;
    }
    b
}

/// `g(x) = Σ a_j x_j`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub coeffs: Vec<f64>,
}

impl FunctionModel for Linear {
    fn name(&self) -> String {
        "linear".into()
    }
    fn arity(&self) -> usize {
        self.coeffs.len()
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum()
    }
    fn partial(&self, j: usize, _x: &[f64]) -> Option<f64> {
        Some(self.coeffs[j])
    }
    fn gradient_bound(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
    fn closed_form_sensitivity(&self, j: usize) -> Option<Curve> {
        Some(Curve::constant(self.coeffs[j].abs()))
    }
    fn sensitivity_is_distribution_free(&self) -> bool {
        true
    }
    fn closed_form_conditional(&self, j: usize, _: usize, _: f64, _: bool) -> Option<Curve> {
        self.closed_form_sensitivity(j)
    }
    fn partial_bounds(&self, j: usize, _cell: &[(f64, f64)]) -> PartialBounds {
        let a = self.coeffs[j].abs();
        PartialBounds { inf: a, sup: a, everywhere_defined: true }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// `g(x) = x²`.
#[derive(Debug, Clone, Copy)]
pub struct Square;

impl FunctionModel for Square {
    fn name(&self) -> String {
        "square".into()
    }
    fn arity(&self) -> usize {
        1
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn partial(&self, _j: usize, x: &[f64]) -> Option<f64> {
        Some(2.0 * x[0])
    }
    fn gradient_bound(&self) -> f64 {
        2.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        Some(Curve::new(|x| 2.0 * x, vec![]))
    }
    fn partial_bounds(&self, _j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        PartialBounds { inf: 2.0 * cell[0].0, sup: 2.0 * cell[0].1, everywhere_defined: true }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// `g(x) = x`.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl FunctionModel for Identity {
    fn name(&self) -> String {
        "identity".into()
    }
    fn arity(&self) -> usize {
        1
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        x[0]
    }
    fn partial(&self, _j: usize, _x: &[f64]) -> Option<f64> {
        Some(1.0)
    }
    fn gradient_bound(&self) -> f64 {
        1.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        Some(Curve::constant(1.0))
    }
    fn partial_bounds(&self, _j: usize, _cell: &[(f64, f64)]) -> PartialBounds {
        PartialBounds { inf: 1.0, sup: 1.0, everywhere_defined: true }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// `g(x) = max_i x_i`.
#[derive(Debug, Clone, Copy)]
pub struct Max {
    pub n: usize,
}

impl FunctionModel for Max {
    fn name(&self) -> String {
        "max".into()
    }
    fn arity(&self) -> usize {
        self.n
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    fn partial(&self, j: usize, x: &[f64]) -> Option<f64> {
        let mut tie = false;
        for (i, &v) in x.iter().enumerate() {
            if i == j {
                continue;
            }
            if v > x[j] {
                return Some(0.0);
            }
            tie |= v == x[j];
        }
        if tie {
            None
        } else {
            Some(1.0)
        }
    }
    fn gradient_bound(&self) -> f64 {
        1.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        let p = (self.n as f64 - 1.0) / 2.0;
        Some(Curve::new(move |x| x.powf(p), vec![]))
    }
    fn partial_bounds(&self, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let (lo, hi) = cell[j];
        let others = cell.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, c)| *c);
        let always_max = others.clone().all(|(_, h)| lo >= h);
        let can_be_max = others.clone().all(|(l, _)| hi > l);
        // A kink needs x_j to tie with some x_i while both can still be the
        // maximum, so the tie must clear every third lower end.
        let mut top = [(f64::NEG_INFINITY, usize::MAX); 3];
        for (k, c) in cell.iter().enumerate() {
            if c.0 > top[2].0 {
                top[2] = (c.0, k);
                top.sort_by(|a, b| b.0.total_cmp(&a.0));
            }
        }
        let defined = cell.iter().enumerate().filter(|(i, _)| *i != j).all(|(i, &(l, h))| {
            let floor = top.iter().find(|t| t.1 != i && t.1 != j).map_or(f64::NEG_INFINITY, |t| t.0);
            lo >= h || hi <= l || hi.min(h) <= floor
        });
        PartialBounds {
            inf: if always_max { 1.0 } else { 0.0 },
            sup: if can_be_max { 1.0 } else { 0.0 },
            everywhere_defined: defined,
        }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// Median of an odd number of variables.
#[derive(Debug, Clone, Copy)]
pub struct Median {
    pub n: usize,
}

impl FunctionModel for Median {
    fn name(&self) -> String {
        "median".into()
    }
    fn arity(&self) -> usize {
        self.n
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        let m = x.len() / 2;
        if x.len() <= 16 {
            let mut buf = [0.0; 16];
            let v = &mut buf[..x.len()];
            v.copy_from_slice(x);
            return *v.select_nth_unstable_by(m, f64::total_cmp).1;
        }
        let mut v = x.to_vec();
        *v.select_nth_unstable_by(m, f64::total_cmp).1
    }
    fn partial(&self, j: usize, x: &[f64]) -> Option<f64> {
        let (mut below, mut above) = (0, 0);
        for (i, &v) in x.iter().enumerate() {
            if i == j {
                continue;
            }
            if v == x[j] {
                return None;
            }
            if v < x[j] {
                below += 1;
            } else {
                above += 1;
            }
        }
        Some(if below == above { 1.0 } else { 0.0 })
    }
    fn gradient_bound(&self) -> f64 {
        1.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        let m = (self.n / 2) as i32;
        let c = binomial(2 * m as u64, m as u64);
        Some(Curve::new(move |x| (c * (x * (1.0 - x)).powi(m)).sqrt(), vec![]))
    }
    fn partial_bounds(&self, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let (lo, hi) = cell[j];
        let m = self.n / 2;
        let others = || cell.iter().enumerate().filter(move |(i, _)| *i != j).map(|(_, c)| *c);
        let below = others().filter(|&(_, h)| h <= lo).count();
        let above = others().filter(|&(l, _)| l >= hi).count();
        // Off the middle rank x_j never moves the median, ties or not.
        let defined = below + above == self.n - 1 || below > m || above > m;
        PartialBounds {
            inf: if defined && below == m { 1.0 } else { 0.0 },
            sup: if below <= m && above <= m { 1.0 } else { 0.0 },
            everywhere_defined: defined,
        }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

pub(crate) fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `g(x) = min(x, 1/2)`.
#[derive(Debug, Clone, Copy)]
pub struct MinClip;

impl FunctionModel for MinClip {
    fn name(&self) -> String {
        "min_clip".into()
    }
    fn arity(&self) -> usize {
        1
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        x[0].min(0.5)
    }
    fn partial(&self, _j: usize, x: &[f64]) -> Option<f64> {
        match x[0].partial_cmp(&0.5)? {
            std::cmp::Ordering::Less => Some(1.0),
            std::cmp::Ordering::Greater => Some(0.0),
            std::cmp::Ordering::Equal => None,
        }
    }
    fn gradient_bound(&self) -> f64 {
        1.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        Some(Curve::new(|x| if x < 0.5 { 1.0 } else { 0.0 }, vec![0.5]))
    }
    fn partial_bounds(&self, _j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let (lo, hi) = cell[0];
        PartialBounds {
            inf: if hi <= 0.5 { 1.0 } else { 0.0 },
            sup: if lo < 0.5 { 1.0 } else { 0.0 },
            everywhere_defined: hi <= 0.5 || lo >= 0.5,
        }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// `g(x) = |2x - 1|`.
#[derive(Debug, Clone, Copy)]
pub struct Tent;

impl FunctionModel for Tent {
    fn name(&self) -> String {
        "tent".into()
    }
    fn arity(&self) -> usize {
        1
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        (2.0 * x[0] - 1.0).abs()
    }
    fn partial(&self, _j: usize, x: &[f64]) -> Option<f64> {
        if x[0] == 0.5 {
            None
        } else {
            Some(if x[0] > 0.5 { 2.0 } else { -2.0 })
        }
    }
    fn gradient_bound(&self) -> f64 {
        2.0
    }
    fn closed_form_sensitivity(&self, _j: usize) -> Option<Curve> {
        Some(Curve::constant(2.0))
    }
    fn partial_bounds(&self, _j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let (lo, hi) = cell[0];
        PartialBounds { inf: 2.0, sup: 2.0, everywhere_defined: hi <= 0.5 || lo >= 0.5 }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// `g(x_1, x_2) = x_1 (3/4 - x_1)(1 - x_2)`.
#[derive(Debug, Clone, Copy)]
pub struct SepParabola;

impl FunctionModel for SepParabola {
    fn name(&self) -> String {
        "sep_parabola".into()
    }
    fn arity(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        x[0] * (0.75 - x[0]) * (1.0 - x[1])
    }
    fn partial(&self, j: usize, x: &[f64]) -> Option<f64> {
        Some(match j {
            0 => (0.75 - 2.0 * x[0]) * (1.0 - x[1]),
            _ => -x[0] * (0.75 - x[0]),
        })
    }
    fn gradient_bound(&self) -> f64 {
        1.25
    }
    fn closed_form_sensitivity(&self, j: usize) -> Option<Curve> {
        Some(match j {
            0 => Curve::new(|x| (0.75 - 2.0 * x).abs() / 3f64.sqrt(), vec![0.375]),
            _ => Curve::constant(0.0125f64.sqrt()),
        })
    }
    fn partial_bounds(&self, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let (a0, b0) = cell[0];
        let (a1, b1) = cell[1];
        let (inf, sup) = match j {
            0 => {
                let lin = |x: f64| (0.75 - 2.0 * x).abs();
                let lo = if a0 <= 0.375 && 0.375 <= b0 { 0.0 } else { lin(a0).min(lin(b0)) };
                (lo * (1.0 - b1), lin(a0).max(lin(b0)) * (1.0 - a1))
            }
            _ => {
                let par = |x: f64| (x * (0.75 - x)).abs();
                let mut vals = vec![par(a0), par(b0)];
                if a0 < 0.375 && 0.375 < b0 {
                    vals.push(par(0.375));
                }
                let crosses = a0 < 0.75 && 0.75 < b0 || a0 <= 0.0;
                let lo = if crosses { 0.0 } else { vals.iter().copied().fold(f64::INFINITY, f64::min) };
                (lo, vals.iter().copied().fold(0.0, f64::max))
            }
        };
        PartialBounds { inf, sup, everywhere_defined: true }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
}

/// A two-variable function defined through its partials: `∂g/∂x_1` is
/// constant on each cell of an equal grid, `∂g/∂x_2 = 1` away from the grid's
/// row boundaries, where `g` may jump.
///
/// `slopes[r][c]` applies for `x_2` in row `r` and `x_1` in column `c`.
#[derive(Debug, Clone)]
pub struct SlopeGrid {
    name: String,
    slopes: Vec<Vec<f64>>,
}

impl SlopeGrid {
    pub fn new(slopes: Vec<Vec<f64>>) -> Result<Self> {
        let cols = slopes.first().map_or(0, Vec::len);
        if cols == 0 || slopes.iter().any(|r| r.len() != cols || r.iter().any(|s| !s.is_finite())) {
            return Err(Error::Config("slope grid must be a nonempty finite rectangle".into()));
        }
        Ok(Self { name: "slope_grid".into(), slopes })
    }

    /// The quadrant example: slope `L` on the quadrants `{x_1 <= 1/2, x_2 <= 1/2}`
    /// and `{x_1 > 1/2, x_2 > 1/2}`, slope 1 elsewhere.
    pub fn quadrant(l: f64) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::Config(format!("quadrant needs L > 0, got {l}")));
        }
        Ok(Self { name: "quadrant".into(), slopes: vec![vec![l, 1.0], vec![1.0, l]] })
    }

    fn rows(&self) -> usize {
        self.slopes.len()
    }

    fn cols(&self) -> usize {
        self.slopes[0].len()
    }

    fn row(&self, x2: f64) -> usize {
        // Rows are right-closed so that x_2 = 1/2 belongs to the lower row.
        let r = self.rows() as f64;
        ((x2 * r).ceil() as usize).clamp(1, self.rows()) - 1
    }

    fn col(&self, x1: f64) -> usize {
        let c = self.cols() as f64;
        ((x1 * c).ceil() as usize).clamp(1, self.cols()) - 1
    }

    fn col_edges(&self) -> Vec<f64> {
        (1..self.cols()).map(|c| c as f64 / self.cols() as f64).collect()
    }

    fn row_weights(&self, lo: f64, hi: f64) -> Vec<f64> {
        let r = self.rows() as f64;
        (0..self.rows())
            .map(|i| {
                let (a, b) = (i as f64 / r, (i + 1) as f64 / r);
                (b.min(hi) - a.max(lo)).max(0.0)
            })
            .collect()
    }

    fn profile_over_rows(&self, lo: f64, hi: f64) -> Curve {
        let w = self.row_weights(lo, hi);
        let total: f64 = w.iter().sum();
        let sq: Vec<f64> = (0..self.cols())
            .map(|c| {
                let s: f64 = w.iter().zip(&self.slopes).map(|(w, row)| w * row[c] * row[c]).sum();
                (s / total).sqrt()
            })
            .collect();
        let cols = self.cols();
        Curve::new(
            move |x| sq[((x * cols as f64).ceil() as usize).clamp(1, cols) - 1],
            self.col_edges(),
        )
    }
}

impl FunctionModel for SlopeGrid {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn arity(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &[f64]) -> f64 {
        let row = &self.slopes[self.row(x[1])];
        let w = 1.0 / self.cols() as f64;
        let mut g = x[1];
        for (c, s) in row.iter().enumerate() {
            let a = c as f64 * w;
            g += s * (x[0].min(a + w) - a).max(0.0);
        }
        g
    }
    fn partial(&self, j: usize, x: &[f64]) -> Option<f64> {
        match j {
            0 => {
                let t = x[0] * self.cols() as f64;
                if t.fract() == 0.0 && t > 0.0 && t < self.cols() as f64 {
                    return None;
                }
                Some(self.slopes[self.row(x[1])][self.col(x[0])])
            }
            _ => {
                let t = x[1] * self.rows() as f64;
                if t.fract() == 0.0 && t > 0.0 && t < self.rows() as f64 {
                    return None;
                }
                Some(1.0)
            }
        }
    }
    fn gradient_bound(&self) -> f64 {
        self.slopes.iter().flatten().fold(1.0, |m, s| m.max(s.abs()))
    }
    fn closed_form_sensitivity(&self, j: usize) -> Option<Curve> {
        Some(match j {
            0 => self.profile_over_rows(0.0, 1.0),
            _ => Curve::constant(1.0),
        })
    }
    fn closed_form_conditional(&self, j: usize, companion: usize, threshold: f64, below: bool) -> Option<Curve> {
        if j != 0 || companion != 1 {
            return None;
        }
        Some(if below {
            self.profile_over_rows(0.0, threshold)
        } else {
            self.profile_over_rows(threshold, 1.0)
        })
    }
    fn partial_bounds(&self, j: usize, cell: &[(f64, f64)]) -> PartialBounds {
        let span = |(lo, hi): (f64, f64), k: usize| -> (usize, usize, bool) {
            let kf = k as f64;
            let a = ((lo * kf).floor() as usize).min(k - 1);
            let b = ((hi * kf).ceil() as usize).clamp(a + 1, k) - 1;
            let split = (1..k).any(|e| {
                let e = e as f64 / kf;
                lo < e && e < hi
            });
            (a, b, split)
        };
        let (r0, r1, row_split) = span(cell[1], self.rows());
        if j == 1 {
            return PartialBounds { inf: 1.0, sup: 1.0, everywhere_defined: !row_split };
        }
        let (c0, c1, col_split) = span(cell[0], self.cols());
        let (mut inf, mut sup) = (f64::INFINITY, 0.0f64);
        for row in &self.slopes[r0..=r1] {
            for s in &row[c0..=c1] {
                inf = inf.min(s.abs());
                sup = sup.max(s.abs());
            }
        }
        PartialBounds { inf, sup, everywhere_defined: !col_split }
    }
    fn exact_partial_bounds(&self) -> bool {
        true
    }
    fn jumps(&self, j: usize) -> Vec<f64> {
        if j == 1 {
            (1..self.rows()).map(|r| r as f64 / self.rows() as f64).collect()
        } else {
            Vec::new()
        }
    }
}

/// Names accepted by [`from_name`].
pub const NAMES: &[&str] = &[
    "linear",
    "square",
    "max",
    "median",
    "min_clip",
    "quadrant",
    "sep_parabola",
    "tent",
    "identity",
];

/// Look up a built-in function. `n` is the arity for `max` and `median`;
/// `params` holds the coefficients of `linear` or `L` for `quadrant`.
pub fn from_name(name: &str, n: Option<usize>, params: &[f64]) -> Result<Arc<dyn FunctionModel>> {
    let need_n = || -> Result<usize> {
        match n {
            Some(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{name} needs n >= 1"))),
        }
    };
    Ok(match name {
        "linear" => {
            if params.is_empty() {
                return Err(Error::Config("linear needs at least one coefficient".into()));
            }
            Arc::new(Linear { coeffs: params.to_vec() })
        }
        "square" => Arc::new(Square),
        "identity" => Arc::new(Identity),
        "max" => Arc::new(Max { n: need_n()? }),
        "median" => {
            let n = need_n()?;
            if n % 2 == 0 {
                return Err(Error::Config(format!("median needs odd n, got {n}")));
            }
            Arc::new(Median { n })
        }
        "min_clip" => Arc::new(MinClip),
        "tent" => Arc::new(Tent),
        "sep_parabola" => Arc::new(SepParabola),
        "quadrant" => {
            let l = *params.first().ok_or_else(|| Error::Config("quadrant needs L".into()))?;
            Arc::new(SlopeGrid::quadrant(l)?)
        }
        other => return Err(Error::Config(format!("unknown function '{other}'"))),
    })
}

/// Settings for tabulating a profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    pub grid_size: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { grid_size: 1024, mc_samples: 4096, seed: 0 }
    }
}

/// `γ_j(x) = sqrt(E[g_j(X)² | X_j = x])`, tabulated on an equal grid.
///
/// Tabulated values below [`ZERO_CLAMP`] are stored as exact zeros; closed
/// forms are evaluated as given.
#[derive(Debug, Clone)]
pub struct SensitivityProfile {
    pub var: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error of the estimate of `γ_j²` at each grid point; zero for closed forms.
    pub stderr: Vec<f64>,
    pub closed_form: bool,
    curve: Curve,
}

impl SensitivityProfile {
    /// Wrap an exact profile.
    pub fn from_curve(var: usize, curve: Curve, grid_size: usize) -> Self {
        let grid = unit_grid(grid_size);
        let breaks = curve.breaks().to_vec();
        let curve = Curve::new(move |x| nonnegative(curve.eval(x)), breaks);
        let values = grid.iter().map(|&x| clamp_zero(curve.eval(x))).collect();
        Self { var, stderr: vec![0.0; grid.len()], grid, values, closed_form: true, curve }
    }

    /// Wrap tabulated values, interpolated linearly.
    pub fn from_table(var: usize, grid: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>) -> Self {
        let values: Vec<f64> = values.into_iter().map(clamp_zero).collect();
        let curve = Curve::interpolant(grid.clone(), values.clone());
        Self { var, grid, values, stderr, closed_form: false, curve }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.curve.eval(x)
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    /// Exact zero of the closed form, or of the clamped table.
    pub fn is_zero(&self, x: f64) -> bool {
        self.eval(x) == 0.0
    }

    pub fn breaks(&self) -> &[f64] {
        self.curve.breaks()
    }
}

fn nonnegative(v: f64) -> f64 {
    if v.is_finite() && v > 0.0 {
        v
    } else {
        0.0
    }
}

fn clamp_zero(v: f64) -> f64 {
    if v.is_finite() && v > ZERO_CLAMP {
        v
    } else {
        0.0
    }
}

pub(crate) fn unit_grid(size: usize) -> Vec<f64> {
    let size = size.max(2);
    (0..size).map(|i| i as f64 / (size - 1) as f64).collect()
}

fn check_arity(g: &dyn FunctionModel, source: &SourceModel, j: usize) -> Result<()> {
    if g.arity() != source.n() {
        return Err(Error::Config(format!(
            "function {} takes {} variables but the source has {}",
            g.name(),
            g.arity(),
            source.n()
        )));
    }
    if j >= g.arity() {
        return Err(Error::Config(format!("variable index {j} out of range")));
    }
    Ok(())
}

/// Tabulate `γ_j`, using the closed form when it applies and Monte Carlo with
/// common random numbers otherwise.
pub fn sensitivity_profile(
    g: &dyn FunctionModel,
    source: &SourceModel,
    j: usize,
    opts: ProfileOptions,
) -> Result<SensitivityProfile> {
    check_arity(g, source, j)?;
    if g.sensitivity_is_distribution_free() || source.is_iid_uniform() {
        if let Some(c) = g.closed_form_sensitivity(j) {
            return Ok(SensitivityProfile::from_curve(j, c, opts.grid_size));
        }
    }
    let grid = unit_grid(opts.grid_size);
    let n = source.n();
    let uniforms = common_uniforms(opts, j, n);
    let rows = map_indices(grid.len(), |k| -> Result<(f64, f64)> {
        let sampler = source.conditional_given(j, grid[k]);
        let sampler = match sampler {
            Ok(s) => s,
            // A slice of zero density contributes nothing.
            Err(Error::Domain(_)) => return Ok((0.0, 0.0)),
            Err(e) => return Err(e),
        };
        let mut x = vec![0.0; n];
        let mut acc = crate::sampling::Moments::default();
        for u in uniforms.chunks(n) {
            sampler.fill(u, &mut x);
            if let Some(d) = g.partial(j, &x) {
                acc.push(d * d);
            }
        }
        Ok(mean_and_stderr(acc))
    });
    tabulated(j, grid, rows)
}

fn common_uniforms(opts: ProfileOptions, j: usize, n: usize) -> Vec<f64> {
    let mut rng = stream_rng(opts.seed, PROFILE_STREAM + j as u64);
    (0..opts.mc_samples.max(1) * n).map(|_| rng.random::<f64>()).collect()
}

fn mean_and_stderr(m: crate::sampling::Moments) -> (f64, f64) {
    if m.count == 0.0 {
        (0.0, 0.0)
    } else {
        (m.mean, (m.variance() / m.count).sqrt())
    }
}

fn tabulated(j: usize, grid: Vec<f64>, rows: Vec<Result<(f64, f64)>>) -> Result<SensitivityProfile> {
    let mut values = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for r in rows {
        let (sq, se) = r?;
        values.push(sq.max(0.0).sqrt());
        stderr.push(se);
    }
    Ok(SensitivityProfile::from_table(j, grid, values, stderr))
}

/// The event `Y = 1{X_companion <= threshold}` used for chatting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEvent {
    pub companion: usize,
    pub threshold: f64,
}

impl ThresholdEvent {
    pub fn probability(&self, source: &SourceModel, below: bool) -> f64 {
        let p = source.marginal(self.companion).cdf(self.threshold);
        if below {
            p
        } else {
            1.0 - p
        }
    }
}

/// `γ_{j|Y}(x | y) = sqrt(E[g_j² | X_j = x, Y = y])` for independent sources.
pub fn conditional_sensitivity_profile(
    g: &dyn FunctionModel,
    source: &SourceModel,
    j: usize,
    event: ThresholdEvent,
    below: bool,
    opts: ProfileOptions,
) -> Result<SensitivityProfile> {
    check_arity(g, source, j)?;
    let k = event.companion;
    if k == j || k >= source.n() {
        return Err(Error::Config(format!("companion variable {k} is invalid for variable {j}")));
    }
    if !source.is_independent() {
        return Err(Error::Unsupported("conditional profiles need independent sources".into()));
    }
    let py = event.probability(source, below);
    if py <= 0.0 {
        return Err(Error::Domain(format!("P(Y = {}) is zero", if below { 1 } else { 0 })));
    }
    if source.is_iid_uniform() {
        if let Some(c) = g.closed_form_conditional(j, k, event.threshold, below) {
            return Ok(SensitivityProfile::from_curve(j, c, opts.grid_size));
        }
    }
    let grid = unit_grid(opts.grid_size);
    let n = source.n();
    let uniforms = common_uniforms(opts, j, n);
    let mk = source.marginal(k).clone();
    let ft = mk.cdf(event.threshold);
    let rows = map_indices(grid.len(), |i| -> Result<(f64, f64)> {
        let sampler = source.conditional_given(j, grid[i])?;
        let mut x = vec![0.0; n];
        let mut acc = crate::sampling::Moments::default();
        for u in uniforms.chunks(n) {
            sampler.fill(u, &mut x);
            let v = if below { u[k] * ft } else { ft + u[k] * (1.0 - ft) };
            x[k] = mk.inverse_cdf(v);
            if let Some(d) = g.partial(j, &x) {
                acc.push(d * d);
            }
        }
        Ok(mean_and_stderr(acc))
    });
    tabulated(j, grid, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::Marginal;

    fn uniform(n: usize) -> SourceModel {
        SourceModel::uniform(n).unwrap()
    }

    #[test]
    fn registry_rejects_unknown_and_bad_arity() {
        assert!(matches!(from_name("nope", None, &[]), Err(Error::Config(_))));
        assert!(from_name("median", Some(4), &[]).is_err());
        assert_eq!(from_name("max", Some(3), &[]).unwrap().arity(), 3);
        for name in NAMES {
            let f = from_name(name, Some(3), &[2.0]);
            assert!(f.is_ok(), "{name}");
        }
    }

    /// A uniform source that is not flagged as uniform, forcing the MC path.
    fn flat_source(n: usize) -> SourceModel {
        SourceModel::iid(n, Marginal::custom(|_| 1.0, vec![]).unwrap()).unwrap()
    }

    #[test]
    fn max_closed_form_agrees_with_monte_carlo() {
        let g = Max { n: 3 };
        let opts = ProfileOptions { grid_size: 65, mc_samples: 20_000, seed: 3 };
        let mc = sensitivity_profile(&g, &flat_source(3), 0, opts).unwrap();
        assert!(!mc.closed_form);
        for (k, &x) in mc.grid.iter().enumerate() {
            let exact = x * x;
            let est = mc.values[k] * mc.values[k];
            assert!((est - exact).abs() <= 3.0 * mc.stderr[k] + 1e-12, "x={x} est={est} exact={exact}");
        }
    }

    #[test]
    fn median_closed_form_agrees_with_monte_carlo() {
        let g = Median { n: 5 };
        let opts = ProfileOptions { grid_size: 33, mc_samples: 20_000, seed: 9 };
        let mc = sensitivity_profile(&g, &flat_source(5), 2, opts).unwrap();
        let exact = g.closed_form_sensitivity(2).unwrap();
        for (k, &x) in mc.grid.iter().enumerate() {
            let e = exact.eval(x).powi(2);
            let est = mc.values[k].powi(2);
            assert!((est - e).abs() <= 3.0 * mc.stderr[k] + 1e-12, "x={x}");
        }
    }

    #[test]
    fn square_profile_is_distribution_free() {
        let src = SourceModel::iid(1, Marginal::power(2.0).unwrap()).unwrap();
        let p = sensitivity_profile(&Square, &src, 0, ProfileOptions::default()).unwrap();
        assert!(p.closed_form);
        assert!((p.eval(0.3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn quadrant_profiles() {
        let l = 16.0;
        let q = SlopeGrid::quadrant(l).unwrap();
        let p = sensitivity_profile(&q, &uniform(2), 0, ProfileOptions::default()).unwrap();
        assert!((p.eval(0.2) - ((l * l + 1.0) / 2.0).sqrt()).abs() < 1e-12);
        assert!((p.eval(0.8) - ((l * l + 1.0) / 2.0).sqrt()).abs() < 1e-12);
        let ev = ThresholdEvent { companion: 1, threshold: 0.5 };
        // Y = 0 means X_2 > 1/2.
        let c0 = conditional_sensitivity_profile(&q, &uniform(2), 0, ev, false, ProfileOptions::default()).unwrap();
        assert_eq!(c0.eval(0.25), 1.0);
        assert_eq!(c0.eval(0.75), l);
        let c1 = conditional_sensitivity_profile(&q, &uniform(2), 0, ev, true, ProfileOptions::default()).unwrap();
        assert_eq!(c1.eval(0.25), l);
        assert_eq!(c1.eval(0.75), 1.0);
        // g is continuous in x_1 and the x_1 partial matches the slopes.
        assert!((q.evaluate(&[0.5, 0.2]) - (l * 0.5 + 0.2)).abs() < 1e-15);
        assert!((q.evaluate(&[1.0, 0.7]) - (0.5 + 0.5 * l + 0.7)).abs() < 1e-15);
    }

    #[test]
    fn conditional_profiles_total_expectation() {
        let g = Max { n: 2 };
        let src = flat_source(2);
        let ev = ThresholdEvent { companion: 1, threshold: 0.5 };
        let opts = ProfileOptions { grid_size: 33, mc_samples: 20_000, seed: 5 };
        let lo = conditional_sensitivity_profile(&g, &src, 0, ev, true, opts).unwrap();
        let hi = conditional_sensitivity_profile(&g, &src, 0, ev, false, opts).unwrap();
        for (k, &x) in lo.grid.iter().enumerate() {
            let mix = 0.5 * lo.values[k].powi(2) + 0.5 * hi.values[k].powi(2);
            let se = 0.5 * (lo.stderr[k].powi(2) + hi.stderr[k].powi(2)).sqrt();
            assert!((mix - x).abs() <= 3.0 * se + 1e-12, "x={x}");
            // Brute force: given X_2 > 1/2, P(X_2 < x) = 2(x - 1/2)^+.
            let oracle = (2.0 * (x - 0.5)).clamp(0.0, 1.0);
            assert!((hi.values[k].powi(2) - oracle).abs() <= 3.0 * hi.stderr[k] + 1e-12);
        }
    }

    #[test]
    fn dependent_grid_profile_uses_slices() {
        // X_2 = X_1 cell-wise: on the diagonal cells max's sensitivity is ~1/2.
        let src = SourceModel::grid(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let opts = ProfileOptions { grid_size: 17, mc_samples: 20_000, seed: 2 };
        let p = sensitivity_profile(&Max { n: 2 }, &src, 0, opts).unwrap();
        // At x = 0.25, X_2 is uniform on [0, 1/2], so P(X_2 < x) = 1/2.
        let k = 4;
        assert!((p.grid[k] - 0.25).abs() < 1e-15);
        assert!((p.values[k].powi(2) - 0.5).abs() <= 3.0 * p.stderr[k]);
    }

    #[test]
    fn lattice_bounds_cover_closed_forms() {
        let g = Max { n: 2 };
        let exact = g.partial_bounds(0, &[(0.6, 0.7), (0.1, 0.2)]);
        assert_eq!(exact, PartialBounds { inf: 1.0, sup: 1.0, everywhere_defined: true });
        let s = sampled_partial_bounds(&g, 0, &[(0.6, 0.7), (0.1, 0.2)]);
        assert_eq!(s, exact);
        let diag = g.partial_bounds(0, &[(0.1, 0.3), (0.2, 0.4)]);
        assert!(!diag.everywhere_defined && diag.inf == 0.0 && diag.sup == 1.0);
    }
}
