//! Quadrature and root finding on `[0, 1]`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Nodes of the 8-point Gauss–Legendre rule on `[-1, 1]`.
pub const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
/// Weights of the 8-point Gauss–Legendre rule on `[-1, 1]`.
pub const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

const ABS_TOL: f64 = 1e-13;
const REL_TOL: f64 = 1e-12;
const MAX_SEGMENTS: usize = 2000;

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// The integrand is never evaluated at the endpoints, so integrable endpoint
/// singularities such as `log x` are fine.
pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Quadrature {
    quad_tol(f, a, b, ABS_TOL, REL_TOL)
}

pub fn quad_tol<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    if !(b > a) {
        return Quadrature { value: 0.0, error: 0.0 };
    }
    let (value, error) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let (mut total, mut total_err) = (value, error);
    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < MAX_SEGMENTS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
    }
    // Re-sum to shed the drift of the running updates.
    let (value, error) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
    Quadrature { value, error }
}

/// Integrate `f` over `[a, b]`, splitting at every break that falls inside.
pub fn integrate_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut left = a;
    for &x in breaks.iter().filter(|&&x| x > a && x < b) {
        total += quad(&f, left, x).value;
        left = x;
    }
    total + quad(&f, left, b).value
}

/// Integrate `f` over `[0, 1]` with interior breakpoints.
pub fn integrate_unit<F: Fn(f64) -> f64>(f: F, breaks: &[f64]) -> f64 {
    integrate_split(f, 0.0, 1.0, breaks)
}

/// 8-point Gauss–Legendre on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let s: f64 = GL8_NODES
        .iter()
        .zip(GL8_WEIGHTS)
        .map(|(&t, w)| w * f(c + h * t))
        .sum();
    s * h
}

/// Smallest `x` in `[lo, hi]` with `f(x) >= y` for nondecreasing `f`, to within `tol`.
pub fn generalized_inverse<F: Fn(f64) -> f64>(f: F, y: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    if f(lo) >= y {
        return lo;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// [`generalized_inverse`] for a nondecreasing `f` with derivative `df`,
/// using Newton steps that fall back to bisection.
pub fn newton_inverse<F, D>(f: F, df: D, y: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if f(lo) >= y {
        return lo;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let v = f(x);
        if v >= y {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let step = if d > 0.0 { x - (v - y) / d } else { f64::NAN };
        x = if step > lo && step < hi {
            // Probe just past the root so the bracket closes from both sides.
            let nudge = if v >= y { -tol } else { tol };
            if (step - x).abs() < tol { (step + 0.5 * nudge).clamp(lo, hi) } else { step }
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            x = 0.5 * (lo + hi);
            if x <= lo || x >= hi {
                break;
            }
        }
    }
    hi
}

/// Merge and sort breakpoint lists, dropping duplicates and anything outside `(0, 1)`.
pub fn merge_breaks(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists
        .iter()
        .flat_map(|l| l.iter().copied())
        .filter(|&x| x > 0.0 && x < 1.0)
        .collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    all
}

/// Least-squares line `log₂ y = slope · x + intercept`.
pub fn fit_log2_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let ly: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// A real function on `[0, 1]` together with the interior points where it
/// (or its derivative) may jump.
#[derive(Clone)]
pub struct Curve {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    breaks: Vec<f64>,
}

impl Curve {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static, breaks: Vec<f64>) -> Self {
        let breaks = merge_breaks(&[&breaks]);
        Self { f: Arc::new(f), breaks }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, Vec::new())
    }

    /// Piecewise-linear interpolant through `(grid[i], values[i])`.
    pub fn interpolant(grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        assert!(grid.len() >= 2);
        let breaks = grid[1..grid.len() - 1].to_vec();
        let f = move |x: f64| {
            let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1);
            let (x0, x1) = (grid[i - 1], grid[i]);
            let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
            values[i - 1] + t * (values[i] - values[i - 1])
        };
        Self::new(f, breaks)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// `∫_0^1 self`.
    pub fn integral(&self) -> f64 {
        integrate_unit(|x| self.eval(x), &self.breaks)
    }
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Curve").field("breaks", &self.breaks.len()).finish()
    }
}
