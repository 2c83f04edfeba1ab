//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector-space valued
//! integrands, with user breakpoints and support for infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul};

use crate::error::{Error, Result};
use crate::linalg::{frob, Mat};

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
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Values that can be accumulated by the quadrature rule.
pub trait QuadValue: Clone + Add<Output = Self> + Mul<f64, Output = Self> {
    fn zero_like(&self) -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

/// Matrix wrapper so `Mat * f64` is available as a plain scaling.
#[derive(Clone, Debug)]
pub struct MatValue(pub Mat);

impl Add for MatValue {
    type Output = MatValue;
    fn add(self, rhs: MatValue) -> MatValue {
        MatValue(self.0 + rhs.0)
    }
}

impl Mul<f64> for MatValue {
    type Output = MatValue;
    fn mul(self, rhs: f64) -> MatValue {
        MatValue(self.0.map(|z| z * rhs))
    }
}

impl QuadValue for MatValue {
    fn zero_like(&self) -> Self {
        MatValue(Mat::zeros(self.0.nrows(), self.0.ncols()))
    }
    fn magnitude(&self) -> f64 {
        frob(&self.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_subdivisions: 4000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuadResult<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

/// One Gauss–Kronrod 7/15 panel; returns (kronrod value, |K - G| estimate).
pub fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc.clone() * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let pair = f1 + f2;
        kron = kron + pair.clone() * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + pair * WG[j / 2];
        }
    }
    let kron = kron * half;
    let gauss = gauss * half;
    let err = (kron.clone() + gauss * -1.0).magnitude();
    (kron, err)
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    err: f64,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.partial_cmp(&other.err).unwrap_or(Ordering::Equal)
    }
}

/// Integrate `f` over the finite range `[a, b]`, starting from the panels cut
/// by `breaks` (points outside `(a, b)` are ignored).
pub fn integrate<V: QuadValue, F: FnMut(f64) -> V>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult<V>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::structural("integrate: finite bounds required"));
    }
    let mut cuts: Vec<f64> = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    inner.dedup();
    cuts.extend(inner);
    cuts.push(b);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (value, err) = gk15(&mut f, w[0], w[1]);
        evaluations += 15;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            err,
        });
    }
    let Some(first) = heap.peek() else {
        // empty range: integrate a single point to learn the value shape
        let probe = f(a);
        return Ok(QuadResult {
            value: probe.zero_like(),
            error: 0.0,
            evaluations: 1,
        });
    };
    let zero = first.value.zero_like();

    let total = |heap: &BinaryHeap<Panel<V>>| -> (V, f64) {
        let mut v = zero.clone();
        let mut e = 0.0;
        for p in heap.iter() {
            v = v + p.value.clone();
            e += p.err;
        }
        (v, e)
    };

    let mut subdivisions = heap.len();
    loop {
        let (value, err) = total(&heap);
        let target = opts.abs_tol.max(opts.rel_tol * value.magnitude());
        if err <= target {
            return Ok(QuadResult {
                value,
                error: err,
                evaluations,
            });
        }
        if subdivisions >= opts.max_subdivisions {
            return Err(Error::accuracy("adaptive quadrature", err));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // panel can no longer be split in floating point
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        subdivisions += 1;
    }
}

/// Integrate over a range whose ends may be infinite, by the substitutions
/// `x = a + t/(1-t)`, `x = b - t/(1-t)` or `x = t/(1-t²)`.
pub fn integrate_extended<V: QuadValue, F: FnMut(f64) -> V>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult<V>> {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => integrate(f, a, b, breaks, opts),
        (true, false) => {
            let map = |t: f64| a + t / (1.0 - t);
            let inv = |x: f64| (x - a) / (1.0 + x - a);
            let tb: Vec<f64> = breaks.iter().filter(|&&x| x > a).map(|&x| inv(x)).collect();
            integrate(
                |t| {
                    let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                    f(map(t)) * jac
                },
                0.0,
                1.0,
                &tb,
                opts,
            )
        }
        (false, true) => {
            let map = |t: f64| b - t / (1.0 - t);
            let inv = |x: f64| (b - x) / (1.0 + b - x);
            let tb: Vec<f64> = breaks.iter().filter(|&&x| x < b).map(|&x| inv(x)).collect();
            integrate(
                |t| {
                    let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                    f(map(t)) * jac
                },
                0.0,
                1.0,
                &tb,
                opts,
            )
        }
        (false, false) => {
            let map = |t: f64| t / (1.0 - t * t);
            let inv = |x: f64| {
                if x == 0.0 {
                    0.0
                } else {
                    (-1.0 + (1.0 + 4.0 * x * x).sqrt()) / (2.0 * x)
                }
            };
            let tb: Vec<f64> = breaks.iter().map(|&x| inv(x)).collect();
            integrate(
                |t| {
                    let d = 1.0 - t * t;
                    let jac = (1.0 + t * t) / (d * d);
                    f(map(t)) * jac
                },
                -1.0,
                1.0,
                &tb,
                opts,
            )
        }
    }
}
