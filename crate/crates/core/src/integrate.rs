//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::scalar::Real;

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

const MAX_DEPTH: u32 = 40;

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let c = (a + b) * half;
    let h = (b - a) * half;
    let fc = f(c);
    let mut k = fc * T::lit(WGK[7]);
    let mut g = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = h * T::lit(XGK[j]);
        let s = f(c - dx) + f(c + dx);
        k = k + s * T::lit(WGK[j]);
        if j % 2 == 1 {
            g = g + s * T::lit(WG[j / 2]);
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T, whole: (T, T), abs_tol: T, rel_tol: T, depth: u32) -> T {
    let (est, err) = whole;
    if err <= abs_tol.max(rel_tol * est.abs()) || depth >= MAX_DEPTH || !err.is_finite() {
        return est;
    }
    let m = (a + b) * T::lit(0.5);
    let left = kronrod(f, a, m);
    let right = kronrod(f, m, b);
    let half_tol = abs_tol * T::lit(0.5);
    adapt(f, a, m, left, half_tol, rel_tol, depth + 1) + adapt(f, m, b, right, half_tol, rel_tol, depth + 1)
}

/// Integrates `f` over `[a, b]`, splitting first at every breakpoint that
/// falls strictly inside the interval.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, breaks: &[T], abs_tol: T, rel_tol: T) -> T {
    let mut pts: Vec<T> = Vec::with_capacity(breaks.len() + 2);
    pts.push(a);
    pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    pts.dedup();
    let per = abs_tol / T::from_usize(pts.len() - 1).unwrap_or_else(T::one);
    pts.windows(2)
        .map(|w| adapt(&f, w[0], w[1], kronrod(&f, w[0], w[1]), per, rel_tol, 0))
        .fold(T::zero(), |acc, x| acc + x)
}
