//! Adaptive Gauss-Kronrod quadrature and fixed Gauss-Legendre rules.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not converge on [{a}, {b}]: estimate {value}, error {error} after {evaluations} evaluations")]
pub struct QuadratureError {
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: 1e-300,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self {
            rel,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]`, bisecting the worst segment until the summed
/// error estimate falls below `max(abs, rel * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<Integral, QuadratureError> {
    integrate_with_breaks(&mut f, &[a, b], tol)
}

/// Like [`integrate`], with the initial partition given by `points` (sorted).
/// Use it to put known kinks and jumps of the integrand on segment ends.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    f: &mut F,
    points: &[f64],
    tol: Tolerance,
) -> Result<Integral, QuadratureError> {
    let (a, b) = (points[0], points[points.len() - 1]);
    if a == b {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut segs: Vec<Segment> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(f, w[0], w[1]))
        .collect();
    let mut evaluations = 15 * segs.len();
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(QuadratureError {
                a,
                b,
                value,
                error,
                evaluations,
            });
        }
        if error <= tol.abs.max(tol.rel * value.abs()) {
            return Ok(Integral {
                value,
                error,
                evaluations,
            });
        }
        if segs.len() >= tol.max_intervals {
            return Err(QuadratureError {
                a,
                b,
                value,
                error,
                evaluations,
            });
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc });
        let s = segs.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // Segment cannot be split further in floating point.
            return Err(QuadratureError {
                a,
                b,
                value,
                error,
                evaluations,
            });
        }
        segs.push(gk15(f, s.a, mid));
        segs.push(gk15(f, mid, s.b));
        evaluations += 30;
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Fixed-order Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rule: &(Vec<f64>, Vec<f64>),
) -> f64 {
    let (c, half) = (0.5 * (a + b), 0.5 * (b - a));
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(c + half * x))
        .sum::<f64>()
        * half
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}
