//! Numerical integration helpers: adaptive 21-point Gauss–Kronrod for
//! vector-valued integrands, Gauss–Hermite rules for standard normal
//! expectations, and the standard normal density/tail.

use libm::erfc;

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Density of `N(0, s^2)`.
#[inline]
pub fn normal_pdf(x: f64, s: f64) -> f64 {
    std_normal_pdf(x / s) / s
}

/// Standard normal upper tail `H(x) = P(ξ > x)`.
pub fn ccdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

// Kronrod abscissae and weights (21 points) with the embedded 10-point Gauss
// weights, from QUADPACK's qk21.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_600_525_534_258,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Tolerances for [`integrate`]: a component is accepted once its error
/// estimate is below `max(abs_tol, rel_tol * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<const K: usize> {
    pub value: [f64; K],
    pub error: [f64; K],
    pub intervals: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
struct Piece<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: [f64; K],
}

fn kronrod<const K: usize, F: FnMut(f64) -> [f64; K]>(f: &mut F, a: f64, b: f64) -> Piece<K> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kr = [0.0; K];
    let mut ga = [0.0; K];
    for j in 0..K {
        kr[j] = WGK[10] * fc[j];
    }
    for (i, (&x, &w)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for j in 0..K {
            let s = f1[j] + f2[j];
            kr[j] += w * s;
            if i % 2 == 1 {
                ga[j] += WG[i / 2] * s;
            }
        }
    }
    let mut value = [0.0; K];
    let mut error = [0.0; K];
    for j in 0..K {
        value[j] = kr[j] * half;
        error[j] = ((kr[j] - ga[j]) * half).abs();
    }
    Piece { a, b, value, error }
}

/// Adaptive Gauss–Kronrod integration of a vector-valued function over the
/// consecutive segments defined by `points` (ascending, at least two).
///
/// The piece with the largest relative-to-tolerance error is bisected until
/// every component meets the tolerance or the interval budget is spent.
pub fn integrate<const K: usize, F>(mut f: F, points: &[f64], tol: &Tolerance) -> Integral<K>
where
    F: FnMut(f64) -> [f64; K],
{
    let mut pieces: Vec<Piece<K>> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod(&mut f, w[0], w[1]))
        .collect();
    if pieces.is_empty() {
        return Integral {
            value: [0.0; K],
            error: [0.0; K],
            intervals: 0,
            converged: true,
        };
    }
    loop {
        let mut value = [0.0; K];
        let mut error = [0.0; K];
        for p in &pieces {
            for j in 0..K {
                value[j] += p.value[j];
                error[j] += p.error[j];
            }
        }
        let target: [f64; K] = std::array::from_fn(|j| {
            tol.abs_tol.max(tol.rel_tol * value[j].abs()).max(f64::MIN_POSITIVE)
        });
        let done = (0..K).all(|j| error[j] <= target[j]);
        if done || pieces.len() >= tol.max_intervals || !value.iter().all(|v| v.is_finite()) {
            return Integral {
                value,
                error,
                intervals: pieces.len(),
                converged: done,
            };
        }
        let score = |p: &Piece<K>| {
            (0..K)
                .map(|j| p.error[j] / target[j])
                .fold(0.0f64, f64::max)
        };
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (i, score(p)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // cannot split further; accept as is
            return Integral {
                value,
                error,
                intervals: pieces.len() + 1,
                converged: false,
            };
        }
        pieces.push(kronrod(&mut f, p.a, mid));
        pieces.push(kronrod(&mut f, mid, p.b));
    }
}

/// Scalar convenience wrapper over [`integrate`].
pub fn integrate_scalar<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: &Tolerance) -> (f64, f64) {
    let r = integrate(|x| [f(x)], points, tol);
    (r.value[0], r.error[0])
}

/// Gauss–Hermite rule for expectations under the standard normal:
/// `E[f(ξ)] ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
    /// probabilists' Hermite polynomials, weights the Christoffel numbers.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (0..n).map(|k| (k as f64).sqrt()).collect();
        tridiagonal_eigenvalues(&mut diag, &mut off);
        diag.sort_by(f64::total_cmp);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (i, &x0) in diag.iter().enumerate() {
            let mut x = if n % 2 == 1 && i == n / 2 { 0.0 } else { x0 };
            // polish with Newton on He_n: He_n' = n He_{n-1}
            for _ in 0..3 {
                let (p, q) = hermite_pair(n, x);
                if q == 0.0 {
                    break;
                }
                x -= p / (n as f64 * q);
            }
            nodes.push(x);
            weights.push(1.0 / christoffel_sum(n, x));
        }
        // enforce exact symmetry
        for i in 0..n / 2 {
            let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            nodes[i] = -a;
            nodes[n - 1 - i] = a;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { nodes, weights }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Monic probabilists' Hermite values `(He_n(x), He_{n-1}(x))`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `Σ_{k<n} p_k(x)^2` for the orthonormal probabilists' Hermite polynomials.
fn christoffel_sum(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    let mut sum = 1.0;
    for k in 1..n {
        let kf = k as f64;
        let next = (x * cur - (kf - 1.0).sqrt() * prev) / kf.sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
    }
    sum
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson
/// shifts. `off[i]` couples rows `i-1` and `i` (`off[0]` unused). Results are
/// left in `diag`.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) {
    let n = diag.len();
    if n < 2 {
        return;
    }
    let e = off;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "tridiagonal QL failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}
