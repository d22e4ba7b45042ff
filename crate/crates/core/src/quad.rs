//! Quadrature rules: Gauss-Legendre nodes and adaptive Gauss-Kronrod (G10/K21).

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::operator::C64;
use crate::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

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
    0.123_491_976_262_065_851_077_208_745_644_555,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// One K21 panel: `(kronrod, |kronrod - gauss|)`.
fn kronrod<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mid = f(c);
    let mut k = mid * WGK[10];
    let mut g = C64::new(0.0, 0.0);
    for j in 0..10 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += s * WGK[j];
        if j % 2 == 1 {
            g += s * WG[j / 2];
        }
    }
    (k * h, ((k - g) * h).norm())
}

struct Panel {
    a: f64,
    b: f64,
    value: C64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: C64,
    pub error: f64,
}

/// Adaptive bisection on the panel with the largest error until the summed
/// error is below `abs_tol`. Fails with the achieved estimate after
/// `max_panels`.
pub fn integrate<F: FnMut(f64) -> C64>(mut f: F, a: f64, b: f64, abs_tol: f64, max_panels: usize) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: C64::new(0.0, 0.0),
            error: 0.0,
        });
    }
    let (value, err) = kronrod(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, err });
    let mut total_err = err;
    while total_err > abs_tol {
        if heap.len() >= max_panels {
            return Err(Error::QuadratureFailure { estimate: total_err });
        }
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::QuadratureFailure { estimate: total_err });
        }
        let (v1, e1) = kronrod(&mut f, p.a, m);
        let (v2, e2) = kronrod(&mut f, m, p.b);
        heap.push(Panel { a: p.a, b: m, value: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, value: v2, err: e2 });
        total_err = heap.iter().map(|p| p.err).sum();
    }
    // Sum in position order so the result does not depend on heap layout.
    let mut panels = heap.into_vec();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = panels.iter().map(|p| p.value).sum();
    Ok(Estimate { value, error: total_err })
}

/// `int_0^inf f` by adaptive panels on `[0, L], [L, 2L], ...` until a panel
/// contributes less than `tail_tol`. Gives up at `max_len`.
pub fn integrate_half_line<F: FnMut(f64) -> C64>(
    mut f: F,
    start_len: f64,
    abs_tol: f64,
    tail_tol: f64,
    max_len: f64,
) -> Result<Estimate> {
    let mut est = integrate(&mut f, 0.0, start_len, 0.5 * abs_tol, 4000)?;
    let mut lo = start_len;
    loop {
        let hi = 2.0 * lo;
        let piece = integrate(&mut f, lo, hi, 0.25 * abs_tol, 4000)?;
        est.value += piece.value;
        est.error += piece.error;
        if piece.value.norm() + piece.error < tail_tol && f(hi).norm() * hi < tail_tol {
            return Ok(est);
        }
        if hi >= max_len {
            return Err(Error::NotIntegrable {
                tail: piece.value.norm() + piece.error,
                cutoff: hi,
            });
        }
        lo = hi;
    }
}
