//! Weak-coupling limit at desk scale.
//!
//! The one-particle dynamics enters only through the scalar correlation
//! kernel `c(tau)` for `tau >= 0`, extended by `c(-tau) = c(tau)*`. Two
//! quantities are computed for a coupling `lambda` and compared against their
//! `lambda -> 0` values: the two-point integral of a test function and vacuum
//! matrix elements of the iterated series of a linear Wick-ordered equation.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::expr::{Bindings, Compiled, Expr};
use crate::operator::{OperatorMatrix, C64};
use crate::quad::{gauss_legendre, integrate, integrate_half_line};
use crate::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
/// Kernel mass neglected beyond the truncation point.
const TAIL_MASS: f64 = 1e-17;
const MAX_PANELS: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationKernel {
    /// `c(tau) = amplitude * beta * exp(-beta tau)`, so `kappa = amplitude`.
    Exponential { amplitude: C64, beta: f64 },
    /// Piecewise-linear through `(taus[i], values[i])`, zero after the last node.
    Tabulated { taus: Vec<f64>, values: Vec<C64> },
}

impl CorrelationKernel {
    pub fn exponential(amplitude: C64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) || !(amplitude.re.is_finite() && amplitude.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("exponential kernel needs beta > 0 and finite amplitude, got beta = {beta}")));
        }
        Ok(Self::Exponential { amplitude, beta })
    }

    /// The last tabulated value must already be negligible, otherwise the
    /// truncation is not a valid tail bound.
    pub fn tabulated(taus: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if taus.len() < 2 || taus.len() != values.len() {
            return Err(Error::InvalidArgument("tabulated kernel needs at least two (tau, value) pairs".into()));
        }
        if taus[0] != 0.0 || taus.windows(2).any(|w| !(w[1] > w[0])) || !taus.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidArgument("kernel taus must start at 0 and strictly increase".into()));
        }
        if !values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::InvalidArgument("kernel values must be finite".into()));
        }
        let last = values.last().expect("non-empty").norm();
        if last > 1e-12 {
            return Err(Error::NotIntegrable {
                tail: last,
                cutoff: *taus.last().expect("non-empty"),
            });
        }
        Ok(Self::Tabulated { taus, values })
    }

    /// `c(tau)` for `tau >= 0`.
    pub fn at(&self, tau: f64) -> C64 {
        debug_assert!(tau >= 0.0);
        match self {
            Self::Exponential { amplitude, beta } => amplitude * (beta * (-beta * tau).exp()),
            Self::Tabulated { taus, values } => {
                if tau >= *taus.last().expect("non-empty") {
                    return ZERO;
                }
                let i = taus.partition_point(|&x| x <= tau) - 1;
                let w = (tau - taus[i]) / (taus[i + 1] - taus[i]);
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// Hermitian extension to the whole line.
    pub fn extended(&self, tau: f64) -> C64 {
        if tau >= 0.0 {
            self.at(tau)
        } else {
            self.at(-tau).conj()
        }
    }

    /// Point beyond which the kernel is treated as zero.
    pub fn cutoff(&self) -> f64 {
        match self {
            Self::Exponential { amplitude, beta } => {
                let a = amplitude.norm();
                if a <= TAIL_MASS {
                    0.0
                } else {
                    (a / TAIL_MASS).ln() / beta
                }
            }
            Self::Tabulated { taus, .. } => *taus.last().expect("non-empty"),
        }
    }

    /// Upper bound on `int_0^inf |c|`.
    pub fn abs_integral(&self) -> f64 {
        match self {
            Self::Exponential { amplitude, .. } => amplitude.norm(),
            // |c| is convex on each linear piece, so the trapezoid overestimates.
            Self::Tabulated { taus, values } => taus
                .windows(2)
                .zip(values.windows(2))
                .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0].norm() + v[1].norm()))
                .sum(),
        }
    }

    /// Integration breakpoints on `[0, cutoff]`.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Exponential { .. } => vec![0.0, self.cutoff()],
            Self::Tabulated { taus, .. } => taus.clone(),
        }
    }

    /// `int_0^cutoff g(tau) c(tau) dtau` panel by panel.
    fn integrate_against(&self, mut g: impl FnMut(f64) -> C64, abs_tol: f64) -> Result<(C64, f64)> {
        let bp = self.breakpoints();
        let share = abs_tol / bp.len().max(2) as f64;
        let mut value = ZERO;
        let mut error = 0.0;
        for w in bp.windows(2) {
            let est = integrate(|tau| g(tau) * self.at(tau), w[0], w[1], share, MAX_PANELS)?;
            value += est.value;
            error += est.error;
        }
        Ok((value, error))
    }
}

/// `kappa = int_0^inf c`.
pub fn kernel_kappa(kernel: &CorrelationKernel) -> Result<C64> {
    match kernel {
        CorrelationKernel::Exponential { beta, .. } => {
            let est = integrate_half_line(|t| kernel.at(t), 1.0 / beta, 1e-11, 1e-13, 1e8 / beta)?;
            Ok(est.value)
        }
        CorrelationKernel::Tabulated { .. } => Ok(kernel.integrate_against(|_| C64::new(1.0, 0.0), 1e-11)?.0),
    }
}

fn require_dissipative(kappa: C64) -> Result<()> {
    if kappa.re > 0.0 {
        Ok(())
    } else {
        Err(Error::InvariantViolation(format!("kernel must have Re kappa > 0, got kappa = {kappa}")))
    }
}

fn require_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")))
    }
}

/// Runs `body` with a sink for the first evaluation error raised inside a
/// quadrature closure, which cannot return `Result` itself.
fn with_error_sink<T>(body: impl FnOnce(&dyn Fn(Error)) -> Result<T>) -> Result<T> {
    let sink: RefCell<Option<Error>> = RefCell::new(None);
    let record = |e: Error| {
        let mut s = sink.borrow_mut();
        if s.is_none() {
            *s = Some(e);
        }
    };
    let out = body(&record);
    match sink.into_inner() {
        Some(e) => Err(e),
        None => out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPoint {
    pub value: C64,
    pub limit: C64,
    pub error: f64,
}

impl TwoPoint {
    pub fn deviation(&self) -> f64 {
        (self.value - self.limit).norm()
    }
}

/// `int int_{[0, window]^2} phi(t, s) c~((t - s) / lambda^2) / lambda^2 dt ds`
/// and its limit `(kappa + kappa*) int_0^window phi(u, u) du`.
///
/// Evaluated in `u = (t + s) / 2`, `tau = (t - s) / lambda^2` with the
/// `+tau` and `-tau` halves folded together, so a Hermitian-symmetric `phi`
/// gives a real result by construction.
pub fn two_point_integrals(
    phi: &Expr,
    bindings: &Bindings,
    kernel: &CorrelationKernel,
    lambda: f64,
    window: f64,
) -> Result<TwoPoint> {
    require_lambda(lambda)?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {window}")));
    }
    let kappa = kernel_kappa(kernel)?;
    require_dissipative(kappa)?;
    let phi = phi.compile(bindings)?;
    let l2 = lambda * lambda;
    let cut = kernel.cutoff();
    let bp = kernel.breakpoints();

    with_error_sink(|record| {
        let eval = |t: f64, s: f64| -> f64 {
            phi.eval3(0.0, t, s).unwrap_or_else(|e| {
                record(e.into());
                f64::NAN
            })
        };
        let inner = |u: f64| -> C64 {
            let reach = (2.0 * u).min(2.0 * (window - u)).max(0.0) / l2;
            let top = reach.min(cut);
            let mut acc = ZERO;
            for w in bp.windows(2) {
                let (a, b) = (w[0], w[1].min(top));
                if b <= a {
                    break;
                }
                let folded = |tau: f64| {
                    let d = 0.5 * l2 * tau;
                    let c = kernel.at(tau);
                    c * eval(u + d, u - d) + c.conj() * eval(u - d, u + d)
                };
                match integrate(folded, a, b, 1e-13, MAX_PANELS) {
                    Ok(est) => acc += est.value,
                    Err(e) => {
                        record(e);
                        return C64::new(f64::NAN, 0.0);
                    }
                }
            }
            acc
        };
        let outer = integrate(inner, 0.0, window, 1e-10, MAX_PANELS)?;
        let diag = integrate(|u| C64::new(eval(u, u), 0.0), 0.0, window, 1e-12, MAX_PANELS)?;
        Ok(TwoPoint {
            value: outer.value,
            limit: diag.value * (kappa + kappa.conj()),
            error: outer.error + diag.error,
        })
    })
}

/// `f_lambda(t) = int_0^inf f(t + lambda^2 u) c(u) du`.
pub fn collective_smear(f: &Expr, bindings: &Bindings, kernel: &CorrelationKernel, lambda: f64, t: f64) -> Result<C64> {
    require_lambda(lambda)?;
    let f = f.compile(bindings)?;
    smear(&f, kernel, lambda, t)
}

fn smear(f: &Compiled, kernel: &CorrelationKernel, lambda: f64, t: f64) -> Result<C64> {
    let l2 = lambda * lambda;
    with_error_sink(|record| {
        let g = |u: f64| {
            C64::new(
                f.eval(0.0, t + l2 * u).unwrap_or_else(|e| {
                    record(e.into());
                    f64::NAN
                }),
                0.0,
            )
        };
        Ok(kernel.integrate_against(g, 1e-12)?.0)
    })
}

/// Barycentric interpolant through Chebyshev extrema on `[a, b]`.
#[derive(Debug, Clone)]
struct Chebyshev {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    values: Vec<C64>,
}

impl Chebyshev {
    fn build(a: f64, b: f64, degree: usize, mut f: impl FnMut(f64) -> Result<C64>) -> Result<Self> {
        let nodes: Vec<f64> = (0..=degree)
            .map(|j| {
                let x = (std::f64::consts::PI * j as f64 / degree as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * x
            })
            .collect();
        let values = nodes.iter().map(|&t| f(t)).collect::<Result<_>>()?;
        Ok(Self { a, b, nodes, values })
    }

    fn eval(&self, t: f64) -> C64 {
        debug_assert!(t >= self.a - 1e-12 && t <= self.b + 1e-12);
        let n = self.nodes.len() - 1;
        let mut num = ZERO;
        let mut den = 0.0;
        for (j, (&x, &v)) in self.nodes.iter().zip(&self.values).enumerate() {
            let d = t - x;
            if d == 0.0 {
                return v;
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                w *= 0.5;
            }
            num += v * (w / d);
            den += w / d;
        }
        num / den
    }
}

const CHEB_DEGREE: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    Limit,
}

impl std::fmt::Display for Lambda {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Lambda::Finite(l) => write!(f, "{l}"),
            Lambda::Limit => f.write_str("limit"),
        }
    }
}

/// Linear equation `dX/dt = sum a^alpha(t)^dag C_{alpha beta} X a^beta(t)`
/// and the vacuum-type matrix element `<u, X_t v>` between collective
/// exponential states of test functions `f` and `k`.
#[derive(Debug, Clone)]
pub struct LimitSeriesConfig {
    /// `c[alpha][beta]`.
    pub c: [[OperatorMatrix; 2]; 2],
    pub x0: OperatorMatrix,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
    pub f: Expr,
    pub k: Expr,
    pub bindings: Bindings,
    pub kernel: CorrelationKernel,
    pub t_max: f64,
    pub n_max: usize,
    /// Gauss-Legendre nodes per simplex dimension.
    pub quad_order: usize,
    /// Monte Carlo samples per order for orders 5 and 6.
    pub mc_samples: usize,
    pub seed: u64,
    /// Matrix elements are reported at `t_max * i / n_times`, `i = 1..=n_times`.
    pub n_times: usize,
}

impl LimitSeriesConfig {
    pub fn new(c: [[OperatorMatrix; 2]; 2], x0: OperatorMatrix, f: Expr, k: Expr, kernel: CorrelationKernel, t_max: f64) -> Self {
        let d = x0.dim();
        let mut e0 = vec![ZERO; d];
        e0[0] = C64::new(1.0, 0.0);
        Self {
            c,
            x0,
            u: e0.clone(),
            v: e0,
            f,
            k,
            bindings: Bindings::new(),
            kernel,
            t_max,
            n_max: 4,
            quad_order: 24,
            mc_samples: 20_000,
            seed: 0,
            n_times: 4,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_times).map(|i| self.t_max * i as f64 / self.n_times as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.c {
            for m in row {
                self.x0.check_dim(m)?;
            }
        }
        let d = self.dim();
        if self.u.len() != d || self.v.len() != d {
            return Err(Error::DimMismatch {
                left: d,
                right: if self.u.len() != d { self.u.len() } else { self.v.len() },
            });
        }
        if self.n_max > 6 {
            return Err(Error::InvalidArgument(format!("series order {} exceeds 6", self.n_max)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.quad_order == 0 || self.n_times == 0 || (self.n_max >= 5 && self.mc_samples < 2) {
            return Err(Error::InvalidArgument("quad_order, n_times and mc_samples must be positive".into()));
        }
        require_dissipative(kernel_kappa(&self.kernel)?)
    }
}

/// Time-dependent generator `M(t) = sum w_{alpha beta}(t) C_{alpha beta}`
/// with `w = (f^alpha)* k^beta`, `f^0 = 1`.
struct Generator<'a> {
    cfg: &'a LimitSeriesConfig,
    f1: Weight,
    k1: Weight,
}

enum Weight {
    Scaled(Compiled, C64),
    Interpolated(Chebyshev),
}

impl Weight {
    fn at(&self, t: f64) -> Result<C64> {
        match self {
            Weight::Scaled(f, kappa) => Ok(kappa * f.eval(0.0, t)?),
            Weight::Interpolated(ch) => Ok(ch.eval(t)),
        }
    }
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a LimitSeriesConfig, lambda: Lambda) -> Result<Self> {
        let f = cfg.f.compile(&cfg.bindings)?;
        let k = cfg.k.compile(&cfg.bindings)?;
        let (f1, k1) = match lambda {
            Lambda::Limit => {
                let kappa = kernel_kappa(&cfg.kernel)?;
                (Weight::Scaled(f, kappa), Weight::Scaled(k, kappa))
            }
            Lambda::Finite(l) => {
                require_lambda(l)?;
                let build = |g: &Compiled| Chebyshev::build(0.0, cfg.t_max, CHEB_DEGREE, |t| smear(g, &cfg.kernel, l, t));
                (Weight::Interpolated(build(&f)?), Weight::Interpolated(build(&k)?))
            }
        };
        Ok(Self { cfg, f1, k1 })
    }

    /// `M(t) y`.
    fn apply(&self, t: f64, y: &[C64]) -> Result<Vec<C64>> {
        let one = C64::new(1.0, 0.0);
        let fa = [one, self.f1.at(t)?.conj()];
        let kb = [one, self.k1.at(t)?];
        let d = y.len();
        let mut out = vec![ZERO; d];
        for (alpha, row) in self.cfg.c.iter().enumerate() {
            for (beta, m) in row.iter().enumerate() {
                let w = fa[alpha] * kb[beta];
                if w == ZERO {
                    continue;
                }
                let e = m.entries();
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = ZERO;
                    for (c, yc) in y.iter().enumerate() {
                        acc += e[r * d + c] * yc;
                    }
                    *o += w * acc;
                }
            }
        }
        Ok(out)
    }
}

fn mat_vec(m: &OperatorMatrix, v: &[C64]) -> Vec<C64> {
    let d = v.len();
    let e = m.entries();
    (0..d).map(|r| (0..d).map(|c| e[r * d + c] * v[c]).sum()).collect()
}

fn inner(u: &[C64], y: &[C64]) -> C64 {
    u.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesResult {
    pub lambda: Lambda,
    pub times: Vec<f64>,
    /// Partial sum through `n_max` at each time.
    pub values: Vec<C64>,
    /// `terms[i][n]`: order-`n` contribution at `times[i]`.
    pub terms: Vec<Vec<C64>>,
    /// Geometric bound on the omitted orders.
    pub tail_bound: f64,
    /// Ratio of the geometric bound; below one by construction.
    pub ratio: f64,
    /// Summed Monte Carlo standard error of orders 5 and 6 (zero otherwise).
    pub mc_error: f64,
}

fn sup_abs(f: &Compiled, a: f64, b: f64) -> Result<f64> {
    const SAMPLES: usize = 4000;
    let mut m: f64 = 0.0;
    for i in 0..=SAMPLES {
        let t = a + (b - a) * i as f64 / SAMPLES as f64;
        m = m.max(f.eval(0.0, t)?.abs());
    }
    Ok(m)
}

/// Ratio `x` of the geometric majorant: the order-`n` term is at most
/// `|u| |x0| |v| x^n` with `x = t_max sum_{alpha beta} |C_{alpha beta}| W_alpha W_beta`.
pub fn series_ratio(cfg: &LimitSeriesConfig, lambda: Lambda) -> Result<f64> {
    let reach = match lambda {
        Lambda::Finite(l) => l * l * cfg.kernel.cutoff(),
        Lambda::Limit => 0.0,
    };
    let mass = cfg.kernel.abs_integral();
    let wf = mass * sup_abs(&cfg.f.compile(&cfg.bindings)?, 0.0, cfg.t_max + reach)?;
    let wk = mass * sup_abs(&cfg.k.compile(&cfg.bindings)?, 0.0, cfg.t_max + reach)?;
    let wa = [1.0, wf];
    let wb = [1.0, wk];
    let mut m = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            m += cfg.c[a][b].frobenius_norm() * wa[a] * wb[b];
        }
    }
    Ok(m * cfg.t_max)
}

/// Partial sums of the iterated series. Orders up to 4 use nested
/// Gauss-Legendre on the time simplex, orders 5 and 6 Monte Carlo on sorted
/// uniform samples. The latest time acts leftmost, matching the equation.
pub fn series_matrix_element(cfg: &LimitSeriesConfig, lambda: Lambda) -> Result<SeriesResult> {
    cfg.validate()?;
    let ratio = series_ratio(cfg, lambda)?;
    if ratio >= 1.0 {
        return Err(Error::SeriesNotConvergent { ratio });
    }
    let gen = Generator::new(cfg, lambda)?;
    let (xs, ws) = gauss_legendre(cfg.quad_order);
    let x0v = mat_vec(&cfg.x0, &cfg.v);
    let times = cfg.times();

    let per_time: Vec<Result<(Vec<C64>, f64)>> = times
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| {
            let mut terms = vec![inner(&cfg.u, &x0v)];
            let mut mc_err = 0.0;
            for n in 1..=cfg.n_max {
                if n <= 4 {
                    let y = nested(&gen, &xs, &ws, n, t, &x0v)?;
                    terms.push(inner(&cfg.u, &y));
                } else {
                    let (mean, se) = simplex_monte_carlo(&gen, cfg, n, t, ti, &x0v)?;
                    terms.push(mean);
                    mc_err += se;
                }
            }
            Ok((terms, mc_err))
        })
        .collect();

    let mut values = Vec::with_capacity(times.len());
    let mut terms = Vec::with_capacity(times.len());
    let mut mc_error: f64 = 0.0;
    for r in per_time {
        let (t, e) = r?;
        values.push(t.iter().sum());
        terms.push(t);
        mc_error = mc_error.max(e);
    }
    let c0 = vec_norm(&cfg.u) * cfg.x0.frobenius_norm() * vec_norm(&cfg.v);
    let tail_bound = c0 * ratio.powi(cfg.n_max as i32 + 1) / (1.0 - ratio);
    Ok(SeriesResult {
        lambda,
        times,
        values,
        terms,
        tail_bound,
        ratio,
        mc_error,
    })
}

/// `int_{0 < t_1 < ... < t_n < s} M(t_n) ... M(t_1) y0`.
fn nested(gen: &Generator, xs: &[f64], ws: &[f64], n: usize, s: f64, y0: &[C64]) -> Result<Vec<C64>> {
    if n == 0 {
        return Ok(y0.to_vec());
    }
    let half = 0.5 * s;
    let mut acc = vec![ZERO; y0.len()];
    for (x, w) in xs.iter().zip(ws) {
        let r = half * (x + 1.0);
        let inner = nested(gen, xs, ws, n - 1, r, y0)?;
        let my = gen.apply(r, &inner)?;
        for (a, b) in acc.iter_mut().zip(my) {
            *a += b * (half * w);
        }
    }
    Ok(acc)
}

fn simplex_monte_carlo(
    gen: &Generator,
    cfg: &LimitSeriesConfig,
    n: usize,
    t: f64,
    time_index: usize,
    y0: &[C64],
) -> Result<(C64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((n as u64) << 32) | time_index as u64);
    let volume = t.powi(n as i32) / (1..=n).map(|i| i as f64).product::<f64>();
    let mut samples = Vec::with_capacity(cfg.mc_samples);
    let mut pts = vec![0.0; n];
    for _ in 0..cfg.mc_samples {
        for p in pts.iter_mut() {
            *p = rng.random::<f64>() * t;
        }
        pts.sort_by(f64::total_cmp);
        let mut y = y0.to_vec();
        for &r in &pts {
            y = gen.apply(r, &y)?;
        }
        samples.push(inner(&cfg.u, &y) * volume);
    }
    let m = samples.len() as f64;
    let mean: C64 = samples.iter().sum::<C64>() / m;
    let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeResult {
    pub lambda: Lambda,
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub steps: usize,
}

/// Matrix element of the limit equation `dY/dt = M(t) Y`, `Y(0) = x0 v`.
pub fn limit_ode_matrix_element(cfg: &LimitSeriesConfig) -> Result<OdeResult> {
    ode_matrix_element(cfg, Lambda::Limit)
}

/// Same equation with weights at coupling `lambda`; this is the resummed
/// series at that coupling.
pub fn ode_matrix_element(cfg: &LimitSeriesConfig, lambda: Lambda) -> Result<OdeResult> {
    cfg.validate()?;
    let gen = Generator::new(cfg, lambda)?;
    let y0 = mat_vec(&cfg.x0, &cfg.v);
    let times = cfg.times();
    let mut y = y0;
    let mut t = 0.0;
    let mut h = cfg.t_max / 64.0;
    let mut values = Vec::with_capacity(times.len());
    let mut steps = 0;
    for &target in &times {
        while t < target {
            let hh = h.min(target - t);
            let (next, err) = dormand_prince_step(&gen, t, &y, hh)?;
            let scale = |a: &C64, b: &C64| ODE_TOL + ODE_TOL * a.norm().max(b.norm());
            let e = err
                .iter()
                .zip(y.iter().zip(&next))
                .map(|(e, (a, b))| e.norm() / scale(a, b))
                .fold(0.0, f64::max);
            if e <= 1.0 {
                t = if hh == target - t { target } else { t + hh };
                y = next;
                steps += 1;
            }
            let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            h = hh * factor;
            if h < 1e-14 * cfg.t_max {
                return Err(Error::InvariantViolation(format!("ODE step size underflow at t = {t}")));
            }
        }
        values.push(inner(&cfg.u, &y));
    }
    Ok(OdeResult { lambda, times, values, steps })
}

const ODE_TOL: f64 = 1e-10;

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dormand_prince_step(gen: &Generator, t: f64, y: &[C64], h: f64) -> Result<(Vec<C64>, Vec<C64>)> {
    let d = y.len();
    let mut k: Vec<Vec<C64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = DP_A[s][j];
            if a != 0.0 {
                for (yi, kji) in ys.iter_mut().zip(kj) {
                    *yi += kji * (h * a);
                }
            }
        }
        k.push(gen.apply(t + DP_C[s] * h, &ys)?);
    }
    let mut next = y.to_vec();
    let mut err = vec![ZERO; d];
    for s in 0..7 {
        for i in 0..d {
            next[i] += k[s][i] * (h * DP_B5[s]);
            err[i] += k[s][i] * (h * (DP_B5[s] - DP_B4[s]));
        }
    }
    Ok((next, err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub lambda: f64,
    pub value: C64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub limit: C64,
    pub rows: Vec<ScanRow>,
    /// Deviations strictly decrease along the scan.
    pub monotone: bool,
    /// Least-squares slope of `ln deviation` against `ln lambda`.
    pub order: Option<f64>,
}

pub fn lambda_scan(limit: C64, lambdas: &[f64], mut eval: impl FnMut(f64) -> Result<C64>) -> Result<ScanReport> {
    if lambdas.len() < 3 {
        return Err(Error::InvalidArgument(format!("a scan needs at least 3 lambdas, got {}", lambdas.len())));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) || lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("lambdas must be positive and strictly decreasing".into()));
    }
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let value = eval(lambda)?;
            Ok(ScanRow {
                lambda,
                value,
                deviation: (value - limit).norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let order = if rows.iter().all(|r| r.deviation > 0.0) {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda.ln(), r.deviation.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(ScanReport { limit, rows, monotone, order })
}

/// Two-point scan against the `lambda -> 0` value.
pub fn two_point_scan(
    phi: &Expr,
    bindings: &Bindings,
    kernel: &CorrelationKernel,
    window: f64,
    lambdas: &[f64],
) -> Result<ScanReport> {
    let first = two_point_integrals(phi, bindings, kernel, lambdas.first().copied().unwrap_or(1.0), window)?;
    lambda_scan(first.limit, lambdas, |l| Ok(two_point_integrals(phi, bindings, kernel, l, window)?.value))
}

/// Series scan at `t_max` against the limit series.
pub fn series_scan(cfg: &LimitSeriesConfig, lambdas: &[f64]) -> Result<ScanReport> {
    let last = |r: SeriesResult| *r.values.last().expect("at least one time");
    let limit = last(series_matrix_element(cfg, Lambda::Limit)?);
    lambda_scan(limit, lambdas, |l| Ok(last(series_matrix_element(cfg, Lambda::Finite(l))?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn expr(s: &str) -> Expr {
        s.parse().unwrap()
    }

    fn zeros(d: usize) -> [[OperatorMatrix; 2]; 2] {
        let z = OperatorMatrix::zeros(d);
        [[z.clone(), z.clone()], [z.clone(), z]]
    }

    #[test]
    fn exponential_kappa() {
        for amp in [c(0.5, 0.0), c(0.5, 0.3)] {
            let k = CorrelationKernel::exponential(amp, 2.0).unwrap();
            assert!((kernel_kappa(&k).unwrap() - amp).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_kernel_rejected_downstream() {
        let k = CorrelationKernel::tabulated(vec![0.0, 1.0], vec![ZERO, ZERO]).unwrap();
        assert_eq!(kernel_kappa(&k).unwrap(), ZERO);
        let r = two_point_integrals(&expr("1"), &Bindings::new(), &k, 0.5, 1.0);
        assert!(matches!(r, Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn tabulated_triangle() {
        let k = CorrelationKernel::tabulated(vec![0.0, 1.0, 2.0], vec![c(0.0, 0.0), c(1.0, 0.5), ZERO]).unwrap();
        assert!((kernel_kappa(&k).unwrap() - c(1.0, 0.5)).norm() < 1e-12);
        assert!((k.at(0.5) - c(0.5, 0.25)).norm() < 1e-15);
        assert_eq!(k.extended(-0.5), k.at(0.5).conj());
    }

    #[test]
    fn truncated_table_is_not_integrable() {
        let r = CorrelationKernel::tabulated(vec![0.0, 1.0], vec![c(1.0, 0.0), c(0.1, 0.0)]);
        assert!(matches!(r, Err(Error::NotIntegrable { .. })));
    }

    #[test]
    fn two_point_exponential_oracle() {
        let k = CorrelationKernel::exponential(c(0.5, 0.0), 1.0).unwrap();
        for lambda in [0.5, 0.25] {
            let r = two_point_integrals(&expr("exp(-t-s)"), &Bindings::new(), &k, lambda, 20.0).unwrap();
            let l2 = lambda * lambda;
            assert!((r.limit.re - 0.5).abs() < 1e-12);
            assert!((r.value - c(0.5 / (1.0 + l2), 0.0)).norm() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn two_point_constant_window_oracle() {
        // Exact: 2 Re[T kappa (1 - e^{-a}) - lambda^2 kappa (1 - e^{-a}(1 + a)) / beta], a = beta T / lambda^2.
        let (beta, window, lambda) = (2.0, 1.5, 0.5);
        let kappa = c(0.5, 0.3);
        let k = CorrelationKernel::exponential(kappa, beta).unwrap();
        let r = two_point_integrals(&expr("1"), &Bindings::new(), &k, lambda, window).unwrap();
        let l2 = lambda * lambda;
        let a = beta * window / l2;
        let exact = 2.0 * (kappa * (window * (1.0 - (-a).exp())) - kappa * (l2 * (1.0 - (-a).exp() * (1.0 + a)) / beta)).re;
        assert!((r.value.re - exact).abs() < 1e-9 && r.value.im.abs() < 1e-12, "{r:?} vs {exact}");
    }

    #[test]
    fn hermitian_symmetric_phi_is_real() {
        let k = CorrelationKernel::exponential(c(0.5, 0.4), 1.5).unwrap();
        let r = two_point_integrals(&expr("exp(-(t-1)^2-(s-1)^2)*cos(t*s)"), &Bindings::new(), &k, 0.3, 6.0).unwrap();
        assert!(r.value.im.abs() < 1e-10);
    }

    #[test]
    fn smear_oracles() {
        let k = CorrelationKernel::exponential(c(0.5, 0.0), 1.0).unwrap();
        let b = Bindings::new();
        let one = collective_smear(&expr("1"), &b, &k, 0.7, 0.3).unwrap();
        assert!((one - c(0.5, 0.0)).norm() < 1e-12);
        for (lambda, t) in [(0.5, 0.0), (1.0, 2.0)] {
            let v = collective_smear(&expr("exp(-t)"), &b, &k, lambda, t).unwrap();
            let exact = 0.5 * (-t).exp() / (1.0 + lambda * lambda);
            assert!((v.re - exact).abs() < 1e-12);
        }
        let v = collective_smear(&expr("sin(t)"), &b, &k, 1e-3, 0.8).unwrap();
        assert!((v - c(0.5 * 0.8f64.sin(), 0.0)).norm() < 1e-4);
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let ch = Chebyshev::build(0.0, 2.0, CHEB_DEGREE, |t| Ok(c(t.sin(), t.cos()))).unwrap();
        for t in [0.0, 0.123, 1.0, 1.999, 2.0] {
            assert!((ch.eval(t) - c(t.sin(), t.cos())).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_coefficients_give_constant() {
        let k = CorrelationKernel::exponential(c(0.5, 0.0), 1.0).unwrap();
        let x0 = OperatorMatrix::from_real_rows(&[&[2.0, 1.0], &[0.0, 3.0]]).unwrap();
        let cfg = LimitSeriesConfig::new(zeros(2), x0, expr("1"), expr("1"), k, 1.0);
        let s = series_matrix_element(&cfg, Lambda::Limit).unwrap();
        assert!(s.values.iter().all(|&v| v == c(2.0, 0.0)));
        assert_eq!(s.tail_bound, 0.0);
    }

    #[test]
    fn scalar_time_coefficient_is_exponential() {
        let k = CorrelationKernel::exponential(c(0.5, 0.0), 1.0).unwrap();
        let mut cc = zeros(1);
        let c0 = c(0.4, 0.3);
        cc[0][0] = OperatorMatrix::scalar(1, c0);
        let mut cfg = LimitSeriesConfig::new(cc, OperatorMatrix::scalar(1, c(1.0, 0.0)), expr("0"), expr("0"), k, 1.5);
        cfg.n_max = 6;
        cfg.mc_samples = 2000;
        let s = series_matrix_element(&cfg, Lambda::Limit).unwrap();
        let ode = limit_ode_matrix_element(&cfg).unwrap();
        for ((t, v), o) in s.times.iter().zip(&s.values).zip(&ode.values) {
            let exact = (c0 * t).exp();
            assert!((v - exact).norm() <= s.tail_bound + 3.0 * s.mc_error + 1e-12);
            assert!((o - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn ratio_above_one_is_rejected() {
        let k = CorrelationKernel::exponential(c(0.5, 0.0), 1.0).unwrap();
        let mut cc = zeros(1);
        cc[0][0] = OperatorMatrix::scalar(1, c(2.0, 0.0));
        let cfg = LimitSeriesConfig::new(cc, OperatorMatrix::scalar(1, c(1.0, 0.0)), expr("1"), expr("1"), k, 1.0);
        assert!(matches!(series_matrix_element(&cfg, Lambda::Limit), Err(Error::SeriesNotConvergent { .. })));
    }

    #[test]
    fn scan_input_checks() {
        let f = |_| Ok(ZERO);
        assert!(lambda_scan(ZERO, &[0.5, 0.25], f).is_err());
        assert!(lambda_scan(ZERO, &[0.25, 0.5, 0.1], f).is_err());
        let r = lambda_scan(ZERO, &[0.5, 0.25, 0.125], |l| Ok(c(l * l, 0.0))).unwrap();
        assert!(r.monotone);
        assert!((r.order.unwrap() - 2.0).abs() < 1e-12);
    }
}
