//! Monte Carlo schemes for scalar SDEs driven by Wiener or Poisson noise.
//!
//! Noise is drawn per path from a ChaCha20 stream selected by the path index,
//! so results do not depend on how paths are scheduled across threads. Every
//! ensemble samples its increments at one base resolution and sums them into
//! coarser steps, which couples runs at different step sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::classical::{self, wiener_convert, Calculus, CoefficientPair, Direction, NoiseKind};
use crate::expr::Compiled;
use crate::{Error, Result};

/// Identifies the random stream construction in output metadata.
pub const RNG_VERSION: &str = "chacha20-stream-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub h: f64,
    pub increments: Vec<f64>,
    pub kind: NoiseKind,
    pub seed: u64,
    pub rate: f64,
    pub path_index: u64,
}

fn path_rng(seed: u64, path_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Increments over `steps` intervals of length `h` for one path.
pub fn sample_noise_increments(kind: NoiseKind, h: f64, steps: usize, seed: u64, rate: f64, path_index: u64) -> Result<NoisePath> {
    if !(h > 0.0) || steps == 0 {
        return Err(Error::InvalidArgument("need h > 0 and steps >= 1".into()));
    }
    let mut rng = path_rng(seed, path_index);
    let increments = match kind {
        NoiseKind::Wiener => {
            let sd = h.sqrt();
            (0..steps)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        NoiseKind::Poisson => {
            if !(rate > 0.0) {
                return Err(Error::InvalidArgument("Poisson rate must be positive".into()));
            }
            let dist = Poisson::new(h * rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..steps).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    Ok(NoisePath {
        h,
        increments,
        kind,
        seed,
        rate,
        path_index,
    })
}

/// How the noise coefficient is evaluated.
#[derive(Debug, Clone)]
enum NoiseCoeff {
    Direct(Compiled),
    /// Ito coefficient of a Stratonovich Poisson coefficient, solved pointwise.
    ItoOfStrat(Compiled),
    /// Midpoint-calculus coefficient of a Poisson coefficient, solved pointwise.
    MidpointOf(Compiled),
}

const POINT_TOL: f64 = 1e-14;
const POINT_MAX_ITER: usize = 500;

/// Compiled coefficients ready for stepping.
#[derive(Debug, Clone)]
pub struct Model {
    drift: Compiled,
    noise: NoiseCoeff,
    /// Raw noise coefficient, used by the midpoint predictor.
    raw_noise: Compiled,
    pub kind: NoiseKind,
    pub calculus: Calculus,
}

impl Model {
    /// Uses the coefficients as given.
    pub fn new(p: &CoefficientPair) -> Result<Self> {
        let noise = p.noise.compile(&p.constants)?;
        Ok(Self {
            drift: p.drift.compile(&p.constants)?,
            raw_noise: noise.clone(),
            noise: NoiseCoeff::Direct(noise),
            kind: p.noise_kind,
            calculus: p.calculus,
        })
    }

    /// Ito form of Stratonovich coefficients: symbolic for Wiener noise,
    /// pointwise fixed point for Poisson noise.
    pub fn ito_from_strat(p: &CoefficientPair) -> Result<Self> {
        if p.calculus != Calculus::Stratonovich {
            return Err(Error::WrongKind(format!("expected stratonovich coefficients, got {}", p.calculus)));
        }
        match p.noise_kind {
            NoiseKind::Wiener => Self::new(&wiener_convert(p, Direction::StratToIto)?),
            NoiseKind::Poisson => {
                let mut m = Self::new(p)?;
                m.noise = NoiseCoeff::ItoOfStrat(m.raw_noise.clone());
                m.calculus = Calculus::Ito;
                Ok(m)
            }
        }
    }

    /// Ito form of midpoint-calculus coefficients (Poisson noise only; for
    /// Wiener noise the midpoint calculus is the Stratonovich one).
    pub fn ito_from_midpoint(p: &CoefficientPair) -> Result<Self> {
        match p.noise_kind {
            NoiseKind::Wiener => {
                let mut q = p.clone();
                q.calculus = Calculus::Stratonovich;
                Self::ito_from_strat(&q)
            }
            NoiseKind::Poisson => {
                let mut m = Self::new(p)?;
                m.noise = NoiseCoeff::MidpointOf(m.raw_noise.clone());
                m.calculus = Calculus::Ito;
                Ok(m)
            }
        }
    }

    #[inline]
    pub fn drift(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.drift.eval(x, t)?)
    }

    #[inline]
    pub fn noise(&self, x: f64, t: f64) -> Result<f64> {
        match &self.noise {
            NoiseCoeff::Direct(c) => Ok(c.eval(x, t)?),
            NoiseCoeff::ItoOfStrat(c) => {
                classical::strat_to_ito_point(&|y| Ok(c.eval(y, t)?), x, POINT_TOL, POINT_MAX_ITER).map(|r| r.0)
            }
            NoiseCoeff::MidpointOf(c) => {
                classical::midpoint_point(&|y| Ok(c.eval(y, t)?), x, POINT_TOL, POINT_MAX_ITER).map(|r| r.0)
            }
        }
    }

    /// Coefficient used by the midpoint predictor: the noise coefficient for
    /// Wiener noise, `mu^` for Poisson noise.
    fn predictor_noise(&self, x: f64, t: f64) -> Result<f64> {
        match self.kind {
            NoiseKind::Wiener => Ok(self.raw_noise.eval(x, t)?),
            NoiseKind::Poisson => {
                let c = &self.raw_noise;
                classical::midpoint_point(&|y| Ok(c.eval(y, t)?), x, POINT_TOL, POINT_MAX_ITER).map(|r| r.0)
            }
        }
    }
}

/// `x + v(x, t) dt + sigma(x, t) dM`.
pub fn step_euler(m: &Model, x: f64, t: f64, dt: f64, dm: f64) -> Result<f64> {
    let mut y = x + m.drift(x, t)? * dt;
    if dm != 0.0 {
        y += m.noise(x, t)? * dm;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy)]
pub struct InnerSolve {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerSolve {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200,
        }
    }
}

/// Implicit averaging step
/// `y = x + (v(y, t+dt) + v(x, t)) dt / 2 + (sigma(y, t+dt) + sigma(x, t)) dM / 2`,
/// solved by fixed-point iteration from the Euler predictor.
pub fn step_averaged(m: &Model, x: f64, t: f64, dt: f64, dm: f64, inner: InnerSolve) -> Result<f64> {
    let t1 = t + dt;
    let v0 = m.drift(x, t)?;
    let s0 = if dm != 0.0 { m.noise(x, t)? } else { 0.0 };
    let map = |y: f64| -> Result<f64> {
        let mut out = x + 0.5 * (m.drift(y, t1)? + v0) * dt;
        if dm != 0.0 {
            out += 0.5 * (m.noise(y, t1)? + s0) * dm;
        }
        Ok(out)
    };
    let mut y = x + v0 * dt + s0 * dm;
    let mut last_step = f64::INFINITY;
    let mut lipschitz: f64 = 0.0;
    for _ in 0..inner.max_iter {
        let next = map(y)?;
        let step = (next - y).abs();
        if last_step.is_finite() && last_step > 0.0 {
            lipschitz = lipschitz.max(step / last_step);
        }
        y = next;
        if step <= inner.tol * (1.0 + y.abs()) {
            return Ok(y);
        }
        if !y.is_finite() || (lipschitz >= 1.0 && step > last_step) {
            break;
        }
        last_step = step;
    }
    Err(Error::InnerDivergence {
        increment: dm.abs(),
        lipschitz,
    })
}

/// Midpoint Runge-Kutta step: Euler predictor to `t + dt/2` using the
/// predictor increment, then coefficients evaluated at the predicted state.
pub fn step_midpoint_rk(m: &Model, x: f64, t: f64, dt: f64, dm_pred: f64, dm_full: f64) -> Result<f64> {
    let tm = t + 0.5 * dt;
    let mut xm = x + 0.5 * m.drift(x, t)? * dt;
    if dm_pred != 0.0 {
        xm += m.predictor_noise(x, tm)? * dm_pred;
    }
    let mut y = x + m.drift(xm, tm)? * dt;
    if dm_full != 0.0 {
        y += m.noise(xm, tm)? * dm_full;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Averaged,
    Midpoint,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "averaged" => Ok(Scheme::Averaged),
            "midpoint" => Ok(Scheme::Midpoint),
            _ => Err(Error::InvalidArgument(format!("unknown scheme `{s}`"))),
        }
    }
}

/// Which noise increment drives the midpoint predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MidpointPredictor {
    /// Half of the full-step increment.
    HalfIncrement,
    /// The increment over the first half step.
    SubStep,
}

/// Closed-form pathwise solutions driven by the same increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oracle {
    /// `dX = b X dB` (Ito): `X_T = x0 exp(b B_T - b^2 T / 2)`.
    GbmIto { b: f64 },
    /// `dX = m X dN` (Ito): `X_T = x0 (1 + m)^{N_T}`.
    PoissonLinearIto { m: f64 },
    /// `dX = a X dt`: `X_T = x0 exp(a T)`.
    LinearOde { a: f64 },
    /// The same scheme run at the base noise resolution.
    Reference,
}

impl Oracle {
    fn closed_form(&self, x0: f64, t: f64, noise_total: f64) -> Option<f64> {
        match *self {
            Oracle::GbmIto { b } => Some(x0 * (b * noise_total - 0.5 * b * b * t).exp()),
            Oracle::PoissonLinearIto { m } => Some(x0 * (1.0 + m).powf(noise_total)),
            Oracle::LinearOde { a } => Some(x0 * (a * t).exp()),
            Oracle::Reference => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    pub t_end: f64,
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: f64,
    pub rate: f64,
    /// Resolution at which increments are sampled; must divide `h`. Defaults
    /// to `h` (or `h / 2` for the midpoint scheme with a sub-step predictor).
    pub noise_h: Option<f64>,
    pub inner: InnerSolve,
    pub predictor: MidpointPredictor,
    pub oracle: Option<Oracle>,
    /// Keep every trajectory (memory heavy; meant for small runs).
    pub keep_paths: bool,
}

impl EnsembleConfig {
    pub fn new(scheme: Scheme, t_end: f64, h: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            scheme,
            t_end,
            h,
            n_paths,
            seed,
            x0: 1.0,
            rate: 1.0,
            noise_h: None,
            inner: InnerSolve::default(),
            predictor: MidpointPredictor::HalfIncrement,
            oracle: None,
            keep_paths: false,
        }
    }
}

/// Per-step ensemble statistics plus per-path terminal data.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub scheme: Scheme,
    pub h: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Terminal value of every path, in path order.
    pub finals: Vec<f64>,
    /// Total noise `B_T` or `N_T` of every path.
    pub noise_totals: Vec<f64>,
    /// Squared terminal error against the oracle, per path.
    pub sq_errors: Option<Vec<f64>>,
    /// RMS error against the oracle at every step (closed-form oracles only).
    pub rms_error: Option<Vec<f64>>,
    pub paths: Option<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.finals.len()
    }

    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("nonempty grid")
    }

    pub fn final_variance(&self) -> f64 {
        *self.variance.last().expect("nonempty grid")
    }

    pub fn rms_terminal_error(&self) -> Option<f64> {
        self.sq_errors.as_ref().map(|e| (pairwise_sum(e) / e.len() as f64).sqrt())
    }
}

/// Ratio `a / b` as an integer when it is one (to 1e-9).
fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() <= 1e-9 * n).then_some(n as usize)
}

/// Recursive pairwise summation; fixed order, so results are reproducible.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

struct PathOutput {
    trajectory: Vec<f64>,
    noise_partial: Vec<f64>,
    reference: Option<f64>,
}

fn run_path(m: &Model, cfg: &EnsembleConfig, steps: usize, sub: usize, path: u64) -> Result<PathOutput> {
    let noise_h = cfg.h / sub as f64;
    let fine = sample_noise_increments(m.kind, noise_h, steps * sub, cfg.seed, cfg.rate, path)?;
    let mut x = cfg.x0;
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut noise_partial = Vec::with_capacity(steps + 1);
    trajectory.push(x);
    noise_partial.push(0.0);
    let mut total = 0.0;
    for j in 0..steps {
        let block = &fine.increments[j * sub..(j + 1) * sub];
        let dm: f64 = block.iter().sum();
        total += dm;
        let t = j as f64 * cfg.h;
        let res = match cfg.scheme {
            Scheme::Euler => step_euler(m, x, t, cfg.h, dm),
            Scheme::Averaged => step_averaged(m, x, t, cfg.h, dm, cfg.inner),
            Scheme::Midpoint => {
                let pred = match cfg.predictor {
                    MidpointPredictor::HalfIncrement => 0.5 * dm,
                    MidpointPredictor::SubStep => block[..sub / 2].iter().sum(),
                };
                step_midpoint_rk(m, x, t, cfg.h, pred, dm)
            }
        };
        x = res.map_err(|e| Error::Step {
            path: path as usize,
            step: j,
            source: Box::new(e),
        })?;
        trajectory.push(x);
        noise_partial.push(total);
    }
    let reference = match cfg.oracle {
        Some(Oracle::Reference) => {
            let mut y = cfg.x0;
            for (k, &dm) in fine.increments.iter().enumerate() {
                let t = k as f64 * noise_h;
                let res = match cfg.scheme {
                    Scheme::Euler => step_euler(m, y, t, noise_h, dm),
                    Scheme::Averaged => step_averaged(m, y, t, noise_h, dm, cfg.inner),
                    Scheme::Midpoint => step_midpoint_rk(m, y, t, noise_h, 0.5 * dm, dm),
                };
                y = res.map_err(|e| Error::Step {
                    path: path as usize,
                    step: k,
                    source: Box::new(e),
                })?;
            }
            Some(y)
        }
        _ => None,
    };
    Ok(PathOutput {
        trajectory,
        noise_partial,
        reference,
    })
}

/// Mean and M2 accumulator with a fixed-order merge.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn from_slice(v: &[f64]) -> Self {
        let n = v.len() as f64;
        if v.is_empty() {
            return Self::default();
        }
        let mean = pairwise_sum(v) / n;
        let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
        Self {
            n,
            mean,
            m2: pairwise_sum(&dev),
        }
    }

    fn merge(self, o: Self) -> Self {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Self {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            0.0
        }
    }
}

const CHUNK: usize = 256;

/// Simulates `cfg.n_paths` paths of the model.
pub fn run_ensemble(m: &Model, cfg: &EnsembleConfig) -> Result<PathEnsemble> {
    let scheme_calculus_ok = match cfg.scheme {
        Scheme::Euler => m.calculus == Calculus::Ito,
        Scheme::Averaged => m.calculus == Calculus::Stratonovich,
        Scheme::Midpoint => matches!(m.calculus, Calculus::Midpoint | Calculus::Stratonovich),
    };
    if !scheme_calculus_ok {
        return Err(Error::WrongKind(format!("scheme {:?} cannot run {} coefficients", cfg.scheme, m.calculus)));
    }
    if cfg.n_paths == 0 || !(cfg.h > 0.0) || !(cfg.t_end > 0.0) {
        return Err(Error::InvalidArgument("need n_paths >= 1, h > 0, T > 0".into()));
    }
    let steps = integer_ratio(cfg.t_end, cfg.h)
        .ok_or_else(|| Error::InvalidArgument(format!("T / h = {} is not an integer", cfg.t_end / cfg.h)))?;
    let default_noise_h = match (cfg.scheme, cfg.predictor) {
        (Scheme::Midpoint, MidpointPredictor::SubStep) => cfg.h / 2.0,
        _ => cfg.h,
    };
    let noise_h = cfg.noise_h.unwrap_or(default_noise_h);
    let sub = integer_ratio(cfg.h, noise_h)
        .ok_or_else(|| Error::InvalidArgument("noise resolution must divide h".into()))?;
    if cfg.scheme == Scheme::Midpoint && cfg.predictor == MidpointPredictor::SubStep && sub % 2 != 0 {
        return Err(Error::InvalidArgument("sub-step predictor needs an even number of noise increments per step".into()));
    }

    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * cfg.h).collect();
    let closed = cfg.oracle.filter(|o| *o != Oracle::Reference);

    let mut finals = Vec::with_capacity(cfg.n_paths);
    let mut noise_totals = Vec::with_capacity(cfg.n_paths);
    let mut sq_errors = cfg.oracle.map(|_| Vec::with_capacity(cfg.n_paths));
    let mut step_moments = vec![Moments::default(); steps + 1];
    let mut err_sums: Option<Vec<f64>> = closed.map(|_| vec![0.0; steps + 1]);
    let mut err_chunks: Vec<Vec<f64>> = Vec::new();
    let mut paths = cfg.keep_paths.then(Vec::new);

    for start in (0..cfg.n_paths).step_by(CHUNK) {
        let end = (start + CHUNK).min(cfg.n_paths);
        let outs: Vec<PathOutput> = (start..end)
            .into_par_iter()
            .map(|p| run_path(m, cfg, steps, sub, p as u64))
            .collect::<Result<_>>()?;
        for j in 0..=steps {
            let col: Vec<f64> = outs.iter().map(|o| o.trajectory[j]).collect();
            step_moments[j] = step_moments[j].merge(Moments::from_slice(&col));
        }
        if let (Some(oracle), Some(_)) = (closed, err_sums.as_mut()) {
            let chunk_err: Vec<f64> = (0..=steps)
                .map(|j| {
                    let sq: Vec<f64> = outs
                        .iter()
                        .map(|o| {
                            let exact = oracle.closed_form(cfg.x0, times[j], o.noise_partial[j]).expect("closed form");
                            (o.trajectory[j] - exact).powi(2)
                        })
                        .collect();
                    pairwise_sum(&sq)
                })
                .collect();
            err_chunks.push(chunk_err);
        }
        for o in &outs {
            let last = *o.trajectory.last().expect("nonempty");
            let total = *o.noise_partial.last().expect("nonempty");
            finals.push(last);
            noise_totals.push(total);
            if let Some(errs) = sq_errors.as_mut() {
                let exact = match o.reference {
                    Some(r) => r,
                    None => closed.expect("oracle").closed_form(cfg.x0, cfg.t_end, total).expect("closed form"),
                };
                errs.push((last - exact).powi(2));
            }
        }
        if let Some(ps) = paths.as_mut() {
            ps.extend(outs.into_iter().map(|o| o.trajectory));
        }
    }

    let rms_error = err_sums.map(|mut sums| {
        for (j, s) in sums.iter_mut().enumerate() {
            let col: Vec<f64> = err_chunks.iter().map(|c| c[j]).collect();
            *s = (pairwise_sum(&col) / cfg.n_paths as f64).sqrt();
        }
        sums
    });

    Ok(PathEnsemble {
        scheme: cfg.scheme,
        h: cfg.h,
        times,
        mean: step_moments.iter().map(|m| m.mean).collect(),
        variance: step_moments.iter().map(|m| m.variance()).collect(),
        finals,
        noise_totals,
        sq_errors,
        rms_error,
        paths,
    })
}

/// Paired statistics of `a - b` over terminal values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of `mean`.
    pub se: f64,
    /// Root mean square of the differences.
    pub rms: f64,
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<PairedStats> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InsufficientData("paired samples need equal length >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = Moments::from_slice(&d);
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    let sd = m.variance().sqrt();
    Ok(PairedStats {
        n: d.len(),
        mean: m.mean,
        sd,
        se: sd / (d.len() as f64).sqrt(),
        rms: (pairwise_sum(&sq) / d.len() as f64).sqrt(),
    })
}

/// Sample mean and standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let m = Moments::from_slice(v);
    (m.mean, (m.variance() / v.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    /// `(h, rms error)` rows, in input order.
    pub table: Vec<(f64, f64)>,
    pub slope: f64,
    /// 95% percentile bootstrap interval for the slope.
    pub ci: (f64, f64),
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Least-squares slope of `log rms` against `log h` across ensembles that
/// share their path indices, with a bootstrap over paths.
pub fn strong_error_report(ensembles: &[PathEnsemble], resamples: usize, seed: u64) -> Result<StrongErrorReport> {
    if ensembles.len() < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 step sizes, got {}", ensembles.len())));
    }
    let errs: Vec<&Vec<f64>> = ensembles
        .iter()
        .map(|e| {
            e.sq_errors
                .as_ref()
                .ok_or_else(|| Error::InsufficientData("ensemble has no oracle errors".into()))
        })
        .collect::<Result<_>>()?;
    let n = errs[0].len();
    if errs.iter().any(|e| e.len() != n) || n < 2 {
        return Err(Error::InsufficientData("ensembles must share their path count".into()));
    }
    let log_h: Vec<f64> = ensembles.iter().map(|e| e.h.ln()).collect();
    let rms: Vec<f64> = errs.iter().map(|e| (pairwise_sum(e) / n as f64).sqrt()).collect();
    let slope = ls_slope(&log_h, &rms.iter().map(|r| r.ln()).collect::<Vec<_>>());

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        let log_rms: Vec<f64> = errs
            .iter()
            .map(|e| {
                let s: f64 = idx.iter().map(|&i| e[i]).sum();
                (s / n as f64).sqrt().ln()
            })
            .collect();
        slopes.push(ls_slope(&log_h, &log_rms));
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let ci = if slopes.is_empty() {
        (slope, slope)
    } else {
        let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
        (q(0.025), q(0.975))
    };
    Ok(StrongErrorReport {
        table: ensembles.iter().map(|e| e.h).zip(rms).collect(),
        slope,
        ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(drift: &str, noise: &str, calc: Calculus, kind: NoiseKind) -> CoefficientPair {
        CoefficientPair::parse(drift, noise, calc, kind).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_noise_increments(NoiseKind::Wiener, 0.01, 100, 42, 1.0, 3).unwrap();
        let b = sample_noise_increments(NoiseKind::Wiener, 0.01, 100, 42, 1.0, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_noise_increments(NoiseKind::Wiener, 0.01, 100, 42, 1.0, 4).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn wiener_increment_variance() {
        let p = sample_noise_increments(NoiseKind::Wiener, 0.01, 100_000, 7, 1.0, 0).unwrap();
        let v = &p.increments;
        let n = v.len() as f64;
        let var = v.iter().map(|x| x * x).sum::<f64>() / n;
        // Var of x^2 for N(0, h) is 2h^2.
        let se = (2.0f64).sqrt() * 0.01 / n.sqrt();
        assert!((var - 0.01).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn poisson_increment_mean() {
        let p = sample_noise_increments(NoiseKind::Poisson, 0.01, 100_000, 7, 1.0, 0).unwrap();
        let (mean, se) = mean_and_se(&p.increments);
        assert!((mean - 0.01).abs() < 3.0 * se);
        assert!(p.increments.iter().all(|&k| k >= 0.0 && k.fract() == 0.0));
    }

    #[test]
    fn euler_hand_examples() {
        let m = Model::new(&pair("0", "0", Calculus::Ito, NoiseKind::Wiener)).unwrap();
        assert_eq!(step_euler(&m, 1.3, 0.0, 0.1, 0.7).unwrap(), 1.3);
        let m = Model::new(&pair("0", "2*x", Calculus::Ito, NoiseKind::Poisson)).unwrap();
        assert_eq!(step_euler(&m, 1.0, 0.0, 0.1, 1.0).unwrap(), 3.0);
        let m = Model::new(&pair("0", "x", Calculus::Ito, NoiseKind::Wiener)).unwrap();
        assert_eq!(step_euler(&m, 1.0, 0.0, 0.1, 0.5).unwrap(), 1.5);
    }

    #[test]
    fn averaged_hand_examples() {
        let inner = InnerSolve::default();
        let m = Model::new(&pair("0", "0", Calculus::Stratonovich, NoiseKind::Wiener)).unwrap();
        assert_eq!(step_averaged(&m, 0.4, 0.0, 0.1, 0.3, inner).unwrap(), 0.4);
        let m = Model::new(&pair("0", "x", Calculus::Stratonovich, NoiseKind::Wiener)).unwrap();
        assert!((step_averaged(&m, 1.0, 0.0, 0.1, 0.5, inner).unwrap() - 5.0 / 3.0).abs() < 1e-12);
        let m = Model::new(&pair("0", "x", Calculus::Stratonovich, NoiseKind::Poisson)).unwrap();
        assert!((step_averaged(&m, 1.0, 0.0, 0.1, 1.0, inner).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn averaged_reports_divergence() {
        let m = Model::new(&pair("0", "x", Calculus::Stratonovich, NoiseKind::Wiener)).unwrap();
        let r = step_averaged(&m, 1.0, 0.0, 0.1, 3.0, InnerSolve::default());
        assert!(matches!(r, Err(Error::InnerDivergence { increment, .. }) if increment == 3.0));
    }

    #[test]
    fn midpoint_zero_coefficients() {
        let m = Model::new(&pair("0", "0", Calculus::Midpoint, NoiseKind::Poisson)).unwrap();
        assert_eq!(step_midpoint_rk(&m, 2.0, 0.0, 0.1, 0.5, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn midpoint_poisson_jump_is_mu_hat() {
        let p = pair("0", "0.3*sin(x)", Calculus::Midpoint, NoiseKind::Poisson);
        let mid = Model::new(&p).unwrap();
        let hat = Model::ito_from_midpoint(&p).unwrap();
        let x = 0.8;
        let a = step_midpoint_rk(&mid, x, 0.0, 0.0, 0.5, 1.0).unwrap();
        let b = step_euler(&hat, x, 0.0, 0.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn ode_reduction_matches_exponential() {
        let p = pair("a*x", "0", Calculus::Ito, NoiseKind::Wiener).with_constant("a", 0.5);
        let m = Model::new(&p).unwrap();
        let mut cfg = EnsembleConfig::new(Scheme::Euler, 1.0, 1.0 / 1024.0, 1, 1);
        cfg.oracle = Some(Oracle::LinearOde { a: 0.5 });
        let e = run_ensemble(&m, &cfg).unwrap();
        let exact = 0.5f64.exp();
        assert!((e.finals[0] - exact).abs() < 1e-3);
        assert!(e.rms_terminal_error().unwrap() < 1e-3);
    }

    #[test]
    fn ensemble_is_deterministic() {
        let p = pair("0", "x", Calculus::Stratonovich, NoiseKind::Wiener);
        let m = Model::new(&p).unwrap();
        let cfg = EnsembleConfig::new(Scheme::Averaged, 1.0, 0.125, 300, 9);
        let a = run_ensemble(&m, &cfg).unwrap();
        let b = run_ensemble(&m, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scheme_calculus_mismatch_is_rejected() {
        let m = Model::new(&pair("0", "x", Calculus::Stratonovich, NoiseKind::Wiener)).unwrap();
        let cfg = EnsembleConfig::new(Scheme::Euler, 1.0, 0.5, 2, 1);
        assert!(matches!(run_ensemble(&m, &cfg), Err(Error::WrongKind(_))));
    }

    #[test]
    fn non_integer_step_count_is_rejected() {
        let m = Model::new(&pair("0", "x", Calculus::Ito, NoiseKind::Wiener)).unwrap();
        let cfg = EnsembleConfig::new(Scheme::Euler, 1.0, 0.3, 2, 1);
        assert!(matches!(run_ensemble(&m, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
