//! Ito/Stratonovich coefficient maps for scalar SDEs driven by a Wiener or a
//! Poisson process.
//!
//! Wiener noise: `v_ito = v + sigma sigma' / 2`, computed symbolically.
//!
//! Poisson noise: the Ito coefficient `mu~` solves
//! `mu~(x) = [mu(x + mu~(x)) + mu(x)] / 2`, and the midpoint scheme's
//! coefficient `mu^` solves `mu^(x) = mu(x + mu^(x) / 2)`. Both are computed
//! pointwise by fixed-point iteration. The inverse map (recover `mu` from
//! `mu~`) couples grid points and is solved on a grid.

use std::fmt;
use std::str::FromStr;

use crate::expr::{Bindings, Compiled, Expr, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calculus {
    Ito,
    Stratonovich,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Wiener,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    StratToIto,
    ItoToStrat,
}

impl FromStr for Calculus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ito" => Ok(Calculus::Ito),
            "stratonovich" | "strat" => Ok(Calculus::Stratonovich),
            "midpoint" => Ok(Calculus::Midpoint),
            _ => Err(Error::InvalidArgument(format!("unknown calculus `{s}`"))),
        }
    }
}

impl fmt::Display for Calculus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Calculus::Ito => "ito",
            Calculus::Stratonovich => "stratonovich",
            Calculus::Midpoint => "midpoint",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(NoiseKind::Wiener),
            "poisson" => Ok(NoiseKind::Poisson),
            _ => Err(Error::InvalidArgument(format!("unknown noise kind `{s}`"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Wiener => "wiener",
            NoiseKind::Poisson => "poisson",
        })
    }
}

/// Drift and noise coefficient of `dX = drift dt + noise dM` in a stated
/// calculus.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub drift: Expr,
    pub noise: Expr,
    pub calculus: Calculus,
    pub noise_kind: NoiseKind,
    pub constants: Bindings,
}

impl CoefficientPair {
    pub fn new(drift: Expr, noise: Expr, calculus: Calculus, noise_kind: NoiseKind) -> Self {
        Self {
            drift,
            noise,
            calculus,
            noise_kind,
            constants: Bindings::new(),
        }
    }

    pub fn parse(drift: &str, noise: &str, calculus: Calculus, noise_kind: NoiseKind) -> Result<Self> {
        Ok(Self::new(Expr::parse(drift)?, Expr::parse(noise)?, calculus, noise_kind))
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    pub fn drift_at(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.drift.eval(x, t, &self.constants)?)
    }

    pub fn noise_at(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.noise.eval(x, t, &self.constants)?)
    }

    /// Checks that every coefficient is finite on the grid and, for Poisson
    /// noise, that `x + noise(x, t)` is strictly increasing along it.
    pub fn validate_on_grid(&self, xs: &[f64], t: f64) -> Result<()> {
        let mut prev: Option<f64> = None;
        for &x in xs {
            self.drift_at(x, t)?;
            let n = self.noise_at(x, t)?;
            if self.noise_kind == NoiseKind::Poisson {
                let image = x + n;
                if prev.is_some_and(|p| image <= p) {
                    return Err(Error::NotMonotone { at: x });
                }
                prev = Some(image);
            }
        }
        Ok(())
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect()
}

/// Symbolic Wiener conversion.
pub fn wiener_convert(p: &CoefficientPair, direction: Direction) -> Result<CoefficientPair> {
    if p.noise_kind != NoiseKind::Wiener {
        return Err(Error::WrongKind("wiener_convert needs Wiener noise".into()));
    }
    let (source, target) = match direction {
        Direction::StratToIto => (Calculus::Stratonovich, Calculus::Ito),
        Direction::ItoToStrat => (Calculus::Ito, Calculus::Stratonovich),
    };
    if p.calculus != source {
        return Err(Error::WrongKind(format!("expected {source} coefficients, got {}", p.calculus)));
    }
    let correction = Expr::mul(Expr::num(0.5), Expr::mul(p.noise.clone(), p.noise.diff(Var::X)));
    let drift = match direction {
        Direction::StratToIto => Expr::add(p.drift.clone(), correction),
        Direction::ItoToStrat => Expr::sub(p.drift.clone(), correction),
    }
    .simplify();
    Ok(CoefficientPair {
        drift,
        noise: p.noise.clone(),
        calculus: target,
        noise_kind: NoiseKind::Wiener,
        constants: p.constants.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    /// Four-point Lagrange, falling back to fewer points at the grid ends.
    Cubic,
}

/// Real function sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub interpolation: Interpolation,
}

impl GridFunction {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidArgument("grid function needs matching xs, ys of length >= 2".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        Ok(Self { xs, ys, interpolation })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.xs[0] && x <= self.xs[self.xs.len() - 1]
    }

    /// Index `i` with `xs[i] <= x <= xs[i + 1]`, clamped to the last cell.
    fn cell(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&g| g <= x);
        i.saturating_sub(1).min(self.xs.len() - 2)
    }

    /// Interpolated value; `None` outside the grid.
    pub fn value(&self, x: f64) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let i = self.cell(x);
        Some(match self.interpolation {
            Interpolation::Linear => {
                let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
                self.ys[i] + w * (self.ys[i + 1] - self.ys[i])
            }
            Interpolation::Cubic => {
                let n = self.xs.len();
                let lo = if n < 4 { 0 } else { i.saturating_sub(1).min(n - 4) };
                let hi = (lo + 4).min(n);
                lagrange(&self.xs[lo..hi], &self.ys[lo..hi], x)
            }
        })
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.ys
            .iter()
            .zip(&other.ys)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut sum = 0.0;
    for (j, (&xj, &yj)) in xs.iter().zip(ys).enumerate() {
        let mut w = 1.0;
        for (k, &xk) in xs.iter().enumerate() {
            if k != j {
                w *= (x - xk) / (xj - xk);
            }
        }
        sum += w * yj;
    }
    sum
}

/// Output of a grid solve: values, per-point residuals of the defining
/// equation, and the iteration count (maximum over points for pointwise
/// solves).
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub function: GridFunction,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Whether `x + mu(x)` was strictly increasing along the grid.
    pub monotone: bool,
}

impl FixedPointSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// `mu` compiled at a fixed time slice.
#[derive(Debug, Clone)]
pub struct Slice {
    f: Compiled,
    t: f64,
}

impl Slice {
    pub fn new(e: &Expr, bindings: &Bindings, t: f64) -> Result<Self> {
        Ok(Self {
            f: e.compile(bindings)?,
            t,
        })
    }

    #[inline]
    pub fn at(&self, x: f64) -> Result<f64> {
        Ok(self.f.eval(x, self.t)?)
    }
}

/// `sup |mu'|` over the grid at time `t`.
pub fn sup_derivative(mu: &Expr, bindings: &Bindings, xs: &[f64], t: f64) -> Result<f64> {
    let d = Slice::new(&mu.diff(Var::X), bindings, t)?;
    xs.iter().try_fold(0.0f64, |acc, &x| Ok(acc.max(d.at(x)?.abs())))
}

fn require_contraction(mu: &Expr, bindings: &Bindings, xs: &[f64], t: f64) -> Result<()> {
    let sup = sup_derivative(mu, bindings, xs, t)?;
    if 0.5 * sup >= 1.0 {
        return Err(Error::NoContraction { sup_derivative: sup });
    }
    Ok(())
}

fn strictly_increasing(values: impl Iterator<Item = f64>) -> bool {
    let mut prev = f64::NEG_INFINITY;
    for v in values {
        if v <= prev {
            return false;
        }
        prev = v;
    }
    true
}

/// Pointwise `mu~(x)`: `(value, residual, iterations)`.
pub fn strat_to_ito_point(mu: &dyn Fn(f64) -> Result<f64>, x: f64, tol: f64, max_iter: usize) -> Result<(f64, f64, usize)> {
    let mu_x = mu(x)?;
    let mut m = mu_x;
    for k in 1..=max_iter {
        let next = 0.5 * (mu(x + m)? + mu_x);
        let step = (next - m).abs();
        m = next;
        if step <= tol {
            let residual = (m - 0.5 * (mu(x + m)? + mu_x)).abs();
            if residual <= tol {
                return Ok((m, residual, k));
            }
        }
    }
    let residual = (m - 0.5 * (mu(x + m)? + mu_x)).abs();
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// Pointwise `mu^(x)`: `(value, residual, iterations)`.
pub fn midpoint_point(mu: &dyn Fn(f64) -> Result<f64>, x: f64, tol: f64, max_iter: usize) -> Result<(f64, f64, usize)> {
    let mut m = mu(x)?;
    for k in 1..=max_iter {
        let next = mu(x + 0.5 * m)?;
        let step = (next - m).abs();
        m = next;
        if step <= tol {
            let residual = (mu(x + 0.5 * m)? - m).abs();
            if residual <= tol {
                return Ok((m, residual, k));
            }
        }
    }
    let residual = (mu(x + 0.5 * m)? - m).abs();
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

type PointSolver = fn(&dyn Fn(f64) -> Result<f64>, f64, f64, usize) -> Result<(f64, f64, usize)>;

fn pointwise(
    mu: &Expr,
    bindings: &Bindings,
    xs: &[f64],
    t: f64,
    tol: f64,
    max_iter: usize,
    solve: PointSolver,
) -> Result<FixedPointSolution> {
    require_contraction(mu, bindings, xs, t)?;
    let slice = Slice::new(mu, bindings, t)?;
    let mut ys = Vec::with_capacity(xs.len());
    let mut residuals = Vec::with_capacity(xs.len());
    let mut iterations = 0;
    for &x in xs {
        let (y, r, k) = solve(&|y| slice.at(y), x, tol, max_iter)?;
        ys.push(y);
        residuals.push(r);
        iterations = iterations.max(k);
    }
    let monotone = strictly_increasing(
        xs.iter()
            .map(|&x| slice.at(x).map(|m| x + m).unwrap_or(f64::NAN)),
    );
    Ok(FixedPointSolution {
        function: GridFunction::new(xs.to_vec(), ys, Interpolation::Cubic)?,
        residuals,
        iterations,
        monotone,
    })
}

/// Ito coefficient `mu~` of a Stratonovich Poisson coefficient `mu` on a grid.
///
/// Requires `sup |mu'| < 2`. Monotonicity of `x + mu(x)` is reported in the
/// result rather than enforced.
pub fn poisson_strat_to_ito(
    mu: &Expr,
    bindings: &Bindings,
    xs: &[f64],
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointSolution> {
    pointwise(mu, bindings, xs, t, tol, max_iter, strat_to_ito_point)
}

/// Midpoint-scheme coefficient `mu^` on a grid.
pub fn midpoint_ito_coeff(
    mu: &Expr,
    bindings: &Bindings,
    xs: &[f64],
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointSolution> {
    pointwise(mu, bindings, xs, t, tol, max_iter, midpoint_point)
}

/// Ito coefficient supplied to the inverse map.
pub enum ItoCoefficient<'a> {
    Expr { mu_tilde: &'a Expr, bindings: &'a Bindings, t: f64 },
    Grid(&'a GridFunction),
}

impl ItoCoefficient<'_> {
    fn evaluator(&self) -> Result<Box<dyn Fn(f64) -> Option<f64> + '_>> {
        Ok(match self {
            ItoCoefficient::Expr { mu_tilde, bindings, t } => {
                let s = Slice::new(mu_tilde, bindings, *t)?;
                Box::new(move |x| s.at(x).ok())
            }
            ItoCoefficient::Grid(g) => Box::new(move |x| g.value(x)),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Equation {
    /// `mu(x) = 2 mu~(x) - mu(x + mu~(x))`.
    Forward { image: f64 },
    /// `mu(y) = 2 mu~(v) - mu(v)` with `v + mu~(v) = y`.
    Backward { pre: f64, mt_pre: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct InverseOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 5000,
            damping: 0.5,
        }
    }
}

/// Recovers the Stratonovich coefficient `mu` from `mu~` on the grid `xs`.
///
/// Damped iteration `mu <- (1 - w) mu + w rhs(mu)`, starting from `mu~`. At
/// each grid point the equation is used in the direction whose orbit of
/// `x -> x + mu~(x)` ends at a fixed point on the grid; when both or neither
/// do, the direction in which the map does not expand is preferred. A
/// direction whose first step leaves the grid falls back to the other.
pub fn poisson_ito_to_strat(mu_tilde: ItoCoefficient<'_>, xs: &[f64], opts: InverseOptions) -> Result<FixedPointSolution> {
    let mt = mu_tilde.evaluator()?;
    let n = xs.len();
    let (lo, hi) = (xs[0], xs[n - 1]);
    let inside = |x: f64| x >= lo && x <= hi;
    let mt_at = |x: f64| -> Result<f64> {
        mt(x).ok_or_else(|| Error::InvalidArgument(format!("mu~ undefined at {x}")))
    };

    let mt_grid: Vec<f64> = xs.iter().map(|&x| mt_at(x)).collect::<Result<_>>()?;
    let images: Vec<f64> = xs.iter().zip(&mt_grid).map(|(x, m)| x + m).collect();
    if !strictly_increasing(images.iter().copied()) {
        let at = images
            .windows(2)
            .position(|w| w[1] <= w[0])
            .map_or(xs[0], |i| xs[i + 1]);
        return Err(Error::NotMonotone { at });
    }

    // x -> x + mu~(x) is increasing, so orbits are monotone and converge to
    // the nearest zero of mu~ in their direction of travel. A chain of
    // equations is closed inside the grid only if that zero is on the grid.
    let crossing: Vec<bool> = mt_grid.windows(2).map(|w| w[0] * w[1] <= 0.0).collect();
    let mut zero_below = vec![false; n];
    for i in 1..n {
        zero_below[i] = zero_below[i - 1] || crossing[i - 1];
    }
    let mut zero_above = vec![false; n];
    for i in (0..n - 1).rev() {
        zero_above[i] = zero_above[i + 1] || crossing[i];
    }

    let mut equations = Vec::with_capacity(n);
    let mut escaped = 0usize;
    for i in 0..n {
        let slope = if i + 1 < n {
            (mt_grid[i + 1] - mt_grid[i]) / (xs[i + 1] - xs[i])
        } else {
            (mt_grid[i] - mt_grid[i - 1]) / (xs[i] - xs[i - 1])
        };
        let forward = inside(images[i]).then_some(Equation::Forward { image: images[i] });
        let backward = || -> Result<Option<Equation>> {
            // v + mu~(v) = y has a solution inside the grid iff y lies in the
            // image range.
            let y = xs[i];
            if y < images[0] || y > images[n - 1] {
                return Ok(None);
            }
            let pre = invert_increasing(&|v| mt_at(v).map(|m| v + m), y, xs, &images)?;
            Ok(Some(Equation::Backward { pre, mt_pre: mt_at(pre)? }))
        };
        let (forward_closes, backward_closes) = if mt_grid[i] > 0.0 {
            (zero_above[i], zero_below[i])
        } else if mt_grid[i] < 0.0 {
            (zero_below[i], zero_above[i])
        } else {
            (true, true)
        };
        let prefer_forward = match (forward_closes, backward_closes) {
            (true, false) => true,
            (false, true) => false,
            _ => slope <= 0.0,
        };
        let eq = if prefer_forward {
            match forward {
                Some(e) => Some(e),
                None => backward()?,
            }
        } else {
            match backward()? {
                Some(e) => Some(e),
                None => forward,
            }
        };
        match eq {
            Some(e) => equations.push(e),
            None => {
                escaped += 1;
                equations.push(Equation::Forward { image: images[i] });
            }
        }
    }
    if escaped > 0 {
        return Err(Error::GridEscape {
            fraction: escaped as f64 / n as f64,
        });
    }

    let mut mu = GridFunction::new(xs.to_vec(), mt_grid.clone(), Interpolation::Cubic)?;
    let rhs = |mu: &GridFunction, i: usize| -> f64 {
        match equations[i] {
            Equation::Forward { image } => 2.0 * mt_grid[i] - mu.value(image).expect("image checked in-grid"),
            Equation::Backward { pre, mt_pre } => 2.0 * mt_pre - mu.value(pre).expect("preimage checked in-grid"),
        }
    };
    let w = opts.damping;
    for k in 1..=opts.max_iter {
        let targets: Vec<f64> = (0..n).map(|i| rhs(&mu, i)).collect();
        for (y, target) in mu.ys.iter_mut().zip(&targets) {
            *y = (1.0 - w) * *y + w * target;
        }
        let residuals: Vec<f64> = (0..n).map(|i| (mu.ys[i] - rhs(&mu, i)).abs()).collect();
        if residuals.iter().all(|&r| r <= opts.tol) {
            return Ok(FixedPointSolution {
                function: mu,
                residuals,
                iterations: k,
                monotone: true,
            });
        }
    }
    let residual = (0..n).map(|i| (mu.ys[i] - rhs(&mu, i)).abs()).fold(0.0, f64::max);
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        residual,
    })
}

/// Solves `u(v) = y` for increasing `u` with known grid values by bisection.
fn invert_increasing(u: &dyn Fn(f64) -> Result<f64>, y: f64, xs: &[f64], images: &[f64]) -> Result<f64> {
    let j = images.partition_point(|&g| g < y);
    if j < images.len() && images[j] == y {
        return Ok(xs[j]);
    }
    let (mut a, mut b) = (xs[j.saturating_sub(1)], xs[j.min(xs.len() - 1)]);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if u(m)? < y {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
