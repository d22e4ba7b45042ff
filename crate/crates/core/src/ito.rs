//! Quantum Ito matrices and the Ito table.
//!
//! An [`ItoMatrix`] holds the coefficients of `dX = X^{ab} dA^{ab}` laid out as
//! `[[x00, x01], [x10, x11]]`, where `dA^{00} = dt`, `dA^{10}` creates,
//! `dA^{01}` annihilates and `dA^{11}` counts. The only nonzero products of
//! differentials are `dA^{a1} dA^{1b} = gamma dA^{ab}`.

use serde::{Deserialize, Serialize};

use crate::operator::{OperatorMatrix, C64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoMatrix {
    pub gamma: f64,
    pub x00: OperatorMatrix,
    pub x01: OperatorMatrix,
    pub x10: OperatorMatrix,
    pub x11: OperatorMatrix,
}

/// Index of a fundamental differential `dA^{ab}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Time,
    Annihilation,
    Creation,
    Gauge,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Time, Slot::Annihilation, Slot::Creation, Slot::Gauge];

    pub fn from_indices(a: usize, b: usize) -> Self {
        match (a, b) {
            (0, 0) => Slot::Time,
            (0, 1) => Slot::Annihilation,
            (1, 0) => Slot::Creation,
            (1, 1) => Slot::Gauge,
            _ => panic!("slot indices must be 0 or 1"),
        }
    }

    pub fn indices(self) -> (usize, usize) {
        match self {
            Slot::Time => (0, 0),
            Slot::Annihilation => (0, 1),
            Slot::Creation => (1, 0),
            Slot::Gauge => (1, 1),
        }
    }
}

impl std::str::FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "00" => Ok(Slot::Time),
            "01" => Ok(Slot::Annihilation),
            "10" => Ok(Slot::Creation),
            "11" => Ok(Slot::Gauge),
            _ => Err(Error::InvalidArgument(format!("slot must be 00, 01, 10 or 11, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl ItoMatrix {
    pub fn new(
        gamma: f64,
        x00: OperatorMatrix,
        x01: OperatorMatrix,
        x10: OperatorMatrix,
        x11: OperatorMatrix,
    ) -> Result<Self> {
        let m = Self {
            gamma,
            x00,
            x01,
            x10,
            x11,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        for b in [&self.x01, &self.x10, &self.x11] {
            self.x00.check_dim(b)?;
        }
        Ok(())
    }

    pub fn zeros(dim: usize, gamma: f64) -> Self {
        let z = OperatorMatrix::zeros(dim);
        Self {
            gamma,
            x00: z.clone(),
            x01: z.clone(),
            x10: z.clone(),
            x11: z,
        }
    }

    /// `value dA^{slot}`.
    pub fn unit(slot: Slot, value: OperatorMatrix, gamma: f64) -> Self {
        let mut m = Self::zeros(value.dim(), gamma);
        *m.block_mut(slot) = value;
        m
    }

    /// Scalar (dim 1) Ito matrix with real entries.
    pub fn scalar(gamma: f64, x00: f64, x01: f64, x10: f64, x11: f64) -> Self {
        let s = |v: f64| OperatorMatrix::scalar(1, C64::new(v, 0.0));
        Self {
            gamma,
            x00: s(x00),
            x01: s(x01),
            x10: s(x10),
            x11: s(x11),
        }
    }

    pub fn dim(&self) -> usize {
        self.x00.dim()
    }

    pub fn block(&self, slot: Slot) -> &OperatorMatrix {
        match slot {
            Slot::Time => &self.x00,
            Slot::Annihilation => &self.x01,
            Slot::Creation => &self.x10,
            Slot::Gauge => &self.x11,
        }
    }

    pub fn block_mut(&mut self, slot: Slot) -> &mut OperatorMatrix {
        match slot {
            Slot::Time => &mut self.x00,
            Slot::Annihilation => &mut self.x01,
            Slot::Creation => &mut self.x10,
            Slot::Gauge => &mut self.x11,
        }
    }

    fn map(&self, f: impl Fn(&OperatorMatrix) -> OperatorMatrix) -> Self {
        Self {
            gamma: self.gamma,
            x00: f(&self.x00),
            x01: f(&self.x01),
            x10: f(&self.x10),
            x11: f(&self.x11),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(&OperatorMatrix, &OperatorMatrix) -> OperatorMatrix) -> Self {
        Self {
            gamma: self.gamma,
            x00: f(&self.x00, &other.x00),
            x01: f(&self.x01, &other.x01),
            x10: f(&self.x10, &other.x10),
            x11: f(&self.x11, &other.x11),
        }
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        self.x00.check_dim(&other.x00)?;
        if self.gamma != other.gamma {
            return Err(Error::GammaMismatch {
                left: self.gamma,
                right: other.gamma,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.compatible(other)?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn scale(&self, z: C64) -> Self {
        self.map(|a| a.scale(z))
    }

    /// Coefficients of `X dY` for an adapted operator `X`.
    pub fn left_mul(&self, x: &OperatorMatrix) -> Self {
        self.map(|a| x * a)
    }

    /// Coefficients of `dX Y` for an adapted operator `Y`.
    pub fn right_mul(&self, y: &OperatorMatrix) -> Self {
        self.map(|a| a * y)
    }

    /// Adjoint differential: `(X^{ab} dA^{ab})^dag = (X^{ab})^dag dA^{ba}`.
    pub fn adjoint(&self) -> Self {
        Self {
            gamma: self.gamma,
            x00: self.x00.adjoint(),
            x01: self.x10.adjoint(),
            x10: self.x01.adjoint(),
            x11: self.x11.adjoint(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        Slot::ALL
            .iter()
            .map(|&s| self.block(s).max_abs_diff(other.block(s)))
            .fold(0.0, f64::max)
    }
}

/// `dX dY`: entry `(a, b)` is `gamma X^{a1} Y^{1b}`.
pub fn ito_correction(dx: &ItoMatrix, dy: &ItoMatrix) -> Result<ItoMatrix> {
    dx.compatible(dy)?;
    let g = C64::new(dx.gamma, 0.0);
    Ok(ItoMatrix {
        gamma: dx.gamma,
        x00: (&dx.x01 * &dy.x10).scale(g),
        x01: (&dx.x01 * &dy.x11).scale(g),
        x10: (&dx.x11 * &dy.x10).scale(g),
        x11: (&dx.x11 * &dy.x11).scale(g),
    })
}

/// `d(XY) = X dY + dX Y + dX dY`.
pub fn ito_product(x: &OperatorMatrix, dx: &ItoMatrix, y: &OperatorMatrix, dy: &ItoMatrix) -> Result<ItoMatrix> {
    let corr = ito_correction(dx, dy)?;
    dy.left_mul(x).try_add(&dx.right_mul(y))?.try_add(&corr)
}

/// Ito coefficients of the Stratonovich integral `X o dY` (`Side::Left`) or
/// `dX o Y` (`Side::Right`).
pub fn strat_product(
    side: Side,
    x: &OperatorMatrix,
    dx: &ItoMatrix,
    y: &OperatorMatrix,
    dy: &ItoMatrix,
) -> Result<ItoMatrix> {
    let half = ito_correction(dx, dy)?.scale(C64::new(0.5, 0.0));
    match side {
        Side::Left => dy.left_mul(x).try_add(&half),
        Side::Right => dx.right_mul(y).try_add(&half),
    }
}

fn powers(m: &OperatorMatrix, n: usize) -> Vec<OperatorMatrix> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(OperatorMatrix::identity(m.dim()));
    for k in 1..=n {
        let next = &out[k - 1] * m;
        out.push(next);
    }
    out
}

fn poly_eval(f: &[f64], pows: &[OperatorMatrix]) -> OperatorMatrix {
    let mut acc = OperatorMatrix::zeros(pows[0].dim());
    for (c, p) in f.iter().zip(pows) {
        if *c != 0.0 {
            acc = &acc + &p.scale_re(*c);
        }
    }
    acc
}

/// Ito differential of `f(X)` for a real polynomial `f` (coefficients lowest
/// degree first), from the value `X` and its differential `dX`.
///
/// With `P = X + gamma X^{11}`:
///
/// ```text
/// f^{11} = (f(P) - f(X)) / gamma
/// f^{10} = sum_n f_n sum_{p+q=n-1} P^p X^{10} X^q
/// f^{01} = sum_n f_n sum_{p+q=n-1} X^p X^{01} P^q
/// f^{00} = sum_n f_n [ sum_{p+q=n-1} X^p X^{00} X^q
///                      + gamma sum_{p+q+r=n-2} X^p X^{01} P^q X^{10} X^r ]
/// ```
pub fn functional_calculus(f: &[f64], x: &OperatorMatrix, dx: &ItoMatrix) -> Result<ItoMatrix> {
    dx.validate()?;
    x.check_dim(&dx.x00)?;
    let degree = f.len().saturating_sub(1);
    let gamma = dx.gamma;
    let p = x + &dx.x11.scale_re(gamma);
    let xp = powers(x, degree);
    let pp = powers(&p, degree);
    let dim = x.dim();

    let x11 = (&poly_eval(f, &pp) - &poly_eval(f, &xp)).scale_re(1.0 / gamma);
    let mut x10 = OperatorMatrix::zeros(dim);
    let mut x01 = OperatorMatrix::zeros(dim);
    let mut x00 = OperatorMatrix::zeros(dim);
    for (n, &fn_) in f.iter().enumerate().skip(1) {
        if fn_ == 0.0 {
            continue;
        }
        let mut s10 = OperatorMatrix::zeros(dim);
        let mut s01 = OperatorMatrix::zeros(dim);
        let mut s00 = OperatorMatrix::zeros(dim);
        for a in 0..n {
            let b = n - 1 - a;
            s10 = &s10 + &(&(&pp[a] * &dx.x10) * &xp[b]);
            s01 = &s01 + &(&(&xp[a] * &dx.x01) * &pp[b]);
            s00 = &s00 + &(&(&xp[a] * &dx.x00) * &xp[b]);
        }
        if n >= 2 {
            let mut cross = OperatorMatrix::zeros(dim);
            for a in 0..=(n - 2) {
                for b in 0..=(n - 2 - a) {
                    let c = n - 2 - a - b;
                    let term = &(&(&(&xp[a] * &dx.x01) * &pp[b]) * &dx.x10) * &xp[c];
                    cross = &cross + &term;
                }
            }
            s00 = &s00 + &cross.scale_re(gamma);
        }
        x10 = &x10 + &s10.scale_re(fn_);
        x01 = &x01 + &s01.scale_re(fn_);
        x00 = &x00 + &s00.scale_re(fn_);
    }
    Ok(ItoMatrix {
        gamma,
        x00,
        x01,
        x10,
        x11,
    })
}

/// Ito coefficients of the Stratonovich integral `f(X) o dA^{target}`
/// (`Side::Left`) or `dA^{target} o f(X)` (`Side::Right`).
pub fn strat_convert(
    x: &OperatorMatrix,
    dx: &ItoMatrix,
    f: &[f64],
    side: Side,
    target: Slot,
) -> Result<ItoMatrix> {
    let df = functional_calculus(f, x, dx)?;
    let fx = x.poly(f);
    let id = OperatorMatrix::identity(x.dim());
    let da = ItoMatrix::unit(target, id.clone(), dx.gamma);
    match side {
        Side::Left => strat_product(Side::Left, &fx, &df, &id, &da),
        Side::Right => strat_product(Side::Right, &id, &da, &fx, &df),
    }
}

/// Scalar process with a real Ito matrix and a deterministic start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarProcessSpec {
    pub ito: ItoMatrix,
    pub initial: f64,
}

impl ScalarProcessSpec {
    /// Wiener process `s (dA^{10} + dA^{01})`.
    pub fn wiener(scale: f64) -> Self {
        Self {
            ito: ItoMatrix::scalar(1.0, 0.0, scale, scale, 0.0),
            initial: 0.0,
        }
    }

    /// Standard Poisson process: all four entries 1.
    pub fn poisson() -> Self {
        Self {
            ito: ItoMatrix::scalar(1.0, 1.0, 1.0, 1.0, 1.0),
            initial: 0.0,
        }
    }

    fn real_entries(&self) -> Result<[f64; 4]> {
        if self.ito.dim() != 1 {
            return Err(Error::InvalidArgument("moment spec must be scalar".into()));
        }
        let mut out = [0.0; 4];
        for (o, s) in out.iter_mut().zip(Slot::ALL) {
            let z = self.ito.block(s).get(0, 0);
            if z.im != 0.0 {
                return Err(Error::InvalidArgument("moment spec entries must be real".into()));
            }
            *o = z.re;
        }
        Ok(out)
    }
}

// Real polynomial helpers, coefficients lowest degree first.

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_pow(a: &[f64], n: usize) -> Vec<f64> {
    (0..n).fold(vec![1.0], |acc, _| poly_mul(&acc, a))
}

fn poly_add_into(acc: &mut Vec<f64>, a: &[f64], scale: f64) {
    if acc.len() < a.len() {
        acc.resize(a.len(), 0.0);
    }
    for (o, v) in acc.iter_mut().zip(a) {
        *o += scale * v;
    }
}

/// `f_k^{00}` for `f_k(x) = x^k` with scalar commuting entries, as a
/// polynomial in `x`.
fn vacuum_drift_poly(k: usize, e: [f64; 4], gamma: f64) -> Vec<f64> {
    let [x00, x01, x10, x11] = e;
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    // sum_{p+q=k-1} x^p X00 x^q = k X00 x^{k-1}
    let mut mono = vec![0.0; k];
    mono[k - 1] = k as f64 * x00;
    poly_add_into(&mut out, &mono, 1.0);
    if k >= 2 {
        let shifted = [gamma * x11, 1.0];
        for q in 0..=(k - 2) {
            // (k - 1 - q) splits of the remaining degree between p and r
            let mult = (k - 1 - q) as f64;
            let mut term = poly_pow(&shifted, q);
            term = poly_mul(&term, &{
                let mut m = vec![0.0; k - 2 - q + 1];
                m[k - 2 - q] = 1.0;
                m
            });
            poly_add_into(&mut out, &term, gamma * x01 * x10 * mult);
        }
    }
    out
}

/// Vacuum moments `m_1..m_order` at time `t`.
///
/// Only the `00` block survives the vacuum expectation, so
/// `dm_k/dt = E[f_k^{00}(X)]`, a strictly lower triangular linear system whose
/// exponential is a finite sum.
pub fn moment_evolution(spec: &ScalarProcessSpec, order: usize, t: f64) -> Result<Vec<f64>> {
    if order > 12 {
        return Err(Error::InvalidArgument(format!("moment order {order} exceeds 12")));
    }
    let entries = spec.real_entries()?;
    let n = order + 1;
    let mut a = vec![vec![0.0; n]; n];
    for (k, row) in a.iter_mut().enumerate().skip(1) {
        for (j, c) in vacuum_drift_poly(k, entries, spec.ito.gamma).into_iter().enumerate() {
            row[j] += c;
        }
    }
    let m0: Vec<f64> = (0..n).map(|k| spec.initial.powi(k as i32)).collect();
    // sum_j (A t)^j / j! applied to m0
    let mut term = m0.clone();
    let mut sum = m0;
    for j in 1..n {
        let next: Vec<f64> = (0..n)
            .map(|r| (0..r).map(|c| a[r][c] * term[c]).sum::<f64>() * t / j as f64)
            .collect();
        for (s, v) in sum.iter_mut().zip(&next) {
            *s += v;
        }
        term = next;
    }
    Ok(sum[1..].to_vec())
}
