//! Hudson-Parthasarathy unitary evolutions.
//!
//! Stratonovich generator `-i (E a^dag a + F a^dag + F^dag a + G)` versus Ito
//! coefficients `(W, L, H)` of
//! `dU = [(-iH - L^dag L / 2) dt + L dA^{10} / sqrt(gamma) - L^dag W dA^{01} / sqrt(gamma)
//!        + (W - 1) dA^{11} / gamma] U`,
//! with `kappa = gamma / 2 + i sigma` and the Ito table
//! `dA^{a1} dA^{1b} = gamma dA^{ab}`.

use crate::ito::ItoMatrix;
use crate::operator::{rational_herm_function, MatrixError, OperatorMatrix, C64, I};
use crate::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-10;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratGenerator {
    pub e: OperatorMatrix,
    pub f: OperatorMatrix,
    pub g: OperatorMatrix,
    pub kappa: C64,
}

impl StratGenerator {
    pub fn new(e: OperatorMatrix, f: OperatorMatrix, g: OperatorMatrix, kappa: C64) -> Result<Self> {
        let gen = Self { e, f, g, kappa };
        gen.validate()?;
        Ok(gen)
    }

    pub fn gamma(&self) -> f64 {
        2.0 * self.kappa.re
    }

    pub fn sigma(&self) -> f64 {
        self.kappa.im
    }

    pub fn dim(&self) -> usize {
        self.e.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.e.check_dim(&self.f)?;
        self.e.check_dim(&self.g)?;
        if !(self.kappa.re > 0.0) {
            return Err(Error::InvariantViolation(format!("Re kappa must be positive, got {}", self.kappa.re)));
        }
        for (name, m) in [("E", &self.e), ("G", &self.g)] {
            let d = m.hermiticity_defect();
            if d > HERMITIAN_TOL {
                return Err(Error::InvariantViolation(format!("{name} is not Hermitian (defect {d:.3e})")));
            }
        }
        Ok(())
    }

    /// `1 + i kappa E`.
    fn d(&self) -> OperatorMatrix {
        let n = self.dim();
        &OperatorMatrix::identity(n) + &self.e.scale(I * self.kappa)
    }

    /// `1 - i kappa* E`.
    fn d_adj(&self) -> OperatorMatrix {
        let n = self.dim();
        &OperatorMatrix::identity(n) - &self.e.scale(I * self.kappa.conj())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItoUnitaryCoeffs {
    pub w: OperatorMatrix,
    pub l: OperatorMatrix,
    pub h: OperatorMatrix,
    pub gamma: f64,
}

impl ItoUnitaryCoeffs {
    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    /// Coefficients of `dU U^dag`-form: blocks of the Ito matrix of `dU`
    /// (right factor `U` stripped).
    pub fn generator(&self) -> ItoMatrix {
        let rg = self.gamma.sqrt();
        let half = c(0.5, 0.0);
        let k00 = &self.h.scale(-I) - &(&self.l.adjoint() * &self.l).scale(half);
        let k01 = (&self.l.adjoint() * &self.w).scale_re(-1.0 / rg);
        let k10 = self.l.scale_re(1.0 / rg);
        let k11 = (&self.w - &OperatorMatrix::identity(self.dim())).scale_re(1.0 / self.gamma);
        ItoMatrix {
            gamma: self.gamma,
            x00: k00,
            x01: k01,
            x10: k10,
            x11: k11,
        }
    }
}

/// Which formula produces the energy shift `R` in `H = G + F^dag R F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HShiftForm {
    /// `R = (sigma - |kappa|^2 E) / (1 + |kappa|^2 E)`.
    Printed,
    /// `R = (sigma - |kappa|^2 E) / (1 - 2 sigma E + |kappa|^2 E^2)`, the
    /// value obtained by normal ordering the Stratonovich generator.
    NormalOrdered,
}

impl std::str::FromStr for HShiftForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(HShiftForm::Printed),
            "normal-ordered" => Ok(HShiftForm::NormalOrdered),
            _ => Err(Error::InvalidArgument(format!("unknown H form `{s}`"))),
        }
    }
}

fn h_shift(g: &StratGenerator, form: HShiftForm) -> Result<OperatorMatrix> {
    let k2 = g.kappa.norm_sqr();
    let sigma = g.sigma();
    let num = [sigma, -k2];
    let r = match form {
        HShiftForm::Printed => rational_herm_function(&num, &[1.0, k2], &g.e)?,
        HShiftForm::NormalOrdered => rational_herm_function(&num, &[1.0, -2.0 * sigma, k2], &g.e)?,
    };
    Ok(&(&g.f.adjoint() * &r) * &g.f)
}

pub fn strat_to_ito_unitary(g: &StratGenerator) -> Result<ItoUnitaryCoeffs> {
    strat_to_ito_unitary_with(g, HShiftForm::Printed)
}

pub fn strat_to_ito_unitary_with(g: &StratGenerator, form: HShiftForm) -> Result<ItoUnitaryCoeffs> {
    g.validate()?;
    let gamma = g.gamma();
    let d_inv = g.d().inv()?;
    let w = &g.d_adj() * &d_inv;
    let l = (&d_inv * &g.f).scale(c(0.0, -gamma.sqrt()));
    let h = &g.g + &h_shift(g, form)?;
    // F^dag R F loses symmetry in rounding when R is large.
    let h = (&h + &h.adjoint()).scale_re(0.5);
    let out = ItoUnitaryCoeffs { w, l, h, gamma };
    let wd = out.w.unitarity_defect();
    if wd > HERMITIAN_TOL {
        return Err(Error::InvariantViolation(format!("W is not unitary (defect {wd:.3e})")));
    }
    let hd = out.h.hermiticity_defect();
    if hd > HERMITIAN_TOL {
        return Err(Error::InvariantViolation(format!("H is not Hermitian (defect {hd:.3e})")));
    }
    Ok(out)
}

pub fn ito_to_strat_unitary(c_: &ItoUnitaryCoeffs, kappa: C64) -> Result<StratGenerator> {
    ito_to_strat_unitary_with(c_, kappa, HShiftForm::Printed)
}

pub fn ito_to_strat_unitary_with(co: &ItoUnitaryCoeffs, kappa: C64, form: HShiftForm) -> Result<StratGenerator> {
    let n = co.dim();
    let gamma = 2.0 * kappa.re;
    if (gamma - co.gamma).abs() > 1e-12 * gamma.max(1.0) {
        return Err(Error::GammaMismatch { left: co.gamma, right: gamma });
    }
    let id = OperatorMatrix::identity(n);
    let a = &OperatorMatrix::scalar(n, kappa.conj()) + &co.w.scale(kappa);
    let smin = a.min_singular_value();
    if smin <= 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::NotConvertible { min_singular: smin });
    }
    let a_inv = a.inv().map_err(|e| match e {
        MatrixError::Singular { .. } => Error::NotConvertible { min_singular: smin },
        other => other.into(),
    })?;
    let e = (&a_inv * &(&co.w - &id)).scale(I);
    // Remove rounding asymmetry so the Hermiticity checks downstream see E exactly.
    let e = (&e + &e.adjoint()).scale_re(0.5);
    let d = &id + &e.scale(I * kappa);
    let f = (&d * &co.l).scale(c(0.0, 1.0 / gamma.sqrt()));
    let partial = StratGenerator {
        e,
        f,
        g: co.h.clone(),
        kappa,
    };
    let g = &co.h - &h_shift(&partial, form)?;
    let g = (&g + &g.adjoint()).scale_re(0.5);
    StratGenerator::new(partial.e, partial.f, g, kappa)
}

/// Largest entry of the two HP unitarity conditions,
/// `(K^{ba})^dag + K^{ab} + gamma (K^{1a})^dag K^{1b}` and
/// `K^{ab} + (K^{ba})^dag + gamma K^{a1} (K^{b1})^dag`, over all `(a, b)`.
pub fn unitarity_residual(co: &ItoUnitaryCoeffs) -> f64 {
    let k = co.generator();
    let block = |a: usize, b: usize| k.block(crate::ito::Slot::from_indices(a, b)).clone();
    let mut worst: f64 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let base = &block(b, a).adjoint() + &block(a, b);
            let left = &base + &(&block(1, a).adjoint() * &block(1, b)).scale_re(co.gamma);
            let right = &base + &(&block(a, 1) * &block(b, 1).adjoint()).scale_re(co.gamma);
            worst = worst.max(left.max_abs()).max(right.max_abs());
        }
    }
    worst
}

/// The four coefficient operators of `dX` for `X = U^dag x0 U`, in Ito-matrix
/// layout: `c11` gauge, `c10` creation, `c01` annihilation, `c00` time.
#[derive(Debug, Clone, PartialEq)]
pub struct HeisenbergCoeffs {
    pub c11: OperatorMatrix,
    pub c10: OperatorMatrix,
    pub c01: OperatorMatrix,
    pub c00: OperatorMatrix,
}

pub const BLOCK_NAMES: [&str; 4] = ["c11", "c10", "c01", "c00"];

impl HeisenbergCoeffs {
    pub fn to_ito(&self, gamma: f64) -> ItoMatrix {
        ItoMatrix {
            gamma,
            x00: self.c00.clone(),
            x01: self.c01.clone(),
            x10: self.c10.clone(),
            x11: self.c11.clone(),
        }
    }

    pub fn blocks(&self) -> [&OperatorMatrix; 4] {
        [&self.c11, &self.c10, &self.c01, &self.c00]
    }

    /// Per-block max-norm distance, in the order of [`BLOCK_NAMES`].
    pub fn blockwise_diff(&self, other: &Self) -> [f64; 4] {
        let (a, b) = (self.blocks(), other.blocks());
        [0, 1, 2, 3].map(|i| a[i].max_abs_diff(b[i]))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.blockwise_diff(other).into_iter().fold(0.0, f64::max)
    }
}

/// Sign convention for the dissipative part of `c00`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipatorSign {
    /// `+[L^dag, x0] L / 2 + L^dag [x0, L] / 2`, the Lindblad form.
    Lindblad,
    /// `-[L^dag, x0] L / 2 - L^dag [x0, L] / 2`.
    Printed,
}

pub fn heisenberg_ito_coeffs(x0: &OperatorMatrix, co: &ItoUnitaryCoeffs) -> Result<HeisenbergCoeffs> {
    heisenberg_ito_coeffs_with(x0, co, DissipatorSign::Lindblad)
}

pub fn heisenberg_ito_coeffs_with(x0: &OperatorMatrix, co: &ItoUnitaryCoeffs, sign: DissipatorSign) -> Result<HeisenbergCoeffs> {
    x0.check_dim(&co.w)?;
    let (w, l, h) = (&co.w, &co.l, &co.h);
    let (wd, ld) = (w.adjoint(), l.adjoint());
    let rg = co.gamma.sqrt();
    let c11 = (&(&(&wd * x0) * w) - x0).scale_re(1.0 / co.gamma);
    let c10 = (&wd * &x0.commutator(l)).scale_re(1.0 / rg);
    let c01 = (&x0.commutator(&ld) * w).scale_re(-1.0 / rg);
    let s = match sign {
        DissipatorSign::Lindblad => 0.5,
        DissipatorSign::Printed => -0.5,
    };
    let diss = &(&ld.commutator(x0) * l) + &(&ld * &x0.commutator(l));
    let c00 = &diss.scale_re(s) - &x0.commutator(h).scale(I);
    Ok(HeisenbergCoeffs { c11, c10, c01, c00 })
}

/// Independent switches, each replacing one printed factor of the
/// Stratonovich Heisenberg form by the value the reordering lemma produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StratCorrections {
    /// `(1 - sigma E)^{-1}` in `c10`, `c01` becomes `(1 - 2 sigma E)^{-1}`.
    pub two_sigma: bool,
    /// `[x0, H]` in `c00` becomes `[x0, G]`.
    pub g_for_h: bool,
    /// `F (1 + i kappa E)^{-1} F^dag` in `c00` becomes `F (1 - i kappa* E)^{-1} F^dag`.
    pub ff_dagger_resolvent: bool,
    /// `-kappa F (1 + i kappa E)^{-1} [..]` in `c00` becomes `-i kappa F (..)`.
    pub i_kappa: bool,
}

impl StratCorrections {
    pub const NONE: Self = Self {
        two_sigma: false,
        g_for_h: false,
        ff_dagger_resolvent: false,
        i_kappa: false,
    };
    pub const ALL: Self = Self {
        two_sigma: true,
        g_for_h: true,
        ff_dagger_resolvent: true,
        i_kappa: true,
    };
}

fn minus_i_commutator(x0: &OperatorMatrix, y: &OperatorMatrix) -> OperatorMatrix {
    x0.commutator(y).scale(-I)
}

/// Left-handed Stratonovich Heisenberg coefficients as printed, with `H` from
/// the printed coefficient map.
pub fn heisenberg_strat_coeffs(x0: &OperatorMatrix, g: &StratGenerator) -> Result<HeisenbergCoeffs> {
    heisenberg_strat_coeffs_with(x0, g, HShiftForm::Printed, StratCorrections::NONE)
}

pub fn heisenberg_strat_coeffs_with(
    x0: &OperatorMatrix,
    g: &StratGenerator,
    form: HShiftForm,
    fix: StratCorrections,
) -> Result<HeisenbergCoeffs> {
    g.validate()?;
    x0.check_dim(&g.e)?;
    let n = g.dim();
    let id = OperatorMatrix::identity(n);
    let k = g.kappa;
    let k2 = c(k.norm_sqr(), 0.0);
    let sigma = g.sigma();
    let (e, f) = (&g.e, &g.f);
    let fd = f.adjoint();

    let a = minus_i_commutator(x0, e);
    let b = minus_i_commutator(x0, f);
    let bp = minus_i_commutator(x0, &fd);

    let one_minus = |s: f64| (&id - &e.scale_re(s)).inv();
    let r2 = one_minus(2.0 * sigma)?;
    let r1 = if fix.two_sigma { r2.clone() } else { one_minus(sigma)? };
    let d_inv = g.d().inv()?;
    let dadj_inv = g.d_adj().inv()?;

    let c11 = &r2 * &a;
    let c10 = &(&(&(&dadj_inv * f) * &r1) * &a).scale(-I * k) + &(&dadj_inv * &b);
    let c01 = &(&(&(&d_inv * &fd) * &r1) * &a).scale(I * k.conj()) + &(&d_inv * &bp);

    let h = if fix.g_for_h {
        g.g.clone()
    } else {
        &g.g + &h_shift(g, form)?
    };
    let ffd_res = if fix.ff_dagger_resolvent { &dadj_inv } else { &d_inv };
    let last = if fix.i_kappa { -I * k } else { -k };
    let c00 = &(&(&(&minus_i_commutator(x0, &h)
        + &(&(&(f * ffd_res) * &fd) * &(&r2 * &a)).scale(k2))
        + &(&(&(&fd * &dadj_inv) * f) * &(&r2 * &a)).scale(k2))
        + &(&(&fd * &dadj_inv) * &b).scale(I * k.conj()))
        + &(&(f * &d_inv) * &bp).scale(last);
    Ok(HeisenbergCoeffs { c11, c10, c01, c00 })
}

// Reordering engine.

/// Noise monomial standing to the left of a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Noise {
    One,
    Create,
    Annihilate,
    Number,
}

/// `scalar * noise * U^dag * factors[0] * factors[1] * ...`.
struct Term {
    noise: Noise,
    scalar: C64,
    factors: Vec<OperatorMatrix>,
}

/// Rewrites `U^dag n` (noise `n` to the right of `U^dag`) as a sum of terms
/// with the noise to the left of `U^dag`, following the commutation rules
/// derived from `a U = (1 + i kappa E)^{-1} (U a - i kappa F U)`.
fn push_through(n: Noise, g: &StratGenerator, rule: NumberRule) -> Result<Vec<Term>> {
    if n == Noise::Number && rule == NumberRule::Composed {
        return compose_number(g);
    }
    let k = g.kappa;
    let sigma = g.sigma();
    let id = OperatorMatrix::identity(g.dim());
    let f = g.f.clone();
    let fd = g.f.adjoint();
    let d_inv = g.d().inv()?;
    let dadj_inv = g.d_adj().inv()?;
    let r2 = (&id - &g.e.scale_re(2.0 * sigma)).inv()?;
    let t = |noise, scalar, factors| Term { noise, scalar, factors };
    Ok(match n {
        Noise::One => vec![t(Noise::One, c(1.0, 0.0), vec![])],
        // U^dag a^dag = {a^dag U^dag + i kappa* U^dag F^dag} (1 - i kappa* E)^{-1}
        Noise::Create => vec![
            t(Noise::Create, c(1.0, 0.0), vec![dadj_inv.clone()]),
            t(Noise::One, I * k.conj(), vec![fd, dadj_inv]),
        ],
        // U^dag a = {a U^dag - i kappa U^dag F} (1 + i kappa E)^{-1}
        Noise::Annihilate => vec![
            t(Noise::Annihilate, c(1.0, 0.0), vec![d_inv.clone()]),
            t(Noise::One, -I * k, vec![f, d_inv]),
        ],
        // U^dag a^dag a = {a^dag a U^dag - i kappa a^dag U^dag (1 - i kappa* E)^{-1} F
        //   + i kappa* a U^dag (1 + i kappa E)^{-1} F^dag
        //   + |kappa|^2 U^dag F (1 - i kappa* E)^{-1} F^dag
        //   + |kappa|^2 U^dag F^dag (1 - i kappa* E)^{-1} F} (1 - 2 sigma E)^{-1}
        Noise::Number => {
            let k2 = c(k.norm_sqr(), 0.0);
            vec![
                t(Noise::Number, c(1.0, 0.0), vec![r2.clone()]),
                t(Noise::Create, -I * k, vec![dadj_inv.clone(), f.clone(), r2.clone()]),
                t(Noise::Annihilate, I * k.conj(), vec![d_inv, fd.clone(), r2.clone()]),
                t(Noise::One, k2, vec![f.clone(), dadj_inv.clone(), fd.clone(), r2.clone()]),
                t(Noise::One, k2, vec![fd, dadj_inv, f, r2]),
            ]
        }
    })
}

/// `U^dag a^dag a` as `(U^dag a^dag) a`: the creation rule first, then the
/// annihilation rule on each resulting `U^dag ... a`.
fn compose_number(g: &StratGenerator) -> Result<Vec<Term>> {
    let mut out = Vec::new();
    for first in push_through(Noise::Create, g, NumberRule::Composed)? {
        // The trailing `a` commutes with the initial-space factors.
        for second in push_through(Noise::Annihilate, g, NumberRule::Composed)? {
            let noise = match (first.noise, second.noise) {
                (Noise::Create, Noise::Annihilate) => Noise::Number,
                (Noise::Create, Noise::One) => Noise::Create,
                (Noise::One, Noise::Annihilate) => Noise::Annihilate,
                (Noise::One, Noise::One) => Noise::One,
                other => unreachable!("unexpected noise pair {other:?}"),
            };
            let mut factors = second.factors.clone();
            factors.extend(first.factors.iter().cloned());
            out.push(Term {
                noise,
                scalar: first.scalar * second.scalar,
                factors,
            });
        }
    }
    Ok(out)
}

/// How `U^dag a^dag a` is moved past `U^dag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumberRule {
    /// The closed-form number-operator rule of the reordering lemma.
    #[default]
    Lemma,
    /// The creation and annihilation rules applied in sequence.
    Composed,
}

/// Left-handed Stratonovich Heisenberg coefficients obtained mechanically:
/// start from `U^dag {a^dag a A + a^dag B + B' a + C} U` with
/// `A = -i[x0, E]`, `B = -i[x0, F]`, `B' = -i[x0, F^dag]`, `C = -i[x0, G]`,
/// and move every noise factor to the left of `U^dag`.
pub fn lemma66_reorder(x0: &OperatorMatrix, g: &StratGenerator) -> Result<HeisenbergCoeffs> {
    lemma66_reorder_with(x0, g, NumberRule::Lemma)
}

pub fn lemma66_reorder_with(x0: &OperatorMatrix, g: &StratGenerator, rule: NumberRule) -> Result<HeisenbergCoeffs> {
    g.validate()?;
    x0.check_dim(&g.e)?;
    let n = g.dim();
    let start = [
        (Noise::Number, minus_i_commutator(x0, &g.e)),
        (Noise::Create, minus_i_commutator(x0, &g.f)),
        // Initial-space operators commute with the noise, so B' a = a B'.
        (Noise::Annihilate, minus_i_commutator(x0, &g.f.adjoint())),
        (Noise::One, minus_i_commutator(x0, &g.g)),
    ];
    let mut out = HeisenbergCoeffs {
        c11: OperatorMatrix::zeros(n),
        c10: OperatorMatrix::zeros(n),
        c01: OperatorMatrix::zeros(n),
        c00: OperatorMatrix::zeros(n),
    };
    for (noise, coeff) in start {
        for term in push_through(noise, g, rule)? {
            let mut m = OperatorMatrix::identity(n);
            for fac in &term.factors {
                m = &m * fac;
            }
            let contrib = (&m * &coeff).scale(term.scalar);
            let slot = match term.noise {
                Noise::Number => &mut out.c11,
                Noise::Create => &mut out.c10,
                Noise::Annihilate => &mut out.c01,
                Noise::One => &mut out.c00,
            };
            *slot = &*slot + &contrib;
        }
    }
    Ok(out)
}

/// Ito coefficients of a left-handed Stratonovich Heisenberg equation.
///
/// Moving `a(t)` right through `Z_t = U^dag z U` uses
/// `a U^dag = U^dag (D a + i kappa F)` and `a U = D^{-1} (U a - i kappa F U)`
/// with `D = 1 + i kappa E`, giving
/// `a(t) Z_t = [D z D^{-1}]_t a(t) + i kappa [F z - D z D^{-1} F]_t`.
pub fn strat_left_to_ito(strat: &HeisenbergCoeffs, g: &StratGenerator) -> Result<HeisenbergCoeffs> {
    let d = g.d();
    let d_inv = d.inv()?;
    let ik = I * g.kappa;
    let conj = |z: &OperatorMatrix| &(&d * z) * &d_inv;
    let shift = |z: &OperatorMatrix| (&(&g.f * z) - &(&conj(z) * &g.f)).scale(ik);
    Ok(HeisenbergCoeffs {
        c11: conj(&strat.c11),
        c10: &strat.c10 + &shift(&strat.c11),
        c01: conj(&strat.c01),
        c00: &strat.c00 + &shift(&strat.c01),
    })
}

/// Localizes the disagreement between the printed Stratonovich form and the
/// reordering engine.
#[derive(Debug, Clone, PartialEq)]
pub struct StratDiscrepancy {
    /// Per-block distance, printed form vs reordering.
    pub literal: [f64; 4],
    /// Per-block distance after each single correction, in the order
    /// `two_sigma`, `g_for_h`, `ff_dagger_resolvent`, `i_kappa`.
    pub single: [[f64; 4]; 4],
    /// Per-block distance with every correction applied.
    pub corrected: [f64; 4],
}

pub const CORRECTION_NAMES: [&str; 4] = [
    "(1 - sigma E)^-1 -> (1 - 2 sigma E)^-1 in c10, c01",
    "[x0, H] -> [x0, G] in c00",
    "F (1 + i kappa E)^-1 F^dag -> F (1 - i kappa* E)^-1 F^dag in c00",
    "-kappa F (1 + i kappa E)^-1 [x0, F^dag] -> -i kappa F (..) in c00",
];

pub fn strat_discrepancy(x0: &OperatorMatrix, g: &StratGenerator) -> Result<StratDiscrepancy> {
    let reference = lemma66_reorder(x0, g)?;
    let diff = |fix| -> Result<[f64; 4]> {
        Ok(heisenberg_strat_coeffs_with(x0, g, HShiftForm::Printed, fix)?.blockwise_diff(&reference))
    };
    let singles = [
        StratCorrections { two_sigma: true, ..StratCorrections::NONE },
        StratCorrections { g_for_h: true, ..StratCorrections::NONE },
        StratCorrections { ff_dagger_resolvent: true, ..StratCorrections::NONE },
        StratCorrections { i_kappa: true, ..StratCorrections::NONE },
    ];
    Ok(StratDiscrepancy {
        literal: diff(StratCorrections::NONE)?,
        single: [diff(singles[0])?, diff(singles[1])?, diff(singles[2])?, diff(singles[3])?],
        corrected: diff(StratCorrections::ALL)?,
    })
}

/// Random valid generators for tests.
pub mod sample {
    use super::*;
    use crate::operator::sample as ms;
    use rand::Rng;

    pub fn generator<R: Rng + ?Sized>(rng: &mut R, dim: usize, kappa: C64) -> StratGenerator {
        StratGenerator {
            e: ms::hermitian(rng, dim),
            f: ms::general(rng, dim),
            g: ms::hermitian(rng, dim),
            kappa,
        }
    }
}
