//! Dense complex matrices over the initial space.
//!
//! Every operator coefficient in the quantum layer (E, F, G, W, L, H, x0 and
//! the series coefficients C_ab) is an [`OperatorMatrix`]. Storage is dense and
//! row-major; the design envelope is d <= 64.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("singular matrix: pivot {pivot:.3e} in column {column} is below {threshold:.3e}")]
    Singular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("matrix is not Hermitian: max |A - A^dag| = {deviation:.3e}")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("malformed matrix: {0}")]
    Malformed(String),
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFile", into = "MatrixFile")]
pub struct OperatorMatrix {
    dim: usize,
    data: Vec<C64>,
}

/// On-disk layout: `{"dim": n, "entries": [[[re, im], ...], ...]}`, row-major.
#[derive(Serialize, Deserialize)]
struct MatrixFile {
    dim: usize,
    entries: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<MatrixFile> for OperatorMatrix {
    type Error = MatrixError;

    fn try_from(file: MatrixFile) -> Result<Self, Self::Error> {
        if file.dim == 0 {
            return Err(MatrixError::Malformed("dim must be positive".into()));
        }
        if file.entries.len() != file.dim {
            return Err(MatrixError::Malformed(format!(
                "expected {} rows, found {}",
                file.dim,
                file.entries.len()
            )));
        }
        let mut data = Vec::with_capacity(file.dim * file.dim);
        for (r, row) in file.entries.iter().enumerate() {
            if row.len() != file.dim {
                return Err(MatrixError::Malformed(format!(
                    "row {r} has {} entries, expected {}",
                    row.len(),
                    file.dim
                )));
            }
            for &[re, im] in row {
                if !re.is_finite() || !im.is_finite() {
                    return Err(MatrixError::Malformed(format!("non-finite entry in row {r}")));
                }
                data.push(C64::new(re, im));
            }
        }
        Ok(Self {
            dim: file.dim,
            data,
        })
    }
}

impl From<OperatorMatrix> for MatrixFile {
    fn from(m: OperatorMatrix) -> Self {
        let entries = m
            .data
            .chunks(m.dim)
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        Self {
            dim: m.dim,
            entries,
        }
    }
}

impl OperatorMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, C64::new(1.0, 0.0))
    }

    /// `z * I`.
    pub fn scalar(dim: usize, z: C64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = z;
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self, MatrixError> {
        let dim = rows.len();
        if dim == 0 {
            return Err(MatrixError::Malformed("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(MatrixError::Malformed("matrix must be square".into()));
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self, MatrixError> {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
                .collect(),
        )
    }

    pub fn diag(values: &[C64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    pub fn real_diag(values: &[f64]) -> Self {
        Self::diag(&values.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, z: C64) {
        self.data[r * self.dim + c] = z;
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    pub fn scale(&self, z: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&a| a * z).collect(),
        }
    }

    pub fn scale_re(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Entrywise max-norm distance. Panics on dimension mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn unitarity_defect(&self) -> f64 {
        (&self.adjoint() * self).max_abs_diff(&Self::identity(self.dim))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_defect() <= tol
    }

    pub fn check_dim(&self, other: &Self) -> Result<(), MatrixError> {
        if self.dim == other.dim {
            Ok(())
        } else {
            Err(MatrixError::DimMismatch {
                left: self.dim,
                right: other.dim,
            })
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut acc = Self::identity(self.dim);
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Evaluates `sum_n coeffs[n] * A^n` by Horner's rule.
    pub fn poly(&self, coeffs: &[f64]) -> Self {
        let mut acc = Self::zeros(self.dim);
        for &c in coeffs.iter().rev() {
            acc = &(&acc * self) + &Self::scalar(self.dim, C64::new(c, 0.0));
        }
        acc
    }

    /// Gauss-Jordan inverse with partial pivoting.
    ///
    /// A pivot smaller than `1e-14 * max|A_ij|` is reported as singular.
    pub fn inv(&self) -> Result<Self, MatrixError> {
        let n = self.dim;
        let threshold = 1e-14 * self.max_abs();
        let mut a = self.data.clone();
        let mut b = Self::identity(n).data;
        for col in 0..n {
            let (piv_row, piv_mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_mag <= threshold || piv_mag == 0.0 {
                return Err(MatrixError::Singular {
                    column: col,
                    pivot: piv_mag,
                    threshold,
                });
            }
            if piv_row != col {
                for k in 0..n {
                    a.swap(col * n + k, piv_row * n + k);
                    b.swap(col * n + k, piv_row * n + k);
                }
            }
            let p = a[col * n + col].inv();
            for k in 0..n {
                a[col * n + k] *= p;
                b[col * n + k] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..n {
                    let ak = a[col * n + k];
                    let bk = b[col * n + k];
                    a[r * n + k] -= factor * ak;
                    b[r * n + k] -= factor * bk;
                }
            }
        }
        Ok(Self { dim: n, data: b })
    }

    /// Eigenvalues of a Hermitian matrix, ascending, via cyclic Jacobi on the
    /// real symmetric embedding `[[Re, -Im], [Im, Re]]`.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let n = self.dim;
        let m = 2 * n;
        let mut s = vec![0.0; m * m];
        for r in 0..n {
            for c in 0..n {
                // Symmetrize so small Hermiticity defects do not break Jacobi.
                let z = (self.get(r, c) + self.get(c, r).conj()) * 0.5;
                s[r * m + c] = z.re;
                s[(r + n) * m + (c + n)] = z.re;
                s[(r + n) * m + c] = z.im;
                s[r * m + (c + n)] = -z.im;
            }
        }
        for _sweep in 0..100 {
            let off: f64 = (0..m)
                .flat_map(|p| (0..m).filter(move |&q| q != p).map(move |q| (p, q)))
                .map(|(p, q)| s[p * m + q] * s[p * m + q])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..m {
                for q in (p + 1)..m {
                    let apq = s[p * m + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (s[q * m + q] - s[p * m + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..m {
                        let akp = s[k * m + p];
                        let akq = s[k * m + q];
                        s[k * m + p] = c * akp - sn * akq;
                        s[k * m + q] = sn * akp + c * akq;
                    }
                    for k in 0..m {
                        let apk = s[p * m + k];
                        let aqk = s[q * m + k];
                        s[p * m + k] = c * apk - sn * aqk;
                        s[q * m + k] = sn * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..m).map(|i| s[i * m + i]).collect();
        eig.sort_by(|a, b| a.total_cmp(b));
        // The embedding doubles every eigenvalue.
        eig.into_iter().step_by(2).collect()
    }

    /// Smallest singular value, from the eigenvalues of `A^dag A`.
    pub fn min_singular_value(&self) -> f64 {
        let gram = &self.adjoint() * self;
        gram.hermitian_eigenvalues()
            .first()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt()
    }
}

/// `num(E) * den(E)^{-1}` for Hermitian `E` and real polynomial coefficients
/// (lowest degree first). Both factors are polynomials in `E`, so they commute
/// and the fraction is order-independent.
pub fn rational_herm_function(
    num: &[f64],
    den: &[f64],
    e: &OperatorMatrix,
) -> Result<OperatorMatrix, MatrixError> {
    let deviation = e.hermiticity_defect();
    if deviation > 1e-10 {
        return Err(MatrixError::NotHermitian { deviation });
    }
    let n = e.poly(num);
    let d = e.poly(den).inv()?;
    Ok(&n * &d)
}

impl fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "OperatorMatrix(dim={})", self.dim)?;
        for row in self.data.chunks(self.dim) {
            let cells: Vec<String> = row.iter().map(|z| format!("{:.6}{:+.6}i", z.re, z.im)).collect();
            writeln!(f, "  [{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in product");
        let n = self.dim;
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out[r * n..(r + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        OperatorMatrix { dim: n, data: out }
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in sum");
        OperatorMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in difference");
        OperatorMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &OperatorMatrix {
    type Output = OperatorMatrix;

    fn neg(self) -> OperatorMatrix {
        self.scale_re(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for OperatorMatrix {
            type Output = OperatorMatrix;
            fn $m(self, rhs: OperatorMatrix) -> OperatorMatrix {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&OperatorMatrix> for OperatorMatrix {
            type Output = OperatorMatrix;
            fn $m(self, rhs: &OperatorMatrix) -> OperatorMatrix {
                (&self).$m(rhs)
            }
        }
        impl $tr<OperatorMatrix> for &OperatorMatrix {
            type Output = OperatorMatrix;
            fn $m(self, rhs: OperatorMatrix) -> OperatorMatrix {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Mul, mul);
forward_owned!(Add, add);
forward_owned!(Sub, sub);

impl Neg for OperatorMatrix {
    type Output = OperatorMatrix;

    fn neg(self) -> OperatorMatrix {
        -&self
    }
}

/// Random operators for property tests and benchmarks.
pub mod sample {
    use super::*;
    use rand::Rng;

    pub fn complex<R: Rng + ?Sized>(rng: &mut R) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    pub fn general<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> OperatorMatrix {
        OperatorMatrix::from_fn(dim, |_, _| complex(rng))
    }

    pub fn hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> OperatorMatrix {
        let a = general(rng, dim);
        (&a + &a.adjoint()).scale_re(0.5)
    }

    /// `dim * I + A` with entries of `A` in the unit square: diagonally
    /// dominant, hence well conditioned.
    pub fn well_conditioned<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> OperatorMatrix {
        &general(rng, dim) + &OperatorMatrix::scalar(dim, C64::new(2.0 * dim as f64, 0.0))
    }
}
