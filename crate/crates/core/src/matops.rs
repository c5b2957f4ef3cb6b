//! Dense small-matrix primitives for symmetric and upper-triangular matrices.
//!
//! Cholesky factors always follow the convention `A = R'R` with `R` upper
//! triangular and a positive diagonal. Lower-triangular factors never appear
//! in the public surface.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot tolerance for positive definiteness (times the largest
/// diagonal entry of the input).
pub const PIVOT_TOL: f64 = 1e-12;

/// Relative tolerance below which a triangular diagonal entry counts as zero.
pub const SINGULAR_TOL: f64 = 1e-14;

/// Symmetric matrix, possibly singular. Holds rank-one observations `r r'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps `m`, requiring exact symmetry and finite entries.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let q = m.nrows();
        for i in 0..q {
            for j in 0..q {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite entry at ({i}, {j})")));
                }
                if j > i && v != m[(j, i)] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { m })
    }

    /// Averages `m` with its transpose and wraps the result.
    pub fn from_symmetrized(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let q = m.nrows();
        let mut s = m;
        for i in 0..q {
            for j in (i + 1)..q {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix::new(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(matrix_from_rows(rows)?)
    }

    pub fn zeros(q: usize) -> Self {
        SymMatrix { m: DMatrix::zeros(q, q) }
    }

    pub fn identity(q: usize) -> Self {
        SymMatrix { m: DMatrix::identity(q, q) }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix { m: DMatrix::from_diagonal(&DVector::from_column_slice(d)) }
    }

    /// The rank-one matrix `x x'`.
    pub fn outer(x: &[f64]) -> Self {
        let q = x.len();
        SymMatrix { m: DMatrix::from_fn(q, q, |i, j| x[i] * x[j]) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix { m: &self.m * c }
    }

    /// `c * self + other`, evaluated entrywise so symmetry is exact.
    pub fn scale_add(&self, c: f64, other: &SymMatrix) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(SymMatrix { m: self.m.zip_map(&other.m, |a, b| c * a + b) })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.m)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(s: SymMatrix) -> Self {
        s.to_rows()
    }
}

/// Symmetric positive-definite matrix with its cached upper Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymPd {
    sym: SymMatrix,
    chol: UpperTri,
}

impl SymPd {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        SymPd::from_sym(SymMatrix::new(m)?)
    }

    pub fn from_sym(sym: SymMatrix) -> Result<Self> {
        let chol = uchol(&sym)?;
        Ok(SymPd { sym, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymPd::new(matrix_from_rows(rows)?)
    }

    pub fn identity(q: usize) -> Self {
        SymPd { sym: SymMatrix::identity(q), chol: UpperTri::identity(q) }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        SymPd::from_sym(SymMatrix::from_diagonal(d))
    }

    pub fn dim(&self) -> usize {
        self.sym.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.sym
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.sym.as_matrix()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sym.get(i, j)
    }

    /// `uchol(self)`, computed once at construction.
    pub fn chol(&self) -> &UpperTri {
        &self.chol
    }

    /// Positive multiple of the matrix; the factor is rescaled rather than recomputed.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("scale factor must be positive, got {c}")));
        }
        Ok(SymPd {
            sym: self.sym.scaled(c),
            chol: UpperTri { m: self.chol.as_matrix() * c.sqrt() },
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.sym.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymPd {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymPd::from_rows(&rows)
    }
}

impl From<SymPd> for Vec<Vec<f64>> {
    fn from(s: SymPd) -> Self {
        s.to_rows()
    }
}

/// Upper-triangular matrix (strictly zero below the diagonal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct UpperTri {
    m: DMatrix<f64>,
}

impl UpperTri {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let q = m.nrows();
        for j in 0..q {
            for i in (j + 1)..q {
                if m[(i, j)] != 0.0 {
                    return Err(Error::invalid(format!("nonzero entry below diagonal at ({i}, {j})")));
                }
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in triangular matrix"));
        }
        Ok(UpperTri { m })
    }

    /// Keeps the upper triangle of `m` and zeroes everything below it.
    pub fn from_upper_part(m: &DMatrix<f64>) -> Self {
        UpperTri { m: m.upper_triangle() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        UpperTri::new(matrix_from_rows(rows)?)
    }

    pub fn identity(q: usize) -> Self {
        UpperTri { m: DMatrix::identity(q, q) }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        UpperTri { m: DMatrix::from_diagonal(&DVector::from_column_slice(d)) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.m[(i, i)]
    }

    /// Product of two upper-triangular matrices, computed over the triangle only.
    pub fn mul(&self, other: &UpperTri) -> UpperTri {
        let q = self.dim();
        let mut out = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in i..q {
                let mut s = 0.0;
                for l in i..=j {
                    s += self.m[(i, l)] * other.m[(l, j)];
                }
                out[(i, j)] = s;
            }
        }
        UpperTri { m: out }
    }

    /// `self'self`, with exact symmetry.
    pub fn gram(&self) -> SymMatrix {
        gram(&self.m)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.m)
    }
}

impl TryFrom<Vec<Vec<f64>>> for UpperTri {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        UpperTri::from_rows(&rows)
    }
}

impl From<UpperTri> for Vec<Vec<f64>> {
    fn from(u: UpperTri) -> Self {
        u.to_rows()
    }
}

/// Upper-triangular Cholesky factor `R` with `R'R = a` and a positive diagonal.
pub fn uchol(a: &SymMatrix) -> Result<UpperTri> {
    let q = a.dim();
    let m = a.as_matrix();
    let max_diag = (0..q).map(|i| m[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: max_diag });
    }
    let tol = PIVOT_TOL * max_diag;
    let mut r = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= r[(k, j)] * r[(k, j)];
        }
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let rjj = d.sqrt();
        r[(j, j)] = rjj;
        for i in (j + 1)..q {
            let mut s = m[(j, i)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / rjj;
        }
    }
    Ok(UpperTri { m: r })
}

/// Inverse of an upper-triangular matrix by back-substitution.
pub fn inv_upper(r: &UpperTri) -> Result<UpperTri> {
    let q = r.dim();
    let m = r.as_matrix();
    let max_abs = (0..q).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..q {
        let v = m[(i, i)];
        if !(v.abs() >= SINGULAR_TOL * max_abs) || v == 0.0 {
            return Err(Error::SingularMatrix { index: i, value: v });
        }
    }
    let mut x = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        x[(j, j)] = 1.0 / m[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += m[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = -s / m[(i, i)];
        }
    }
    Ok(UpperTri { m: x })
}

/// `x' a^{-1} x`, by a triangular solve against `uchol(a)`.
pub fn quad_form(x: &[f64], a: &SymPd) -> Result<f64> {
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: x.len() });
    }
    let w = solve_upper_transpose(a.chol(), x);
    Ok(w.iter().map(|v| v * v).sum())
}

/// `log |a|` as twice the log of the Cholesky diagonal.
pub fn logdet_spd(a: &SymPd) -> f64 {
    let r = a.chol();
    2.0 * (0..r.dim()).map(|i| r.diag(i).ln()).sum::<f64>()
}

/// Solves `r x = b` for upper-triangular `r`.
pub fn solve_upper(r: &UpperTri, b: &[f64]) -> Vec<f64> {
    let q = r.dim();
    let m = r.as_matrix();
    let mut x = b.to_vec();
    for i in (0..q).rev() {
        let mut s = x[i];
        for k in (i + 1)..q {
            s -= m[(i, k)] * x[k];
        }
        x[i] = s / m[(i, i)];
    }
    x
}

/// Solves `r' x = b` for upper-triangular `r`.
pub fn solve_upper_transpose(r: &UpperTri, b: &[f64]) -> Vec<f64> {
    let q = r.dim();
    let m = r.as_matrix();
    let mut x = b.to_vec();
    for i in 0..q {
        let mut s = x[i];
        for k in 0..i {
            s -= m[(k, i)] * x[k];
        }
        x[i] = s / m[(i, i)];
    }
    x
}

/// `f'f` with only the upper triangle computed and mirrored.
pub fn gram(f: &DMatrix<f64>) -> SymMatrix {
    let q = f.ncols();
    let mut out = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let mut s = 0.0;
            for l in 0..f.nrows() {
                s += f[(l, i)] * f[(l, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    SymMatrix { m: out }
}

/// `f' s f`, re-symmetrized.
pub fn congruence(f: &DMatrix<f64>, s: &SymMatrix) -> SymMatrix {
    let prod = f.transpose() * s.as_matrix() * f;
    let q = prod.nrows();
    let mut out = prod;
    for i in 0..q {
        for j in (i + 1)..q {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    SymMatrix { m: out }
}

/// Inverse of a positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &SymPd) -> Result<SymPd> {
    let rinv = inv_upper(a.chol())?;
    // a^{-1} = rinv rinv'
    let t = rinv.as_matrix().transpose();
    SymPd::from_sym(gram(&t))
}

/// Correlation `Σ_ij / sqrt(Σ_ii Σ_jj)` of the covariance `Σ = prec^{-1}`.
pub fn correlation_from_precision(prec: &SymPd, i: usize, j: usize) -> Result<f64> {
    let cov = spd_inverse(prec)?;
    let rho = cov.get(i, j) / (cov.get(i, i) * cov.get(j, j)).sqrt();
    Ok(rho.clamp(-1.0, 1.0))
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let q = rows.len();
    if q == 0 {
        return Err(Error::invalid("matrix must have at least one row"));
    }
    for r in rows {
        if r.len() != q {
            return Err(Error::DimensionMismatch { expected: q, found: r.len() });
        }
    }
    Ok(DMatrix::from_fn(q, q, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Err(Error::invalid("matrix dimension must be at least 1"));
    }
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn pd(rows: &[&[f64]]) -> SymPd {
        SymPd::from_sym(sym(rows)).unwrap()
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    // Cofactor expansion, independent of any factorization.
    fn det_cofactor(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = m.clone().remove_row(0).remove_column(j);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * det_cofactor(&minor)
            })
            .sum()
    }

    #[test]
    fn uchol_identity() {
        let r = uchol(&SymMatrix::identity(3)).unwrap();
        assert_eq!(r, UpperTri::identity(3));
    }

    #[test]
    fn uchol_two_by_two() {
        let r = uchol(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(max_abs_diff(r.as_matrix(), &expected) < 1e-15);
        let back = r.as_matrix().transpose() * r.as_matrix();
        assert!(max_abs_diff(&back, &DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0])) < 1e-12);
    }

    #[test]
    fn uchol_rejects_indefinite() {
        let err = uchol(&sym(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
    }

    #[test]
    fn uchol_rejects_rank_one() {
        assert!(uchol(&SymMatrix::outer(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn symmetric_constructor_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SymMatrix::new(m.clone()).is_err());
        let s = SymMatrix::from_symmetrized(m).unwrap();
        assert_eq!(s.get(0, 1), 0.45);
    }

    #[test]
    fn inv_upper_cases() {
        assert_eq!(inv_upper(&UpperTri::identity(2)).unwrap(), UpperTri::identity(2));
        let r = UpperTri::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let inv = inv_upper(&r).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.25, 0.0, 0.5]);
        assert!(max_abs_diff(inv.as_matrix(), &expected) < 1e-15);
        let prod = r.as_matrix() * inv.as_matrix();
        assert!(max_abs_diff(&prod, &DMatrix::identity(2, 2)) < 1e-12);
        let d = inv_upper(&UpperTri::from_diagonal(&[2.0, 4.0])).unwrap();
        assert_eq!(d, UpperTri::from_diagonal(&[0.5, 0.25]));
    }

    #[test]
    fn inv_upper_singular() {
        let r = UpperTri::from_rows(&[vec![1.0, 3.0], vec![0.0, 1e-16]]).unwrap();
        assert!(matches!(inv_upper(&r), Err(Error::SingularMatrix { index: 1, .. })));
    }

    #[test]
    fn quad_form_cases() {
        assert_eq!(quad_form(&[1.0, 0.0], &SymPd::identity(2)).unwrap(), 1.0);
        let a = pd(&[&[3.0, 1.0, 0.0], &[1.0, 2.0, 0.5], &[0.0, 0.5, 1.0]]);
        assert_eq!(quad_form(&[0.0, 0.0, 0.0], &a).unwrap(), 0.0);
        // a^{-1} = (1/16) [[5, -2], [-2, 4]], so x' a^{-1} x = (5 - 2 - 2 + 4) / 16 for x = (1, 1)
        let a = pd(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let oracle = (5.0 - 2.0 - 2.0 + 4.0) / 16.0;
        assert!((quad_form(&[1.0, 1.0], &a).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.3125).abs() < 1e-15);
        assert!(matches!(
            quad_form(&[1.0], &a),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn logdet_cases() {
        assert_eq!(logdet_spd(&SymPd::identity(5)), 0.0);
        let d = SymPd::from_diagonal(&[2.0, 3.0]).unwrap();
        assert!((logdet_spd(&d) - 6f64.ln()).abs() < 1e-14);
        let a = pd(&[&[4.0, 2.0], &[2.0, 5.0]]);
        assert!((logdet_spd(&a) - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn serde_round_trip_validates() {
        let a = pd(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let s = serde_json::to_string(&a).unwrap();
        let b: SymPd = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<SymPd>("[[1,2],[2,1]]").is_err());
        assert!(serde_json::from_str::<UpperTri>("[[1,0],[2,1]]").is_err());
    }

    fn random_spd(q: usize, seed: u64) -> SymPd {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
        let mut a = gram(&g).into_matrix();
        for i in 0..q {
            a[(i, i)] += q as f64;
        }
        SymPd::new(a).unwrap()
    }

    proptest! {
        #[test]
        fn uchol_reconstructs(q in 1usize..=10, seed in any::<u64>()) {
            let a = random_spd(q, seed);
            let r = a.chol();
            let back = r.as_matrix().transpose() * r.as_matrix();
            let scale = a.as_matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(max_abs_diff(&back, a.as_matrix()) <= 1e-10 * scale);
            for i in 0..q {
                prop_assert!(r.diag(i) > 0.0);
            }
        }

        #[test]
        fn inv_upper_is_involution(q in 1usize..=8, seed in any::<u64>()) {
            let r = random_spd(q, seed).chol().clone();
            let back = inv_upper(&inv_upper(&r).unwrap()).unwrap();
            let scale = r.as_matrix().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(max_abs_diff(back.as_matrix(), r.as_matrix()) <= 1e-10 * scale);
        }

        #[test]
        fn logdet_matches_cofactor(q in 1usize..=4, seed in any::<u64>()) {
            let a = random_spd(q, seed);
            let brute = det_cofactor(a.as_matrix()).ln();
            prop_assert!((logdet_spd(&a) - brute).abs() <= 1e-10 * brute.abs().max(1.0));
        }

        #[test]
        fn quad_form_nonnegative(q in 1usize..=6, seed in any::<u64>(),
                                 x in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let a = random_spd(q, seed);
            let x = &x[..q];
            let v = quad_form(x, &a).unwrap();
            let is_zero = x.iter().all(|v| *v == 0.0);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, is_zero);
        }
    }
}
