//! Dense SPD kernels: Cholesky factorization, solves, inverse, log-determinant
//! and the Sherman-Morrison rank-one inverse update.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-12;
const SINGULAR_UPDATE_TOL: f64 = 1e-12;

/// A symmetric positive definite matrix, verified on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct SpdMatrix(Array2<f64>);

impl SpdMatrix {
    /// Checks symmetry (relative tolerance 1e-12) and positive pivots.
    pub fn new(m: Array2<f64>) -> Result<Self> {
        check_symmetric(m.view())?;
        Cholesky::factor(m.view())?;
        Ok(Self(m))
    }

    /// Symmetrizes `(M + M')/2` before validating.
    pub fn from_nearly_symmetric(mut m: Array2<f64>) -> Result<Self> {
        symmetrize(&mut m);
        Self::new(m)
    }

    pub fn identity(p: usize) -> Self {
        Self(Array2::eye(p))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(Array2::from_diag(&Array1::from(d.to_vec())))
    }

    pub(crate) fn from_trusted(m: Array2<f64>) -> Self {
        Self(m)
    }

    /// Mutable access for in-place updates that preserve symmetry and definiteness.
    pub(crate) fn array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self.0.view())
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        Ok(SpdMatrix(self.cholesky()?.inverse()))
    }

    pub fn diag(&self) -> Array1<f64> {
        self.0.diag().to_owned()
    }
}

impl TryFrom<Array2<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: Array2<f64>) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

impl From<SpdMatrix> for Array2<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

/// Lower-triangular Cholesky factor `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", p, a.ncols())));
        }
        let mut l = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..p {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut Array1<f64>) {
        let p = self.dim();
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
    }

    /// Solves `L' x = y` in place.
    pub fn backward_in_place(&self, b: &mut Array1<f64>) {
        let p = self.dim();
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in (i + 1)..p {
                s -= self.l[[k, i]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
    }

    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut x = b.to_owned();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    pub fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }

    pub fn inverse(&self) -> Array2<f64> {
        let mut inv = self.solve_mat(Array2::eye(self.dim()).view());
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L z`, mapping iid standard normals onto `N(0, A)`.
    pub fn mul_lower(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        self.l.dot(&z)
    }

    /// Solves `L' x = z`, mapping iid standard normals onto `N(0, A^{-1})`.
    pub fn solve_upper(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut x = z.to_owned();
        self.backward_in_place(&mut x);
        x
    }
}

/// Either operand shape accepted by [`spd_factor_solve`].
#[derive(Debug, Clone, PartialEq)]
pub enum Rhs {
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

/// Returns `A^{-1} B` through the Cholesky factor of `A`.
pub fn spd_factor_solve(a: &SpdMatrix, b: &Rhs) -> Result<Rhs> {
    let chol = a.cholesky()?;
    let p = a.dim();
    match b {
        Rhs::Vector(v) => {
            if v.len() != p {
                return Err(Error::DimensionMismatch(format!("rhs length {} vs {p}", v.len())));
            }
            Ok(Rhs::Vector(chol.solve_vec(v.view())))
        }
        Rhs::Matrix(m) => {
            if m.nrows() != p {
                return Err(Error::DimensionMismatch(format!("rhs rows {} vs {p}", m.nrows())));
            }
            Ok(Rhs::Matrix(chol.solve_mat(m.view())))
        }
    }
}

/// `(A + c x x')^{-1}` from `A^{-1}` by Sherman-Morrison.
pub fn rank_one_inverse_update(ainv: &SpdMatrix, x: ArrayView1<'_, f64>, c: f64) -> Result<SpdMatrix> {
    if x.len() != ainv.dim() {
        return Err(Error::DimensionMismatch(format!("vector length {} vs {}", x.len(), ainv.dim())));
    }
    let ax = ainv.0.dot(&x);
    let denominator = 1.0 + c * x.dot(&ax);
    if denominator.abs() < SINGULAR_UPDATE_TOL || !denominator.is_finite() {
        return Err(Error::SingularUpdate { denominator });
    }
    let mut out = ainv.0.clone();
    add_scaled_outer(&mut out, -c / denominator, ax.view());
    symmetrize(&mut out);
    Ok(SpdMatrix(out))
}

/// `m += alpha * v v'`, touching each symmetric pair with the same product.
pub(crate) fn add_scaled_outer(m: &mut Array2<f64>, alpha: f64, v: ArrayView1<'_, f64>) {
    let p = v.len();
    for i in 0..p {
        let avi = alpha * v[i];
        let mut row = m.row_mut(i);
        for j in 0..p {
            row[j] += avi * v[j];
        }
    }
}

pub(crate) fn symmetrize(m: &mut Array2<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}

fn check_symmetric(m: ArrayView2<'_, f64>) -> Result<()> {
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", p, m.ncols())));
    }
    if p == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for i in 0..p {
        for j in (i + 1)..p {
            let (a, b) = (m[[i, j]], m[[j, i]]);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFiniteInput(format!("matrix entry ({i}, {j})")));
            }
            if (a - b).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub fn relative_frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let num = (&a - &b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
