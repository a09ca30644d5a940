//! Dense symmetric eigen-solves and the thin SVD used by the minimum-norm solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Entrywise tolerance for treating a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative singular-value floor of the Gram route. Below it the squared
/// condition number is lost in rounding.
pub const GRAM_RCOND_FLOOR: f64 = 1e-7;

/// Problems with `rows^2 * cols` at most this use the one-sided SVD directly.
const DIRECT_SVD_LIMIT: usize = 1 << 25;

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max |A_ij - A_ji| = {asym:e})"
        )));
    }
    Ok(())
}

/// Symmetrized copy, so that rounding-level asymmetry never reaches the solver.
fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square_symmetric(a)?;
    let mut ev: Vec<f64> = symmetrized(a).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn eigen_min(a: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(a)?[0])
}

/// Spectral norm of a symmetric matrix, `max |lambda|`.
pub fn spectral_norm_symmetric(a: &DMatrix<f64>) -> Result<f64> {
    let ev = symmetric_eigenvalues(a)?;
    Ok(ev[0].abs().max(ev[ev.len() - 1].abs()))
}

/// Eigendecomposition `A = Q diag(lambda) Q^T` of a symmetric matrix.
pub struct SymmetricDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymmetricDecomposition {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_square_symmetric(a)?;
        let eig = symmetrized(a).symmetric_eigen();
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.max()
    }

    /// `A^{-1} b`, assuming every eigenvalue is nonzero.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coords = self.eigenvectors.tr_mul(b);
        coords.component_div_assign(&self.eigenvalues);
        &self.eigenvectors * coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdRoute {
    /// One-sided Golub-Kahan SVD of the matrix itself.
    Direct,
    /// Eigendecomposition of the Gram matrix `A A^T`.
    Gram,
}

/// Thin SVD `A = U diag(s) V^T` of a wide (`rows <= cols`) matrix.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
    pub route: SvdRoute,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        if rows > cols {
            return Err(Error::UnderParametrized {
                features: cols,
                samples: rows,
            });
        }
        if rows.saturating_mul(rows).saturating_mul(cols) <= DIRECT_SVD_LIMIT {
            Ok(Self::direct(a))
        } else {
            Ok(Self::via_gram(a))
        }
    }

    fn direct(a: &DMatrix<f64>) -> Self {
        let svd = a.clone().svd(true, true);
        Self {
            u: svd.u.expect("u requested"),
            singular_values: svd.singular_values,
            v_t: svd.v_t.expect("v_t requested"),
            route: SvdRoute::Direct,
        }
    }

    fn via_gram(a: &DMatrix<f64>) -> Self {
        let gram = a * a.transpose();
        let eig = symmetrized(&gram).symmetric_eigen();
        let sigma = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let mut v_t = eig.eigenvectors.tr_mul(a);
        for (i, mut row) in v_t.row_iter_mut().enumerate() {
            let s = sigma[i];
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(0.0);
            }
        }
        Self {
            u: eig.eigenvectors,
            singular_values: sigma,
            v_t,
            route: SvdRoute::Gram,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.max()
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.min()
    }

    /// Smallest relative cutoff this decomposition can honor.
    pub fn rcond_floor(&self) -> f64 {
        match self.route {
            SvdRoute::Direct => 0.0,
            SvdRoute::Gram => GRAM_RCOND_FLOOR,
        }
    }

    /// Fails unless `sigma_min > rcond * sigma_max`.
    pub fn check_rank(&self, rcond: f64) -> Result<()> {
        let cutoff = rcond.max(self.rcond_floor()) * self.sigma_max();
        let smallest = self.sigma_min();
        if !(smallest > cutoff) {
            return Err(Error::singular(smallest, cutoff));
        }
        Ok(())
    }

    /// `A^+ b` for a full-row-rank `A`.
    pub fn pinv_apply(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coords = self.u.tr_mul(b);
        coords.component_div_assign(&self.singular_values);
        self.v_t.tr_mul(&coords)
    }

    /// `A^+ b` followed by one step of iterative refinement against `a`,
    /// the matrix this decomposition was built from.
    pub fn refined_solve(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.pinv_apply(b);
        let residual = b - a * &x;
        x += self.pinv_apply(&residual);
        x
    }

    /// Component of `z` orthogonal to the row space of `A`.
    pub fn null_space_component(&self, z: &DVector<f64>) -> DVector<f64> {
        let coords = &self.v_t * z;
        z - self.v_t.tr_mul(&coords)
    }
}

/// Default relative singular-value cutoff `1e-10 * max(rows, cols)`.
pub fn default_rcond(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols) as f64
}

/// Minimum Euclidean-norm solution of the underdetermined system `A x = b`.
///
/// Solved through the pseudoinverse with one refinement step. Returns the
/// solution together with the decomposition it came from.
pub fn min_norm_solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    rcond: Option<f64>,
) -> Result<(DVector<f64>, ThinSvd)> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let svd = ThinSvd::new(a)?;
    svd.check_rank(rcond.unwrap_or_else(|| default_rcond(a.nrows(), a.ncols())))?;
    let x = svd.refined_solve(a, b);
    Ok((x, svd))
}
