//! Dense symmetric factorizations shared by the exact and ensemble solvers.
//!
//! Every solve against a covariance goes through [`SpdFactor`], a Cholesky
//! factorization of `A + jitter * I` that escalates the jitter along a
//! [`JitterSchedule`] and reports the offending pivot when it gives up.
//! Sampling uses [`PsdSqrt`], an eigendecomposition-based square root that
//! accepts exactly singular (even all-zero) covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// First nonzero jitter tried when a schedule starts from zero.
const MIN_ESCALATION: f64 = 1e-10;

/// Diagonal regularization ladder: `initial`, then ×`growth` until `max` is exceeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSchedule {
    pub initial: f64,
    pub max: f64,
    pub growth: f64,
}

impl Default for JitterSchedule {
    fn default() -> Self {
        JitterSchedule {
            initial: 1e-10,
            max: 1e-6,
            growth: 10.0,
        }
    }
}

impl JitterSchedule {
    /// A single attempt at exactly `jitter`.
    pub fn fixed(jitter: f64) -> Self {
        JitterSchedule {
            initial: jitter,
            max: jitter,
            growth: 10.0,
        }
    }

    /// Starts without regularization and escalates to `max` only on failure.
    pub fn from_zero(max: f64) -> Self {
        JitterSchedule {
            initial: 0.0,
            max,
            growth: 10.0,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        let mut next = Some(self.initial.max(0.0));
        std::iter::from_fn(move || {
            let cur = next?;
            let following = if cur > 0.0 {
                cur * self.growth.max(1.0 + f64::EPSILON)
            } else {
                MIN_ESCALATION
            };
            next = (following <= self.max * (1.0 + 1e-12) && following > cur).then_some(following);
            Some(cur)
        })
    }
}

/// Cholesky factor `L Lᵀ = A + jitter * I` of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, schedule: &JitterSchedule, context: &'static str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims(
                context,
                "square matrix",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        let mut last = (f64::NAN, schedule.initial);
        for jitter in schedule.steps() {
            let mut work = a.clone();
            if jitter > 0.0 {
                for i in 0..work.nrows() {
                    work[(i, i)] += jitter;
                }
            }
            match cholesky_in_place(&mut work) {
                Ok(()) => return Ok(SpdFactor { lower: work, jitter }),
                Err(pivot) => last = (pivot, jitter),
            }
        }
        Err(Error::SingularCovariance {
            context,
            min_pivot: last.0,
            jitter: last.1,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L⁻¹ B`
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `(L Lᵀ)⁻¹ B`
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.lower.solve_lower_triangular_mut(&mut out);
        self.lower.tr_solve_lower_triangular_mut(&mut out);
        out
    }
}

/// Left-looking column Cholesky on a column-major matrix. On failure returns
/// the first non-positive (or non-finite) pivot.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), f64> {
    let n = a.nrows();
    let data = a.as_mut_slice();
    for j in 0..n {
        let (prev, rest) = data.split_at_mut(j * n);
        let col = &mut rest[..n];
        for k in 0..j {
            let prev_col = &prev[k * n..(k + 1) * n];
            let ljk = prev_col[j];
            if ljk != 0.0 {
                for (c, p) in col[j..].iter_mut().zip(&prev_col[j..]) {
                    *c -= ljk * p;
                }
            }
        }
        let pivot = col[j];
        if !(pivot > 0.0 && pivot.is_finite()) {
            return Err(pivot);
        }
        let diag = pivot.sqrt();
        col[j] = diag;
        let inv = 1.0 / diag;
        for c in col[j + 1..].iter_mut() {
            *c *= inv;
        }
        col[..j].fill(0.0);
    }
    Ok(())
}

/// Square root `S` with `S Sᵀ = C + jitter * I` for a symmetric PSD `C`.
#[derive(Debug, Clone)]
pub struct PsdSqrt {
    factor: DMatrix<f64>,
    jitter: f64,
}

impl PsdSqrt {
    /// Eigenvalues down to `-1e-10 * ‖C‖₂` are treated as zero.
    pub fn new(cov: &DMatrix<f64>, schedule: &JitterSchedule) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::dims(
                "square root",
                "square matrix",
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        let n = cov.nrows();
        let mut last = (f64::NAN, schedule.initial);
        for jitter in schedule.steps() {
            let mut work = symmetrize(cov);
            for i in 0..n {
                work[(i, i)] += jitter;
            }
            let Some(eig) = SymmetricEigen::try_new(work, f64::EPSILON, 0) else {
                last = (f64::NAN, jitter);
                continue;
            };
            let scale = eig.eigenvalues.amax();
            let min = eig.eigenvalues.min();
            if !min.is_finite() || min < -PSD_TOLERANCE * scale {
                last = (min, jitter);
                continue;
            }
            let mut factor = eig.eigenvectors;
            for (mut column, lambda) in factor.column_iter_mut().zip(eig.eigenvalues.iter()) {
                column *= lambda.max(0.0).sqrt();
            }
            return Ok(PsdSqrt { factor, jitter });
        }
        Err(Error::SingularCovariance {
            context: "square root",
            min_pivot: last.0,
            jitter: last.1,
        })
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }
}

/// Relative eigenvalue floor used by PSD checks.
pub const PSD_TOLERANCE: f64 = 1e-10;

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `max |A - Aᵀ| <= tol * max |A|`
pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    (0..n).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

/// Smallest eigenvalue is at least `-PSD_TOLERANCE * ‖A‖₂`.
pub fn is_psd(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    if a.nrows() == 0 {
        return true;
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.amax();
    eig.eigenvalues.min() >= -PSD_TOLERANCE * scale
}

/// Largest entrywise difference, normalized by the largest magnitude in `reference`.
pub fn max_rel_diff(value: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    assert_eq!(value.shape(), reference.shape(), "max_rel_diff shape mismatch");
    let scale = reference.amax();
    let diff = (value - reference).amax();
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

pub fn identity_scaled(n: usize, value: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal_element(n, n, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn schedule_ladder() {
        let steps: Vec<f64> = JitterSchedule::default().steps().collect();
        assert_eq!(steps.len(), 5);
        assert!((steps[0] - 1e-10).abs() < 1e-24);
        assert!((steps[4] - 1e-6).abs() < 1e-18);
        let from_zero: Vec<f64> = JitterSchedule::from_zero(1e-8).steps().collect();
        assert_eq!(from_zero.len(), 4);
        assert_eq!(from_zero[0], 0.0);
        assert_eq!(JitterSchedule::fixed(0.0).steps().count(), 1);
    }

    #[test]
    fn cholesky_matches_nalgebra() {
        let a = spd(9);
        let ours = SpdFactor::new(&a, &JitterSchedule::fixed(0.0), "test").unwrap();
        let theirs = a.clone().cholesky().unwrap().unpack();
        assert!(max_rel_diff(ours.lower(), &theirs) < 1e-13);
        let b = DMatrix::from_fn(9, 3, |i, j| (i + 2 * j) as f64);
        let x = ours.solve(&b);
        assert!(max_rel_diff(&(&a * x), &b) < 1e-12);
    }

    #[test]
    fn singular_reports_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdFactor::new(&a, &JitterSchedule::default(), "indefinite") {
            Err(Error::SingularCovariance { min_pivot, jitter, context }) => {
                assert_eq!(context, "indefinite");
                assert!(min_pivot < 0.0);
                assert!((jitter - 1e-6).abs() < 1e-18);
            }
            other => panic!("expected singular covariance, got {other:?}"),
        }
    }

    #[test]
    fn jitter_rescues_rank_deficient() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let f = SpdFactor::new(&a, &JitterSchedule::default(), "rank one").unwrap();
        assert!(f.jitter() >= 1e-10);
        assert!(SpdFactor::new(&a, &JitterSchedule::fixed(0.0), "rank one").is_err());
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let s = PsdSqrt::new(&DMatrix::zeros(4, 4), &JitterSchedule::fixed(0.0)).unwrap();
        assert_eq!(s.factor().amax(), 0.0);
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let a = spd(6);
        let s = PsdSqrt::new(&a, &JitterSchedule::fixed(0.0)).unwrap();
        let back = s.factor() * s.factor().transpose();
        assert!(max_rel_diff(&back, &a) < 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(PsdSqrt::new(&indefinite, &JitterSchedule::default()).is_err());
    }

    #[test]
    fn symmetry_and_psd_checks() {
        let a = spd(5);
        assert!(is_symmetric(&a, 1e-12));
        assert!(is_psd(&a));
        let mut b = a.clone();
        b[(0, 1)] += 1e-3;
        assert!(!is_symmetric(&b, 1e-12));
        assert!(is_symmetric(&symmetrize(&b), 1e-15));
        assert!(!is_psd(&(-a)));
    }
}
