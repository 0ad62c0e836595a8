//! Dense complex kernels used by the filter updates.
//!
//! Matrices are `nalgebra` dynamic matrices of `Complex64`. Storage is
//! column-major, which makes [`vec`] a plain copy of the backing slice.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Relative diagonal loading applied before inversions.
///
/// The added term is `relative_floor * mean(Re diag(A))`, so the amount of
/// loading follows the signal level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadingPolicy {
    pub relative_floor: f64,
}

impl Default for LoadingPolicy {
    fn default() -> Self {
        Self { relative_floor: 1e-8 }
    }
}

impl LoadingPolicy {
    pub fn new(relative_floor: f64) -> Result<Self> {
        if !(relative_floor >= 0.0) || !relative_floor.is_finite() {
            return Err(Error::Config(format!(
                "loading floor must be finite and >= 0, got {relative_floor}"
            )));
        }
        Ok(Self { relative_floor })
    }

    /// No loading at all; used where exact algebraic identities are checked.
    pub fn none() -> Self {
        Self { relative_floor: 0.0 }
    }

    /// Loading magnitude for `a`. An all-zero diagonal falls back to unit scale.
    pub fn epsilon(&self, a: &CMatrix) -> f64 {
        let n = a.nrows().max(1);
        let mean = (0..a.nrows()).map(|i| a[(i, i)].re.abs()).sum::<f64>() / n as f64;
        let scale = if mean > 0.0 && mean.is_finite() { mean } else { 1.0 };
        self.relative_floor * scale
    }

    pub fn load(&self, a: &CMatrix) -> CMatrix {
        let eps = self.epsilon(a);
        let mut out = a.clone();
        if eps > 0.0 {
            for i in 0..out.nrows().min(out.ncols()) {
                out[(i, i)] += eps;
            }
        }
        out
    }
}

fn check_finite(a: &CMatrix, what: &'static str) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_square(a: &CMatrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Solves `(A + eps I) X = B` for Hermitian `A`.
///
/// Cholesky is tried first; if the loaded matrix is not numerically positive
/// definite the solve falls back to partial-pivoting LU.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix, policy: LoadingPolicy) -> Result<CMatrix> {
    check_square(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::Shape(format!(
            "rhs has {} rows, matrix is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a, "hermitian_solve matrix")?;
    let loaded = policy.load(a);
    if let Some(chol) = loaded.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    loaded
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
        .ok_or_else(|| Error::Singular("loaded hermitian system".into()))
}

/// Solves a general square system by LU with partial pivoting.
pub fn general_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_square(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::Shape("rhs rows differ from matrix size".into()));
    }
    check_finite(a, "general_solve matrix")?;
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
        .ok_or_else(|| Error::Singular("general system".into()))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Column stacking: `vec([a1, .., aM]) = [a1; ..; aM]`.
pub fn vec(a: &CMatrix) -> CMatrix {
    CMatrix::from_column_slice(a.len(), 1, a.as_slice())
}

pub fn unvec(a: &CMatrix, rows: usize, cols: usize) -> Result<CMatrix> {
    if a.len() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            a.len()
        )));
    }
    Ok(CMatrix::from_column_slice(rows, cols, a.as_slice()))
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
pub fn normalize_phase(v: &mut CMatrix) {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for (k, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = k;
        }
    }
    if best_mag > 0.0 {
        let z = v.as_slice()[best];
        let rot = z.conj() / z.norm();
        v.iter_mut().for_each(|e| *e *= rot);
    }
}

/// Dominant eigenvector of a Hermitian matrix, unit norm, phase-normalized.
pub fn dominant_eigvec(a: &CMatrix) -> Result<CMatrix> {
    check_square(a)?;
    check_finite(a, "dominant_eigvec input")?;
    let herm = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(herm);
    let k = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &e)| if e > acc.1 { (i, e) } else { acc },
        )
        .0;
    let mut v = CMatrix::from_column_slice(a.nrows(), 1, eig.eigenvectors.column(k).as_slice());
    let nrm = v.norm();
    if nrm > 0.0 {
        v.unscale_mut(nrm);
    }
    normalize_phase(&mut v);
    Ok(v)
}

/// Dominant eigenvector of `Noise^{-1} Sig` via noise whitening.
///
/// With `Noise + eps I = L L^H` the symmetric problem `L^{-1} Sig L^{-H} u = mu u`
/// is solved and mapped back as `v = L^{-H} u`.
pub fn max_gen_eigvec(sig: &CMatrix, noise: &CMatrix, policy: LoadingPolicy) -> Result<CMatrix> {
    check_square(sig)?;
    check_square(noise)?;
    if sig.nrows() != noise.nrows() {
        return Err(Error::Shape("signal and noise matrices differ in size".into()));
    }
    check_finite(sig, "max_gen_eigvec signal")?;
    check_finite(noise, "max_gen_eigvec noise")?;
    let loaded = policy.load(&(noise + noise.adjoint()).scale(0.5));
    let chol = loaded
        .cholesky()
        .ok_or_else(|| Error::Singular("noise covariance not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&CMatrix::identity(l.nrows(), l.ncols()))
        .ok_or_else(|| Error::Singular("whitening factor".into()))?;
    let whitened = &linv * sig * linv.adjoint();
    let u = dominant_eigvec(&whitened)?;
    let mut v = linv.adjoint() * u;
    let nrm = v.norm();
    if !(nrm > 0.0) {
        return Err(Error::Numerical("zero generalized eigenvector".into()));
    }
    v.unscale_mut(nrm);
    normalize_phase(&mut v);
    Ok(v)
}

/// `log|det W|`, or `-inf` when the determinant underflows.
pub fn log_abs_det(w: &CMatrix) -> f64 {
    let d = w.clone().determinant().norm();
    if d < 1e-300 || !d.is_finite() {
        f64::NEG_INFINITY
    } else {
        d.ln()
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn rel_residual(a: &CMatrix, x: &CMatrix, b: &CMatrix) -> f64 {
        (a * x - b).norm() / b.norm()
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let mut r = rng(1);
        let b = random_matrix(&mut r, 4, 3);
        let x = hermitian_solve(&CMatrix::identity(4, 4), &b, LoadingPolicy::default()).unwrap();
        assert!((x - &b).norm() < 1e-7 * b.norm());
    }

    #[test]
    fn random_hpd_solve_residual() {
        let mut r = rng(2);
        for _ in 0..20 {
            let a = random_hpd(&mut r, 6);
            let b = random_matrix(&mut r, 6, 2);
            let policy = LoadingPolicy::default();
            let x = hermitian_solve(&a, &b, policy).unwrap();
            assert!(rel_residual(&policy.load(&a), &x, &b) < 1e-8);
        }
    }

    #[test]
    fn rank_one_solve_is_bounded_by_loading() {
        let mut r = rng(3);
        let h = random_matrix(&mut r, 5, 1);
        let a = &h * h.adjoint();
        let b = random_matrix(&mut r, 5, 1);
        let p = LoadingPolicy::default();
        let x = hermitian_solve(&a, &b, p).unwrap();
        assert!(x.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let eps = p.epsilon(&a);
        let lhs = (&a * &x - &b + x.scale(eps)).norm();
        assert!(lhs < 1e-8 * b.norm().max(eps * x.norm()) * 10.0);
        // residual of the unloaded system equals eps * ||x|| up to round-off
        let res = (&a * &x - &b).norm();
        assert!((res - eps * x.norm()).abs() <= 1e-6 * eps * x.norm() + 1e-9 * b.norm());
    }

    #[test]
    fn solve_rejects_bad_input() {
        let a = CMatrix::zeros(2, 3);
        assert!(matches!(
            hermitian_solve(&a, &CMatrix::zeros(2, 1), LoadingPolicy::default()),
            Err(Error::Shape(_))
        ));
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = C64::new(f64::NAN, 0.0);
        assert!(matches!(
            hermitian_solve(&a, &CMatrix::zeros(2, 1), LoadingPolicy::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_matrix_solves_with_unit_scale_loading() {
        let a = CMatrix::zeros(3, 3);
        let x = hermitian_solve(&a, &CMatrix::zeros(3, 1), LoadingPolicy::default()).unwrap();
        assert_eq!(x, CMatrix::zeros(3, 1));
    }

    #[test]
    fn kron_shapes_and_block_diagonal() {
        let mut r = rng(4);
        let a = random_matrix(&mut r, 2, 3);
        let b = random_matrix(&mut r, 4, 5);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (8, 15));

        let b = random_matrix(&mut r, 3, 3);
        let k = kron(&CMatrix::identity(2, 2), &b);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i / 3 == j / 3 {
                    b[(i % 3, j % 3)]
                } else {
                    C64::new(0.0, 0.0)
                };
                assert_eq!(k[(i, j)], expect);
            }
        }
    }

    #[test]
    fn kron_vec_identity() {
        let mut r = rng(5);
        for _ in 0..10 {
            let a = random_matrix(&mut r, 2, 2);
            let b = random_matrix(&mut r, 2, 2);
            let x = random_matrix(&mut r, 2, 2);
            let lhs = kron(&a.transpose(), &b) * vec(&x);
            let rhs = vec(&(&b * &x * &a));
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn vec_stacks_columns() {
        let v = vec(&CMatrix::identity(2, 2));
        let expect: Vec<C64> = [1.0, 0.0, 0.0, 1.0].iter().map(|&x| C64::new(x, 0.0)).collect();
        assert_eq!(v.as_slice(), expect.as_slice());

        let a = CMatrix::from_fn(2, 2, |i, j| C64::new((10 * i + j) as f64, 0.0));
        // column 0 is [a00, a10]
        assert_eq!(vec(&a)[(1, 0)], a[(1, 0)]);
        assert_eq!(vec(&a)[(2, 0)], a[(0, 1)]);
    }

    #[test]
    fn unvec_inverts_vec() {
        let mut r = rng(6);
        let a = random_matrix(&mut r, 3, 4);
        assert_eq!(unvec(&vec(&a), 3, 4).unwrap(), a);
        assert!(unvec(&vec(&a), 5, 2).is_err());
        let b = random_matrix(&mut r, 3, 4);
        let s = C64::new(0.3, -1.2);
        let lin = vec(&(&a + b.map(|z| z * s)));
        assert!((lin - (vec(&a) + vec(&b).map(|z| z * s))).norm() < 1e-14);
    }

    fn power_iteration(m: &CMatrix) -> CMatrix {
        let n = m.nrows();
        let mut v = CMatrix::from_element(n, 1, C64::new(1.0, 0.3));
        for _ in 0..20_000 {
            let next = m * &v;
            let nrm = next.norm();
            v = next.unscale(nrm);
        }
        normalize_phase(&mut v);
        v
    }

    #[test]
    fn gen_eigvec_diagonal_case() {
        let sig = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(3.0, 0.0),
            C64::new(1.0, 0.0),
        ]));
        let v = max_gen_eigvec(&sig, &CMatrix::identity(2, 2), LoadingPolicy::default()).unwrap();
        assert!((v[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(v[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn gen_eigvec_matches_power_iteration() {
        let mut r = rng(7);
        let p = LoadingPolicy::none();
        for _ in 0..5 {
            let sig = random_hpd(&mut r, 4);
            let noise = random_hpd(&mut r, 4);
            let v = max_gen_eigvec(&sig, &noise, p).unwrap();
            let m = noise.clone().lu().solve(&sig).unwrap();
            let mv = &m * &v;
            let mu = (v.adjoint() * &mv)[(0, 0)];
            assert!((&mv - v.map(|z| z * mu)).norm() < 1e-6 * mu.norm());
            let oracle = power_iteration(&m);
            assert!((v - oracle).norm() < 1e-6);
        }
    }

    #[test]
    fn gen_eigvec_rank_one_signal() {
        let mut r = rng(8);
        let h = random_matrix(&mut r, 4, 1);
        let noise = random_hpd(&mut r, 4);
        let v = max_gen_eigvec(&(&h * h.adjoint()), &noise, LoadingPolicy::none()).unwrap();
        let mut expect = noise.lu().solve(&h).unwrap();
        let n = expect.norm();
        expect.unscale_mut(n);
        normalize_phase(&mut expect);
        assert!((v - expect).norm() < 1e-9);
    }

    #[test]
    fn gen_eigvec_scale_invariant() {
        let mut r = rng(9);
        let sig = random_hpd(&mut r, 3);
        let noise = random_hpd(&mut r, 3);
        let p = LoadingPolicy::default();
        let v1 = max_gen_eigvec(&sig, &noise, p).unwrap();
        let v2 = max_gen_eigvec(&sig.scale(7.5), &noise.scale(0.02), p).unwrap();
        assert!((v1 - v2).norm() < 1e-8);
    }

    #[test]
    fn log_det_guards_singular() {
        assert_eq!(log_abs_det(&CMatrix::zeros(2, 2)), f64::NEG_INFINITY);
        assert!(log_abs_det(&CMatrix::identity(3, 3)).abs() < 1e-15);
    }
}
