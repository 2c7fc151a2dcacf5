//! Right-preconditioned GMRES with modified Gram–Schmidt and no restart.
//!
//! Solves `A x = b` from a zero initial guess through `A P^{-1} y = b`,
//! `x = P^{-1} y`, so the monitored residual is the residual of the original
//! system. Only the Arnoldi basis is stored; the solution is formed with one
//! more preconditioner application at the end.

use num_traits::{Float, One, Zero};

use crate::error::{Result, SolverError};
use crate::scalar::{axpy, dot, norm2, Field, Real};

/// Subdiagonal entries below this are treated as an invariant subspace.
pub const BREAKDOWN: f64 = 1e-30;

#[derive(Debug, Clone, Copy)]
pub struct GmresConfig<R> {
    pub rel_tol: R,
    pub max_iter: usize,
}

impl<R: Real> Default for GmresConfig<R> {
    fn default() -> Self {
        Self { rel_tol: R::lit(1e-12), max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovReport<R> {
    pub iterations: usize,
    /// Residual norm before the first iteration and after each iteration.
    pub residual_history: Vec<R>,
    pub converged: bool,
    /// `||b - A x|| / ||b||` recomputed from the returned solution.
    pub reduction_achieved: R,
    pub preconditioner_applications: usize,
    pub operator_applications: usize,
}

/// Complex-safe Givens rotation zeroing `b` in `(a, b)`; `c` is real.
fn givens<T: Field>(a: T, b: T) -> (T::Real, T) {
    let (ma, mb) = (a.modulus(), b.modulus());
    if mb == T::Real::zero() {
        return (T::Real::one(), T::zero());
    }
    if ma == T::Real::zero() {
        return (T::Real::zero(), b.conj().scale(T::Real::one() / mb));
    }
    let t = ma.hypot(mb);
    let phase = a.scale(T::Real::one() / ma);
    (ma / t, phase * b.conj().scale(T::Real::one() / t))
}

fn check_finite<T: Field>(v: &[T], context: &str) -> Result<()> {
    if v.iter().all(|x| x.finite()) {
        Ok(())
    } else {
        Err(SolverError::NumericalFailure { context: context.to_string() })
    }
}

/// GMRES on `apply_a`, right-preconditioned by `apply_pinv`. The solution is
/// formed as `P^{-1}(V y)`, one preconditioner application more than the
/// iteration count.
pub fn gmres<T, A, P>(
    apply_a: A,
    apply_pinv: P,
    rhs: &[T],
    config: &GmresConfig<T::Real>,
) -> Result<(Vec<T>, KrylovReport<T::Real>)>
where
    T: Field,
    A: FnMut(&[T], &mut [T]) -> Result<()>,
    P: FnMut(&[T], &mut [T]) -> Result<()>,
{
    run(apply_a, apply_pinv, rhs, config, false)
}

/// Flexible GMRES: keeps `z_j = P^{-1} v_j` and forms `x = Z y`, so the
/// preconditioner may vary or be only real-linear on complex data.
pub fn fgmres<T, A, P>(
    apply_a: A,
    apply_pinv: P,
    rhs: &[T],
    config: &GmresConfig<T::Real>,
) -> Result<(Vec<T>, KrylovReport<T::Real>)>
where
    T: Field,
    A: FnMut(&[T], &mut [T]) -> Result<()>,
    P: FnMut(&[T], &mut [T]) -> Result<()>,
{
    run(apply_a, apply_pinv, rhs, config, true)
}

fn run<T, A, P>(
    mut apply_a: A,
    mut apply_pinv: P,
    rhs: &[T],
    config: &GmresConfig<T::Real>,
    flexible: bool,
) -> Result<(Vec<T>, KrylovReport<T::Real>)>
where
    T: Field,
    A: FnMut(&[T], &mut [T]) -> Result<()>,
    P: FnMut(&[T], &mut [T]) -> Result<()>,
{
    let n = rhs.len();
    let rz = T::Real::zero();
    if !(config.rel_tol > rz && config.rel_tol < T::Real::one()) {
        return Err(SolverError::Config { field: "rel_tol", reason: format!("{:?} not in (0, 1)", config.rel_tol) });
    }
    check_finite(rhs, "gmres right-hand side")?;
    let beta = norm2(rhs);
    let mut report = KrylovReport {
        iterations: 0,
        residual_history: vec![beta],
        converged: true,
        reduction_achieved: rz,
        preconditioner_applications: 0,
        operator_applications: 0,
    };
    if beta == rz {
        return Ok((vec![T::zero(); n], report));
    }
    let target = config.rel_tol * beta;
    let m = config.max_iter;

    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    basis.push(rhs.iter().map(|x| x.scale(T::Real::one() / beta)).collect());
    // Column j of the Hessenberg matrix, already rotated.
    let mut h: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut rotations: Vec<(T::Real, T)> = Vec::with_capacity(m);
    let mut g = vec![T::from_real(beta)];
    let mut zs: Vec<Vec<T>> = Vec::new();
    let mut z = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut converged = false;

    for j in 0..m {
        apply_pinv(&basis[j], &mut z)?;
        apply_a(&z, &mut w)?;
        if flexible {
            zs.push(z.clone());
        }
        report.preconditioner_applications += 1;
        report.operator_applications += 1;
        check_finite(&w, "gmres operator application")?;

        let mut col = Vec::with_capacity(j + 2);
        for v in &basis {
            let hij = dot(v, &w);
            axpy(-hij, v, &mut w);
            col.push(hij);
        }
        let sub = norm2(&w);
        col.push(T::from_real(sub));
        if !col.iter().all(|x| x.finite()) {
            return Err(SolverError::NumericalFailure { context: format!("gmres Arnoldi step {j}") });
        }

        for (i, (c, s)) in rotations.iter().enumerate() {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = a.scale(*c) + *s * b;
            col[i + 1] = b.scale(*c) - s.conj() * a;
        }
        let (c, s) = givens(col[j], col[j + 1]);
        col[j] = col[j].scale(c) + s * col[j + 1];
        col[j + 1] = T::zero();
        let gj = g[j];
        g[j] = gj.scale(c);
        g.push(-(s.conj() * gj));
        rotations.push((c, s));
        h.push(col);

        let res = g[j + 1].modulus();
        report.iterations = j + 1;
        report.residual_history.push(res);

        let breakdown = sub.as_f64() < BREAKDOWN;
        if res <= target || breakdown {
            converged = res <= target || breakdown;
            break;
        }
        basis.push(w.iter().map(|x| x.scale(T::Real::one() / sub)).collect());
    }

    // Back substitution for the least-squares coefficients.
    let k = report.iterations;
    let mut y = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for j in i + 1..k {
            s -= h[j][i] * y[j];
        }
        y[i] = s / h[i][i];
    }
    let mut x = vec![T::zero(); n];
    if flexible {
        for (yi, zi) in y.iter().zip(&zs) {
            axpy(*yi, zi, &mut x);
        }
    } else {
        let mut vy = vec![T::zero(); n];
        for (yi, v) in y.iter().zip(&basis) {
            axpy(*yi, v, &mut vy);
        }
        apply_pinv(&vy, &mut x)?;
        report.preconditioner_applications += 1;
    }
    check_finite(&x, "gmres solution")?;

    apply_a(&x, &mut w)?;
    report.operator_applications += 1;
    for (wi, bi) in w.iter_mut().zip(rhs) {
        *wi = *bi - *wi;
    }
    report.reduction_achieved = norm2(&w) / beta;
    report.converged = converged;
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(x: &[f64], y: &mut [f64]) -> Result<()> {
        y.copy_from_slice(x);
        Ok(())
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
        let b = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        b.transpose().matmul(&b).add(&DenseMatrix::identity(n).scaled(n as f64 * 0.1))
    }

    #[test]
    fn identity_operator_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let (x, rep) = gmres(identity, identity, &b, &GmresConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(x.iter().zip(&b).all(|(a, c)| (a - c).abs() < 1e-15));
        assert_eq!(rep.preconditioner_applications, 2);
    }

    #[test]
    fn exact_preconditioner_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(20, &mut rng);
        let lu = a.lu().unwrap();
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, rep) = gmres(
            |x, y| {
                y.copy_from_slice(&a.matvec(x));
                Ok(())
            },
            |x, y| {
                y.copy_from_slice(&lu.solve(x));
                Ok(())
            },
            &b,
            &GmresConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.reduction_achieved < 1e-13);
        let r = a.matvec(&x);
        assert!(r.iter().zip(&b).all(|(a, c)| (a - c).abs() < 1e-12));
    }

    #[test]
    fn random_spd_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(50, &mut rng);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = GmresConfig { rel_tol: 1e-10, max_iter: 200 };
        let (x, rep) = gmres(
            |x, y| {
                y.copy_from_slice(&a.matvec(x));
                Ok(())
            },
            identity,
            &b,
            &cfg,
        )
        .unwrap();
        assert!(rep.converged);
        let direct = a.lu().unwrap().solve(&b);
        assert!(x.iter().zip(&direct).all(|(p, q)| (p - q).abs() < 1e-8));
        for w in rep.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
        let last = *rep.residual_history.last().unwrap() / rep.residual_history[0];
        assert!((last - rep.reduction_achieved).abs() < 1e-12);
    }

    #[test]
    fn complex_field_reproduces_real_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(30, &mut rng);
        let ac = a.map(Complex64::from);
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bc: Vec<Complex64> = b.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let cfg = GmresConfig::default();
        let (x, _) = gmres(
            |x, y| {
                y.copy_from_slice(&a.matvec(x));
                Ok(())
            },
            identity,
            &b,
            &cfg,
        )
        .unwrap();
        let (xc, _) = gmres(
            |x: &[Complex64], y: &mut [Complex64]| {
                y.copy_from_slice(&ac.matvec(x));
                Ok(())
            },
            |x: &[Complex64], y: &mut [Complex64]| {
                y.copy_from_slice(x);
                Ok(())
            },
            &bc,
            &cfg,
        )
        .unwrap();
        for (r, c) in x.iter().zip(&xc) {
            assert!((r - c.re).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn complex_non_hermitian_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 25;
        let a = DenseMatrix::from_fn(n, n, |i, j| {
            let v = Complex64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            if i == j {
                v + Complex64::new(3.0, 1.0)
            } else {
                v
            }
        });
        let b: Vec<Complex64> = (0..n).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let (x, rep) = gmres(
            |x: &[Complex64], y: &mut [Complex64]| {
                y.copy_from_slice(&a.matvec(x));
                Ok(())
            },
            |x: &[Complex64], y: &mut [Complex64]| {
                y.copy_from_slice(x);
                Ok(())
            },
            &b,
            &GmresConfig::default(),
        )
        .unwrap();
        assert!(rep.converged && rep.reduction_achieved < 1e-11);
        let direct = a.lu().unwrap().solve(&b);
        assert!(x.iter().zip(&direct).all(|(p, q)| (p - q).norm() < 1e-10));
    }

    #[test]
    fn nan_is_reported() {
        let err = gmres(
            |_x: &[f64], y: &mut [f64]| {
                y.iter_mut().for_each(|v| *v = f64::NAN);
                Ok(())
            },
            identity,
            &[1.0, 2.0],
            &GmresConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::NumericalFailure { .. }));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let n = 40;
        let (x, rep) = gmres(
            |x: &[f64], y: &mut [f64]| {
                // cyclic shift: GMRES stalls until n iterations
                for i in 0..n {
                    y[(i + 1) % n] = x[i];
                }
                Ok(())
            },
            identity,
            &{
                let mut b = vec![0.0; n];
                b[0] = 1.0;
                b
            },
            &GmresConfig { rel_tol: 1e-12, max_iter: 5 },
        )
        .unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 5);
        assert_eq!(x.len(), n);
    }

    #[test]
    fn flexible_handles_real_linear_preconditioner() {
        // Conjugation is real-linear only; plain GMRES would return P^{-1}(V y).
        let a = Complex64::new(2.1, 1.4);
        let b = [Complex64::new(0.5, -0.2), Complex64::new(-1.0, 0.3)];
        let op = |x: &[Complex64], y: &mut [Complex64]| {
            y[0] = a * x[0] + x[1];
            y[1] = a * x[1];
            Ok(())
        };
        let pinv = |x: &[Complex64], y: &mut [Complex64]| {
            y[0] = x[0].conj() / 3.0;
            y[1] = x[1].conj() / 3.0;
            Ok(())
        };
        let (x, rep) = fgmres(op, pinv, &b, &GmresConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.reduction_achieved < 1e-12);
        assert_eq!(rep.preconditioner_applications, rep.iterations);
        assert!((x[1] - b[1] / a).norm() < 1e-13);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (x, rep) = gmres(identity, identity, &[0.0; 4], &GmresConfig::default()).unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let cfg = GmresConfig { rel_tol: 1.5, max_iter: 10 };
        assert!(gmres(identity, identity, &[1.0], &cfg).is_err());
    }
}
