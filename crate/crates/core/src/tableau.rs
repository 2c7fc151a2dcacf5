//! Radau IIA Butcher tableaux and the factorizations of `A^{-1}` that the
//! stage solvers are built on: the unit-upper Crout factorization, the real
//! spectral decomposition of its lower factor, and the complex spectral
//! decomposition of `A^{-1}` itself.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::scalar::Real;

pub const MAX_STAGES: usize = 9;

#[derive(Debug, Clone)]
pub struct ButcherTableau<R> {
    pub stages: usize,
    pub a: DenseMatrix<R>,
    pub b: Vec<R>,
    pub c: Vec<R>,
    pub a_inv: DenseMatrix<R>,
}

impl<R: Real> ButcherTableau<R> {
    /// Classical order `2Q - 1` of the Radau IIA family.
    pub fn order(&self) -> usize {
        2 * self.stages - 1
    }

    /// `max_m |sum_i b_i c_i^(m-1) - 1/m|` over `m = 1..=max_m`.
    pub fn order_condition_defect(&self, max_m: usize) -> R {
        let mut worst = R::zero();
        for m in 1..=max_m {
            let s: R = self.b.iter().zip(&self.c).map(|(b, c)| *b * c.powi(m as i32 - 1)).sum();
            worst = worst.max((s - R::one() / R::of_usize(m)).abs());
        }
        worst
    }
}

/// Legendre polynomial `P_k(y)` by the three-term recurrence.
fn legendre<R: Real>(k: usize, y: R) -> R {
    if k == 0 {
        return R::one();
    }
    let (mut p0, mut p1) = (R::one(), y);
    for j in 1..k {
        let jr = R::of_usize(j);
        let p2 = ((jr + jr + R::one()) * y * p1 - jr * p0) / (jr + R::one());
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Right Radau polynomial on [0, 1]; its zeros are the collocation nodes.
fn radau_right<R: Real>(q: usize, x: R) -> R {
    let y = x + x - R::one();
    legendre(q, y) - legendre(q - 1, y)
}

fn bisect<R: Real>(f: impl Fn(R) -> R, mut lo: R, mut hi: R) -> R {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = (lo + hi) * R::lit(0.5);
        if mid <= lo || mid >= hi {
            return mid;
        }
        let fm = f(mid);
        if fm == R::zero() {
            return mid;
        }
        if (fm < R::zero()) == (flo < R::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * R::lit(0.5)
}

fn radau_nodes<R: Real>(q: usize) -> Vec<R> {
    let samples = 4096;
    let f = |x: R| radau_right(q, x);
    let mut nodes = Vec::with_capacity(q);
    let mut prev_x = R::zero();
    let mut prev_f = f(prev_x);
    for s in 1..samples {
        let x = R::of_usize(s) / R::of_usize(samples);
        let fx = f(x);
        if (fx < R::zero()) != (prev_f < R::zero()) {
            nodes.push(bisect(f, prev_x, x));
        }
        prev_x = x;
        prev_f = fx;
    }
    nodes.push(R::one());
    nodes
}

/// Multiply polynomial (ascending coefficients) by `(s - root) / denom`.
fn mul_linear<R: Real>(p: &[R], root: R, denom: R) -> Vec<R> {
    let mut out = vec![R::zero(); p.len() + 1];
    for (k, coef) in p.iter().enumerate() {
        out[k + 1] += *coef / denom;
        out[k] -= *coef * root / denom;
    }
    out
}

/// `int_lo^hi p(t) dt` for ascending monomial coefficients `p`.
fn integrate_monomials<R: Real>(p: &[R], lo: R, hi: R) -> R {
    let mut s = R::zero();
    let (mut ph, mut pl) = (hi, lo);
    for (k, coef) in p.iter().enumerate() {
        s += *coef * (ph - pl) / R::of_usize(k + 1);
        ph *= hi;
        pl *= lo;
    }
    s
}

/// Radau IIA tableau with `stages` collocation points.
pub fn radau_iia<R: Real>(stages: usize) -> Result<ButcherTableau<R>> {
    if !(1..=MAX_STAGES).contains(&stages) {
        return Err(SolverError::UnsupportedStageCount { stages });
    }
    let c = radau_nodes::<R>(stages);
    debug_assert_eq!(c.len(), stages);
    // Lagrange basis in monomials of t = s - 1/2, which keeps |t| <= 1/2 on
    // the unit interval and the expansion well conditioned up to Q = 9.
    let half = R::lit(0.5);
    let basis: Vec<Vec<R>> = (0..stages)
        .map(|j| {
            let mut p = vec![R::one()];
            for (k, ck) in c.iter().enumerate() {
                if k != j {
                    p = mul_linear(&p, *ck - half, c[j] - *ck);
                }
            }
            p
        })
        .collect();
    let a = DenseMatrix::from_fn(stages, stages, |i, j| integrate_monomials(&basis[j], -half, c[i] - half));
    let b = (0..stages).map(|j| integrate_monomials(&basis[j], -half, half)).collect();
    let a_inv = a.inverse()?;
    Ok(ButcherTableau { stages, a, b, c, a_inv })
}

/// `A^{-1} = L U` with `U` unit upper triangular.
#[derive(Debug, Clone)]
pub struct TriangularFactors<R> {
    pub l: DenseMatrix<R>,
    pub u: DenseMatrix<R>,
}

/// Crout elimination: lower factor carries the pivots, `U` has a unit diagonal.
pub fn crout_lu<R: Real>(m: &DenseMatrix<R>) -> Result<TriangularFactors<R>> {
    if !m.is_square() {
        return Err(SolverError::Dimension { expected: m.rows(), found: m.cols() });
    }
    let n = m.rows();
    let mut l = DenseMatrix::zeros(n, n);
    let mut u = DenseMatrix::identity(n);
    let tiny = m.max_abs() * R::epsilon() * R::lit(16.0);
    for j in 0..n {
        for i in j..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * u[(k, j)];
            }
            l[(i, j)] = s;
        }
        if l[(j, j)].abs() <= tiny {
            return Err(SolverError::ZeroPivot { index: j });
        }
        for i in j + 1..n {
            let mut s = m[(j, i)];
            for k in 0..j {
                s -= l[(j, k)] * u[(k, i)];
            }
            u[(j, i)] = s / l[(j, j)];
        }
    }
    Ok(TriangularFactors { l, u })
}

/// `L = S diag(lambdas) S^{-1}` for a lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct RealSpectralFactors<R> {
    pub lambdas: Vec<R>,
    pub s: DenseMatrix<R>,
    pub s_inv: DenseMatrix<R>,
}

/// Eigen-decomposition of a lower-triangular matrix with distinct diagonal.
///
/// Eigenvector `j` is zero above row `j`, has a one in row `j`, and the rest
/// follows from forward substitution on `(L - l_jj I) v = 0`.
pub fn spectral_real<R: Real>(l: &DenseMatrix<R>) -> Result<RealSpectralFactors<R>> {
    let n = l.rows();
    if !l.is_square() {
        return Err(SolverError::Dimension { expected: n, found: l.cols() });
    }
    let lambdas: Vec<R> = (0..n).map(|i| l[(i, i)]).collect();
    for i in 0..n {
        for j in i + 1..n {
            let scale = lambdas[i].abs().max(lambdas[j].abs()).max(R::min_positive_value());
            if (lambdas[i] - lambdas[j]).abs() < R::lit(1e-10) * scale {
                return Err(SolverError::DegenerateSpectrum { first: i, second: j });
            }
        }
    }
    let mut s = DenseMatrix::zeros(n, n);
    for j in 0..n {
        s[(j, j)] = R::one();
        for i in j + 1..n {
            let mut acc = R::zero();
            for k in j..i {
                acc += l[(i, k)] * s[(k, j)];
            }
            s[(i, j)] = -acc / (l[(i, i)] - lambdas[j]);
        }
    }
    // S is unit lower triangular; invert by forward substitution.
    let mut s_inv = DenseMatrix::identity(n);
    for j in 0..n {
        for i in j + 1..n {
            let mut acc = R::zero();
            for k in j..i {
                acc += s[(i, k)] * s_inv[(k, j)];
            }
            s_inv[(i, j)] = -acc;
        }
    }
    Ok(RealSpectralFactors { lambdas, s, s_inv })
}

/// One entry per independent block: a conjugate pair (`im > 0`) or the lone
/// real eigenvalue of an odd stage count (`im == 0`, no partner).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair<R> {
    pub re: R,
    pub im: R,
    /// Column of `S` holding the representative eigenvector.
    pub index: usize,
    /// Column of the conjugate partner, if any.
    pub partner: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ComplexSpectralFactors<R> {
    pub pairs: Vec<EigenPair<R>>,
    /// All `Q` eigenvalues in column order of `S`.
    pub lambdas: Vec<Complex<R>>,
    pub s: DenseMatrix<Complex<R>>,
    pub s_inv: DenseMatrix<Complex<R>>,
}

impl<R: Real> ComplexSpectralFactors<R> {
    pub fn stages(&self) -> usize {
        self.lambdas.len()
    }
}

const QR_MAX_SWEEPS: usize = 60;

/// Reduce to upper Hessenberg form by stabilized elementary similarity
/// transforms. 1-based storage, index 0 unused.
fn hessenberg<R: Real>(a: &mut [Vec<R>], n: usize) {
    for m in 2..n {
        let mut x = R::zero();
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().take(n + 1).skip(1) {
                row.swap(i, m);
            }
        }
        if x != R::zero() {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != R::zero() {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        let t = a[m][j];
                        a[i][j] -= y * t;
                    }
                    for row in a.iter_mut().take(n + 1).skip(1) {
                        let t = row[i];
                        row[m] += y * t;
                    }
                }
            }
        }
    }
    for i in 1..=n {
        for j in 1..i.saturating_sub(1) {
            a[i][j] = R::zero();
        }
    }
}

fn sign<R: Real>(a: R, b: R) -> R {
    if b >= R::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the shifted (Francis double
/// shift) QR iteration. 1-based storage.
fn hessenberg_qr<R: Real>(a: &mut [Vec<R>], n: usize) -> Result<Vec<Complex<R>>> {
    let mut wr = vec![R::zero(); n + 1];
    let mut wi = vec![R::zero(); n + 1];
    let mut anorm = R::zero();
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = R::zero();
    let half = R::lit(0.5);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == R::zero() {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = R::zero();
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = R::zero();
                nn -= 1;
            } else {
                let mut y = a[nu - 1][nu - 1];
                let mut w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nu - 1 {
                    let p = half * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= R::zero() {
                        z = p + sign(z, p);
                        wr[nu - 1] = x + z;
                        wr[nu] = x + z;
                        if z != R::zero() {
                            wr[nu] = x - w / z;
                        }
                        wi[nu - 1] = R::zero();
                        wi[nu] = R::zero();
                    } else {
                        wr[nu - 1] = x + p;
                        wr[nu] = x + p;
                        wi[nu - 1] = -z;
                        wi[nu] = z;
                    }
                    nn -= 2;
                } else {
                    if its == QR_MAX_SWEEPS {
                        return Err(SolverError::SpectralFailure { iterations: its });
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 1..=nu {
                            a[i][i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = R::lit(0.75) * s;
                        y = x;
                        w = R::lit(-0.4375) * s * s;
                    }
                    its += 1;
                    let (mut p, mut q, mut r, mut z);
                    let mut m = nu - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s0;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nu {
                        a[i][i - 2] = R::zero();
                        if i != m + 2 {
                            a[i][i - 3] = R::zero();
                        }
                    }
                    let mut k = m;
                    while k < nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = R::zero();
                            if k != nu - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != R::zero() {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != R::zero() {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nu - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = nu.min(k + 3);
                            for i in l..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nu - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 1 || l as isize >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex::new(wr[i], wi[i])).collect())
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues<R: Real>(m: &DenseMatrix<R>) -> Result<Vec<Complex<R>>> {
    let n = m.rows();
    let mut a = vec![vec![R::zero(); n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    hessenberg(&mut a, n);
    hessenberg_qr(&mut a, n)
}

/// Eigenpair for an approximate eigenvalue: inverse iteration for the
/// direction, then Newton steps on `(A - lambda I) v = 0` with the leading
/// entry of `v` pinned to one. Returns the refined eigenvalue and vector.
fn eigenpair<R: Real>(m: &DenseMatrix<Complex<R>>, lambda: Complex<R>) -> Result<(Complex<R>, Vec<Complex<R>>)> {
    let n = m.rows();
    let offset = R::lit(1e-10) * (R::one() + lambda.norm());
    let mu = lambda + Complex::new(offset, offset);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let lu = shifted.lu()?;
    let mut v = vec![Complex::<R>::one(); n];
    for _ in 0..3 {
        v = lu.solve(&v);
        let big = v.iter().fold(R::zero(), |acc, z| acc.max(z.norm()));
        let inv = R::one() / big;
        v.iter_mut().for_each(|z| *z *= inv);
    }
    let big = v.iter().fold(R::zero(), |acc, z| acc.max(z.norm()));
    let lead = v
        .iter()
        .position(|z| z.norm() > R::lit(1e-8) * big)
        .ok_or(SolverError::SpectralFailure { iterations: 3 })?;
    let pivot = v[lead];
    v.iter_mut().for_each(|z| *z /= pivot);

    let mut lambda = lambda;
    for _ in 0..3 {
        // [A - lambda I, -v; e_lead^T, 0] [dv; dlambda] = [-(A - lambda I) v; 0]
        let mut jac = DenseMatrix::zeros(n + 1, n + 1);
        let mut rhs = vec![Complex::<R>::zero(); n + 1];
        for i in 0..n {
            let mut r = -lambda * v[i];
            for j in 0..n {
                jac[(i, j)] = m[(i, j)];
                r += m[(i, j)] * v[j];
            }
            jac[(i, i)] -= lambda;
            jac[(i, n)] = -v[i];
            rhs[i] = -r;
        }
        jac[(n, lead)] = Complex::one();
        let Ok(step) = jac.lu() else { break };
        let d = step.solve(&rhs);
        for i in 0..n {
            v[i] += d[i];
        }
        lambda += d[n];
    }
    Ok((lambda, v))
}

/// `A^{-1} = S diag(lambda) S^{-1}` in complex arithmetic.
///
/// Column order: each conjugate pair as `(lambda, conj(lambda))` with the
/// positive imaginary part first, pairs sorted by real part, and the lone real
/// eigenvalue of an odd stage count last.
pub fn spectral_complex<R: Real>(a_inv: &DenseMatrix<R>) -> Result<ComplexSpectralFactors<R>> {
    let n = a_inv.rows();
    if !a_inv.is_square() {
        return Err(SolverError::Dimension { expected: n, found: a_inv.cols() });
    }
    let raw = eigenvalues(a_inv)?;
    let scale = raw.iter().fold(R::zero(), |m, z| m.max(z.norm()));
    let tol = R::lit(1e-9) * scale;
    let mut upper: Vec<Complex<R>> = raw.iter().copied().filter(|z| z.im > tol).collect();
    let mut real: Vec<Complex<R>> =
        raw.iter().filter(|z| z.im.abs() <= tol).map(|z| Complex::new(z.re, R::zero())).collect();
    upper.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap_or(std::cmp::Ordering::Equal));
    real.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap_or(std::cmp::Ordering::Equal));
    if 2 * upper.len() + real.len() != n {
        return Err(SolverError::SpectralFailure { iterations: QR_MAX_SWEEPS });
    }

    let mut lambdas = Vec::with_capacity(n);
    let mut pairs = Vec::new();
    for z in &upper {
        pairs.push(EigenPair { re: z.re, im: z.im, index: lambdas.len(), partner: Some(lambdas.len() + 1) });
        lambdas.push(*z);
        lambdas.push(z.conj());
    }
    for z in &real {
        pairs.push(EigenPair { re: z.re, im: R::zero(), index: lambdas.len(), partner: None });
        lambdas.push(*z);
    }

    let mc = a_inv.map(|v| Complex::new(v, R::zero()));
    let mut s = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let is_real = lambdas[j].im == R::zero();
        let (refined, mut v) = eigenpair(&mc, lambdas[j])?;
        lambdas[j] = refined;
        if is_real {
            lambdas[j].im = R::zero();
            v.iter_mut().for_each(|z| z.im = R::zero());
        }
        for i in 0..n {
            s[(i, j)] = v[i];
        }
    }
    for p in pairs.iter_mut() {
        p.re = lambdas[p.index].re;
        p.im = lambdas[p.index].im;
    }
    let s_inv = s.inverse()?;
    Ok(ComplexSpectralFactors { pairs, lambdas, s, s_inv })
}
