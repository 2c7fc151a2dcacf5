//! Geometric multigrid for the shifted blocks `alpha M + tau K`.
//!
//! One V-cycle from a zero initial guess with Chebyshev–Jacobi smoothing,
//! multilinear transfer and a coarse solve on `coarse_level`. The Chebyshev
//! interval is frozen when the solver is built, so a V-cycle is a fixed
//! linear operator and can sit inside non-flexible GMRES.
//!
//! The same cycle runs three operator kinds:
//!
//! * [`ShiftedMultigrid`]: one real block,
//! * [`BatchedMultigrid`]: several blocks swept together with one shared
//!   eigenvalue estimate per level,
//! * [`PairMultigrid`]: the coupled real form `[K', -M'; M', K']` of a complex
//!   shifted block, smoothed with 2x2 block Jacobi.
//!
//! Boundary rows of the constrained operators are diagonal, so boundary values
//! are set exactly at the start of every level and never touched again.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use num_traits::Float;

use crate::dense::{assemble_from_action, DenseMatrix, LuFactors};
use crate::error::{Result, SolverError};
use crate::grid_fem::{GridHierarchy, GridLevel};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseSolver {
    Direct,
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VCycleConfig<R> {
    pub smoother_degree: usize,
    /// Ratio `lambda_max / lambda_min` of the Chebyshev target interval.
    pub smoothing_range: R,
    pub eig_iters: usize,
    pub eig_safety: R,
    pub coarse_solver: CoarseSolver,
    /// Smooth after the coarse correction as well as before it.
    pub pre_and_post: bool,
    pub coarse_level: usize,
    /// Degree and range of the Chebyshev coarse solver.
    pub coarse_degree: usize,
    pub coarse_range: R,
}

impl<R: Real> Default for VCycleConfig<R> {
    fn default() -> Self {
        Self {
            smoother_degree: 5,
            smoothing_range: R::lit(20.0),
            eig_iters: 20,
            eig_safety: R::lit(1.2),
            coarse_solver: CoarseSolver::Direct,
            pre_and_post: true,
            coarse_level: 0,
            coarse_degree: 10,
            coarse_range: R::lit(100.0),
        }
    }
}

impl<R: Real> VCycleConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if self.smoother_degree == 0 {
            return Err(SolverError::Config { field: "smoother_degree", reason: "must be at least 1".into() });
        }
        if !(self.smoothing_range > R::one()) {
            return Err(SolverError::Config {
                field: "smoothing_range",
                reason: format!("{} must exceed 1", self.smoothing_range),
            });
        }
        if !(self.eig_safety >= R::one()) {
            return Err(SolverError::Config { field: "eig_safety", reason: format!("{} below 1", self.eig_safety) });
        }
        if self.eig_iters == 0 {
            return Err(SolverError::Config { field: "eig_iters", reason: "must be at least 1".into() });
        }
        if self.coarse_solver == CoarseSolver::Chebyshev && (self.coarse_degree == 0 || !(self.coarse_range > R::one()))
        {
            return Err(SolverError::Config { field: "coarse_solver", reason: "invalid Chebyshev coarse settings".into() });
        }
        Ok(())
    }
}

/// Deterministic, non-smooth start vector for the power iteration.
fn start_vector<R: Real>(n: usize, mask: Option<&[bool]>) -> Vec<R> {
    (0..n)
        .map(|i| {
            if mask.is_some_and(|m| m[i]) {
                return R::zero();
            }
            let k = (i as u64).wrapping_mul(2_654_435_761) % 1000;
            R::lit(k as f64 / 1000.0 - 0.5) + R::lit(0.01)
        })
        .collect()
}

fn norm<R: Real>(v: &[R]) -> R {
    v.iter().map(|x| *x * *x).sum::<R>().sqrt()
}

/// Power iteration on `D^{-1} A`; returns `safety * ||D^{-1} A v|| / ||v||`
/// after `iters` steps.
pub fn estimate_lambda_max<R: Real>(
    mut apply: impl FnMut(&[R], &mut [R]) -> Result<()>,
    inv_diag: &[R],
    start: &[R],
    iters: usize,
    safety: R,
) -> Result<R> {
    let n = inv_diag.len();
    let mut v = start.to_vec();
    let mut w = vec![R::zero(); n];
    let mut est = R::zero();
    for _ in 0..iters {
        let nv = norm(&v);
        if !(nv > R::zero()) {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        apply(&v, &mut w)?;
        for (wi, d) in w.iter_mut().zip(inv_diag) {
            *wi *= *d;
        }
        est = norm(&w);
        std::mem::swap(&mut v, &mut w);
    }
    let value = est * safety;
    if !(value > R::zero()) || !Float::is_finite(value) {
        return Err(SolverError::SpectralEstimate { value: value.as_f64() });
    }
    Ok(value)
}

/// Chebyshev recurrence coefficients for the interval
/// `[lambda_max / range, lambda_max]`.
#[derive(Debug, Clone, Copy)]
struct Chebyshev<R> {
    theta: R,
    delta: R,
}

impl<R: Real> Chebyshev<R> {
    fn new(lambda_max: R, range: R) -> Self {
        let lo = lambda_max / range;
        Self { theta: (lambda_max + lo) * R::lit(0.5), delta: (lambda_max - lo) * R::lit(0.5) }
    }

    #[cfg(test)]
    /// Contraction bound `1 / T_k(theta / delta)` on the target interval.
    fn bound(&self, degree: usize) -> R {
        let s = self.theta / self.delta;
        R::one() / (R::of_usize(degree) * s.acosh()).cosh()
    }
}

/// Degree-`degree` Chebyshev–Jacobi smoothing of `A x = b`, in place.
pub fn chebyshev_smooth<R: Real>(
    mut apply: impl FnMut(&[R], &mut [R]) -> Result<()>,
    inv_diag: &[R],
    x: &mut [R],
    b: &[R],
    lambda_max: R,
    degree: usize,
    range: R,
) -> Result<()> {
    let ch = Chebyshev::new(lambda_max, range);
    let n = x.len();
    let mut r = vec![R::zero(); n];
    let mut d = vec![R::zero(); n];
    let sigma = ch.theta / ch.delta;
    let mut rho_old = R::one() / sigma;
    for k in 0..degree {
        apply(x, &mut r)?;
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        if k == 0 {
            for i in 0..n {
                d[i] = inv_diag[i] * r[i] / ch.theta;
            }
        } else {
            let rho = R::one() / (sigma + sigma - rho_old);
            let c1 = rho * rho_old;
            let c2 = (rho + rho) / ch.delta;
            for i in 0..n {
                d[i] = c1 * d[i] + c2 * inv_diag[i] * r[i];
            }
            rho_old = rho;
        }
        for i in 0..n {
            x[i] += d[i];
        }
    }
    if x.iter().all(|v| Float::is_finite(*v)) {
        Ok(())
    } else {
        Err(SolverError::NumericalFailure { context: "Chebyshev smoother".into() })
    }
}

/// Multi-component operator the V-cycle engine runs on.
pub trait LevelOperator<R: Real> {
    fn components(&self) -> usize;
    fn apply(&self, level: &GridLevel<R>, x: &[Vec<R>], y: &mut [Vec<R>]) -> Result<()>;
    /// `z = D^{-1} r` with the (block) Jacobi diagonal; exact on boundary rows.
    fn apply_inv_diag(&self, level: &GridLevel<R>, r: &[Vec<R>], z: &mut [Vec<R>]);
    /// Components whose eigenvalue estimate is taken jointly.
    fn coupled(&self) -> bool;
    fn dense(&self, level: &GridLevel<R>) -> Vec<DenseMatrix<R>>;
}

/// Independent blocks `shifts[q] M + tau K`.
#[derive(Debug, Clone)]
pub struct ShiftedBlocks<R> {
    shifts: Vec<R>,
    tau: R,
    /// Per level, per block.
    inv_diag: Vec<Vec<Vec<R>>>,
}

impl<R: Real> ShiftedBlocks<R> {
    pub fn new(hierarchy: &GridHierarchy<R>, shifts: &[R], tau: R) -> Self {
        let inv_diag = (0..=hierarchy.max_level())
            .map(|l| {
                shifts
                    .iter()
                    .map(|s| hierarchy.level(l).shifted_diagonal(*s, tau).iter().map(|d| R::one() / *d).collect())
                    .collect()
            })
            .collect();
        Self { shifts: shifts.to_vec(), tau, inv_diag }
    }
}

impl<R: Real> LevelOperator<R> for ShiftedBlocks<R> {
    fn components(&self) -> usize {
        self.shifts.len()
    }

    fn apply(&self, level: &GridLevel<R>, x: &[Vec<R>], y: &mut [Vec<R>]) -> Result<()> {
        if self.shifts.len() == 1 {
            return level.apply_shifted(self.shifts[0], self.tau, &x[0], &mut y[0]);
        }
        let pairs: Vec<(R, R)> = self.shifts.iter().map(|s| (*s, self.tau)).collect();
        level.apply_shifted_multi(&pairs, x, y)
    }

    fn apply_inv_diag(&self, level: &GridLevel<R>, r: &[Vec<R>], z: &mut [Vec<R>]) {
        let d = &self.inv_diag[level.level()];
        for q in 0..self.shifts.len() {
            for i in 0..r[q].len() {
                z[q][i] = d[q][i] * r[q][i];
            }
        }
    }

    fn coupled(&self) -> bool {
        false
    }

    fn dense(&self, level: &GridLevel<R>) -> Vec<DenseMatrix<R>> {
        self.shifts.iter().map(|s| level.assemble_shifted(*s, self.tau)).collect()
    }
}

/// Real form of `(re + i im) M + tau K`: `[K', -M'; M', K']` with
/// `K' = re M + tau K`, `M' = im M`.
#[derive(Debug, Clone)]
pub struct PairBlock<R> {
    pub re: R,
    pub im: R,
    pub tau: R,
    /// Per level: diagonals of `K'` and `M'`.
    diag: Vec<(Vec<R>, Vec<R>)>,
}

impl<R: Real> PairBlock<R> {
    pub fn new(hierarchy: &GridHierarchy<R>, re: R, im: R, tau: R) -> Self {
        let diag = (0..=hierarchy.max_level())
            .map(|l| {
                let lv = hierarchy.level(l);
                (lv.shifted_diagonal(re, tau), lv.shifted_diagonal(im, R::zero()))
            })
            .collect();
        Self { re, im, tau, diag }
    }
}

impl<R: Real> LevelOperator<R> for PairBlock<R> {
    fn components(&self) -> usize {
        2
    }

    fn apply(&self, level: &GridLevel<R>, x: &[Vec<R>], y: &mut [Vec<R>]) -> Result<()> {
        let n = level.n();
        let mut kx = vec![vec![R::zero(); n]; 2];
        let mut mx = vec![vec![R::zero(); n]; 2];
        for c in 0..2 {
            level.apply_shifted(self.re, self.tau, &x[c], &mut kx[c])?;
            level.apply_shifted(self.im, R::zero(), &x[c], &mut mx[c])?;
        }
        for i in 0..n {
            y[0][i] = kx[0][i] - mx[1][i];
            y[1][i] = mx[0][i] + kx[1][i];
        }
        Ok(())
    }

    fn apply_inv_diag(&self, level: &GridLevel<R>, r: &[Vec<R>], z: &mut [Vec<R>]) {
        let (dk, dm) = &self.diag[level.level()];
        for i in 0..r[0].len() {
            let (k, m) = (dk[i], dm[i]);
            let det = k * k + m * m;
            let (a, b) = (r[0][i], r[1][i]);
            z[0][i] = (k * a + m * b) / det;
            z[1][i] = (k * b - m * a) / det;
        }
    }

    fn coupled(&self) -> bool {
        true
    }

    fn dense(&self, level: &GridLevel<R>) -> Vec<DenseMatrix<R>> {
        let n = level.n();
        vec![assemble_from_action(2 * n, |x, y| {
            let xs = vec![x[..n].to_vec(), x[n..].to_vec()];
            let mut ys = vec![vec![R::zero(); n]; 2];
            self.apply(level, &xs, &mut ys).expect("lengths fixed by construction");
            y[..n].copy_from_slice(&ys[0]);
            y[n..].copy_from_slice(&ys[1]);
        })]
    }
}

/// V-cycle engine over a [`LevelOperator`].
#[derive(Debug)]
pub struct Multigrid<R, O> {
    hierarchy: Arc<GridHierarchy<R>>,
    op: O,
    config: VCycleConfig<R>,
    /// Per level, one frozen estimate per component.
    lambda_max: Vec<Vec<R>>,
    coarse: Vec<LuFactors<R>>,
    cycles: AtomicUsize,
}

impl<R: Real, O: LevelOperator<R>> Multigrid<R, O> {
    pub fn with_operator(hierarchy: Arc<GridHierarchy<R>>, op: O, config: VCycleConfig<R>, shared: bool) -> Result<Self> {
        config.validate()?;
        if config.coarse_level >= hierarchy.max_level() {
            return Err(SolverError::Config {
                field: "coarse_level",
                reason: format!("{} must be below the finest level {}", config.coarse_level, hierarchy.max_level()),
            });
        }
        let nc = op.components();
        let mut lambda_max = Vec::with_capacity(hierarchy.max_level() + 1);
        for l in 0..=hierarchy.max_level() {
            let lv = hierarchy.level(l);
            let n = lv.n();
            let start = start_vector::<R>(n, Some(lv.boundary_mask()));
            let mut est = vec![R::zero(); nc];
            if lv.interior_count() == 0 {
                est.iter_mut().for_each(|e| *e = config.eig_safety);
            } else if op.coupled() {
                // one estimate for the concatenated vector
                let e = estimate_lambda_max(
                    |x, y| {
                        let xs: Vec<Vec<R>> = x.chunks(n).map(<[R]>::to_vec).collect();
                        let mut ys = vec![vec![R::zero(); n]; nc];
                        op.apply(lv, &xs, &mut ys)?;
                        let mut zs = ys.clone();
                        op.apply_inv_diag(lv, &ys, &mut zs);
                        for (c, z) in zs.iter().enumerate() {
                            y[c * n..(c + 1) * n].copy_from_slice(z);
                        }
                        Ok(())
                    },
                    &vec![R::one(); n * nc],
                    &start.repeat(nc),
                    config.eig_iters,
                    config.eig_safety,
                )?;
                est.iter_mut().for_each(|v| *v = e);
            } else {
                for (c, slot) in est.iter_mut().enumerate() {
                    *slot = estimate_lambda_max(
                        |x, y| {
                            let mut xs = vec![vec![R::zero(); n]; nc];
                            xs[c].copy_from_slice(x);
                            let mut ys = vec![vec![R::zero(); n]; nc];
                            op.apply(lv, &xs, &mut ys)?;
                            let mut zs = ys.clone();
                            op.apply_inv_diag(lv, &ys, &mut zs);
                            y.copy_from_slice(&zs[c]);
                            Ok(())
                        },
                        &vec![R::one(); n],
                        &start,
                        config.eig_iters,
                        config.eig_safety,
                    )?;
                }
                if shared {
                    let m = est.iter().fold(R::zero(), |a, b| a.max(*b));
                    est.iter_mut().for_each(|v| *v = m);
                }
            }
            lambda_max.push(est);
        }
        let coarse = match config.coarse_solver {
            CoarseSolver::Direct => {
                op.dense(hierarchy.level(config.coarse_level)).iter().map(DenseMatrix::lu).collect::<Result<_>>()?
            }
            CoarseSolver::Chebyshev => Vec::new(),
        };
        Ok(Self { hierarchy, op, config, lambda_max, coarse, cycles: AtomicUsize::new(0) })
    }

    pub fn hierarchy(&self) -> &GridHierarchy<R> {
        &self.hierarchy
    }

    pub fn operator(&self) -> &O {
        &self.op
    }

    pub fn config(&self) -> &VCycleConfig<R> {
        &self.config
    }

    /// Frozen `lambda_max` estimates (safety factor included) per level.
    pub fn lambda_max(&self) -> &[Vec<R>] {
        &self.lambda_max
    }

    /// Number of V-cycles applied so far.
    pub fn cycles(&self) -> usize {
        self.cycles.load(Ordering::Relaxed)
    }

    /// One V-cycle from zero on the finest level.
    pub fn cycle(&self, b: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        let n = self.hierarchy.n();
        let nc = self.op.components();
        if b.len() != nc {
            return Err(SolverError::Dimension { expected: nc, found: b.len() });
        }
        for v in b {
            if v.len() != n {
                return Err(SolverError::Dimension { expected: n, found: v.len() });
            }
        }
        self.cycles.fetch_add(1, Ordering::Relaxed);
        self.level_cycle(self.hierarchy.max_level(), b)
    }

    fn smooth(&self, lv: &GridLevel<R>, x: &mut [Vec<R>], b: &[Vec<R>], degree: usize, range: R) -> Result<()> {
        let nc = x.len();
        let n = lv.n();
        let lam = &self.lambda_max[lv.level()];
        let ch: Vec<Chebyshev<R>> = lam.iter().map(|l| Chebyshev::new(*l, range)).collect();
        let mut r = vec![vec![R::zero(); n]; nc];
        let mut z = vec![vec![R::zero(); n]; nc];
        let mut d = vec![vec![R::zero(); n]; nc];
        let mut rho_old: Vec<R> = ch.iter().map(|c| c.delta / c.theta).collect();
        for k in 0..degree {
            self.op.apply(lv, x, &mut r)?;
            for c in 0..nc {
                for i in 0..n {
                    r[c][i] = b[c][i] - r[c][i];
                }
            }
            self.op.apply_inv_diag(lv, &r, &mut z);
            for c in 0..nc {
                let Chebyshev { theta, delta } = ch[c];
                if k == 0 {
                    for i in 0..n {
                        d[c][i] = z[c][i] / theta;
                    }
                } else {
                    let sigma = theta / delta;
                    let rho = R::one() / (sigma + sigma - rho_old[c]);
                    let c1 = rho * rho_old[c];
                    let c2 = (rho + rho) / delta;
                    for i in 0..n {
                        d[c][i] = c1 * d[c][i] + c2 * z[c][i];
                    }
                    rho_old[c] = rho;
                }
                for i in 0..n {
                    x[c][i] += d[c][i];
                }
            }
        }
        Ok(())
    }

    fn check(&self, level: usize, x: &[Vec<R>]) -> Result<()> {
        if x.iter().all(|v| v.iter().all(|e| Float::is_finite(*e))) {
            Ok(())
        } else {
            Err(SolverError::NumericalFailure { context: format!("multigrid level {level}") })
        }
    }

    fn level_cycle(&self, l: usize, b: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        let lv = self.hierarchy.level(l);
        let n = lv.n();
        let nc = b.len();
        // exact boundary values; interior starts from zero
        let mut x = vec![vec![R::zero(); n]; nc];
        self.op.apply_inv_diag(lv, b, &mut x);
        for v in x.iter_mut() {
            for (xi, bd) in v.iter_mut().zip(lv.boundary_mask()) {
                if !*bd {
                    *xi = R::zero();
                }
            }
        }

        if l == self.config.coarse_level {
            match self.config.coarse_solver {
                CoarseSolver::Direct => {
                    if self.coarse.len() == nc {
                        for c in 0..nc {
                            x[c] = self.coarse[c].solve(&b[c]);
                        }
                    } else {
                        let joined = self.coarse[0].solve(&b.concat());
                        x = joined.chunks(n).map(<[R]>::to_vec).collect();
                    }
                }
                CoarseSolver::Chebyshev => {
                    if lv.interior_count() > 0 {
                        self.smooth(lv, &mut x, b, self.config.coarse_degree, self.config.coarse_range)?;
                    }
                }
            }
            self.check(l, &x)?;
            return Ok(x);
        }

        let (deg, range) = (self.config.smoother_degree, self.config.smoothing_range);
        self.smooth(lv, &mut x, b, deg, range)?;

        let mut r = vec![vec![R::zero(); n]; nc];
        self.op.apply(lv, &x, &mut r)?;
        let coarse = self.hierarchy.level(l - 1);
        let mut bc = vec![vec![R::zero(); coarse.n()]; nc];
        for c in 0..nc {
            for i in 0..n {
                r[c][i] = b[c][i] - r[c][i];
            }
            lv.zero_boundary(&mut r[c]);
            self.hierarchy.restrict(l, &r[c], &mut bc[c]);
            coarse.zero_boundary(&mut bc[c]);
        }
        let xc = self.level_cycle(l - 1, &bc)?;
        let mut corr = vec![R::zero(); n];
        for c in 0..nc {
            self.hierarchy.prolongate(l, &xc[c], &mut corr);
            for i in 0..n {
                x[c][i] += corr[i];
            }
        }

        if self.config.pre_and_post {
            self.smooth(lv, &mut x, b, deg, range)?;
        }
        self.check(l, &x)?;
        Ok(x)
    }
}

/// V-cycle for one block `shift M + tau K`.
#[derive(Debug)]
pub struct ShiftedMultigrid<R: Real>(Multigrid<R, ShiftedBlocks<R>>);

impl<R: Real> ShiftedMultigrid<R> {
    pub fn new(hierarchy: Arc<GridHierarchy<R>>, shift: R, tau: R, config: VCycleConfig<R>) -> Result<Self> {
        if !(shift > R::zero()) {
            return Err(SolverError::Config { field: "shift", reason: format!("{shift} must be positive") });
        }
        let op = ShiftedBlocks::new(&hierarchy, &[shift], tau);
        Ok(Self(Multigrid::with_operator(hierarchy, op, config, false)?))
    }

    pub fn apply(&self, b: &[R], x: &mut [R]) -> Result<()> {
        let out = self.0.cycle(&[b.to_vec()])?;
        x.copy_from_slice(&out[0]);
        Ok(())
    }

    pub fn engine(&self) -> &Multigrid<R, ShiftedBlocks<R>> {
        &self.0
    }

    pub fn cycles(&self) -> usize {
        self.0.cycles()
    }
}

/// All blocks in one sweep per level, sharing the largest eigenvalue estimate.
#[derive(Debug)]
pub struct BatchedMultigrid<R: Real>(Multigrid<R, ShiftedBlocks<R>>);

impl<R: Real> BatchedMultigrid<R> {
    pub fn new(hierarchy: Arc<GridHierarchy<R>>, shifts: &[R], tau: R, config: VCycleConfig<R>) -> Result<Self> {
        if let Some(s) = shifts.iter().find(|s| !(**s > R::zero())) {
            return Err(SolverError::Config { field: "shift", reason: format!("{s} must be positive") });
        }
        let op = ShiftedBlocks::new(&hierarchy, shifts, tau);
        Ok(Self(Multigrid::with_operator(hierarchy, op, config, true)?))
    }

    pub fn apply(&self, b: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        self.0.cycle(b)
    }

    pub fn engine(&self) -> &Multigrid<R, ShiftedBlocks<R>> {
        &self.0
    }

    pub fn cycles(&self) -> usize {
        self.0.cycles()
    }
}

/// V-cycle on the coupled 2x2 real form of a complex shifted block.
#[derive(Debug)]
pub struct PairMultigrid<R: Real>(Multigrid<R, PairBlock<R>>);

impl<R: Real> PairMultigrid<R> {
    pub fn new(hierarchy: Arc<GridHierarchy<R>>, re: R, im: R, tau: R, config: VCycleConfig<R>) -> Result<Self> {
        if !(re > R::zero()) {
            return Err(SolverError::Config { field: "shift", reason: format!("real part {re} must be positive") });
        }
        let op = PairBlock::new(&hierarchy, re, im, tau);
        Ok(Self(Multigrid::with_operator(hierarchy, op, config, true)?))
    }

    pub fn apply(&self, b_re: &[R], b_im: &[R], x_re: &mut [R], x_im: &mut [R]) -> Result<()> {
        let out = self.0.cycle(&[b_re.to_vec(), b_im.to_vec()])?;
        x_re.copy_from_slice(&out[0]);
        x_im.copy_from_slice(&out[1]);
        Ok(())
    }

    pub fn engine(&self) -> &Multigrid<R, PairBlock<R>> {
        &self.0
    }

    pub fn cycles(&self) -> usize {
        self.0.cycles()
    }
}

/// One V-cycle for `(lambda M + tau K) x = b`.
pub fn v_cycle<R: Real>(
    hierarchy: Arc<GridHierarchy<R>>,
    lambda: R,
    tau: R,
    b: &[R],
    config: VCycleConfig<R>,
) -> Result<Vec<R>> {
    let mg = ShiftedMultigrid::new(hierarchy, lambda, tau, config)?;
    let mut x = vec![R::zero(); b.len()];
    mg.apply(b, &mut x)?;
    Ok(x)
}

/// One V-cycle for `[K', -M'; M', K'] (x_re, x_im) = (b_re, b_im)`.
pub fn v_cycle_2x2<R: Real>(
    hierarchy: Arc<GridHierarchy<R>>,
    k_shift: R,
    m_shift: R,
    tau: R,
    b_pair: (&[R], &[R]),
    config: VCycleConfig<R>,
) -> Result<(Vec<R>, Vec<R>)> {
    let mg = PairMultigrid::new(hierarchy, k_shift, m_shift, tau, config)?;
    let n = b_pair.0.len();
    let (mut xr, mut xi) = (vec![R::zero(); n], vec![R::zero(); n]);
    mg.apply(b_pair.0, b_pair.1, &mut xr, &mut xi)?;
    Ok((xr, xi))
}
