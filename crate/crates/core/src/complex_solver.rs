//! Direct diagonalization of the stage system over the complex numbers.
//!
//! With `A^{-1} = S Λ S^{-1}` the stage system splits into blocks
//! `(λ_i M + τ K) y_i = (S^{-1} rhs)_i`. Conjugate eigenvalues give conjugate
//! solutions, so only one representative per pair is solved (complex GMRES)
//! and `k = Re(Σ S̃_p y_p)` with `S̃_p = 2 S_{:,p}` for a pair. A lone real
//! eigenvalue (odd `Q`) is a real block solved by real GMRES.
//!
//! Per block, the preconditioner is either PRESB on the real two-by-two form
//!
//! ```text
//! [K'  -M' ]          [K'  -M'    ]
//! [M'   K' ]   by     [M'   K'+2M']
//! ```
//!
//! with `K' = Re(λ) M + τ K`, `M' = Im(λ) M` (two sequential `(K'+M')`
//! V-cycles per application), or one coupled V-cycle on the two-by-two form.
//! Both act on the real form and are only real-linear, so the complex outer
//! iteration is flexible GMRES.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex;

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::irk_solver::{assemble_stage_rhs, stage_update, Mode};
use crate::krylov::{fgmres, gmres, GmresConfig};
use crate::problem::{BlockSolver, HeatDiscretization, LinearProblem, PairBlockSolver};
use crate::scalar::{axpy, norm_inf, Real};
use crate::simrt::{CounterSnapshot, RankGrid, Runtime, Topology};
use crate::tableau::{radau_iia, spectral_complex, ButcherTableau, ComplexSpectralFactors};
use crate::tensor_ops::{
    dense_combine, dense_combine_paired, rotate_combine_paired, scale_blocks, DistributedBlocks, PairedMatrix,
    StageBlockVector,
};

/// Largest tolerated imaginary part of the recombined stage vector.
pub const IMAG_RESIDUE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Path {
    /// Real arithmetic with the triangular preconditioner (see `irk_solver`).
    #[default]
    RealLu,
    ComplexPresb,
    ComplexGmg,
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Path::RealLu => "real-lu",
            Path::ComplexPresb => "complex-presb",
            Path::ComplexGmg => "complex-gmg",
        })
    }
}

impl FromStr for Path {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real-lu" => Ok(Path::RealLu),
            "complex-presb" => Ok(Path::ComplexPresb),
            "complex-gmg" => Ok(Path::ComplexGmg),
            other => Err(SolverError::Config { field: "path", reason: format!("unknown path `{other}`") }),
        }
    }
}

/// `λ M + τ K` for one eigenvalue, viewed as `K' + i M'`.
pub struct ComplexBlock<'a, R, P: ?Sized> {
    pub re_lambda: R,
    pub im_lambda: R,
    pub tau: R,
    problem: &'a P,
}

impl<'a, R: Real, P: LinearProblem<R> + ?Sized> ComplexBlock<'a, R, P> {
    pub fn new(problem: &'a P, re_lambda: R, im_lambda: R, tau: R) -> Self {
        Self { re_lambda, im_lambda, tau, problem }
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// `y = K' x`.
    pub fn k_prime(&self, x: &[R], y: &mut [R]) -> Result<()> {
        let mut kx = vec![R::zero(); x.len()];
        self.problem.apply_mass(x, y)?;
        self.problem.apply_stiffness(x, &mut kx)?;
        for (yi, ki) in y.iter_mut().zip(&kx) {
            *yi = self.re_lambda * *yi + self.tau * *ki;
        }
        Ok(())
    }

    /// `y = M' x`.
    pub fn m_prime(&self, x: &[R], y: &mut [R]) -> Result<()> {
        self.problem.apply_mass(x, y)?;
        y.iter_mut().for_each(|v| *v *= self.im_lambda);
        Ok(())
    }

    fn check(&self, v: &[R]) -> Result<()> {
        if v.len() != self.n() {
            return Err(SolverError::Dimension { expected: self.n(), found: v.len() });
        }
        Ok(())
    }

    /// `[K' -M'; M' K'] (x_re, x_im)`.
    pub fn twobytwo_apply(&self, x_re: &[R], x_im: &[R], y_re: &mut [R], y_im: &mut [R]) -> Result<()> {
        for v in [x_re, x_im, &*y_re, &*y_im] {
            self.check(v)?;
        }
        let n = self.n();
        let mut t = vec![R::zero(); n];
        self.k_prime(x_re, y_re)?;
        self.m_prime(x_im, &mut t)?;
        axpy(-R::one(), &t, y_re);
        self.k_prime(x_im, y_im)?;
        self.m_prime(x_re, &mut t)?;
        axpy(R::one(), &t, y_im);
        Ok(())
    }

    /// `(λ M + τ K) x` in complex arithmetic.
    pub fn apply_complex(&self, x: &[Complex<R>], y: &mut [Complex<R>]) -> Result<()> {
        let (x_re, x_im) = split(x);
        let n = x.len();
        let (mut y_re, mut y_im) = (vec![R::zero(); n], vec![R::zero(); n]);
        self.twobytwo_apply(&x_re, &x_im, &mut y_re, &mut y_im)?;
        join(&y_re, &y_im, y);
        Ok(())
    }

    /// PRESB: `z = P^{-1} r` with `solve_h` approximating `(K' + M')^{-1}`.
    /// The two inner solves are sequential.
    pub fn presb_apply(
        &self,
        mut solve_h: impl FnMut(&[R], &mut [R]) -> Result<()>,
        r_re: &[R],
        r_im: &[R],
        z_re: &mut [R],
        z_im: &mut [R],
    ) -> Result<()> {
        for v in [r_re, r_im, &*z_re, &*z_im] {
            self.check(v)?;
        }
        let n = self.n();
        let s1: Vec<R> = r_re.iter().zip(r_im).map(|(a, b)| *a + *b).collect();
        let mut a = vec![R::zero(); n];
        solve_h(&s1, &mut a)?;
        let mut s2 = vec![R::zero(); n];
        self.m_prime(&a, &mut s2)?;
        for (s, r) in s2.iter_mut().zip(r_im) {
            *s = *r - *s;
        }
        solve_h(&s2, z_im)?;
        for i in 0..n {
            z_re[i] = a[i] - z_im[i];
        }
        Ok(())
    }
}

/// Assembled PRESB matrix `[K', -M'; M', K'+2M']`.
pub fn presb_assembled<R: Real>(k: &DenseMatrix<R>, m: &DenseMatrix<R>) -> DenseMatrix<R> {
    let n = k.rows();
    DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => k[(i, j)],
        (true, false) => -m[(i, j - n)],
        (false, true) => m[(i - n, j)],
        (false, false) => k[(i - n, j - n)] + m[(i - n, j - n)] + m[(i - n, j - n)],
    })
}

/// The three factors `[I, -I; 0, I] [H, 0; M', H] [I, I; 0, I]` whose
/// product is the PRESB matrix, `H = K' + M'`.
pub fn presb_factors<R: Real>(k: &DenseMatrix<R>, m: &DenseMatrix<R>) -> [DenseMatrix<R>; 3] {
    let n = k.rows();
    let eye = |i: usize, j: usize| if i == j { R::one() } else { R::zero() };
    let left = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, false) => -eye(i, j - n),
        (false, true) => R::zero(),
        (true, true) => eye(i, j),
        (false, false) => eye(i - n, j - n),
    });
    let middle = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => k[(i, j)] + m[(i, j)],
        (true, false) => R::zero(),
        (false, true) => m[(i - n, j)],
        (false, false) => k[(i - n, j - n)] + m[(i - n, j - n)],
    });
    let right = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, false) => eye(i, j - n),
        (false, true) => R::zero(),
        (true, true) => eye(i, j),
        (false, false) => eye(i - n, j - n),
    });
    [left, middle, right]
}

fn split<R: Real>(x: &[Complex<R>]) -> (Vec<R>, Vec<R>) {
    (x.iter().map(|z| z.re).collect(), x.iter().map(|z| z.im).collect())
}

fn join<R: Real>(re: &[R], im: &[R], out: &mut [Complex<R>]) {
    for ((o, r), i) in out.iter_mut().zip(re).zip(im) {
        *o = Complex::new(*r, *i);
    }
}

enum PairPreconditioner<R> {
    Presb(Box<dyn BlockSolver<R>>),
    Gmg(Box<dyn PairBlockSolver<R>>),
    Real(Box<dyn BlockSolver<R>>),
}

#[derive(Debug, Clone, Copy)]
pub struct ComplexConfig<R> {
    pub path: Path,
    /// `Sequential` or `StageParallel` (one rank column per block).
    pub mode: Mode,
    pub partitions: usize,
    pub topology: Topology,
    pub gmres: GmresConfig<R>,
}

impl<R: Real> Default for ComplexConfig<R> {
    fn default() -> Self {
        Self {
            path: Path::ComplexPresb,
            mode: Mode::Sequential,
            partitions: 1,
            topology: Topology::RowMajor,
            gmres: GmresConfig::default(),
        }
    }
}

/// Outcome of the independent block solves of one stage system.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats<R> {
    pub iterations: Vec<usize>,
    pub vcycles: Vec<usize>,
    /// `||Im(S y)||_inf` over the full conjugate-symmetric recombination.
    pub imag_residue: R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStepReport<R> {
    pub step: usize,
    pub time: R,
    pub pair_iterations: Vec<usize>,
    pub pair_vcycles: Vec<usize>,
    pub imag_residue: R,
    pub update_mismatch: R,
    pub counters: Option<CounterSnapshot>,
    pub l2_error: Option<R>,
}

impl<R> PairStepReport<R> {
    pub fn min_iterations(&self) -> usize {
        self.pair_iterations.iter().copied().min().unwrap_or(0)
    }

    pub fn max_iterations(&self) -> usize {
        self.pair_iterations.iter().copied().max().unwrap_or(0)
    }

    /// V-cycles on the busiest block.
    pub fn max_vcycles(&self) -> usize {
        self.pair_vcycles.iter().copied().max().unwrap_or(0)
    }

    pub fn total_vcycles(&self) -> usize {
        self.pair_vcycles.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSolveReport<R> {
    pub stages: usize,
    pub path: Path,
    pub mode: Mode,
    pub steps: Vec<PairStepReport<R>>,
    pub counters: Option<CounterSnapshot>,
}

impl<R: Real> PairSolveReport<R> {
    fn mean(&self, f: impl Fn(&PairStepReport<R>) -> usize) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| f(s) as f64).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_min_iterations(&self) -> f64 {
        self.mean(PairStepReport::min_iterations)
    }

    pub fn mean_max_iterations(&self) -> f64 {
        self.mean(PairStepReport::max_iterations)
    }

    pub fn mean_max_vcycles(&self) -> f64 {
        self.mean(PairStepReport::max_vcycles)
    }

    pub fn mean_total_vcycles(&self) -> f64 {
        self.mean(PairStepReport::total_vcycles)
    }

    pub fn final_error(&self) -> Option<R> {
        self.steps.last().and_then(|s| s.l2_error)
    }
}

/// Stage system solved block by block in the complex eigenbasis.
pub struct DirectStageSolver<R: Real, P> {
    problem: P,
    tableau: ButcherTableau<R>,
    spectral: ComplexSpectralFactors<R>,
    to_pairs: PairedMatrix<R>,
    from_pairs: PairedMatrix<R>,
    tau: R,
    config: ComplexConfig<R>,
    blocks: Vec<PairPreconditioner<R>>,
    runtime: Option<RefCell<Runtime<R>>>,
}

impl<R: Real, P> fmt::Debug for DirectStageSolver<R, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirectStageSolver")
            .field("stages", &self.tableau.stages)
            .field("pairs", &self.spectral.pairs)
            .field("tau", &self.tau)
            .field("path", &self.config.path)
            .field("mode", &self.config.mode)
            .finish()
    }
}

impl<R: Real, P: LinearProblem<R>> DirectStageSolver<R, P> {
    pub fn new(problem: P, stages: usize, tau: R, config: ComplexConfig<R>) -> Result<Self> {
        if !(tau > R::zero() && num_traits::Float::is_finite(tau)) {
            return Err(SolverError::Config { field: "tau", reason: format!("{tau:?} is not a positive step") });
        }
        if config.path == Path::RealLu {
            return Err(SolverError::Config { field: "path", reason: "real-lu is served by StageSystem".into() });
        }
        if config.mode == Mode::Batched {
            return Err(SolverError::Config { field: "mode", reason: "batched mode is real-path only".into() });
        }
        if config.partitions == 0 {
            return Err(SolverError::Config { field: "partitions", reason: "need at least one partition".into() });
        }
        let tableau = radau_iia::<R>(stages)?;
        let spectral = spectral_complex(&tableau.a_inv)?;
        let np = spectral.pairs.len();
        let two = R::lit(2.0);
        let sinv_rows = DenseMatrix::from_fn(np, stages, |p, j| spectral.s_inv[(spectral.pairs[p].index, j)]);
        let s_cols = DenseMatrix::from_fn(stages, np, |i, p| {
            let pair = &spectral.pairs[p];
            let v = spectral.s[(i, pair.index)];
            if pair.partner.is_some() {
                v * two
            } else {
                v
            }
        });
        let to_pairs = PairedMatrix::real_to_complex(&sinv_rows)?;
        let from_pairs = PairedMatrix::complex_to_real(&s_cols)?;
        let mut blocks = Vec::with_capacity(np);
        for pair in &spectral.pairs {
            blocks.push(match (pair.partner, config.path) {
                (None, _) => PairPreconditioner::Real(problem.block_solver(pair.re, tau)?),
                (Some(_), Path::ComplexGmg) => PairPreconditioner::Gmg(problem.pair_solver(pair.re, pair.im, tau)?),
                (Some(_), _) => PairPreconditioner::Presb(problem.block_solver(pair.re + pair.im, tau)?),
            });
        }
        let runtime = match config.mode {
            Mode::StageParallel => {
                let grid = RankGrid::new(np, config.partitions, config.topology)?;
                Some(RefCell::new(Runtime::new(grid)))
            }
            _ => None,
        };
        Ok(Self { problem, tableau, spectral, to_pairs, from_pairs, tau, config, blocks, runtime })
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn tableau(&self) -> &ButcherTableau<R> {
        &self.tableau
    }

    pub fn spectral(&self) -> &ComplexSpectralFactors<R> {
        &self.spectral
    }

    pub fn stages(&self) -> usize {
        self.tableau.stages
    }

    /// Number of independently solvable blocks, `ceil(Q / 2)`.
    pub fn pairs(&self) -> usize {
        self.spectral.pairs.len()
    }

    pub fn counters(&self) -> Option<CounterSnapshot> {
        self.runtime.as_ref().map(|rt| rt.borrow().counters())
    }

    fn combine_paired(&self, m: &PairedMatrix<R>, u: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        let Some(rt) = &self.runtime else {
            return dense_combine_paired(m, u);
        };
        let dist = DistributedBlocks::scatter(u, 2, self.config.partitions);
        Ok(rotate_combine_paired(m, &dist, &mut rt.borrow_mut())?.gather())
    }

    fn full_operator(&self, k: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        let mk = scale_blocks(|x, y| self.problem.apply_mass_full(x, y), k)?;
        let mut v = dense_combine(&self.tableau.a_inv, &mk)?;
        let kk = scale_blocks(|x, y| self.problem.apply_stiffness_full(x, y), k)?;
        v.axpy(self.tau, &kk);
        Ok(v)
    }

    /// One block solve; returns `y`, GMRES iterations and V-cycles.
    fn solve_block(&self, p: usize, b_re: &[R], b_im: &[R]) -> Result<(Vec<R>, Vec<R>, usize, usize)> {
        let pair = self.spectral.pairs[p];
        let block = ComplexBlock::new(&self.problem, pair.re, pair.im, self.tau);
        let n = b_re.len();
        let cycles = Cell::new(0usize);
        let fail = |reason: String| SolverError::BlockSolve { pair: p, reason };
        match &self.blocks[p] {
            PairPreconditioner::Real(solver) => {
                let (y, rep) = gmres(
                    |x: &[R], y: &mut [R]| block.k_prime(x, y),
                    |x: &[R], y: &mut [R]| {
                        cycles.set(cycles.get() + 1);
                        solver.solve(x, y)
                    },
                    b_re,
                    &self.config.gmres,
                )
                .map_err(|e| fail(e.to_string()))?;
                if !rep.converged {
                    return Err(fail(format!("GMRES stopped at relative residual {:?}", rep.reduction_achieved)));
                }
                Ok((y, vec![R::zero(); n], rep.iterations, cycles.get()))
            }
            pre => {
                let rhs: Vec<Complex<R>> = b_re.iter().zip(b_im).map(|(r, i)| Complex::new(*r, *i)).collect();
                let pinv = |x: &[Complex<R>], y: &mut [Complex<R>]| {
                    let (r_re, r_im) = split(x);
                    let (mut z_re, mut z_im) = (vec![R::zero(); n], vec![R::zero(); n]);
                    match pre {
                        PairPreconditioner::Presb(h) => block.presb_apply(
                            |b, x| {
                                cycles.set(cycles.get() + 1);
                                h.solve(b, x)
                            },
                            &r_re,
                            &r_im,
                            &mut z_re,
                            &mut z_im,
                        )?,
                        PairPreconditioner::Gmg(s) => {
                            cycles.set(cycles.get() + 1);
                            s.solve(&r_re, &r_im, &mut z_re, &mut z_im)?
                        }
                        PairPreconditioner::Real(_) => unreachable!("handled above"),
                    }
                    join(&z_re, &z_im, y);
                    Ok(())
                };
                let op = |x: &[Complex<R>], y: &mut [Complex<R>]| block.apply_complex(x, y);
                let (y, rep) = fgmres(op, pinv, &rhs, &self.config.gmres).map_err(|e| fail(e.to_string()))?;
                if !rep.converged {
                    return Err(fail(format!("GMRES stopped at relative residual {:?}", rep.reduction_achieved)));
                }
                let (y_re, y_im) = split(&y);
                Ok((y_re, y_im, rep.iterations, cycles.get()))
            }
        }
    }

    /// Solve `(A^{-1} ⊗ M + τ I ⊗ K) k = rhs` block by block.
    pub fn solve_stages_direct(&self, rhs: &StageBlockVector<R>) -> Result<(StageBlockVector<R>, PairStats<R>)> {
        let q = self.stages();
        if rhs.stages() != q || rhs.block_len() != self.problem.n() {
            return Err(SolverError::Dimension { expected: q, found: rhs.stages() });
        }
        let n = rhs.block_len();
        let np = self.pairs();
        let w = self.combine_paired(&self.to_pairs, rhs)?;
        let mut z = StageBlockVector::zeros(2 * np, n);
        let mut iterations = Vec::with_capacity(np);
        let mut vcycles = Vec::with_capacity(np);
        let mut residue = R::zero();
        for p in 0..np {
            let (y_re, y_im, it, cyc) = if self.spectral.pairs[p].partner.is_none() {
                residue = residue.max(norm_inf(w.block(2 * p + 1)));
                self.solve_block(p, w.block(2 * p), &vec![R::zero(); n])?
            } else {
                self.solve_block(p, w.block(2 * p), w.block(2 * p + 1))?
            };
            if let Some(rt) = &self.runtime {
                let mut rt = rt.borrow_mut();
                for rank in rt.grid().column_group(p) {
                    rt.record_vcycles(rank, cyc as u64);
                }
            }
            z.block_mut(2 * p).copy_from_slice(&y_re);
            z.block_mut(2 * p + 1).copy_from_slice(&y_im);
            iterations.push(it);
            vcycles.push(cyc);
        }
        let k = self.combine_paired(&self.from_pairs, &z)?;
        let k = StageBlockVector::new(k.into_blocks().into_iter().take(q).collect())?;
        residue = residue.max(self.imaginary_residue(&z)?);
        if !(residue < R::lit(IMAG_RESIDUE)) {
            return Err(SolverError::NumericalFailure {
                context: format!("imaginary part {residue:?} left after the eigenbasis back-transform"),
            });
        }
        Ok((k, PairStats { iterations, vcycles, imag_residue: residue }))
    }

    /// `||Im(S y)||_inf` with every eigenvector column, partners taking the
    /// conjugate of their representative's solution.
    fn imaginary_residue(&self, z: &StageBlockVector<R>) -> Result<R> {
        let q = self.stages();
        let n = z.block_len();
        let mut worst = R::zero();
        let mut ys: Vec<Option<(usize, bool)>> = vec![None; q];
        for (p, pair) in self.spectral.pairs.iter().enumerate() {
            ys[pair.index] = Some((p, false));
            if let Some(c) = pair.partner {
                ys[c] = Some((p, true));
            }
        }
        let mut im = vec![R::zero(); n];
        for j in 0..q {
            im.iter_mut().for_each(|v| *v = R::zero());
            for (i, y) in ys.iter().enumerate() {
                let (p, conj) = y.ok_or(SolverError::SpectralFailure { iterations: 0 })?;
                let s = self.spectral.s[(j, i)];
                let (yr, yi) = (z.block(2 * p), z.block(2 * p + 1));
                let sign = if conj { -R::one() } else { R::one() };
                for t in 0..n {
                    im[t] += s.re * yi[t] * sign + s.im * yr[t];
                }
            }
            worst = worst.max(norm_inf(&im));
        }
        Ok(worst)
    }

    pub fn step(&self, index: usize, t: R, u_n: &[R]) -> Result<(Vec<R>, PairStepReport<R>)> {
        let counters_before = self.counters();
        let stage = assemble_stage_rhs(
            &self.problem,
            &self.tableau,
            self.tau,
            t,
            u_n,
            |d, u| dense_combine(d, u),
            |k| self.full_operator(k),
        )?;
        let (mut k, stats) = self.solve_stages_direct(&stage.rhs)?;
        if let Some(kb) = &stage.lifted {
            k.axpy(R::one(), kb);
        }
        let (u, mismatch) = stage_update(&self.tableau, self.tau, u_n, &k, index)?;
        let counters = match (self.counters(), counters_before) {
            (Some(now), Some(before)) => Some(now.delta(&before)),
            _ => None,
        };
        let report = PairStepReport {
            step: index,
            time: t + self.tau,
            pair_iterations: stats.iterations,
            pair_vcycles: stats.vcycles,
            imag_residue: stats.imag_residue,
            update_mismatch: mismatch,
            counters,
            l2_error: None,
        };
        Ok((u, report))
    }

    pub fn integrate(
        &self,
        u0: Vec<R>,
        t0: R,
        steps: usize,
        mut error: impl FnMut(&[R], R) -> Result<Option<R>>,
    ) -> Result<(Vec<R>, PairSolveReport<R>)> {
        let counters_before = self.counters();
        let mut u = u0;
        let mut reports = Vec::with_capacity(steps);
        for s in 0..steps {
            let t = t0 + R::of_usize(s) * self.tau;
            let (next, mut report) = self.step(s, t, &u)?;
            report.l2_error = error(&next, report.time)?;
            u = next;
            reports.push(report);
        }
        let counters = match (self.counters(), counters_before) {
            (Some(now), Some(before)) => Some(now.delta(&before)),
            _ => None,
        };
        let report = PairSolveReport {
            stages: self.stages(),
            path: self.config.path,
            mode: self.config.mode,
            steps: reports,
            counters,
        };
        Ok((u, report))
    }
}

impl<R: Real> DirectStageSolver<R, HeatDiscretization<R>> {
    pub fn solve_manufactured(&self, t0: R, steps: usize) -> Result<(Vec<R>, PairSolveReport<R>)> {
        let p = &self.problem;
        self.integrate(p.initial(t0), t0, steps, |u, t| p.l2_error(u, t).map(Some))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_fem::GridHierarchy;
    use crate::irk_solver::{StageSystem, StageSystemConfig};
    use crate::multigrid::VCycleConfig;
    use crate::problem::{assemble_shifted, ScalarOde};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn heat(dim: usize, level: usize) -> HeatDiscretization<f64> {
        HeatDiscretization::new(Arc::new(GridHierarchy::build(dim, level).unwrap()), VCycleConfig::default()).unwrap()
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn twobytwo_matches_complex_arithmetic() {
        let p = heat(1, 3);
        let n = p.n();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xr, xi) = (random(n, &mut rng), random(n, &mut rng));
        let block = ComplexBlock::new(&p, 2.5, 1.7, 0.1);
        let (mut yr, mut yi) = (vec![0.0; n], vec![0.0; n]);
        block.twobytwo_apply(&xr, &xi, &mut yr, &mut yi).unwrap();
        let m = assemble_shifted(&p, 1.0, 0.0);
        let k = assemble_shifted(&p, 0.0, 1.0);
        let lambda = Complex::new(2.5, 1.7);
        for i in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for j in 0..n {
                acc += (lambda * m[(i, j)] + 0.1 * k[(i, j)]) * Complex::new(xr[j], xi[j]);
            }
            assert!((acc.re - yr[i]).abs() < 1e-14 * (1.0 + acc.norm()));
            assert!((acc.im - yi[i]).abs() < 1e-14 * (1.0 + acc.norm()));
        }
    }

    #[test]
    fn real_eigenvalue_block_is_diagonal() {
        let p = heat(1, 3);
        let n = p.n();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xr, xi) = (random(n, &mut rng), random(n, &mut rng));
        let block = ComplexBlock::new(&p, 3.0, 0.0, 0.1);
        let (mut yr, mut yi) = (vec![0.0; n], vec![0.0; n]);
        block.twobytwo_apply(&xr, &xi, &mut yr, &mut yi).unwrap();
        let (mut kr, mut ki) = (vec![0.0; n], vec![0.0; n]);
        block.k_prime(&xr, &mut kr).unwrap();
        block.k_prime(&xi, &mut ki).unwrap();
        assert_eq!(yr, kr);
        assert_eq!(yi, ki);
        block.twobytwo_apply(&vec![0.0; n], &vec![0.0; n], &mut yr, &mut yi).unwrap();
        assert!(yr.iter().chain(&yi).all(|v| *v == 0.0));
    }

    #[test]
    fn presb_factorization_and_exact_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = heat(1, 4);
        let n = p.n();
        let (re, im, tau) = (2.7, 1.3, 0.1);
        let k = DenseMatrix::from_fn(n, n, |i, j| re * assemble_shifted(&p, 1.0, 0.0)[(i, j)]);
        let k = k.add(&assemble_shifted(&p, 0.0, tau));
        let m = assemble_shifted(&p, im, 0.0);
        let assembled = presb_assembled(&k, &m);
        let [l, mid, r] = presb_factors(&k, &m);
        assert!(l.matmul(&mid).matmul(&r).max_abs_diff(&assembled) < 1e-14);

        let block = ComplexBlock::new(&p, re, im, tau);
        let h = assemble_shifted(&p, re + im, tau).lu().unwrap();
        let (rr, ri) = (random(n, &mut rng), random(n, &mut rng));
        let (mut zr, mut zi) = (vec![0.0; n], vec![0.0; n]);
        block
            .presb_apply(
                |b, x| {
                    x.copy_from_slice(&h.solve(b));
                    Ok(())
                },
                &rr,
                &ri,
                &mut zr,
                &mut zi,
            )
            .unwrap();
        let back = assembled.matvec(&[zr, zi].concat());
        let r = [rr, ri].concat();
        assert!(back.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn presb_without_coupling_is_block_diagonal() {
        let p = heat(1, 3);
        let n = p.n();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = ComplexBlock::new(&p, 2.0, 0.0, 0.1);
        let h = assemble_shifted(&p, 2.0, 0.1).lu().unwrap();
        let (rr, ri) = (random(n, &mut rng), random(n, &mut rng));
        let (mut zr, mut zi) = (vec![0.0; n], vec![0.0; n]);
        block
            .presb_apply(
                |b, x| {
                    x.copy_from_slice(&h.solve(b));
                    Ok(())
                },
                &rr,
                &ri,
                &mut zr,
                &mut zi,
            )
            .unwrap();
        assert!(crate::scalar::rel_diff_inf(&zr, &h.solve(&rr)) < 1e-13);
        assert!(crate::scalar::rel_diff_inf(&zi, &h.solve(&ri)) < 1e-13);
    }

    #[test]
    fn presb_gmres_on_small_grid() {
        let p = heat(1, 4);
        let n = p.n();
        assert_eq!(n, 17);
        let eig = spectral_complex(&radau_iia::<f64>(2).unwrap().a_inv).unwrap();
        let pair = eig.pairs[0];
        let block = ComplexBlock::new(&p, pair.re, pair.im, 0.1);
        let h = p.block_solver(pair.re + pair.im, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.gen(), rng.gen())).collect();
        b[0] = Complex::new(0.0, 0.0);
        b[n - 1] = Complex::new(0.0, 0.0);
        let cfg = GmresConfig { rel_tol: 1e-10, max_iter: 50 };
        let (_, rep) = fgmres(
            |x: &[Complex<f64>], y: &mut [Complex<f64>]| block.apply_complex(x, y),
            |x: &[Complex<f64>], y: &mut [Complex<f64>]| {
                let (rr, ri) = split(x);
                let (mut zr, mut zi) = (vec![0.0; n], vec![0.0; n]);
                block.presb_apply(|b, x| h.solve(b, x), &rr, &ri, &mut zr, &mut zi)?;
                join(&zr, &zi, y);
                Ok(())
            },
            &b,
            &cfg,
        )
        .unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 12, "{}", rep.iterations);
    }

    fn scalar_direct(q: usize) -> DirectStageSolver<f64, ScalarOde<f64>> {
        DirectStageSolver::new(ScalarOde::decay(), q, 0.1, ComplexConfig::default()).unwrap()
    }

    #[test]
    fn single_stage_matches_real_path() {
        let d = scalar_direct(1);
        assert_eq!(d.pairs(), 1);
        let (u, _) = d.step(0, 0.0, &[1.0]).unwrap();
        assert!((u[0] - 1.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn scalar_stage_vector_matches_dense_solve() {
        for q in 2..=7 {
            let d = scalar_direct(q);
            assert_eq!(d.pairs(), q.div_ceil(2));
            let rhs = StageBlockVector::new((0..q).map(|i| vec![1.0 + i as f64]).collect()).unwrap();
            let (k, stats) = d.solve_stages_direct(&rhs).unwrap();
            let mut op = d.tableau().a_inv.clone();
            for i in 0..q {
                op[(i, i)] += 0.1;
            }
            let expect = op.lu().unwrap().solve(&rhs.to_flat());
            assert!(crate::scalar::rel_diff_inf(&k.to_flat(), &expect) < 1e-10, "Q={q}");
            assert!(stats.imag_residue < 1e-9);
        }
    }

    #[test]
    fn paths_agree_on_heat_problem() {
        let tau = 0.1;
        let real = StageSystem::new(heat(2, 4), 3, tau, StageSystemConfig::default()).unwrap();
        let (ur, _) = real.solve_manufactured(0.0, 3).unwrap();
        for path in [Path::ComplexPresb, Path::ComplexGmg] {
            for mode in [Mode::Sequential, Mode::StageParallel] {
                let cfg = ComplexConfig { path, mode, partitions: 2, ..Default::default() };
                let d = DirectStageSolver::new(heat(2, 4), 3, tau, cfg).unwrap();
                let (uc, rep) = d.solve_manufactured(0.0, 3).unwrap();
                assert!(crate::scalar::rel_diff_inf(&uc, &ur) < 1e-8, "{path} {mode}");
                for s in &rep.steps {
                    assert_eq!(s.pair_iterations.len(), 2);
                    if path == Path::ComplexPresb {
                        assert_eq!(s.pair_vcycles[0], 2 * s.pair_iterations[0]);
                    } else {
                        assert_eq!(s.pair_vcycles[0], s.pair_iterations[0]);
                    }
                    assert_eq!(s.pair_vcycles[1], s.pair_iterations[1] + 1);
                }
                if mode == Mode::StageParallel {
                    let c = rep.counters.unwrap();
                    // (P - 1) rounds on P * B ranks, two basis changes per step
                    assert_eq!(c.sum.shift_rounds, 2 * 2 * 2 * 3);
                }
            }
        }
    }

    #[test]
    fn rejects_real_path_and_batched_mode() {
        let cfg = ComplexConfig { path: Path::RealLu, ..Default::default() };
        assert!(DirectStageSolver::new(ScalarOde::<f64>::decay(), 2, 0.1, cfg).is_err());
        let cfg = ComplexConfig { mode: Mode::Batched, ..Default::default() };
        assert!(DirectStageSolver::new(ScalarOde::<f64>::decay(), 2, 0.1, cfg).is_err());
        assert_eq!("complex-gmg".parse::<Path>().unwrap(), Path::ComplexGmg);
        assert!("complex".parse::<Path>().is_err());
    }
}
