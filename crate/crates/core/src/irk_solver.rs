//! Real-arithmetic Radau IIA stepper for `M u' + K u = g`.
//!
//! The unknowns are the stage derivatives `k_i`. Every step solves
//!
//! ```text
//! (A^{-1} ⊗ M + τ I ⊗ K) k = (A^{-1} ⊗ I)(g(t_n + c_i τ) - K u_n)
//! ```
//!
//! by GMRES, right-preconditioned with `A^{-1}` replaced by its lower Crout
//! factor `L = S Λ S^{-1}`. After the basis change the preconditioner splits
//! into `Q` independent blocks `λ_i M + τ K`, each approximated by one V-cycle.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::krylov::{gmres, GmresConfig};
use crate::problem::{BatchedBlockSolver, BlockSolver, HeatDiscretization, LinearProblem};
use crate::scalar::{axpy, norm_inf, Real};
use crate::simrt::{CounterSnapshot, RankGrid, Runtime, Topology};
use crate::tableau::{crout_lu, radau_iia, spectral_real, ButcherTableau, RealSpectralFactors, TriangularFactors};
use crate::tensor_ops::{
    dense_combine, map_blocks_distributed, rotate_combine, scale_blocks, scale_blocks_distributed,
    sharedmem_combine, DistributedBlocks, StageBlockVector,
};

/// Largest tolerated gap between the `b`-weighted and stiffly accurate updates.
pub const UPDATE_CONSISTENCY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Sequential,
    StageParallel,
    Batched,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::StageParallel => "stage_parallel",
            Mode::Batched => "batched",
        })
    }
}

impl FromStr for Mode {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "stage_parallel" | "stage-parallel" => Ok(Mode::StageParallel),
            "batched" => Ok(Mode::Batched),
            other => Err(SolverError::Config { field: "mode", reason: format!("unknown mode `{other}`") }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StageSystemConfig<R> {
    pub mode: Mode,
    /// Spatial partitions `B` per stage (stage-parallel mode).
    pub partitions: usize,
    pub topology: Topology,
    pub gmres: GmresConfig<R>,
}

impl<R: Real> Default for StageSystemConfig<R> {
    fn default() -> Self {
        Self { mode: Mode::Sequential, partitions: 1, topology: Topology::RowMajor, gmres: GmresConfig::default() }
    }
}

enum Blocks<R> {
    PerStage(Vec<Box<dyn BlockSolver<R>>>),
    Batched(Box<dyn BatchedBlockSolver<R>>),
}

/// Right-hand side of the stage system plus the prescribed boundary part of
/// `k`, when the problem has time-dependent Dirichlet data.
#[derive(Debug, Clone)]
pub struct StageRhs<R> {
    pub rhs: StageBlockVector<R>,
    pub lifted: Option<StageBlockVector<R>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<R> {
    pub step: usize,
    /// Time at the end of the step.
    pub time: R,
    pub outer_iterations: usize,
    pub residual_history: Vec<R>,
    pub reduction: R,
    /// Block solves (V-cycles) spent on each stage during this step.
    pub stage_vcycles: Vec<usize>,
    /// Counter deltas of this step (stage-parallel mode only).
    pub counters: Option<CounterSnapshot>,
    pub update_mismatch: R,
    pub l2_error: Option<R>,
}

impl<R> StepReport<R> {
    /// V-cycles a single process group would run back to back.
    pub fn sequential_vcycles(&self) -> usize {
        self.stage_vcycles.iter().sum()
    }

    /// V-cycles on the busiest stage group.
    pub fn group_vcycles(&self) -> usize {
        self.stage_vcycles.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<R> {
    pub stages: usize,
    pub mode: Mode,
    pub steps: Vec<StepReport<R>>,
    /// Counters accumulated over the whole run (stage-parallel mode only).
    pub counters: Option<CounterSnapshot>,
}

impl<R: Real> SolveReport<R> {
    fn mean(&self, f: impl Fn(&StepReport<R>) -> usize) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| f(s) as f64).sum::<f64>() / self.steps.len() as f64
    }

    pub fn mean_outer_iterations(&self) -> f64 {
        self.mean(|s| s.outer_iterations)
    }

    pub fn mean_sequential_vcycles(&self) -> f64 {
        self.mean(StepReport::sequential_vcycles)
    }

    pub fn mean_group_vcycles(&self) -> f64 {
        self.mean(StepReport::group_vcycles)
    }

    /// Per-stage V-cycles summed over all steps.
    pub fn stage_vcycle_totals(&self) -> Vec<usize> {
        let mut out = vec![0; self.stages];
        for s in &self.steps {
            for (o, v) in out.iter_mut().zip(&s.stage_vcycles) {
                *o += v;
            }
        }
        out
    }

    pub fn final_error(&self) -> Option<R> {
        self.steps.last().and_then(|s| s.l2_error)
    }
}

/// Stage right-hand side `(A^{-1} ⊗ I)(g_i - K u_n)` with the prescribed
/// boundary part `k_B` moved to the right via `full_operator`.
pub fn assemble_stage_rhs<R: Real, P: LinearProblem<R> + ?Sized>(
    problem: &P,
    tableau: &ButcherTableau<R>,
    tau: R,
    t: R,
    u_n: &[R],
    mut combine: impl FnMut(&DenseMatrix<R>, &StageBlockVector<R>) -> Result<StageBlockVector<R>>,
    mut full_operator: impl FnMut(&StageBlockVector<R>) -> Result<StageBlockVector<R>>,
) -> Result<StageRhs<R>> {
    let n = problem.n();
    if u_n.len() != n {
        return Err(SolverError::Dimension { expected: n, found: u_n.len() });
    }
    let mut ku = vec![R::zero(); n];
    problem.apply_stiffness_full(u_n, &mut ku)?;
    let times: Vec<R> = tableau.c.iter().map(|c| t + *c * tau).collect();
    let mut f = Vec::with_capacity(times.len());
    for &ti in &times {
        let mut g = problem.source(ti);
        if g.len() != n {
            return Err(SolverError::Dimension { expected: n, found: g.len() });
        }
        axpy(-R::one(), &ku, &mut g);
        f.push(g);
    }
    let mut rhs = combine(&tableau.a_inv, &StageBlockVector::new(f)?)?;
    let rates: Option<Vec<Vec<R>>> = times.iter().map(|&ti| problem.boundary_rate(ti)).collect();
    let lifted = match rates {
        Some(r) => {
            let kb = StageBlockVector::new(r)?;
            if kb.block_len() != n {
                return Err(SolverError::Dimension { expected: n, found: kb.block_len() });
            }
            rhs.axpy(-R::one(), &full_operator(&kb)?);
            Some(kb)
        }
        None => None,
    };
    for i in 0..rhs.stages() {
        problem.zero_constrained(rhs.block_mut(i));
    }
    Ok(StageRhs { rhs, lifted })
}

/// `u_n + τ Σ b_i k_i`, cross-checked against `u_n + τ Σ a_Qi k_i`. Returns
/// the update and the relative gap between the two.
pub fn stage_update<R: Real>(
    tableau: &ButcherTableau<R>,
    tau: R,
    u_n: &[R],
    k: &StageBlockVector<R>,
    step: usize,
) -> Result<(Vec<R>, R)> {
    let q = tableau.stages;
    let mut u_b = u_n.to_vec();
    let mut u_s = u_n.to_vec();
    for i in 0..q {
        axpy(tau * tableau.b[i], k.block(i), &mut u_b);
        axpy(tau * tableau.a[(q - 1, i)], k.block(i), &mut u_s);
    }
    let diff: Vec<R> = u_b.iter().zip(&u_s).map(|(a, b)| *a - *b).collect();
    let mismatch = norm_inf(&diff) / norm_inf(&u_b).max(R::one());
    if !(mismatch <= R::lit(UPDATE_CONSISTENCY)) {
        return Err(SolverError::NumericalFailure {
            context: format!("step {step}: b-weighted and stiffly accurate updates differ by {mismatch:?}"),
        });
    }
    Ok((u_b, mismatch))
}

/// The assembled stage system for one problem, stage count and step size.
pub struct StageSystem<R: Real, P> {
    problem: P,
    tableau: ButcherTableau<R>,
    factors: TriangularFactors<R>,
    spectral: RealSpectralFactors<R>,
    tau: R,
    config: StageSystemConfig<R>,
    blocks: Blocks<R>,
    runtime: Option<RefCell<Runtime<R>>>,
    block_solves: RefCell<Vec<usize>>,
}

impl<R: Real, P> fmt::Debug for StageSystem<R, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageSystem")
            .field("stages", &self.tableau.stages)
            .field("tau", &self.tau)
            .field("mode", &self.config.mode)
            .field("partitions", &self.config.partitions)
            .field("topology", &self.config.topology)
            .finish()
    }
}

impl<R: Real, P: LinearProblem<R>> StageSystem<R, P> {
    pub fn new(problem: P, stages: usize, tau: R, config: StageSystemConfig<R>) -> Result<Self> {
        if !(tau > R::zero() && num_traits::Float::is_finite(tau)) {
            return Err(SolverError::Config { field: "tau", reason: format!("{tau:?} is not a positive step") });
        }
        if config.partitions == 0 {
            return Err(SolverError::Config { field: "partitions", reason: "need at least one partition".into() });
        }
        let tableau = radau_iia::<R>(stages)?;
        let factors = crout_lu(&tableau.a_inv)?;
        let spectral = spectral_real(&factors.l)?;
        let blocks = match config.mode {
            Mode::Batched => Blocks::Batched(problem.batched_solver(&spectral.lambdas, tau)?),
            _ => Blocks::PerStage(
                spectral.lambdas.iter().map(|l| problem.block_solver(*l, tau)).collect::<Result<_>>()?,
            ),
        };
        let runtime = match config.mode {
            Mode::StageParallel => {
                let grid = RankGrid::new(stages, config.partitions, config.topology)?;
                Some(RefCell::new(Runtime::new(grid)))
            }
            _ => None,
        };
        Ok(Self {
            problem,
            tableau,
            factors,
            spectral,
            tau,
            config,
            blocks,
            runtime,
            block_solves: RefCell::new(vec![0; stages]),
        })
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn tableau(&self) -> &ButcherTableau<R> {
        &self.tableau
    }

    pub fn factors(&self) -> &TriangularFactors<R> {
        &self.factors
    }

    pub fn spectral(&self) -> &RealSpectralFactors<R> {
        &self.spectral
    }

    pub fn tau(&self) -> R {
        self.tau
    }

    pub fn stages(&self) -> usize {
        self.tableau.stages
    }

    pub fn config(&self) -> &StageSystemConfig<R> {
        &self.config
    }

    /// Simulated-runtime counters so far (stage-parallel mode only).
    pub fn counters(&self) -> Option<CounterSnapshot> {
        self.runtime.as_ref().map(|rt| rt.borrow().counters())
    }

    /// Block solves per stage so far.
    pub fn block_solves(&self) -> Vec<usize> {
        self.block_solves.borrow().clone()
    }

    fn combine(&self, d: &DenseMatrix<R>, u: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        let Some(rt) = &self.runtime else {
            return dense_combine(d, u);
        };
        let mut rt = rt.borrow_mut();
        let dist = DistributedBlocks::scatter(u, 1, self.config.partitions);
        let out = match self.config.topology {
            Topology::RowMajorPadded { .. } => sharedmem_combine(d, &dist, &mut rt)?,
            _ => rotate_combine(d, &dist, &mut rt)?,
        };
        Ok(out.gather())
    }

    fn scale(
        &self,
        apply: impl FnMut(&[R], &mut [R]) -> Result<()>,
        u: &StageBlockVector<R>,
    ) -> Result<StageBlockVector<R>> {
        let Some(rt) = &self.runtime else {
            return scale_blocks(apply, u);
        };
        let mut rt = rt.borrow_mut();
        let dist = DistributedBlocks::scatter(u, 1, self.config.partitions);
        Ok(scale_blocks_distributed(apply, &dist, &mut rt)?.gather())
    }

    fn check_state(&self, u: &[R]) -> Result<()> {
        let n = self.problem.n();
        if u.len() != n {
            return Err(SolverError::Dimension { expected: n, found: u.len() });
        }
        Ok(())
    }

    fn check_stages(&self, k: &StageBlockVector<R>) -> Result<()> {
        if k.stages() != self.stages() {
            return Err(SolverError::Dimension { expected: self.stages(), found: k.stages() });
        }
        self.check_state(k.block(0))
    }

    /// `(A^{-1} ⊗ M + τ I ⊗ K) k` with the full (unconstrained) operators.
    fn apply_full_operator(&self, k: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        let mk = self.scale(|x, y| self.problem.apply_mass_full(x, y), k)?;
        let mut v = self.combine(&self.tableau.a_inv, &mk)?;
        let kk = self.scale(|x, y| self.problem.apply_stiffness_full(x, y), k)?;
        v.axpy(self.tau, &kk);
        Ok(v)
    }

    pub fn assemble_rhs(&self, t: R, u_n: &[R]) -> Result<StageRhs<R>> {
        assemble_stage_rhs(
            &self.problem,
            &self.tableau,
            self.tau,
            t,
            u_n,
            |d, u| self.combine(d, u),
            |k| self.apply_full_operator(k),
        )
    }

    /// `(A^{-1} ⊗ M + τ I ⊗ K) k` on the constrained operators.
    pub fn apply_system_operator(&self, k: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        self.check_stages(k)?;
        let mk = self.scale(|x, y| self.problem.apply_mass(x, y), k)?;
        let mut v = self.combine(&self.tableau.a_inv, &mk)?;
        let kk = self.scale(|x, y| self.problem.apply_stiffness(x, y), k)?;
        v.axpy(self.tau, &kk);
        Ok(v)
    }

    /// `(S ⊗ I)(Λ ⊗ M + τ I ⊗ K)^{-1}(S^{-1} ⊗ I) r`, one block solve per stage.
    pub fn apply_preconditioner(&self, r: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
        self.check_stages(r)?;
        let q = self.stages();
        let w = self.combine(&self.spectral.s_inv, r)?;
        let z = match (&self.blocks, &self.runtime) {
            (Blocks::Batched(solver), _) => StageBlockVector::new(solver.solve(w.blocks())?)?,
            (Blocks::PerStage(solvers), None) => {
                let mut z = StageBlockVector::zeros(q, w.block_len());
                for (i, s) in solvers.iter().enumerate() {
                    s.solve(w.block(i), z.block_mut(i))?;
                }
                z
            }
            (Blocks::PerStage(solvers), Some(rt)) => {
                let mut rt = rt.borrow_mut();
                let dist = DistributedBlocks::scatter(&w, 1, self.config.partitions);
                let out = map_blocks_distributed(|i, x, y| solvers[i].solve(x, y), &dist, &mut rt)?;
                for i in 0..q {
                    for rank in rt.grid().column_group(i) {
                        rt.record_vcycles(rank, 1);
                    }
                }
                out.gather()
            }
        };
        for c in self.block_solves.borrow_mut().iter_mut() {
            *c += 1;
        }
        self.combine(&self.spectral.s, &z)
    }

    /// Advance `u_n` from `t` by one step of size `τ`.
    pub fn step(&self, index: usize, t: R, u_n: &[R]) -> Result<(Vec<R>, StepReport<R>)> {
        let q = self.stages();
        let solves_before = self.block_solves();
        let counters_before = self.counters();
        let StageRhs { rhs, lifted } = self.assemble_rhs(t, u_n)?;
        let flat_op = |f: &dyn Fn(&StageBlockVector<R>) -> Result<StageBlockVector<R>>, x: &[R], y: &mut [R]| {
            let v = f(&StageBlockVector::from_flat(q, x)?)?;
            for (yi, vi) in y.iter_mut().zip(v.blocks().iter().flatten()) {
                *yi = *vi;
            }
            Ok(())
        };
        let (sol, kr) = gmres(
            |x: &[R], y: &mut [R]| flat_op(&|k| self.apply_system_operator(k), x, y),
            |x: &[R], y: &mut [R]| flat_op(&|r| self.apply_preconditioner(r), x, y),
            &rhs.to_flat(),
            &self.config.gmres,
        )?;
        if !kr.converged {
            return Err(SolverError::StepFailure {
                step: index,
                iterations: kr.iterations,
                reduction: kr.reduction_achieved.as_f64(),
            });
        }
        let mut k = StageBlockVector::from_flat(q, &sol)?;
        if let Some(kb) = &lifted {
            k.axpy(R::one(), kb);
        }
        let (u_b, mismatch) = stage_update(&self.tableau, self.tau, u_n, &k, index)?;
        let stage_vcycles = self.block_solves().iter().zip(&solves_before).map(|(a, b)| a - b).collect();
        let counters = match (self.counters(), counters_before) {
            (Some(now), Some(before)) => Some(now.delta(&before)),
            _ => None,
        };
        let report = StepReport {
            step: index,
            time: t + self.tau,
            outer_iterations: kr.iterations,
            residual_history: kr.residual_history,
            reduction: kr.reduction_achieved,
            stage_vcycles,
            counters,
            update_mismatch: mismatch,
            l2_error: None,
        };
        Ok((u_b, report))
    }

    /// Run `steps` steps from `(t0, u0)`; `error` maps `(u, t)` to an
    /// optional error norm recorded in each step report.
    pub fn integrate(
        &self,
        u0: Vec<R>,
        t0: R,
        steps: usize,
        mut error: impl FnMut(&[R], R) -> Result<Option<R>>,
    ) -> Result<(Vec<R>, SolveReport<R>)> {
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
        Ok((u, SolveReport { stages: self.stages(), mode: self.config.mode, steps: reports, counters }))
    }
}

impl<R: Real> StageSystem<R, HeatDiscretization<R>> {
    /// Integrate the manufactured heat problem from its exact initial state,
    /// recording the L2 error after each step.
    pub fn solve_manufactured(&self, t0: R, steps: usize) -> Result<(Vec<R>, SolveReport<R>)> {
        let p = &self.problem;
        self.integrate(p.initial(t0), t0, steps, |u, t| p.l2_error(u, t).map(Some))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_fem::GridHierarchy;
    use crate::multigrid::VCycleConfig;
    use crate::problem::{assemble_shifted, ScalarOde};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn decay_system(stages: usize, tau: f64, mode: Mode) -> StageSystem<f64, ScalarOde<f64>> {
        let cfg = StageSystemConfig { mode, ..Default::default() };
        StageSystem::new(ScalarOde::decay(), stages, tau, cfg).unwrap()
    }

    #[test]
    fn backward_euler_step() {
        let sys = decay_system(1, 0.1, Mode::Sequential);
        let (u, rep) = sys.step(0, 0.0, &[1.0]).unwrap();
        assert!((u[0] - 1.0 / 1.1).abs() < 1e-14);
        assert_eq!(rep.stage_vcycles.len(), 1);
    }

    #[test]
    fn zero_data_gives_zero_rhs() {
        let sys = decay_system(3, 0.1, Mode::Sequential);
        let r = sys.assemble_rhs(0.0, &[0.0]).unwrap();
        assert!(r.rhs.to_flat().iter().all(|x| *x == 0.0));
        assert!(r.lifted.is_none());
    }

    #[test]
    fn two_stage_rhs_by_hand() {
        let ode = ScalarOde { m: 1.0, k: 1.0, n: 1, g: Box::new(|t: f64| 1.0 + t) };
        let sys = StageSystem::new(ode, 2, 0.1, StageSystemConfig::default()).unwrap();
        let r = sys.assemble_rhs(0.0, &[2.0]).unwrap().rhs.to_flat();
        let w = [1.0 + 0.1 / 3.0 - 2.0, 1.0 + 0.1 - 2.0];
        let expect = [1.5 * w[0] + 0.5 * w[1], -4.5 * w[0] + 2.5 * w[1]];
        assert!((r[0] - expect[0]).abs() < 1e-13);
        assert!((r[1] - expect[1]).abs() < 1e-13);
    }

    #[test]
    fn two_stage_operator_by_hand() {
        let sys = decay_system(2, 0.1, Mode::Sequential);
        let k = StageBlockVector::new(vec![vec![1.0], vec![0.0]]).unwrap();
        let v = sys.apply_system_operator(&k).unwrap().to_flat();
        assert!((v[0] - 1.6).abs() < 1e-13);
        assert!((v[1] + 4.5).abs() < 1e-13);
        let zero = StageBlockVector::zeros(2, 1);
        assert!(sys.apply_system_operator(&zero).unwrap().to_flat().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn two_stage_step_matches_dense_solve() {
        let tau = 0.1;
        let sys = decay_system(2, tau, Mode::Sequential);
        let (u, _) = sys.step(0, 0.0, &[1.0]).unwrap();
        // (A^{-1} + τ I) k = A^{-1} (-1, -1)
        let ai = &sys.tableau().a_inv;
        let mut op = ai.clone();
        op[(0, 0)] += tau;
        op[(1, 1)] += tau;
        let rhs = ai.matvec(&[-1.0, -1.0]);
        let k = op.lu().unwrap().solve(&rhs);
        let b = &sys.tableau().b;
        let expect = 1.0 + tau * (b[0] * k[0] + b[1] * k[1]);
        assert!((u[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn exact_blocks_converge_quickly() {
        for q in 1..=6 {
            let sys = decay_system(q, 0.1, Mode::Sequential);
            let (_, rep) = sys.step(0, 0.0, &[1.0]).unwrap();
            assert!(rep.outer_iterations <= q + 3, "Q={q}: {}", rep.outer_iterations);
        }
    }

    #[test]
    fn preconditioned_scalar_spectrum_clusters_at_one() {
        // P^{-1} A for n = 1 equals (L + τ I)^{-1} (A^{-1} + τ I).
        let tau = 0.1;
        for q in 2..=5 {
            let sys = decay_system(q, tau, Mode::Sequential);
            let mut p = sys.factors().l.clone();
            let mut a = sys.tableau().a_inv.clone();
            for i in 0..q {
                p[(i, i)] += tau;
                a[(i, i)] += tau;
            }
            let m = p.inverse().unwrap().matmul(&a);
            let eig = crate::tableau::eigenvalues(&m).unwrap();
            for e in eig {
                assert!((e - 1.0).norm() < 0.2, "Q={q}: {e:?}");
                if q == 2 {
                    assert!(e.im.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn temporal_order_on_decay() {
        for q in 1..=3 {
            let mut errs = Vec::new();
            for tau in [0.2, 0.1, 0.05, 0.025] {
                let steps = (1.0f64 / tau).round() as usize;
                let sys = decay_system(q, tau, Mode::Sequential);
                let (u, _) = sys.integrate(vec![1.0], 0.0, steps, |_, _| Ok(None)).unwrap();
                errs.push((u[0] - (-1.0f64).exp()).abs());
            }
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(order >= (2 * q - 1) as f64 - 0.2, "Q={q}: {errs:?}");
            }
        }
    }

    #[test]
    fn modes_agree_on_scalar_problem() {
        for q in [1, 2, 4] {
            let run = |mode| decay_system(q, 0.1, mode).integrate(vec![1.0], 0.0, 10, |_, _| Ok(None)).unwrap().0;
            let s = run(Mode::Sequential);
            let p = run(Mode::StageParallel);
            let b = run(Mode::Batched);
            assert!((s[0] - p[0]).abs() < 1e-12 * s[0].abs());
            assert!((s[0] - b[0]).abs() < 1e-12 * s[0].abs());
        }
    }

    fn heat(dim: usize, level: usize) -> HeatDiscretization<f64> {
        HeatDiscretization::new(Arc::new(GridHierarchy::build(dim, level).unwrap()), VCycleConfig::default()).unwrap()
    }

    fn heat_system(q: usize, mode: Mode, partitions: usize, topology: Topology) -> StageSystem<f64, HeatDiscretization<f64>> {
        let cfg = StageSystemConfig { mode, partitions, topology, ..Default::default() };
        StageSystem::new(heat(1, 3), q, 0.1, cfg).unwrap()
    }

    #[test]
    fn operator_and_preconditioner_backends_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let seq = heat_system(4, Mode::Sequential, 1, Topology::RowMajor);
        let par = heat_system(4, Mode::StageParallel, 2, Topology::RowMajor);
        let n = seq.problem().n();
        let blocks: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                seq.problem().zero_constrained(&mut v);
                v
            })
            .collect();
        let k = StageBlockVector::new(blocks).unwrap();
        let a = seq.apply_system_operator(&k).unwrap();
        let b = par.apply_system_operator(&k).unwrap();
        assert!(a.rel_diff(&b) < 1e-12);
        let a = seq.apply_preconditioner(&k).unwrap();
        let b = par.apply_preconditioner(&k).unwrap();
        assert!(a.rel_diff(&b) < 1e-12);
    }

    #[test]
    fn constrained_operator_matches_dense_assembly() {
        let sys = heat_system(2, Mode::Sequential, 1, Topology::RowMajor);
        let p = sys.problem();
        let n = p.n();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = StageBlockVector::new((0..2).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .unwrap();
        let v = sys.apply_system_operator(&k).unwrap();
        let m = assemble_shifted(p, 1.0, 0.0);
        let kk = assemble_shifted(p, 0.0, 1.0);
        let ai = &sys.tableau().a_inv;
        for i in 0..2 {
            let mut expect = kk.matvec(k.block(i));
            expect.iter_mut().for_each(|x| *x *= 0.1);
            for j in 0..2 {
                let mj = m.matvec(k.block(j));
                axpy(ai[(i, j)], &mj, &mut expect);
            }
            assert!(crate::scalar::rel_diff_inf(v.block(i), &expect) < 1e-12);
        }
    }

    #[test]
    fn stage_parallel_group_count_is_total_over_q() {
        let sys = heat_system(4, Mode::StageParallel, 2, Topology::RowMajor);
        let (_, rep) = sys.solve_manufactured(0.0, 2).unwrap();
        for s in &rep.steps {
            assert_eq!(s.sequential_vcycles(), 4 * s.group_vcycles());
            assert_eq!(s.group_vcycles(), s.outer_iterations + 1);
            let c = s.counters.as_ref().unwrap();
            assert_eq!(c.max.vcycles as usize, s.group_vcycles());
        }
        assert!(rep.counters.unwrap().sum.shift_rounds > 0);
    }

    #[test]
    fn heat_modes_and_topologies_agree() {
        let run = |mode, b, topo| heat_system(2, mode, b, topo).solve_manufactured(0.0, 3).unwrap().0;
        let s = run(Mode::Sequential, 1, Topology::RowMajor);
        let bt = run(Mode::Batched, 1, Topology::RowMajor);
        let r = run(Mode::StageParallel, 2, Topology::RowMajor);
        let c = run(Mode::StageParallel, 2, Topology::ColumnMajor);
        let p = run(Mode::StageParallel, 2, Topology::RowMajorPadded { node_size: 4 });
        assert!(crate::scalar::rel_diff_inf(&bt, &s) < 1e-8);
        assert!(crate::scalar::rel_diff_inf(&r, &s) < 1e-8);
        assert!(crate::scalar::rel_diff_inf(&c, &r) < 1e-12);
        assert!(crate::scalar::rel_diff_inf(&p, &r) < 1e-12);
    }

    #[test]
    fn manufactured_error_is_small_and_consistent() {
        let cfg = StageSystemConfig::default();
        let sys = StageSystem::new(heat(2, 4), 3, 0.1, cfg).unwrap();
        let (_, rep) = sys.solve_manufactured(0.0, 3).unwrap();
        for s in &rep.steps {
            assert!(s.update_mismatch < 1e-10);
            assert!(s.l2_error.unwrap() < 0.05);
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let bad_tau = StageSystem::new(ScalarOde::<f64>::decay(), 2, -0.1, StageSystemConfig::default());
        assert!(matches!(bad_tau, Err(SolverError::Config { field: "tau", .. })));
        let bad_q = StageSystem::new(ScalarOde::<f64>::decay(), 0, 0.1, StageSystemConfig::default());
        assert!(matches!(bad_q, Err(SolverError::UnsupportedStageCount { .. })));
        let sys = decay_system(2, 0.1, Mode::Sequential);
        assert!(matches!(sys.step(0, 0.0, &[1.0, 2.0]), Err(SolverError::Dimension { .. })));
        assert_eq!("stage-parallel".parse::<Mode>().unwrap(), Mode::StageParallel);
        assert!("diagonal".parse::<Mode>().is_err());
    }

    #[test]
    fn iteration_cap_is_a_step_failure() {
        let cfg = StageSystemConfig { gmres: GmresConfig { rel_tol: 1e-12, max_iter: 1 }, ..Default::default() };
        let sys = StageSystem::new(heat(1, 4), 3, 0.1, cfg).unwrap();
        let u0 = sys.problem().initial(0.0);
        assert!(matches!(sys.step(0, 0.0, &u0), Err(SolverError::StepFailure { step: 0, .. })));
    }
}
