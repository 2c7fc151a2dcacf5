//! Semi-discrete problems `M u' + K u = F(t)` the stage solvers act on.
//!
//! A problem supplies its constrained and full operators, the load at a given
//! time, the rate of its Dirichlet data, and approximate inverses for the
//! shifted blocks the preconditioners need.

use std::sync::Arc;

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::grid_fem::{GridHierarchy, Manufactured};
use crate::multigrid::{BatchedMultigrid, PairMultigrid, ShiftedMultigrid, VCycleConfig};
use crate::scalar::Real;

/// Approximate inverse of `shift M + tau K`.
pub trait BlockSolver<R>: Send + Sync {
    fn solve(&self, b: &[R], x: &mut [R]) -> Result<()>;
}

/// Approximate inverses of several shifted blocks applied in one sweep.
pub trait BatchedBlockSolver<R>: Send + Sync {
    fn solve(&self, b: &[Vec<R>]) -> Result<Vec<Vec<R>>>;
}

/// Approximate inverse of the real form `[K', -M'; M', K']`.
pub trait PairBlockSolver<R>: Send + Sync {
    fn solve(&self, b_re: &[R], b_im: &[R], x_re: &mut [R], x_im: &mut [R]) -> Result<()>;
}

pub trait LinearProblem<R: Real> {
    fn n(&self) -> usize;

    /// Constrained mass: identity on boundary rows, boundary inputs ignored.
    fn apply_mass(&self, u: &[R], v: &mut [R]) -> Result<()>;
    fn apply_stiffness(&self, u: &[R], v: &mut [R]) -> Result<()>;
    fn apply_mass_full(&self, u: &[R], v: &mut [R]) -> Result<()>;
    fn apply_stiffness_full(&self, u: &[R], v: &mut [R]) -> Result<()>;

    /// Load vector `F(t)`.
    fn source(&self, t: R) -> Vec<R>;

    /// Time derivative of the Dirichlet data on boundary entries, zero
    /// elsewhere; `None` when it vanishes identically.
    fn boundary_rate(&self, t: R) -> Option<Vec<R>>;

    /// Zero the constrained rows of a residual.
    fn zero_constrained(&self, v: &mut [R]);

    fn block_solver(&self, shift: R, tau: R) -> Result<Box<dyn BlockSolver<R>>>;
    fn batched_solver(&self, shifts: &[R], tau: R) -> Result<Box<dyn BatchedBlockSolver<R>>>;
    fn pair_solver(&self, re: R, im: R, tau: R) -> Result<Box<dyn PairBlockSolver<R>>>;
}

impl<R: Real> BlockSolver<R> for ShiftedMultigrid<R> {
    fn solve(&self, b: &[R], x: &mut [R]) -> Result<()> {
        self.apply(b, x)
    }
}

impl<R: Real> BatchedBlockSolver<R> for BatchedMultigrid<R> {
    fn solve(&self, b: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        self.apply(b)
    }
}

impl<R: Real> PairBlockSolver<R> for PairMultigrid<R> {
    fn solve(&self, b_re: &[R], b_im: &[R], x_re: &mut [R], x_im: &mut [R]) -> Result<()> {
        self.apply(b_re, b_im, x_re, x_im)
    }
}

/// Heat equation `u_t = Laplace(u) + f` on the unit cube with the
/// manufactured solution, `Q1` elements and multigrid block solvers.
#[derive(Debug, Clone)]
pub struct HeatDiscretization<R> {
    hierarchy: Arc<GridHierarchy<R>>,
    exact: Manufactured,
    mg: VCycleConfig<R>,
}

impl<R: Real> HeatDiscretization<R> {
    pub fn new(hierarchy: Arc<GridHierarchy<R>>, mg: VCycleConfig<R>) -> Result<Self> {
        mg.validate()?;
        let exact = Manufactured { dim: hierarchy.dim() };
        Ok(Self { hierarchy, exact, mg })
    }

    pub fn hierarchy(&self) -> &Arc<GridHierarchy<R>> {
        &self.hierarchy
    }

    pub fn manufactured(&self) -> Manufactured {
        self.exact
    }

    pub fn mg_config(&self) -> &VCycleConfig<R> {
        &self.mg
    }

    /// Nodal interpolant of the exact solution at time `t`.
    pub fn initial(&self, t: R) -> Vec<R> {
        self.hierarchy.finest().interpolate(|x| self.exact.solution(x, t))
    }

    pub fn l2_error(&self, u: &[R], t: R) -> Result<R> {
        self.hierarchy.finest().l2_error(u, |x| self.exact.solution(x, t))
    }
}

impl<R: Real> LinearProblem<R> for HeatDiscretization<R> {
    fn n(&self) -> usize {
        self.hierarchy.n()
    }

    fn apply_mass(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.hierarchy.finest().apply_mass(u, v)
    }

    fn apply_stiffness(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.hierarchy.finest().apply_stiffness(u, v)
    }

    fn apply_mass_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.hierarchy.finest().apply_mass_full(u, v)
    }

    fn apply_stiffness_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.hierarchy.finest().apply_stiffness_full(u, v)
    }

    fn source(&self, t: R) -> Vec<R> {
        self.hierarchy.finest().load_vector(|x| self.exact.source(x, t))
    }

    fn boundary_rate(&self, t: R) -> Option<Vec<R>> {
        let f = self.hierarchy.finest();
        let mut v = vec![R::zero(); f.n()];
        f.constrain(&mut v, |x| self.exact.time_derivative(x, t)).ok()?;
        v.iter().any(|x| *x != R::zero()).then_some(v)
    }

    fn zero_constrained(&self, v: &mut [R]) {
        self.hierarchy.finest().zero_boundary(v);
    }

    fn block_solver(&self, shift: R, tau: R) -> Result<Box<dyn BlockSolver<R>>> {
        Ok(Box::new(ShiftedMultigrid::new(self.hierarchy.clone(), shift, tau, self.mg)?))
    }

    fn batched_solver(&self, shifts: &[R], tau: R) -> Result<Box<dyn BatchedBlockSolver<R>>> {
        Ok(Box::new(BatchedMultigrid::new(self.hierarchy.clone(), shifts, tau, self.mg)?))
    }

    fn pair_solver(&self, re: R, im: R, tau: R) -> Result<Box<dyn PairBlockSolver<R>>> {
        Ok(Box::new(PairMultigrid::new(self.hierarchy.clone(), re, im, tau, self.mg)?))
    }
}

/// Uncoupled scalar ODEs `m y' + k y = g(t)`, one per entry, solved exactly.
pub struct ScalarOde<R> {
    pub m: R,
    pub k: R,
    pub n: usize,
    pub g: Box<dyn Fn(R) -> R + Send + Sync>,
}

impl<R: Real> std::fmt::Debug for ScalarOde<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarOde").field("m", &self.m).field("k", &self.k).field("n", &self.n).finish()
    }
}

impl<R: Real> ScalarOde<R> {
    /// `y' = -y`.
    pub fn decay() -> Self {
        Self { m: R::one(), k: R::one(), n: 1, g: Box::new(|_| R::zero()) }
    }
}

struct ExactScalar<R> {
    d: R,
}

impl<R: Real> BlockSolver<R> for ExactScalar<R> {
    fn solve(&self, b: &[R], x: &mut [R]) -> Result<()> {
        for (xi, bi) in x.iter_mut().zip(b) {
            *xi = *bi / self.d;
        }
        Ok(())
    }
}

struct ExactScalarBatch<R> {
    d: Vec<R>,
}

impl<R: Real> BatchedBlockSolver<R> for ExactScalarBatch<R> {
    fn solve(&self, b: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        Ok(b.iter().zip(&self.d).map(|(v, d)| v.iter().map(|x| *x / *d).collect()).collect())
    }
}

struct ExactScalarPair<R> {
    k: R,
    m: R,
}

impl<R: Real> PairBlockSolver<R> for ExactScalarPair<R> {
    fn solve(&self, b_re: &[R], b_im: &[R], x_re: &mut [R], x_im: &mut [R]) -> Result<()> {
        let det = self.k * self.k + self.m * self.m;
        for i in 0..b_re.len() {
            x_re[i] = (self.k * b_re[i] + self.m * b_im[i]) / det;
            x_im[i] = (self.k * b_im[i] - self.m * b_re[i]) / det;
        }
        Ok(())
    }
}

fn nonsingular<R: Real>(d: R) -> Result<R> {
    if d == R::zero() || !num_traits::Float::is_finite(d) {
        return Err(SolverError::NumericalFailure { context: "singular scalar block".into() });
    }
    Ok(d)
}

impl<R: Real> LinearProblem<R> for ScalarOde<R> {
    fn n(&self) -> usize {
        self.n
    }

    fn apply_mass(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_mass_full(u, v)
    }

    fn apply_stiffness(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_stiffness_full(u, v)
    }

    fn apply_mass_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        if u.len() != self.n || v.len() != self.n {
            return Err(SolverError::Dimension { expected: self.n, found: u.len() });
        }
        for (vi, ui) in v.iter_mut().zip(u) {
            *vi = self.m * *ui;
        }
        Ok(())
    }

    fn apply_stiffness_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        if u.len() != self.n || v.len() != self.n {
            return Err(SolverError::Dimension { expected: self.n, found: u.len() });
        }
        for (vi, ui) in v.iter_mut().zip(u) {
            *vi = self.k * *ui;
        }
        Ok(())
    }

    fn source(&self, t: R) -> Vec<R> {
        vec![(self.g)(t); self.n]
    }

    fn boundary_rate(&self, _t: R) -> Option<Vec<R>> {
        None
    }

    fn zero_constrained(&self, _v: &mut [R]) {}

    fn block_solver(&self, shift: R, tau: R) -> Result<Box<dyn BlockSolver<R>>> {
        Ok(Box::new(ExactScalar { d: nonsingular(shift * self.m + tau * self.k)? }))
    }

    fn batched_solver(&self, shifts: &[R], tau: R) -> Result<Box<dyn BatchedBlockSolver<R>>> {
        let d = shifts.iter().map(|s| nonsingular(*s * self.m + tau * self.k)).collect::<Result<_>>()?;
        Ok(Box::new(ExactScalarBatch { d }))
    }

    fn pair_solver(&self, re: R, im: R, tau: R) -> Result<Box<dyn PairBlockSolver<R>>> {
        Ok(Box::new(ExactScalarPair { k: nonsingular(re * self.m + tau * self.k)?, m: im * self.m }))
    }
}

/// Dense `shift M + tau K` of a problem (constrained), for oracles.
pub fn assemble_shifted<R: Real, P: LinearProblem<R> + ?Sized>(p: &P, shift: R, tau: R) -> DenseMatrix<R> {
    let n = p.n();
    crate::dense::assemble_from_action(n, |u, v| {
        let mut k = vec![R::zero(); n];
        p.apply_mass(u, v).expect("fixed lengths");
        p.apply_stiffness(u, &mut k).expect("fixed lengths");
        for (vi, ki) in v.iter_mut().zip(&k) {
            *vi = shift * *vi + tau * *ki;
        }
    })
}
