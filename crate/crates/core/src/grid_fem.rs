//! Nested uniform grids on `[0, 1]^dim` with multilinear (`Q1`) elements.
//!
//! Level `l` has `2^l` cells per direction and `(2^l + 1)^dim` nodes numbered
//! lexicographically with the first coordinate running fastest. Mass and
//! stiffness operators are applied matrix-free by looping over cells with one
//! precomputed element matrix, which is exact because the mesh is affine and
//! uniform.
//!
//! Dirichlet constraints are eliminated: the *constrained* operators act as a
//! multiple of the identity on boundary rows and ignore boundary inputs on
//! interior rows. The *full* operators are the plain assembled forms and are
//! used to move boundary couplings to the right-hand side.

use num_traits::Float;

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::scalar::Real;

pub const MAX_DIM: usize = 3;
pub const MAX_LEVEL: usize = 7;

/// Two-point Gauss–Legendre rule on `[0, 1]`.
fn gauss2<R: Real>() -> ([R; 2], [R; 2]) {
    let d = R::lit(0.5) / R::lit(3.0).sqrt();
    let half = R::lit(0.5);
    ([half - d, half + d], [half, half])
}

/// 1D element matrices on a cell of width `h`, integrated with the two-point
/// rule (exact for these polynomial degrees).
fn element_1d<R: Real>(h: R) -> ([[R; 2]; 2], [[R; 2]; 2]) {
    let (pts, wts) = gauss2::<R>();
    let mut mass = [[R::zero(); 2]; 2];
    let mut stiff = [[R::zero(); 2]; 2];
    let grad = [-R::one() / h, R::one() / h];
    for (x, w) in pts.iter().zip(wts) {
        let phi = [R::one() - *x, *x];
        for i in 0..2 {
            for j in 0..2 {
                mass[i][j] += w * h * phi[i] * phi[j];
                stiff[i][j] += w * h * grad[i] * grad[j];
            }
        }
    }
    (mass, stiff)
}

#[inline]
fn bit(l: usize, d: usize) -> usize {
    (l >> d) & 1
}

/// One grid of the hierarchy.
#[derive(Debug, Clone)]
pub struct GridLevel<R> {
    level: usize,
    dim: usize,
    cells_per_dir: usize,
    h: R,
    n: usize,
    strides: [usize; MAX_DIM],
    boundary: Vec<bool>,
    /// Node offsets of the `2^dim` cell corners relative to the lower corner.
    corner_offsets: Vec<usize>,
    mass_elem: Vec<R>,
    stiff_elem: Vec<R>,
    mass_diag: Vec<R>,
    stiff_diag: Vec<R>,
}

impl<R: Real> GridLevel<R> {
    fn new(dim: usize, level: usize) -> Self {
        let m = 1usize << level;
        let np = m + 1;
        let n = np.pow(dim as u32);
        let h = R::one() / R::of_usize(m);
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for st in strides.iter_mut().take(dim) {
            *st = s;
            s *= np;
        }
        let boundary = (0..n)
            .map(|i| (0..dim).any(|d| {
                let k = (i / strides[d]) % np;
                k == 0 || k == m
            }))
            .collect();
        let nl = 1usize << dim;
        let corner_offsets = (0..nl).map(|l| (0..dim).map(|d| bit(l, d) * strides[d]).sum()).collect();

        let (m1, k1) = element_1d(h);
        let mut mass_elem = vec![R::zero(); nl * nl];
        let mut stiff_elem = vec![R::zero(); nl * nl];
        for a in 0..nl {
            for b in 0..nl {
                let mut mm = R::one();
                for d in 0..dim {
                    mm *= m1[bit(a, d)][bit(b, d)];
                }
                let mut kk = R::zero();
                for d in 0..dim {
                    let mut t = k1[bit(a, d)][bit(b, d)];
                    for e in (0..dim).filter(|&e| e != d) {
                        t *= m1[bit(a, e)][bit(b, e)];
                    }
                    kk += t;
                }
                mass_elem[a * nl + b] = mm;
                stiff_elem[a * nl + b] = kk;
            }
        }

        let mut g = Self {
            level,
            dim,
            cells_per_dir: m,
            h,
            n,
            strides,
            boundary,
            corner_offsets,
            mass_elem,
            stiff_elem,
            mass_diag: Vec::new(),
            stiff_diag: Vec::new(),
        };
        let mut md = vec![R::zero(); n];
        let mut kd = vec![R::zero(); n];
        g.for_each_cell(|base| {
            for (a, off) in g.corner_offsets.iter().enumerate() {
                md[base + off] += g.mass_elem[a * nl + a];
                kd[base + off] += g.stiff_elem[a * nl + a];
            }
        });
        g.mass_diag = md;
        g.stiff_diag = kd;
        g
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells_per_dir(&self) -> usize {
        self.cells_per_dir
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_dir.pow(self.dim as u32)
    }

    pub fn h(&self) -> R {
        self.h
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn interior_count(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    /// Coordinates of node `i` (unused trailing entries are zero).
    pub fn node_coords(&self, i: usize) -> [R; MAX_DIM] {
        let np = self.cells_per_dir + 1;
        let mut x = [R::zero(); MAX_DIM];
        for d in 0..self.dim {
            x[d] = R::of_usize((i / self.strides[d]) % np) * self.h;
        }
        x
    }

    fn for_each_cell(&self, mut f: impl FnMut(usize)) {
        let m = self.cells_per_dir;
        let cells = self.cell_count();
        for c in 0..cells {
            let mut base = 0;
            let mut rest = c;
            for d in 0..self.dim {
                base += (rest % m) * self.strides[d];
                rest /= m;
            }
            f(base);
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(SolverError::Dimension { expected: self.n, found: len });
        }
        Ok(())
    }

    /// `v = (alpha M + beta K) u` on the full (unconstrained) operators.
    pub fn apply_shifted_full(&self, alpha: R, beta: R, u: &[R], v: &mut [R]) -> Result<()> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        let nl = self.corner_offsets.len();
        let elem: Vec<R> =
            self.mass_elem.iter().zip(&self.stiff_elem).map(|(m, k)| alpha * *m + beta * *k).collect();
        v.iter_mut().for_each(|x| *x = R::zero());
        let mut local = [R::zero(); 8];
        self.for_each_cell(|base| {
            for (a, off) in self.corner_offsets.iter().enumerate() {
                local[a] = u[base + off];
            }
            for (a, off) in self.corner_offsets.iter().enumerate() {
                let row = &elem[a * nl..(a + 1) * nl];
                let mut s = R::zero();
                for (e, x) in row.iter().zip(&local[..nl]) {
                    s += *e * *x;
                }
                v[base + off] += s;
            }
        });
        Ok(())
    }

    pub fn apply_mass_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_shifted_full(R::one(), R::zero(), u, v)
    }

    pub fn apply_stiffness_full(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_shifted_full(R::zero(), R::one(), u, v)
    }

    /// Constrained `v = (alpha M + beta K) u`: interior rows see only interior
    /// inputs, boundary rows are `(alpha + beta) u_i`.
    pub fn apply_shifted(&self, alpha: R, beta: R, u: &[R], v: &mut [R]) -> Result<()> {
        self.check_len(u.len())?;
        let masked: Vec<R> =
            u.iter().zip(&self.boundary).map(|(x, b)| if *b { R::zero() } else { *x }).collect();
        self.apply_shifted_full(alpha, beta, &masked, v)?;
        let diag = alpha + beta;
        for i in 0..self.n {
            if self.boundary[i] {
                v[i] = diag * u[i];
            }
        }
        Ok(())
    }

    pub fn apply_mass(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_shifted(R::one(), R::zero(), u, v)
    }

    pub fn apply_stiffness(&self, u: &[R], v: &mut [R]) -> Result<()> {
        self.apply_shifted(R::zero(), R::one(), u, v)
    }

    /// Constrained shifted operators for several blocks in one cell sweep:
    /// `vs[q] = (shifts[q].0 M + shifts[q].1 K) us[q]`.
    pub fn apply_shifted_multi(&self, shifts: &[(R, R)], us: &[Vec<R>], vs: &mut [Vec<R>]) -> Result<()> {
        if us.len() != shifts.len() || vs.len() != shifts.len() {
            return Err(SolverError::Dimension { expected: shifts.len(), found: us.len().min(vs.len()) });
        }
        for (u, v) in us.iter().zip(vs.iter()) {
            self.check_len(u.len())?;
            self.check_len(v.len())?;
        }
        let nb = shifts.len();
        let nl = self.corner_offsets.len();
        let elems: Vec<Vec<R>> = shifts
            .iter()
            .map(|(a, b)| self.mass_elem.iter().zip(&self.stiff_elem).map(|(m, k)| *a * *m + *b * *k).collect())
            .collect();
        for v in vs.iter_mut() {
            v.iter_mut().for_each(|x| *x = R::zero());
        }
        let mut local = [R::zero(); 8];
        self.for_each_cell(|base| {
            for q in 0..nb {
                for (a, off) in self.corner_offsets.iter().enumerate() {
                    let i = base + off;
                    local[a] = if self.boundary[i] { R::zero() } else { us[q][i] };
                }
                for (a, off) in self.corner_offsets.iter().enumerate() {
                    let row = &elems[q][a * nl..(a + 1) * nl];
                    let mut s = R::zero();
                    for (e, x) in row.iter().zip(&local[..nl]) {
                        s += *e * *x;
                    }
                    vs[q][base + off] += s;
                }
            }
        });
        for (q, (a, b)) in shifts.iter().enumerate() {
            for i in 0..self.n {
                if self.boundary[i] {
                    vs[q][i] = (*a + *b) * us[q][i];
                }
            }
        }
        Ok(())
    }

    /// Diagonal of the constrained `alpha M + beta K`.
    pub fn shifted_diagonal(&self, alpha: R, beta: R) -> Vec<R> {
        (0..self.n)
            .map(|i| {
                if self.boundary[i] {
                    alpha + beta
                } else {
                    alpha * self.mass_diag[i] + beta * self.stiff_diag[i]
                }
            })
            .collect()
    }

    /// Dense constrained `alpha M + beta K`, for coarse solves and oracles.
    pub fn assemble_shifted(&self, alpha: R, beta: R) -> DenseMatrix<R> {
        crate::dense::assemble_from_action(self.n, |u, v| {
            self.apply_shifted(alpha, beta, u, v).expect("lengths fixed by construction")
        })
    }

    pub fn interpolate(&self, f: impl Fn(&[R]) -> R) -> Vec<R> {
        (0..self.n).map(|i| f(&self.node_coords(i)[..self.dim])).collect()
    }

    /// Load vector `F_i = int f phi_i` with the tensor two-point rule per cell.
    pub fn load_vector(&self, f: impl Fn(&[R]) -> R) -> Vec<R> {
        let (pts, wts) = gauss2::<R>();
        let nq = 1usize << self.dim;
        let nl = self.corner_offsets.len();
        let vol = self.h.powi(self.dim as i32);
        let mut out = vec![R::zero(); self.n];
        self.for_each_cell(|base| {
            let x0 = self.node_coords(base);
            for qp in 0..nq {
                let mut x = [R::zero(); MAX_DIM];
                let mut w = vol;
                for d in 0..self.dim {
                    x[d] = x0[d] + pts[bit(qp, d)] * self.h;
                    w *= wts[bit(qp, d)];
                }
                let fx = f(&x[..self.dim]) * w;
                for a in 0..nl {
                    let mut phi = R::one();
                    for d in 0..self.dim {
                        let s = pts[bit(qp, d)];
                        phi *= if bit(a, d) == 1 { s } else { R::one() - s };
                    }
                    out[base + self.corner_offsets[a]] += fx * phi;
                }
            }
        });
        out
    }

    /// `|| u_h - u ||_{L2}` with the tensor two-point rule per cell.
    pub fn l2_error(&self, uh: &[R], exact: impl Fn(&[R]) -> R) -> Result<R> {
        self.check_len(uh.len())?;
        let (pts, wts) = gauss2::<R>();
        let nq = 1usize << self.dim;
        let nl = self.corner_offsets.len();
        let vol = self.h.powi(self.dim as i32);
        let mut acc = R::zero();
        self.for_each_cell(|base| {
            let x0 = self.node_coords(base);
            for qp in 0..nq {
                let mut x = [R::zero(); MAX_DIM];
                let mut w = vol;
                for d in 0..self.dim {
                    x[d] = x0[d] + pts[bit(qp, d)] * self.h;
                    w *= wts[bit(qp, d)];
                }
                let mut val = R::zero();
                for a in 0..nl {
                    let mut phi = R::one();
                    for d in 0..self.dim {
                        let s = pts[bit(qp, d)];
                        phi *= if bit(a, d) == 1 { s } else { R::one() - s };
                    }
                    val += uh[base + self.corner_offsets[a]] * phi;
                }
                let e = val - exact(&x[..self.dim]);
                acc += w * e * e;
            }
        });
        Ok(acc.sqrt())
    }

    /// Overwrite boundary entries with `value(x)`.
    pub fn constrain(&self, v: &mut [R], value: impl Fn(&[R]) -> R) -> Result<()> {
        self.check_len(v.len())?;
        for i in 0..self.n {
            if self.boundary[i] {
                v[i] = value(&self.node_coords(i)[..self.dim]);
            }
        }
        Ok(())
    }

    /// Zero the boundary entries.
    pub fn zero_boundary(&self, v: &mut [R]) {
        for (x, b) in v.iter_mut().zip(&self.boundary) {
            if *b {
                *x = R::zero();
            }
        }
    }
}

/// Grids `0..=max_level` on `[0, 1]^dim`.
#[derive(Debug, Clone)]
pub struct GridHierarchy<R> {
    dim: usize,
    levels: Vec<GridLevel<R>>,
}

impl<R: Real> GridHierarchy<R> {
    pub fn build(dim: usize, max_level: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(SolverError::Config { field: "dim", reason: format!("{dim} is not in 1..=3") });
        }
        if !(1..=MAX_LEVEL).contains(&max_level) {
            return Err(SolverError::Config {
                field: "levels",
                reason: format!("{max_level} is not in 1..={MAX_LEVEL}"),
            });
        }
        let levels = (0..=max_level).map(|l| GridLevel::new(dim, l)).collect();
        Ok(Self { dim, levels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &GridLevel<R> {
        &self.levels[l]
    }

    pub fn finest(&self) -> &GridLevel<R> {
        self.levels.last().expect("hierarchy has at least two levels")
    }

    pub fn n(&self) -> usize {
        self.finest().n
    }

    /// Multilinear interpolation from level `fine - 1` to level `fine`.
    pub fn prolongate(&self, fine: usize, coarse_v: &[R], fine_v: &mut [R]) {
        let f = &self.levels[fine];
        let c = &self.levels[fine - 1];
        debug_assert_eq!(coarse_v.len(), c.n);
        debug_assert_eq!(fine_v.len(), f.n);
        let npf = f.cells_per_dir + 1;
        let half = R::lit(0.5);
        for (i, out) in fine_v.iter_mut().enumerate() {
            // Each direction contributes one coarse index (even) or two halves (odd).
            let mut terms: [(usize, R); 8] = [(0, R::zero()); 8];
            let mut count = 1;
            terms[0] = (0, R::one());
            for d in 0..self.dim {
                let k = (i / f.strides[d]) % npf;
                if k.is_multiple_of(2) {
                    for t in terms.iter_mut().take(count) {
                        t.0 += (k / 2) * c.strides[d];
                    }
                } else {
                    for j in 0..count {
                        let (idx, w) = terms[j];
                        terms[j] = (idx + (k / 2) * c.strides[d], w * half);
                        terms[j + count] = (idx + (k / 2 + 1) * c.strides[d], w * half);
                    }
                    count *= 2;
                }
            }
            let mut s = R::zero();
            for (idx, w) in &terms[..count] {
                s += *w * coarse_v[*idx];
            }
            *out = s;
        }
    }

    /// Transpose of [`Self::prolongate`].
    pub fn restrict(&self, fine: usize, fine_v: &[R], coarse_v: &mut [R]) {
        let f = &self.levels[fine];
        let c = &self.levels[fine - 1];
        debug_assert_eq!(coarse_v.len(), c.n);
        coarse_v.iter_mut().for_each(|x| *x = R::zero());
        let npf = f.cells_per_dir + 1;
        let half = R::lit(0.5);
        for (i, val) in fine_v.iter().enumerate() {
            let mut terms: [(usize, R); 8] = [(0, R::zero()); 8];
            let mut count = 1;
            terms[0] = (0, R::one());
            for d in 0..self.dim {
                let k = (i / f.strides[d]) % npf;
                if k.is_multiple_of(2) {
                    for t in terms.iter_mut().take(count) {
                        t.0 += (k / 2) * c.strides[d];
                    }
                } else {
                    for j in 0..count {
                        let (idx, w) = terms[j];
                        terms[j] = (idx + (k / 2) * c.strides[d], w * half);
                        terms[j + count] = (idx + (k / 2 + 1) * c.strides[d], w * half);
                    }
                    count *= 2;
                }
            }
            for (idx, w) in &terms[..count] {
                coarse_v[*idx] += *w * *val;
            }
        }
    }
}

/// Manufactured solution `u = prod_d sin(2 pi x_d) (1 + sin(pi t)) exp(-t/2)`
/// of `u_t = Laplace(u) + f`.
#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub dim: usize,
}

impl Manufactured {
    fn space<R: Real>(x: &[R]) -> R {
        let two_pi = R::lit(2.0) * R::PI();
        // reduce to [-1/2, 1/2] so integer coordinates give an exact zero
        x.iter().fold(R::one(), |p, xi| p * (two_pi * (*xi - xi.round())).sin())
    }

    fn time<R: Real>(t: R) -> (R, R) {
        let e = (-R::lit(0.5) * t).exp();
        let s = R::one() + (R::PI() * t).sin();
        let ds = R::PI() * (R::PI() * t).cos();
        (s * e, (ds - R::lit(0.5) * s) * e)
    }

    pub fn solution<R: Real>(&self, x: &[R], t: R) -> R {
        Self::space(x) * Self::time(t).0
    }

    pub fn time_derivative<R: Real>(&self, x: &[R], t: R) -> R {
        Self::space(x) * Self::time(t).1
    }

    pub fn source<R: Real>(&self, x: &[R], t: R) -> R {
        let (tt, dt) = Self::time(t);
        let k2 = R::lit(4.0) * R::PI() * R::PI() * R::of_usize(self.dim);
        Self::space(x) * (dt + k2 * tt)
    }

    /// `(u, f, g)` at `(x, t)`; `g` is the Dirichlet value, i.e. `u` itself.
    pub fn evaluate<R: Real>(&self, x: &[R], t: R) -> (R, R, R) {
        let u = self.solution(x, t);
        (u, self.source(x, t), u)
    }
}

/// Time-stepping parameters of the heat benchmark.
#[derive(Debug, Clone)]
pub struct HeatProblem<R> {
    pub hierarchy: GridHierarchy<R>,
    pub tau: R,
    pub t0: R,
    pub steps: usize,
}

impl<R: Real> HeatProblem<R> {
    pub fn new(hierarchy: GridHierarchy<R>, tau: R, t0: R, steps: usize) -> Result<Self> {
        if !(tau > R::zero()) || !Float::is_finite(tau) {
            return Err(SolverError::Config { field: "tau", reason: format!("{tau} must be positive") });
        }
        if steps == 0 {
            return Err(SolverError::Config { field: "steps", reason: "at least one step".into() });
        }
        Ok(Self { hierarchy, tau, t0, steps })
    }
}
