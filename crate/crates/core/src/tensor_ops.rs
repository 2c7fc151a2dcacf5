//! Kronecker primitives on stage block vectors: `(I_Q ⊗ C) u` and
//! `(D ⊗ I_n) u`.
//!
//! `(D ⊗ I_n) u` has three backends: a dense reference, a rotation over the
//! row group (each rank adds one term per round and passes its source block
//! to the previous stage, `Q - 1` shifts), and a shared-memory variant that
//! reads peer blocks between two row barriers. The paired form used by the
//! complex path runs the same rotation with two real vectors per rank.

use num_complex::Complex;

use crate::dense::DenseMatrix;
use crate::error::{Result, SolverError};
use crate::scalar::{Field, Real};
use crate::simrt::{partition_range, Runtime, Topology};

/// `Q` vectors of equal length, replicated.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBlockVector<T> {
    blocks: Vec<Vec<T>>,
}

impl<T: Field> StageBlockVector<T> {
    pub fn new(blocks: Vec<Vec<T>>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            if let Some(bad) = blocks.iter().find(|b| b.len() != first.len()) {
                return Err(SolverError::Dimension { expected: first.len(), found: bad.len() });
            }
        }
        Ok(Self { blocks })
    }

    pub fn zeros(stages: usize, n: usize) -> Self {
        Self { blocks: vec![vec![T::zero(); n]; stages] }
    }

    pub fn from_flat(stages: usize, flat: &[T]) -> Result<Self> {
        if stages == 0 || !flat.len().is_multiple_of(stages) {
            return Err(SolverError::Dimension { expected: stages, found: flat.len() });
        }
        Ok(Self { blocks: flat.chunks(flat.len() / stages).map(<[T]>::to_vec).collect() })
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.blocks.concat()
    }

    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    /// Length of each block.
    pub fn block_len(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    pub fn block(&self, i: usize) -> &[T] {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<T>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<T>> {
        self.blocks
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            crate::scalar::axpy(alpha, b, a);
        }
    }

    /// Largest entrywise modulus of `self - other` relative to `other`.
    pub fn rel_diff(&self, other: &Self) -> T::Real {
        crate::scalar::rel_diff_inf(&self.to_flat(), &other.to_flat())
    }
}

/// Stage blocks split over a `rows x B` rank grid; every rank holds `width`
/// consecutive blocks restricted to its partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedBlocks<T> {
    rows: usize,
    partitions: usize,
    width: usize,
    n: usize,
    /// Indexed by `row * B + b`; each part is `width` slices back to back.
    parts: Vec<Vec<T>>,
}

impl<T: Field> DistributedBlocks<T> {
    /// Distribute `u`; block count is padded with zero blocks up to a
    /// multiple of `width`.
    pub fn scatter(u: &StageBlockVector<T>, width: usize, partitions: usize) -> Self {
        let n = u.block_len();
        let rows = u.stages().div_ceil(width);
        let zero = vec![T::zero(); n];
        let mut parts = Vec::with_capacity(rows * partitions);
        for row in 0..rows {
            for b in 0..partitions {
                let range = partition_range(n, partitions, b);
                let mut part = Vec::with_capacity(width * range.len());
                for k in 0..width {
                    let blk = u.blocks.get(row * width + k).unwrap_or(&zero);
                    part.extend_from_slice(&blk[range.clone()]);
                }
                parts.push(part);
            }
        }
        Self { rows, partitions, width, n, parts }
    }

    /// Reassemble `rows * width` full blocks.
    pub fn gather(&self) -> StageBlockVector<T> {
        let mut blocks = vec![Vec::with_capacity(self.n); self.rows * self.width];
        for row in 0..self.rows {
            for b in 0..self.partitions {
                let len = partition_range(self.n, self.partitions, b).len();
                let part = &self.parts[row * self.partitions + b];
                for k in 0..self.width {
                    blocks[row * self.width + k].extend_from_slice(&part[k * len..(k + 1) * len]);
                }
            }
        }
        StageBlockVector { blocks }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn part(&self, row: usize, b: usize) -> &[T] {
        &self.parts[row * self.partitions + b]
    }
}

/// `v_i = C u_i` for every stage.
pub fn scale_blocks<T: Field>(
    mut apply_c: impl FnMut(&[T], &mut [T]) -> Result<()>,
    u: &StageBlockVector<T>,
) -> Result<StageBlockVector<T>> {
    let n = u.block_len();
    let mut out = StageBlockVector::zeros(u.stages(), n);
    for (src, dst) in u.blocks.iter().zip(out.blocks.iter_mut()) {
        apply_c(src, dst)?;
        if dst.len() != n {
            return Err(SolverError::Dimension { expected: n, found: dst.len() });
        }
    }
    Ok(out)
}

/// Distributed `(I ⊗ C) u`: each column group gathers its stage block, applies
/// `C` and keeps its own partition. No message crosses a row group.
pub fn scale_blocks_distributed<T: Field>(
    mut apply_c: impl FnMut(&[T], &mut [T]) -> Result<()>,
    u: &DistributedBlocks<T>,
    rt: &mut Runtime<T>,
) -> Result<DistributedBlocks<T>> {
    map_blocks_distributed(|_, x, y| apply_c(x, y), u, rt)
}

/// Like [`scale_blocks_distributed`] with a map that may depend on the block
/// index (`row * width + k`).
pub fn map_blocks_distributed<T: Field>(
    mut f: impl FnMut(usize, &[T], &mut [T]) -> Result<()>,
    u: &DistributedBlocks<T>,
    rt: &mut Runtime<T>,
) -> Result<DistributedBlocks<T>> {
    check_grid(u, rt)?;
    let (p, w, n) = (u.partitions, u.width, u.n);
    let mut out = u.clone();
    let mut full_out = vec![T::zero(); n];
    for row in 0..u.rows {
        let group = rt.grid().column_group(row);
        for k in 0..w {
            let slices: Vec<Vec<T>> = (0..p)
                .map(|b| {
                    let len = partition_range(n, p, b).len();
                    u.part(row, b)[k * len..(k + 1) * len].to_vec()
                })
                .collect();
            let full = rt.allgather(&group, &slices)?;
            f(row * w + k, &full, &mut full_out)?;
            for b in 0..p {
                let range = partition_range(n, p, b);
                let len = range.len();
                out.parts[row * p + b][k * len..(k + 1) * len].copy_from_slice(&full_out[range]);
            }
        }
    }
    Ok(out)
}

/// Reference `v_i = sum_j D_ij u_j`.
pub fn dense_combine<T: Field>(d: &DenseMatrix<T>, u: &StageBlockVector<T>) -> Result<StageBlockVector<T>> {
    if d.cols() != u.stages() {
        return Err(SolverError::Dimension { expected: d.cols(), found: u.stages() });
    }
    let n = u.block_len();
    let mut out = StageBlockVector::zeros(d.rows(), n);
    for i in 0..d.rows() {
        for j in 0..d.cols() {
            let a = d[(i, j)];
            if a != T::zero() {
                crate::scalar::axpy(a, &u.blocks[j], &mut out.blocks[i]);
            }
        }
    }
    Ok(out)
}

fn check_grid<T: Field>(u: &DistributedBlocks<T>, rt: &Runtime<T>) -> Result<()> {
    let g = rt.grid();
    if g.stages() != u.rows || g.partitions() != u.partitions {
        return Err(SolverError::Collective {
            reason: format!(
                "data laid out on {}x{} ranks, grid is {}x{}",
                u.rows,
                u.partitions,
                g.stages(),
                g.partitions()
            ),
        });
    }
    Ok(())
}

fn check_square<T: Field>(d: &DenseMatrix<T>, u: &DistributedBlocks<T>) -> Result<()> {
    let m = u.rows * u.width;
    if d.rows() != m || d.cols() != m {
        return Err(SolverError::Dimension { expected: m, found: d.rows().max(d.cols()) });
    }
    Ok(())
}

/// `acc += D(row block i, source block s) * src` for `width x width` blocks.
fn local_block_combine<T: Field>(d: &DenseMatrix<T>, w: usize, i: usize, s: usize, src: &[T], acc: &mut [T]) {
    let len = src.len() / w;
    for a in 0..w {
        for c in 0..w {
            let coef = d[(i * w + a, s * w + c)];
            if coef != T::zero() {
                crate::scalar::axpy(coef, &src[c * len..(c + 1) * len], &mut acc[a * len..(a + 1) * len]);
            }
        }
    }
}

/// Rotation backend of `(D ⊗ I) u` with `width x width` local blocks.
///
/// Round `r` on the rank of row `i` adds `D_{i, (i+r) mod P} u_{(i+r) mod P}`;
/// between rounds the held source moves one row up the ring.
pub fn rotate_blocks<T: Field>(
    d: &DenseMatrix<T>,
    u: &DistributedBlocks<T>,
    rt: &mut Runtime<T>,
) -> Result<DistributedBlocks<T>> {
    check_grid(u, rt)?;
    check_square(d, u)?;
    let (rows, parts, w) = (u.rows, u.partitions, u.width);
    let mut out = u.clone();
    for b in 0..parts {
        let group = rt.grid().row_group(b);
        let mut held: Vec<Vec<T>> = (0..rows).map(|i| u.part(i, b).to_vec()).collect();
        let mut acc: Vec<Vec<T>> = held.iter().map(|h| vec![T::zero(); h.len()]).collect();
        for r in 0..rows {
            for i in 0..rows {
                local_block_combine(d, w, i, (i + r) % rows, &held[i], &mut acc[i]);
            }
            if r + 1 < rows {
                held = rt.ring_shift_up(&group, held)?;
            }
        }
        for (i, a) in acc.into_iter().enumerate() {
            out.parts[i * parts + b] = a;
        }
    }
    Ok(out)
}

/// Rotation backend for square `D` (one block per rank).
pub fn rotate_combine<T: Field>(
    d: &DenseMatrix<T>,
    u: &DistributedBlocks<T>,
    rt: &mut Runtime<T>,
) -> Result<DistributedBlocks<T>> {
    if u.width != 1 {
        return Err(SolverError::Collective { reason: "rotate_combine expects one block per rank".into() });
    }
    rotate_blocks(d, u, rt)
}

/// Shared-memory backend: between two row barriers every rank reads the
/// blocks of its row group directly.
pub fn sharedmem_combine<T: Field>(
    d: &DenseMatrix<T>,
    u: &DistributedBlocks<T>,
    rt: &mut Runtime<T>,
) -> Result<DistributedBlocks<T>> {
    if !matches!(rt.grid().topology(), Topology::RowMajorPadded { .. }) {
        return Err(SolverError::UnsupportedTopology);
    }
    check_grid(u, rt)?;
    check_square(d, u)?;
    let (rows, parts, w) = (u.rows, u.partitions, u.width);
    let mut out = u.clone();
    for b in 0..parts {
        let group = rt.grid().row_group(b);
        rt.barrier_all(&group)?;
        for i in 0..rows {
            let mut acc = vec![T::zero(); u.part(i, b).len()];
            for j in 0..rows {
                local_block_combine(d, w, i, j, u.part(j, b), &mut acc);
            }
            out.parts[i * parts + b] = acc;
        }
        rt.barrier_all(&group)?;
    }
    Ok(out)
}

/// Rectangular complex basis change embedded in a real `2P x 2P` matrix
/// acting on pair slots `(re, im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMatrix<R> {
    stages: usize,
    pairs: usize,
    real: DenseMatrix<R>,
}

impl<R: Real> PairedMatrix<R> {
    /// `D` is `P x Q`: real stage blocks in, complex pair slots out. Input
    /// stage `j` sits in slot `j / 2`, position `j % 2`.
    pub fn real_to_complex(d: &DenseMatrix<Complex<R>>) -> Result<Self> {
        let (pairs, stages) = (d.rows(), d.cols());
        if pairs != stages.div_ceil(2) {
            return Err(SolverError::Dimension { expected: stages.div_ceil(2), found: pairs });
        }
        let mut real = DenseMatrix::zeros(2 * pairs, 2 * pairs);
        for p in 0..pairs {
            for j in 0..stages {
                real[(2 * p, j)] = d[(p, j)].re;
                real[(2 * p + 1, j)] = d[(p, j)].im;
            }
        }
        Ok(Self { stages, pairs, real })
    }

    /// `D` is `Q x P`: complex pair slots in, `Re(D z)` as real stage blocks
    /// out.
    pub fn complex_to_real(d: &DenseMatrix<Complex<R>>) -> Result<Self> {
        let (stages, pairs) = (d.rows(), d.cols());
        if pairs != stages.div_ceil(2) {
            return Err(SolverError::Dimension { expected: stages.div_ceil(2), found: pairs });
        }
        let mut real = DenseMatrix::zeros(2 * pairs, 2 * pairs);
        for j in 0..stages {
            for p in 0..pairs {
                real[(j, 2 * p)] = d[(j, p)].re;
                real[(j, 2 * p + 1)] = -d[(j, p)].im;
            }
        }
        Ok(Self { stages, pairs, real })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn real_form(&self) -> &DenseMatrix<R> {
        &self.real
    }
}

/// Paired rotation over `P` pair rows with 2-vector blocks per rank.
pub fn rotate_combine_paired<R: Real>(
    m: &PairedMatrix<R>,
    u: &DistributedBlocks<R>,
    rt: &mut Runtime<R>,
) -> Result<DistributedBlocks<R>> {
    if u.width != 2 || u.rows != m.pairs {
        return Err(SolverError::Dimension { expected: m.pairs, found: u.rows });
    }
    rotate_blocks(&m.real, u, rt)
}

/// Reference for [`rotate_combine_paired`] on replicated slot vectors.
pub fn dense_combine_paired<R: Real>(m: &PairedMatrix<R>, u: &StageBlockVector<R>) -> Result<StageBlockVector<R>> {
    let mut padded = u.clone();
    while padded.stages() < 2 * m.pairs {
        padded.blocks.push(vec![R::zero(); u.block_len()]);
    }
    dense_combine(&m.real, &padded)
}
