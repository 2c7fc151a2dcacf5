//! Deterministic in-process stand-in for a message-passing runtime.
//!
//! Ranks form a `(stage q, partition b)` grid. Collectives are invoked once
//! with the contributions of every participating rank (SPMD by simulation),
//! messages travel through per-pair FIFO mailboxes, and every send and
//! barrier is counted per rank. Nothing depends on scheduling, so repeated
//! runs give identical counters and bit-identical data.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Result, SolverError};

/// Rank numbering of the `Q x B` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// `rank = q B + b`.
    RowMajor,
    /// `rank = b Q + q`.
    ColumnMajor,
    /// Row-major with each stage padded to a multiple of `node_size` ranks,
    /// so no stage straddles a node. Padding ranks are idle.
    RowMajorPadded { node_size: usize },
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Topology::RowMajor => write!(f, "row_major"),
            Topology::ColumnMajor => write!(f, "column_major"),
            Topology::RowMajorPadded { node_size } => write!(f, "row_major_padded({node_size})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankGrid {
    stages: usize,
    partitions: usize,
    topology: Topology,
    /// `rank_of[q * B + b]`.
    rank_of: Vec<usize>,
    coords: Vec<Option<(usize, usize)>>,
}

impl RankGrid {
    pub fn new(stages: usize, partitions: usize, topology: Topology) -> Result<Self> {
        if stages == 0 {
            return Err(SolverError::Config { field: "Q", reason: "need at least one stage".into() });
        }
        if partitions == 0 {
            return Err(SolverError::Config { field: "B", reason: "need at least one partition".into() });
        }
        let (size, map): (usize, Box<dyn Fn(usize, usize) -> usize>) = match topology {
            Topology::RowMajor => (stages * partitions, Box::new(move |q, b| q * partitions + b)),
            Topology::ColumnMajor => (stages * partitions, Box::new(move |q, b| b * stages + q)),
            Topology::RowMajorPadded { node_size } => {
                if node_size < partitions || node_size == 0 {
                    return Err(SolverError::Config {
                        field: "node_size",
                        reason: format!("node size {node_size} cannot hold {partitions} partitions"),
                    });
                }
                let stride = partitions.div_ceil(node_size) * node_size;
                (stages * stride, Box::new(move |q, b| q * stride + b))
            }
        };
        let mut rank_of = vec![0; stages * partitions];
        let mut coords = vec![None; size];
        for q in 0..stages {
            for b in 0..partitions {
                let r = map(q, b);
                rank_of[q * partitions + b] = r;
                coords[r] = Some((q, b));
            }
        }
        Ok(Self { stages, partitions, topology, rank_of, coords })
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Total ranks including idle padding.
    pub fn size(&self) -> usize {
        self.coords.len()
    }

    pub fn rank(&self, q: usize, b: usize) -> usize {
        self.rank_of[q * self.partitions + b]
    }

    pub fn coords(&self, rank: usize) -> Option<(usize, usize)> {
        self.coords.get(rank).copied().flatten()
    }

    pub fn is_idle(&self, rank: usize) -> bool {
        self.coords(rank).is_none()
    }

    /// Node index of a rank under the padded topology, else `None`.
    pub fn node_of(&self, rank: usize) -> Option<usize> {
        match self.topology {
            Topology::RowMajorPadded { node_size } => Some(rank / node_size),
            _ => None,
        }
    }

    pub fn global(&self) -> Vec<usize> {
        (0..self.size()).collect()
    }

    /// The `Q` ranks sharing partition `b`, in stage order.
    pub fn row_group(&self, b: usize) -> Vec<usize> {
        (0..self.stages).map(|q| self.rank(q, b)).collect()
    }

    /// The `B` ranks sharing stage `q`, in partition order.
    pub fn column_group(&self, q: usize) -> Vec<usize> {
        (0..self.partitions).map(|b| self.rank(q, b)).collect()
    }
}

/// Half-open index range of partition `b` when `n` entries are split `B` ways.
pub fn partition_range(n: usize, parts: usize, b: usize) -> std::ops::Range<usize> {
    (b * n / parts)..((b + 1) * n / parts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankCounters {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub barriers: u64,
    pub shift_rounds: u64,
    /// Messages inside a row group (between stages of one partition).
    pub row_messages: u64,
    /// Messages inside a column group (between partitions of one stage).
    pub column_messages: u64,
    pub vcycles: u64,
}

impl RankCounters {
    fn add(&mut self, o: &RankCounters) {
        self.messages_sent += o.messages_sent;
        self.bytes_sent += o.bytes_sent;
        self.barriers += o.barriers;
        self.shift_rounds += o.shift_rounds;
        self.row_messages += o.row_messages;
        self.column_messages += o.column_messages;
        self.vcycles += o.vcycles;
    }

    fn max(&mut self, o: &RankCounters) {
        self.messages_sent = self.messages_sent.max(o.messages_sent);
        self.bytes_sent = self.bytes_sent.max(o.bytes_sent);
        self.barriers = self.barriers.max(o.barriers);
        self.shift_rounds = self.shift_rounds.max(o.shift_rounds);
        self.row_messages = self.row_messages.max(o.row_messages);
        self.column_messages = self.column_messages.max(o.column_messages);
        self.vcycles = self.vcycles.max(o.vcycles);
    }

    pub fn delta(&self, earlier: &RankCounters) -> RankCounters {
        RankCounters {
            messages_sent: self.messages_sent - earlier.messages_sent,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            barriers: self.barriers - earlier.barriers,
            shift_rounds: self.shift_rounds - earlier.shift_rounds,
            row_messages: self.row_messages - earlier.row_messages,
            column_messages: self.column_messages - earlier.column_messages,
            vcycles: self.vcycles - earlier.vcycles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub per_rank: Vec<RankCounters>,
    pub sum: RankCounters,
    pub max: RankCounters,
}

impl CounterSnapshot {
    pub fn delta(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        let per_rank: Vec<RankCounters> =
            self.per_rank.iter().zip(&earlier.per_rank).map(|(a, b)| a.delta(b)).collect();
        summarize(per_rank)
    }
}

fn summarize(per_rank: Vec<RankCounters>) -> CounterSnapshot {
    let mut sum = RankCounters::default();
    let mut max = RankCounters::default();
    for c in &per_rank {
        sum.add(c);
        max.max(c);
    }
    CounterSnapshot { per_rank, sum, max }
}

/// Simulated runtime carrying payloads of element type `T`.
#[derive(Debug, Clone)]
pub struct Runtime<T> {
    grid: RankGrid,
    counters: Vec<RankCounters>,
    mailboxes: BTreeMap<(usize, usize), VecDeque<Vec<T>>>,
}

impl<T: Clone> Runtime<T> {
    pub fn new(grid: RankGrid) -> Self {
        let size = grid.size();
        Self { grid, counters: vec![RankCounters::default(); size], mailboxes: BTreeMap::new() }
    }

    pub fn grid(&self) -> &RankGrid {
        &self.grid
    }

    pub fn counters(&self) -> CounterSnapshot {
        summarize(self.counters.clone())
    }

    pub fn rank_counters(&self, rank: usize) -> &RankCounters {
        &self.counters[rank]
    }

    pub fn record_vcycles(&mut self, rank: usize, count: u64) {
        self.counters[rank].vcycles += count;
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.grid.size() {
            return Err(SolverError::Protocol { reason: "rank out of range".into(), ranks: vec![rank] });
        }
        Ok(())
    }

    /// Point-to-point send; counted on the sender.
    pub fn send(&mut self, from: usize, to: usize, payload: Vec<T>) -> Result<()> {
        self.check_rank(from)?;
        self.check_rank(to)?;
        let c = &mut self.counters[from];
        c.messages_sent += 1;
        c.bytes_sent += (payload.len() * std::mem::size_of::<T>()) as u64;
        match (self.grid.coords(from), self.grid.coords(to)) {
            (Some((_, bf)), Some((_, bt))) if bf == bt => c.row_messages += 1,
            (Some((qf, _)), Some((qt, _))) if qf == qt => c.column_messages += 1,
            _ => {}
        }
        self.mailboxes.entry((from, to)).or_default().push_back(payload);
        Ok(())
    }

    /// Receive the oldest message from `from`; an empty mailbox would block
    /// forever and is reported as a protocol error.
    pub fn recv(&mut self, to: usize, from: usize) -> Result<Vec<T>> {
        self.mailboxes.get_mut(&(from, to)).and_then(VecDeque::pop_front).ok_or_else(|| {
            SolverError::Protocol {
                reason: format!("rank {to} waits on a message from rank {from} that is never sent"),
                ranks: vec![to, from],
            }
        })
    }

    /// Messages sent but not yet received, as `(from, to)` pairs.
    pub fn pending(&self) -> Vec<(usize, usize)> {
        self.mailboxes.iter().filter(|(_, q)| !q.is_empty()).map(|(k, _)| *k).collect()
    }

    /// Rendezvous of `group`; `arrived` lists the ranks that called it.
    pub fn barrier(&mut self, group: &[usize], arrived: &[usize]) -> Result<()> {
        let missing: Vec<usize> = group.iter().copied().filter(|r| !arrived.contains(r)).collect();
        if !missing.is_empty() {
            return Err(SolverError::Protocol {
                reason: "barrier never completes: ranks did not join".into(),
                ranks: missing,
            });
        }
        if let Some(stranger) = arrived.iter().find(|r| !group.contains(r)) {
            return Err(SolverError::Protocol {
                reason: "rank joined a barrier of a group it does not belong to".into(),
                ranks: vec![*stranger],
            });
        }
        for r in group {
            self.counters[*r].barriers += 1;
        }
        Ok(())
    }

    /// Barrier with full participation.
    pub fn barrier_all(&mut self, group: &[usize]) -> Result<()> {
        self.barrier(group, group)
    }

    /// Cyclic shift inside a row group: the rank at position `i` sends its
    /// payload to position `i - 1` and receives the payload of `i + 1`.
    /// `payloads[i]` belongs to `group[i]`.
    pub fn ring_shift_up(&mut self, group: &[usize], payloads: Vec<Vec<T>>) -> Result<Vec<Vec<T>>> {
        if payloads.len() != group.len() {
            return Err(SolverError::Collective {
                reason: format!("{} payloads for a group of {}", payloads.len(), group.len()),
            });
        }
        if let Some(len) = payloads.first().map(Vec::len) {
            if let Some(i) = payloads.iter().position(|p| p.len() != len) {
                return Err(SolverError::Collective {
                    reason: format!("rank {} sends {} entries, rank {} sends {len}", group[i], payloads[i].len(), group[0]),
                });
            }
        }
        let m = group.len();
        for r in group {
            self.counters[*r].shift_rounds += 1;
        }
        if m == 1 {
            return Ok(payloads);
        }
        for (i, p) in payloads.into_iter().enumerate() {
            self.send(group[i], group[(i + m - 1) % m], p)?;
        }
        (0..m).map(|i| self.recv(group[i], group[(i + 1) % m])).collect()
    }

    /// Every rank of `group` receives the concatenation of all parts.
    pub fn allgather(&mut self, group: &[usize], parts: &[Vec<T>]) -> Result<Vec<T>> {
        if parts.len() != group.len() {
            return Err(SolverError::Collective {
                reason: format!("{} parts for a group of {}", parts.len(), group.len()),
            });
        }
        for (i, src) in group.iter().enumerate() {
            for (j, dst) in group.iter().enumerate() {
                if i != j {
                    self.send(*src, *dst, parts[i].clone())?;
                }
            }
        }
        let mut full = Vec::new();
        for (j, dst) in group.iter().enumerate() {
            let mut mine = Vec::new();
            for (i, src) in group.iter().enumerate() {
                if i == j {
                    mine.extend_from_slice(&parts[i]);
                } else {
                    mine.extend(self.recv(*dst, *src)?);
                }
            }
            if j == 0 {
                full = mine;
            }
        }
        Ok(full)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_mapping() {
        let g = RankGrid::new(6, 4, Topology::RowMajor).unwrap();
        assert_eq!(g.rank(1, 2), 6);
        assert_eq!(g.size(), 24);
        for r in 0..24 {
            let (q, b) = g.coords(r).unwrap();
            assert_eq!(g.rank(q, b), r);
        }
    }

    #[test]
    fn column_major_mapping() {
        let g = RankGrid::new(2, 3, Topology::ColumnMajor).unwrap();
        assert_eq!(g.rank(0, 0), 0);
        assert_eq!(g.rank(1, 0), 1);
        assert_eq!(g.rank(0, 1), 2);
    }

    #[test]
    fn padded_mapping() {
        let g = RankGrid::new(4, 3, Topology::RowMajorPadded { node_size: 4 }).unwrap();
        assert_eq!(g.size(), 16);
        for q in 0..4 {
            let ranks = g.column_group(q);
            assert_eq!(ranks, vec![4 * q, 4 * q + 1, 4 * q + 2]);
            assert!(g.is_idle(4 * q + 3));
            let node = g.node_of(ranks[0]).unwrap();
            assert!(ranks.iter().all(|r| g.node_of(*r) == Some(node)));
        }
        assert!(RankGrid::new(4, 3, Topology::RowMajorPadded { node_size: 2 }).is_err());
    }

    #[test]
    fn groups_have_expected_members() {
        for topo in [Topology::RowMajor, Topology::ColumnMajor, Topology::RowMajorPadded { node_size: 5 }] {
            let g = RankGrid::new(3, 4, topo).unwrap();
            for b in 0..4 {
                let row = g.row_group(b);
                assert_eq!(row.len(), 3);
                for (q, r) in row.iter().enumerate() {
                    assert_eq!(g.coords(*r), Some((q, b)));
                }
            }
            for q in 0..3 {
                let col = g.column_group(q);
                assert_eq!(col.len(), 4);
                assert!(col.iter().all(|r| g.coords(*r).unwrap().0 == q));
            }
        }
    }

    #[test]
    fn ring_shift_rotates() {
        let g = RankGrid::new(3, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<char>::new(g.clone());
        let row = g.row_group(0);
        let out = rt.ring_shift_up(&row, vec![vec!['a'], vec!['b'], vec!['c']]).unwrap();
        assert_eq!(out, vec![vec!['b'], vec!['c'], vec!['a']]);
        let mut cur = out;
        for _ in 0..2 {
            cur = rt.ring_shift_up(&row, cur).unwrap();
        }
        assert_eq!(cur, vec![vec!['a'], vec!['b'], vec!['c']]);
        let snap = rt.counters();
        assert!(snap.per_rank.iter().all(|c| c.messages_sent == 3 && c.shift_rounds == 3 && c.row_messages == 3));
        assert!(rt.pending().is_empty());
    }

    #[test]
    fn self_shift_is_identity() {
        let g = RankGrid::new(1, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g);
        let out = rt.ring_shift_up(&[0], vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(out, vec![vec![1.0, 2.0]]);
        assert_eq!(rt.counters().sum.messages_sent, 0);
    }

    #[test]
    fn mismatched_payloads_violate_contract() {
        let g = RankGrid::new(2, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g);
        let e = rt.ring_shift_up(&[0, 1], vec![vec![1.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(e, SolverError::Collective { .. }));
    }

    #[test]
    fn deadlock_names_ranks() {
        let g = RankGrid::new(4, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g);
        match rt.barrier(&[0, 1, 2, 3], &[0, 2]) {
            Err(SolverError::Protocol { ranks, .. }) => assert_eq!(ranks, vec![1, 3]),
            other => panic!("{other:?}"),
        }
        match rt.recv(2, 1) {
            Err(SolverError::Protocol { ranks, .. }) => assert_eq!(ranks, vec![2, 1]),
            other => panic!("{other:?}"),
        }
        assert_eq!(rt.counters().sum.barriers, 0);
    }

    #[test]
    fn fresh_runtime_counts_nothing_and_barrier_counts() {
        let g = RankGrid::new(2, 2, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g.clone());
        assert_eq!(rt.counters().sum, RankCounters::default());
        rt.barrier_all(&[3]).unwrap();
        assert_eq!(rt.rank_counters(3).barriers, 1);
        rt.barrier_all(&g.row_group(0)).unwrap();
        assert_eq!(rt.rank_counters(0).barriers, 1);
        assert_eq!(rt.rank_counters(2).barriers, 1);
    }

    #[test]
    fn fifo_per_pair() {
        let g = RankGrid::new(2, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<u8>::new(g);
        rt.send(0, 1, vec![1]).unwrap();
        rt.send(0, 1, vec![2]).unwrap();
        assert_eq!(rt.recv(1, 0).unwrap(), vec![1]);
        assert_eq!(rt.recv(1, 0).unwrap(), vec![2]);
    }

    #[test]
    fn allgather_counts_column_messages() {
        let g = RankGrid::new(2, 3, Topology::ColumnMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g.clone());
        let col = g.column_group(1);
        let full = rt.allgather(&col, &[vec![1.0], vec![2.0, 3.0], vec![4.0]]).unwrap();
        assert_eq!(full, vec![1.0, 2.0, 3.0, 4.0]);
        for r in &col {
            assert_eq!(rt.rank_counters(*r).column_messages, 2);
            assert_eq!(rt.rank_counters(*r).row_messages, 0);
        }
    }

    #[test]
    fn partitions_cover_range() {
        for parts in 1..6 {
            let mut next = 0;
            for b in 0..parts {
                let r = partition_range(17, parts, b);
                assert_eq!(r.start, next);
                next = r.end;
            }
            assert_eq!(next, 17);
        }
    }

    #[test]
    fn snapshot_delta() {
        let g = RankGrid::new(2, 1, Topology::RowMajor).unwrap();
        let mut rt = Runtime::<f64>::new(g);
        let before = rt.counters();
        rt.ring_shift_up(&[0, 1], vec![vec![0.0; 4], vec![0.0; 4]]).unwrap();
        let d = rt.counters().delta(&before);
        assert_eq!(d.sum.messages_sent, 2);
        assert_eq!(d.max.bytes_sent, 32);
    }
}
