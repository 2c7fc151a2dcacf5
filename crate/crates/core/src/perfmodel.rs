//! Per-step cost model of the sequential and stage-parallel solvers.
//!
//! ```text
//! T_IRK   = 2 T_S  + Σ_q T_Bq
//! T_SPIRK = 2 T_S' + max_q T_Bq
//! ```
//!
//! Costs are dimensionless, typically V-cycle counts. In the iteration form
//! `T_Bq = N_q · T̂_q`. The achievable speedup of the block phase is
//! `Σ_q T_Bq / max_q T_Bq ≤ Q`.

use std::fmt;

use crate::error::{Result, SolverError};
use crate::irk_solver::{Mode, SolveReport};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<R> {
    /// Cost of one basis change (`T_S`, or `T_S'` when predicting the
    /// stage-parallel time).
    pub t_basis: R,
    /// Block-solve cost per stage.
    pub t_block: Vec<R>,
}

fn nonnegative<R: Real>(v: R, field: &'static str) -> Result<R> {
    if v >= R::zero() && num_traits::Float::is_finite(v) {
        Ok(v)
    } else {
        Err(SolverError::Config { field, reason: format!("{v:?} is not a finite non-negative cost") })
    }
}

impl<R: Real> CostModel<R> {
    pub fn new(t_basis: R, t_block: Vec<R>) -> Result<Self> {
        nonnegative(t_basis, "t_basis")?;
        if t_block.is_empty() {
            return Err(SolverError::Config { field: "t_block", reason: "need at least one stage".into() });
        }
        for t in &t_block {
            nonnegative(*t, "t_block")?;
        }
        Ok(Self { t_basis, t_block })
    }

    /// Iteration form: `T_Bq = N_q · T̂_q`.
    pub fn from_iterations(t_basis: R, iterations: &[usize], per_iteration: &[R]) -> Result<Self> {
        if iterations.len() != per_iteration.len() {
            return Err(SolverError::Dimension { expected: iterations.len(), found: per_iteration.len() });
        }
        let t_block = iterations.iter().zip(per_iteration).map(|(n, t)| R::of_usize(*n) * *t).collect();
        Self::new(t_basis, t_block)
    }

    pub fn stages(&self) -> usize {
        self.t_block.len()
    }

    fn block_sum(&self) -> R {
        self.t_block.iter().fold(R::zero(), |a, b| a + *b)
    }

    fn block_max(&self) -> R {
        self.t_block.iter().fold(R::zero(), |a, b| a.max(*b))
    }

    pub fn predict_irk(&self) -> R {
        R::lit(2.0) * self.t_basis + self.block_sum()
    }

    pub fn predict_spirk(&self) -> R {
        R::lit(2.0) * self.t_basis + self.block_max()
    }

    /// `Σ T_Bq / max T_Bq`; one when every block is free.
    pub fn speedup_bound(&self) -> R {
        let max = self.block_max();
        if max == R::zero() {
            R::one()
        } else {
            self.block_sum() / max
        }
    }
}

/// V-cycle bookkeeping of one step as seen by the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleRecord {
    pub outer_iterations: usize,
    pub stage_vcycles: Vec<usize>,
    /// Busiest rank's V-cycles from the runtime counters, if recorded.
    pub critical_path: Option<usize>,
    /// Total V-cycles of a sequential run of the same step, if available.
    pub sequential_total: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSummary {
    pub stages: usize,
    pub steps: usize,
    /// Mean outer iterations per step (`#G`).
    pub mean_iterations: f64,
    /// Mean V-cycles per step of a single process group (`#V`, sequential).
    pub mean_sequential_vcycles: f64,
    /// Mean V-cycles per step on the busiest stage group (`#V`, parallel).
    pub mean_group_vcycles: f64,
    /// Σ_q / max_q over the accumulated per-stage totals.
    pub speedup_bound: f64,
}

impl fmt::Display for ValidationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q={} sequential {:.1} ({:.1}) stage-parallel {:.1} ({:.1}) speedup {:.2}",
            self.stages,
            self.mean_iterations,
            self.mean_sequential_vcycles,
            self.mean_iterations,
            self.mean_group_vcycles,
            self.speedup_bound
        )
    }
}

/// Check the sum/max structure on per-step records.
pub fn validate_records(records: &[ScheduleRecord]) -> Result<ValidationSummary> {
    let Some(first) = records.first() else {
        return Err(SolverError::Validation { mismatches: vec!["no steps recorded".into()] });
    };
    let q = first.stage_vcycles.len();
    let mut mismatches = Vec::new();
    let mut totals = vec![0usize; q];
    for (i, r) in records.iter().enumerate() {
        if r.stage_vcycles.len() != q {
            mismatches.push(format!("step {i}: {} stage counts, expected {q}", r.stage_vcycles.len()));
            continue;
        }
        let max = r.stage_vcycles.iter().copied().max().unwrap_or(0);
        let sum: usize = r.stage_vcycles.iter().sum();
        if let Some(c) = r.critical_path {
            if c != max {
                mismatches.push(format!("step {i}: critical path {c} != busiest stage {max}"));
            }
        }
        if let Some(s) = r.sequential_total {
            if s != sum {
                mismatches.push(format!("step {i}: sequential total {s} != stage sum {sum}"));
            }
        }
        for (t, v) in totals.iter_mut().zip(&r.stage_vcycles) {
            *t += v;
        }
    }
    if !mismatches.is_empty() {
        return Err(SolverError::Validation { mismatches });
    }
    let steps = records.len() as f64;
    let mean = |f: &dyn Fn(&ScheduleRecord) -> usize| records.iter().map(|r| f(r) as f64).sum::<f64>() / steps;
    let model = CostModel::new(0.0, totals.iter().map(|t| *t as f64).collect())?;
    Ok(ValidationSummary {
        stages: q,
        steps: records.len(),
        mean_iterations: mean(&|r| r.outer_iterations),
        mean_sequential_vcycles: mean(&|r| r.stage_vcycles.iter().sum()),
        mean_group_vcycles: mean(&|r| r.stage_vcycles.iter().copied().max().unwrap_or(0)),
        speedup_bound: model.speedup_bound(),
    })
}

/// Validate a stage-parallel run against its runtime counters and,
/// optionally, a sequential run of the same problem.
pub fn validate_against_counters<R: Real>(
    report: &SolveReport<R>,
    sequential: Option<&SolveReport<R>>,
) -> Result<ValidationSummary> {
    let mut mismatches = Vec::new();
    if report.mode != Mode::StageParallel {
        mismatches.push(format!("report comes from a {} run", report.mode));
    }
    if let Some(seq) = sequential {
        if seq.steps.len() != report.steps.len() {
            mismatches.push(format!("{} sequential steps vs {} parallel", seq.steps.len(), report.steps.len()));
        }
    }
    if !mismatches.is_empty() {
        return Err(SolverError::Validation { mismatches });
    }
    let records: Vec<ScheduleRecord> = report
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| ScheduleRecord {
            outer_iterations: s.outer_iterations,
            stage_vcycles: s.stage_vcycles.clone(),
            critical_path: s.counters.as_ref().map(|c| c.max.vcycles as usize),
            sequential_total: sequential.map(|seq| seq.steps[i].sequential_vcycles()),
        })
        .collect();
    validate_records(&records)
}
