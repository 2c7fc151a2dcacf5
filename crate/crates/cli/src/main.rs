//! `spirk`: solve runs, convergence sweeps, tableau export and cost-model
//! validation, all writing plain CSV.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use spirk::complex_solver::{ComplexConfig, DirectStageSolver, Path};
use spirk::grid_fem::{GridHierarchy, Manufactured};
use spirk::irk_solver::{Mode, StageSystem, StageSystemConfig};
use spirk::multigrid::{CoarseSolver, VCycleConfig};
use spirk::perfmodel::{validate_records, ScheduleRecord};
use spirk::problem::{HeatDiscretization, ScalarOde};
use spirk::simrt::{CounterSnapshot, RankGrid, Topology};
use spirk::tableau::{crout_lu, radau_iia, spectral_complex, spectral_real};
use spirk::DenseMatrixF64;

#[derive(Parser, Debug)]
#[command(name = "spirk", version, about = "Stage-parallel Radau IIA solvers for M u' + K u = g")]
struct Cli {
    /// Output directory for CSV files; `SPIRK_OUT` takes precedence when set.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the manufactured heat problem.
    Solve(RunArgs),
    /// Temporal or spatial convergence sweep.
    Convergence(ConvergenceArgs),
    /// Export the tableau and its factorizations.
    Tableau {
        #[arg(long = "Q", default_value_t = 2)]
        q: usize,
    },
    /// Validate a solve log against the cost model.
    Model {
        /// Solve log written by `spirk solve`.
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sequential,
    #[value(alias = "stage_parallel")]
    StageParallel,
    Batched,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PathArg {
    RealLu,
    ComplexPresb,
    ComplexGmg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TopologyArg {
    RowMajor,
    ColumnMajor,
    Padded,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CoarseArg {
    Direct,
    Chebyshev,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Refinement level of the finest grid.
    #[arg(long = "L", default_value_t = 4)]
    level: usize,
    #[arg(long = "Q", default_value_t = 2)]
    q: usize,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Sequential)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PathArg::RealLu)]
    path: PathArg,
    #[arg(long, value_enum, default_value_t = TopologyArg::RowMajor)]
    topology: TopologyArg,
    /// Spatial partitions per stage.
    #[arg(long = "B", default_value_t = 1)]
    partitions: usize,
    /// Ranks per node for the padded topology.
    #[arg(long, default_value_t = 4)]
    node_size: usize,
    #[arg(long, default_value_t = 5)]
    mg_degree: usize,
    #[arg(long, default_value_t = 20.0)]
    mg_range: f64,
    #[arg(long, value_enum, default_value_t = CoarseArg::Direct)]
    mg_coarse: CoarseArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    /// Halve the step on `y' = -y` up to `t = 1`.
    Time,
    /// Refine the grid for one small step of the heat problem.
    Space,
}

#[derive(Args, Debug, Clone)]
struct ConvergenceArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::Time)]
    kind: SweepKind,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05, 0.025])]
    taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5])]
    levels: Vec<usize>,
    #[command(flatten)]
    run: RunArgs,
}

impl RunArgs {
    fn mode(&self) -> Mode {
        match self.mode {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::StageParallel => Mode::StageParallel,
            ModeArg::Batched => Mode::Batched,
        }
    }

    fn path(&self) -> Path {
        match self.path {
            PathArg::RealLu => Path::RealLu,
            PathArg::ComplexPresb => Path::ComplexPresb,
            PathArg::ComplexGmg => Path::ComplexGmg,
        }
    }

    fn topology(&self) -> Topology {
        match self.topology {
            TopologyArg::RowMajor => Topology::RowMajor,
            TopologyArg::ColumnMajor => Topology::ColumnMajor,
            TopologyArg::Padded => Topology::RowMajorPadded { node_size: self.node_size },
        }
    }

    fn mg(&self) -> Result<VCycleConfig<f64>> {
        let cfg = VCycleConfig {
            smoother_degree: self.mg_degree,
            smoothing_range: self.mg_range,
            coarse_solver: match self.mg_coarse {
                CoarseArg::Direct => CoarseSolver::Direct,
                CoarseArg::Chebyshev => CoarseSolver::Chebyshev,
            },
            ..VCycleConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn heat(&self, level: usize) -> Result<HeatDiscretization<f64>> {
        let h = GridHierarchy::build(self.dim, level).with_context(|| format!("grid dim={} L={level}", self.dim))?;
        Ok(HeatDiscretization::new(Arc::new(h), self.mg()?)?)
    }

    fn validate(&self) -> Result<()> {
        if self.path() != Path::RealLu && self.mode() == Mode::Batched {
            bail!("invalid configuration for `mode`: batched mode requires --path real-lu");
        }
        if self.mode() == Mode::StageParallel {
            let stages = if self.path() == Path::RealLu { self.q } else { self.q.div_ceil(2) };
            RankGrid::new(stages, self.partitions, self.topology())?;
        }
        Ok(())
    }
}

/// One row of the solve log, shared by both paths.
struct LogRow {
    step: usize,
    time: f64,
    outer_iterations: usize,
    block_iterations: Vec<usize>,
    block_vcycles: Vec<usize>,
    l2_error: Option<f64>,
    counters: Option<CounterSnapshot>,
}

const LOG_HEADER: [&str; 16] = [
    "step",
    "time",
    "path",
    "mode",
    "outer_iterations",
    "min_block_iterations",
    "max_block_iterations",
    "block_vcycles",
    "sequential_vcycles",
    "group_vcycles",
    "critical_vcycles",
    "l2_error",
    "messages",
    "bytes",
    "barriers",
    "shift_rounds",
];

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(out: &FsPath, name: &str) -> Result<csv::Writer<fs::File>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("opening {}", path.display()))
}

fn write_counters(out: &FsPath, grid: &RankGrid, snap: &CounterSnapshot) -> Result<()> {
    let mut w = writer(out, "counters.csv")?;
    w.write_record([
        "rank",
        "q",
        "b",
        "messages",
        "bytes",
        "barriers",
        "shift_rounds",
        "row_messages",
        "column_messages",
        "vcycles",
    ])?;
    for (rank, c) in snap.per_rank.iter().enumerate() {
        let (q, b) = grid.coords(rank).map_or((String::new(), String::new()), |(q, b)| (q.to_string(), b.to_string()));
        w.write_record([
            rank.to_string(),
            q,
            b,
            c.messages_sent.to_string(),
            c.bytes_sent.to_string(),
            c.barriers.to_string(),
            c.shift_rounds.to_string(),
            c.row_messages.to_string(),
            c.column_messages.to_string(),
            c.vcycles.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_nodal(out: &FsPath, p: &HeatDiscretization<f64>, u: &[f64], t: f64) -> Result<()> {
    let fine = p.hierarchy().finest();
    let mf = Manufactured { dim: fine.dim() };
    let mut w = writer(out, "nodal.csv")?;
    w.write_record(["node", "x", "y", "z", "u", "exact"])?;
    for (i, ui) in u.iter().enumerate() {
        let x = fine.node_coords(i);
        let exact = mf.solution(&x[..fine.dim()], t);
        w.write_record([
            i.to_string(),
            x[0].to_string(),
            x[1].to_string(),
            x[2].to_string(),
            ui.to_string(),
            exact.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve(out: &FsPath, a: &RunArgs) -> Result<()> {
    a.validate()?;
    let problem = a.heat(a.level)?;
    let (rows, residuals, u, counters, grid_stages) = match a.path() {
        Path::RealLu => {
            let cfg = StageSystemConfig { mode: a.mode(), partitions: a.partitions, topology: a.topology(), ..Default::default() };
            let sys = StageSystem::new(problem, a.q, a.tau, cfg)?;
            let (u, rep) = sys.solve_manufactured(0.0, a.steps)?;
            let rows: Vec<LogRow> = rep
                .steps
                .iter()
                .map(|s| LogRow {
                    step: s.step,
                    time: s.time,
                    outer_iterations: s.outer_iterations,
                    block_iterations: vec![s.outer_iterations; a.q],
                    block_vcycles: s.stage_vcycles.clone(),
                    l2_error: s.l2_error,
                    counters: s.counters.clone(),
                })
                .collect();
            let residuals: Vec<(usize, Vec<f64>)> =
                rep.steps.iter().map(|s| (s.step, s.residual_history.clone())).collect();
            (rows, residuals, u, rep.counters, a.q)
        }
        path => {
            let cfg = ComplexConfig {
                path,
                mode: a.mode(),
                partitions: a.partitions,
                topology: a.topology(),
                ..Default::default()
            };
            let solver = DirectStageSolver::new(problem, a.q, a.tau, cfg)?;
            let (u, rep) = solver.solve_manufactured(0.0, a.steps)?;
            let rows: Vec<LogRow> = rep
                .steps
                .iter()
                .map(|s| LogRow {
                    step: s.step,
                    time: s.time,
                    outer_iterations: s.max_iterations(),
                    block_iterations: s.pair_iterations.clone(),
                    block_vcycles: s.pair_vcycles.clone(),
                    l2_error: s.l2_error,
                    counters: s.counters.clone(),
                })
                .collect();
            (rows, Vec::new(), u, rep.counters, a.q.div_ceil(2))
        }
    };

    let mut w = writer(out, "solve_log.csv")?;
    w.write_record(LOG_HEADER)?;
    for r in &rows {
        let c = r.counters.as_ref();
        w.write_record([
            r.step.to_string(),
            r.time.to_string(),
            a.path().to_string(),
            a.mode().to_string(),
            r.outer_iterations.to_string(),
            opt(r.block_iterations.iter().min()),
            opt(r.block_iterations.iter().max()),
            join(&r.block_vcycles),
            r.block_vcycles.iter().sum::<usize>().to_string(),
            opt(r.block_vcycles.iter().max()),
            opt(c.map(|c| c.max.vcycles)),
            opt(r.l2_error),
            opt(c.map(|c| c.sum.messages_sent)),
            opt(c.map(|c| c.sum.bytes_sent)),
            opt(c.map(|c| c.sum.barriers)),
            opt(c.map(|c| c.sum.shift_rounds)),
        ])?;
    }
    w.flush()?;

    let mut w = writer(out, "residuals.csv")?;
    w.write_record(["step", "outer_iter", "residual"])?;
    for (step, hist) in &residuals {
        for (i, r) in hist.iter().enumerate() {
            w.write_record([step.to_string(), i.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;

    if let Some(snap) = &counters {
        let grid = RankGrid::new(grid_stages, a.partitions, a.topology())?;
        write_counters(out, &grid, snap)?;
    }
    let t_final = a.tau * a.steps as f64;
    write_nodal(out, &a.heat(a.level)?, &u, t_final)?;

    let mut w = writer(out, "run.csv")?;
    w.write_record(["key", "value"])?;
    for (k, v) in [
        ("dim", a.dim.to_string()),
        ("L", a.level.to_string()),
        ("Q", a.q.to_string()),
        ("tau", a.tau.to_string()),
        ("steps", a.steps.to_string()),
        ("mode", a.mode().to_string()),
        ("path", a.path().to_string()),
        ("topology", a.topology().to_string()),
        ("B", a.partitions.to_string()),
        ("seed", a.seed.to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;

    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&LogRow) -> usize| rows.iter().map(|r| f(r) as f64).sum::<f64>() / n;
    println!(
        "{} steps, mean #G {:.1}, #V sequential {:.1}, per group {:.1}, final L2 error {}",
        rows.len(),
        mean(&|r| r.outer_iterations),
        mean(&|r| r.block_vcycles.iter().sum()),
        mean(&|r| r.block_vcycles.iter().copied().max().unwrap_or(0)),
        opt(rows.last().and_then(|r| r.l2_error)),
    );
    Ok(())
}

fn cmd_convergence(out: &FsPath, a: &ConvergenceArgs) -> Result<()> {
    a.run.validate()?;
    let cfg = StageSystemConfig {
        mode: a.run.mode(),
        partitions: a.run.partitions,
        topology: a.run.topology(),
        ..Default::default()
    };
    let mut points: Vec<(f64, f64)> = Vec::new();
    match a.kind {
        SweepKind::Time => {
            for &tau in &a.taus {
                let steps = (1.0 / tau).round() as usize;
                if steps == 0 || ((steps as f64) * tau - 1.0).abs() > 1e-9 {
                    bail!("invalid configuration for `taus`: {tau} does not divide the unit interval");
                }
                let sys = StageSystem::new(ScalarOde::decay(), a.run.q, tau, cfg)?;
                let (u, _) = sys.integrate(vec![1.0], 0.0, steps, |_, _| Ok(None))?;
                points.push((tau, (u[0] - (-1.0f64).exp()).abs()));
            }
        }
        SweepKind::Space => {
            for &level in &a.levels {
                let sys = StageSystem::new(a.run.heat(level)?, a.run.q, a.run.tau, cfg)?;
                let (_, rep) = sys.solve_manufactured(0.0, a.run.steps)?;
                let h = 1.0 / (1usize << level) as f64;
                points.push((h, rep.final_error().context("no error recorded")?));
            }
        }
    }
    let mut w = writer(out, "convergence.csv")?;
    w.write_record(["resolution", "error", "order"])?;
    let mut prev: Option<(f64, f64)> = None;
    for &(r, e) in &points {
        let order = prev.map(|(pr, pe)| (pe / e).ln() / (pr / r).ln());
        w.write_record([r.to_string(), e.to_string(), opt(order)])?;
        println!("{r:>10} {e:>12.4e} {}", order.map_or(String::new(), |o| format!("{o:.3}")));
        prev = Some((r, e));
    }
    w.flush()?;
    Ok(())
}

fn push_matrix(rows: &mut Vec<[String; 5]>, name: &str, m: &DenseMatrixF64) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            rows.push([name.into(), i.to_string(), j.to_string(), m[(i, j)].to_string(), "0".into()]);
        }
    }
}

fn cmd_tableau(out: &FsPath, q: usize) -> Result<()> {
    let t = radau_iia::<f64>(q)?;
    let lu = crout_lu(&t.a_inv)?;
    let real = spectral_real(&lu.l)?;
    let cplx = spectral_complex(&t.a_inv)?;
    let mut rows: Vec<[String; 5]> = Vec::new();
    push_matrix(&mut rows, "A", &t.a);
    for (i, v) in t.b.iter().enumerate() {
        rows.push(["b".into(), i.to_string(), "0".into(), v.to_string(), "0".into()]);
    }
    for (i, v) in t.c.iter().enumerate() {
        rows.push(["c".into(), i.to_string(), "0".into(), v.to_string(), "0".into()]);
    }
    push_matrix(&mut rows, "A_inv", &t.a_inv);
    push_matrix(&mut rows, "L", &lu.l);
    push_matrix(&mut rows, "U", &lu.u);
    for (i, v) in real.lambdas.iter().enumerate() {
        rows.push(["lambda_L".into(), i.to_string(), "0".into(), v.to_string(), "0".into()]);
    }
    push_matrix(&mut rows, "S_L", &real.s);
    push_matrix(&mut rows, "S_L_inv", &real.s_inv);
    for (i, z) in cplx.lambdas.iter().enumerate() {
        rows.push(["lambda_A_inv".into(), i.to_string(), "0".into(), z.re.to_string(), z.im.to_string()]);
    }
    let mut w = writer(out, "tableau_factors.csv")?;
    w.write_record(["matrix", "row", "col", "re", "im"])?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;

    let mut w = writer(out, "tableau.csv")?;
    let mut header = vec!["c".to_string()];
    header.extend((1..=q).map(|j| format!("a{j}")));
    w.write_record(&header)?;
    for i in 0..q {
        let mut row = vec![t.c[i].to_string()];
        row.extend((0..q).map(|j| t.a[(i, j)].to_string()));
        w.write_record(&row)?;
    }
    let mut row = vec![String::new()];
    row.extend(t.b.iter().map(|v| v.to_string()));
    w.write_record(&row)?;
    w.flush()?;
    println!("Q={q}: order {}, {} factor entries written", t.order(), rows.len());
    Ok(())
}

fn cmd_model(out: &FsPath, log: &FsPath) -> Result<()> {
    let mut r = csv::Reader::from_path(log).with_context(|| format!("reading {}", log.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("log lacks column `{name}`"));
    let (it, bv, seq, crit) =
        (col("outer_iterations")?, col("block_vcycles")?, col("sequential_vcycles")?, col("critical_vcycles")?);
    let parse = |s: &str, what: &str| -> Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            Ok(Some(s.parse().with_context(|| format!("bad {what} `{s}`"))?))
        }
    };
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let stage_vcycles = row[bv]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().with_context(|| format!("bad block_vcycles `{s}`")))
            .collect::<Result<Vec<_>>>()?;
        records.push(ScheduleRecord {
            outer_iterations: parse(&row[it], "outer_iterations")?.unwrap_or(0),
            stage_vcycles,
            critical_path: parse(&row[crit], "critical_vcycles")?,
            sequential_total: parse(&row[seq], "sequential_vcycles")?,
        });
    }
    let s = validate_records(&records)?;
    let mut w = writer(out, "model.csv")?;
    w.write_record(["stages", "steps", "mean_iterations", "mean_sequential_vcycles", "mean_group_vcycles", "speedup_bound"])?;
    w.write_record([
        s.stages.to_string(),
        s.steps.to_string(),
        s.mean_iterations.to_string(),
        s.mean_sequential_vcycles.to_string(),
        s.mean_group_vcycles.to_string(),
        s.speedup_bound.to_string(),
    ])?;
    w.flush()?;
    println!("{s}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = std::env::var_os("SPIRK_OUT").filter(|v| !v.is_empty()).map_or(cli.out, PathBuf::from);
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(&out, a),
        Command::Convergence(a) => cmd_convergence(&out, a),
        Command::Tableau { q } => cmd_tableau(&out, *q),
        Command::Model { log } => cmd_model(&out, log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
