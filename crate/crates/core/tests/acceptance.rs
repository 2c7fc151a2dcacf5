//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spirk::complex_solver::{presb_assembled, presb_factors, ComplexBlock, ComplexConfig, DirectStageSolver, Path};
use spirk::dense::DenseMatrix;
use spirk::grid_fem::GridHierarchy;
use spirk::irk_solver::{Mode, SolveReport, StageSystem, StageSystemConfig};
use spirk::multigrid::VCycleConfig;
use spirk::perfmodel::{validate_against_counters, CostModel};
use spirk::problem::{assemble_shifted, HeatDiscretization, ScalarOde};
use spirk::scalar::rel_diff_inf;
use spirk::simrt::{RankGrid, Runtime, Topology};
use spirk::tableau::{radau_iia, spectral_complex};
use spirk::tensor_ops::{
    dense_combine, rotate_combine, rotate_combine_paired, sharedmem_combine, DistributedBlocks, PairedMatrix,
    StageBlockVector,
};

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn heat(dim: usize, level: usize) -> HeatDiscretization<f64> {
    let h = Arc::new(GridHierarchy::build(dim, level).expect("grid"));
    HeatDiscretization::new(h, VCycleConfig::default()).expect("discretization")
}

fn real_run(
    level: usize,
    q: usize,
    mode: Mode,
    partitions: usize,
    topology: Topology,
) -> Result<(Vec<f64>, SolveReport<f64>), String> {
    let cfg = StageSystemConfig { mode, partitions, topology, ..Default::default() };
    let sys = StageSystem::new(heat(3, level), q, 0.1, cfg).map_err(|e| e.to_string())?;
    sys.solve_manufactured(0.0, 10).map_err(|e| e.to_string())
}

fn tableau_suite() -> Outcome {
    let mut worst = [0.0f64; 3];
    for q in 1..=9 {
        let t = radau_iia::<f64>(q).map_err(|e| e.to_string())?;
        for m in 1..=2 * q - 1 {
            let s: f64 = t.b.iter().zip(&t.c).map(|(b, c)| b * c.powi(m as i32 - 1)).sum();
            worst[0] = worst[0].max((s - 1.0 / m as f64).abs());
        }
        for j in 0..q {
            worst[1] = worst[1].max((t.b[j] - t.a[(q - 1, j)]).abs());
        }
        worst[2] = worst[2].max(t.a.matmul(&t.a_inv).max_abs_diff(&DenseMatrix::identity(q)));
    }
    check(worst[0] < 1e-12, format!("order conditions off by {:.2e}", worst[0]))?;
    check(worst[1] < 1e-13, format!("b differs from last row of A by {:.2e}", worst[1]))?;
    check(worst[2] < 1e-12, format!("A A^-1 - I = {:.2e}", worst[2]))?;
    Ok(format!("order {:.1e}, stiffly accurate {:.1e}, inverse {:.1e}", worst[0], worst[1], worst[2]))
}

fn unit_upper_claim() -> Outcome {
    let mut worst = 0.0f64;
    for q in 1..=9 {
        let t = radau_iia::<f64>(q).map_err(|e| e.to_string())?;
        let f = spirk::tableau::crout_lu(&t.a_inv).map_err(|e| e.to_string())?;
        let u = f.l.inverse().map_err(|e| e.to_string())?.matmul(&t.a_inv);
        for i in 0..q {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((u[(i, j)] - target).abs());
            }
        }
    }
    check(worst < 1e-10, format!("L^-1 A^-1 deviates from unit upper triangular by {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn temporal_order() -> Outcome {
    let mut orders = Vec::new();
    for (q, min) in [(1usize, 0.8), (2, 2.8), (3, 4.8)] {
        let mut errs = Vec::new();
        for tau in [0.2f64, 0.1, 0.05, 0.025] {
            let sys = StageSystem::new(ScalarOde::decay(), q, tau, StageSystemConfig::default())
                .map_err(|e| e.to_string())?;
            let steps = (1.0 / tau).round() as usize;
            let (u, _) = sys.integrate(vec![1.0], 0.0, steps, |_, _| Ok(None)).map_err(|e| e.to_string())?;
            errs.push((u[0] - (-1.0f64).exp()).abs());
        }
        let worst = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
        check(worst >= min, format!("Q={q}: observed order {worst:.2} < {min}"))?;
        orders.push(format!("Q={q}: {worst:.2}"));
    }
    Ok(orders.join(", "))
}

fn spatial_order() -> Outcome {
    let mut slopes = Vec::new();
    for dim in [1usize, 2] {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for level in 2..=5 {
            let sys = StageSystem::new(heat(dim, level), 3, 1e-3, StageSystemConfig::default())
                .map_err(|e| e.to_string())?;
            let (_, rep) = sys.solve_manufactured(0.0, 1).map_err(|e| e.to_string())?;
            let e = rep.final_error().ok_or("no error recorded")?;
            xs.push(-(level as f64) * 2f64.ln());
            ys.push(e.ln());
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        check((slope - 2.0).abs() <= 0.2, format!("dim {dim}: slope {slope:.3}"))?;
        slopes.push(format!("dim {dim}: {slope:.3}"));
    }
    Ok(slopes.join(", "))
}

fn random_blocks(q: usize, n: usize, rng: &mut ChaCha8Rng) -> StageBlockVector<f64> {
    StageBlockVector::new((0..q).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).unwrap()
}

fn backend_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 50;
    let (mut real_gap, mut paired_gap, mut trip_gap) = (0.0f64, 0.0f64, 0.0f64);
    for q in [2usize, 4, 6, 9] {
        let np = q.div_ceil(2);
        let eig = spectral_complex(&radau_iia::<f64>(q).map_err(|e| e.to_string())?.a_inv).map_err(|e| e.to_string())?;
        for b in [1usize, 2, 4] {
            let mut rt = Runtime::new(RankGrid::new(q, b, Topology::RowMajor).map_err(|e| e.to_string())?);
            let mut rt_shared =
                Runtime::new(RankGrid::new(q, b, Topology::RowMajorPadded { node_size: 4 }).map_err(|e| e.to_string())?);
            let mut rt_pairs = Runtime::new(RankGrid::new(np, b, Topology::RowMajor).map_err(|e| e.to_string())?);
            for _ in 0..20 {
                let d = DenseMatrix::from_fn(q, q, |_, _| rng.gen_range(-1.0..1.0));
                let u = random_blocks(q, n, &mut rng);
                let reference = dense_combine(&d, &u).map_err(|e| e.to_string())?.to_flat();
                let dist = DistributedBlocks::scatter(&u, 1, b);
                let rot = rotate_combine(&d, &dist, &mut rt).map_err(|e| e.to_string())?.gather().to_flat();
                let shm = sharedmem_combine(&d, &dist, &mut rt_shared).map_err(|e| e.to_string())?.gather().to_flat();
                for v in [&rot, &shm] {
                    real_gap = real_gap.max(v.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                }

                let dc = DenseMatrix::from_fn(np, q, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                let pm = PairedMatrix::real_to_complex(&dc).map_err(|e| e.to_string())?;
                let got = rotate_combine_paired(&pm, &DistributedBlocks::scatter(&u, 2, b), &mut rt_pairs)
                    .map_err(|e| e.to_string())?
                    .gather();
                for p in 0..np {
                    for i in 0..n {
                        let z: Complex64 = (0..q).map(|j| dc[(p, j)] * u.block(j)[i]).sum();
                        paired_gap = paired_gap.max((z.re - got.block(2 * p)[i]).abs());
                        paired_gap = paired_gap.max((z.im - got.block(2 * p + 1)[i]).abs());
                    }
                }

                let to = DenseMatrix::from_fn(np, q, |p, j| eig.s_inv[(eig.pairs[p].index, j)]);
                let from = DenseMatrix::from_fn(q, np, |i, p| {
                    let pair = &eig.pairs[p];
                    eig.s[(i, pair.index)] * if pair.partner.is_some() { 2.0 } else { 1.0 }
                });
                let to = PairedMatrix::real_to_complex(&to).map_err(|e| e.to_string())?;
                let from = PairedMatrix::complex_to_real(&from).map_err(|e| e.to_string())?;
                let w = rotate_combine_paired(&to, &DistributedBlocks::scatter(&u, 2, b), &mut rt_pairs)
                    .map_err(|e| e.to_string())?;
                let back = rotate_combine_paired(&from, &w, &mut rt_pairs).map_err(|e| e.to_string())?.gather();
                let back: Vec<f64> = back.blocks()[..q].concat();
                trip_gap = trip_gap.max(rel_diff_inf(&back, &u.to_flat()));
            }
        }
    }
    check(real_gap < 1e-13, format!("rotate/sharedmem vs dense: {real_gap:.2e}"))?;
    check(paired_gap < 1e-13, format!("paired rotation vs complex oracle: {paired_gap:.2e}"))?;
    check(trip_gap < 1e-10, format!("S then S^-1 round trip: {trip_gap:.2e}"))?;
    Ok(format!("real {real_gap:.1e}, paired {paired_gap:.1e}, round trip {trip_gap:.1e}"))
}

/// Reports kept for the model validation.
#[derive(Default)]
struct Ledger {
    pairs: Vec<(SolveReport<f64>, SolveReport<f64>)>,
    parallel_only: Vec<SolveReport<f64>>,
}

fn mode_equivalence(ledger: &mut Ledger) -> Outcome {
    let mut notes = Vec::new();
    for q in [1usize, 2, 4] {
        let (us, rs) = real_run(4, q, Mode::Sequential, 1, Topology::RowMajor)?;
        let (up, rp) = real_run(4, q, Mode::StageParallel, 2, Topology::RowMajor)?;
        let (ub, _) = real_run(4, q, Mode::Batched, 1, Topology::RowMajor)?;
        let (uc, _) = real_run(4, q, Mode::StageParallel, 2, Topology::ColumnMajor)?;
        let (ud, _) = real_run(4, q, Mode::StageParallel, 2, Topology::RowMajorPadded { node_size: 4 })?;
        let modes = rel_diff_inf(&up, &us).max(rel_diff_inf(&ub, &us));
        let topo = rel_diff_inf(&uc, &up).max(rel_diff_inf(&ud, &up));
        check(modes < 1e-8, format!("Q={q}: modes differ by {modes:.2e}"))?;
        check(topo < 1e-12, format!("Q={q}: topologies differ by {topo:.2e}"))?;
        notes.push(format!("Q={q}: modes {modes:.1e}, topologies {topo:.1e}"));
        ledger.pairs.push((rp, rs));
    }
    Ok(notes.join(", "))
}

fn iteration_counts(ledger: &mut Ledger) -> Outcome {
    let mut notes = Vec::new();
    for (q, g_ref, v_ref) in [(2usize, 5.0, 6.0), (4, 7.0, 8.0)] {
        let (_, rep) = real_run(5, q, Mode::StageParallel, 2, Topology::RowMajor)?;
        let (g, v) = (rep.mean_outer_iterations(), rep.mean_group_vcycles());
        check((g - g_ref).abs() <= 2.0, format!("Q={q}: #G {g:.1} vs {g_ref:.1}"))?;
        check((v - v_ref).abs() <= 3.0, format!("Q={q}: per-group #V {v:.1} vs {v_ref:.1}"))?;
        notes.push(format!("Q={q}: {g:.1} ({v:.1}) seq #V {:.1}", rep.mean_sequential_vcycles()));
        ledger.parallel_only.push(rep);
    }
    let cfg = ComplexConfig { path: Path::ComplexPresb, ..Default::default() };
    let d = DirectStageSolver::new(heat(3, 5), 2, 0.1, cfg).map_err(|e| e.to_string())?;
    let (_, rep) = d.solve_manufactured(0.0, 10).map_err(|e| e.to_string())?;
    let (g, v) = (rep.mean_max_iterations(), rep.mean_max_vcycles());
    check((g - 6.0).abs() <= 2.0, format!("PRESB #G {g:.1} vs 6.0"))?;
    check((v - 14.0).abs() <= 3.0, format!("PRESB #V {v:.1} vs 14.0"))?;
    notes.push(format!("PRESB Q=2: {g:.1} ({v:.1})"));
    Ok(notes.join(", "))
}

fn model_validation(ledger: &Ledger) -> Outcome {
    check(!ledger.pairs.is_empty(), "no stage-parallel runs to validate")?;
    for (par, seq) in &ledger.pairs {
        validate_against_counters(par, Some(seq)).map_err(|e| e.to_string())?;
        for (p, s) in par.steps.iter().zip(&seq.steps) {
            check(
                s.sequential_vcycles() == par.stages * p.group_vcycles(),
                format!("Q={}: sequential {} != Q x {}", par.stages, s.sequential_vcycles(), p.group_vcycles()),
            )?;
        }
    }
    for par in &ledger.parallel_only {
        validate_against_counters(par, None).map_err(|e| e.to_string())?;
        for p in &par.steps {
            check(p.sequential_vcycles() == par.stages * p.group_vcycles(), "stage counts not uniform")?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let q = rng.gen_range(1..=9);
        let costs: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..100.0)).collect();
        let bound = CostModel::new(0.0, costs).map_err(|e| e.to_string())?.speedup_bound();
        check(bound <= q as f64 * (1.0 + 1e-12), format!("bound {bound} exceeds Q={q}"))?;
    }
    for q in [2usize, 4, 9] {
        let mut rt = Runtime::new(RankGrid::new(q, 2, Topology::RowMajor).map_err(|e| e.to_string())?);
        let u = random_blocks(q, 10, &mut rng);
        let d = DenseMatrix::identity(q);
        rotate_combine(&d, &DistributedBlocks::scatter(&u, 1, 2), &mut rt).map_err(|e| e.to_string())?;
        let c = rt.counters();
        check(
            c.per_rank.iter().all(|r| r.shift_rounds == (q - 1) as u64),
            format!("Q={q}: shift rounds per rank {:?}", c.per_rank.iter().map(|r| r.shift_rounds).collect::<Vec<_>>()),
        )?;
    }
    Ok(format!("{} runs validated, 1000 random bounds, Q-1 shift rounds", ledger.pairs.len() + ledger.parallel_only.len()))
}

fn presb_identity() -> Outcome {
    let p = heat(1, 4);
    let n = spirk::problem::LinearProblem::n(&p);
    let (re, im, tau) = (2.0, 2f64.sqrt(), 0.1);
    let k = assemble_shifted(&p, re, tau);
    let m = assemble_shifted(&p, im, 0.0);
    let assembled = presb_assembled(&k, &m);
    let [l, mid, r] = presb_factors(&k, &m);
    let fact = l.matmul(&mid).matmul(&r).max_abs_diff(&assembled);
    check(fact < 1e-14, format!("three-factor product off by {fact:.2e}"))?;

    let block = ComplexBlock::new(&p, re, im, tau);
    let h = assemble_shifted(&p, re + im, tau).lu().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let rr: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ri: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
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
            .map_err(|e| e.to_string())?;
        let back = assembled.matvec(&[zr, zi].concat());
        let r = [rr, ri].concat();
        worst = worst.max(back.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst < 1e-12, format!("P presb_apply(r) - r = {worst:.2e}"))?;
    Ok(format!("n={n}: factors {fact:.1e}, inverse {worst:.1e}"))
}

fn path_agreement() -> Outcome {
    let (ur, _) = real_run(4, 2, Mode::Sequential, 1, Topology::RowMajor)?;
    let cfg = ComplexConfig { path: Path::ComplexPresb, ..Default::default() };
    let d = DirectStageSolver::new(heat(3, 4), 2, 0.1, cfg).map_err(|e| e.to_string())?;
    let (uc, _) = d.solve_manufactured(0.0, 10).map_err(|e| e.to_string())?;
    let gap = rel_diff_inf(&uc, &ur);
    check(gap < 1e-8, format!("paths differ by {gap:.2e}"))?;
    Ok(format!("relative gap {gap:.1e}"))
}

fn report(id: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = run();
    let elapsed = start.elapsed();
    let outcome = match outcome {
        Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.1?} > {limit:?}")),
        other => other,
    };
    match &outcome {
        Ok(msg) => println!("PASS {id:>2} {name}: {msg} [{elapsed:.2?}]"),
        Err(msg) => println!("FAIL {id:>2} {name}: {msg} [{elapsed:.2?}]"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ledger = Ledger::default();
    let mut ok = true;
    ok &= report(1, "tableau suite", secs(1), tableau_suite);
    ok &= report(2, "unit upper triangular factor", secs(1), unit_upper_claim);
    ok &= report(3, "temporal order", secs(5), temporal_order);
    ok &= report(4, "spatial order", secs(30), spatial_order);
    ok &= report(5, "backend equivalence", secs(10), backend_equivalence);
    ok &= report(6, "mode equivalence", secs(300), || mode_equivalence(&mut ledger));
    ok &= report(7, "iteration counts", secs(900), || iteration_counts(&mut ledger));
    ok &= report(8, "performance model", secs(60), || model_validation(&ledger));
    ok &= report(9, "PRESB identity", secs(1), presb_identity);
    ok &= report(10, "path agreement", secs(120), path_agreement);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
