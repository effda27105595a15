//! End-to-end acceptance suite: oracle agreement, descent and fixed-point
//! properties, and benchmark trend/magnitude reproduction. Each test prints
//! one PASS/FAIL line for its criterion.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use toposplit::assemble::{assemble_filter, assemble_operators, AssembledOperators};
use toposplit::boxqp::{oracle, solve_box_qp, BoxQp};
use toposplit::grid::{inverter_problem, mbb_problem};
use toposplit::model::{
    discreteness, hessian_model, objective_and_gradient, DensityVector, HessianKind, ProblemKind,
};
use toposplit::optim::{
    fbs_step, hessian_floor, identity_scale, move_bounds, run, tmp_active_set, tmp_step, Algorithm,
    LambdaSchedule, OptimizerConfig, RunResult,
};
use toposplit::solve::BandMatrix;

const DESK_LAMBDA: f64 = 8.0;
const DESK_LOAD: f64 = 0.2;

fn desk_ops(beta: f64) -> AssembledOperators {
    let (mesh, bc) = mbb_problem(60, 20).unwrap();
    let mut ops = assemble_operators(&mesh, &bc, beta).unwrap();
    ops.force *= DESK_LOAD;
    ops
}

fn desk_config(alg: Algorithm, hess: HessianKind, tau0: f64) -> OptimizerConfig {
    OptimizerConfig {
        algorithm: alg,
        hessian: hess,
        tau0,
        lambda: LambdaSchedule::fixed(DESK_LAMBDA),
        max_iter: 3000,
        ..OptimizerConfig::default()
    }
}

fn desk_run(alg: Algorithm, hess: HessianKind, tau0: f64) -> RunResult {
    let ops = desk_ops(0.06);
    run(
        &ops,
        ProblemKind::Compliance,
        &desk_config(alg, hess, tau0),
        None,
    )
    .unwrap()
}

struct DeskRuns {
    fbs_id: RunResult,
    fbs_rec: RunResult,
    tmp_id: RunResult,
    tmp_rec: RunResult,
    gp: RunResult,
    tau2: Vec<(&'static str, RunResult)>,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| DeskRuns {
        fbs_id: desk_run(Algorithm::Fbs, HessianKind::IdentityScaled, 1.0),
        fbs_rec: desk_run(Algorithm::Fbs, HessianKind::Reciprocal, 1.0),
        tmp_id: desk_run(Algorithm::Tmp, HessianKind::IdentityScaled, 1.0),
        tmp_rec: desk_run(Algorithm::Tmp, HessianKind::Reciprocal, 1.0),
        gp: desk_run(Algorithm::Gp, HessianKind::IdentityScaled, 1.0),
        tau2: vec![
            (
                "fbs/identity",
                desk_run(Algorithm::Fbs, HessianKind::IdentityScaled, 2.0),
            ),
            (
                "fbs/reciprocal",
                desk_run(Algorithm::Fbs, HessianKind::Reciprocal, 2.0),
            ),
            (
                "tmp/identity",
                desk_run(Algorithm::Tmp, HessianKind::IdentityScaled, 2.0),
            ),
            (
                "tmp/reciprocal",
                desk_run(Algorithm::Tmp, HessianKind::Reciprocal, 2.0),
            ),
        ],
    })
}

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    eprintln!("criterion {criterion}: {tag} ({detail})");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn monotone_violations(result: &RunResult) -> usize {
    let mut prev: Option<(f64, f64)> = None; // (lambda, j_tilde)
    let mut violations = 0;
    for r in &result.records {
        if let Some((lam, j)) = prev {
            if lam == r.lambda && r.j_tilde > j + 1e-10 * j.abs() {
                violations += 1;
            }
        }
        prev = Some((r.lambda, r.j_tilde));
    }
    violations
}

fn fd_gradient_check(
    ops: &AssembledOperators,
    kind: ProblemKind,
    lambda: f64,
    rng: &mut StdRng,
    trials: usize,
) -> f64 {
    let m = ops.mesh.num_nodes();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let values = DVector::from_fn(m, |_, _| rng.gen_range(0.2..0.9));
        let z = DensityVector::new(values.clone(), 1e-3).unwrap();
        let eval = objective_and_gradient(ops, &z, 3.0, lambda, kind).unwrap();
        let mut fd = DVector::zeros(m);
        for k in 0..m {
            let mut plus = values.clone();
            plus[k] += h;
            let mut minus = values.clone();
            minus[k] -= h;
            let jp = objective_and_gradient(
                ops,
                &DensityVector::new(plus, 1e-3).unwrap(),
                3.0,
                lambda,
                kind,
            )
            .unwrap()
            .j_tilde;
            let jm = objective_and_gradient(
                ops,
                &DensityVector::new(minus, 1e-3).unwrap(),
                3.0,
                lambda,
                kind,
            )
            .unwrap()
            .j_tilde;
            fd[k] = (jp - jm) / (2.0 * h);
        }
        let rel = (&fd - &eval.grad_j_tilde).norm() / eval.grad_j_tilde.norm();
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn criterion_01_gradient_oracle() {
    let mut rng = StdRng::seed_from_u64(42);
    let (mesh, bc) = mbb_problem(6, 2).unwrap();
    let ops = assemble_operators(&mesh, &bc, 0.06).unwrap();
    let worst_mbb = fd_gradient_check(&ops, ProblemKind::Compliance, 10.0, &mut rng, 10);
    let (mesh, bc) = inverter_problem(8, 8, 0.1, 0.1).unwrap();
    let ops = assemble_operators(&mesh, &bc, 3e-4).unwrap();
    let worst_inv = fd_gradient_check(&ops, ProblemKind::Mechanism, 0.05, &mut rng, 10);
    let worst = worst_mbb.max(worst_inv);
    verdict(
        "1",
        worst <= 1e-6,
        &format!("worst relative FD error {worst:.2e} over 20 random densities (tol 1e-6)"),
    );
}

#[test]
fn criterion_02_qp_oracle() {
    let mut rng = StdRng::seed_from_u64(7);
    let n = 10;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let bw = rng.gen_range(1..4usize);
        let mut q = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                q.add(i, j, rng.gen_range(-0.4..0.4));
            }
            q.add(i, i, rng.gen_range(2.0..4.0));
        }
        let target = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let lower = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..0.0));
        let upper = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0f64));
        let qp = BoxQp {
            q: &q,
            target: &target,
            lower: &lower,
            upper: &upper,
        };
        let sol = solve_box_qp(&qp, 1e-12, None).unwrap();
        assert!(sol.converged);
        let dense = DMatrix::from_fn(n, n, |i, j| q.get(i, j));
        let reference = oracle::brute_force(&dense, &target, &lower, &upper, 1e-10)
            .expect("oracle found no KKT point");
        worst = worst.max((&sol.x - &reference).amax());
    }
    verdict(
        "2",
        worst <= 1e-8,
        &format!("worst solver/oracle deviation {worst:.2e} over 50 instances (tol 1e-8)"),
    );
}

#[test]
fn criterion_03_monotone_descent() {
    let runs = desk_runs();
    let mut total = 0;
    let mut detail = String::new();
    for (name, result) in [
        ("fbs/identity t1", &runs.fbs_id),
        ("fbs/reciprocal t1", &runs.fbs_rec),
        ("tmp/identity t1", &runs.tmp_id),
        ("tmp/reciprocal t1", &runs.tmp_rec),
    ]
    .into_iter()
    .chain(runs.tau2.iter().map(|(n, r)| (*n, r)))
    {
        let v = monotone_violations(result);
        if v > 0 {
            detail.push_str(&format!("{name}: {v} violations; "));
        }
        total += v;
    }
    verdict(
        "3",
        total == 0,
        &format!("{total} objective increases across 8 runs {detail}"),
    );
}

#[test]
fn criterion_04_stationary_fixed_point() {
    let (mesh, bc) = mbb_problem(30, 10).unwrap();
    let mut ops = assemble_operators(&mesh, &bc, 0.06).unwrap();
    ops.force *= DESK_LOAD;
    let config = OptimizerConfig {
        lambda: LambdaSchedule::fixed(DESK_LAMBDA),
        eps1: 1e-13,
        eps2: 1e-8,
        max_iter: 30000,
        ..OptimizerConfig::default()
    };
    let out = run(&ops, ProblemKind::Compliance, &config, None).unwrap();
    let e2 = out.records.last().unwrap().e2;
    assert!(out.converged && e2 <= 1e-6, "deep run did not reach E2 <= 1e-6");
    let z = out.z.as_vector().clone();
    let lambda = out.final_lambda;
    let eval =
        objective_and_gradient(&ops, &out.z, config.p, lambda, ProblemKind::Compliance).unwrap();
    let floor = hessian_floor(lambda) * mesh.element_size.powi(2);
    let floored = ops.apply_p_transpose(
        &eval
            .state
            .energy
            .map(|e| if e.abs() < floor { floor } else { e }),
    );
    let hess = hessian_model(
        HessianKind::Reciprocal,
        &out.z,
        &floored,
        floor,
        identity_scale(&ops, lambda),
    )
    .unwrap();
    let (lo, hi) = move_bounds(&z, config.move_limit, config.delta_rho);
    let (fbs_cand, _) =
        fbs_step(&ops, &z, &hess, 1.0, &eval.grad_j_tilde, &lo, &hi, None).unwrap();
    let active = tmp_active_set(&z, &eval.grad_j_tilde, config.delta_rho, config.eps_active);
    let (tmp_cand, _) =
        tmp_step(&ops, &z, &hess, 1.0, &eval.grad_j_tilde, &lo, &hi, &active).unwrap();
    let d_fbs = (&fbs_cand - &z).amax();
    let d_tmp = (&tmp_cand - &z).amax();
    verdict(
        "4",
        d_fbs <= 1e-6 && d_tmp <= 1e-6,
        &format!("at E2 = {e2:.1e}: extra fbs_step moves {d_fbs:.1e}, tmp_step {d_tmp:.1e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_05_desk_scale_trends() {
    let runs = desk_runs();
    let bt = |r: &RunResult| -> usize { r.records.iter().map(|x| x.backtracks).sum() };
    let iters = |r: &RunResult| r.records.len();
    let zero_bt =
        bt(&runs.fbs_id) == 0 && bt(&runs.fbs_rec) == 0 && bt(&runs.tmp_id) == 0
            && bt(&runs.tmp_rec) == 0;
    let rec_faster = iters(&runs.fbs_rec) < iters(&runs.fbs_id)
        && iters(&runs.tmp_rec) < iters(&runs.tmp_id);
    let jf = runs.fbs_rec.final_eval.j_tilde;
    let jt = runs.tmp_rec.final_eval.j_tilde;
    let rel = (jf - jt).abs() / jf.abs();
    let agree = rel <= 5e-3;
    verdict(
        "5",
        zero_bt && rec_faster && agree,
        &format!(
            "(a) zero backtracks at tau0=1: {zero_bt}; (b) reciprocal faster: fbs {} < {}, tmp {} < {}; (c) FBS/TMP Jtilde rel diff {rel:.1e} (tol 5e-3)",
            iters(&runs.fbs_rec),
            iters(&runs.fbs_id),
            iters(&runs.tmp_rec),
            iters(&runs.tmp_id)
        ),
    );
}

#[test]
fn criterion_06_full_scale_magnitudes() {
    let (mesh, bc) = mbb_problem(300, 50).unwrap();
    let mut ops = assemble_operators(&mesh, &bc, 0.06).unwrap();
    ops.force *= 0.3;
    let lambda = 200.0 / ops.mesh.area();
    let config = OptimizerConfig {
        algorithm: Algorithm::Tmp,
        hessian: HessianKind::Reciprocal,
        lambda: LambdaSchedule::fixed(lambda),
        max_iter: 1500,
        ..OptimizerConfig::default()
    };
    let out = run(&ops, ProblemKind::Compliance, &config, None).unwrap();
    let v = out.final_eval.volume_fraction;
    let m = discreteness(&out.z, &ops);
    let j = out.final_eval.j_tilde;
    let mono = monotone_violations(&out);
    let ok = out.converged
        && (v - 0.512).abs() <= 0.03
        && (m - 15.0).abs() <= 4.0
        && (j - 211.0).abs() / 211.0 <= 0.10
        && mono == 0;
    verdict(
        "6",
        ok,
        &format!(
            "converged={} in {} iterations, V={v:.3} (0.512 +/- 0.03), M={m:.1}% (15 +/- 4), Jtilde={j:.1} (211 +/- 10%), monotone violations={mono}",
            out.converged,
            out.records.len()
        ),
    );
}

/// Connected components of the void phase (elements with density < 0.5,
/// 4-connectivity); proxy for the structural member count of a connected
/// design.
fn void_components(rho: &DVector<f64>, nx: usize, ny: usize) -> usize {
    let solid: Vec<bool> = (0..nx * ny).map(|e| rho[e] >= 0.5).collect();
    let mut seen = vec![false; nx * ny];
    let mut comps = 0;
    for start in 0..nx * ny {
        if solid[start] || seen[start] {
            continue;
        }
        comps += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(e) = stack.pop() {
            let (i, j) = (e % nx, e / nx);
            let mut push = |t: usize| {
                if !solid[t] && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            };
            if i > 0 {
                push(e - 1);
            }
            if i + 1 < nx {
                push(e + 1);
            }
            if j > 0 {
                push(e - nx);
            }
            if j + 1 < ny {
                push(e + nx);
            }
        }
    }
    comps
}

#[test]
fn criterion_07_beta_complexity_trend() {
    let run_beta = |beta: f64| {
        let ops = desk_ops(beta);
        let out = run(
            &ops,
            ProblemKind::Compliance,
            &desk_config(Algorithm::Tmp, HessianKind::Reciprocal, 1.0),
            None,
        )
        .unwrap();
        let rho = ops.apply_p(out.z.as_vector());
        (void_components(&rho, 60, 20), discreteness(&out.z, &ops), out.converged)
    };
    let (c06, m06, conv06) = run_beta(0.06);
    let (c01, m01, conv01) = run_beta(0.01);
    verdict(
        "7",
        conv06 && conv01 && c01 > c06 && m01 < m06,
        &format!(
            "beta=0.01: {c01} members, M={m01:.1}% vs beta=0.06: {c06} members, M={m06:.1}% (want strictly more members and lower M at 0.01)"
        ),
    );
}

#[test]
fn criterion_08_simp_exponent_trend() {
    let m_of = |p: f64| {
        let ops = desk_ops(0.06);
        let config = OptimizerConfig {
            p,
            ..desk_config(Algorithm::Tmp, HessianKind::Reciprocal, 1.0)
        };
        let out = run(&ops, ProblemKind::Compliance, &config, None).unwrap();
        assert!(out.converged);
        discreteness(&out.z, &ops)
    };
    let (m3, m4, m5) = (m_of(3.0), m_of(4.0), m_of(5.0));
    verdict(
        "8",
        m3 > m4 && m4 > m5,
        &format!("M(p=3)={m3:.1}% > M(p=4)={m4:.1}% > M(p=5)={m5:.1}%"),
    );
}

#[test]
fn criterion_09_mesh_refinement_stability() {
    use toposplit::cli::{
        refine_sweep, AlgorithmChoice, HessianChoice, LambdaConfig, LambdaRule, OptimizerSection,
        ProblemChoice, RunConfig,
    };
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        problem: ProblemChoice::Mbb,
        nx: 60,
        ny: 20,
        beta: 0.01,
        p: 3.0,
        delta_rho: 1e-3,
        load_scale: 0.45,
        k_in: 0.1,
        k_out: 0.1,
        filter_radius: 2.0,
        output: dir.path().to_path_buf(),
        lambda: LambdaConfig {
            rule: LambdaRule::Fixed,
            value: DESK_LAMBDA,
            continued: None,
        },
        optimizer: OptimizerSection {
            algorithm: AlgorithmChoice::Tmp,
            hessian: HessianChoice::Reciprocal,
            backtracking: false,
            max_iter: 3000,
            ..OptimizerSection::default()
        },
    };
    let report = refine_sweep(&config, &[1, 2, 4]).unwrap();
    let volumes: Vec<f64> = report
        .levels
        .iter()
        .map(|l| l.outcome.as_ref().expect("level failed").volume_fraction)
        .collect();
    let overlaps: Vec<f64> = report.overlaps.iter().map(|o| o.unwrap()).collect();
    let min_overlap = overlaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_dv = volumes
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    verdict(
        "9",
        min_overlap >= 0.9 && max_dv <= 0.02,
        &format!(
            "overlaps {overlaps:?} (tol >= 0.9), volume fractions {volumes:?} (consecutive diff <= 0.02)"
        ),
    );
}

#[test]
fn criterion_10_gradient_projection_inferiority() {
    let runs = desk_runs();
    let gp = runs.gp.records.len();
    let fbs = runs.fbs_id.records.len();
    verdict(
        "10",
        runs.gp.converged && gp > fbs,
        &format!("GP {gp} iterations > FBS/identity {fbs} at tau0=1"),
    );
}

#[test]
fn criterion_11_inverter_run() {
    let (mesh, bc) = inverter_problem(40, 40, 0.1, 0.1).unwrap();
    let mut ops = assemble_operators(&mesh, &bc, 3e-4).unwrap();
    ops.force *= 2.0;
    let config = OptimizerConfig {
        algorithm: Algorithm::Tmp,
        hessian: HessianKind::ReciprocalAbs,
        tau0: 0.1,
        backtracking: false,
        eps1: 3e-4,
        lambda: LambdaSchedule {
            initial: 0.02,
            continued: Some(0.15),
        },
        max_iter: 400,
        ..OptimizerConfig::default()
    };
    let out = run(&ops, ProblemKind::Mechanism, &config, None).unwrap();
    let j = out.final_eval.j;
    let v = out.final_eval.volume_fraction;
    let it = out.records.len();
    verdict(
        "11",
        out.converged && j < 0.0 && v > 0.05 && it <= 400,
        &format!(
            "converged={} in {it} iterations (<= 400), J={j:.4} (< 0), V={v:.3} (nontrivial)",
            out.converged
        ),
    );
}

#[test]
fn criterion_12_sensitivity_filter_corners() {
    let ops = desk_ops(0.06);
    let corner_intermediates = |rho: &DVector<f64>| -> usize {
        let (nx, ny, w) = (60usize, 20usize, 8usize);
        let mut count = 0;
        // block of elements at the loaded top-left corner
        for j in ny - w..ny {
            for i in 0..w {
                let r = rho[j * nx + i];
                if r > 0.2 && r < 0.8 {
                    count += 1;
                }
            }
        }
        count
    };
    let fbs = run(
        &ops,
        ProblemKind::Compliance,
        &desk_config(Algorithm::Fbs, HessianKind::Reciprocal, 1.0),
        None,
    )
    .unwrap();
    let filter = assemble_filter(&ops.mesh, 2.0 * ops.mesh.element_size).unwrap();
    let sf = run(
        &ops,
        ProblemKind::Compliance,
        &desk_config(Algorithm::SensFilter, HessianKind::Reciprocal, 1.0),
        Some(&filter),
    )
    .unwrap();
    let n_fbs = corner_intermediates(&ops.apply_p(fbs.z.as_vector()));
    let n_sf = corner_intermediates(&ops.apply_p(sf.z.as_vector()));
    let ok = sf.converged && n_sf as f64 >= 1.2 * n_fbs as f64;
    verdict(
        "12",
        ok,
        &format!(
            "sensfilter converged={} with {n_sf} near-corner intermediate elements vs FBS/reciprocal {n_fbs} (want >= 1.2x)",
            sf.converged
        ),
    );
}
