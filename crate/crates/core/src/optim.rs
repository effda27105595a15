//! Outer optimization loop: forward-backward splitting, two-metric
//! projection, gradient projection, and the optimality-criteria /
//! sensitivity-filtering baselines, with move limits, Armijo backtracking,
//! volume-penalty continuation, and convergence monitoring.

use crate::assemble::{AssembledOperators, FilterOperator};
use crate::boxqp::{solve_box_qp, BoundState, BoxQp};
use crate::error::{Error, Result};
use crate::model::{
    hessian_model, objective_and_gradient, DensityVector, Evaluation, HessianKind, HessianModel,
    ProblemKind,
};
use crate::solve::{factorize, BandMatrix};
use nalgebra::DVector;

/// Outer-iteration algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Forward-backward splitting with a box-QP projection in the step metric.
    Fbs,
    /// Two-metric projection: scaled gradient step, Euclidean clamp.
    Tmp,
    /// Plain gradient projection with the `α = 4λA` scaling.
    Gp,
    /// Optimality-criteria fixed point.
    Oc,
    /// OC with Helmholtz-filtered sensitivities.
    SensFilter,
}

/// Volume-penalty schedule: fixed, or bumped once the objective first turns
/// negative (compliant-mechanism continuation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    pub initial: f64,
    /// Second-phase value, applied at the first iterate with `J < 0`.
    pub continued: Option<f64>,
}

impl LambdaSchedule {
    pub fn fixed(value: f64) -> Self {
        LambdaSchedule {
            initial: value,
            continued: None,
        }
    }
}

/// Everything the outer loop needs besides the assembled problem.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub hessian: HessianKind,
    /// Initial step size τ₀.
    pub tau0: f64,
    /// Backtracking shrink factor σ.
    pub sigma: f64,
    /// Armijo descent constant ν.
    pub nu: f64,
    /// Move limit m_n (constant schedule); 1 disables it.
    pub move_limit: f64,
    /// Active-set enlargement ε for the two-metric scaling.
    pub eps_active: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// When false, every step is accepted at τ₀ (fixed-step mode).
    pub backtracking: bool,
    pub lambda: LambdaSchedule,
    /// SIMP exponent.
    pub p: f64,
    pub delta_rho: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Fbs,
            hessian: HessianKind::Reciprocal,
            tau0: 1.0,
            sigma: 0.6,
            nu: 1e-3,
            move_limit: 1.0,
            eps_active: 1e-3,
            eps1: 1e-5,
            eps2: 1e-4,
            max_iter: 1000,
            max_backtracks: 30,
            backtracking: true,
            lambda: LambdaSchedule::fixed(1.0),
            p: 3.0,
            delta_rho: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(msg.to_string()))
            }
        };
        check(self.tau0 > 0.0, "tau0 must be positive")?;
        check(
            self.sigma > 0.0 && self.sigma < 1.0,
            "sigma must lie in (0, 1)",
        )?;
        check(self.nu > 0.0 && self.nu < 1.0, "nu must lie in (0, 1)")?;
        check(
            self.move_limit > 0.0 && self.move_limit <= 1.0,
            "move limit must lie in (0, 1]",
        )?;
        check(self.eps_active > 0.0, "eps_active must be positive")?;
        check(
            self.eps1 > 0.0 && self.eps2 > 0.0,
            "tolerances must be positive",
        )?;
        check(self.max_iter > 0, "max_iter must be positive")?;
        check(self.lambda.initial > 0.0, "lambda must be positive")?;
        check(self.p >= 1.0, "penalty exponent must be at least 1")?;
        check(
            self.delta_rho > 0.0 && self.delta_rho < 1.0,
            "density floor must lie in (0, 1)",
        )?;
        Ok(())
    }
}

/// Indices sitting near a bound with the gradient pushing outward.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty() && self.upper.is_empty()
    }

    /// Membership mask over `m` components for the union set.
    pub fn mask(&self, m: usize) -> Vec<bool> {
        let mut mask = vec![false; m];
        for &k in self.lower.iter().chain(self.upper.iter()) {
            mask[k] = true;
        }
        mask
    }
}

/// Per-iteration log row.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub n: usize,
    pub tau: f64,
    pub backtracks: usize,
    pub j: f64,
    pub r: f64,
    pub volume_fraction: f64,
    pub j_tilde: f64,
    pub e1: f64,
    pub e2: f64,
    pub active_set_size: usize,
    pub lambda: f64,
}

/// Outcome of a full optimization run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub z: DensityVector,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub final_eval: Evaluation,
    pub final_lambda: f64,
}

/// Move-limit bounds `[max(δ_ρ, z - m), min(1, z + m)]`.
pub fn move_bounds(
    z: &DVector<f64>,
    move_limit: f64,
    delta_rho: f64,
) -> (DVector<f64>, DVector<f64>) {
    let lower = z.map(|v| (v - move_limit).max(delta_rho));
    let upper = z.map(|v| (v + move_limit).min(1.0));
    (lower, upper)
}

/// Step metric `H + τG` as a band matrix.
pub fn step_metric(ops: &AssembledOperators, hess: &HessianModel, tau: f64) -> BandMatrix {
    let mut metric = ops.g.scaled(tau);
    metric.add_diagonal(&hess.diag);
    metric
}

/// One forward-backward step: interim `z* = z - τ(H+τG)^{-1}∇J̃`, then the
/// exact projection onto the move-limit box in the `H+τG` metric.
pub fn fbs_step(
    ops: &AssembledOperators,
    z: &DVector<f64>,
    hess: &HessianModel,
    tau: f64,
    grad: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    warm_start: Option<&[BoundState]>,
) -> Result<(DVector<f64>, Vec<BoundState>)> {
    let metric = step_metric(ops, hess, tau);
    let fact = factorize(&metric)?;
    let interim = z - tau * fact.solve(grad)?;
    let qp = BoxQp {
        q: &metric,
        target: &interim,
        lower,
        upper,
    };
    let sol = solve_box_qp(&qp, 1e-9, warm_start)?;
    if !sol.converged {
        return Err(Error::QpIterationCap(sol.iterations));
    }
    Ok((sol.x, sol.bounds))
}

/// Active constraints: near the lower bound with a positive gradient, or
/// near the upper bound with a negative gradient.
pub fn tmp_active_set(
    z: &DVector<f64>,
    grad: &DVector<f64>,
    delta_rho: f64,
    eps_active: f64,
) -> ActiveSet {
    let mut active = ActiveSet::default();
    for k in 0..z.len() {
        if z[k] <= delta_rho + eps_active && grad[k] > 0.0 {
            active.lower.push(k);
        } else if z[k] >= 1.0 - eps_active && grad[k] < 0.0 {
            active.upper.push(k);
        }
    }
    active
}

/// Two-metric scaling `D`: `H + τG` with the off-diagonal entries of every
/// active row and column zeroed out.
pub fn build_scaling(
    ops: &AssembledOperators,
    hess: &HessianModel,
    tau: f64,
    active: &ActiveSet,
) -> BandMatrix {
    let metric = step_metric(ops, hess, tau);
    if active.is_empty() {
        return metric;
    }
    let mask = active.mask(metric.dim());
    let n = metric.dim();
    let bw = metric.bandwidth();
    let mut d = BandMatrix::zeros(n, bw);
    for i in 0..n {
        d.add(i, i, metric.get(i, i));
        for j in i.saturating_sub(bw)..i {
            if !mask[i] && !mask[j] {
                d.add(i, j, metric.get(i, j));
            }
        }
    }
    d
}

/// One two-metric step: scaled interim point clamped componentwise onto the
/// move-limit box. Also returns the Armijo direction `d` (equal to
/// `z - candidate` on the active set and `τD^{-1}∇J̃` elsewhere).
pub fn tmp_step(
    ops: &AssembledOperators,
    z: &DVector<f64>,
    hess: &HessianModel,
    tau: f64,
    grad: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    active: &ActiveSet,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = build_scaling(ops, hess, tau, active);
    let fact = factorize(&d)?;
    let scaled = fact.solve(grad)?;
    let candidate = DVector::from_fn(z.len(), |k, _| {
        (z[k] - tau * scaled[k]).max(lower[k]).min(upper[k])
    });
    let mask = active.mask(z.len());
    let direction = DVector::from_fn(z.len(), |k, _| {
        if mask[k] {
            z[k] - candidate[k]
        } else {
            tau * scaled[k]
        }
    });
    Ok((candidate, direction))
}

/// Gradient-projection step: clamp of `z - (τ/α)∇J̃` onto the full box
/// (no move limits).
pub fn gp_step(
    z: &DVector<f64>,
    grad: &DVector<f64>,
    tau: f64,
    alpha: f64,
    delta_rho: f64,
) -> DVector<f64> {
    DVector::from_fn(z.len(), |k, _| {
        (z[k] - tau / alpha * grad[k]).max(delta_rho).min(1.0)
    })
}

/// Nodal energy ratio `e_λ = [PᵀE]_k / (λ v_k)` for the OC update; `v` is
/// the volume gradient, so `e_λ ≡ 1` exactly at interior stationarity.
fn nodal_energy_ratio(
    ops: &AssembledOperators,
    pt_energy: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if pt_energy.iter().any(|&e| e < 0.0) {
        return Err(Error::NotCompliance);
    }
    Ok(DVector::from_fn(pt_energy.len(), |k, _| {
        pt_energy[k] / (lambda * ops.v[k])
    }))
}

/// Optimality-criteria fixed-point update `clamp(z √e_λ)`.
pub fn oc_step(
    ops: &AssembledOperators,
    z: &DVector<f64>,
    pt_energy: &DVector<f64>,
    lambda: f64,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    let e = nodal_energy_ratio(ops, pt_energy, lambda)?;
    Ok(DVector::from_fn(z.len(), |k, _| {
        (z[k] * e[k].sqrt()).max(lower[k]).min(upper[k])
    }))
}

/// Sensitivity-filtered OC update `clamp(√(z · F[z e_λ]))`; negative
/// filtered values are floored at zero.
pub fn sensfilter_step(
    ops: &AssembledOperators,
    z: &DVector<f64>,
    pt_energy: &DVector<f64>,
    lambda: f64,
    filter: &FilterOperator,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    let e = nodal_energy_ratio(ops, pt_energy, lambda)?;
    let field = z.component_mul(&e);
    let filtered = filter.apply(&field)?;
    Ok(DVector::from_fn(z.len(), |k, _| {
        (z[k] * filtered[k].max(0.0))
            .sqrt()
            .max(lower[k])
            .min(upper[k])
    }))
}

/// Outcome of one backtracking line search.
#[derive(Debug, Clone, Copy)]
pub struct BacktrackReport {
    pub tau: f64,
    pub backtracks: usize,
    /// False when the search exhausted `max_backtracks` without satisfying
    /// the descent condition (the best candidate is still returned).
    pub accepted: bool,
}

/// Armijo backtracking along `τ = σ^k τ₀`. The step closure maps a step
/// size to a candidate and (optionally) the search direction to use on the
/// Armijo right-hand side; when absent, `z - candidate` is used.
#[allow(clippy::too_many_arguments)]
pub fn backtrack<E>(
    z: &DVector<f64>,
    j_tilde: f64,
    grad: &DVector<f64>,
    tau0: f64,
    sigma: f64,
    nu: f64,
    max_backtracks: usize,
    mut step: impl FnMut(f64) -> Result<(DVector<f64>, Option<DVector<f64>>)>,
    mut evaluate: impl FnMut(&DVector<f64>) -> Result<E>,
    j_of: impl Fn(&E) -> f64,
) -> Result<(DVector<f64>, E, BacktrackReport)> {
    let mut best: Option<(DVector<f64>, E, f64)> = None;
    let mut tau = tau0;
    for k in 0..=max_backtracks {
        let (candidate, direction) = step(tau)?;
        let eval = evaluate(&candidate)?;
        let j_candidate = j_of(&eval);
        let rhs = match &direction {
            Some(d) => d.dot(grad),
            None => (z - &candidate).dot(grad),
        };
        if j_tilde - j_candidate >= nu * rhs {
            return Ok((
                candidate,
                eval,
                BacktrackReport {
                    tau,
                    backtracks: k,
                    accepted: true,
                },
            ));
        }
        if best.as_ref().map_or(true, |(_, _, jb)| j_candidate < *jb) {
            best = Some((candidate, eval, j_candidate));
        }
        tau *= sigma;
    }
    let (candidate, eval, _) = best.expect("at least one candidate was evaluated");
    Ok((
        candidate,
        eval,
        BacktrackReport {
            tau: tau / sigma,
            backtracks: max_backtracks,
            accepted: false,
        },
    ))
}

/// Convergence measures: relative objective decrease `E1` and the
/// projected-gradient residual `E2 = ‖clamp(z - ∇J̃) - z‖ / ‖z‖`, with the
/// clamp taken onto the feasible box `[δ_ρ, 1]` (a clamp onto `[0, 1]`
/// would leave every floor component with an outward gradient contributing
/// δ_ρ to the residual, making tight tolerances unreachable).
pub fn convergence(
    z_next: &DVector<f64>,
    grad_next: &DVector<f64>,
    j_tilde_prev: f64,
    j_tilde_next: f64,
    delta_rho: f64,
    eps1: f64,
    eps2: f64,
) -> (f64, f64, bool) {
    let e1 = (j_tilde_next - j_tilde_prev).abs() / j_tilde_prev.abs().max(f64::MIN_POSITIVE);
    let mut num = 0.0;
    for k in 0..z_next.len() {
        let projected = (z_next[k] - grad_next[k]).clamp(delta_rho, 1.0);
        num += (projected - z_next[k]).powi(2);
    }
    let e2 = num.sqrt() / z_next.norm().max(f64::MIN_POSITIVE);
    (e1, e2, e1 <= eps1 && e2 <= eps2)
}

/// Hessian floor `δ_E = 10⁻³ λ`.
pub fn hessian_floor(lambda: f64) -> f64 {
    1e-3 * lambda
}

/// Identity-metric scale `α = 4λA` with `A` the element area.
pub fn identity_scale(ops: &AssembledOperators, lambda: f64) -> f64 {
    let a = ops.mesh.element_size;
    4.0 * lambda * a * a
}

/// Runs the configured algorithm from the uniform half-density start.
pub fn run(
    ops: &AssembledOperators,
    kind: ProblemKind,
    config: &OptimizerConfig,
    filter: Option<&FilterOperator>,
) -> Result<RunResult> {
    config.validate()?;
    if config.algorithm == Algorithm::SensFilter && filter.is_none() {
        return Err(Error::InvalidArgument(
            "sensitivity filtering requires an assembled filter".into(),
        ));
    }
    // the plain reciprocal curvature can turn negative for mechanisms;
    // promote to the absolute-value variant
    let hessian_kind = match (kind, config.hessian) {
        (ProblemKind::Mechanism, HessianKind::Reciprocal) => HessianKind::ReciprocalAbs,
        (_, h) => h,
    };

    let m = ops.mesh.num_nodes();
    let mut z = DensityVector::uniform(m, 0.5, config.delta_rho)?;
    let mut lambda = config.lambda.initial;
    let mut continuation_pending = config.lambda.continued.is_some();
    let mut eval = objective_and_gradient(ops, &z, config.p, lambda, kind)?;
    let mut warm: Option<Vec<BoundState>> = None;
    let mut records = Vec::new();
    let mut converged = false;

    for n in 1..=config.max_iter {
        if continuation_pending && eval.j < 0.0 {
            lambda = config.lambda.continued.unwrap();
            continuation_pending = false;
            warm = None;
            eval = objective_and_gradient(ops, &z, config.p, lambda, kind)?;
        }

        let zv = z.as_vector().clone();
        let (lower, upper) = move_bounds(&zv, config.move_limit, config.delta_rho);
        let pt_energy = ops.apply_p_transpose(&eval.state.energy);
        // energy-density floor E ∧ δ_E applied per element (integrated over
        // the element area) before the scatter; keeps the reciprocal
        // curvature bounded away from zero everywhere
        let energy_floor = hessian_floor(lambda) * ops.mesh.element_size.powi(2);
        let floored = ops.apply_p_transpose(&eval.state.energy.map(|e| {
            if e.abs() < energy_floor {
                energy_floor
            } else {
                e
            }
        }));
        let grad = eval.grad_j_tilde.clone();
        let j_prev = eval.j_tilde;

        let hess = hessian_model(
            hessian_kind,
            &z,
            &floored,
            energy_floor,
            identity_scale(ops, lambda),
        )?;
        let alpha = identity_scale(ops, lambda);

        let evaluate = |cand: &DVector<f64>| -> Result<Evaluation> {
            let zc = DensityVector::new(cand.clone(), config.delta_rho)?;
            objective_and_gradient(ops, &zc, config.p, lambda, kind)
        };

        let mut active_size = 0;
        let mut new_warm: Option<Vec<BoundState>> = None;
        let (z_next, eval_next, report) = match config.algorithm {
            Algorithm::Fbs => {
                let warm_ref = warm.clone();
                let mut last_bounds: Option<Vec<BoundState>> = None;
                let out = run_search(config, &zv, j_prev, &grad, |tau| {
                    let (cand, bounds) = fbs_step(
                        ops,
                        &zv,
                        &hess,
                        tau,
                        &grad,
                        &lower,
                        &upper,
                        warm_ref.as_deref(),
                    )?;
                    last_bounds = Some(bounds);
                    Ok((cand, None))
                }, evaluate)?;
                new_warm = last_bounds;
                out
            }
            Algorithm::Tmp => {
                let active = tmp_active_set(&zv, &grad, config.delta_rho, config.eps_active);
                active_size = active.len();
                run_search(config, &zv, j_prev, &grad, |tau| {
                    let (cand, dir) =
                        tmp_step(ops, &zv, &hess, tau, &grad, &lower, &upper, &active)?;
                    Ok((cand, Some(dir)))
                }, evaluate)?
            }
            Algorithm::Gp => run_search(config, &zv, j_prev, &grad, |tau| {
                Ok((gp_step(&zv, &grad, tau, alpha, config.delta_rho), None))
            }, evaluate)?,
            Algorithm::Oc => {
                let cand = oc_step(ops, &zv, &pt_energy, lambda, &lower, &upper)?;
                let ev = evaluate(&cand)?;
                (
                    cand,
                    ev,
                    BacktrackReport {
                        tau: 1.0,
                        backtracks: 0,
                        accepted: true,
                    },
                )
            }
            Algorithm::SensFilter => {
                let cand = sensfilter_step(
                    ops,
                    &zv,
                    &pt_energy,
                    lambda,
                    filter.unwrap(),
                    &lower,
                    &upper,
                )?;
                let ev = evaluate(&cand)?;
                (
                    cand,
                    ev,
                    BacktrackReport {
                        tau: 1.0,
                        backtracks: 0,
                        accepted: true,
                    },
                )
            }
        };
        warm = new_warm.or(warm);

        let (e1, mut e2, mut is_converged) = convergence(
            &z_next,
            &eval_next.grad_j_tilde,
            j_prev,
            eval_next.j_tilde,
            config.delta_rho,
            config.eps1,
            config.eps2,
        );
        if matches!(config.algorithm, Algorithm::Oc | Algorithm::SensFilter) {
            // the fixed points of the OC-type updates are not stationary
            // points of J̃, so the projected-gradient residual never
            // vanishes there; measure the fixed-point residual instead
            e2 = (&z_next - &zv).norm() / zv.norm().max(f64::MIN_POSITIVE);
            is_converged = e1 <= config.eps1 && e2 <= config.eps2;
        }
        z = DensityVector::new(z_next, config.delta_rho)?;
        eval = eval_next;
        records.push(IterationRecord {
            n,
            tau: report.tau,
            backtracks: report.backtracks,
            j: eval.j,
            r: eval.r,
            volume_fraction: eval.volume_fraction,
            j_tilde: eval.j_tilde,
            e1,
            e2,
            active_set_size: active_size,
            lambda,
        });

        if is_converged {
            if continuation_pending {
                // converged in the low-penalty phase without the objective
                // turning negative: force the continuation and keep going
                lambda = config.lambda.continued.unwrap();
                continuation_pending = false;
                warm = None;
                eval = objective_and_gradient(ops, &z, config.p, lambda, kind)?;
            } else {
                converged = true;
                break;
            }
        }
    }

    Ok(RunResult {
        z,
        records,
        converged,
        final_eval: eval,
        final_lambda: lambda,
    })
}

/// Wraps the step closure in Armijo backtracking, or takes a single fixed
/// step at τ₀ when backtracking is disabled.
fn run_search(
    config: &OptimizerConfig,
    z: &DVector<f64>,
    j_tilde: f64,
    grad: &DVector<f64>,
    mut step: impl FnMut(f64) -> Result<(DVector<f64>, Option<DVector<f64>>)>,
    evaluate: impl FnMut(&DVector<f64>) -> Result<Evaluation>,
) -> Result<(DVector<f64>, Evaluation, BacktrackReport)> {
    if config.backtracking {
        backtrack(
            z,
            j_tilde,
            grad,
            config.tau0,
            config.sigma,
            config.nu,
            config.max_backtracks,
            step,
            evaluate,
            |e| e.j_tilde,
        )
    } else {
        let mut evaluate = evaluate;
        let (candidate, _) = step(config.tau0)?;
        let eval = evaluate(&candidate)?;
        Ok((
            candidate,
            eval,
            BacktrackReport {
                tau: config.tau0,
                backtracks: 0,
                accepted: true,
            },
        ))
    }
}
