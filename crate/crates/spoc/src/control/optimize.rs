//! Projected-gradient / damped fixed-point solver for the discrete control
//! problem.
//!
//! P0 mode iterates `U <- P(U - s (mbar + nu U))` with the elementwise
//! projection P and a default step `s = 1 / (nu + Lhat)`. ClampedP1 mode
//! iterates the damped fixed point `phi <- (1 - theta) phi +
//! theta (-m(clamp(phi)) / nu)`, whose fixed points satisfy
//! `U = P(-m / nu)`. `Lhat` is a power-iteration estimate of the norm of
//! the composed linear map (control -> multiplier at zero target).
//!
//! Both modes terminate on the fixed-point residual
//! `|U - P(U - s (m + nu U))|` with the probe step `s = 1/nu`, i.e.
//! `|U - P(-m/nu)|` in the ensemble-time-space L^2 norm. Cost increases
//! trigger backtracking (halve the step and retry); running out of step is
//! reported as divergence together with the cost history.

use crate::control::cost::{control_field_distance, evaluate, fixed_point_control, CostParams};
use crate::control::{BoxBounds, ControlField, ControlMode};
use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::forward::{solve_forward_tree, Source};
use crate::noise::{AdaptedField, TreeView};

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub mode: ControlMode,
    /// P0 gradient step; `None` picks `1 / (nu + Lhat)`.
    pub step_size: Option<f64>,
    /// ClampedP1 damping in (0, 1]; `None` picks `min(1, 1.8 nu/(nu + Lhat))`.
    pub damping: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub backtracking: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            mode: ControlMode::ClampedP1,
            step_size: None,
            damping: None,
            tol: 1e-8,
            max_iters: 500,
            backtracking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub control: ControlField,
    pub cost_history: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Estimated norm of the composed linear map (when estimated).
    pub lipschitz_estimate: Option<f64>,
}

/// Power-iteration estimate of the norm of `D -> multiplier(S0 D)` on
/// adapted V_h fields, in the ensemble-time-space L^2 norm.
pub fn estimate_operator_norm(
    space: &FemSpace,
    view: &TreeView,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    let mut d = AdaptedField::zero_intervals(view, space.dim());
    d.randomize_gaussian(seed, 1.0);
    let norm = |f: &AdaptedField| -> f64 {
        let tau = view.tau();
        let mut s = 0.0;
        for step in 0..view.steps() {
            let w = view.node_weight(step);
            for node in 0..f.nodes_at(step) {
                let v = f.node(step, node);
                s += w * tau * space.inner(v, v);
            }
        }
        s.max(0.0).sqrt()
    };
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let n = norm(&d);
        if n == 0.0 {
            return Ok(0.0);
        }
        for l in 0..d.n_levels() {
            for v in d.level_mut(l).iter_mut() {
                *v /= n;
            }
        }
        let states = solve_forward_tree(space, view, &Source::Adapted(&d))?;
        let sweep = crate::backward::backward_sweep(
            space,
            view,
            |step, node, out| {
                space.mass().matvec_into(states.node(step, node), out);
                for v in out.iter_mut() {
                    *v *= view.tau();
                }
            },
            true,
            false,
        )?;
        d = sweep.multiplier;
        lambda = norm(&d);
    }
    Ok(lambda)
}

/// Solves the box-constrained control problem on the given view.
pub fn optimize(
    space: &FemSpace,
    view: &TreeView,
    params: &CostParams,
    bounds: BoxBounds,
    cfg: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let need_estimate = match cfg.mode {
        ControlMode::P0 => cfg.step_size.is_none(),
        ControlMode::ClampedP1 => cfg.damping.is_none(),
    };
    let lhat = if need_estimate {
        Some(estimate_operator_norm(space, view, 10, 0x5eed)?)
    } else {
        None
    };
    let mut step = match cfg.mode {
        ControlMode::P0 => cfg
            .step_size
            .unwrap_or_else(|| 1.0 / (params.nu + lhat.unwrap())),
        ControlMode::ClampedP1 => cfg
            .damping
            .unwrap_or_else(|| (1.8 * params.nu / (params.nu + lhat.unwrap())).min(1.0)),
    };
    if !(step > 0.0) || (cfg.mode == ControlMode::ClampedP1 && step > 1.0) {
        return Err(Error::Config(format!(
            "invalid step/damping {step} for mode {:?}",
            cfg.mode
        )));
    }
    let min_step = step * 1e-12;

    let mut u = ControlField::constant(view, cfg.mode, bounds, space, 0.0);
    let mut eval = evaluate(space, view, &u, params)?;
    let mut cost_history = vec![eval.cost];
    let mut residuals = Vec::new();
    let mut iterations = 0usize;

    loop {
        let target =
            fixed_point_control(space, view, &eval.multiplier, params.nu, bounds, cfg.mode);
        let residual = control_field_distance(space, view, &u, &target);
        residuals.push(residual);
        if residual <= cfg.tol {
            return Ok(OptimizeResult {
                control: u,
                cost_history,
                residuals,
                iterations,
                termination: Termination::Converged,
                lipschitz_estimate: lhat,
            });
        }
        if iterations >= cfg.max_iters {
            return Ok(OptimizeResult {
                control: u,
                cost_history,
                residuals,
                iterations,
                termination: Termination::MaxIterations,
                lipschitz_estimate: lhat,
            });
        }

        // one damped/projected step, backtracking on cost increase
        loop {
            let candidate = match cfg.mode {
                ControlMode::P0 => {
                    p0_gradient_step(space, &u, &eval.multiplier, params.nu, step, bounds)
                }
                ControlMode::ClampedP1 => {
                    clamped_fixed_point_step(&u, &eval.multiplier, params.nu, step, bounds)
                }
            };
            let cand_eval = evaluate(space, view, &candidate, params)?;
            let slack = 1e-12 * (1.0 + eval.cost.abs());
            if cand_eval.cost <= eval.cost + slack {
                u = candidate;
                eval = cand_eval;
                cost_history.push(eval.cost);
                iterations += 1;
                break;
            }
            if !cfg.backtracking || step * 0.5 < min_step {
                return Err(Error::Divergence {
                    iterations,
                    history: cost_history,
                });
            }
            step *= 0.5;
        }
    }
}

fn p0_gradient_step(
    space: &FemSpace,
    u: &ControlField,
    m: &AdaptedField,
    nu: f64,
    s: f64,
    bounds: BoxBounds,
) -> ControlField {
    let mut values = u.values().clone();
    let n_elems = space.mesh().n_elems();
    for step in 0..values.n_levels() {
        for node in 0..values.nodes_at(step) {
            let mj = m.node(step, node);
            let vals = values.node_mut(step, node);
            for e in 0..n_elems {
                let vl = if e == 0 { 0.0 } else { mj[e - 1] };
                let vr = if e + 1 >= n_elems { 0.0 } else { mj[e] };
                let mbar = 0.5 * (vl + vr);
                vals[e] = bounds.clamp(vals[e] - s * (mbar + nu * vals[e]));
            }
        }
    }
    ControlField::project_p0_values(&values, bounds)
}

fn clamped_fixed_point_step(
    u: &ControlField,
    m: &AdaptedField,
    nu: f64,
    theta: f64,
    bounds: BoxBounds,
) -> ControlField {
    let mut next = u.clone();
    let inv = -1.0 / nu;
    for step in 0..next.values().n_levels() {
        for node in 0..next.values().nodes_at(step) {
            let mj = m.node(step, node).to_vec();
            let phi = next.values_mut().node_mut(step, node);
            for (p, mv) in phi.iter_mut().zip(mj) {
                *p = (1.0 - theta) * *p + theta * inv * mv;
            }
        }
    }
    let _ = bounds;
    next
}
