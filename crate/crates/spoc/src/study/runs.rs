//! The eight study kinds behind the CLI.

use std::path::PathBuf;

use serde_json::json;

use crate::backward::{deterministic_backward_pair, solve_backward_tree};
use crate::control::cost::{
    control_pairing, direct_directional_derivative, eval_cost_affine, evaluate,
    gradient_multiplier, vi_check, CostParams, Target,
};
use crate::control::optimize::{optimize, OptimizeConfig, Termination};
use crate::control::{BoxBounds, ControlField};
use crate::error::{Error, Result};
use crate::fem::{build_space, matrix_csv, FemSpace};
use crate::forward::{solve_forward_tree, Source};
use crate::identities::duality_terms;
use crate::noise::{AdaptedField, BinomialTree, PathEnsemble, TimeGrid};
use crate::source::{catalog, interval_load, SpaceTime, DEFAULT_QUAD_ORDER};
use crate::study::report::{
    ensure_dir, field_flags, summary_path, table_path, write_field, write_rows_csv, write_summary,
    Row,
};
use crate::study::{
    control_distance_l2, estimate_rate, field_distance_l2, validate_experiment_grid,
    validate_ladder, FieldOnView, RateReport, StudyConfig, StudyKind,
};

#[derive(Debug)]
pub struct StudyOutput {
    pub kind: StudyKind,
    pub rows: Vec<Row>,
    pub rate: Option<RateReport>,
    pub checks: serde_json::Value,
    pub pass: Option<bool>,
    pub summary_file: PathBuf,
}

/// Runs one study and writes its CSV table(s), JSON summary and optional
/// binary dumps under `cfg.out_dir`.
pub fn run_study(kind: StudyKind, cfg: &StudyConfig) -> Result<StudyOutput> {
    ensure_dir(&cfg.out_dir)?;
    let out = match kind {
        StudyKind::ForwardRateH => forward_rate_h(cfg)?,
        StudyKind::ForwardRateTau => forward_rate_tau(cfg)?,
        StudyKind::BackwardRateH => backward_rate_h(cfg)?,
        StudyKind::AppendixTauRate => appendix_tau_rate(cfg)?,
        StudyKind::DualityCheck => duality_check(cfg)?,
        StudyKind::GradientCheck => gradient_check(cfg)?,
        StudyKind::Optimize => optimize_study(cfg)?,
        StudyKind::ControlRefinement => control_refinement(cfg)?,
    };
    if cfg.dump_matrices {
        let n = cfg.n_fixed.unwrap_or(16);
        let space = build_space(0.0, 1.0, n)?;
        let dir = &cfg.out_dir;
        std::fs::write(dir.join("mass-matrix.csv"), matrix_csv(space.mass()))
            .map_err(|e| Error::io(dir.join("mass-matrix.csv"), e))?;
        std::fs::write(
            dir.join("stiffness-matrix.csv"),
            matrix_csv(space.stiffness()),
        )
        .map_err(|e| Error::io(dir.join("stiffness-matrix.csv"), e))?;
    }
    Ok(out)
}

fn budgeted_tree(cfg: &StudyConfig, steps: usize, dim: usize) -> Result<BinomialTree> {
    validate_experiment_grid(cfg.t_end, steps)?;
    // a study keeps on the order of eight fields alive at once
    BinomialTree::new_within_budget(cfg.t_end, steps, dim, cfg.budget_bytes() / 8)
}

fn finish(
    cfg: &StudyConfig,
    kind: StudyKind,
    rows: Vec<Row>,
    rate: Option<RateReport>,
    checks: serde_json::Value,
    pass: Option<bool>,
) -> Result<StudyOutput> {
    write_rows_csv(&table_path(&cfg.out_dir, kind.name(), ""), &rows)?;
    let summary = summary_path(&cfg.out_dir, kind.name());
    write_summary(
        &summary,
        kind.name(),
        cfg,
        rate.as_ref(),
        checks.clone(),
        pass,
    )?;
    Ok(StudyOutput {
        kind,
        rows,
        rate,
        checks,
        pass,
        summary_file: summary,
    })
}

fn rate_report(sizes: Vec<f64>, errors: Vec<f64>, stderrs: Vec<f64>) -> Result<RateReport> {
    let (slope, fit_residual) = estimate_rate(&sizes, &errors)?;
    Ok(RateReport {
        sizes,
        errors,
        stderrs,
        slope,
        fit_residual,
    })
}

/// Spatial rate of the forward solver at a fixed tree: one noise
/// realization, nested meshes against a fine reference.
fn forward_rate_h(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j = cfg.j_fixed.unwrap_or(8);
    let n_list = cfg.n_list.clone().unwrap_or_else(|| vec![8, 16, 32]);
    let n_ref = cfg.n_ref.unwrap_or(128);
    validate_ladder(&n_list, n_ref)?;
    let tree = budgeted_tree(cfg, j, n_ref - 1)?;
    let view = tree.view();
    let g = catalog(&cfg.source, 0.0, 1.0)?;

    let ref_space = build_space(0.0, 1.0, n_ref)?;
    let y_ref = solve_forward_tree(&ref_space, &view, &Source::Deterministic(&g))?;
    let ref_on = FieldOnView {
        space: &ref_space,
        view,
        field: &y_ref,
    };

    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    for (level, &n) in n_list.iter().enumerate() {
        let space = build_space(0.0, 1.0, n)?;
        let y = solve_forward_tree(&space, &view, &Source::Deterministic(&g))?;
        let err = field_distance_l2(
            &FieldOnView {
                space: &space,
                view,
                field: &y,
            },
            &ref_on,
            &ref_space,
        )?;
        rows.push(Row {
            level,
            j,
            n_elems: n,
            error: err,
            stderr: 0.0,
        });
        sizes.push(space.mesh().h());
        errors.push(err);
    }
    if cfg.save_fields {
        write_field(
            &cfg.out_dir.join("forward-rate-h-reference.spocfld"),
            &y_ref,
            j as u32,
            field_flags(true, false),
        )?;
    }
    let rate = rate_report(sizes, errors, vec![0.0; rows.len()])?;
    let pass = (rate.slope - 2.0).abs() <= 0.25;
    let checks = json!({ "slope": rate.slope, "target_slope": 2.0, "tolerance": 0.25 });
    finish(
        cfg,
        StudyKind::ForwardRateH,
        rows,
        Some(rate),
        checks,
        Some(pass),
    )
}

/// Strong temporal rate of the forward solver under common random numbers:
/// fine Gaussian paths coarsened by summation, coarse runs compared to the
/// fine run on the same path.
fn forward_rate_tau(cfg: &StudyConfig) -> Result<StudyOutput> {
    let n = cfg.n_fixed.unwrap_or(64);
    let j_list = cfg.j_list.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    let j_ref = cfg.j_ref.unwrap_or(512);
    validate_ladder(&j_list, j_ref)?;
    validate_experiment_grid(cfg.t_end, *j_list.first().unwrap())?;
    let space = build_space(0.0, 1.0, n)?;
    let g = catalog(&cfg.source, 0.0, 1.0)?;

    let ens = PathEnsemble::sample(cfg.t_end, j_ref, cfg.m_paths, cfg.seed)?;
    if cfg.save_paths {
        ens.write_binary(&cfg.out_dir.join("paths.bin"))?;
    }
    let levels = mc_tau_errors(&space, &ens, &g, &j_list)?;

    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    let mut stderrs = Vec::new();
    for (level, (&j, &(err, se))) in j_list.iter().zip(levels.iter()).enumerate() {
        rows.push(Row {
            level,
            j,
            n_elems: n,
            error: err,
            stderr: se,
        });
        sizes.push(cfg.t_end / j as f64);
        errors.push(err);
        stderrs.push(se);
    }
    let rate = rate_report(sizes, errors, stderrs)?;
    let pass = rate.slope >= 0.4;
    let checks = json!({ "slope": rate.slope, "target_slope": 0.5, "threshold": 0.4 });
    finish(
        cfg,
        StudyKind::ForwardRateTau,
        rows,
        Some(rate),
        checks,
        Some(pass),
    )
}

/// Common-random-number errors of coarse-in-time runs against the fine run,
/// computed path by path without storing trajectories.
fn mc_tau_errors(
    space: &FemSpace,
    ens: &PathEnsemble,
    g: &dyn SpaceTime,
    j_list: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let dim = space.dim();
    let j_ref = ens.steps();
    let t_end = ens.grid().t_end();
    let tau_f = ens.grid().tau();
    let fine_factor = space.shifted_factor(tau_f)?;
    let fine_grid = TimeGrid::new(t_end, j_ref)?;

    // per-interval loads for the fine grid and for each coarse level
    let fine_loads = level_loads(space, &fine_grid, g)?;
    let mut coarse: Vec<CoarseLevel> = j_list
        .iter()
        .map(|&j| -> Result<CoarseLevel> {
            let grid = TimeGrid::new(t_end, j)?;
            Ok(CoarseLevel {
                k: j_ref / j,
                factor: space.shifted_factor(grid.tau())?,
                loads: level_loads(space, &grid, g)?,
                state: vec![0.0; dim],
                dw_acc: 0.0,
                acc: vec![0.0; ens.n_paths()],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fine_state = vec![0.0; dim];
    let mut mass_state = vec![0.0; dim];
    let mut rhs = vec![0.0; dim];
    let mut diff = vec![0.0; dim];
    for p in 0..ens.n_paths() {
        for v in fine_state.iter_mut() {
            *v = 0.0;
        }
        for lvl in coarse.iter_mut() {
            for v in lvl.state.iter_mut() {
                *v = 0.0;
            }
            lvl.dw_acc = 0.0;
        }
        let increments = ens.path(p);
        for jf in 0..j_ref {
            // compare left-endpoint values before stepping
            for lvl in coarse.iter_mut() {
                for d in 0..dim {
                    diff[d] = lvl.state[d] - fine_state[d];
                }
                lvl.acc[p] += tau_f * space.inner(&diff, &diff);
            }
            // advance the fine state
            let dw = increments[jf];
            if !dw.is_finite() {
                return Err(Error::NonFinite { path: p, step: jf });
            }
            space.mass().matvec_into(&fine_state, &mut mass_state);
            for d in 0..dim {
                rhs[d] = (1.0 + dw) * mass_state[d] + fine_loads[jf][d];
            }
            fine_factor.solve_in_place(&mut rhs);
            fine_state.copy_from_slice(&rhs);
            // advance each coarse state when its interval closes
            for lvl in coarse.iter_mut() {
                lvl.dw_acc += dw;
                if (jf + 1) % lvl.k == 0 {
                    let i = (jf + 1) / lvl.k - 1;
                    space.mass().matvec_into(&lvl.state, &mut mass_state);
                    for d in 0..dim {
                        rhs[d] = (1.0 + lvl.dw_acc) * mass_state[d] + lvl.loads[i][d];
                    }
                    lvl.factor.solve_in_place(&mut rhs);
                    lvl.state.copy_from_slice(&rhs);
                    lvl.dw_acc = 0.0;
                }
            }
        }
    }

    let m = ens.n_paths();
    Ok(coarse
        .iter()
        .map(|lvl| {
            let mean = lvl.acc.iter().sum::<f64>() / m as f64;
            let var = lvl.acc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
            let err = mean.max(0.0).sqrt();
            let se = if err > 0.0 {
                (var / m as f64).sqrt() / (2.0 * err)
            } else {
                0.0
            };
            (err, se)
        })
        .collect())
}

struct CoarseLevel {
    k: usize,
    factor: crate::fem::TridiagFactor,
    loads: Vec<Vec<f64>>,
    state: Vec<f64>,
    dw_acc: f64,
    acc: Vec<f64>,
}

fn level_loads(space: &FemSpace, grid: &TimeGrid, g: &dyn SpaceTime) -> Result<Vec<Vec<f64>>> {
    (0..grid.steps())
        .map(|j| {
            let mut load = vec![0.0; space.dim()];
            interval_load(
                space,
                g,
                grid.t(j),
                grid.t(j + 1),
                DEFAULT_QUAD_ORDER,
                &mut load,
            )?;
            Ok(load)
        })
        .collect()
}

/// Spatial rate of the backward pair at a fixed tree with a random adapted
/// closed-form source shared across meshes.
fn backward_rate_h(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j = cfg.j_fixed.unwrap_or(8);
    let n_list = cfg.n_list.clone().unwrap_or_else(|| vec![8, 16, 32]);
    let n_ref = cfg.n_ref.unwrap_or(128);
    validate_ladder(&n_list, n_ref)?;
    let tree = budgeted_tree(cfg, j, n_ref - 1)?;
    let view = tree.view();
    let src = crate::source::RandomProfileSource::sample(&view, cfg.seed, 1.0);

    let ref_space = build_space(0.0, 1.0, n_ref)?;
    let ref_pair = solve_backward_tree(&ref_space, &view, &Source::Profiles(&src), false)?;
    let ref_on = FieldOnView {
        space: &ref_space,
        view,
        field: &ref_pair.p,
    };

    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    for (level, &n) in n_list.iter().enumerate() {
        let space = build_space(0.0, 1.0, n)?;
        let pair = solve_backward_tree(&space, &view, &Source::Profiles(&src), false)?;
        let err = field_distance_l2(
            &FieldOnView {
                space: &space,
                view,
                field: &pair.p,
            },
            &ref_on,
            &ref_space,
        )?;
        rows.push(Row {
            level,
            j,
            n_elems: n,
            error: err,
            stderr: 0.0,
        });
        sizes.push(space.mesh().h());
        errors.push(err);
    }
    let rate = rate_report(sizes, errors, vec![0.0; rows.len()])?;
    let pass = (rate.slope - 2.0).abs() <= 0.3;
    let checks = json!({ "slope": rate.slope, "target_slope": 2.0, "tolerance": 0.3 });
    finish(
        cfg,
        StudyKind::BackwardRateH,
        rows,
        Some(rate),
        checks,
        Some(pass),
    )
}

/// Temporal rate of the deterministic recursion against the semigroup
/// integral, in the discrete H^{-1} norm.
fn appendix_tau_rate(cfg: &StudyConfig) -> Result<StudyOutput> {
    let n = cfg.n_fixed.unwrap_or(64);
    let j_list = cfg.j_list.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    if j_list.len() < 3 || j_list.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::Config(format!(
            "appendix ladder {j_list:?} must be geometric with factor 2 and >= 3 levels"
        )));
    }
    let space = build_space(0.0, 1.0, n)?;
    let spectral = space.spectral()?;
    let g = catalog(&cfg.source, 0.0, 1.0)?;

    let mut rows = Vec::new();
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    for (level, &j) in j_list.iter().enumerate() {
        validate_experiment_grid(cfg.t_end, j)?;
        let grid = TimeGrid::new(cfg.t_end, j)?;
        let pair = deterministic_backward_pair(
            &space,
            &spectral,
            &grid,
            &g,
            cfg.eta_panels,
            cfg.quad_order,
        )?;
        let mut worst = 0.0f64;
        for idx in 0..=j {
            let diff: Vec<f64> = pair.eta[idx]
                .iter()
                .zip(&pair.p[idx])
                .map(|(a, b)| a - b)
                .collect();
            worst = worst.max(spectral.norm_beta(&diff, -1)?);
        }
        rows.push(Row {
            level,
            j,
            n_elems: n,
            error: worst,
            stderr: 0.0,
        });
        sizes.push(grid.tau());
        errors.push(worst);
    }
    let rate = rate_report(sizes, errors, vec![0.0; rows.len()])?;
    let pass = (rate.slope - 1.0).abs() <= 0.2;
    let checks = json!({ "slope": rate.slope, "target_slope": 1.0, "tolerance": 0.2 });
    finish(
        cfg,
        StudyKind::AppendixTauRate,
        rows,
        Some(rate),
        checks,
        Some(pass),
    )
}

/// Exact integration-by-parts identity on random adapted pairs.
fn duality_check(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j = cfg.j_fixed.unwrap_or(6);
    let n = cfg.n_fixed.unwrap_or(16);
    let tree = budgeted_tree(cfg, j, n - 1)?;
    let view = tree.view();
    let space = build_space(0.0, 1.0, n)?;

    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..cfg.n_pairs {
        let mut f = AdaptedField::zero_intervals(&view, space.dim());
        let mut g = AdaptedField::zero_intervals(&view, space.dim());
        f.randomize_gaussian(cfg.seed.wrapping_add(2 * i as u64), 1.0);
        g.randomize_gaussian(cfg.seed.wrapping_add(2 * i as u64 + 1), 1.0);
        let terms = duality_terms(&space, &view, &f, &g)?;
        let res = terms.relative_residual();
        worst = worst.max(res);
        rows.push(Row {
            level: i,
            j,
            n_elems: n,
            error: res,
            stderr: 0.0,
        });
    }
    let pass = worst <= 1e-10;
    let checks = json!({ "max_relative_residual": worst, "threshold": 1e-10 });
    finish(cfg, StudyKind::DualityCheck, rows, None, checks, Some(pass))
}

/// Finite-difference and dual-route checks of the cost gradient.
fn gradient_check(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j = cfg.j_fixed.unwrap_or(4);
    let n = cfg.n_fixed.unwrap_or(8);
    let tree = budgeted_tree(cfg, j, n - 1)?;
    let view = tree.view();
    let space = build_space(0.0, 1.0, n)?;
    let bounds = BoxBounds::new(cfg.bounds[0], cfg.bounds[1])?;
    let target = catalog(&cfg.target, 0.0, 1.0)?;
    let params = CostParams {
        nu: cfg.nu,
        target: Target::Deterministic(&target),
    };
    let u = ControlField::random_feasible(&view, cfg.control_mode, bounds, &space, cfg.seed);
    let (m, a0) = gradient_multiplier(&space, &view, &u, &params)?;

    let mut rows = Vec::new();
    let mut max_fd = 0.0f64;
    let mut max_dual = 0.0f64;
    for k in 0..cfg.n_directions {
        let v = ControlField::random_feasible(
            &view,
            cfg.control_mode,
            bounds,
            &space,
            cfg.seed.wrapping_add(1000 + k as u64),
        );
        let exact = control_pairing(&space, &view, &m, cfg.nu, &u, &v);
        let h = 1e-5;
        let fd = (eval_cost_affine(&space, &view, &u, &v, h, &params)?
            - eval_cost_affine(&space, &view, &u, &v, -h, &params)?)
            / (2.0 * h);
        let fd_rel = (fd - exact).abs() / exact.abs().max(1e-3);
        let direct = direct_directional_derivative(&space, &view, &u, &v, &params)?;
        let dual_rel = (direct - exact).abs() / exact.abs().max(1e-3);
        max_fd = max_fd.max(fd_rel);
        max_dual = max_dual.max(dual_rel);
        rows.push(Row {
            level: k,
            j,
            n_elems: n,
            error: fd_rel,
            stderr: dual_rel,
        });
    }
    let pass = max_fd <= 1e-6 && max_dual <= 1e-12 && a0.abs() <= 1e-12;
    let checks = json!({
        "max_fd_relative_error": max_fd,
        "max_dual_route_gap": max_dual,
        "a0": a0,
    });
    finish(
        cfg,
        StudyKind::GradientCheck,
        rows,
        None,
        checks,
        Some(pass),
    )
}

/// One optimization run with a JSON report and a binary dump of the final
/// control.
fn optimize_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j = cfg.j_fixed.unwrap_or(4);
    let n = cfg.n_fixed.unwrap_or(8);
    let tree = budgeted_tree(cfg, j, n - 1)?;
    let view = tree.view();
    let space = build_space(0.0, 1.0, n)?;
    let bounds = BoxBounds::new(cfg.bounds[0], cfg.bounds[1])?;
    let target = catalog(&cfg.target, 0.0, 1.0)?;
    let params = CostParams {
        nu: cfg.nu,
        target: Target::Deterministic(&target),
    };
    let opt_cfg = OptimizeConfig {
        mode: cfg.control_mode,
        step_size: cfg.step_size,
        damping: cfg.damping,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        backtracking: true,
    };
    let out = optimize(&space, &view, &params, bounds, &opt_cfg)?;
    let vi = vi_check(
        &space,
        &view,
        &out.control,
        &params,
        cfg.n_directions.max(50),
        cfg.seed,
    )?;

    let rows: Vec<Row> = out
        .residuals
        .iter()
        .enumerate()
        .map(|(i, r)| Row {
            level: i,
            j,
            n_elems: n,
            error: *r,
            stderr: 0.0,
        })
        .collect();
    write_field(
        &cfg.out_dir.join("optimize-control.spocfld"),
        out.control.values(),
        j as u32,
        field_flags(true, true),
    )?;
    let converged = out.termination == Termination::Converged;
    let checks = json!({
        "cost_history": out.cost_history,
        "residuals": out.residuals,
        "iterations": out.iterations,
        "termination": if converged { "converged" } else { "max-iterations" },
        "lipschitz_estimate": out.lipschitz_estimate,
        "vi_min_direction": vi,
    });
    let pass = converged && vi >= -1e-8;
    finish(cfg, StudyKind::Optimize, rows, None, checks, Some(pass))
}

/// Self-convergence of the control problem: coarse optima against the
/// finest, all driven by one fine tree.
fn control_refinement(cfg: &StudyConfig) -> Result<StudyOutput> {
    let j_list = cfg.j_list.clone().unwrap_or_else(|| vec![2, 4, 8]);
    let n_list = cfg.n_list.clone().unwrap_or_else(|| vec![8, 16, 32]);
    let j_ref = cfg.j_ref.unwrap_or(16);
    let n_ref = cfg.n_ref.unwrap_or(64);
    if j_list.len() != n_list.len() {
        return Err(Error::Config("j_list and n_list must pair up".into()));
    }
    validate_ladder(&n_list, n_ref)?;
    for &j in &j_list {
        if j_ref % j != 0 {
            return Err(Error::NonDivisor {
                factor: j,
                steps: j_ref,
            });
        }
    }
    let tree = budgeted_tree(cfg, j_ref, n_ref - 1)?;
    let fine_space = build_space(0.0, 1.0, n_ref)?;
    let bounds = BoxBounds::new(cfg.bounds[0], cfg.bounds[1])?;
    let target = catalog(&cfg.target, 0.0, 1.0)?;
    let opt_cfg = OptimizeConfig {
        mode: cfg.control_mode,
        step_size: cfg.step_size,
        damping: cfg.damping,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        backtracking: true,
    };

    let fine_view = tree.view();
    let params = CostParams {
        nu: cfg.nu,
        target: Target::Deterministic(&target),
    };
    let fine_out = optimize(&fine_space, &fine_view, &params, bounds, &opt_cfg)?;
    let fine_states = evaluate(&fine_space, &fine_view, &fine_out.control, &params)?.states;

    let mut control_rows = Vec::new();
    let mut state_rows = Vec::new();
    for (level, (&j, &n)) in j_list.iter().zip(&n_list).enumerate() {
        let view = tree.coarse_view(j_ref / j)?;
        let space = build_space(0.0, 1.0, n)?;
        let out = optimize(&space, &view, &params, bounds, &opt_cfg)?;
        let states = evaluate(&space, &view, &out.control, &params)?.states;

        let err_u = control_distance_l2(
            (&space, view, &out.control),
            (&fine_space, fine_view, &fine_out.control),
            &fine_space,
        )?;
        let err_y = field_distance_l2(
            &FieldOnView {
                space: &space,
                view,
                field: &states,
            },
            &FieldOnView {
                space: &fine_space,
                view: fine_view,
                field: &fine_states,
            },
            &fine_space,
        )?;
        control_rows.push(Row {
            level,
            j,
            n_elems: n,
            error: err_u,
            stderr: 0.0,
        });
        state_rows.push(Row {
            level,
            j,
            n_elems: n,
            error: err_y,
            stderr: 0.0,
        });
    }

    let decreasing = |rows: &[Row]| -> (bool, Vec<f64>) {
        let mut ok = true;
        let mut ratios = Vec::new();
        for w in rows.windows(2) {
            let ratio = w[0].error / w[1].error.max(1e-300);
            ratios.push(ratio);
            if ratio < 1.2 {
                ok = false;
            }
        }
        (ok, ratios)
    };
    let (ok_u, ratios_u) = decreasing(&control_rows);
    let (ok_y, ratios_y) = decreasing(&state_rows);

    write_rows_csv(
        &table_path(&cfg.out_dir, StudyKind::ControlRefinement.name(), "control"),
        &control_rows,
    )?;
    write_rows_csv(
        &table_path(&cfg.out_dir, StudyKind::ControlRefinement.name(), "state"),
        &state_rows,
    )?;
    if cfg.save_fields {
        write_field(
            &cfg.out_dir.join("control-refinement-finest.spocfld"),
            fine_out.control.values(),
            j_ref as u32,
            field_flags(true, true),
        )?;
    }
    let checks = json!({
        "control_errors": control_rows.iter().map(|r| r.error).collect::<Vec<_>>(),
        "state_errors": state_rows.iter().map(|r| r.error).collect::<Vec<_>>(),
        "control_ratios": ratios_u,
        "state_ratios": ratios_y,
        "required_ratio": 1.2,
    });
    let pass = ok_u && ok_y;
    let summary = summary_path(&cfg.out_dir, StudyKind::ControlRefinement.name());
    write_summary(
        &summary,
        StudyKind::ControlRefinement.name(),
        cfg,
        None,
        checks.clone(),
        Some(pass),
    )?;
    Ok(StudyOutput {
        kind: StudyKind::ControlRefinement,
        rows: control_rows,
        rate: None,
        checks,
        pass: Some(pass),
        summary_file: summary,
    })
}
