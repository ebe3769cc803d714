//! Backward (adjoint) solvers.
//!
//! On the tree the pair (P, Z) is recovered level by level from the
//! terminal condition `P_J = 0`. With `X(m) := P_{j+1}(child m) + M^{-1} l_j`
//! the two defining projections are
//!
//! ```text
//! Z_j = E_j[X dW] / tau,
//! (M + tau A) P_j = M E_j[X] + c tau M Z_j,          c in {0, 1},
//! ```
//!
//! which on the two-branch tree reduce to `Z_j = (X(up) - X(down)) /
//! (2 sqrt(tau))` and an implicit solve against the child average. `c = 0`
//! is the plain backward equation, `c = 1` the adjoint pair in which Z also
//! enters the drift. Z is constant on each interval per node; on the
//! discrete filtration the martingale-representation increment is
//! necessarily of the form `Z_j dW_j`, so the defining relation holds
//! nodewise to solver precision and is checked that way.
//!
//! The deterministic pair integrates `eta(t) = int_t^T e^{(s-t)Dh} Q_h g ds`
//! in the spectral basis (composite Gauss in time, semigroup recursion
//! across intervals) next to the implicit-Euler recursion for P; their gap
//! in the discrete H^{-1} norm is the time-discretization error measured by
//! the rate studies.
//!
//! The regression backend replaces exact conditional expectations by
//! least-squares fits on a path ensemble. It is diagnostic grade: the tree
//! is the acceptance oracle.

use crate::error::{Error, Result};
use crate::fem::{FemSpace, SpectralData};
use crate::forward::{PathField, Source};
use crate::noise::{AdaptedField, PathEnsemble, TimeGrid, TreeView};
use crate::quadrature;
use crate::source::{self, SpaceTime, DEFAULT_QUAD_ORDER};

/// Adjoint state P (levels 0..=J, P_J = 0) and martingale density Z
/// (levels 0..J, level-j measurable).
#[derive(Debug, Clone)]
pub struct BackwardPair {
    pub p: AdaptedField,
    pub z: AdaptedField,
}

pub(crate) struct BackwardSweep {
    pub p: Option<AdaptedField>,
    pub z: AdaptedField,
    /// Conditional expectation of the next adjoint state,
    /// `m_j = E_j[P_{j+1}]`.
    pub multiplier: AdaptedField,
}

pub(crate) fn backward_sweep(
    space: &FemSpace,
    view: &TreeView,
    fill_load: impl Fn(usize, usize, &mut [f64]),
    drift: bool,
    keep_p: bool,
) -> Result<BackwardSweep> {
    let dim = space.dim();
    let steps = view.steps();
    let tau = view.tau();
    let branches = view.branch_count();
    let inv_branches = 1.0 / branches as f64;
    let factor = space.shifted_factor(tau)?;
    let c = if drift { 1.0 } else { 0.0 };

    let mut z = AdaptedField::zero_intervals(view, dim);
    let mut multiplier = AdaptedField::zero_intervals(view, dim);
    let mut p_full = keep_p.then(|| AdaptedField::zero_states(view, dim));

    let mut p_next = vec![0.0; view.nodes_at(steps) * dim];
    let mut load = vec![0.0; dim];
    let mut mean_p = vec![0.0; dim];
    let mut work = vec![0.0; dim];
    let mut rhs = vec![0.0; dim];

    for step in (0..steps).rev() {
        let parents = view.nodes_at(step);
        let mut p_curr = vec![0.0; parents * dim];
        for node in 0..parents {
            fill_load(step, node, &mut load);
            let lhat = space.mass_factor().solve(&load);

            for v in mean_p.iter_mut() {
                *v = 0.0;
            }
            let z_slot = z.node_mut(step, node);
            for v in z_slot.iter_mut() {
                *v = 0.0;
            }
            for m in 0..branches {
                let child = view.child(node, m);
                let pc = &p_next[child * dim..(child + 1) * dim];
                let dw = view.branch_increment(m);
                for d in 0..dim {
                    mean_p[d] += pc[d];
                    z_slot[d] += (pc[d] + lhat[d]) * dw;
                }
            }
            for d in 0..dim {
                mean_p[d] *= inv_branches;
                z_slot[d] *= inv_branches / tau;
            }
            multiplier.node_mut(step, node).copy_from_slice(&mean_p);

            for d in 0..dim {
                work[d] = mean_p[d] + lhat[d] + c * tau * z_slot[d];
            }
            space.mass().matvec_into(&work, &mut rhs);
            factor.solve_in_place(&mut rhs);
            p_curr[node * dim..(node + 1) * dim].copy_from_slice(&rhs);
        }
        if let Some(p) = p_full.as_mut() {
            p.level_mut(step).copy_from_slice(&p_curr);
        }
        p_next = p_curr;
    }

    Ok(BackwardSweep {
        p: p_full,
        z,
        multiplier,
    })
}

/// Solves the backward scheme on a tree view. `drift = false` is the plain
/// backward equation; `drift = true` puts Z into the drift as well (the
/// adjoint pair).
pub fn solve_backward_tree(
    space: &FemSpace,
    view: &TreeView,
    src: &Source,
    drift: bool,
) -> Result<BackwardPair> {
    let loads = src.loads(space, *view)?;
    let sweep = backward_sweep(
        space,
        view,
        |step, node, out| loads.fill(step, node, out),
        drift,
        true,
    )?;
    Ok(BackwardPair {
        p: sweep.p.expect("requested adjoint state"),
        z: sweep.z,
    })
}

/// Maximum relative nodewise residual of the defining relation
/// `M(P_j - P_{j+1}) + tau A P_j - c tau M Z_j - l_j + M Z_j dW_j = 0`
/// over all (step, node, branch) triples. Exact representation needs the
/// two-branch filtration, so only factor-1 views are accepted.
pub fn backward_residual(
    space: &FemSpace,
    view: &TreeView,
    pair: &BackwardPair,
    src: &Source,
    drift: bool,
) -> Result<f64> {
    if view.factor() != 1 {
        return Err(Error::ShapeMismatch(
            "nodewise backward residual requires the native two-branch view".into(),
        ));
    }
    view.check_state_shape(&pair.p)?;
    view.check_interval_shape(&pair.z)?;
    let loads = src.loads(space, *view)?;
    let dim = space.dim();
    let tau = view.tau();
    let c = if drift { 1.0 } else { 0.0 };
    let mut load = vec![0.0; dim];
    let mut worst = 0.0f64;
    for step in 0..view.steps() {
        for node in 0..view.nodes_at(step) {
            loads.fill(step, node, &mut load);
            let p_j = pair.p.node(step, node);
            let z_j = pair.z.node(step, node);
            let mp = space.mass().matvec(p_j);
            let ap = space.stiffness().matvec(p_j);
            let mz = space.mass().matvec(z_j);
            for m in 0..view.branch_count() {
                let child = pair.p.node(step + 1, view.child(node, m));
                let mc = space.mass().matvec(child);
                let dw = view.branch_increment(m);
                let mut res = 0.0;
                let mut scale = 0.0;
                for d in 0..dim {
                    let r = mp[d] - mc[d] + tau * ap[d] - c * tau * mz[d] - load[d] + mz[d] * dw;
                    res += r * r;
                    scale += mc[d] * mc[d] + load[d] * load[d];
                }
                worst = worst.max(res.sqrt() / (1.0 + scale.sqrt()));
            }
        }
    }
    Ok(worst)
}

/// Maximum nodewise defect of the martingale split
/// `Z_j dW_j = (I - E_j)(P_{j+1} + M^{-1} l_j)`, in the L^2 norm relative
/// to the local scale.
pub fn martingale_split_residual(
    space: &FemSpace,
    view: &TreeView,
    pair: &BackwardPair,
    src: &Source,
) -> Result<f64> {
    if view.factor() != 1 {
        return Err(Error::ShapeMismatch(
            "martingale split is exact only on the native two-branch view".into(),
        ));
    }
    let loads = src.loads(space, *view)?;
    let dim = space.dim();
    let mut load = vec![0.0; dim];
    let mut worst = 0.0f64;
    for step in 0..view.steps() {
        for node in 0..view.nodes_at(step) {
            loads.fill(step, node, &mut load);
            let lhat = space.mass_factor().solve(&load);
            let z_j = pair.z.node(step, node);
            // X(m) and the child average
            let x: Vec<Vec<f64>> = (0..2)
                .map(|m| {
                    let child = pair.p.node(step + 1, view.child(node, m));
                    (0..dim).map(|d| child[d] + lhat[d]).collect()
                })
                .collect();
            for m in 0..2 {
                let dw = view.branch_increment(m);
                let mut diff = vec![0.0; dim];
                let mut scale = 0.0f64;
                for d in 0..dim {
                    let xbar = 0.5 * (x[0][d] + x[1][d]);
                    diff[d] = z_j[d] * dw - (x[m][d] - xbar);
                    scale += x[m][d] * x[m][d];
                }
                let res = space.l2_norm(&diff);
                worst = worst.max(res / (1.0 + scale.sqrt()));
            }
        }
    }
    Ok(worst)
}

/// Deterministic terminal-value pair: the semigroup integral `eta` and the
/// implicit-Euler recursion P on the same grid, both as nodal coefficient
/// vectors at `t_0..=t_J`.
#[derive(Debug, Clone)]
pub struct DeterministicPair {
    pub eta: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

pub fn deterministic_backward_pair(
    space: &FemSpace,
    spectral: &SpectralData,
    grid: &TimeGrid,
    g: &dyn SpaceTime,
    panels_per_step: usize,
    order: usize,
) -> Result<DeterministicPair> {
    if panels_per_step == 0 {
        return Err(Error::Config("panels_per_step must be positive".into()));
    }
    let rule = quadrature::load_rule(order.clamp(2, 5))?;
    let dim = space.dim();
    let steps = grid.steps();
    let tau = grid.tau();
    let lambdas = spectral.eigenvalues();

    // per-interval quadrature points, loads and spectral coefficients
    let mut eta_coeff = vec![0.0; dim];
    let mut eta = vec![vec![0.0; dim]; steps + 1];
    let mut p = vec![vec![0.0; dim]; steps + 1];
    let factor = space.shifted_factor(tau)?;

    // walk backward so the semigroup recursion composes exactly
    for j in (0..steps).rev() {
        let t0 = grid.t(j);
        let t1 = grid.t(j + 1);
        let width = (t1 - t0) / panels_per_step as f64;
        let mut inner = vec![0.0; dim]; // int_tj^tj+1 e^{-lambda (s - tj)} ghat(s) ds
        let mut load_int = vec![0.0; dim];
        for panel in 0..panels_per_step {
            let lo = t0 + panel as f64 * width;
            let mid = lo + 0.5 * width;
            let half = 0.5 * width;
            for gp in rule {
                let s = mid + half * gp.x;
                let w = gp.w * half;
                let mut load = vec![0.0; dim];
                source::space_load_accumulate(
                    space,
                    &|x| g.eval(s, x),
                    order.clamp(2, 5),
                    1.0,
                    &mut load,
                )?;
                let ghat = spectral_project_load(spectral, &load);
                for k in 0..dim {
                    inner[k] += w * (-(lambdas[k]) * (s - t0)).exp() * ghat[k];
                    load_int[k] += w * load[k];
                }
            }
        }
        for k in 0..dim {
            eta_coeff[k] = (-(lambdas[k]) * tau).exp() * eta_coeff[k] + inner[k];
        }
        eta[j] = spectral.synthesize(&eta_coeff);

        // implicit recursion (M + tau A) P_j = M P_{j+1} + int loads
        let mut rhs = space.mass().matvec(&p[j + 1]);
        for d in 0..dim {
            rhs[d] += load_int[d];
        }
        factor.solve_in_place(&mut rhs);
        p[j] = rhs;
    }
    Ok(DeterministicPair { eta, p })
}

/// `<load, q_k>` for all k: the spectral coefficients of `Q_h` applied to
/// the function behind the load vector.
fn spectral_project_load(spectral: &SpectralData, load: &[f64]) -> Vec<f64> {
    (0..spectral.dim())
        .map(|k| {
            spectral
                .eigenvector(k)
                .iter()
                .zip(load)
                .map(|(q, l)| q * l)
                .sum()
        })
        .collect()
}

/// Polynomial regression basis: total degree `degree` in the leading
/// `n_coords` spectral coordinates of the state.
#[derive(Debug, Clone, Copy)]
pub struct RegressionBasis {
    pub degree: usize,
    pub n_coords: usize,
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    pub condition: f64,
    pub fit_residual_rms: f64,
    pub dropped_features: usize,
}

/// Writes regression fit diagnostics as CSV.
pub fn write_diagnostics_csv(
    path: &std::path::Path,
    diagnostics: &[StepDiagnostics],
) -> Result<()> {
    let mut out = String::from("step,condition,fit_residual_rms,dropped_features\n");
    for d in diagnostics {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{}\n",
            d.step, d.condition, d.fit_residual_rms, d.dropped_features
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Source term for the path-ensemble backward solver.
pub enum PathSource<'a> {
    Deterministic(&'a dyn SpaceTime),
    /// g = state - target with the state trajectories given per path.
    StateMinusTarget {
        states: &'a PathField,
        target: Option<&'a dyn SpaceTime>,
    },
}

#[derive(Debug, Clone)]
pub struct RegressionSolution {
    pub p: PathField,
    pub z: PathField,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Least-squares Monte Carlo realization of the backward scheme: the exact
/// conditional expectations are replaced by per-step polynomial fits across
/// paths.
///
/// The realized design can be collinear even for a sane basis (early steps
/// carry little information; a two-point ensemble has only `2^j` distinct
/// states at step j), so the fit runs a rank-revealing orthonormalization
/// and drops dependent columns, reporting the drop count and the retained
/// condition number per step in the diagnostics. A design with at least as
/// many features as paths aborts with [`Error::RankDeficient`].
pub fn regression_backward(
    space: &FemSpace,
    ens: &PathEnsemble,
    src: &PathSource,
    drift: bool,
    basis: &RegressionBasis,
    spectral: &SpectralData,
) -> Result<RegressionSolution> {
    let dim = space.dim();
    let steps = ens.steps();
    let n_paths = ens.n_paths();
    let tau = ens.grid().tau();
    let factor = space.shifted_factor(tau)?;
    let c = if drift { 1.0 } else { 0.0 };

    // per-interval target loads for closed-form parts
    let det_loads: Option<Vec<Vec<f64>>> = match src {
        PathSource::Deterministic(f) => Some(interval_loads(space, ens.grid(), *f)?),
        PathSource::StateMinusTarget { target, .. } => match target {
            Some(f) => Some(interval_loads(space, ens.grid(), *f)?),
            None => None,
        },
    };
    if let PathSource::StateMinusTarget { states, .. } = src {
        if states.n_paths() != n_paths || states.levels() != steps + 1 || states.dim() != dim {
            return Err(Error::ShapeMismatch(
                "state trajectories do not match the ensemble".into(),
            ));
        }
    }

    let exponents = monomial_exponents(basis.n_coords, basis.degree);
    let n_features = exponents.len();
    if n_features >= n_paths {
        return Err(Error::RankDeficient {
            step: steps - 1,
            condition: f64::INFINITY,
        });
    }

    let mut p = PathField::zeros(n_paths, steps + 1, dim);
    let mut z = PathField::zeros(n_paths, steps, dim);
    let mut diagnostics = Vec::with_capacity(steps);

    let mut x_mat = vec![0.0; n_paths * dim];
    for step in (0..steps).rev() {
        // X_p = P_{j+1,p} + M^{-1} l_{j,p}
        for path in 0..n_paths {
            let mut load = vec![0.0; dim];
            match src {
                PathSource::Deterministic(_) => {
                    load.copy_from_slice(&det_loads.as_ref().unwrap()[step]);
                }
                PathSource::StateMinusTarget { states, .. } => {
                    space.mass().matvec_into(states.at(path, step), &mut load);
                    for v in load.iter_mut() {
                        *v *= tau;
                    }
                    if let Some(t_loads) = det_loads.as_ref() {
                        for (v, t) in load.iter_mut().zip(&t_loads[step]) {
                            *v -= t;
                        }
                    }
                }
            }
            let lhat = space.mass_factor().solve(&load);
            let slot = &mut x_mat[path * dim..(path + 1) * dim];
            let p_next = p.at(path, step + 1).to_vec();
            for d in 0..dim {
                slot[d] = p_next[d] + lhat[d];
            }
        }

        // features from the state's leading spectral coordinates
        let features: Vec<Vec<f64>> = (0..n_paths)
            .map(|path| match src {
                PathSource::StateMinusTarget { states, .. } => {
                    let my = space.mass().matvec(states.at(path, step));
                    (0..basis.n_coords)
                        .map(|r| {
                            spectral
                                .eigenvector(r)
                                .iter()
                                .zip(&my)
                                .map(|(q, v)| q * v)
                                .sum()
                        })
                        .collect()
                }
                PathSource::Deterministic(_) => vec![0.0; basis.n_coords],
            })
            .collect();

        let design = build_design(&features, &exponents);
        let (fit, diag) = least_squares_fit(&design, &x_mat, n_paths, dim, step)?;

        // Z target: residual against the conditional-mean fit, times dW/tau
        let mut z_target = vec![0.0; n_paths * dim];
        for path in 0..n_paths {
            let dw = ens.path(path)[step];
            for d in 0..dim {
                let r = x_mat[path * dim + d] - fit[path * dim + d];
                z_target[path * dim + d] = r * dw / tau;
            }
        }
        let (z_fit, _zdiag) = least_squares_fit(&design, &z_target, n_paths, dim, step)?;

        let mut rhs = vec![0.0; dim];
        for path in 0..n_paths {
            for d in 0..dim {
                rhs[d] = fit[path * dim + d] + c * tau * z_fit[path * dim + d];
            }
            let mut mr = vec![0.0; dim];
            space.mass().matvec_into(&rhs, &mut mr);
            factor.solve_in_place(&mut mr);
            p.at_mut(path, step).copy_from_slice(&mr);
            z.at_mut(path, step)
                .copy_from_slice(&z_fit[path * dim..(path + 1) * dim]);
        }
        diagnostics.push(diag);
    }
    diagnostics.reverse();
    Ok(RegressionSolution { p, z, diagnostics })
}

fn interval_loads(space: &FemSpace, grid: &TimeGrid, f: &dyn SpaceTime) -> Result<Vec<Vec<f64>>> {
    (0..grid.steps())
        .map(|j| {
            let mut load = vec![0.0; space.dim()];
            source::interval_load(
                space,
                f,
                grid.t(j),
                grid.t(j + 1),
                DEFAULT_QUAD_ORDER,
                &mut load,
            )?;
            Ok(load)
        })
        .collect()
}

fn monomial_exponents(n_coords: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n_coords]];
    let mut frontier = vec![vec![0; n_coords]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for i in start..n_coords {
                let mut e2 = e.clone();
                e2[i] += 1;
                next.push(e2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Orthonormalized design: column-major `n_paths x kept` with orthonormal
/// columns after rank-revealing modified Gram-Schmidt.
struct Design {
    q: Vec<f64>,
    kept: usize,
    dropped: usize,
    condition: f64,
}

fn build_design(features: &[Vec<f64>], exponents: &[Vec<usize>]) -> Design {
    let n_paths = features.len();
    let n_all = exponents.len();
    let mut q: Vec<f64> = Vec::with_capacity(n_paths * n_all);
    let mut kept = 0usize;
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;
    let mut col = vec![0.0; n_paths];
    for e in exponents {
        for (p, f) in features.iter().enumerate() {
            let mut v = 1.0;
            for (coord, &pow) in f.iter().zip(e) {
                for _ in 0..pow {
                    v *= coord;
                }
            }
            col[p] = v;
        }
        let original: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        // project out the kept columns
        for k in 0..kept {
            let qk = &q[k * n_paths..(k + 1) * n_paths];
            let dot: f64 = qk.iter().zip(&col).map(|(a, b)| a * b).sum();
            for (c, qv) in col.iter_mut().zip(qk) {
                *c -= dot * qv;
            }
        }
        let pivot: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pivot > 1e-10 * original.max(1e-300) && pivot > 0.0 {
            for c in col.iter_mut() {
                *c /= pivot;
            }
            q.extend_from_slice(&col);
            kept += 1;
            max_pivot = max_pivot.max(pivot);
            min_pivot = min_pivot.min(pivot);
        }
    }
    Design {
        q,
        kept,
        dropped: n_all - kept,
        condition: if kept > 0 {
            max_pivot / min_pivot
        } else {
            f64::INFINITY
        },
    }
}

/// Least squares fit of multi-component targets on the orthonormalized
/// design: fitted values are `Q (Q^T y)` per component.
fn least_squares_fit(
    design: &Design,
    targets: &[f64],
    n_paths: usize,
    dim: usize,
    step: usize,
) -> Result<(Vec<f64>, StepDiagnostics)> {
    if design.kept == 0 {
        return Err(Error::RankDeficient {
            step,
            condition: f64::INFINITY,
        });
    }
    let mut coef = vec![0.0; design.kept * dim];
    for k in 0..design.kept {
        let qk = &design.q[k * n_paths..(k + 1) * n_paths];
        for (p, qv) in qk.iter().enumerate() {
            let row = &targets[p * dim..(p + 1) * dim];
            for d in 0..dim {
                coef[k * dim + d] += qv * row[d];
            }
        }
    }
    let mut fitted = vec![0.0; n_paths * dim];
    for k in 0..design.kept {
        let qk = &design.q[k * n_paths..(k + 1) * n_paths];
        for (p, qv) in qk.iter().enumerate() {
            for d in 0..dim {
                fitted[p * dim + d] += qv * coef[k * dim + d];
            }
        }
    }
    let mut res_sq = 0.0;
    for (f, t) in fitted.iter().zip(targets) {
        let r = t - f;
        res_sq += r * r;
    }
    let diag = StepDiagnostics {
        step,
        condition: design.condition,
        fit_residual_rms: (res_sq / (n_paths * dim) as f64).sqrt(),
        dropped_features: design.dropped,
    };
    Ok((fitted, diag))
}
