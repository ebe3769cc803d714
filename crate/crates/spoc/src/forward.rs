//! Discrete forward operator for the state equation.
//!
//! One step of the scheme solves, for every tree node and each branch with
//! increment `dW`,
//!
//! ```text
//! (M + tau A) y_{j+1} = M (1 + dW) y_j + l_j,
//! ```
//!
//! where `l_j` is the load of the source integrated over `[t_j, t_{j+1})`
//! and `y_0 = 0`. The diffusion is implicit, the noise term multiplies the
//! left endpoint. The same recursion runs per sample path on a Gaussian
//! ensemble.

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::noise::{AdaptedField, PathEnsemble, TreeView};
use crate::source::{self, RandomProfileSource, SpaceTime, DEFAULT_QUAD_ORDER};

/// A source term for the forward or backward schemes.
pub enum Source<'a> {
    /// Closed-form deterministic g(t, x).
    Deterministic(&'a dyn SpaceTime),
    /// Adapted V_h field, one coefficient vector per (interval, node).
    Adapted(&'a AdaptedField),
    /// Adapted box-constrained control.
    Control(&'a ControlField),
    /// Random adapted combination of closed-form spatial profiles.
    Profiles(&'a RandomProfileSource),
}

/// Precomputed per-interval load provider for a [`Source`].
pub(crate) struct SourceLoads<'a> {
    space: &'a FemSpace,
    view: TreeView<'a>,
    kind: LoadKind<'a>,
}

enum LoadKind<'a> {
    /// Node-independent loads, one per step.
    PerStep(Vec<Vec<f64>>),
    Adapted(&'a AdaptedField),
    Control(&'a ControlField),
    Profiles {
        src: &'a RandomProfileSource,
        profile_loads: Vec<Vec<f64>>,
    },
}

impl<'a> Source<'a> {
    pub(crate) fn loads(&self, space: &'a FemSpace, view: TreeView<'a>) -> Result<SourceLoads<'a>> {
        let kind = match self {
            Source::Deterministic(f) => {
                let mut per_step = Vec::with_capacity(view.steps());
                for j in 0..view.steps() {
                    let mut load = vec![0.0; space.dim()];
                    source::interval_load(
                        space,
                        *f,
                        view.t(j),
                        view.t(j + 1),
                        DEFAULT_QUAD_ORDER,
                        &mut load,
                    )?;
                    per_step.push(load);
                }
                LoadKind::PerStep(per_step)
            }
            Source::Adapted(field) => {
                view.check_interval_shape(field)?;
                if field.dim() != space.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "adapted source dim {} does not match space dim {}",
                        field.dim(),
                        space.dim()
                    )));
                }
                LoadKind::Adapted(field)
            }
            Source::Control(u) => {
                view.check_interval_shape(u.values())?;
                LoadKind::Control(u)
            }
            Source::Profiles(src) => {
                view.check_interval_shape(src.coeffs())?;
                LoadKind::Profiles {
                    src,
                    profile_loads: RandomProfileSource::profile_loads(space, DEFAULT_QUAD_ORDER)?,
                }
            }
        };
        Ok(SourceLoads { space, view, kind })
    }
}

impl SourceLoads<'_> {
    /// Writes the time-integrated load for (step, node) into `out`.
    pub(crate) fn fill(&self, step: usize, node: usize, out: &mut [f64]) {
        let tau = self.view.tau();
        match &self.kind {
            LoadKind::PerStep(loads) => out.copy_from_slice(&loads[step]),
            LoadKind::Adapted(field) => {
                self.space.mass().matvec_into(field.node(step, node), out);
                for v in out.iter_mut() {
                    *v *= tau;
                }
            }
            LoadKind::Control(u) => {
                for v in out.iter_mut() {
                    *v = 0.0;
                }
                u.load_into(self.space, step, node, tau, out);
            }
            LoadKind::Profiles { src, profile_loads } => {
                src.interval_load(step, node, tau, profile_loads, out);
            }
        }
    }
}

/// Runs the forward recursion over a tree view. The result has the state at
/// every level `0..=steps` for every node.
pub fn solve_forward_tree(space: &FemSpace, view: &TreeView, src: &Source) -> Result<AdaptedField> {
    let loads = src.loads(space, *view)?;
    forward_sweep(space, view, |step, node, out| loads.fill(step, node, out))
}

pub(crate) fn forward_sweep(
    space: &FemSpace,
    view: &TreeView,
    fill_load: impl Fn(usize, usize, &mut [f64]),
) -> Result<AdaptedField> {
    let dim = space.dim();
    let factor = space.shifted_factor(view.tau())?;
    let branches = view.branch_count();
    let mut out = AdaptedField::zero_states(view, dim);
    let mut mass_state = vec![0.0; dim];
    let mut load = vec![0.0; dim];
    for step in 0..view.steps() {
        let (head, next) = out.split_at_level(step);
        let parents = &head[step];
        for node in 0..view.nodes_at(step) {
            let parent = &parents[node * dim..(node + 1) * dim];
            space.mass().matvec_into(parent, &mut mass_state);
            fill_load(step, node, &mut load);
            for m in 0..branches {
                let growth = 1.0 + view.branch_increment(m);
                let child = view.child(node, m);
                let slot = &mut next[child * dim..(child + 1) * dim];
                for d in 0..dim {
                    slot[d] = growth * mass_state[d] + load[d];
                }
                factor.solve_in_place(slot);
            }
        }
    }
    Ok(out)
}

/// Per-path state trajectories of a Monte Carlo forward solve.
#[derive(Debug, Clone)]
pub struct PathField {
    dim: usize,
    levels: usize,
    n_paths: usize,
    data: Vec<f64>,
}

impl PathField {
    pub fn zeros(n_paths: usize, levels: usize, dim: usize) -> Self {
        PathField {
            dim,
            levels,
            n_paths,
            data: vec![0.0; n_paths * levels * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn at(&self, path: usize, level: usize) -> &[f64] {
        let o = (path * self.levels + level) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn at_mut(&mut self, path: usize, level: usize) -> &mut [f64] {
        let o = (path * self.levels + level) * self.dim;
        &mut self.data[o..o + self.dim]
    }
}

/// Runs the forward recursion along every path of the ensemble.
///
/// Only deterministic sources are admitted here: adaptedness is then
/// trivial per path. Non-finite increments are rejected.
pub fn solve_forward_paths(
    space: &FemSpace,
    ens: &PathEnsemble,
    src: &Source,
) -> Result<PathField> {
    let per_step: Vec<Vec<f64>> = match src {
        Source::Deterministic(f) => {
            let steps = ens.steps();
            let grid = ens.grid();
            let mut loads = Vec::with_capacity(steps);
            for j in 0..steps {
                let mut load = vec![0.0; space.dim()];
                source::interval_load(
                    space,
                    *f,
                    grid.t(j),
                    grid.t(j + 1),
                    DEFAULT_QUAD_ORDER,
                    &mut load,
                )?;
                loads.push(load);
            }
            loads
        }
        _ => {
            return Err(Error::ShapeMismatch(
                "path solver requires a deterministic source".into(),
            ))
        }
    };
    for p in 0..ens.n_paths() {
        for (j, dw) in ens.path(p).iter().enumerate() {
            if !dw.is_finite() {
                return Err(Error::NonFinite { path: p, step: j });
            }
        }
    }

    let dim = space.dim();
    let steps = ens.steps();
    let factor = space.shifted_factor(ens.grid().tau())?;
    let mut out = PathField::zeros(ens.n_paths(), steps + 1, dim);
    let mut mass_state = vec![0.0; dim];
    let mut rhs = vec![0.0; dim];
    for p in 0..ens.n_paths() {
        for j in 0..steps {
            let dw = ens.path(p)[j];
            space.mass().matvec_into(out.at(p, j), &mut mass_state);
            let load = &per_step[j];
            for d in 0..dim {
                rhs[d] = (1.0 + dw) * mass_state[d] + load[d];
            }
            factor.solve_in_place(&mut rhs);
            out.at_mut(p, j + 1).copy_from_slice(&rhs);
        }
    }
    Ok(out)
}

/// Maximum relative residual of the forward recursion over all (step,
/// node, branch) triples; meaningful on any view.
pub fn forward_residual(
    space: &FemSpace,
    view: &TreeView,
    states: &AdaptedField,
    src: &Source,
) -> Result<f64> {
    view.check_state_shape(states)?;
    let loads = src.loads(space, *view)?;
    let dim = space.dim();
    let tau = view.tau();
    let mut load = vec![0.0; dim];
    let mut worst = 0.0f64;
    for step in 0..view.steps() {
        for node in 0..view.nodes_at(step) {
            let parent = states.node(step, node);
            let m_parent = space.mass().matvec(parent);
            loads.fill(step, node, &mut load);
            for m in 0..view.branch_count() {
                let child = states.node(step + 1, view.child(node, m));
                let m_child = space.mass().matvec(child);
                let a_child = space.stiffness().matvec(child);
                let growth = 1.0 + view.branch_increment(m);
                let mut res = 0.0;
                let mut scale = 0.0;
                for d in 0..dim {
                    let r = m_child[d] + tau * a_child[d] - growth * m_parent[d] - load[d];
                    res += r * r;
                    scale += m_child[d] * m_child[d] + load[d] * load[d];
                }
                worst = worst.max(res.sqrt() / (1.0 + scale.sqrt()));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_space;
    use crate::noise::{build_tree, IncrementLaw};
    use approx::assert_relative_eq;

    #[test]
    fn zero_source_gives_zero_state() {
        let space = build_space(0.0, 1.0, 8).unwrap();
        let tree = build_tree(1.0, 4).unwrap();
        let view = tree.view();
        let zero = |_t: f64, _x: f64| 0.0;
        let y = solve_forward_tree(&space, &view, &Source::Deterministic(&zero)).unwrap();
        for l in 0..=4 {
            assert!(y.level(l).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_dof_constant_source_closed_form() {
        // N_h = 1, J = 1, tau = 1/4, source = the hat function: children both 1/16
        let space = build_space(0.0, 1.0, 2).unwrap();
        let tree = build_tree(0.25, 1).unwrap();
        let view = tree.view();
        let hat = |_t: f64, x: f64| if x <= 0.5 { 2.0 * x } else { 2.0 * (1.0 - x) };
        let y = solve_forward_tree(&space, &view, &Source::Deterministic(&hat)).unwrap();
        assert_relative_eq!(y.node(1, 0)[0], 1.0 / 16.0, epsilon = 1e-13);
        assert_relative_eq!(y.node(1, 1)[0], 1.0 / 16.0, epsilon = 1e-13);
    }

    #[test]
    fn matches_dense_enumeration_oracle() {
        // dense solve of the full coupled system over all nodes of a J = 3 tree
        let space = build_space(0.0, 1.0, 4).unwrap();
        let dim = space.dim();
        let tree = build_tree(0.9, 3).unwrap();
        let view = tree.view();
        let mut g = AdaptedField::zero_intervals(&view, dim);
        g.randomize_gaussian(17, 1.0);
        let y = solve_forward_tree(&space, &view, &Source::Adapted(&g)).unwrap();

        // oracle: unknowns stacked per (level, node); block equations
        // (M + tau A) y_{j+1,child} - (1 + dw) M y_{j,parent} = tau M g_{j,parent}
        let tau = view.tau();
        let offsets = [0usize, 1, 3, 7, 15]; // cumulative node counts per level
        let total = 15 * dim;
        let mut a = nalgebra::DMatrix::<f64>::zeros(total, total);
        let mut b = nalgebra::DVector::<f64>::zeros(total);
        let dense = |t: &crate::fem::SymTridiag| {
            let mut d = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for i in 0..dim {
                d[(i, i)] = t.diag[i];
                if i + 1 < dim {
                    d[(i, i + 1)] = t.off[i];
                    d[(i + 1, i)] = t.off[i];
                }
            }
            d
        };
        let md = dense(space.mass());
        let ad = dense(space.stiffness());
        let shifted = &md + tau * &ad;
        // level 0 block: y_0 = 0
        for i in 0..dim {
            a[(i, i)] = 1.0;
        }
        for j in 0..3usize {
            for n in 0..(1usize << j) {
                for m in 0..2usize {
                    let child = 2 * n + m;
                    let row0 = (offsets[j + 1] + child) * dim;
                    let colc = (offsets[j + 1] + child) * dim;
                    let colp = (offsets[j] + n) * dim;
                    let dw = if m == 0 {
                        tree.sqrt_tau()
                    } else {
                        -tree.sqrt_tau()
                    };
                    for r in 0..dim {
                        for c in 0..dim {
                            a[(row0 + r, colc + c)] += shifted[(r, c)];
                            a[(row0 + r, colp + c)] += -(1.0 + dw) * md[(r, c)];
                        }
                    }
                    let mg = space.mass().matvec(g.node(j, n));
                    for r in 0..dim {
                        b[row0 + r] = tau * mg[r];
                    }
                }
            }
        }
        let x = a.lu().solve(&b).unwrap();
        for j in 0..=3usize {
            for n in 0..(1usize << j) {
                let block = (offsets[j] + n) * dim;
                for d in 0..dim {
                    assert_relative_eq!(y.node(j, n)[d], x[block + d], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn linearity_nodewise() {
        let space = build_space(0.0, 1.0, 6).unwrap();
        let tree = build_tree(1.0, 4).unwrap();
        let view = tree.view();
        let mut f = AdaptedField::zero_intervals(&view, space.dim());
        let mut g = AdaptedField::zero_intervals(&view, space.dim());
        f.randomize_gaussian(1, 1.0);
        g.randomize_gaussian(2, 1.0);
        let (alpha, beta) = (1.7, -0.4);
        let mut combo = f.clone();
        for l in 0..combo.n_levels() {
            let gl = g.level(l).to_vec();
            for (c, gv) in combo.level_mut(l).iter_mut().zip(gl) {
                *c = alpha * *c + beta * gv;
            }
        }
        let yf = solve_forward_tree(&space, &view, &Source::Adapted(&f)).unwrap();
        let yg = solve_forward_tree(&space, &view, &Source::Adapted(&g)).unwrap();
        let yc = solve_forward_tree(&space, &view, &Source::Adapted(&combo)).unwrap();
        for l in 0..=4 {
            for (i, v) in yc.level(l).iter().enumerate() {
                let expect = alpha * yf.level(l)[i] + beta * yg.level(l)[i];
                assert_relative_eq!(*v, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn residual_of_defining_relation() {
        let space = build_space(0.0, 1.0, 8).unwrap();
        let tree = build_tree(1.0, 5).unwrap();
        let view = tree.view();
        let mut g = AdaptedField::zero_intervals(&view, space.dim());
        g.randomize_gaussian(23, 1.0);
        let src = Source::Adapted(&g);
        let y = solve_forward_tree(&space, &view, &src).unwrap();
        let res = forward_residual(&space, &view, &y, &src).unwrap();
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn all_up_path_matches_tree_branch() {
        let space = build_space(0.0, 1.0, 4).unwrap();
        let steps = 6usize;
        let tree = build_tree(1.0, steps).unwrap();
        let view = tree.view();
        let g = |t: f64, x: f64| (1.0 + t) * x * (1.0 - x);
        let y_tree = solve_forward_tree(&space, &view, &Source::Deterministic(&g)).unwrap();

        let st = tree.sqrt_tau();
        let ens = PathEnsemble::from_increments(
            1.0,
            steps,
            1,
            0,
            IncrementLaw::TwoPoint,
            vec![st; steps],
        )
        .unwrap();
        let y_path = solve_forward_paths(&space, &ens, &Source::Deterministic(&g)).unwrap();
        for j in 0..=steps {
            // all-up branch is node 0 at every level
            for d in 0..space.dim() {
                assert_eq!(y_path.at(0, j)[d], y_tree.node(j, 0)[d]);
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_paths() {
        let space = build_space(0.0, 1.0, 6).unwrap();
        let ens = PathEnsemble::sample(1.0, 8, 20, 4).unwrap();
        let zero = |_t: f64, _x: f64| 0.0;
        let y = solve_forward_paths(&space, &ens, &Source::Deterministic(&zero)).unwrap();
        for p in 0..20 {
            for j in 0..=8 {
                assert!(y.at(p, j).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn path_solver_rejects_non_finite_and_adapted() {
        let space = build_space(0.0, 1.0, 4).unwrap();
        let ens = PathEnsemble::from_increments(
            1.0,
            2,
            1,
            0,
            IncrementLaw::Gaussian,
            vec![0.1, f64::NAN],
        )
        .unwrap();
        let g = |_t: f64, _x: f64| 1.0;
        assert!(solve_forward_paths(&space, &ens, &Source::Deterministic(&g)).is_err());

        let tree = build_tree(1.0, 2).unwrap();
        let field = AdaptedField::zero_intervals(&tree.view(), space.dim());
        let good = PathEnsemble::sample(1.0, 2, 3, 1).unwrap();
        assert!(solve_forward_paths(&space, &good, &Source::Adapted(&field)).is_err());
    }

    #[test]
    fn monte_carlo_second_moment_matches_tree() {
        // E|Y_J|^2 depends only on first and second increment moments, so the
        // Gaussian MC answer must agree with the exact tree value
        let space = build_space(0.0, 1.0, 4).unwrap();
        let steps = 8usize;
        let tree = build_tree(1.0, steps).unwrap();
        let view = tree.view();
        let g = |t: f64, x: f64| (1.0 - t) * (std::f64::consts::PI * x).sin();
        let y_tree = solve_forward_tree(&space, &view, &Source::Deterministic(&g)).unwrap();
        let w = view.node_weight(steps);
        let exact: f64 = (0..view.nodes_at(steps))
            .map(|n| {
                let y = y_tree.node(steps, n);
                w * space.inner(y, y)
            })
            .sum();

        let m = 2000usize;
        let ens = PathEnsemble::sample(1.0, steps, m, 99).unwrap();
        let y = solve_forward_paths(&space, &ens, &Source::Deterministic(&g)).unwrap();
        let vals: Vec<f64> = (0..m)
            .map(|p| {
                let yj = y.at(p, steps);
                space.inner(yj, yj)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 5.0 * se,
            "MC mean {mean}, tree exact {exact}, se {se}"
        );
    }

    #[test]
    fn adaptedness_under_later_increment_perturbation() {
        let space = build_space(0.0, 1.0, 4).unwrap();
        let steps = 6usize;
        let mut inc = vec![0.05; steps];
        let g = |_t: f64, x: f64| x;
        let base =
            PathEnsemble::from_increments(1.0, steps, 1, 0, IncrementLaw::Gaussian, inc.clone())
                .unwrap();
        let y0 = solve_forward_paths(&space, &base, &Source::Deterministic(&g)).unwrap();
        inc[4] = -0.3; // perturb a late increment
        let pert =
            PathEnsemble::from_increments(1.0, steps, 1, 0, IncrementLaw::Gaussian, inc).unwrap();
        let y1 = solve_forward_paths(&space, &pert, &Source::Deterministic(&g)).unwrap();
        for j in 0..=4 {
            assert_eq!(
                y0.at(0, j),
                y1.at(0, j),
                "level {j} must not see step-4 noise"
            );
        }
        assert_ne!(y0.at(0, 5), y1.at(0, 5));
    }
}
