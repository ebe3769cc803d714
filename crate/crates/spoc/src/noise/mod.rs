//! Discrete models of the driving Brownian motion and its filtration.
//!
//! The binomial tree realizes the filtration exactly: step `j` branches each
//! node into an up child (`dW = +sqrt(tau)`) and a down child
//! (`dW = -sqrt(tau)`), so `E[dW] = 0` and `E[dW^2] = tau` hold without
//! sampling error and conditional expectations are child averages. Every
//! identity the solvers rely on (tower property, Ito isometry, martingale
//! orthogonality) is therefore exact on the tree, which makes it the
//! correctness oracle for the Monte Carlo backend in [`paths`].
//!
//! A [`TreeView`] reads the same tree through a coarser clock: `factor` fine
//! steps are merged into one, increments are summed, and conditional
//! expectations average over all `2^factor` descendants. Views are how
//! coarse-in-time schemes run against the fine filtration in refinement
//! studies; `factor = 1` is the plain tree.

pub mod paths;

pub use paths::{IncrementLaw, PathEnsemble};

use crate::error::{Error, Result};

/// Hard cap on tree depth; a full scalar field at depth 26 is already half a
/// gigabyte per spatial dof.
pub const MAX_TREE_DEPTH: usize = 26;

/// Uniform time grid on [0, T] with J steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidGrid(format!("T = {t_end} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("J must be at least 1".into()));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t_end * j as f64 / self.steps as f64
    }
}

/// Non-recombining binomial tree over a [`TimeGrid`].
///
/// Nodes at level `j` are indexed `0..2^j`; node `n` has children `2n` (up)
/// and `2n + 1` (down), each with conditional weight 1/2.
#[derive(Debug, Clone)]
pub struct BinomialTree {
    grid: TimeGrid,
    sqrt_tau: f64,
}

/// Bytes needed to store one field with `dim` spatial dofs on all levels of
/// a depth-`j` tree.
pub fn field_bytes(j: usize, dim: usize) -> u64 {
    let nodes = (1u64 << (j + 1)) - 1;
    nodes * dim as u64 * 8
}

pub fn build_tree(t_end: f64, steps: usize) -> Result<BinomialTree> {
    BinomialTree::new(t_end, steps)
}

impl BinomialTree {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        let grid = TimeGrid::new(t_end, steps)?;
        if steps > MAX_TREE_DEPTH {
            return Err(Error::InvalidGrid(format!(
                "tree depth {steps} exceeds the hard cap {MAX_TREE_DEPTH}"
            )));
        }
        let sqrt_tau = grid.tau().sqrt();
        Ok(BinomialTree { grid, sqrt_tau })
    }

    /// As [`BinomialTree::new`], but rejects trees whose fields would exceed
    /// the byte budget, reporting the computed requirement.
    pub fn new_within_budget(
        t_end: f64,
        steps: usize,
        dim: usize,
        budget_bytes: u64,
    ) -> Result<Self> {
        let required = field_bytes(steps, dim);
        if required > budget_bytes {
            return Err(Error::MemoryBudget {
                j: steps,
                n_h: dim,
                required,
                budget: budget_bytes,
            });
        }
        Self::new(t_end, steps)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn sqrt_tau(&self) -> f64 {
        self.sqrt_tau
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        1usize << level
    }

    /// The native view (factor 1).
    pub fn view(&self) -> TreeView<'_> {
        TreeView {
            tree: self,
            factor: 1,
            steps: self.steps(),
        }
    }

    /// A coarse view merging `factor` fine steps per coarse step.
    pub fn coarse_view(&self, factor: usize) -> Result<TreeView<'_>> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::NonDivisor {
                factor,
                steps: self.steps(),
            });
        }
        Ok(TreeView {
            tree: self,
            factor,
            steps: self.steps() / factor,
        })
    }
}

/// A coarse-clock reading of a binomial tree.
#[derive(Debug, Clone, Copy)]
pub struct TreeView<'a> {
    tree: &'a BinomialTree,
    factor: usize,
    steps: usize,
}

impl<'a> TreeView<'a> {
    pub fn tree(&self) -> &'a BinomialTree {
        self.tree
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tree.tau() * self.factor as f64
    }

    pub fn t_end(&self) -> f64 {
        self.tree.grid().t_end()
    }

    pub fn t(&self, step: usize) -> f64 {
        self.tree.grid().t(step * self.factor)
    }

    /// Fine-tree level backing view step `i`.
    pub fn fine_level(&self, step: usize) -> usize {
        step * self.factor
    }

    pub fn nodes_at(&self, step: usize) -> usize {
        1usize << (step * self.factor)
    }

    /// Number of descendants each node spawns over one view step.
    pub fn branch_count(&self) -> usize {
        1usize << self.factor
    }

    /// Aggregated increment along branch `m` (bit = 1 means a down move).
    pub fn branch_increment(&self, m: usize) -> f64 {
        let downs = (m as u32).count_ones() as i64;
        let net = self.factor as i64 - 2 * downs;
        self.tree.sqrt_tau * net as f64
    }

    pub fn child(&self, node: usize, m: usize) -> usize {
        (node << self.factor) | m
    }

    /// Probability weight of one node at `step`.
    pub fn node_weight(&self, step: usize) -> f64 {
        0.5f64.powi((step * self.factor) as i32)
    }

    /// Checks that a field laid out per view step matches this view.
    pub fn check_state_shape(&self, field: &AdaptedField) -> Result<()> {
        self.check_shape(field, self.steps + 1)
    }

    pub fn check_interval_shape(&self, field: &AdaptedField) -> Result<()> {
        self.check_shape(field, self.steps)
    }

    fn check_shape(&self, field: &AdaptedField, levels: usize) -> Result<()> {
        if field.n_levels() != levels {
            return Err(Error::ShapeMismatch(format!(
                "field has {} levels, view expects {levels}",
                field.n_levels()
            )));
        }
        for l in 0..levels {
            if field.nodes_at(l) != self.nodes_at(l) {
                return Err(Error::ShapeMismatch(format!(
                    "level {l}: field has {} nodes, view expects {}",
                    field.nodes_at(l),
                    self.nodes_at(l)
                )));
            }
        }
        Ok(())
    }
}

/// Per-level, per-node storage of coefficient vectors, level-major with
/// children of node `n` at `2n` and `2n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    dim: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn new(dim: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        for (l, data) in levels.iter().enumerate() {
            if data.len() % dim != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "level {l} length {} not a multiple of dim {dim}",
                    data.len()
                )));
            }
        }
        Ok(AdaptedField { dim, levels })
    }

    /// Zero state field on a view: levels `0..=steps`.
    pub fn zero_states(view: &TreeView, dim: usize) -> Self {
        let levels = (0..=view.steps())
            .map(|l| vec![0.0; view.nodes_at(l) * dim])
            .collect();
        AdaptedField { dim, levels }
    }

    /// Zero interval field on a view: levels `0..steps`.
    pub fn zero_intervals(view: &TreeView, dim: usize) -> Self {
        let levels = (0..view.steps())
            .map(|l| vec![0.0; view.nodes_at(l) * dim])
            .collect();
        AdaptedField { dim, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn nodes_at(&self, level: usize) -> usize {
        self.levels[level].len() / self.dim
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        &mut self.levels[level]
    }

    pub fn node(&self, level: usize, node: usize) -> &[f64] {
        &self.levels[level][node * self.dim..(node + 1) * self.dim]
    }

    pub fn node_mut(&mut self, level: usize, node: usize) -> &mut [f64] {
        &mut self.levels[level][node * self.dim..(node + 1) * self.dim]
    }

    /// Read access to levels `..=level` together with write access to
    /// `level + 1`, for parent-to-child sweeps.
    pub fn split_at_level(&mut self, level: usize) -> (&[Vec<f64>], &mut Vec<f64>) {
        let (head, tail) = self.levels.split_at_mut(level + 1);
        (head, &mut tail[0])
    }

    /// True if all node vectors at `level` coincide.
    pub fn is_deterministic_at(&self, level: usize) -> bool {
        let first = self.node(level, 0);
        (1..self.nodes_at(level)).all(|n| self.node(level, n) == first)
    }

    /// Seeded standard-normal field with the same shape as `self`.
    pub fn randomize_gaussian(&mut self, seed: u64, scale: f64) {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        for level in &mut self.levels {
            for v in level.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        }
    }

    /// Re-expresses a field stored on a coarser view (`master_factor` fine
    /// steps per master step) as an interval field on `view`.
    ///
    /// The master must be at least as coarse as the view and its intervals
    /// must tile the view's: values are copied from the measurable ancestor.
    pub fn expand_to_view(&self, master_factor: usize, view: &TreeView) -> Result<AdaptedField> {
        if master_factor % view.factor() != 0 {
            return Err(Error::NonDivisor {
                factor: view.factor(),
                steps: master_factor,
            });
        }
        let per_master = master_factor / view.factor();
        if self.n_levels() * per_master != view.steps() {
            return Err(Error::ShapeMismatch(format!(
                "master with {} levels cannot tile {} view steps",
                self.n_levels(),
                view.steps()
            )));
        }
        let mut out = AdaptedField::zero_intervals(view, self.dim);
        for i in 0..view.steps() {
            let master_step = i / per_master;
            let master_level_bits = master_step * master_factor;
            let view_level_bits = view.fine_level(i);
            let shift = view_level_bits - master_level_bits;
            for n in 0..view.nodes_at(i) {
                let src = self.node(master_step, n >> shift);
                out.node_mut(i, n).copy_from_slice(src);
            }
        }
        Ok(out)
    }
}

/// Conditional expectation one view step back: child values at `step + 1`
/// are averaged into their parents at `step`.
pub fn cond_expect(
    view: &TreeView,
    step: usize,
    child_values: &[f64],
    dim: usize,
) -> Result<Vec<f64>> {
    let branches = view.branch_count();
    let parents = view.nodes_at(step);
    if child_values.len() != parents * branches * dim {
        return Err(Error::ShapeMismatch(format!(
            "expected {} child values, got {}",
            parents * branches * dim,
            child_values.len()
        )));
    }
    let inv = 1.0 / branches as f64;
    let mut out = vec![0.0; parents * dim];
    for n in 0..parents {
        let slot = &mut out[n * dim..(n + 1) * dim];
        for m in 0..branches {
            let child = &child_values[(n * branches + m) * dim..(n * branches + m + 1) * dim];
            for (s, c) in slot.iter_mut().zip(child) {
                *s += c;
            }
        }
        for s in slot.iter_mut() {
            *s *= inv;
        }
    }
    Ok(out)
}

/// Total expectation of one level of an adapted field.
pub fn expectation(view: &TreeView, field: &AdaptedField, step: usize) -> Vec<f64> {
    let w = view.node_weight(step);
    let dim = field.dim();
    let mut out = vec![0.0; dim];
    for n in 0..field.nodes_at(step) {
        for (o, v) in out.iter_mut().zip(field.node(step, n)) {
            *o += w * v;
        }
    }
    out
}

/// Leafwise discrete stochastic integral `sum_j f_j dW_j` of an adapted
/// interval field; the result lives on the terminal level.
pub fn ito_integral(view: &TreeView, integrand: &AdaptedField) -> Result<Vec<f64>> {
    view.check_interval_shape(integrand)?;
    let dim = integrand.dim();
    let branches = view.branch_count();
    let mut current = vec![0.0; dim]; // single root node, zero integral
    for step in 0..view.steps() {
        let mut next = vec![0.0; view.nodes_at(step + 1) * dim];
        for n in 0..view.nodes_at(step) {
            let f = integrand.node(step, n);
            let parent = &current[n * dim..(n + 1) * dim];
            for m in 0..branches {
                let dw = view.branch_increment(m);
                let child = view.child(n, m);
                let slot = &mut next[child * dim..(child + 1) * dim];
                for d in 0..dim {
                    slot[d] = parent[d] + f[d] * dw;
                }
            }
        }
        current = next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_field_states(view: &TreeView, f: impl Fn(usize, usize) -> f64) -> AdaptedField {
        let mut field = AdaptedField::zero_states(view, 1);
        for l in 0..=view.steps() {
            for n in 0..view.nodes_at(l) {
                field.node_mut(l, n)[0] = f(l, n);
            }
        }
        field
    }

    fn scalar_field_intervals(view: &TreeView, f: impl Fn(usize, usize) -> f64) -> AdaptedField {
        let mut field = AdaptedField::zero_intervals(view, 1);
        for l in 0..view.steps() {
            for n in 0..view.nodes_at(l) {
                field.node_mut(l, n)[0] = f(l, n);
            }
        }
        field
    }

    #[test]
    fn unit_tree_increments() {
        let tree = build_tree(1.0, 1).unwrap();
        let view = tree.view();
        assert_eq!(view.branch_count(), 2);
        assert_relative_eq!(view.branch_increment(0), 1.0);
        assert_relative_eq!(view.branch_increment(1), -1.0);
        assert_relative_eq!(view.node_weight(1), 0.5);

        let tree = build_tree(1.0, 2).unwrap();
        let view = tree.view();
        assert_eq!(view.nodes_at(2), 4);
        assert_relative_eq!(view.node_weight(2), 0.25);
    }

    #[test]
    fn increment_moments_exact() {
        let tree = build_tree(2.0, 4).unwrap();
        let view = tree.view();
        let tau = view.tau();
        // E[dW] = 0 and E[dW^2] = tau at every step, exactly
        for step in 0..view.steps() {
            let mut mean = 0.0;
            let mut second = 0.0;
            let w = view.node_weight(step) * 0.5;
            for _node in 0..view.nodes_at(step) {
                for m in 0..2 {
                    let dw = view.branch_increment(m);
                    mean += w * dw;
                    second += w * dw * dw;
                }
            }
            assert_eq!(mean, 0.0);
            assert_relative_eq!(second, tau, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let tree = build_tree(1.0, 6).unwrap();
        let view = tree.view();
        for l in 0..=6 {
            let total = view.node_weight(l) * view.nodes_at(l) as f64;
            assert_eq!(total, 1.0);
        }
    }

    #[test]
    fn budget_rejects_oversized_tree() {
        let err = BinomialTree::new_within_budget(1.0, 20, 64, 1 << 20).unwrap_err();
        match err {
            Error::MemoryBudget {
                required, budget, ..
            } => {
                assert!(required > budget);
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(BinomialTree::new_within_budget(1.0, 8, 64, 1 << 30).is_ok());
        assert!(BinomialTree::new(1.0, 40).is_err());
    }

    #[test]
    fn cond_expect_averages_children() {
        let tree = build_tree(1.0, 2).unwrap();
        let view = tree.view();
        let children = [3.0, 5.0, -1.0, 7.0];
        let parents = cond_expect(&view, 1, &children, 1).unwrap();
        assert_eq!(parents, vec![4.0, 3.0]);
    }

    #[test]
    fn cond_expect_fixes_deterministic_fields() {
        let tree = build_tree(1.0, 3).unwrap();
        let view = tree.view();
        let field = scalar_field_states(&view, |l, _| l as f64 * 1.5 - 0.25);
        for l in (0..3).rev() {
            let parents = cond_expect(&view, l, field.level(l + 1), 1).unwrap();
            for p in &parents {
                assert_eq!(*p, (l + 1) as f64 * 1.5 - 0.25);
            }
        }
        assert!(field.is_deterministic_at(2));
    }

    #[test]
    fn tower_property_exact() {
        let tree = build_tree(1.0, 3).unwrap();
        let view = tree.view();
        let field = scalar_field_states(&view, |l, n| ((l * 31 + n * 17) % 13) as f64 - 6.0);
        // E_{t1} E_{t2} X = E_{t1} X over the 8 leaves
        let at2 = cond_expect(&view, 2, field.level(3), 1).unwrap();
        let at1_nested = cond_expect(&view, 1, &at2, 1).unwrap();
        // brute force: average the 4 leaves below each level-1 node
        let leaves = field.level(3);
        for n in 0..2 {
            let direct: f64 = (0..4).map(|i| leaves[n * 4 + i]).sum::<f64>() / 4.0;
            assert!((direct - at1_nested[n]).abs() <= 1e-15 * direct.abs().max(1.0));
        }
        // total expectation is the weighted node sum
        let total = expectation(&view, &field, 3);
        let direct: f64 = leaves.iter().sum::<f64>() / 8.0;
        assert!((total[0] - direct).abs() <= 1e-15 * direct.abs().max(1.0));
    }

    #[test]
    fn martingale_orthogonality_exact() {
        // E_{t_j}[dW_j * X] = 0 for level-j measurable X
        let tree = build_tree(1.5, 4).unwrap();
        let view = tree.view();
        let x = scalar_field_intervals(&view, |l, n| ((l * 7 + n * 3) % 5) as f64 - 2.0);
        for step in 0..view.steps() {
            for n in 0..view.nodes_at(step) {
                let v = x.node(step, n)[0];
                let up = v * view.branch_increment(0);
                let dn = v * view.branch_increment(1);
                assert_eq!(0.5 * (up + dn), 0.0);
            }
        }
    }

    #[test]
    fn ito_integral_examples() {
        let tree = build_tree(1.0, 1).unwrap();
        let view = tree.view();
        let zero = AdaptedField::zero_intervals(&view, 1);
        assert_eq!(ito_integral(&view, &zero).unwrap(), vec![0.0, 0.0]);

        let c = 2.5;
        let field = scalar_field_intervals(&view, |_, _| c);
        let leaves = ito_integral(&view, &field).unwrap();
        let st = tree.sqrt_tau();
        assert_relative_eq!(leaves[0], c * st);
        assert_relative_eq!(leaves[1], -c * st);
        let second_moment: f64 = 0.5 * (leaves[0] * leaves[0] + leaves[1] * leaves[1]);
        assert_relative_eq!(second_moment, c * c * tree.tau(), epsilon = 1e-15);
    }

    #[test]
    fn ito_isometry_exact_j4() {
        let tree = build_tree(0.8, 4).unwrap();
        let view = tree.view();
        let f = scalar_field_intervals(&view, |l, n| {
            (((l + 1) * 29 + n * 13) % 11) as f64 / 3.0 - 1.7
        });
        let leaves = ito_integral(&view, &f).unwrap();
        let w = view.node_weight(4);
        let lhs: f64 = leaves.iter().map(|v| w * v * v).sum();
        let tau = view.tau();
        let mut rhs = 0.0;
        for step in 0..4 {
            let wl = view.node_weight(step);
            for n in 0..view.nodes_at(step) {
                let v = f.node(step, n)[0];
                rhs += tau * wl * v * v;
            }
        }
        assert!((lhs - rhs).abs() <= 1e-14 * rhs.max(1.0));
    }

    #[test]
    fn coarse_view_aggregates_increments() {
        let tree = build_tree(1.0, 4).unwrap();
        let view = tree.coarse_view(2).unwrap();
        assert_eq!(view.steps(), 2);
        assert_eq!(view.branch_count(), 4);
        assert_relative_eq!(view.tau(), 0.5);
        let st = tree.sqrt_tau();
        assert_relative_eq!(view.branch_increment(0b00), 2.0 * st);
        assert_relative_eq!(view.branch_increment(0b01), 0.0);
        assert_relative_eq!(view.branch_increment(0b10), 0.0);
        assert_relative_eq!(view.branch_increment(0b11), -2.0 * st);
        // conditional variance is exactly the coarse tau
        let var: f64 = (0..4)
            .map(|m| view.branch_increment(m).powi(2))
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(var, view.tau(), epsilon = 1e-15);
        assert!(tree.coarse_view(3).is_err());
    }

    #[test]
    fn expand_to_view_respects_measurability() {
        let tree = build_tree(1.0, 4).unwrap();
        // master on the 2-step view, expanded onto the native view
        let coarse = tree.coarse_view(2).unwrap();
        let master = {
            let mut f = AdaptedField::zero_intervals(&coarse, 1);
            f.node_mut(0, 0)[0] = 1.0;
            for n in 0..4 {
                f.node_mut(1, n)[0] = 10.0 + n as f64;
            }
            f
        };
        let fine = tree.view();
        let expanded = master.expand_to_view(2, &fine).unwrap();
        assert_eq!(expanded.n_levels(), 4);
        // fine steps 0, 1 inherit master step 0
        assert_eq!(expanded.node(0, 0)[0], 1.0);
        for n in 0..2 {
            assert_eq!(expanded.node(1, n)[0], 1.0);
        }
        // fine steps 2, 3 inherit master step 1 via the level-2 ancestor
        for n in 0..4 {
            assert_eq!(expanded.node(2, n)[0], 10.0 + n as f64);
        }
        for n in 0..8 {
            assert_eq!(expanded.node(3, n)[0], 10.0 + (n >> 1) as f64);
        }
    }
}
