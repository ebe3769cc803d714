//! Discrete integration-by-parts identity linking the forward and backward
//! solvers.
//!
//! For adapted interval fields f, g on the same view,
//!
//! ```text
//! sum_j tau E<Y_j, g_j>  =  sum_j ( tau E<f_j, P_{j+1}>
//!                                   - E<Y_j dW_j, tau (Z_j + g_j)> ),
//! ```
//!
//! with `Y = S0 f` and `(P, Z)` the drifted backward solve of g. On the
//! tree both sides are computed exactly, which makes this identity the
//! primary cross-check of the whole solver stack: it fails loudly if either
//! scheme, the conditional expectations, or the load conventions drift
//! apart. The subtracted term pairs level-measurable integrands against an
//! increment, so its exact tree expectation vanishes; it is still evaluated
//! honestly, child by child.

use crate::backward::solve_backward_tree;
use crate::error::Result;
use crate::fem::FemSpace;
use crate::forward::{solve_forward_tree, Source};
use crate::noise::{AdaptedField, TreeView};

#[derive(Debug, Clone, Copy)]
pub struct DualityTerms {
    /// `sum_j tau E<Y_j, g_j>`
    pub lhs: f64,
    /// `sum_j tau E<f_j, P_{j+1}>`
    pub forward_term: f64,
    /// `sum_j E<Y_j dW_j, tau (Z_j + g_j)>`
    pub noise_term: f64,
}

impl DualityTerms {
    pub fn rhs(&self) -> f64 {
        self.forward_term - self.noise_term
    }

    pub fn relative_residual(&self) -> f64 {
        let scale = self.lhs.abs().max(self.rhs().abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.lhs - self.rhs()).abs() / scale
        }
    }
}

/// Evaluates both sides of the identity for adapted V_h fields f, g.
pub fn duality_terms(
    space: &FemSpace,
    view: &TreeView,
    f: &AdaptedField,
    g: &AdaptedField,
) -> Result<DualityTerms> {
    view.check_interval_shape(f)?;
    view.check_interval_shape(g)?;
    let y = solve_forward_tree(space, view, &Source::Adapted(f))?;
    let pair = solve_backward_tree(space, view, &Source::Adapted(g), true)?;

    let tau = view.tau();
    let branches = view.branch_count();
    let inv_branches = 1.0 / branches as f64;
    let dim = space.dim();

    let mut lhs = 0.0;
    let mut forward_term = 0.0;
    let mut noise_term = 0.0;
    for step in 0..view.steps() {
        let w = view.node_weight(step);
        for node in 0..view.nodes_at(step) {
            let y_j = y.node(step, node);
            let g_j = g.node(step, node);
            let f_j = f.node(step, node);
            let z_j = pair.z.node(step, node);

            lhs += w * tau * space.inner(y_j, g_j);

            // E_j over children of <f_j, P_{j+1}> and of <Y_j dW, tau(Z + g)>
            let zg: Vec<f64> = (0..dim).map(|d| tau * (z_j[d] + g_j[d])).collect();
            let inner_yzg = space.inner(y_j, &zg);
            let mut fwd = 0.0;
            let mut noise = 0.0;
            for m in 0..branches {
                let child = pair.p.node(step + 1, view.child(node, m));
                fwd += space.inner(f_j, child);
                noise += view.branch_increment(m) * inner_yzg;
            }
            forward_term += w * tau * fwd * inv_branches;
            noise_term += w * noise * inv_branches;
        }
    }
    Ok(DualityTerms {
        lhs,
        forward_term,
        noise_term,
    })
}
