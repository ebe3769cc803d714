//! Stability ratios of the discrete solvers across time refinement.
//!
//! Each refinement level runs on its own tree; the data is a fixed seeded
//! family of random adapted sources built from smooth spatial profiles, and
//! the reported ratios are RMS over that family (all expectations are still
//! exact on the trees). Trees at coarse `J` have few nodes, so a single
//! draw would make the baseline ratio noisy; averaging the family removes
//! the draw lottery without touching the estimate's exactness. Bounded
//! ratios across `J` are the observable form of the discrete energy
//! estimates.

use serde::Serialize;

use crate::backward::solve_backward_tree;
use crate::error::Result;
use crate::fem::{FemSpace, SpectralData};
use crate::forward::{solve_forward_tree, Source};
use crate::noise::{build_tree, AdaptedField, TreeView};
use crate::source::RandomProfileSource;

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub j: usize,
    /// max_j |Y_j| / |g| with g measured in the discrete H^{-1} norm.
    pub forward: f64,
    /// (max_j |P_j| + |P|_{L^2 H^1}) / (|g|_{H^{-1}} + tau |g|_{L^2}).
    pub adjoint: f64,
    /// |Z|_{L^2(L^2)} / |g|_{L^2(L^2)}.
    pub z_ratio: f64,
}

/// max over levels 0..=steps of the ensemble L^2 norm.
pub fn max_level_l2(space: &FemSpace, view: &TreeView, field: &AdaptedField) -> f64 {
    let mut worst = 0.0f64;
    for level in 0..field.n_levels() {
        let w = view.node_weight(level);
        let mut s = 0.0;
        for node in 0..field.nodes_at(level) {
            let v = field.node(level, node);
            s += w * space.inner(v, v);
        }
        worst = worst.max(s.max(0.0).sqrt());
    }
    worst
}

/// `sqrt(sum_j tau E |v_j|^2)` over interval levels with the chosen spatial
/// norm (`beta = 0` is plain L^2).
pub fn time_space_norm(
    space: &FemSpace,
    spectral: &SpectralData,
    view: &TreeView,
    field: &AdaptedField,
    beta: i32,
) -> Result<f64> {
    let tau = view.tau();
    let mut total = 0.0;
    let steps = view.steps().min(field.n_levels());
    for step in 0..steps {
        let w = view.node_weight(step);
        for node in 0..field.nodes_at(step) {
            let v = field.node(step, node);
            let nrm = if beta == 0 {
                space.l2_norm(v)
            } else {
                spectral.norm_beta(v, beta)?
            };
            total += w * tau * nrm * nrm;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Runs the forward and adjoint solvers at each `J` on a seeded family of
/// `n_draws` random adapted sources and reports the three stability ratios
/// (RMS numerators over RMS denominators).
pub fn stability_ratios(
    space: &FemSpace,
    spectral: &SpectralData,
    t_end: f64,
    seed: u64,
    n_draws: usize,
    j_values: &[usize],
) -> Result<Vec<StabilityRow>> {
    let mut rows = Vec::with_capacity(j_values.len());
    for &j in j_values {
        let tree = build_tree(t_end, j)?;
        let view = tree.view();
        let tau = view.tau();
        let mut num = [0.0f64; 3];
        let mut den = [0.0f64; 3];
        for d in 0..n_draws.max(1) {
            let g = RandomProfileSource::sample(&view, seed.wrapping_add(d as u64), 1.0)
                .project(space, 4)?;
            let g_l2 = time_space_norm(space, spectral, &view, &g, 0)?;
            let g_hm1 = time_space_norm(space, spectral, &view, &g, -1)?;

            let y = solve_forward_tree(space, &view, &Source::Adapted(&g))?;
            num[0] += max_level_l2(space, &view, &y).powi(2);
            den[0] += g_hm1 * g_hm1;

            let pair = solve_backward_tree(space, &view, &Source::Adapted(&g), true)?;
            let p_max = max_level_l2(space, &view, &pair.p);
            let p_h1 = time_space_norm(space, spectral, &view, &pair.p, 1)?;
            num[1] += (p_max + p_h1).powi(2);
            den[1] += (g_hm1 + tau * g_l2).powi(2);

            let z_l2 = time_space_norm(space, spectral, &view, &pair.z, 0)?;
            num[2] += z_l2 * z_l2;
            den[2] += g_l2 * g_l2;
        }
        rows.push(StabilityRow {
            j,
            forward: (num[0] / den[0]).sqrt(),
            adjoint: (num[1] / den[1]).sqrt(),
            z_ratio: (num[2] / den[2]).sqrt(),
        });
    }
    Ok(rows)
}
