//! Minimal end-to-end run: build a space and a tree, optimize a tracking
//! problem, print the cost trajectory.

use spoc::control::cost::{CostParams, Target};
use spoc::control::optimize::{optimize, OptimizeConfig};
use spoc::control::BoxBounds;
use spoc::fem::build_space;
use spoc::noise::build_tree;

fn main() -> spoc::Result<()> {
    let space = build_space(0.0, 1.0, 32)?;
    let tree = build_tree(1.0, 8)?;
    let target = spoc::source::catalog("sinpi", 0.0, 1.0)?;
    let params = CostParams {
        nu: 0.1,
        target: Target::Deterministic(&target),
    };
    let bounds = BoxBounds::new(-1.0, 1.0)?;
    let result = optimize(
        &space,
        &tree.view(),
        &params,
        bounds,
        &OptimizeConfig::default(),
    )?;
    println!(
        "converged in {} iterations: J(U) = {:.6}, residual = {:.2e}",
        result.iterations,
        result.cost_history.last().unwrap(),
        result.residuals.last().unwrap()
    );
    Ok(())
}
