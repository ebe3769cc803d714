//! Box-constrained adapted controls.
//!
//! Two representations ship. `P0` stores one value per element per
//! (interval, node); the feasible set is closed under the projection
//! "elementwise average, then clamp", and all integrals are closed-form.
//! `ClampedP1` stores a raw V_h coefficient vector `phi` per (interval,
//! node) and *means* the function `clamp(phi(x); lower, upper)`: the control
//! set is never meshed, and the optimum inherits the clamp structure of the
//! multiplier. A clamped linear function has at most two breakpoints per
//! element, so every integral against P1 data is evaluated exactly by
//! splitting elements at breakpoints (products of linears integrate in
//! closed form).

pub mod cost;
pub mod optimize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::noise::{AdaptedField, TreeView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BoxBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidBounds { lower, upper });
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    P0,
    ClampedP1,
}

/// Adapted box-constrained control, constant on each time interval.
#[derive(Debug, Clone)]
pub struct ControlField {
    mode: ControlMode,
    bounds: BoxBounds,
    /// P0: element values (already inside the box). ClampedP1: raw V_h
    /// coefficients, clamped on evaluation.
    values: AdaptedField,
}

pub fn dof_dim(mode: ControlMode, space: &FemSpace) -> usize {
    match mode {
        ControlMode::P0 => space.mesh().n_elems(),
        ControlMode::ClampedP1 => space.dim(),
    }
}

impl ControlField {
    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn bounds(&self) -> BoxBounds {
        self.bounds
    }

    pub fn values(&self) -> &AdaptedField {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut AdaptedField {
        &mut self.values
    }

    pub fn steps(&self) -> usize {
        self.values.n_levels()
    }

    /// The constant-in-space-and-time control `clamp(c)`.
    ///
    /// In ClampedP1 mode the raw coefficients are `c` at interior nodes, so
    /// the function ramps to `clamp(0)` at the boundary; that is the closest
    /// representable field to the constant.
    pub fn constant(
        view: &TreeView,
        mode: ControlMode,
        bounds: BoxBounds,
        space: &FemSpace,
        c: f64,
    ) -> Self {
        let dim = dof_dim(mode, space);
        let mut values = AdaptedField::zero_intervals(view, dim);
        let fill = match mode {
            ControlMode::P0 => bounds.clamp(c),
            ControlMode::ClampedP1 => c,
        };
        for l in 0..values.n_levels() {
            for v in values.level_mut(l).iter_mut() {
                *v = fill;
            }
        }
        ControlField {
            mode,
            bounds,
            values,
        }
    }

    /// Seeded feasible control: P0 draws uniformly inside the box, ClampedP1
    /// draws Gaussian raw coefficients (feasible by construction).
    pub fn random_feasible(
        view: &TreeView,
        mode: ControlMode,
        bounds: BoxBounds,
        space: &FemSpace,
        seed: u64,
    ) -> Self {
        use rand::{Rng, SeedableRng};
        let dim = dof_dim(mode, space);
        let mut values = AdaptedField::zero_intervals(view, dim);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mid = 0.5 * (bounds.lower + bounds.upper);
        let radius = 0.5 * (bounds.upper - bounds.lower);
        for l in 0..values.n_levels() {
            for v in values.level_mut(l).iter_mut() {
                *v = match mode {
                    ControlMode::P0 => rng.gen_range(bounds.lower..=bounds.upper),
                    ControlMode::ClampedP1 => mid + radius * 2.0 * (rng.gen::<f64>() * 2.0 - 1.0),
                };
            }
        }
        ControlField {
            mode,
            bounds,
            values,
        }
    }

    /// L^2 projection of an adapted V_h field onto the feasible set.
    ///
    /// P0: per element average, then clamp (the exact projection onto
    /// feasible P0 functions). ClampedP1: the pointwise clamp of the P1
    /// function, stored as raw coefficients (the exact projection onto the
    /// full feasible set).
    pub fn project_p1_field(
        space: &FemSpace,
        w: &AdaptedField,
        bounds: BoxBounds,
        mode: ControlMode,
    ) -> Result<Self> {
        if w.dim() != space.dim() {
            return Err(Error::ShapeMismatch(format!(
                "field dim {} does not match space dim {}",
                w.dim(),
                space.dim()
            )));
        }
        let values = match mode {
            ControlMode::ClampedP1 => w.clone(),
            ControlMode::P0 => {
                let n_elems = space.mesh().n_elems();
                let mut levels = Vec::with_capacity(w.n_levels());
                for l in 0..w.n_levels() {
                    let nodes = w.nodes_at(l);
                    let mut level = vec![0.0; nodes * n_elems];
                    for n in 0..nodes {
                        let p1 = w.node(l, n);
                        let slot = &mut level[n * n_elems..(n + 1) * n_elems];
                        project_p1_slice_to_p0(space, p1, bounds, slot);
                    }
                    levels.push(level);
                }
                AdaptedField::new(n_elems, levels)?
            }
        };
        Ok(ControlField {
            mode,
            bounds,
            values,
        })
    }

    /// Clamps raw P0 element values into the box.
    pub fn project_p0_values(values: &AdaptedField, bounds: BoxBounds) -> Self {
        let mut clamped = values.clone();
        for l in 0..clamped.n_levels() {
            for v in clamped.level_mut(l).iter_mut() {
                *v = bounds.clamp(*v);
            }
        }
        ControlField {
            mode: ControlMode::P0,
            bounds,
            values: clamped,
        }
    }

    /// Evaluates the control function on interval `step` at tree node
    /// `node` and spatial point `x`.
    pub fn eval(&self, space: &FemSpace, step: usize, node: usize, x: f64) -> f64 {
        let vals = self.values.node(step, node);
        match self.mode {
            ControlMode::P0 => {
                let mesh = space.mesh();
                let s = (x - mesh.a()) / mesh.h();
                let e = (s.floor() as isize).clamp(0, mesh.n_elems() as isize - 1) as usize;
                vals[e]
            }
            ControlMode::ClampedP1 => self.bounds.clamp(space.eval(vals, x)),
        }
    }

    /// Accumulates `scale * int U phi_i` into `out`.
    pub fn load_into(
        &self,
        space: &FemSpace,
        step: usize,
        node: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        let vals = self.values.node(step, node);
        slice_load_into(space, self.mode, Some(self.bounds), vals, scale, out);
    }

    /// `int U^2` over the domain for one (interval, node).
    pub fn norm_sq(&self, space: &FemSpace, step: usize, node: usize) -> f64 {
        let vals = self.values.node(step, node);
        slice_cross_inner(
            space,
            self.mode,
            Some(self.bounds),
            vals,
            Some(self.bounds),
            vals,
        )
    }

    /// `int U V` against another control of the same mode.
    pub fn cross_inner(
        &self,
        space: &FemSpace,
        other: &ControlField,
        step: usize,
        node: usize,
    ) -> f64 {
        debug_assert_eq!(self.mode, other.mode);
        slice_cross_inner(
            space,
            self.mode,
            Some(self.bounds),
            self.values.node(step, node),
            Some(other.bounds),
            other.values.node(step, node),
        )
    }

    /// `int (U - V)^2` against another control of the same mode, computed
    /// piecewise (no cancellation between large norms).
    pub fn diff_norm_sq(
        &self,
        space: &FemSpace,
        other: &ControlField,
        step: usize,
        node: usize,
    ) -> f64 {
        debug_assert_eq!(self.mode, other.mode);
        slice_diff_norm_sq(
            space,
            self.mode,
            Some(self.bounds),
            self.values.node(step, node),
            Some(other.bounds),
            other.values.node(step, node),
        )
    }

    /// `int U v_h` against a plain P1 coefficient vector.
    pub fn inner_with_p1(&self, space: &FemSpace, step: usize, node: usize, p1: &[f64]) -> f64 {
        let vals = self.values.node(step, node);
        match self.mode {
            ControlMode::P0 => {
                let mesh = space.mesh();
                let h = mesh.h();
                let n_elems = mesh.n_elems();
                let mut s = 0.0;
                for e in 0..n_elems {
                    let vl = if e == 0 { 0.0 } else { p1[e - 1] };
                    let vr = if e + 1 >= n_elems { 0.0 } else { p1[e] };
                    s += vals[e] * h * 0.5 * (vl + vr);
                }
                s
            }
            ControlMode::ClampedP1 => element_pairwise(
                space,
                Some(self.bounds),
                vals,
                None,
                p1,
                lin_product_integral,
            ),
        }
    }

    /// Worst box violation over a dense sample of evaluation points.
    pub fn max_violation(&self, space: &FemSpace, samples_per_elem: usize) -> f64 {
        let mesh = space.mesh();
        let mut worst: f64 = 0.0;
        for step in 0..self.steps() {
            for node in 0..self.values.nodes_at(step) {
                for e in 0..mesh.n_elems() {
                    for q in 0..=samples_per_elem {
                        let x =
                            mesh.node_x(e) + mesh.h() * q as f64 / samples_per_elem.max(1) as f64;
                        let v = self.eval(space, step, node, x);
                        worst = worst.max(self.bounds.lower - v).max(v - self.bounds.upper);
                    }
                }
            }
        }
        worst
    }
}

/// Per-element average of a P1 function, clamped.
pub fn project_p1_slice_to_p0(space: &FemSpace, p1: &[f64], bounds: BoxBounds, out: &mut [f64]) {
    let n_elems = space.mesh().n_elems();
    for (e, slot) in out.iter_mut().enumerate().take(n_elems) {
        let vl = if e == 0 { 0.0 } else { p1[e - 1] };
        let vr = if e + 1 >= n_elems { 0.0 } else { p1[e] };
        *slot = bounds.clamp(0.5 * (vl + vr));
    }
}

/// Exact integral over an interval of length `h` of the product of two
/// linear functions given by endpoint values.
pub(crate) fn lin_product_integral(h: f64, f0: f64, f1: f64, g0: f64, g1: f64) -> f64 {
    h / 6.0 * (f0 * (2.0 * g0 + g1) + f1 * (g0 + 2.0 * g1))
}

fn clamp_opt(bounds: Option<BoxBounds>, v: f64) -> f64 {
    match bounds {
        Some(b) => b.clamp(v),
        None => v,
    }
}

/// Local breakpoints of `clamp(p(xi))` for `p` linear on [0, 1].
fn push_breakpoints(pl: f64, pr: f64, bounds: BoxBounds, out: &mut Vec<f64>) {
    let slope = pr - pl;
    if slope.abs() < 1e-300 {
        return;
    }
    for bound in [bounds.lower, bounds.upper] {
        let xi = (bound - pl) / slope;
        if xi > 1e-14 && xi < 1.0 - 1e-14 {
            out.push(xi);
        }
    }
}

/// Walks the elements of the mesh, splitting each at the breakpoints of the
/// (optionally clamped) linear functions `a`, `b`, and accumulates
/// `visit(piece_len, a0, a1, b0, b1)` over the pieces. `a` and `b` are
/// given by per-mode slices: P1 interior coefficients or P0 element values.
fn element_pairwise(
    space: &FemSpace,
    bounds_a: Option<BoxBounds>,
    a: &[f64],
    bounds_b: Option<BoxBounds>,
    b: &[f64],
    visit: impl Fn(f64, f64, f64, f64, f64) -> f64,
) -> f64 {
    let mesh = space.mesh();
    let n_elems = mesh.n_elems();
    let h = mesh.h();
    let mut total = 0.0;
    let mut cuts: Vec<f64> = Vec::with_capacity(6);
    for e in 0..n_elems {
        let al = if e == 0 { 0.0 } else { a[e - 1] };
        let ar = if e + 1 >= n_elems { 0.0 } else { a[e] };
        let bl = if e == 0 { 0.0 } else { b[e - 1] };
        let br = if e + 1 >= n_elems { 0.0 } else { b[e] };

        cuts.clear();
        cuts.push(0.0);
        if let Some(bb) = bounds_a {
            push_breakpoints(al, ar, bb, &mut cuts);
        }
        if let Some(bb) = bounds_b {
            push_breakpoints(bl, br, bb, &mut cuts);
        }
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);

        for w in 0..cuts.len() - 1 {
            let (x0, x1) = (cuts[w], cuts[w + 1]);
            if x1 - x0 < 1e-15 {
                continue;
            }
            let a0 = clamp_opt(bounds_a, al + (ar - al) * x0);
            let a1 = clamp_opt(bounds_a, al + (ar - al) * x1);
            let b0 = clamp_opt(bounds_b, bl + (br - bl) * x0);
            let b1 = clamp_opt(bounds_b, bl + (br - bl) * x1);
            total += visit(h * (x1 - x0), a0, a1, b0, b1);
        }
    }
    total
}

/// `int A B` of two (optionally clamped) fields in possibly different modes.
fn slice_cross_inner(
    space: &FemSpace,
    mode: ControlMode,
    bounds_a: Option<BoxBounds>,
    a: &[f64],
    bounds_b: Option<BoxBounds>,
    b: &[f64],
) -> f64 {
    match mode {
        ControlMode::P0 => {
            let h = space.mesh().h();
            a.iter().zip(b).map(|(x, y)| h * x * y).sum()
        }
        ControlMode::ClampedP1 => {
            element_pairwise(space, bounds_a, a, bounds_b, b, |h, a0, a1, b0, b1| {
                lin_product_integral(h, a0, a1, b0, b1)
            })
        }
    }
}

/// `int (A - B)^2` for two per-(interval, node) value slices already living
/// on the same mesh.
pub(crate) fn slice_diff_norm_sq_pub(
    space: &FemSpace,
    mode: ControlMode,
    bounds_a: BoxBounds,
    a: &[f64],
    bounds_b: BoxBounds,
    b: &[f64],
) -> f64 {
    slice_diff_norm_sq(space, mode, Some(bounds_a), a, Some(bounds_b), b)
}

fn slice_diff_norm_sq(
    space: &FemSpace,
    mode: ControlMode,
    bounds_a: Option<BoxBounds>,
    a: &[f64],
    bounds_b: Option<BoxBounds>,
    b: &[f64],
) -> f64 {
    match mode {
        ControlMode::P0 => {
            let h = space.mesh().h();
            a.iter().zip(b).map(|(x, y)| h * (x - y) * (x - y)).sum()
        }
        ControlMode::ClampedP1 => {
            element_pairwise(space, bounds_a, a, bounds_b, b, |h, a0, a1, b0, b1| {
                lin_product_integral(h, a0 - b0, a1 - b1, a0 - b0, a1 - b1)
            })
        }
    }
}

/// Accumulates `scale * int U phi_i` for a single (interval, node) slice.
pub(crate) fn slice_load_into(
    space: &FemSpace,
    mode: ControlMode,
    bounds: Option<BoxBounds>,
    vals: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let mesh = space.mesh();
    let n_elems = mesh.n_elems();
    let h = mesh.h();
    match mode {
        ControlMode::P0 => {
            for e in 0..n_elems {
                let contrib = scale * vals[e] * h * 0.5;
                if e > 0 {
                    out[e - 1] += contrib;
                }
                if e + 1 < n_elems {
                    out[e] += contrib;
                }
            }
        }
        ControlMode::ClampedP1 => {
            let mut cuts: Vec<f64> = Vec::with_capacity(4);
            for e in 0..n_elems {
                let al = if e == 0 { 0.0 } else { vals[e - 1] };
                let ar = if e + 1 >= n_elems { 0.0 } else { vals[e] };
                cuts.clear();
                cuts.push(0.0);
                if let Some(bb) = bounds {
                    push_breakpoints(al, ar, bb, &mut cuts);
                }
                cuts.push(1.0);
                cuts.sort_by(f64::total_cmp);
                for w in 0..cuts.len() - 1 {
                    let (x0, x1) = (cuts[w], cuts[w + 1]);
                    if x1 - x0 < 1e-15 {
                        continue;
                    }
                    let a0 = clamp_opt(bounds, al + (ar - al) * x0);
                    let a1 = clamp_opt(bounds, al + (ar - al) * x1);
                    let len = h * (x1 - x0);
                    // hats restricted to the element: left hat = 1 - xi, right hat = xi
                    if e > 0 {
                        out[e - 1] += scale * lin_product_integral(len, a0, a1, 1.0 - x0, 1.0 - x1);
                    }
                    if e + 1 < n_elems {
                        out[e] += scale * lin_product_integral(len, a0, a1, x0, x1);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_space;
    use crate::noise::build_tree;
    use crate::quadrature;
    use approx::assert_relative_eq;

    fn setup() -> (FemSpace, crate::noise::BinomialTree) {
        (
            build_space(0.0, 1.0, 8).unwrap(),
            build_tree(1.0, 2).unwrap(),
        )
    }

    #[test]
    fn projection_p0_is_average_then_clamp() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-0.5, 0.5).unwrap();
        let mut w = AdaptedField::zero_intervals(&view, space.dim());
        w.randomize_gaussian(1, 1.0);
        let u = ControlField::project_p1_field(&space, &w, bounds, ControlMode::P0).unwrap();
        let n_elems = space.mesh().n_elems();
        for step in 0..2 {
            for node in 0..view.nodes_at(step) {
                let p1 = w.node(step, node);
                let vals = u.values().node(step, node);
                for e in 0..n_elems {
                    let vl = if e == 0 { 0.0 } else { p1[e - 1] };
                    let vr = if e + 1 >= n_elems { 0.0 } else { p1[e] };
                    assert_relative_eq!(vals[e], bounds.clamp(0.5 * (vl + vr)), epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn projection_idempotent_and_fixed_on_feasible() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-1.0, 1.0).unwrap();
        let u = ControlField::random_feasible(&view, ControlMode::P0, bounds, &space, 3);
        let again = ControlField::project_p0_values(u.values(), bounds);
        assert_eq!(u.values(), again.values());
    }

    #[test]
    fn projection_clamps_constant_overshoot() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-1.0, 1.0).unwrap();
        let mut w = AdaptedField::zero_intervals(&view, space.dim());
        for l in 0..w.n_levels() {
            for v in w.level_mut(l).iter_mut() {
                *v = 2.0; // u^* + 1
            }
        }
        let u = ControlField::project_p1_field(&space, &w, bounds, ControlMode::ClampedP1).unwrap();
        // interior of the domain evaluates to exactly u^*
        for x in [0.2, 0.5, 0.8] {
            assert_relative_eq!(u.eval(&space, 0, 0, x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn nonexpansive_in_l2() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-0.4, 0.7).unwrap();
        for mode in [ControlMode::P0, ControlMode::ClampedP1] {
            for seed in 0..100u64 {
                let mut w1 = AdaptedField::zero_intervals(&view, space.dim());
                let mut w2 = AdaptedField::zero_intervals(&view, space.dim());
                w1.randomize_gaussian(seed * 2 + 1, 1.0);
                w2.randomize_gaussian(seed * 2 + 2, 1.0);
                let p1 = ControlField::project_p1_field(&space, &w1, bounds, mode).unwrap();
                let p2 = ControlField::project_p1_field(&space, &w2, bounds, mode).unwrap();
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for step in 0..2 {
                    for node in 0..view.nodes_at(step) {
                        lhs += p1.diff_norm_sq(&space, &p2, step, node);
                        let d: Vec<f64> = w1
                            .node(step, node)
                            .iter()
                            .zip(w2.node(step, node))
                            .map(|(a, b)| a - b)
                            .collect();
                        rhs += space.inner(&d, &d);
                    }
                }
                assert!(
                    lhs <= rhs * (1.0 + 1e-12),
                    "projection expanded distance: {lhs} > {rhs} (mode {mode:?})"
                );
            }
        }
    }

    #[test]
    fn clamped_integrals_match_quadrature() {
        // breakpoint-split closed forms against quadrature on smooth pieces;
        // the oracle derives its own crossing points (composite Gauss across
        // a kink would converge too slowly to serve as a 1e-12 reference)
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-0.3, 0.4).unwrap();
        let u = ControlField::random_feasible(&view, ControlMode::ClampedP1, bounds, &space, 11);
        let rule = quadrature::points(5).unwrap();
        let eval = |x: f64| u.eval(&space, 1, 1, x);
        let mesh = space.mesh().clone();
        let phi = u.values().node(1, 1);
        let n_elems = mesh.n_elems();
        let smooth_pieces = |e: usize| -> Vec<(f64, f64)> {
            let xl = mesh.node_x(e);
            let xr = mesh.node_x(e + 1);
            let pl = if e == 0 { 0.0 } else { phi[e - 1] };
            let pr = if e + 1 >= n_elems { 0.0 } else { phi[e] };
            let mut xs = vec![xl, xr];
            if (pr - pl).abs() > 0.0 {
                for bound in [bounds.lower, bounds.upper] {
                    let t = (bound - pl) / (pr - pl);
                    if t > 0.0 && t < 1.0 {
                        xs.push(xl + t * (xr - xl));
                    }
                }
            }
            xs.sort_by(f64::total_cmp);
            xs.windows(2).map(|w| (w[0], w[1])).collect()
        };

        let brute: f64 = (0..n_elems)
            .flat_map(smooth_pieces)
            .map(|(a, b)| quadrature::integrate(|x| eval(x) * eval(x), a, b, rule))
            .sum();
        assert_relative_eq!(u.norm_sq(&space, 1, 1), brute, epsilon = 1e-12);

        // load against each hat
        let mut load = vec![0.0; space.dim()];
        u.load_into(&space, 1, 1, 1.0, &mut load);
        for i in 0..space.dim() {
            let k = i + 1;
            let h = mesh.h();
            let xk = mesh.node_x(k);
            let brute: f64 = (0..n_elems)
                .flat_map(smooth_pieces)
                .map(|(a, b)| {
                    quadrature::integrate(
                        |x| eval(x) * (1.0 - ((x - xk) / h).abs()).max(0.0),
                        a,
                        b,
                        rule,
                    )
                })
                .sum();
            assert_relative_eq!(load[i], brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn p0_load_matches_quadrature() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(-2.0, 2.0).unwrap();
        let u = ControlField::random_feasible(&view, ControlMode::P0, bounds, &space, 4);
        let mut load = vec![0.0; space.dim()];
        u.load_into(&space, 0, 0, 1.0, &mut load);
        let rule = quadrature::points(3).unwrap();
        let mesh = space.mesh().clone();
        let eval = |x: f64| u.eval(&space, 0, 0, x);
        for i in 0..space.dim() {
            let k = i + 1;
            let h = mesh.h();
            let xk = mesh.node_x(k);
            let brute: f64 = (0..mesh.n_elems())
                .map(|e| {
                    let xl = mesh.node_x(e);
                    let xr = mesh.node_x(e + 1);
                    quadrature::integrate_composite(
                        |x| eval(x) * (1.0 - ((x - xk) / h).abs()).max(0.0),
                        xl,
                        xr,
                        4,
                        rule,
                    )
                })
                .sum();
            assert_relative_eq!(load[i], brute, epsilon = 1e-13);
        }
    }

    #[test]
    fn feasibility_by_construction() {
        let (space, tree) = setup();
        let view = tree.view();
        let bounds = BoxBounds::new(0.25, 1.25).unwrap();
        let u = ControlField::random_feasible(&view, ControlMode::ClampedP1, bounds, &space, 9);
        assert!(u.max_violation(&space, 16) <= 0.0 + 1e-15);
        let p = ControlField::random_feasible(&view, ControlMode::P0, bounds, &space, 9);
        assert!(p.max_violation(&space, 4) <= 0.0 + 1e-15);
    }
}
