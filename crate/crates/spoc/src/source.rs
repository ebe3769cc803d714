//! Closed-form space-time data: source terms and tracking targets.
//!
//! Catalog functions are expressed in the normalized coordinate
//! `s = (x - a)/(b - a)` so the same id means the same function on every
//! mesh of the ladder. Loads are assembled with an order-4 Gauss rule per
//! element and a 2-point Gauss rule per time interval; both rules are exact
//! for the polynomial catalog entries.

use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::noise::{AdaptedField, TreeView};
use crate::quadrature;

/// Default per-element Gauss order for load assembly.
pub const DEFAULT_QUAD_ORDER: usize = 4;

/// Gauss points per time interval for closed-form sources.
pub const TIME_QUAD_ORDER: usize = 2;

/// A deterministic function of time and (physical) space.
pub trait SpaceTime {
    fn eval(&self, t: f64, x: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64> SpaceTime for F {
    fn eval(&self, t: f64, x: f64) -> f64 {
        self(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CatalogKind {
    Zero,
    SinPi,
    SinPiGrow,
    Bump,
    BumpDecay,
    Sin2PiGrow,
    Mixed,
}

/// Named closed-form function from the catalog, bound to a domain.
#[derive(Debug, Clone)]
pub struct CatalogFn {
    kind: CatalogKind,
    a: f64,
    len: f64,
    amplitude: f64,
}

impl CatalogFn {
    fn s(&self, x: f64) -> f64 {
        (x - self.a) / self.len
    }
}

impl SpaceTime for CatalogFn {
    fn eval(&self, t: f64, x: f64) -> f64 {
        use std::f64::consts::PI;
        let s = self.s(x);
        let v = match self.kind {
            CatalogKind::Zero => 0.0,
            CatalogKind::SinPi => (PI * s).sin(),
            CatalogKind::SinPiGrow => (1.0 + t) * (PI * s).sin(),
            CatalogKind::Bump => s * (1.0 - s),
            CatalogKind::BumpDecay => (-t).exp() * s * (1.0 - s),
            CatalogKind::Sin2PiGrow => (1.0 + 0.5 * t) * (2.0 * PI * s).sin(),
            CatalogKind::Mixed => (PI * s).sin() + 0.3 * (1.0 + t) * (2.0 * PI * s).sin(),
        };
        self.amplitude * v
    }
}

/// Looks up a catalog entry by id for the given domain.
pub fn catalog(id: &str, a: f64, b: f64) -> Result<CatalogFn> {
    catalog_scaled(id, a, b, 1.0)
}

pub fn catalog_scaled(id: &str, a: f64, b: f64, amplitude: f64) -> Result<CatalogFn> {
    let kind = match id {
        "zero" => CatalogKind::Zero,
        "sinpi" => CatalogKind::SinPi,
        "sinpi-grow" => CatalogKind::SinPiGrow,
        "bump" => CatalogKind::Bump,
        "bump-decay" => CatalogKind::BumpDecay,
        "sin2pi-grow" => CatalogKind::Sin2PiGrow,
        "mixed" => CatalogKind::Mixed,
        other => {
            return Err(Error::Config(format!(
                "unknown catalog function '{other}' (known: zero, sinpi, sinpi-grow, bump, \
                 bump-decay, sin2pi-grow, mixed)"
            )))
        }
    };
    Ok(CatalogFn {
        kind,
        a,
        len: b - a,
        amplitude,
    })
}

/// Accumulates `int_{t0}^{t1} int f(t, x) phi_i(x) dx dt` into `out`.
pub fn interval_load(
    space: &FemSpace,
    f: &dyn SpaceTime,
    t0: f64,
    t1: f64,
    order: usize,
    out: &mut [f64],
) -> Result<()> {
    quadrature::load_rule(order)?;
    let time_rule = quadrature::points(TIME_QUAD_ORDER).expect("static rule");
    let mid = 0.5 * (t0 + t1);
    let half = 0.5 * (t1 - t0);
    for p in time_rule {
        let t = mid + half * p.x;
        let w = p.w * half;
        space_load_accumulate(space, &|x| f.eval(t, x), order, w, out)?;
    }
    Ok(())
}

/// Accumulates `scale * int f(x) phi_i(x) dx` into `out`.
pub fn space_load_accumulate(
    space: &FemSpace,
    f: &dyn Fn(f64) -> f64,
    order: usize,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let rule = quadrature::load_rule(order)?;
    space.accumulate_load(&|x| f(x), rule, scale, out);
    Ok(())
}

/// `int_O f(t, x)^2 dx` at a fixed time.
pub fn l2_norm_sq_at(space: &FemSpace, f: &dyn SpaceTime, t: f64, order: usize) -> Result<f64> {
    let rule = quadrature::load_rule(order)?;
    let mesh = space.mesh();
    let mut total = 0.0;
    for e in 0..mesh.n_elems() {
        let xl = mesh.node_x(e);
        let xr = mesh.node_x(e + 1);
        total += quadrature::integrate(|x| f.eval(t, x).powi(2), xl, xr, rule);
    }
    Ok(total)
}

/// Random adapted source built from smooth spatial profiles.
///
/// Each (interval, node) carries seeded coefficients against a fixed profile
/// basis, so the realization is a genuine closed-form function of x: the
/// same draw is exactly representable on every mesh of a refinement ladder.
#[derive(Debug, Clone)]
pub struct RandomProfileSource {
    coeffs: AdaptedField,
}

pub const PROFILE_COUNT: usize = 3;

fn profile(p: usize, s: f64) -> f64 {
    use std::f64::consts::PI;
    match p {
        0 => (PI * s).sin(),
        1 => s * (1.0 - s),
        2 => (2.0 * PI * s).sin(),
        _ => unreachable!("profile index out of range"),
    }
}

impl RandomProfileSource {
    pub fn sample(view: &TreeView, seed: u64, amplitude: f64) -> Self {
        let mut coeffs = AdaptedField::zero_intervals(view, PROFILE_COUNT);
        coeffs.randomize_gaussian(seed, amplitude);
        RandomProfileSource { coeffs }
    }

    pub fn coeffs(&self) -> &AdaptedField {
        &self.coeffs
    }

    /// Profile load vectors `int profile_p phi_i` for a given mesh.
    pub fn profile_loads(space: &FemSpace, order: usize) -> Result<Vec<Vec<f64>>> {
        let mesh = space.mesh();
        let (a, len) = (mesh.a(), mesh.b() - mesh.a());
        (0..PROFILE_COUNT)
            .map(|p| {
                let mut out = vec![0.0; space.dim()];
                space_load_accumulate(space, &|x| profile(p, (x - a) / len), order, 1.0, &mut out)?;
                Ok(out)
            })
            .collect()
    }

    /// Spatial value of the realization on interval `step` at node `node`.
    pub fn value(&self, step: usize, node: usize, s: f64) -> f64 {
        let c = self.coeffs.node(step, node);
        (0..PROFILE_COUNT).map(|p| c[p] * profile(p, s)).sum()
    }

    /// Writes `tau * sum_p c_p L_p` (the time-integrated load of the
    /// interval-constant realization) into `out`.
    pub fn interval_load(
        &self,
        step: usize,
        node: usize,
        tau: f64,
        profile_loads: &[Vec<f64>],
        out: &mut [f64],
    ) {
        let c = self.coeffs.node(step, node);
        for slot in out.iter_mut() {
            *slot = 0.0;
        }
        for (p, load) in profile_loads.iter().enumerate() {
            let w = tau * c[p];
            for (slot, l) in out.iter_mut().zip(load) {
                *slot += w * l;
            }
        }
    }

    /// The realization projected onto the space as V_h coefficients, one
    /// vector per (interval, node).
    pub fn project(&self, space: &FemSpace, order: usize) -> Result<AdaptedField> {
        let loads = Self::profile_loads(space, order)?;
        let mut out_levels = Vec::with_capacity(self.coeffs.n_levels());
        for step in 0..self.coeffs.n_levels() {
            let nodes = self.coeffs.nodes_at(step);
            let mut level = vec![0.0; nodes * space.dim()];
            for n in 0..nodes {
                let c = self.coeffs.node(step, n);
                let mut load = vec![0.0; space.dim()];
                for (p, pl) in loads.iter().enumerate() {
                    for (slot, l) in load.iter_mut().zip(pl) {
                        *slot += c[p] * l;
                    }
                }
                let coef = space.mass_factor().solve(&load);
                level[n * space.dim()..(n + 1) * space.dim()].copy_from_slice(&coef);
            }
            out_levels.push(level);
        }
        AdaptedField::new(space.dim(), out_levels)
    }
}
