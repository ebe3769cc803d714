//! Experiment engine: configuration, error norms across refinement levels,
//! observed-rate estimation, and reproducible reports.

pub mod ratios;
pub mod report;
pub mod runs;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::control::ControlMode;
use crate::error::{Error, Result};
use crate::fem::{prolong, FemSpace};
use crate::forward::PathField;
use crate::noise::{AdaptedField, TreeView};

/// Every study kind the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    ForwardRateH,
    ForwardRateTau,
    BackwardRateH,
    AppendixTauRate,
    DualityCheck,
    GradientCheck,
    Optimize,
    ControlRefinement,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::ForwardRateH => "forward-rate-h",
            StudyKind::ForwardRateTau => "forward-rate-tau",
            StudyKind::BackwardRateH => "backward-rate-h",
            StudyKind::AppendixTauRate => "appendix-tau-rate",
            StudyKind::DualityCheck => "duality-check",
            StudyKind::GradientCheck => "gradient-check",
            StudyKind::Optimize => "optimize",
            StudyKind::ControlRefinement => "control-refinement",
        }
    }
}

/// TOML-loadable study configuration. Fields that default differently per
/// study are optional; each runner resolves them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub t_end: f64,
    pub nu: f64,
    pub bounds: [f64; 2],
    /// Tracking target id from the catalog.
    pub target: String,
    /// Source id for forward/backward studies.
    pub source: String,
    pub control_mode: ControlMode,
    pub j_list: Option<Vec<usize>>,
    pub n_list: Option<Vec<usize>>,
    pub j_ref: Option<usize>,
    pub n_ref: Option<usize>,
    pub j_fixed: Option<usize>,
    pub n_fixed: Option<usize>,
    pub m_paths: usize,
    pub quad_order: usize,
    pub eta_panels: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mem_budget_mb: u64,
    pub n_pairs: usize,
    pub n_directions: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub step_size: Option<f64>,
    pub damping: Option<f64>,
    pub save_fields: bool,
    pub save_paths: bool,
    pub dump_matrices: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            t_end: 1.0,
            nu: 0.1,
            bounds: [-1.0, 1.0],
            target: "sinpi".into(),
            source: "sinpi-grow".into(),
            control_mode: ControlMode::ClampedP1,
            j_list: None,
            n_list: None,
            j_ref: None,
            n_ref: None,
            j_fixed: None,
            n_fixed: None,
            m_paths: 2000,
            quad_order: 4,
            eta_panels: 8,
            seed: 1234,
            out_dir: PathBuf::from("out"),
            mem_budget_mb: 4096,
            n_pairs: 20,
            n_directions: 10,
            tol: 1e-8,
            max_iters: 500,
            step_size: None,
            damping: None,
            save_fields: false,
            save_paths: false,
            dump_matrices: false,
        }
    }
}

impl StudyConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn budget_bytes(&self) -> u64 {
        self.mem_budget_mb * 1024 * 1024
    }
}

/// Standing grid convention for experiment trees: more than two steps and a
/// step size below 2/5. Coarse views of a conforming tree are exempt.
pub fn validate_experiment_grid(t_end: f64, steps: usize) -> Result<()> {
    if steps <= 2 {
        return Err(Error::Config(format!(
            "experiment trees need J > 2, got J = {steps}"
        )));
    }
    let tau = t_end / steps as f64;
    if tau >= 0.4 {
        return Err(Error::Config(format!(
            "experiment trees need tau < 2/5, got tau = {tau}"
        )));
    }
    Ok(())
}

/// Checks that a refinement ladder is geometric with factor 2 and that the
/// reference level is strictly finer than every measured level.
pub fn validate_ladder(levels: &[usize], reference: usize) -> Result<()> {
    if levels.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 ladder levels, got {}",
            levels.len()
        )));
    }
    for w in levels.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::Config(format!(
                "ladder {levels:?} is not geometric with factor 2"
            )));
        }
    }
    let last = *levels.last().unwrap();
    if reference <= last || reference % last != 0 {
        return Err(Error::Config(format!(
            "reference {reference} must be a strict multiple of the finest level {last}"
        )));
    }
    Ok(())
}

/// Observed-order report from a least-squares fit of log error against log
/// discretization size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub sizes: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub slope: f64,
    pub fit_residual: f64,
}

/// Least-squares slope of `log(error)` against `log(size)`; the residual is
/// the largest absolute deviation of the fit in log space.
pub fn estimate_rate(sizes: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if sizes.len() != errors.len() || sizes.len() < 3 {
        return Err(Error::Config(format!(
            "rate estimation needs at least 3 (size, error) pairs, got {}",
            sizes.len().min(errors.len())
        )));
    }
    if sizes.iter().chain(errors).any(|v| !(*v > 0.0)) {
        return Err(Error::Config(
            "rate estimation needs strictly positive sizes and errors".into(),
        ));
    }
    let n = sizes.len() as f64;
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).abs())
        .fold(0.0f64, f64::max);
    Ok((slope, residual))
}

/// An adapted state field bound to its space and view, for cross-level
/// comparisons.
pub struct FieldOnView<'a> {
    pub space: &'a FemSpace,
    pub view: TreeView<'a>,
    pub field: &'a AdaptedField,
}

/// Exact tree L^2(Omega; L^2(0, T; L^2)) distance between two
/// piecewise-constant-in-time state fields living on (possibly different)
/// views of the same tree and (possibly different) nested meshes. Both are
/// prolonged onto `fine_space` and held constant across fine intervals.
pub fn field_distance_l2(a: &FieldOnView, b: &FieldOnView, fine_space: &FemSpace) -> Result<f64> {
    let tree = a.view.tree();
    if (tree.grid().t_end() - b.view.tree().grid().t_end()).abs() > 1e-14
        || tree.steps() != b.view.tree().steps()
    {
        return Err(Error::ShapeMismatch(
            "fields live on different trees".into(),
        ));
    }
    let fine_steps = tree.steps();
    let tau_f = tree.tau();
    let ka = a.view.factor();
    let kb = b.view.factor();
    let mut total = 0.0;
    let mut va_cache: Vec<f64>;
    let mut vb_cache: Vec<f64>;
    for jf in 0..fine_steps {
        let w = 0.5f64.powi(jf as i32);
        let ia = jf / ka;
        let ib = jf / kb;
        let shift_a = jf - ia * ka;
        let shift_b = jf - ib * kb;
        for node in 0..(1usize << jf) {
            let na = node >> shift_a;
            let nb = node >> shift_b;
            va_cache = prolong(a.space, fine_space, a.field.node(ia, na))?;
            vb_cache = prolong(b.space, fine_space, b.field.node(ib, nb))?;
            for (x, y) in va_cache.iter_mut().zip(&vb_cache) {
                *x -= y;
            }
            total += w * tau_f * fine_space.inner(&va_cache, &va_cache);
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Tree L^2(Omega; L^2(0, T; L^2)) distance between two same-mode controls
/// on (possibly different) views and nested meshes, evaluated exactly on
/// `fine_space` (P0 values transfer per element, raw P1 coefficients by
/// nodal prolongation; the clamp commutes with both).
pub fn control_distance_l2(
    a: (&FemSpace, TreeView, &crate::control::ControlField),
    b: (&FemSpace, TreeView, &crate::control::ControlField),
    fine_space: &FemSpace,
) -> Result<f64> {
    let (space_a, view_a, u_a) = a;
    let (space_b, view_b, u_b) = b;
    if u_a.mode() != u_b.mode() {
        return Err(Error::ShapeMismatch("controls have different modes".into()));
    }
    let tree = view_a.tree();
    if tree.steps() != view_b.tree().steps()
        || (tree.grid().t_end() - view_b.tree().grid().t_end()).abs() > 1e-14
    {
        return Err(Error::ShapeMismatch(
            "controls live on different trees".into(),
        ));
    }
    let mode = u_a.mode();
    let fine_steps = tree.steps();
    let tau_f = tree.tau();
    let (ka, kb) = (view_a.factor(), view_b.factor());
    let transfer = |space: &FemSpace, vals: &[f64]| -> Result<Vec<f64>> {
        match mode {
            crate::control::ControlMode::P0 => {
                let r = fine_space.mesh().n_elems() / space.mesh().n_elems();
                let mut out = vec![0.0; fine_space.mesh().n_elems()];
                for (e, slot) in out.iter_mut().enumerate() {
                    *slot = vals[e / r];
                }
                Ok(out)
            }
            crate::control::ControlMode::ClampedP1 => prolong(space, fine_space, vals),
        }
    };
    let mut total = 0.0;
    for jf in 0..fine_steps {
        let w = 0.5f64.powi(jf as i32);
        let ia = jf / ka;
        let ib = jf / kb;
        let shift_a = jf - ia * ka;
        let shift_b = jf - ib * kb;
        for node in 0..(1usize << jf) {
            let va = transfer(space_a, u_a.values().node(ia, node >> shift_a))?;
            let vb = transfer(space_b, u_b.values().node(ib, node >> shift_b))?;
            let d = crate::control::slice_diff_norm_sq_pub(
                fine_space,
                mode,
                u_a.bounds(),
                &va,
                u_b.bounds(),
                &vb,
            );
            total += w * tau_f * d;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Monte Carlo distance of two per-path trajectories on nested time grids
/// (same mesh): returns (error, standard error of the error).
pub fn path_distance_l2(
    space: &FemSpace,
    t_end: f64,
    coarse: &PathField,
    fine: &PathField,
) -> Result<(f64, f64)> {
    if coarse.n_paths() != fine.n_paths() || coarse.dim() != fine.dim() {
        return Err(Error::ShapeMismatch("path fields do not match".into()));
    }
    let fine_steps = fine.levels() - 1;
    let coarse_steps = coarse.levels() - 1;
    if fine_steps % coarse_steps != 0 {
        return Err(Error::NonDivisor {
            factor: coarse_steps,
            steps: fine_steps,
        });
    }
    let k = fine_steps / coarse_steps;
    let tau_f = t_end / fine_steps as f64;
    let m = coarse.n_paths();
    let mut per_path = Vec::with_capacity(m);
    let mut diff = vec![0.0; space.dim()];
    for p in 0..m {
        let mut acc = 0.0;
        for jf in 0..fine_steps {
            let yc = coarse.at(p, jf / k);
            let yf = fine.at(p, jf);
            for (d, (a, b)) in diff.iter_mut().zip(yc.iter().zip(yf)) {
                *d = a - b;
            }
            acc += tau_f * space.inner(&diff, &diff);
        }
        per_path.push(acc);
    }
    let mean = per_path.iter().sum::<f64>() / m as f64;
    let var = per_path
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (m.saturating_sub(1)) as f64;
    let se_mean = (var / m as f64).sqrt();
    let err = mean.max(0.0).sqrt();
    let se = if err > 0.0 {
        se_mean / (2.0 * err)
    } else {
        0.0
    };
    Ok((err, se))
}
