//! One-dimensional P1 finite element space on an interval with homogeneous
//! Dirichlet boundary conditions.
//!
//! On a uniform mesh with `n` elements the interior degrees of freedom are
//! the hat-function coefficients at the `n - 1` interior nodes. The mass
//! matrix `M` and stiffness matrix `A` are symmetric positive definite
//! tridiagonal matrices (diagonals `2h/3` and `2/h`, off-diagonals `h/6` and
//! `-1/h`), so every linear solve in this crate is a direct tridiagonal
//! factorization. The discrete Laplacian is `-M^{-1} A`, and `L^2` inner
//! products of coefficient vectors are `v^T M w`.

mod spectral;

pub use spectral::SpectralData;

use crate::error::{Error, Result};
use crate::quadrature::{self, GaussPoint};

/// Uniform 1D mesh on (a, b) with at least two elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    a: f64,
    b: f64,
    n_elems: usize,
}

impl Mesh1D {
    pub fn new(a: f64, b: f64, n_elems: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidMesh(format!(
                "interval ({a}, {b}) is not a valid domain"
            )));
        }
        if n_elems < 2 {
            return Err(Error::InvalidMesh(format!(
                "n_elems = {n_elems} leaves no interior node"
            )));
        }
        Ok(Mesh1D { a, b, n_elems })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_elems(&self) -> usize {
        self.n_elems
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / self.n_elems as f64
    }

    /// Number of interior nodes, i.e. the dimension of the FE space.
    pub fn n_interior(&self) -> usize {
        self.n_elems - 1
    }

    /// Coordinate of mesh node `i` for `i` in `0..=n_elems`.
    pub fn node_x(&self, i: usize) -> f64 {
        self.a + (self.b - self.a) * (i as f64 / self.n_elems as f64)
    }
}

/// Symmetric tridiagonal matrix stored as main diagonal and one off-diagonal.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.matvec_into(v, &mut out);
        out
    }

    /// Returns `self + tau * other`.
    pub fn add_scaled(&self, tau: f64, other: &SymTridiag) -> SymTridiag {
        SymTridiag {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(m, a)| m + tau * a)
                .collect(),
            off: self
                .off
                .iter()
                .zip(&other.off)
                .map(|(m, a)| m + tau * a)
                .collect(),
        }
    }
}

/// LDL^T factorization of an SPD symmetric tridiagonal matrix.
///
/// SPD tridiagonal systems need no pivoting; the factorization and each
/// solve are O(n).
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl TridiagFactor {
    pub fn new(m: &SymTridiag) -> Result<Self> {
        let n = m.dim();
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.saturating_sub(1)];
        d[0] = m.diag[0];
        for i in 0..n - 1 {
            if d[i] <= 0.0 {
                return Err(Error::InvalidMesh(format!(
                    "matrix is not positive definite (pivot {} at row {i})",
                    d[i]
                )));
            }
            l[i] = m.off[i] / d[i];
            d[i + 1] = m.diag[i + 1] - m.off[i] * l[i];
        }
        if d[n - 1] <= 0.0 {
            return Err(Error::InvalidMesh(
                "matrix is not positive definite (last pivot)".into(),
            ));
        }
        Ok(TridiagFactor { d, l })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.l[i - 1] * x[i - 1];
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.l[i] * x[i + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Assembled P1 space: mesh, mass matrix, stiffness matrix and a reusable
/// factorization of the mass matrix.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Mesh1D,
    mass: SymTridiag,
    stiffness: SymTridiag,
    mass_factor: TridiagFactor,
}

/// Builds the P1 space on (a, b) with `n_elems` uniform elements.
pub fn build_space(a: f64, b: f64, n_elems: usize) -> Result<FemSpace> {
    let mesh = Mesh1D::new(a, b, n_elems)?;
    let n = mesh.n_interior();
    let h = mesh.h();
    let mass = SymTridiag {
        diag: vec![2.0 * h / 3.0; n],
        off: vec![h / 6.0; n.saturating_sub(1)],
    };
    let stiffness = SymTridiag {
        diag: vec![2.0 / h; n],
        off: vec![-1.0 / h; n.saturating_sub(1)],
    };
    let mass_factor = TridiagFactor::new(&mass)?;
    Ok(FemSpace {
        mesh,
        mass,
        stiffness,
        mass_factor,
    })
}

impl FemSpace {
    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.n_interior()
    }

    pub fn mass(&self) -> &SymTridiag {
        &self.mass
    }

    pub fn stiffness(&self) -> &SymTridiag {
        &self.stiffness
    }

    pub fn mass_factor(&self) -> &TridiagFactor {
        &self.mass_factor
    }

    /// Factorization of `M + tau A` for the implicit Euler step.
    pub fn shifted_factor(&self, tau: f64) -> Result<TridiagFactor> {
        if !(tau > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "implicit shift tau = {tau} must be positive"
            )));
        }
        TridiagFactor::new(&self.mass.add_scaled(tau, &self.stiffness))
    }

    /// L^2 inner product of two coefficient vectors: `v^T M w`.
    pub fn inner(&self, v: &[f64], w: &[f64]) -> f64 {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        debug_assert_eq!(w.len(), n);
        let mut s = 0.0;
        for i in 0..n {
            let mut mv = self.mass.diag[i] * v[i];
            if i > 0 {
                mv += self.mass.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                mv += self.mass.off[i] * v[i + 1];
            }
            s += mv * w[i];
        }
        s
    }

    /// L^2 norm of a coefficient vector.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Evaluates the P1 function with interior coefficients `v` at `x`
    /// (boundary values are zero).
    pub fn eval(&self, v: &[f64], x: f64) -> f64 {
        let n = self.mesh.n_elems();
        let h = self.mesh.h();
        let s = (x - self.mesh.a()) / h;
        let e = (s.floor() as isize).clamp(0, n as isize - 1) as usize;
        let local = s - e as f64;
        let left = if e == 0 { 0.0 } else { v[e - 1] };
        let right = if e + 1 > n - 1 { 0.0 } else { v[e] };
        left + (right - left) * local
    }

    /// Assembles the load vector `l_i = int f phi_i` with a per-element
    /// Gauss rule of the given order.
    pub fn load_of_fn(&self, f: impl Fn(f64) -> f64, order: usize) -> Result<Vec<f64>> {
        let rule = quadrature::load_rule(order)?;
        let mut load = vec![0.0; self.dim()];
        self.accumulate_load(&f, rule, 1.0, &mut load);
        Ok(load)
    }

    /// Adds `scale * int f phi_i` into `out`.
    pub(crate) fn accumulate_load(
        &self,
        f: &impl Fn(f64) -> f64,
        rule: &[GaussPoint],
        scale: f64,
        out: &mut [f64],
    ) {
        let n_elems = self.mesh.n_elems();
        let h = self.mesh.h();
        let half = 0.5 * h;
        for e in 0..n_elems {
            let xl = self.mesh.node_x(e);
            let mid = xl + half;
            for p in rule {
                let x = mid + half * p.x;
                let local = (x - xl) / h;
                let w = scale * p.w * half * f(x);
                // hat at left node of element e is interior dof e-1
                if e > 0 {
                    out[e - 1] += w * (1.0 - local);
                }
                if e < n_elems - 1 {
                    out[e] += w * local;
                }
            }
        }
    }

    /// L^2-orthogonal projection of `f` onto the space: solves `M c = l`.
    pub fn l2_project(&self, f: impl Fn(f64) -> f64, order: usize) -> Result<Vec<f64>> {
        let load = self.load_of_fn(f, order)?;
        Ok(self.mass_factor.solve(&load))
    }

    /// Solves `(M + tau A) c = rhs` for a load-form right-hand side.
    pub fn solve_shifted(&self, tau: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        let factor = self.shifted_factor(tau)?;
        let c = factor.solve(rhs);
        // SPD tridiagonal solves sit at machine precision; anything above
        // the stated tolerance is reported, not returned silently
        let shifted = self.mass.add_scaled(tau, &self.stiffness);
        let mut residual = 0.0f64;
        let mut rhs_norm = 0.0f64;
        let applied = shifted.matvec(&c);
        for i in 0..self.dim() {
            let r = applied[i] - rhs[i];
            residual += r * r;
            rhs_norm += rhs[i] * rhs[i];
        }
        let residual = residual.sqrt();
        let tolerance = 1e-12 * rhs_norm.sqrt();
        if residual > tolerance && rhs_norm > 0.0 {
            return Err(Error::SolveResidual {
                residual,
                tolerance,
            });
        }
        Ok(c)
    }

    /// Spectral pencil `A q = lambda M q` with M-orthonormal eigenvectors.
    pub fn spectral(&self) -> Result<SpectralData> {
        SpectralData::new(self)
    }
}

/// Exact nodal transfer of a coarse P1 function onto a nested finer mesh.
///
/// P1 spaces on nested uniform meshes are nested, so the transfer is plain
/// linear interpolation and preserves the function (hence its L^2 norm)
/// exactly.
pub fn prolong(coarse: &FemSpace, fine: &FemSpace, v: &[f64]) -> Result<Vec<f64>> {
    let (cm, fm) = (coarse.mesh(), fine.mesh());
    if cm.a() != fm.a() || cm.b() != fm.b() {
        return Err(Error::NonNested {
            coarse: cm.n_elems(),
            fine: fm.n_elems(),
        });
    }
    if fm.n_elems() % cm.n_elems() != 0 {
        return Err(Error::NonNested {
            coarse: cm.n_elems(),
            fine: fm.n_elems(),
        });
    }
    if v.len() != coarse.dim() {
        return Err(Error::ShapeMismatch(format!(
            "coefficient length {} does not match coarse dim {}",
            v.len(),
            coarse.dim()
        )));
    }
    let r = fm.n_elems() / cm.n_elems();
    let mut out = vec![0.0; fine.dim()];
    for (i, slot) in out.iter_mut().enumerate() {
        let fine_node = i + 1;
        let k = fine_node / r;
        let rem = fine_node % r;
        let left = if k == 0 { 0.0 } else { v[k - 1] };
        if rem == 0 {
            *slot = left;
        } else {
            let right = if k + 1 > cm.n_interior() { 0.0 } else { v[k] };
            *slot = left + (right - left) * (rem as f64 / r as f64);
        }
    }
    Ok(out)
}

/// Writes a symmetric tridiagonal matrix as `row,col,value` CSV rows.
pub fn matrix_csv(m: &SymTridiag) -> String {
    let mut s = String::from("row,col,value\n");
    for i in 0..m.dim() {
        if i > 0 {
            s.push_str(&format!("{},{},{:.17e}\n", i, i - 1, m.off[i - 1]));
        }
        s.push_str(&format!("{},{},{:.17e}\n", i, i, m.diag[i]));
        if i + 1 < m.dim() {
            s.push_str(&format!("{},{},{:.17e}\n", i, i + 1, m.off[i]));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn build_space_smallest() {
        let s = build_space(0.0, 1.0, 2).unwrap();
        assert_eq!(s.dim(), 1);
        assert_relative_eq!(s.mass().diag[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.stiffness().diag[0], 4.0, epsilon = 1e-15);
    }

    #[test]
    fn build_space_quarter_mesh() {
        let s = build_space(0.0, 1.0, 4).unwrap();
        assert_eq!(s.dim(), 3);
        for d in &s.mass().diag {
            assert_relative_eq!(*d, 1.0 / 6.0, epsilon = 1e-15);
        }
        for o in &s.mass().off {
            assert_relative_eq!(*o, 1.0 / 24.0, epsilon = 1e-15);
        }
        for d in &s.stiffness().diag {
            assert_relative_eq!(*d, 8.0, epsilon = 1e-15);
        }
        for o in &s.stiffness().off {
            assert_relative_eq!(*o, -4.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn build_space_scales_with_interval() {
        let s = build_space(0.0, 2.0, 2).unwrap();
        assert_relative_eq!(s.mass().diag[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.stiffness().diag[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn build_space_rejects_single_element() {
        assert!(build_space(0.0, 1.0, 1).is_err());
        assert!(build_space(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn assembly_matches_symbolic_integration() {
        // mass and stiffness entries against direct quadrature of hat products
        let s = build_space(0.0, 1.0, 8).unwrap();
        let mesh = s.mesh().clone();
        let hat = |k: usize, x: f64| {
            let h = mesh.h();
            let xk = mesh.node_x(k);
            (1.0 - ((x - xk) / h).abs()).max(0.0)
        };
        let rule = quadrature::points(4).unwrap();
        for i in 1..mesh.n_elems() {
            for j in 1..mesh.n_elems() {
                let mij = quadrature::integrate_composite(
                    |x| hat(i, x) * hat(j, x),
                    0.0,
                    1.0,
                    mesh.n_elems(),
                    rule,
                );
                let expect = if i == j {
                    s.mass().diag[i - 1]
                } else if i.abs_diff(j) == 1 {
                    s.mass().off[i.min(j) - 1]
                } else {
                    0.0
                };
                assert_relative_eq!(mij, expect, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn galerkin_identity_via_quadrature() {
        // c^T A d equals the integral of the derivative product
        let s = build_space(0.0, 1.0, 6).unwrap();
        let mesh = s.mesh().clone();
        let hat_deriv = |k: usize, x: f64| {
            let h = mesh.h();
            let xk = mesh.node_x(k);
            if x >= xk - h && x < xk {
                1.0 / h
            } else if x >= xk && x < xk + h {
                -1.0 / h
            } else {
                0.0
            }
        };
        let rule = quadrature::points(2).unwrap();
        for i in 1..mesh.n_elems() {
            for j in 1..mesh.n_elems() {
                let aij = quadrature::integrate_composite(
                    |x| hat_deriv(i, x) * hat_deriv(j, x),
                    0.0,
                    1.0,
                    mesh.n_elems(),
                    rule,
                );
                let mut c = vec![0.0; s.dim()];
                let mut d = vec![0.0; s.dim()];
                c[i - 1] = 1.0;
                d[j - 1] = 1.0;
                let av = s.stiffness().matvec(&d);
                let cad: f64 = c.iter().zip(&av).map(|(a, b)| a * b).sum();
                assert_relative_eq!(aij, cad, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn project_reproduces_basis_hat() {
        let s = build_space(0.0, 1.0, 8).unwrap();
        let mesh = s.mesh().clone();
        let k = 3usize; // interior node index 3 -> dof 2
        let h = mesh.h();
        let xk = mesh.node_x(k);
        let c = s
            .l2_project(move |x| (1.0 - ((x - xk) / h).abs()).max(0.0), 4)
            .unwrap();
        for (i, ci) in c.iter().enumerate() {
            let expect = if i == k - 1 { 1.0 } else { 0.0 };
            assert_relative_eq!(*ci, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn project_zero_and_sine() {
        let s = build_space(0.0, 1.0, 8).unwrap();
        let zero = s.l2_project(|_| 0.0, 4).unwrap();
        assert!(zero.iter().all(|c| c.abs() < 1e-15));

        let c = s.l2_project(|x| (PI * x).sin(), 4).unwrap();
        let h = s.mesh().h();
        for (i, ci) in c.iter().enumerate() {
            let x = s.mesh().node_x(i + 1);
            assert!(
                (ci - (PI * x).sin()).abs() < 2.0 * h * h,
                "projection should be within O(h^2) of nodal values"
            );
        }
    }

    #[test]
    fn project_matches_dense_oracle() {
        // dense quadrature + dense solve, independent of the tridiagonal path
        let s = build_space(0.0, 1.0, 8).unwrap();
        let n = s.dim();
        let rule = quadrature::points(5).unwrap();
        let mesh = s.mesh().clone();
        let hat = |k: usize, x: f64| {
            let h = mesh.h();
            let xk = mesh.node_x(k);
            (1.0 - ((x - xk) / h).abs()).max(0.0)
        };
        let f = |x: f64| (PI * x).sin();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut l = nalgebra::DVector::<f64>::zeros(n);
        for i in 0..n {
            l[i] = quadrature::integrate_composite(|x| f(x) * hat(i + 1, x), 0.0, 1.0, 64, rule);
            for j in 0..n {
                m[(i, j)] = quadrature::integrate_composite(
                    |x| hat(i + 1, x) * hat(j + 1, x),
                    0.0,
                    1.0,
                    64,
                    rule,
                );
            }
        }
        let dense = m.lu().solve(&l).unwrap();
        let c = s.l2_project(f, 5).unwrap();
        for i in 0..n {
            assert_relative_eq!(c[i], dense[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn project_rejects_low_quadrature() {
        let s = build_space(0.0, 1.0, 4).unwrap();
        assert!(s.l2_project(|_| 1.0, 1).is_err());
    }

    #[test]
    fn shifted_solve_single_dof_closed_form() {
        let s = build_space(0.0, 1.0, 2).unwrap();
        let c = s.solve_shifted(0.25, &[1.0 / 12.0]).unwrap();
        assert_relative_eq!(c[0], 1.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn shifted_solve_zero_rhs() {
        let s = build_space(0.0, 1.0, 8).unwrap();
        let c = s.solve_shifted(0.1, &vec![0.0; s.dim()]).unwrap();
        assert!(c.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn shifted_solve_matches_dense_lu() {
        let s = build_space(0.0, 1.0, 16).unwrap();
        let n = s.dim();
        let tau = 0.05;
        let rhs: Vec<f64> = (0..n)
            .map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.3)
            .collect();
        let c = s.solve_shifted(tau, &rhs).unwrap();

        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = s.mass().diag[i] + tau * s.stiffness().diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = s.mass().off[i] + tau * s.stiffness().off[i];
                dense[(i + 1, i)] = dense[(i, i + 1)];
            }
        }
        let x = dense
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&rhs))
            .unwrap();
        for i in 0..n {
            assert_relative_eq!(c[i], x[i], epsilon = 1e-12);
        }

        // residual check
        let shifted = s.mass().add_scaled(tau, s.stiffness());
        let mut res = shifted.matvec(&c);
        let mut norm = 0.0f64;
        for i in 0..n {
            res[i] -= rhs[i];
            norm += res[i] * res[i];
        }
        let rhs_norm: f64 = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm.sqrt() <= 1e-12 * rhs_norm.max(1.0));
    }

    #[test]
    fn prolong_examples() {
        let coarse = build_space(0.0, 1.0, 4).unwrap();
        let fine = build_space(0.0, 1.0, 8).unwrap();

        let zero = prolong(&coarse, &fine, &vec![0.0; coarse.dim()]).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));

        // hat at coarse node 2 -> values 1/2, 1, 1/2 at fine nodes 3, 4, 5
        let mut v = vec![0.0; coarse.dim()];
        v[1] = 1.0;
        let p = prolong(&coarse, &fine, &v).unwrap();
        let expect = [0.0, 0.0, 0.5, 1.0, 0.5, 0.0, 0.0];
        for (a, b) in p.iter().zip(expect.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }

        // L2 norm preserved
        let v: Vec<f64> = (0..coarse.dim()).map(|i| (i as f64 * 1.3).sin()).collect();
        let p = prolong(&coarse, &fine, &v).unwrap();
        assert_relative_eq!(coarse.l2_norm(&v), fine.l2_norm(&p), epsilon = 1e-12);
    }

    #[test]
    fn prolong_rejects_non_nested() {
        let coarse = build_space(0.0, 1.0, 4).unwrap();
        let fine = build_space(0.0, 1.0, 6).unwrap();
        assert!(prolong(&coarse, &fine, &[0.0; 3]).is_err());
        let shifted = build_space(0.0, 2.0, 8).unwrap();
        assert!(prolong(&coarse, &shifted, &[0.0; 3]).is_err());
    }

    #[test]
    fn matrices_are_exactly_symmetric() {
        // symmetric band storage: entry (i, j) and (j, i) are the same float
        let s = build_space(0.0, 1.0, 16).unwrap();
        let n = s.dim();
        let basis = |k: usize| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            e
        };
        for i in 0..n {
            for j in 0..n {
                let mij = s.inner(&basis(i), &basis(j));
                let mji = s.inner(&basis(j), &basis(i));
                assert_eq!(mij.to_bits(), mji.to_bits());
            }
        }
    }
}
