//! Semilinear problems `Delta u + f(x, u) = 0` with homogeneous Dirichlet
//! data, the energy `E(u) = 1/2 |grad u|^2 - int F(x, u)` and its derivative.

mod builtin;
pub mod special;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{assemble_weighted_load, cg_maxit, cg_solve, dot, FeFunction, FeSpace, QuadratureRule, CG_TOL};
use crate::mesh::{initial_mesh, signed_area2, DomainSpec, Mesh, Point};

pub use builtin::{builtin, EXPERIMENTS};

pub type PointwiseFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
pub type SpatialFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Range of `df/du` over all `(x, u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeRange {
    /// Known in closed form.
    Exact { lo: f64, hi: f64 },
    /// Estimated by sampling; diagnostic only.
    Sampled { lo: f64, hi: f64 },
}

impl DerivativeRange {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            DerivativeRange::Exact { lo, hi } | DerivativeRange::Sampled { lo, hi } => (lo, hi),
        }
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self, DerivativeRange::Sampled { .. })
    }
}

/// Linear reaction term `f(x, u) = a(x) u + b(x)`.
#[derive(Clone)]
pub struct LinearReaction {
    pub a: SpatialFn,
    pub b: SpatialFn,
    /// True when `a <= 0` everywhere, so the discrete system is SPD.
    pub definite: bool,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    /// Reaction term, already divided by the diffusion coefficient.
    pub f: PointwiseFn,
    pub df_du: PointwiseFn,
    /// `F(x, t) = int_0^t f(x, s) ds`; `None` selects numerical quadrature.
    pub antiderivative: Option<PointwiseFn>,
    /// Diffusion coefficient of the original statement `-eps Lap u = f_hat`.
    pub epsilon: f64,
    pub domain: DomainSpec,
    /// Constant Dirichlet value removed by the substitution `w = u - c`;
    /// `f` and `F` above act on `w`.
    pub dirichlet_lift: f64,
    pub dt_default: f64,
    pub initial_n: usize,
    pub derivative_range: DerivativeRange,
    pub linear: Option<LinearReaction>,
    pub exact_solution: Option<SpatialFn>,
    pub exact_gradient: Option<GradientFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("epsilon", &self.epsilon)
            .field("domain", &self.domain)
            .field("dirichlet_lift", &self.dirichlet_lift)
            .field("dt_default", &self.dt_default)
            .field("derivative_range", &self.derivative_range)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl Problem {
    /// `F(x, t)`, from the closed form when available.
    pub fn antiderivative_at(&self, x: Point, t: f64) -> f64 {
        match &self.antiderivative {
            Some(big_f) => big_f(x, t),
            None => {
                let f = &self.f;
                special::adaptive_quadrature(&|s| f(x, s), 0.0, t, 1e-13)
            }
        }
    }
}

/// `int_Omega g(x, u_h(x)) dx` element by element with the given rule.
pub fn integrate_pointwise(
    mesh: &Mesh,
    vertex_values: &[f64],
    quad: &QuadratureRule,
    g: impl Fn(Point, f64) -> f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.element_points(t);
        let area = 0.5 * signed_area2(p[0], p[1], p[2]);
        let u = [vertex_values[tri[0]], vertex_values[tri[1]], vertex_values[tri[2]]];
        let mut local = 0.0;
        for (x, b, w) in quad.map(&p) {
            let v = g(x, b[0] * u[0] + b[1] * u[1] + b[2] * u[2]);
            if !v.is_finite() {
                return Err(Error::NonFinite { value: v, x: x[0], y: x[1] });
            }
            local += w * v;
        }
        total += area * local;
    }
    Ok(total)
}

/// `E(u) = 1/2 u^T A u - int F(x, u_h)`.
pub fn energy(p: &Problem, space: &FeSpace, u: &FeFunction, quad: &QuadratureRule) -> Result<f64> {
    space.check(u)?;
    let vals = space.vertex_values(u);
    let reaction = integrate_pointwise(&space.mesh, &vals, quad, |x, v| p.antiderivative_at(x, v))?;
    Ok(0.5 * space.stiffness.quad_form(&u.coeffs) - reaction)
}

/// Load vector `int f(x, u_h) phi_i`.
pub fn reaction_load(p: &Problem, space: &FeSpace, u: &FeFunction, quad: &QuadratureRule) -> Result<Vec<f64>> {
    space.check(u)?;
    let vals = space.vertex_values(u);
    let f = &p.f;
    assemble_weighted_load(&space.mesh, &space.dofs, |x, v| f(x, v), &vals, quad)
}

/// Vector of `<E'(u), phi_i> = (A u)_i - int f(x, u_h) phi_i`.
pub fn energy_derivative_pairing(
    p: &Problem,
    space: &FeSpace,
    u: &FeFunction,
    quad: &QuadratureRule,
) -> Result<Vec<f64>> {
    let load = reaction_load(p, space, u, quad)?;
    let mut r = space.stiffness.mul_vec(&u.coeffs);
    for (ri, li) in r.iter_mut().zip(load) {
        *ri -= li;
    }
    Ok(r)
}

/// `sigma_f(lambda) = sup |df/du + 1/lambda|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaBound {
    pub value: f64,
    pub sampled: bool,
}

pub fn sigma_f_bound(p: &Problem, lambda: f64) -> SigmaBound {
    let (lo, hi) = p.derivative_range.bounds();
    let shift = 1.0 / lambda;
    SigmaBound {
        value: (lo + shift).abs().max((hi + shift).abs()),
        sampled: p.derivative_range.is_sampled(),
    }
}

/// Poincare constant `C_P` with `|v|_{L2}^2 <= C_P |grad v|_{L2}^2`.
pub fn poincare_constant(domain: &DomainSpec) -> Result<f64> {
    match domain {
        DomainSpec::UnitSquare => Ok(1.0 / (2.0 * std::f64::consts::PI.powi(2))),
        other => Ok(1.0 / smallest_dirichlet_eigenvalue(other, 16)?),
    }
}

/// Smallest Dirichlet-Laplacian eigenvalue on a uniform mesh by inverse
/// power iteration.
pub fn smallest_dirichlet_eigenvalue(domain: &DomainSpec, n: usize) -> Result<f64> {
    let space = FeSpace::new(initial_mesh(domain, n)?)?;
    let (a, m) = (&space.stiffness, &space.mass);
    let nd = space.ndof();
    if nd == 0 {
        return Err(Error::InvalidMesh("no interior degrees of freedom".into()));
    }
    let mut x = vec![1.0; nd];
    let mut lambda = f64::INFINITY;
    for _ in 0..200 {
        let rhs = m.mul_vec(&x);
        let y = cg_solve(a, &rhs, CG_TOL, cg_maxit(nd))?;
        let next = a.quad_form(&y) / m.quad_form(&y);
        let scale = m.quad_form(&y).sqrt();
        x = y.iter().map(|v| v / scale).collect();
        if (next - lambda).abs() < 1e-13 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Stability constant of the fixed-point iteration: with
/// `kappa = 1/2 max(C_f - 1/C_P, 0)` and `C_f = sup |df/du|`,
/// `gamma = min((1/dt - kappa) / (dt/C_P + 1), 1/(2 dt))`.
/// Returns `None` when `1/dt <= kappa` (no guaranteed decay).
pub fn gamma_f(p: &Problem, dt: f64, c_p: f64) -> Option<f64> {
    let (lo, hi) = p.derivative_range.bounds();
    let c_f = lo.abs().max(hi.abs());
    let kappa = 0.5 * (c_f - 1.0 / c_p).max(0.0);
    if 1.0 / dt <= kappa {
        return None;
    }
    Some(((1.0 / dt - kappa) / (dt / c_p + 1.0)).min(0.5 / dt))
}

/// `|grad(u* - u_h)|_{L2}` for problems with a known solution.
pub fn h1_error(p: &Problem, space: &FeSpace, u: &FeFunction, quad: &QuadratureRule) -> Option<f64> {
    let grad = p.exact_gradient.as_ref()?;
    let vals = space.vertex_values(u);
    let mesh = &space.mesh;
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = mesh.element_points(t);
        let area2 = signed_area2(pts[0], pts[1], pts[2]);
        let mut gh = [0.0; 2];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            gh[0] += vals[tri[i]] * (pts[j][1] - pts[k][1]) / area2;
            gh[1] += vals[tri[i]] * (pts[k][0] - pts[j][0]) / area2;
        }
        let mut local = 0.0;
        for (x, _, w) in quad.map(&pts) {
            let g = grad(x);
            local += w * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
        }
        total += 0.5 * area2 * local;
    }
    Some(total.sqrt())
}

/// Energy of the exact solution by tensor Gauss-Legendre quadrature, for
/// problems on the unit square with a known solution.
pub fn exact_energy(p: &Problem, points: usize) -> Option<f64> {
    if p.domain != DomainSpec::UnitSquare {
        return None;
    }
    let (u, grad) = (p.exact_solution.as_ref()?, p.exact_gradient.as_ref()?);
    let (nodes, weights) = special::gauss_legendre(points);
    let mut total = 0.0;
    for (xi, wx) in nodes.iter().zip(&weights) {
        for (yi, wy) in nodes.iter().zip(&weights) {
            let x = [0.5 * (xi + 1.0), 0.5 * (yi + 1.0)];
            let g = grad(x);
            let density = 0.5 * (g[0] * g[0] + g[1] * g[1]) - p.antiderivative_at(x, u(x));
            total += 0.25 * wx * wy * density;
        }
    }
    Some(total)
}

/// `u^T r` helper used by the iteration and the marking sweeps.
pub fn pairing_with(r: &[f64], u: &FeFunction) -> f64 {
    dot(r, &u.coeffs)
}
