use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{dot, local_mass, local_stiffness, FeFunction, FeSpace, QuadratureRule};
use crate::mesh::{build_patch_subdivision, signed_area2, PatchSubdivision, Point};
use crate::problem::{energy_derivative_pairing, Problem};

/// Exact decays need one global re-integration per element, so they are
/// only offered on small meshes.
pub const EXACT_DECAY_MAX_ELEMENTS: usize = 5000;

/// Relative size of the Schur pivot below which `u` is treated as linearly
/// dependent on the patch hats.
const DEPENDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    Exact,
    Approximate,
}

impl DecayMode {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "exact" => Ok(DecayMode::Exact),
            "approximate" => Ok(DecayMode::Approximate),
            other => Err(Error::InvalidParameter(format!(
                "unknown decay mode '{other}' (expected exact or approximate)"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            DecayMode::Exact => "exact",
            DecayMode::Approximate => "approximate",
        }
    }
}

/// Quantities shared by all local solves of one marking sweep.
pub struct SweepContext<'a> {
    pub problem: &'a Problem,
    pub space: &'a FeSpace,
    pub u: &'a FeFunction,
    pub dt: f64,
    pub quad: &'a QuadratureRule,
    vertex_values: Vec<f64>,
    /// `B_dt(u, u)`
    pub b_uu: f64,
    /// `u^T A u`
    pub grad_uu: f64,
    /// `u^T M u`
    pub mass_uu: f64,
    /// `<E'(u), u>`
    pub pairing_u: f64,
    /// Per element quadrature data `(x, u_h(x), weight * |T|)`, kept for
    /// exact decays.
    element_points: Option<Vec<Vec<(Point, f64, f64)>>>,
}

impl<'a> SweepContext<'a> {
    pub fn new(
        problem: &'a Problem,
        space: &'a FeSpace,
        u: &'a FeFunction,
        dt: f64,
        quad: &'a QuadratureRule,
        mode: DecayMode,
    ) -> Result<Self> {
        space.check(u)?;
        let r = energy_derivative_pairing(problem, space, u, quad)?;
        let grad_uu = space.stiffness.quad_form(&u.coeffs);
        let mass_uu = space.mass.quad_form(&u.coeffs);
        let vertex_values = space.vertex_values(u);
        let element_points = match mode {
            DecayMode::Approximate => None,
            DecayMode::Exact => {
                let mesh = &space.mesh;
                if mesh.num_elements() >= EXACT_DECAY_MAX_ELEMENTS {
                    return Err(Error::InvalidParameter(format!(
                        "exact decays need fewer than {EXACT_DECAY_MAX_ELEMENTS} elements, mesh has {}",
                        mesh.num_elements()
                    )));
                }
                Some(
                    mesh.triangles()
                        .iter()
                        .enumerate()
                        .map(|(t, tri)| {
                            let pts = mesh.element_points(t);
                            let area = mesh.area(t);
                            let uv = [vertex_values[tri[0]], vertex_values[tri[1]], vertex_values[tri[2]]];
                            quad.map(&pts)
                                .map(|(x, b, w)| (x, b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2], w * area))
                                .collect()
                        })
                        .collect(),
                )
            }
        };
        Ok(SweepContext {
            problem,
            space,
            u,
            dt,
            quad,
            vertex_values,
            b_uu: dt * grad_uu + mass_uu,
            grad_uu,
            mass_uu,
            pairing_u: dot(&r, &u.coeffs),
            element_points,
        })
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex_values
    }
}

/// Patch-local bilinear and linear forms for the midpoint hats.
pub struct PatchForms {
    pub patch: PatchSubdivision,
    /// `u` at every local point of the patch.
    pub u_local: Vec<f64>,
    /// `int grad xi_k . grad xi_l`
    pub stiffness: Vec<Vec<f64>>,
    /// `int xi_k xi_l`
    pub mass: Vec<Vec<f64>>,
    /// `int grad u . grad xi_k`
    pub grad_u_xi: Vec<f64>,
    /// `int u xi_k`
    pub u_xi: Vec<f64>,
    /// `int f(x, u) xi_k`
    pub load_xi: Vec<f64>,
}

impl PatchForms {
    pub fn num_hats(&self) -> usize {
        self.patch.interior_midpoints.len()
    }

    /// `B_dt(xi_k, xi_l)`
    pub fn b_xi(&self, dt: f64, k: usize, l: usize) -> f64 {
        dt * self.stiffness[k][l] + self.mass[k][l]
    }

    /// `B_dt(u, xi_k)`
    pub fn b_u_xi(&self, dt: f64, k: usize) -> f64 {
        dt * self.grad_u_xi[k] + self.u_xi[k]
    }
}

pub fn assemble_patch_forms(ctx: &SweepContext<'_>, element: usize) -> Result<PatchForms> {
    let patch = build_patch_subdivision(&ctx.space.mesh, element);
    let u_local = patch.interpolate(&ctx.vertex_values);
    let m = patch.interior_midpoints.len();
    let mut forms = PatchForms {
        u_local,
        stiffness: vec![vec![0.0; m]; m],
        mass: vec![vec![0.0; m]; m],
        grad_u_xi: vec![0.0; m],
        u_xi: vec![0.0; m],
        load_xi: vec![0.0; m],
        patch,
    };
    if m == 0 {
        return Ok(forms);
    }
    let f = &ctx.problem.f;
    for (s, st) in forms.patch.sub_triangles.iter().enumerate() {
        // hat index of each corner, if it carries one
        let hats: [Option<usize>; 3] = std::array::from_fn(|i| forms.patch.hat_index(st[i]));
        if hats.iter().all(Option::is_none) {
            continue;
        }
        let pts = forms.patch.sub_triangle_points(s);
        let area = 0.5 * signed_area2(pts[0], pts[1], pts[2]);
        let ks = local_stiffness(&pts);
        let ms = local_mass(&pts);
        let uv = [forms.u_local[st[0]], forms.u_local[st[1]], forms.u_local[st[2]]];
        let mut load = [0.0; 3];
        for (x, b, w) in ctx.quad.map(&pts) {
            let fv = f(x, b[0] * uv[0] + b[1] * uv[1] + b[2] * uv[2]);
            if !fv.is_finite() {
                return Err(Error::NonFinite { value: fv, x: x[0], y: x[1] });
            }
            for i in 0..3 {
                load[i] += w * fv * b[i];
            }
        }
        for i in 0..3 {
            let Some(k) = hats[i] else { continue };
            forms.load_xi[k] += area * load[i];
            for j in 0..3 {
                forms.grad_u_xi[k] += ks[i][j] * uv[j];
                forms.u_xi[k] += ms[i][j] * uv[j];
                if let Some(l) = hats[j] {
                    forms.stiffness[k][l] += ks[i][j];
                    forms.mass[k][l] += ms[i][j];
                }
            }
        }
    }
    Ok(forms)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalSolveResult {
    pub element: usize,
    /// Coefficient of `u` in `u~ = alpha u + eta`.
    pub alpha: f64,
    /// Coefficients of `eta` on the interior midpoint hats.
    pub eta: Vec<f64>,
    /// True when `u` was numerically dependent on the hats and dropped.
    pub u_dropped: bool,
    /// `(1/dt) |u~ - u|_dt^2`
    pub decay_approx: f64,
    pub decay_exact: Option<f64>,
    /// `|u~ - u|_dt^2`
    pub update_norm_sq: f64,
    /// `|u~ - u|_{L2}^2`
    pub update_l2_sq: f64,
}

impl LocalSolveResult {
    /// The decay used for marking in the given mode.
    pub fn decay(&self, mode: DecayMode) -> f64 {
        match mode {
            DecayMode::Exact => self.decay_exact.unwrap_or(self.decay_approx),
            DecayMode::Approximate => self.decay_approx,
        }
    }
}

/// In-place Cholesky factorisation of a small SPD matrix. Returns `false`
/// on a non-positive pivot.
fn cholesky(a: &mut [Vec<f64>]) -> bool {
    let n = a.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in (j + 1)..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    true
}

/// Solves `L y = b` in place.
fn forward(l: &[Vec<f64>], b: &mut [f64]) {
    for i in 0..b.len() {
        for k in 0..i {
            b[i] -= l[i][k] * b[k];
        }
        b[i] /= l[i][i];
    }
}

/// Solves `L^T x = y` in place.
fn backward(l: &[Vec<f64>], y: &mut [f64]) {
    for i in (0..y.len()).rev() {
        for k in (i + 1)..y.len() {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
}

/// One local iteration step on the patch of `element`: Galerkin projection
/// of the iteration onto `span{xi_1, .., xi_m, u}`.
///
/// The system is solved for the increment `d = u~ - u`, whose right-hand
/// side is `-dt <E'(u), .>`; this avoids the cancellation in `l_dt - B_dt u`.
pub fn local_step(ctx: &SweepContext<'_>, element: usize) -> Result<LocalSolveResult> {
    let forms = assemble_patch_forms(ctx, element)?;
    local_step_with(ctx, element, &forms)
}

fn local_step_with(ctx: &SweepContext<'_>, element: usize, forms: &PatchForms) -> Result<LocalSolveResult> {
    let dt = ctx.dt;
    let m = forms.num_hats();
    // -dt <E'(u), xi_k> = dt (int f(u) xi_k - int grad u . grad xi_k)
    let rhs_xi: Vec<f64> = (0..m).map(|k| dt * (forms.load_xi[k] - forms.grad_u_xi[k])).collect();
    let rhs_u = -dt * ctx.pairing_u;

    let mut g = vec![vec![0.0; m + 1]; m + 1];
    for k in 0..m {
        for l in 0..m {
            g[k][l] = forms.b_xi(dt, k, l);
        }
        g[k][m] = forms.b_u_xi(dt, k);
        g[m][k] = g[k][m];
    }
    g[m][m] = ctx.b_uu;

    let mut l = g.clone();
    let keep_u = ctx.b_uu > 0.0 && cholesky(&mut l) && l[m][m] * l[m][m] > DEPENDENCE_TOL * ctx.b_uu;
    let (size, mut y) = if keep_u {
        let mut b = rhs_xi.clone();
        b.push(rhs_u);
        (m + 1, b)
    } else {
        l = g[..m].iter().map(|row| row[..m].to_vec()).collect();
        if !cholesky(&mut l) {
            return Err(Error::SingularLocalSystem(element));
        }
        (m, rhs_xi.clone())
    };
    if size == 0 {
        return Ok(LocalSolveResult {
            element,
            alpha: 1.0,
            eta: Vec::new(),
            u_dropped: true,
            decay_approx: 0.0,
            decay_exact: None,
            update_norm_sq: 0.0,
            update_l2_sq: 0.0,
        });
    }
    forward(&l, &mut y);
    // |d|_dt^2 = d^T G d = |L^T d|^2 = |y|^2, a sum of squares
    let norm_sq: f64 = y.iter().map(|v| v * v).sum();
    let mut d = y;
    backward(&l, &mut d);
    let beta = if keep_u { d[m] } else { 0.0 };
    let eta = d[..m].to_vec();

    let mut l2 = beta * beta * ctx.mass_uu;
    for k in 0..m {
        l2 += 2.0 * beta * eta[k] * forms.u_xi[k];
        for j in 0..m {
            l2 += eta[k] * forms.mass[k][j] * eta[j];
        }
    }

    Ok(LocalSolveResult {
        element,
        alpha: 1.0 + beta,
        eta,
        u_dropped: !keep_u,
        decay_approx: norm_sq / dt,
        decay_exact: None,
        update_norm_sq: norm_sq,
        update_l2_sq: l2.max(0.0),
    })
}

/// Approximate decay from the closed form
/// `(1/dt)[(alpha-1)^2 |u|_dt^2 + |eta|_dt^2 + 2(alpha-1) B_dt(u, eta)]`.
pub fn local_decay_approx(ctx: &SweepContext<'_>, forms: &PatchForms, alpha: f64, eta: &[f64]) -> f64 {
    let dt = ctx.dt;
    let beta = alpha - 1.0;
    let mut s = beta * beta * ctx.b_uu;
    for k in 0..eta.len() {
        s += 2.0 * beta * eta[k] * forms.b_u_xi(dt, k);
        for l in 0..eta.len() {
            s += eta[k] * forms.b_xi(dt, k, l) * eta[l];
        }
    }
    s / dt
}

/// `E(u) - E(u~)` evaluated consistently: patch-local integrals on the
/// sub-triangles, plus the change of the reaction energy on the rest of the
/// mesh when `alpha != 1`.
pub fn local_decay_exact(ctx: &SweepContext<'_>, forms: &PatchForms, alpha: f64, eta: &[f64]) -> Result<f64> {
    let Some(element_points) = &ctx.element_points else {
        return Err(Error::InvalidParameter("sweep context was built without exact-decay data".into()));
    };
    let big_f = |x: Point, t: f64| ctx.problem.antiderivative_at(x, t);
    let beta = alpha - 1.0;
    let m = eta.len();

    // gradient part: 1/2 |grad u|^2 - 1/2 |grad u~|^2
    let mut cross = 0.0;
    let mut eta_sq = 0.0;
    for k in 0..m {
        cross += eta[k] * forms.grad_u_xi[k];
        for l in 0..m {
            eta_sq += eta[k] * forms.stiffness[k][l] * eta[l];
        }
    }
    let grad_part = -(beta * (1.0 + 0.5 * beta) * ctx.grad_uu + (1.0 + beta) * cross + 0.5 * eta_sq);

    // reaction part on the patch
    let patch = &forms.patch;
    let mut eta_local = vec![0.0; patch.points.len()];
    for (k, &p) in patch.interior_midpoints.iter().enumerate() {
        eta_local[p] = eta[k];
    }
    let mut reaction = 0.0;
    for (s, st) in patch.sub_triangles.iter().enumerate() {
        let pts = patch.sub_triangle_points(s);
        let area = 0.5 * signed_area2(pts[0], pts[1], pts[2]);
        let mut local = 0.0;
        for (x, b, w) in ctx.quad.map(&pts) {
            let uq: f64 = (0..3).map(|i| b[i] * forms.u_local[st[i]]).sum();
            let eq: f64 = (0..3).map(|i| b[i] * eta_local[st[i]]).sum();
            local += w * (big_f(x, alpha * uq + eq) - big_f(x, uq));
        }
        reaction += area * local;
    }
    // and on the rest of the mesh, where u~ = alpha u
    if beta != 0.0 {
        let mut in_patch = patch.patch_elements.clone();
        in_patch.sort_unstable();
        for (t, qp) in element_points.iter().enumerate() {
            if in_patch.binary_search(&t).is_ok() {
                continue;
            }
            for &(x, uq, w) in qp {
                reaction += w * (big_f(x, alpha * uq) - big_f(x, uq));
            }
        }
    }
    let total = grad_part + reaction;
    if !total.is_finite() {
        return Err(Error::NonFinite { value: total, x: f64::NAN, y: f64::NAN });
    }
    Ok(total)
}

/// Local solves on every element, in parallel; the result is ordered by
/// element id. In exact mode each result also carries the exact decay.
pub fn compute_local_decays(ctx: &SweepContext<'_>, mode: DecayMode) -> Result<Vec<LocalSolveResult>> {
    (0..ctx.space.mesh.num_elements())
        .into_par_iter()
        .map(|t| {
            let forms = assemble_patch_forms(ctx, t)?;
            let mut res = local_step_with(ctx, t, &forms)?;
            if mode == DecayMode::Exact {
                res.decay_exact = Some(local_decay_exact(ctx, &forms, res.alpha, &res.eta)?);
            }
            Ok(res)
        })
        .collect()
}
