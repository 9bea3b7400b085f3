//! The stabilised linearised fixed-point iteration
//! `B_dt(u^{n+1}, v) = l_dt(u^n; v)` on a fixed finite-element space, with
//! the energy-based stopping rule.

use crate::error::{Error, Result};
use crate::fem::{cg_maxit, cg_solve_from, minres_solve, CsrMatrix, FeFunction, FeSpace, QuadratureRule, CG_TOL};
use crate::problem::{energy, reaction_load, LinearReaction, Problem};

/// Relative slack for energy comparisons, covering solver and quadrature
/// round-off.
pub const ENERGY_SLACK: f64 = 1e-9;
/// Relative threshold below which the first energy decay counts as zero.
pub const ZERO_DECAY_TOL: f64 = 1e-12;

pub fn energy_slack(e: f64) -> f64 {
    ENERGY_SLACK * (1.0 + e.abs())
}

/// Which residual the stopping test compares against `alpha Phi^n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StoppingRule {
    /// The update just computed: stop at `n` once
    /// `(1/dt) |u^{n-1} - u^n|_dt <= alpha Phi^n`.
    #[default]
    Update,
    /// The residual at the current iterate, `R(u^n) = (u^n - u^{n+1}) / dt`,
    /// which costs one extra step per space: stop at `n` once
    /// `(1/dt) |u^n - u^{n+1}|_dt <= alpha Phi^n` and return `u^n`.
    Lookahead,
}

impl StoppingRule {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "update" => Ok(StoppingRule::Update),
            "lookahead" => Ok(StoppingRule::Lookahead),
            other => Err(Error::InvalidParameter(format!(
                "unknown stopping rule '{other}' (expected update or lookahead)"
            ))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            StoppingRule::Update => "update",
            StoppingRule::Lookahead => "lookahead",
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterationConfig {
    pub dt: f64,
    /// Stopping parameter; 0 disables the energy criterion.
    pub alpha: f64,
    pub max_inner: usize,
    pub quad: QuadratureRule,
    /// Solve linear problems directly instead of iterating.
    pub linear_shortcut: bool,
    pub stopping: StoppingRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The stopping test of the configured [`StoppingRule`] held.
    Criterion,
    /// The first step did not decrease the energy: `u^0` already solves the
    /// discrete problem.
    ZeroDecay,
    MaxInner,
    DirectSolve,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationStep {
    pub n: usize,
    pub energy: f64,
    /// `(1/dt) |u^{n-1} - u^n|_dt`
    pub update_norm: f64,
    /// `E(u^0) - E(u^n)`
    pub phi: f64,
}

#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub initial_energy: f64,
    pub steps: Vec<IterationStep>,
    pub stop: StopReason,
}

impl IterationTrace {
    pub fn hit_max_inner(&self) -> bool {
        self.stop == StopReason::MaxInner
    }

    pub fn final_energy(&self) -> f64 {
        self.steps.last().map_or(self.initial_energy, |s| s.energy)
    }

    pub fn final_update_norm(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.update_norm)
    }

    /// Energies `E(u^0), E(u^1), ...`.
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial_energy).chain(self.steps.iter().map(|s| s.energy)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct IterationOutcome {
    pub u: FeFunction,
    pub n_star: usize,
    /// `E(u^{n*})`.
    pub energy: f64,
    /// The residual the stopping test used: `(1/dt) |u^{n*-1} - u^{n*}|_dt`,
    /// or `(1/dt) |u^{n*} - u^{n*+1}|_dt` under [`StoppingRule::Lookahead`].
    pub residual: f64,
    /// All computed steps, including a lookahead step past `n*`.
    pub trace: IterationTrace,
}

/// Right-hand side `l_dt(u; phi_i) = int (u + dt f(x, u)) phi_i`.
pub fn linear_form(p: &Problem, space: &FeSpace, u: &FeFunction, dt: f64, quad: &QuadratureRule) -> Result<Vec<f64>> {
    let load = reaction_load(p, space, u, quad)?;
    let mut rhs = space.mass.mul_vec(&u.coeffs);
    for (r, l) in rhs.iter_mut().zip(load) {
        *r += dt * l;
    }
    Ok(rhs)
}

/// One step of the iteration: solves `B_dt u^{n+1} = l_dt(u^n)`.
pub fn linearised_step(
    p: &Problem,
    space: &FeSpace,
    b_dt: &CsrMatrix,
    u_n: &FeFunction,
    dt: f64,
    quad: &QuadratureRule,
) -> Result<FeFunction> {
    let rhs = linear_form(p, space, u_n, dt, quad)?;
    let mut x = u_n.coeffs.clone();
    cg_solve_from(b_dt, &rhs, &mut x, CG_TOL, cg_maxit(rhs.len()))?;
    Ok(FeFunction {
        generation: u_n.generation,
        coeffs: x,
    })
}

/// `(1/dt) |u_n - u_next|_dt`, the norm of the linearisation residual.
pub fn residual_norm(u_n: &FeFunction, u_next: &FeFunction, b_dt: &CsrMatrix, dt: f64) -> f64 {
    let d: Vec<f64> = u_n.coeffs.iter().zip(&u_next.coeffs).map(|(a, b)| a - b).collect();
    b_dt.quad_form(&d).max(0.0).sqrt() / dt
}

/// Matrix of the linear shortcut, `A - M_a` with `M_a = int a phi_i phi_j`,
/// and its right-hand side `int b phi_i`.
pub fn linear_system(space: &FeSpace, lin: &LinearReaction, quad: &QuadratureRule) -> Result<(CsrMatrix, Vec<f64>)> {
    let mesh = &space.mesh;
    let dofs = &space.dofs;
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    let mut rhs = vec![0.0; dofs.len()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = mesh.element_points(t);
        let area = mesh.area(t);
        let mut ma = [[0.0; 3]; 3];
        let mut lb = [0.0; 3];
        for (x, bary, w) in quad.map(&pts) {
            let (a, b) = ((lin.a)(x), (lin.b)(x));
            for i in 0..3 {
                lb[i] += w * b * bary[i];
                for j in 0..3 {
                    ma[i][j] += w * a * bary[i] * bary[j];
                }
            }
        }
        for i in 0..3 {
            let Some(di) = dofs.dof(tri[i]) else { continue };
            rhs[di] += area * lb[i];
            for j in 0..3 {
                if let Some(dj) = dofs.dof(tri[j]) {
                    triplets.push((di, dj, -area * ma[i][j]));
                }
            }
        }
    }
    let weighted = CsrMatrix::from_triplets(dofs.len(), triplets);
    Ok((space.stiffness.linear_combination(1.0, &weighted, 1.0), rhs))
}

/// Direct solution of the discrete problem for a linear reaction term.
pub fn solve_linear(space: &FeSpace, lin: &LinearReaction, quad: &QuadratureRule, warm: &FeFunction) -> Result<FeFunction> {
    let (k, rhs) = linear_system(space, lin, quad)?;
    let coeffs = if lin.definite {
        let mut x = warm.coeffs.clone();
        cg_solve_from(&k, &rhs, &mut x, CG_TOL, cg_maxit(rhs.len()))?;
        x
    } else {
        minres_solve(&k, &rhs, CG_TOL, 20 * cg_maxit(rhs.len()))?
    };
    Ok(FeFunction {
        generation: warm.generation,
        coeffs,
    })
}

/// Iterates on a fixed space from `u0` until the stopping rule holds.
///
/// Fails with [`Error::EnergyIncrease`] when an iteration step raises the
/// energy beyond round-off, which signals an inadmissible step size.
pub fn iterate_on_space(p: &Problem, space: &FeSpace, u0: &FeFunction, cfg: &IterationConfig) -> Result<IterationOutcome> {
    space.check(u0)?;
    if !(cfg.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {}", cfg.dt)));
    }
    if cfg.max_inner == 0 {
        return Err(Error::InvalidParameter("max_inner must be at least 1".into()));
    }
    let e0 = energy(p, space, u0, &cfg.quad)?;
    let b_dt = space.b_lambda(cfg.dt);

    if cfg.linear_shortcut {
        if let Some(lin) = &p.linear {
            let u1 = solve_linear(space, lin, &cfg.quad, u0)?;
            let e1 = energy(p, space, &u1, &cfg.quad)?;
            let step = IterationStep {
                n: 1,
                energy: e1,
                update_norm: residual_norm(u0, &u1, &b_dt, cfg.dt),
                phi: e0 - e1,
            };
            return Ok(IterationOutcome {
                u: u1,
                n_star: 1,
                energy: e1,
                residual: step.update_norm,
                trace: IterationTrace {
                    initial_energy: e0,
                    steps: vec![step],
                    stop: StopReason::DirectSolve,
                },
            });
        }
    }

    let lookahead = cfg.stopping == StoppingRule::Lookahead;
    let zero_decay = |phi: f64| phi <= ZERO_DECAY_TOL * (1.0 + e0.abs());
    let mut u = u0.clone();
    let mut e_prev = e0;
    let mut steps: Vec<IterationStep> = Vec::new();
    loop {
        let n = steps.len() + 1;
        let next = linearised_step(p, space, &b_dt, &u, cfg.dt, &cfg.quad)?;
        let e = energy(p, space, &next, &cfg.quad)?;
        if e > e_prev + energy_slack(e_prev) {
            return Err(Error::EnergyIncrease { step: n, before: e_prev, after: e });
        }
        let step = IterationStep {
            n,
            energy: e,
            update_norm: residual_norm(&u, &next, &b_dt, cfg.dt),
            phi: e0 - e,
        };
        steps.push(step);
        let prev = std::mem::replace(&mut u, next);
        e_prev = e;

        // (stop reason, n*, whether the returned iterate is u^{n-1})
        let decision = if n == 1 && zero_decay(step.phi) {
            Some((StopReason::ZeroDecay, 1, false))
        } else if !lookahead {
            if step.update_norm <= cfg.alpha * step.phi {
                Some((StopReason::Criterion, n, false))
            } else if n >= cfg.max_inner {
                Some((StopReason::MaxInner, n, false))
            } else {
                None
            }
        } else if n >= 2 {
            // step n measures R(u^{n-1}); Phi^{n-1} comes from the step before
            let phi_prev = steps[n - 2].phi;
            if step.update_norm <= cfg.alpha * phi_prev {
                Some((StopReason::Criterion, n - 1, true))
            } else if n > cfg.max_inner {
                Some((StopReason::MaxInner, n - 1, true))
            } else {
                None
            }
        } else {
            None
        };
        if let Some((stop, n_star, back)) = decision {
            let (u_star, residual) = if back { (prev, step.update_norm) } else { (u, step.update_norm) };
            return Ok(IterationOutcome {
                u: u_star,
                n_star,
                energy: steps[n_star - 1].energy,
                residual,
                trace: IterationTrace {
                    initial_energy: e0,
                    steps,
                    stop,
                },
            });
        }
    }
}
