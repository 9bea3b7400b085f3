//! Energy-driven adaptivity: local patch solves estimate how much energy
//! each element could release, Dörfler marking selects elements, and the
//! outer loop alternates iteration, marking, bisection and prolongation.

mod local;
mod marking;

use std::time::Instant;

pub use local::{
    assemble_patch_forms, compute_local_decays, local_decay_approx, local_decay_exact, local_step, DecayMode,
    LocalSolveResult, PatchForms, SweepContext, EXACT_DECAY_MAX_ELEMENTS,
};
pub use marking::dorfler_mark;

use crate::error::{Error, Result};
use crate::fem::{prolongate, triangle_quadrature, DofMap, FeFunction, FeSpace};
use crate::iterate::{iterate_on_space, IterationConfig, IterationTrace, StoppingRule};
use crate::mesh::{bisect3, initial_mesh, Mesh};
use crate::problem::{builtin, h1_error, Problem};

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveRunConfig {
    pub experiment: String,
    /// Overrides the default diffusion coefficient where applicable.
    pub epsilon: Option<f64>,
    pub alpha: f64,
    pub theta: f64,
    /// Step size; the problem's default when `None`.
    pub dt: Option<f64>,
    pub max_dof: usize,
    /// Initial subdivision; the problem's default when `None`.
    pub initial_n: Option<usize>,
    pub quad_order: usize,
    pub decay_mode: DecayMode,
    pub max_inner: usize,
    /// Safety cap on the number of refinement levels.
    pub max_levels: usize,
    /// Direct solve for linear problems; on for linear problems when `None`.
    pub linear_shortcut: Option<bool>,
    pub stopping: StoppingRule,
}

impl AdaptiveRunConfig {
    pub fn new(experiment: &str) -> Self {
        AdaptiveRunConfig {
            experiment: experiment.to_string(),
            epsilon: None,
            alpha: 0.5,
            theta: 0.5,
            dt: None,
            max_dof: 10_000,
            initial_n: None,
            quad_order: 4,
            decay_mode: DecayMode::Approximate,
            max_inner: 100,
            max_levels: 200,
            linear_shortcut: None,
            stopping: StoppingRule::Update,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        if self.initial_n == Some(0) {
            return bad("initial_n must be at least 1".into());
        }
        if self.max_inner == 0 {
            return bad("max_inner must be at least 1".into());
        }
        if self.max_levels == 0 {
            return bad("max_levels must be at least 1".into());
        }
        triangle_quadrature(self.quad_order)?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        builtin(&self.experiment, self.epsilon)
    }
}

/// Per-level log of an adaptive run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub generation: u64,
    pub dof: usize,
    pub elements: usize,
    pub n_star: usize,
    pub energy: f64,
    /// The linearisation residual used by the stopping test.
    pub residual: f64,
    /// `|grad(u* - u_N)|_{L2}` when the exact solution is known.
    pub error: Option<f64>,
    pub q: Option<f64>,
    pub walltime: f64,
    pub trace: IterationTrace,
}

/// State handed to the observer after each level.
pub struct LevelView<'a> {
    pub record: &'a RunRecord,
    pub space: &'a FeSpace,
    pub u: &'a FeFunction,
    /// Local solve results, absent on the final level.
    pub decays: Option<&'a [LocalSolveResult]>,
    pub marked: &'a [usize],
}

#[derive(Clone, Debug)]
pub struct AdaptiveRun {
    pub records: Vec<RunRecord>,
    /// True when the run stopped because every decay vanished.
    pub converged: bool,
    pub final_mesh: Mesh,
    pub final_solution: FeFunction,
}

/// Runs the adaptive algorithm for a built-in experiment.
pub fn adaptive_solve(cfg: &AdaptiveRunConfig) -> Result<AdaptiveRun> {
    let p = cfg.problem()?;
    adaptive_solve_with(&p, cfg, |_| Ok(()))
}

/// Runs the adaptive algorithm for `p`, calling `observer` after each level.
pub fn adaptive_solve_with(
    p: &Problem,
    cfg: &AdaptiveRunConfig,
    mut observer: impl FnMut(&LevelView<'_>) -> Result<()>,
) -> Result<AdaptiveRun> {
    cfg.validate()?;
    let quad = triangle_quadrature(cfg.quad_order)?;
    let dt = cfg.dt.unwrap_or(p.dt_default);
    let iter_cfg = IterationConfig {
        dt,
        alpha: cfg.alpha,
        max_inner: cfg.max_inner,
        quad: quad.clone(),
        linear_shortcut: cfg.linear_shortcut.unwrap_or(p.linear.is_some()),
        stopping: cfg.stopping,
    };
    let error_quad = triangle_quadrature(6)?;

    let mut mesh = initial_mesh(&p.domain, cfg.initial_n.unwrap_or(p.initial_n))?;
    let mut u = FeFunction::zeros(&DofMap::free(&mesh));
    let mut records = Vec::new();
    let mut converged = false;

    loop {
        let start = Instant::now();
        let space = FeSpace::new(mesh)?;
        let outcome = iterate_on_space(p, &space, &u, &iter_cfg)?;
        let mut record = RunRecord {
            generation: space.generation(),
            dof: space.ndof(),
            elements: space.mesh.num_elements(),
            n_star: outcome.n_star,
            energy: outcome.energy,
            residual: outcome.residual,
            error: h1_error(p, &space, &outcome.u, &error_quad),
            q: None,
            walltime: 0.0,
            trace: outcome.trace.clone(),
        };

        let last = space.ndof() > cfg.max_dof || records.len() + 1 >= cfg.max_levels;
        if last {
            record.walltime = start.elapsed().as_secs_f64();
            observer(&LevelView {
                record: &record,
                space: &space,
                u: &outcome.u,
                decays: None,
                marked: &[],
            })?;
            records.push(record);
            return Ok(AdaptiveRun {
                records,
                converged,
                final_mesh: space.mesh,
                final_solution: outcome.u,
            });
        }

        let ctx = SweepContext::new(p, &space, &outcome.u, dt, &quad, cfg.decay_mode)?;
        let results = compute_local_decays(&ctx, cfg.decay_mode)?;
        let decays: Vec<f64> = results.iter().map(|r| r.decay(cfg.decay_mode)).collect();
        let marked = dorfler_mark(&decays, cfg.theta);
        record.walltime = start.elapsed().as_secs_f64();
        observer(&LevelView {
            record: &record,
            space: &space,
            u: &outcome.u,
            decays: Some(&results),
            marked: &marked,
        })?;
        records.push(record);

        if marked.is_empty() {
            converged = true;
            return Ok(AdaptiveRun {
                records,
                converged,
                final_mesh: space.mesh,
                final_solution: outcome.u,
            });
        }
        let (child, rec) = bisect3(&space.mesh, &marked)?;
        u = prolongate(&outcome.u, &space.dofs, &DofMap::free(&child), &rec)?;
        mesh = child;
    }
}

/// Energy contraction ratios `Q_N = (E_{N+1} - E_ref) / (E_N - E_ref)`.
/// Entries whose denominator vanishes to round-off are `None`.
pub fn q_factor(energies: &[f64], e_ref: f64) -> Vec<Option<f64>> {
    energies
        .windows(2)
        .map(|w| {
            let den = w[0] - e_ref;
            if den.abs() < 1e-13 * (1.0 + e_ref.abs()) {
                None
            } else {
                Some((w[1] - e_ref) / den)
            }
        })
        .collect()
}

/// Fills the `q` field of each record (the last stays `None`).
pub fn fill_q(records: &mut [RunRecord], e_ref: f64) {
    let energies: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let q = q_factor(&energies, e_ref);
    for (r, v) in records.iter_mut().zip(q.into_iter().chain(std::iter::repeat(None))) {
        r.q = v;
    }
}
