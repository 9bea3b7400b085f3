//! Acceptance report: runs criteria 1-10 and prints one PASS/FAIL line per
//! criterion with the measured quantities.
//!
//! The process exits with status 0 unless `ACCEPTANCE_STRICT=1` is set, in
//! which case any failing criterion makes it exit with status 1.
//! `ACCEPTANCE_ONLY=1,4,7` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::time::Instant;

use eafem::adapt::{adaptive_solve, adaptive_solve_with, dorfler_mark, AdaptiveRunConfig, DecayMode, RunRecord};
use eafem::cli::reference_energy;
use eafem::fem::{
    local_mass, local_stiffness, prolongate, triangle_quadrature, DofMap, FeFunction, FeSpace, QuadratureRule,
};
use eafem::iterate::{linearised_step, StopReason};
use eafem::mesh::{bisect, bisect3, initial_mesh, DomainSpec, Mesh, Point};
use eafem::problem::{builtin, energy, energy_derivative_pairing, Problem, EXPERIMENTS};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn verdict(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------- oracles

/// Gauss-Legendre rule on [0, 1] from the eigen-decomposition of the Jacobi
/// matrix.
fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (eig.eigenvalues[i] + 1.0), v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// Energy of `sin(pi x) sin(pi y)` for the manufactured sine-Gordon problem:
/// the Dirichlet part is `pi^2 / 4` in closed form, the potential is
/// integrated by tensor Gauss-Legendre quadrature.
fn manufactured_exact_energy() -> f64 {
    let rule = gauss_legendre_unit(60);
    let mut potential = 0.0;
    for &(x, wx) in &rule {
        for &(y, wy) in &rule {
            let s = (PI * x).sin() * (PI * y).sin();
            let g = s + 2.0 * PI * PI * s + s.sin();
            potential += wx * wy * (s.cos() - 1.0 - 0.5 * s * s + g * s);
        }
    }
    0.25 * PI * PI - potential
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn last5(records: &[RunRecord]) -> &[RunRecord] {
    &records[records.len().saturating_sub(5)..]
}

/// Closed-form P1 element stiffness `(b_i b_j + c_i c_j) / (4|T|)`.
fn stiffness_formula(p: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
    let b = |i: usize| p[(i + 1) % 3][1] - p[(i + 2) % 3][1];
    let c = |i: usize| p[(i + 2) % 3][0] - p[(i + 1) % 3][0];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b(i) * b(j) + c(i) * c(j)) / (4.0 * area);
        }
    }
    k
}

/// Closed-form P1 element mass `|T| (1 + delta_ij) / 12`.
fn mass_formula(p: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

/// Dense stiffness, mass and the pairing `<E'(u), phi_i>` assembled from the
/// closed-form element matrices.
fn dense_system(p: &Problem, space: &FeSpace, u: &FeFunction, quad: &QuadratureRule) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = space.ndof();
    let mesh = &space.mesh;
    let mut a = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);
    let mut load = DVector::zeros(n);
    let vals = space.dofs.expand(&u.coeffs);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = mesh.element_points(t);
        let (ke, me) = (stiffness_formula(&pts), mass_formula(&pts));
        let area = me[0][0] * 6.0;
        let mut le = [0.0; 3];
        for (b, w) in quad.points.iter().zip(&quad.weights) {
            let x = [
                b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
            ];
            let uh = b[0] * vals[tri[0]] + b[1] * vals[tri[1]] + b[2] * vals[tri[2]];
            let fv = (p.f)(x, uh);
            for i in 0..3 {
                le[i] += area * w * fv * b[i];
            }
        }
        for i in 0..3 {
            let Some(di) = space.dofs.dof(tri[i]) else { continue };
            load[di] += le[i];
            for j in 0..3 {
                if let Some(dj) = space.dofs.dof(tri[j]) {
                    a[(di, dj)] += ke[i][j];
                    m[(di, dj)] += me[i][j];
                }
            }
        }
    }
    let uvec = DVector::from_vec(u.coeffs.clone());
    let pairing = &a * uvec - load;
    (a, m, pairing)
}

fn random_refinement(mesh: Mesh, cycles: usize, rng: &mut StdRng) -> Mesh {
    let mut mesh = mesh;
    for _ in 0..cycles {
        let ne = mesh.num_elements();
        let k = rng.gen_range(1..=(ne / 4).max(1));
        let marked: Vec<usize> = (0..k).map(|_| rng.gen_range(0..ne)).collect();
        mesh = bisect(&mesh, &marked).unwrap().0;
    }
    mesh
}

fn random_function(space: &FeSpace, rng: &mut StdRng, scale: f64) -> FeFunction {
    let coeffs = (0..space.ndof()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    FeFunction::from_coeffs(&space.dofs, coeffs).unwrap()
}

// --------------------------------------------------------------- criteria

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut cfg = AdaptiveRunConfig::new("sine_gordon_manufactured");
    cfg.max_dof = 100_000;
    cfg.alpha = 0.5;
    cfg.theta = 0.5;
    cfg.dt = Some(0.5);
    let run = match adaptive_solve(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let recs = &run.records;

    let pts: Vec<(f64, f64)> = last5(recs).iter().map(|r| (r.dof as f64, r.error.unwrap())).collect();
    let slope = loglog_slope(&pts);
    let a = (-0.60..=-0.40).contains(&slope);

    let late: Vec<usize> = recs.iter().filter(|r| r.generation >= 3).map(|r| r.n_star).collect();
    let b = !late.is_empty() && late.iter().all(|&n| n == 1);
    let n_hist = {
        let mut h = std::collections::BTreeMap::new();
        for &n in &late {
            *h.entry(n).or_insert(0) += 1;
        }
        h
    };

    let e_ref = manufactured_exact_energy();
    let q: Vec<f64> = recs
        .windows(2)
        .enumerate()
        .filter(|(n, _)| *n >= 5)
        .filter_map(|(_, w)| {
            let den = w[0].energy - e_ref;
            (den.abs() >= 1e-13 * (1.0 + e_ref.abs())).then(|| (w[1].energy - e_ref) / den)
        })
        .collect();
    let (qmin, qmax) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let c = !q.is_empty() && q.iter().all(|v| (0.45..=0.75).contains(v));
    let d = secs < 120.0;

    outcome(
        a && b && c && d,
        format!(
            "(a) error slope {slope:.3} in [-0.60,-0.40] {}; (b) n* after generation 2: {n_hist:?} {}; \
             (c) Q_N for N>=5 in [{qmin:.3}, {qmax:.3}] vs [0.45,0.75] {} (E_ref {e_ref:.12}); \
             runtime {secs:.1}s {}; final dof {}",
            verdict(a),
            verdict(b),
            verdict(c),
            verdict(d),
            recs.last().unwrap().dof
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut cfg = AdaptiveRunConfig::new("sine_gordon_singular");
    cfg.epsilon = Some(1e-3);
    cfg.dt = Some(0.5e-3);
    cfg.max_dof = 100_000;
    let run = match adaptive_solve(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let e_ref = match reference_energy(&cfg, 300_000, None) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("reference run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let recs = &run.records;
    let pts: Vec<(f64, f64)> = last5(recs).iter().map(|r| (r.dof as f64, r.energy - e_ref)).collect();
    let positive = pts.iter().all(|p| p.1 > 0.0);
    let slope = if positive { loglog_slope(&pts) } else { f64::NAN };
    let a = (-1.2..=-0.7).contains(&slope);

    let mesh = &run.final_mesh;
    let near = (0..mesh.num_elements())
        .filter(|&t| {
            let c = mesh.centroid(t);
            c[0].min(c[1]).min(1.0 - c[0]).min(1.0 - c[1]) < 0.1
        })
        .count();
    let frac = near as f64 / mesh.num_elements() as f64;
    let b = frac >= 0.5;
    let c = secs < 300.0;
    // successive differences show the rate free of reference pollution
    let diffs: Vec<(f64, f64)> = last5(recs)
        .windows(2)
        .map(|w| (w[0].dof as f64, w[0].energy - w[1].energy))
        .collect();
    let diff_slope = loglog_slope(&diffs);
    outcome(
        a && b && c,
        format!(
            "energy-error slope {slope:.3} in [-1.2,-0.7] {} (successive-difference rate {diff_slope:.3}, \
             final dof {}, E_ref {e_ref:.10}); near-boundary fraction {frac:.3} >= 0.5 {}; runtime {secs:.1}s {}",
            verdict(a),
            recs.last().unwrap().dof,
            verdict(b),
            verdict(c)
        ),
    )
}

/// Closed-form `(C_f, C_P)` for the experiments with an explicit
/// derivative bound.
fn stability_constants(id: &str, eps: f64) -> Option<(f64, f64)> {
    // first Dirichlet eigenvalue of the unit L-shape is 9.6397238; the
    // built-in L-shape has side 2, which scales it by 1/4
    match id {
        "sine_gordon_manufactured" => Some((2.0, 1.0 / (2.0 * PI * PI))),
        "sine_gordon_singular" => Some((2.0 / eps, 1.0 / (2.0 * PI * PI))),
        "lshape_exp" => Some(((2.0f64).sqrt() * (-0.5f64).exp() / eps, 4.0 / 9.639_723_844_021_8)),
        _ => None,
    }
}

fn criterion_3() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in EXPERIMENTS {
        let mut cfg = AdaptiveRunConfig::new(id);
        cfg.max_dof = 20_000;
        let p = builtin(id, None).unwrap();
        let dt = p.dt_default;
        let gamma = stability_constants(id, p.epsilon).map(|(c_f, c_p)| {
            let kappa = 0.5 * (c_f - 1.0 / c_p).max(0.0);
            ((1.0 / dt - kappa) / (dt / c_p + 1.0)).min(0.5 / dt)
        });
        let run = match adaptive_solve(&cfg) {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                parts.push(format!("{id}: run failed: {e}"));
                continue;
            }
        };
        let (mut steps, mut mono_bad, mut stab_bad, mut direct) = (0, 0, 0, 0);
        let mut worst_stab = f64::NEG_INFINITY;
        for r in &run.records {
            let e = r.trace.energies();
            for (k, s) in r.trace.steps.iter().enumerate() {
                let (before, after) = (e[k], e[k + 1]);
                let slack = 1e-9 * (1.0 + before.abs());
                if r.trace.stop == StopReason::DirectSolve {
                    direct += 1;
                    continue;
                }
                steps += 1;
                if after > before + slack {
                    mono_bad += 1;
                }
                if let Some(g) = gamma {
                    let delta_sq = (dt * s.update_norm).powi(2);
                    let excess = g * delta_sq - (before - after);
                    worst_stab = worst_stab.max(excess / (1.0 + before.abs()));
                    if excess > slack {
                        stab_bad += 1;
                    }
                }
            }
        }
        let good = mono_bad == 0 && stab_bad == 0;
        ok &= good;
        let mut s = format!("{id}: {steps} steps, {mono_bad} increases");
        if let Some(g) = gamma {
            s += &format!(", gamma {g:.4}, {stab_bad} stab violations");
        }
        if direct > 0 {
            s += &format!(", {direct} direct solves");
        }
        parts.push(s);
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let quad = triangle_quadrature(4).unwrap();
    let cases = [
        ("sine_gordon_manufactured", random_refinement(initial_mesh(&DomainSpec::UnitSquare, 3).unwrap(), 3, &mut rng), 1.5),
        ("sine_gordon_singular", random_refinement(initial_mesh(&DomainSpec::UnitSquare, 2).unwrap(), 5, &mut rng), 1.0),
        ("lshape_exp", random_refinement(initial_mesh(&DomainSpec::LShape, 2).unwrap(), 3, &mut rng), 0.8),
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (k, (id, mesh, scale)) in cases.into_iter().enumerate() {
        let p = builtin(id, None).unwrap();
        let dt = p.dt_default;
        let space = FeSpace::new(mesh).unwrap();
        let b_dt = space.b_lambda(dt);
        let iterates = if k < 2 { 17 } else { 16 };
        for _ in 0..iterates {
            let u = random_function(&space, &mut rng, scale);
            let next = linearised_step(&p, &space, &b_dt, &u, dt, &quad).unwrap();
            let path1 = DVector::from_iterator(space.ndof(), u.coeffs.iter().zip(&next.coeffs).map(|(a, b)| (a - b) / dt));
            let (a, m, pairing) = dense_system(&p, &space, &u, &quad);
            let b = &a * dt + &m;
            let chol = b.clone().cholesky().expect("B_dt is SPD");
            let path2 = chol.solve(&pairing);
            let diff = &path1 - &path2;
            let rel = (diff.dot(&(&b * &diff))).sqrt() / (path2.dot(&(&b * &path2))).sqrt();
            worst = worst.max(rel);
            count += 1;
        }
    }
    outcome(worst <= 1e-10, format!("{count} iterates on 3 meshes, worst relative |.|_dt mismatch {worst:.2e} <= 1e-10"))
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    // (a) non-negativity on every sweep of every experiment
    let mut sweeps = 0;
    let mut negative = 0;
    for id in EXPERIMENTS {
        let mut cfg = AdaptiveRunConfig::new(id);
        cfg.max_dof = 5_000;
        let p = builtin(id, None).unwrap();
        let res = adaptive_solve_with(&p, &cfg, |view| {
            if let Some(d) = view.decays {
                sweeps += 1;
                negative += d.iter().filter(|r| !(r.decay_approx >= 0.0)).count();
            }
            Ok(())
        });
        if let Err(e) = res {
            ok = false;
            parts.push(format!("{id}: run failed: {e}"));
        }
    }
    ok &= negative == 0;
    parts.push(format!("(a) {sweeps} sweeps over 6 experiments, {negative} negative approximate decays"));

    // (b) exact vs approximate decay within the energy-expansion bound
    for (id, sigma) in [
        ("sine_gordon_manufactured", 2.0),
        ("lshape_exp", (2.0f64).sqrt() * (-0.5f64).exp() / 1e-2 + 1.0 / 1e-2),
    ] {
        let mut cfg = AdaptiveRunConfig::new(id);
        cfg.max_dof = 1_500;
        cfg.decay_mode = DecayMode::Exact;
        let p = builtin(id, None).unwrap();
        let dt = p.dt_default;
        let (mut checked, mut bad, mut worst_ratio) = (0usize, 0usize, 0.0f64);
        let res = adaptive_solve_with(&p, &cfg, |view| {
            if let Some(d) = view.decays {
                for r in d {
                    let exact = r.decay_exact.expect("exact mode below the element cap");
                    let bound = 0.5 * sigma * r.update_l2_sq + r.update_norm_sq / (2.0 * dt) + 1e-9;
                    let gap = (exact - r.decay_approx).abs();
                    checked += 1;
                    if gap > bound {
                        bad += 1;
                    }
                    if bound > 1e-9 {
                        worst_ratio = worst_ratio.max(gap / bound);
                    }
                }
            }
            Ok(())
        });
        if let Err(e) = res {
            ok = false;
            parts.push(format!("{id}: run failed: {e}"));
            continue;
        }
        ok &= bad == 0 && checked > 0;
        parts.push(format!("(b) {id}: {checked} elements, {bad} outside the bound, worst gap/bound {worst_ratio:.3}"));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut bad = 0;
    let mut total = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let decays: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
        let sum: f64 = decays.iter().sum();
        for theta in [0.1, 0.5, 0.9] {
            total += 1;
            let m = dorfler_mark(&decays, theta);
            let chosen: f64 = m.iter().map(|&i| decays[i]).sum();
            let smallest = m.iter().map(|&i| decays[i]).fold(f64::INFINITY, f64::min);
            let meets = chosen >= theta * sum;
            let minimal = chosen - smallest < theta * sum;
            if !(meets && minimal) {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{total} cases (1000 vectors x 3 thetas), {bad} violations"))
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst_k: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    let mut tested = 0;
    while tested < 100 {
        let p: [Point; 3] = std::array::from_fn(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let area2 = ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
        if area2 < 0.1 {
            continue;
        }
        tested += 1;
        let (k, kf) = (local_stiffness(&p), stiffness_formula(&p));
        let (m, mf) = (local_mass(&p), mass_formula(&p));
        let kscale = kf.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let mscale = mf.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..3 {
            for j in 0..3 {
                worst_k = worst_k.max((k[i][j] - kf[i][j]).abs() / kscale);
                worst_m = worst_m.max((m[i][j] - mf[i][j]).abs() / mscale);
            }
        }
    }
    // monomials x^a y^b on the reference triangle: a! b! / (a + b + 2)!
    let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
    let mut worst_q: f64 = 0.0;
    let mut orders = Vec::new();
    for order in [1, 2, 4, 6] {
        let rule = triangle_quadrature(order).unwrap();
        orders.push(format!("{order}:{}pts", rule.len()));
        for a in 0..=rule.degree as u32 {
            for b in 0..=(rule.degree as u32 - a) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(bc, w)| 0.5 * w * bc[1].powi(a as i32) * bc[2].powi(b as i32))
                    .sum();
                worst_q = worst_q.max((q - exact).abs());
            }
        }
    }
    let pass = worst_k <= 1e-13 && worst_m <= 1e-13 && worst_q <= 1e-14;
    outcome(
        pass,
        format!(
            "100 random triangles: stiffness rel err {worst_k:.1e}, mass rel err {worst_m:.1e} (<= 1e-13); \
             quadrature rules [{}] worst monomial error {worst_q:.1e} (<= 1e-14)",
            orders.join(", ")
        ),
    )
}

fn point_in(p: &[Point; 3], x: Point) -> Option<[f64; 3]> {
    let d = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / d;
    let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / d;
    let l0 = 1.0 - l1 - l2;
    let tol = -1e-12;
    (l0 >= tol && l1 >= tol && l2 >= tol).then_some([l0, l1, l2])
}

/// `int |u_parent - u_child|^2` over the refined region.
fn prolongation_defect(parent: &Mesh, child: &Mesh, up: &[f64], uc: &[f64], quad: &QuadratureRule) -> f64 {
    use std::collections::HashSet;
    let key = |t: &[usize; 3]| {
        let mut k = *t;
        k.sort_unstable();
        k
    };
    let child_set: HashSet<[usize; 3]> = child.triangles().iter().map(key).collect();
    let parent_set: HashSet<[usize; 3]> = parent.triangles().iter().map(key).collect();
    let refined: Vec<usize> = (0..parent.num_elements())
        .filter(|&t| !child_set.contains(&key(&parent.triangles()[t])))
        .collect();
    let mut total = 0.0;
    for (t, tri) in child.triangles().iter().enumerate() {
        if parent_set.contains(&key(tri)) {
            // unchanged element: vertex values must agree exactly
            for &v in tri {
                total += (up[v] - uc[v]).powi(2) * child.area(t);
            }
            continue;
        }
        let pts = child.element_points(t);
        for (b, w) in quad.points.iter().zip(&quad.weights) {
            let x = [
                b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
            ];
            let vc = b[0] * uc[tri[0]] + b[1] * uc[tri[1]] + b[2] * uc[tri[2]];
            let (pt, bary) = refined
                .iter()
                .find_map(|&s| point_in(&parent.element_points(s), x).map(|l| (s, l)))
                .expect("child point lies in a refined parent");
            let ptri = parent.triangles()[pt];
            let vp = bary[0] * up[ptri[0]] + bary[1] * up[ptri[1]] + bary[2] * up[ptri[2]];
            total += child.area(t) * w * (vp - vc).powi(2);
        }
    }
    total
}

fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let quad = triangle_quadrature(4).unwrap();
    let hexagon: Vec<Point> = (0..6).map(|k| {
        let a = PI / 3.0 * k as f64;
        [a.cos(), a.sin()]
    })
    .collect();
    let domains = [
        DomainSpec::UnitSquare,
        DomainSpec::LShape,
        DomainSpec::Polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 0.5], [0.0, 1.0]]),
        DomainSpec::Polygon(hexagon),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for domain in domains {
        let start = initial_mesh(&domain, 1).unwrap();
        let area = domain.area();
        let mut mesh = start.clone();
        let (mut worst_area, mut worst_defect, mut failures, mut restarts) = (0.0f64, 0.0f64, 0, 0);
        for _ in 0..500 {
            if mesh.num_elements() > 1500 {
                mesh = start.clone();
                restarts += 1;
            }
            let ne = mesh.num_elements();
            let k = rng.gen_range(1..=ne.min(6));
            let marked: Vec<usize> = (0..k).map(|_| rng.gen_range(0..ne)).collect();
            let refined = if rng.gen_bool(0.5) { bisect(&mesh, &marked) } else { bisect3(&mesh, &marked) };
            let (child, rec) = match refined {
                Ok(r) => r,
                Err(_) => {
                    failures += 1;
                    break;
                }
            };
            if child.check_conformity().is_err() || (0..child.num_elements()).any(|t| !(child.area(t) > 0.0)) {
                failures += 1;
            }
            worst_area = worst_area.max((child.total_area() - area).abs() / area);
            let (pd, cd) = (DofMap::free(&mesh), DofMap::free(&child));
            let space_coeffs: Vec<f64> = (0..pd.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u = FeFunction::from_coeffs(&pd, space_coeffs).unwrap();
            let v = prolongate(&u, &pd, &cd, &rec).unwrap();
            let (up, uc) = (pd.expand(&u.coeffs), cd.expand(&v.coeffs));
            worst_defect = worst_defect.max(prolongation_defect(&mesh, &child, &up, &uc, &quad));
            mesh = child;
        }
        let good = failures == 0 && worst_area <= 1e-12 && worst_defect <= 1e-14;
        ok &= good;
        parts.push(format!(
            "{}: {failures} invariant failures, area rel err {worst_area:.1e}, prolongation defect {worst_defect:.1e}, {restarts} restarts",
            domain.tag()
        ));
    }
    outcome(ok, format!("500 cycles per domain; {}", parts.join("; ")))
}

/// `E(u + h phi_i) - E(u - h phi_i)`, summed over the support of `phi_i`
/// only. Elements outside the support contribute identical terms, so this is
/// the exact difference without the cancellation of two O(1) energies.
fn energy_difference(p: &Problem, space: &FeSpace, u: &FeFunction, i: usize, h: f64, quad: &QuadratureRule) -> f64 {
    let mesh = &space.mesh;
    let v = space.dofs.vertex(i);
    let vals = space.dofs.expand(&u.coeffs);
    let element_energy = |t: usize, shift: f64| {
        let tri = mesh.triangles()[t];
        let pts = mesh.element_points(t);
        let k = stiffness_formula(&pts);
        let area = mass_formula(&pts)[0][0] * 6.0;
        let c: [f64; 3] = std::array::from_fn(|a| vals[tri[a]] + if tri[a] == v { shift } else { 0.0 });
        let mut grad = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                grad += 0.5 * c[a] * k[a][b] * c[b];
            }
        }
        let mut potential = 0.0;
        for (bc, w) in quad.points.iter().zip(&quad.weights) {
            let x = [
                bc[0] * pts[0][0] + bc[1] * pts[1][0] + bc[2] * pts[2][0],
                bc[0] * pts[0][1] + bc[1] * pts[1][1] + bc[2] * pts[2][1],
            ];
            let uh = bc[0] * c[0] + bc[1] * c[1] + bc[2] * c[2];
            potential += area * w * p.antiderivative_at(x, uh);
        }
        grad - potential
    };
    (0..mesh.num_elements())
        .filter(|&t| mesh.triangles()[t].contains(&v))
        .map(|t| element_energy(t, h) - element_energy(t, -h))
        .sum()
}

fn criterion_9() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let quad = triangle_quadrature(4).unwrap();
    let hs = [1e-3, 1e-4, 1e-5];
    let mut ok = true;
    let mut parts = Vec::new();
    for (id, domain, n) in [("sine_gordon_manufactured", DomainSpec::UnitSquare, 4), ("lshape_exp", DomainSpec::LShape, 2)] {
        let p = builtin(id, None).unwrap();
        let space = FeSpace::new(initial_mesh(&domain, n).unwrap()).unwrap();
        let u = random_function(&space, &mut rng, 1.0);
        let pairing = energy_derivative_pairing(&p, &space, &u, &quad).unwrap();
        let probes: Vec<usize> = (0..space.ndof()).step_by((space.ndof() / 8).max(1)).collect();
        // the local difference must agree with the library energy
        let i0 = probes[0];
        let mut plus = u.clone();
        let mut minus = u.clone();
        plus.coeffs[i0] += 1e-2;
        minus.coeffs[i0] -= 1e-2;
        let global = energy(&p, &space, &plus, &quad).unwrap() - energy(&p, &space, &minus, &quad).unwrap();
        let local = energy_difference(&p, &space, &u, i0, 1e-2, &quad);
        let consistent = (global - local).abs() <= 1e-12 * (1.0 + global.abs());
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                probes
                    .iter()
                    .map(|&i| (energy_difference(&p, &space, &u, i, h, &quad) / (2.0 * h) - pairing[i]).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let order = loglog_slope(&hs.iter().copied().zip(errs.iter().copied()).collect::<Vec<_>>());
        ok &= order >= 0.9 && consistent;
        // one-sided differences, reported for diagnosis only
        let forward: Vec<f64> = hs
            .iter()
            .map(|&h| {
                probes
                    .iter()
                    .map(|&i| {
                        let mut plus = u.clone();
                        plus.coeffs[i] += h;
                        let d = energy(&p, &space, &plus, &quad).unwrap() - energy(&p, &space, &u, &quad).unwrap();
                        (d / h - pairing[i]).abs()
                    })
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let forward_order = loglog_slope(&hs.iter().copied().zip(forward.iter().copied()).collect::<Vec<_>>());
        parts.push(format!(
            "{id}: centered-difference errors {:.1e}/{:.1e}/{:.1e} at h=1e-3/1e-4/1e-5, observed order {order:.2} {}, \
             local vs library energy difference {} (info: forward-difference order {forward_order:.2})",
            errs[0],
            errs[1],
            errs[2],
            verdict(order >= 0.9),
            verdict(consistent)
        ));
    }
    outcome(ok, format!("{} (need >= 0.9)", parts.join("; ")))
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_eafem");
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "experiment = sine_gordon_singular\nmax_dof = 8000\nvtk_generations = none\n").unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = std::process::Command::new(bin)
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg("--quiet")
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("run {k} exited with {status}"));
        }
        outputs.push(std::fs::read(out.join("records.csv")).unwrap());
    }
    let same = outputs[0] == outputs[1];
    let rows = String::from_utf8_lossy(&outputs[0]).lines().count() - 1;
    outcome(same, format!("two CLI runs of sine_gordon_singular to 8000 dof: {rows} rows, byte-identical: {same}"))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "manufactured sine-Gordon reproduction", criterion_1),
        (2, "singularly perturbed sine-Gordon at eps 1e-3", criterion_2),
        (3, "energy monotonicity and stability bound", criterion_3),
        (4, "residual two-path oracle", criterion_4),
        (5, "local decay correctness", criterion_5),
        (6, "Doerfler minimality", criterion_6),
        (7, "assembly and quadrature oracles", criterion_7),
        (8, "mesh invariants under fuzzing", criterion_8),
        (9, "gradient check", criterion_9),
        (10, "determinism of CLI output", criterion_10),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, title, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        ran += 1;
        if !o.pass {
            failed.push(id);
        }
        println!(
            "criterion {id:>2} {} [{title}] ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{ran} criteria pass; failing: {failed:?}", ran - failed.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
