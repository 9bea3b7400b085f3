use std::f64::consts::PI;
use std::sync::Arc;

use libm::erf;

use super::special::exp_integral_ei_neg;
use super::{DerivativeRange, LinearReaction, Problem};
use crate::error::{Error, Result};
use crate::mesh::DomainSpec;

/// Identifiers of the built-in experiments, in presentation order.
pub const EXPERIMENTS: [&str; 6] = [
    "sine_gordon_manufactured",
    "sine_gordon_singular",
    "lshape_exp",
    "arrhenius",
    "sign_discontinuity",
    "oscillation",
];

/// Builds one of the built-in problems. `epsilon` overrides the default
/// diffusion coefficient of the singularly perturbed experiments.
pub fn builtin(id: &str, epsilon: Option<f64>) -> Result<Problem> {
    if let Some(eps) = epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
        }
    }
    let no_epsilon = |id: &str| -> Result<()> {
        match epsilon {
            Some(_) => Err(Error::InvalidParameter(format!("experiment '{id}' takes no epsilon"))),
            None => Ok(()),
        }
    };
    match id {
        "sine_gordon_manufactured" => {
            no_epsilon(id)?;
            Ok(sine_gordon_manufactured())
        }
        "sine_gordon_singular" => Ok(sine_gordon_singular(epsilon.unwrap_or(1e-3))),
        "lshape_exp" => Ok(lshape_exp(epsilon.unwrap_or(1e-2))),
        "arrhenius" => {
            no_epsilon(id)?;
            Ok(arrhenius())
        }
        "sign_discontinuity" => Ok(sign_discontinuity(epsilon.unwrap_or(1e-8))),
        "oscillation" => Ok(oscillation(epsilon.unwrap_or(1e-3))),
        other => Err(Error::UnknownExperiment(other.to_string())),
    }
}

fn bump(x: [f64; 2]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

fn sine_gordon_manufactured() -> Problem {
    // g is chosen so that sin(pi x) sin(pi y) is the solution
    let g = |x: [f64; 2]| {
        let s = bump(x);
        s + 2.0 * PI * PI * s + s.sin()
    };
    Problem {
        name: "sine_gordon_manufactured".into(),
        f: Arc::new(move |x, u| -u.sin() - u + g(x)),
        df_du: Arc::new(|_, u| -u.cos() - 1.0),
        antiderivative: Some(Arc::new(move |x, t| t.cos() - 1.0 - 0.5 * t * t + g(x) * t)),
        epsilon: 1.0,
        domain: DomainSpec::UnitSquare,
        dirichlet_lift: 0.0,
        dt_default: 0.5,
        initial_n: 2,
        derivative_range: DerivativeRange::Exact { lo: -2.0, hi: 0.0 },
        linear: None,
        exact_solution: Some(Arc::new(bump)),
        exact_gradient: Some(Arc::new(|x| {
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            ]
        })),
    }
}

fn sine_gordon_singular(eps: f64) -> Problem {
    let k = 1.0 / eps;
    Problem {
        name: "sine_gordon_singular".into(),
        f: Arc::new(move |_, u| k * (-u.sin() - u + 1.0)),
        df_du: Arc::new(move |_, u| k * (-u.cos() - 1.0)),
        antiderivative: Some(Arc::new(move |_, t| k * (t.cos() - 1.0 - 0.5 * t * t + t))),
        epsilon: eps,
        domain: DomainSpec::UnitSquare,
        dirichlet_lift: 0.0,
        dt_default: 0.5 * eps,
        initial_n: 2,
        derivative_range: DerivativeRange::Exact { lo: -2.0 * k, hi: 0.0 },
        linear: None,
        exact_solution: None,
        exact_gradient: None,
    }
}

fn lshape_exp(eps: f64) -> Problem {
    let k = 1.0 / eps;
    // sup |d/du exp(-u^2)| is attained at u = 1/sqrt(2)
    let d = k * 2f64.sqrt() * (-0.5f64).exp();
    Problem {
        name: "lshape_exp".into(),
        f: Arc::new(move |_, u| k * (-u * u).exp()),
        df_du: Arc::new(move |_, u| -2.0 * k * u * (-u * u).exp()),
        antiderivative: Some(Arc::new(move |_, t| k * 0.5 * PI.sqrt() * erf(t))),
        epsilon: eps,
        domain: DomainSpec::LShape,
        dirichlet_lift: 0.0,
        dt_default: eps,
        initial_n: 2,
        derivative_range: DerivativeRange::Exact { lo: -d, hi: d },
        linear: None,
        exact_solution: None,
        exact_gradient: None,
    }
}

/// `(1 - |s|) exp(-1/|s|)`, continuous at 0.
pub fn arrhenius_rate(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        0.0
    } else {
        (1.0 - a) * (-1.0 / a).exp()
    }
}

/// Derivative of [`arrhenius_rate`]; odd in `s`.
pub fn arrhenius_rate_derivative(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        return 0.0;
    }
    let v = (-1.0 / a).exp() * ((1.0 - a) / (a * a) - 1.0);
    v.copysign(s)
}

/// Antiderivative of [`arrhenius_rate`] vanishing at 0:
/// `G(s) = e^{-1/s}(3s/2 - s^2/2) + 3/2 Ei(-1/s)` for `s > 0`, odd.
pub fn arrhenius_antiderivative(s: f64) -> f64 {
    let a = s.abs();
    if a == 0.0 {
        return 0.0;
    }
    let y = 1.0 / a;
    let g = (-y).exp() * (1.5 * a - 0.5 * a * a) + 1.5 * exp_integral_ei_neg(y);
    g * s.signum()
}

fn arrhenius() -> Problem {
    let c = 2.0;
    let g_c = arrhenius_antiderivative(c);
    // range of the derivative by sampling; it is odd, so symmetric
    let mut hi: f64 = 0.0;
    for i in 0..=200_000 {
        let s = 1e-3 * 1e9f64.powf(i as f64 / 200_000.0);
        hi = hi.max(arrhenius_rate_derivative(s).abs());
    }
    Problem {
        name: "arrhenius".into(),
        f: Arc::new(move |_, w| arrhenius_rate(w + c)),
        df_du: Arc::new(move |_, w| arrhenius_rate_derivative(w + c)),
        antiderivative: Some(Arc::new(move |_, t| arrhenius_antiderivative(t + c) - g_c)),
        epsilon: 1.0,
        domain: DomainSpec::UnitSquare,
        dirichlet_lift: c,
        dt_default: 1.0,
        initial_n: 2,
        derivative_range: DerivativeRange::Sampled { lo: -hi, hi },
        linear: None,
        exact_solution: None,
        exact_gradient: None,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sign_discontinuity(eps: f64) -> Problem {
    let k = 1.0 / eps;
    Problem {
        name: "sign_discontinuity".into(),
        f: Arc::new(move |x, u| k * (-u + sign(x[0] - 0.5))),
        df_du: Arc::new(move |_, _| -k),
        antiderivative: Some(Arc::new(move |x, t| k * (-0.5 * t * t + sign(x[0] - 0.5) * t))),
        epsilon: eps,
        domain: DomainSpec::UnitSquare,
        dirichlet_lift: 0.0,
        dt_default: eps,
        initial_n: 2,
        derivative_range: DerivativeRange::Exact { lo: -k, hi: -k },
        linear: Some(LinearReaction {
            a: Arc::new(move |_| -k),
            b: Arc::new(move |x| k * sign(x[0] - 0.5)),
            definite: true,
        }),
        exact_solution: None,
        exact_gradient: None,
    }
}

fn oscillation(eps: f64) -> Problem {
    let k = 1.0 / eps;
    Problem {
        name: "oscillation".into(),
        f: Arc::new(move |x, u| k * ((x[0] - 0.5) * u + 1.0)),
        df_du: Arc::new(move |x, _| k * (x[0] - 0.5)),
        antiderivative: Some(Arc::new(move |x, t| k * (0.5 * (x[0] - 0.5) * t * t + t))),
        epsilon: eps,
        domain: DomainSpec::UnitSquare,
        dirichlet_lift: 0.0,
        dt_default: eps,
        initial_n: 32,
        derivative_range: DerivativeRange::Exact { lo: -0.5 * k, hi: 0.5 * k },
        linear: Some(LinearReaction {
            a: Arc::new(move |x| k * (x[0] - 0.5)),
            b: Arc::new(move |_| k),
            definite: false,
        }),
        exact_solution: None,
        exact_gradient: None,
    }
}
