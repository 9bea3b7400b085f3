use crate::error::{Error, Result};
use crate::mesh::Point;

/// Symmetric quadrature rule on a triangle, in barycentric coordinates.
/// Weights are normalised to sum to one, so an integral over an element of
/// area `|T|` is `|T| * sum(w_q * g(x_q))`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Physical quadrature points on the triangle `p`.
    pub fn map(&self, p: &[Point; 3]) -> impl Iterator<Item = (Point, &[f64; 3], f64)> + '_ {
        let p = *p;
        self.points.iter().zip(&self.weights).map(move |(b, &w)| {
            let x = [
                b[0] * p[0][0] + b[1] * p[1][0] + b[2] * p[2][0],
                b[0] * p[0][1] + b[1] * p[1][1] + b[2] * p[2][1],
            ];
            (x, b, w)
        })
    }
}

fn push_orbit3(rule: &mut QuadratureRule, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    rule.points.extend([[a, a, b], [a, b, a], [b, a, a]]);
    rule.weights.extend([w; 3]);
}

fn push_orbit6(rule: &mut QuadratureRule, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    rule.points
        .extend([[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]);
    rule.weights.extend([w; 6]);
}

/// Symmetric Dunavant-type rules exact for polynomials of total degree `order`.
pub fn triangle_quadrature(order: usize) -> Result<QuadratureRule> {
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        degree: order,
    };
    match order {
        1 => {
            rule.points.push([1.0 / 3.0; 3]);
            rule.weights.push(1.0);
        }
        2 => {
            rule.points.extend([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]);
            rule.weights.extend([1.0 / 3.0; 3]);
        }
        4 => {
            push_orbit3(&mut rule, 0.445_948_490_915_964_886_32, 0.223_381_589_678_011_465_7);
            push_orbit3(&mut rule, 0.091_576_213_509_770_743_46, 0.109_951_743_655_321_867_6);
        }
        6 => {
            push_orbit3(&mut rule, 0.249_286_745_170_910_421_29, 0.116_786_275_726_379_366_03);
            push_orbit3(&mut rule, 0.063_089_014_491_502_228_34, 0.050_844_906_370_206_816_92);
            push_orbit6(
                &mut rule,
                0.310_352_451_033_784_405_42,
                0.053_145_049_844_816_947_35,
                0.082_851_075_618_373_575_19,
            );
        }
        other => return Err(Error::QuadratureOrder(other)),
    }
    Ok(rule)
}
