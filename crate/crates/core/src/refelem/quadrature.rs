//! Gauss–Legendre tensor rules on the square and segment and collapsed
//! (Duffy) rules on the reference simplex.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `[0, 1]`; points carry a zero second coordinate.
    Segment,
    /// `{(0,0), (1,0), (0,1)}`
    Simplex,
    /// `[0, 1]²`
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }
}

/// Gauss points and weights on `[0, 1]`.
pub fn gauss_legendre_unit(npoints: usize) -> Vec<(f64, f64)> {
    let npoints = NonZeroUsize::new(npoints.max(1)).expect("at least one point");
    let mut rule: Vec<(f64, f64)> = GaussLegendre::new(npoints)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| ((x + 1.0) / 2.0, w / 2.0))
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

pub fn quadrature(domain: Domain, degree: usize) -> Result<QuadratureRule> {
    let rule = match domain {
        Domain::Segment => {
            let g = gauss_legendre_unit(degree / 2 + 1);
            QuadratureRule {
                points: g.iter().map(|&(x, _)| [x, 0.0]).collect(),
                weights: g.iter().map(|&(_, w)| w).collect(),
                degree,
            }
        }
        Domain::Square => {
            let g = gauss_legendre_unit(degree / 2 + 1);
            let mut points = Vec::with_capacity(g.len() * g.len());
            let mut weights = Vec::with_capacity(g.len() * g.len());
            for &(y, wy) in &g {
                for &(x, wx) in &g {
                    points.push([x, y]);
                    weights.push(wx * wy);
                }
            }
            QuadratureRule {
                points,
                weights,
                degree,
            }
        }
        Domain::Simplex => {
            // x = a, y = b (1 - a); the Jacobian (1 - a) raises the degree in a by one.
            let ga = gauss_legendre_unit((degree + 1) / 2 + 1);
            let gb = gauss_legendre_unit(degree / 2 + 1);
            let mut points = Vec::with_capacity(ga.len() * gb.len());
            let mut weights = Vec::with_capacity(ga.len() * gb.len());
            for &(a, wa) in &ga {
                for &(b, wb) in &gb {
                    points.push([a, b * (1.0 - a)]);
                    weights.push(wa * wb * (1.0 - a));
                }
            }
            QuadratureRule {
                points,
                weights,
                degree,
            }
        }
    };
    if rule.is_empty() {
        return Err(Error::Unsupported(format!(
            "empty quadrature rule for {domain:?}"
        )));
    }
    Ok(rule)
}
