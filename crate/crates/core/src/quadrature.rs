//! Symmetric triangle quadrature, right-hand-side fields and the data
//! oscillation `mu^2(K) = ||f - f_K||^2_{L2(K)}`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{signed_area, Vertex};

/// Barycentric rule on a triangle. Weights sum to one and are scaled by the
/// element area when applied.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: u32,
}

impl QuadratureRule {
    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    pub fn three_point() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Seven-point rule, exact for polynomials of total degree five.
    pub fn seven_point() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let b1 = (9.0 + 2.0 * s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let b2 = (9.0 - 2.0 * s15) / 21.0;
        let w1 = (155.0 - s15) / 1200.0;
        let w2 = (155.0 + s15) / 1200.0;
        Self {
            points: vec![
                [1.0 / 3.0; 3],
                [a1, a1, b1],
                [a1, b1, a1],
                [b1, a1, a1],
                [a2, a2, b2],
                [a2, b2, a2],
                [b2, a2, a2],
            ],
            weights: vec![0.225, w1, w1, w1, w2, w2, w2],
            degree: 5,
        }
    }

    /// Cheapest built-in rule of at least the requested degree.
    pub fn with_degree(degree: u32) -> Result<Self> {
        match degree {
            0 | 1 => Ok(Self::centroid()),
            2 => Ok(Self::three_point()),
            3..=5 => Ok(Self::seven_point()),
            d => Err(Error::InvalidParameter(format!(
                "no built-in quadrature rule of degree {d} (maximum 5)"
            ))),
        }
    }

    pub fn map(&self, tri: &[Vertex; 3]) -> impl Iterator<Item = (Vertex, f64)> + '_ {
        let tri = *tri;
        self.points.iter().zip(&self.weights).map(move |(l, &w)| {
            let x = l[0] * tri[0].x + l[1] * tri[1].x + l[2] * tri[2].x;
            let y = l[0] * tri[0].y + l[1] * tri[1].y + l[2] * tri[2].y;
            (Vertex::new(x, y), w)
        })
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::seven_point()
    }
}

/// Right-hand side `f`.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    /// `f(x, y) = x`
    LinearX,
    /// `f = |x - center|^(-alpha)`
    Radial { alpha: f64, center: Vertex },
    /// `+1/-1` on a checkerboard of cell width `1/k`.
    Checkerboard { k: u32 },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl ScalarField {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::LinearX => x,
            Self::Radial { alpha, center } => {
                let r = ((x - center.x).powi(2) + (y - center.y).powi(2)).sqrt();
                r.powf(-alpha)
            }
            Self::Checkerboard { k } => {
                let k = *k as f64;
                let parity = ((k * x).floor() + (k * y).floor()).rem_euclid(2.0);
                if parity == 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Custom(f) => f(x, y),
        }
    }

    /// Closed-form integral mean over a triangle, where one is known.
    pub fn exact_mean(&self, tri: &[Vertex; 3]) -> Option<f64> {
        match self {
            Self::Constant(c) => Some(*c),
            Self::LinearX => Some((tri[0].x + tri[1].x + tri[2].x) / 3.0),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) if *c == 1.0 => write!(f, "one"),
            Self::Constant(c) if *c == 0.0 => write!(f, "zero"),
            Self::Constant(c) => write!(f, "const:{c}"),
            Self::LinearX => write!(f, "linear-x"),
            Self::Radial { alpha, center } if center.x == 0.0 && center.y == 0.0 => {
                write!(f, "radial-alpha:{alpha}")
            }
            Self::Radial { alpha, center } => {
                write!(f, "radial-alpha:{alpha}@{},{}", center.x, center.y)
            }
            Self::Checkerboard { k } => write!(f, "checkerboard:{k}"),
            Self::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Accepts `one`, `zero`, `const:<c>`, `linear-x`, `radial-alpha:<a>[@x,y]`
/// and `checkerboard:<k>`.
impl FromStr for ScalarField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownField(s.to_owned());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("one", None) => Ok(Self::Constant(1.0)),
            ("zero", None) => Ok(Self::Constant(0.0)),
            ("const", Some(c)) => c.parse().map(Self::Constant).map_err(|_| bad()),
            ("linear-x", None) => Ok(Self::LinearX),
            ("radial-alpha", Some(a)) => {
                let (alpha, center) = match a.split_once('@') {
                    None => (a, Vertex::new(0.0, 0.0)),
                    Some((alpha, c)) => {
                        let (x, y) = c.split_once(',').ok_or_else(bad)?;
                        let x = x.parse().map_err(|_| bad())?;
                        let y = y.parse().map_err(|_| bad())?;
                        (alpha, Vertex::new(x, y))
                    }
                };
                let alpha: f64 = alpha.parse().map_err(|_| bad())?;
                if !alpha.is_finite() || alpha < 0.0 {
                    return Err(bad());
                }
                Ok(Self::Radial { alpha, center })
            }
            ("checkerboard", Some(k)) => match k.parse() {
                Ok(k) if k > 0 => Ok(Self::Checkerboard { k }),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

pub fn triangle_area(tri: &[Vertex; 3]) -> f64 {
    signed_area(&tri[0], &tri[1], &tri[2]).abs()
}

/// `area(K) * sum_i w_i f(p_i)`
pub fn integrate(f: &ScalarField, tri: &[Vertex; 3], rule: &QuadratureRule) -> f64 {
    let s: f64 = rule.map(tri).map(|(p, w)| w * f.eval(p.x, p.y)).sum();
    triangle_area(tri) * s
}

/// Integral of `f` and of `f^2` over the triangle, sharing evaluations.
pub fn integrate_with_square(f: &ScalarField, tri: &[Vertex; 3], rule: &QuadratureRule) -> (f64, f64) {
    let area = triangle_area(tri);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (p, w) in rule.map(tri) {
        let v = f.eval(p.x, p.y);
        s1 += w * v;
        s2 += w * v * v;
    }
    (area * s1, area * s2)
}

/// `mu^2(K) = ||f - f_K||^2_{L2(K)}` with `f_K` the quadrature mean.
pub fn mu2_element(f: &ScalarField, tri: &[Vertex; 3], rule: &QuadratureRule) -> f64 {
    if let ScalarField::Constant(_) = f {
        return 0.0;
    }
    let area = triangle_area(tri);
    let values: Vec<(f64, f64)> = rule.map(tri).map(|(p, w)| (w, f.eval(p.x, p.y))).collect();
    let mean: f64 = values.iter().map(|(w, v)| w * v).sum();
    area * values.iter().map(|(w, v)| w * (v - mean).powi(2)).sum::<f64>()
}

/// `mu(K)`; see [`mu2_element`].
pub fn mu_element(f: &ScalarField, tri: &[Vertex; 3], rule: &QuadratureRule) -> f64 {
    mu2_element(f, tri, rule).sqrt()
}
