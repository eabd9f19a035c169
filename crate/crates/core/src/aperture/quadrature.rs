//! Gauss–Legendre × trapezoid product rule on the unit disk.

use std::f64::consts::PI;

use super::AperturePoint;
use crate::error::{Error, Result};

pub const MIN_RADIAL: usize = 4;
pub const MIN_ANGULAR: usize = 8;

/// Orders of the polar product rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuadratureSpec {
    pub n_radial: usize,
    pub n_angular: usize,
    /// Resolution multiplier used by convergence checks.
    pub refinement_factor: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            n_radial: 80,
            n_angular: 160,
            refinement_factor: 2,
        }
    }
}

impl QuadratureSpec {
    pub fn new(n_radial: usize, n_angular: usize) -> Result<Self> {
        let spec = Self {
            n_radial,
            n_angular,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_radial < MIN_RADIAL {
            return Err(Error::InvalidQuadrature(format!(
                "n_radial = {} is below {MIN_RADIAL}",
                self.n_radial
            )));
        }
        if self.n_angular < MIN_ANGULAR {
            return Err(Error::InvalidQuadrature(format!(
                "n_angular = {} is below {MIN_ANGULAR}",
                self.n_angular
            )));
        }
        if self.refinement_factor < 2 {
            return Err(Error::InvalidQuadrature(format!(
                "refinement_factor = {} is below 2",
                self.refinement_factor
            )));
        }
        Ok(())
    }

    /// The spec scaled up by `refinement_factor` in both directions.
    pub fn refined(&self) -> Self {
        Self {
            n_radial: self.n_radial * self.refinement_factor,
            n_angular: self.n_angular * self.refinement_factor,
            refinement_factor: self.refinement_factor,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_radial * self.n_angular
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Roots are polished by Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Disk nodes and area weights (summing to π) for the given spec.
pub(crate) fn polar_rule(spec: &QuadratureSpec) -> (Vec<AperturePoint>, Vec<f64>) {
    let (gl_x, gl_w) = gauss_legendre(spec.n_radial);
    let d_theta = 2.0 * PI / spec.n_angular as f64;
    let mut nodes = Vec::with_capacity(spec.n_nodes());
    let mut weights = Vec::with_capacity(spec.n_nodes());
    for (x, w) in gl_x.iter().zip(&gl_w) {
        let r = 0.5 * (x + 1.0);
        let radial_weight = 0.5 * w * r * d_theta;
        for j in 0..spec.n_angular {
            let theta = j as f64 * d_theta;
            let (s, c) = theta.sin_cos();
            nodes.push(AperturePoint::new(r * c, r * s));
            weights.push(radial_weight);
        }
    }
    (nodes, weights)
}
