use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Point;

/// Raw head outputs: `[mu_x, mu_y, log sigma_x, log sigma_y, atanh rho]`.
pub const HEAD_SIZE: usize = 5;

/// A bivariate normal over the next offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GaussianParams {
    pub fn from_raw(raw: &[f64]) -> Self {
        assert_eq!(raw.len(), HEAD_SIZE, "head output must have 5 entries");
        GaussianParams {
            mu_x: raw[0],
            mu_y: raw[1],
            sigma_x: raw[2].exp(),
            sigma_y: raw[3].exp(),
            rho: raw[4].tanh(),
        }
    }

    pub fn mean(&self) -> Point {
        Point::new(self.mu_x, self.mu_y)
    }

    /// Negative log-density at `target`, evaluated in log space.
    pub fn nll(&self, target: Point) -> f64 {
        let zx = (target.x - self.mu_x) / self.sigma_x;
        let zy = (target.y - self.mu_y) / self.sigma_y;
        let one_minus = 1.0 - self.rho * self.rho;
        let quad = (zx * zx + zy * zy - 2.0 * self.rho * zx * zy) / one_minus;
        (2.0 * PI).ln() + self.sigma_x.ln() + self.sigma_y.ln() + 0.5 * one_minus.ln() + 0.5 * quad
    }
}

/// Draws an offset through the Cholesky factor of the 2x2 covariance.
pub fn sample_offset<R: Rng + ?Sized>(params: &GaussianParams, rng: &mut R) -> Point {
    let n1: f64 = StandardNormal.sample(rng);
    let n2: f64 = StandardNormal.sample(rng);
    let rho = params.rho;
    let dx = params.sigma_x * n1;
    let dy = params.sigma_y * (rho * n1 + (1.0 - rho * rho).sqrt() * n2);
    Point::new(params.mu_x + dx, params.mu_y + dy)
}

pub fn advance_position(prev: Point, offset: Point) -> Point {
    prev + offset
}
