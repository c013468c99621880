//! Planar damped multi-particle system with radius-limited spring/drag
//! interactions. State rows are `[x, y, ẋ, ẏ]`, one per particle.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{distance_threshold_adjacency, DynamicGraphStream, Graph, ThresholdMode};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self {
            n: 10,
            alpha: 1.0,
            beta: 0.5,
            r: 1.0,
        }
    }
}

impl ParticleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.alpha > 0.0) || !(self.beta >= 0.0) || !(self.r > 0.0) {
            return Err(Error::invalid(format!("invalid particle parameters {self:?}")));
        }
        Ok(())
    }
}

pub const COLLISION_DISTANCE: f64 = 1e-9;

/// Default rollout.
pub const ROLLOUT_HORIZON: f64 = 5.0;
pub const ROLLOUT_DT: f64 = 1.95e-3;

#[derive(Debug, Clone)]
pub struct ParticleRollout {
    pub times: Vec<f64>,
    pub states: Vec<Matrix>,
    pub graphs: Vec<Arc<Graph>>,
}

impl ParticleRollout {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Every `stride`-th state as a graph stream.
    pub fn to_stream(&self, stride: usize) -> Result<DynamicGraphStream> {
        let stride = stride.max(1);
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        DynamicGraphStream::new(
            idx.iter().map(|&i| self.times[i]).collect(),
            idx.iter().map(|&i| self.states[i].clone()).collect(),
            idx.iter().map(|&i| self.graphs[i].clone()).collect(),
        )
    }
}

/// Interaction force `f_ij` on particle `i` from `j`; antisymmetric in
/// `(i, j)`.
pub fn pair_force(p: &ParticleParams, xi: [f64; 2], xj: [f64; 2], vi: [f64; 2], vj: [f64; 2]) -> Result<[f64; 2]> {
    let dx = [xi[0] - xj[0], xi[1] - xj[1]];
    let d = dx[0].hypot(dx[1]);
    if d < COLLISION_DISTANCE {
        return Err(Error::invalid(format!("pair distance {d:e} below collision threshold")));
    }
    let dv = [vi[0] - vj[0], vi[1] - vj[1]];
    let n = [dx[0] / d, dx[1] / d];
    let mag = p.alpha * (d - p.r) + p.beta * (dv[0] * dx[0] + dv[1] * dx[1]) / d;
    Ok([-mag * n[0], -mag * n[1]])
}

fn pos(z: &Matrix, i: usize) -> [f64; 2] {
    [z[(i, 0)], z[(i, 1)]]
}

fn vel(z: &Matrix, i: usize) -> [f64; 2] {
    [z[(i, 2)], z[(i, 3)]]
}

pub fn positions(z: &Matrix) -> Vec<[f64; 2]> {
    (0..z.rows()).map(|i| pos(z, i)).collect()
}

pub fn interaction_graph(p: &ParticleParams, z: &Matrix) -> Result<Graph> {
    if z.rows() == 1 {
        return Ok(Graph::empty(1));
    }
    distance_threshold_adjacency(&positions(z), ThresholdMode::Radius(p.r))
}

/// Time derivative of the state with the neighbor sets fixed by `g`.
pub fn particle_derivative(p: &ParticleParams, z: &Matrix, g: &Graph) -> Result<Matrix> {
    let n = z.rows();
    if z.cols() != 4 || g.n() != n {
        return Err(Error::Shape {
            op: "particle_derivative",
            lhs: z.shape(),
            rhs: (g.n(), 4),
        });
    }
    let mut dz = Matrix::zeros(n, 4);
    for i in 0..n {
        dz[(i, 0)] = z[(i, 2)];
        dz[(i, 1)] = z[(i, 3)];
        dz[(i, 2)] = -z[(i, 0)];
        dz[(i, 3)] = -z[(i, 1)];
    }
    for (i, j) in g.edges() {
        let (a, b) = (pos(z, i), pos(z, j));
        let distance = (a[0] - b[0]).hypot(a[1] - b[1]);
        if distance < COLLISION_DISTANCE {
            return Err(Error::Collision { i, j, distance });
        }
        let f = pair_force(p, pos(z, i), pos(z, j), vel(z, i), vel(z, j))?;
        dz[(i, 2)] += f[0];
        dz[(i, 3)] += f[1];
        dz[(j, 2)] -= f[0];
        dz[(j, 3)] -= f[1];
    }
    Ok(dz)
}

/// `Σ_i ½(‖ẋ_i‖² + ‖x_i‖²) + Σ_{(i,j)∈g} ½α(‖x_i − x_j‖ − r)²`.
pub fn particle_energy(p: &ParticleParams, z: &Matrix, g: &Graph) -> f64 {
    let mut e = 0.0;
    for i in 0..z.rows() {
        e += 0.5 * z.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    for (i, j) in g.edges() {
        let (a, b) = (pos(z, i), pos(z, j));
        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
        e += 0.5 * p.alpha * (d - p.r) * (d - p.r);
    }
    e
}

/// Positions uniform in `[−2, 2]²`, zero velocity, no pair closer than
/// `1e−3`.
pub fn initial_particles(p: &ParticleParams, rng: &mut RngStream) -> Matrix {
    let mut z = Matrix::zeros(p.n, 4);
    let mut placed: Vec<[f64; 2]> = Vec::with_capacity(p.n);
    while placed.len() < p.n {
        let c = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
        if placed.iter().all(|q| (q[0] - c[0]).hypot(q[1] - c[1]) >= 1e-3) {
            let i = placed.len();
            z[(i, 0)] = c[0];
            z[(i, 1)] = c[1];
            placed.push(c);
        }
    }
    z
}

/// RK4 rollout with `⌊horizon/dt⌋` full steps; the interaction graph is
/// recomputed from the positions at the start of every step.
pub fn simulate_multi_particle(p: &ParticleParams, horizon: f64, dt: f64, z_init: &Matrix) -> Result<ParticleRollout> {
    p.validate()?;
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::invalid(format!("bad rollout horizon {horizon} / step {dt}")));
    }
    if z_init.shape() != (p.n, 4) {
        return Err(Error::Shape {
            op: "simulate_multi_particle",
            lhs: z_init.shape(),
            rhs: (p.n, 4),
        });
    }
    let steps = (horizon / dt + 1e-9).floor() as usize;
    let mut z = z_init.clone();
    let mut out = ParticleRollout {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        graphs: Vec::with_capacity(steps + 1),
    };
    let mut g = Arc::new(interaction_graph(p, &z)?);
    for k in 0..=steps {
        out.times.push(dt * k as f64);
        out.states.push(z.clone());
        out.graphs.push(g.clone());
        if k == steps {
            break;
        }
        let k1 = particle_derivative(p, &z, &g)?;
        let mut u = z.clone();
        u.axpy(0.5 * dt, &k1);
        let k2 = particle_derivative(p, &u, &g)?;
        let mut u = z.clone();
        u.axpy(0.5 * dt, &k2);
        let k3 = particle_derivative(p, &u, &g)?;
        let mut u = z.clone();
        u.axpy(dt, &k3);
        let k4 = particle_derivative(p, &u, &g)?;
        z.axpy(dt / 6.0, &k1);
        z.axpy(dt / 3.0, &k2);
        z.axpy(dt / 3.0, &k3);
        z.axpy(dt / 6.0, &k4);
        if !z.is_finite() {
            return Err(Error::NonFinite {
                context: "particle rollout",
                step: k,
            });
        }
        g = Arc::new(interaction_graph(p, &z)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn force_is_antisymmetric() {
        let p = ParticleParams::default();
        let (xi, xj, vi, vj) = ([0.1, 0.2], [0.3, -0.1], [1.0, 0.5], [-0.2, 0.4]);
        let a = pair_force(&p, xi, xj, vi, vj).unwrap();
        let b = pair_force(&p, xj, xi, vj, vi).unwrap();
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], -b[1]);
    }

    #[test]
    fn collision_is_an_error() {
        let p = ParticleParams::default();
        assert!(pair_force(&p, [0.0, 0.0], [0.0, 0.0], [0.0; 2], [0.0; 2]).is_err());
    }

    #[test]
    fn default_rollout_length() {
        let p = ParticleParams::default();
        let z0 = initial_particles(&p, &mut RngStream::new(3, 0));
        let out = simulate_multi_particle(&p, ROLLOUT_HORIZON, ROLLOUT_DT, &z0).unwrap();
        assert_eq!(out.len(), 2565);
        assert!(out.graphs.iter().all(|g| g.is_symmetric()));
    }
}
