//! Reverse-mode differentiation through a recorded discrete solve.
//!
//! Each step is replayed from its stored start state, so the gradients are
//! exact for the discrete map (up to round-off), not for the continuous flow.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::{DiffField, SdeTrajectory, SolverKind, Trajectory};

fn cotangent_map(traj_len: usize, cotangents: &[(usize, Matrix)]) -> Result<HashMap<usize, Matrix>> {
    let mut map: HashMap<usize, Matrix> = HashMap::new();
    for (i, c) in cotangents {
        if *i >= traj_len {
            return Err(Error::invalid(format!("cotangent index {i} beyond trajectory of {traj_len} states")));
        }
        map.entry(*i)
            .and_modify(|m| m.add_assign(c))
            .or_insert_with(|| c.clone());
    }
    Ok(map)
}

/// Pulls `cotangents` (pairs of state index and `∂L/∂Z_i`) back through an
/// Euler or RK4 trajectory. Adds `∂L/∂θ` into `dtheta` and returns `∂L/∂Z_0`.
pub fn backprop_fixed(
    kind: SolverKind,
    field: &dyn DiffField,
    traj: &Trajectory,
    cotangents: &[(usize, Matrix)],
    dtheta: &mut [f64],
) -> Result<Matrix> {
    if dtheta.len() != field.n_params() {
        return Err(Error::invalid(format!(
            "gradient buffer has {} entries, field has {} parameters",
            dtheta.len(),
            field.n_params()
        )));
    }
    let n = traj.states.len();
    let mut cots = cotangent_map(n, cotangents)?;
    let z0 = &traj.states[0];
    let mut lam = cots.remove(&(n - 1)).unwrap_or_else(|| Matrix::zeros(z0.rows(), z0.cols()));
    for i in (0..n - 1).rev() {
        let t = traj.times[i];
        let h = traj.times[i + 1] - t;
        let z = &traj.states[i];
        lam = match kind {
            SolverKind::Euler => {
                let mut dz = lam.clone();
                dz.add_assign(&field.vjp(t, z, &lam.scale(h), dtheta)?);
                dz
            }
            SolverKind::Rk4 => rk4_step_vjp(field, t, z, h, &lam, dtheta)?,
            other => return Err(Error::invalid(format!("no discrete adjoint for {other}"))),
        };
        if let Some(c) = cots.remove(&i) {
            lam.add_assign(&c);
        }
    }
    Ok(lam)
}

fn rk4_step_vjp(field: &dyn DiffField, t: f64, z: &Matrix, h: f64, lam: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
    let k1 = field.eval(t, z)?;
    let mut u2 = z.clone();
    u2.axpy(0.5 * h, &k1);
    let k2 = field.eval(t + 0.5 * h, &u2)?;
    let mut u3 = z.clone();
    u3.axpy(0.5 * h, &k2);
    let k3 = field.eval(t + 0.5 * h, &u3)?;
    let mut u4 = z.clone();
    u4.axpy(h, &k3);

    let mut dz = lam.clone();
    let a4 = field.vjp(t + h, &u4, &lam.scale(h / 6.0), dtheta)?;
    dz.add_assign(&a4);
    let mut g3 = lam.scale(h / 3.0);
    g3.axpy(h, &a4);
    let a3 = field.vjp(t + 0.5 * h, &u3, &g3, dtheta)?;
    dz.add_assign(&a3);
    let mut g2 = lam.scale(h / 3.0);
    g2.axpy(0.5 * h, &a3);
    let a2 = field.vjp(t + 0.5 * h, &u2, &g2, dtheta)?;
    dz.add_assign(&a2);
    let mut g1 = lam.scale(h / 6.0);
    g1.axpy(0.5 * h, &a2);
    dz.add_assign(&field.vjp(t, z, &g1, dtheta)?);
    Ok(dz)
}

/// Reverse pass through a recorded Euler–Heun solve on a fixed Brownian
/// path. Drift and diffusion gradients go to their own buffers.
pub fn backprop_euler_heun(
    drift: &dyn DiffField,
    diffusion: &dyn DiffField,
    sde: &SdeTrajectory,
    cotangents: &[(usize, Matrix)],
    dtheta_drift: &mut [f64],
    dtheta_diffusion: &mut [f64],
) -> Result<Matrix> {
    let traj = &sde.traj;
    let n = traj.states.len();
    if sde.increments.len() + 1 != n {
        return Err(Error::invalid("SDE trajectory and increments disagree in length"));
    }
    let mut cots = cotangent_map(n, cotangents)?;
    let z0 = &traj.states[0];
    let mut lam = cots.remove(&(n - 1)).unwrap_or_else(|| Matrix::zeros(z0.rows(), z0.cols()));
    for i in (0..n - 1).rev() {
        let t = traj.times[i];
        let h = traj.times[i + 1] - t;
        let z = &traj.states[i];
        let dw = &sde.increments[i];

        let f0 = drift.eval(t, z)?;
        let g0 = diffusion.eval(t, z)?;
        let mut zbar = z.clone();
        zbar.axpy(h, &f0);
        zbar.add_assign(&g0.hadamard(dw));

        let half = lam.hadamard(dw).scale(0.5);
        let mu = diffusion.vjp(t + h, &zbar, &half, dtheta_diffusion)?;
        let mut gf0 = lam.scale(h);
        gf0.axpy(h, &mu);
        let mut gg0 = half;
        gg0.add_assign(&mu.hadamard(dw));

        let mut dz = lam;
        dz.add_assign(&mu);
        dz.add_assign(&drift.vjp(t, z, &gf0, dtheta_drift)?);
        dz.add_assign(&diffusion.vjp(t, z, &gg0, dtheta_diffusion)?);
        lam = dz;
        if let Some(c) = cots.remove(&i) {
            lam.add_assign(&c);
        }
    }
    Ok(lam)
}
