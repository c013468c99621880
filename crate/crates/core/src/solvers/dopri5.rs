use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::{ensure_finite, OdeSolver, SolverConfig, Trajectory, VectorField};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];

/// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const ALPHA: f64 = 0.7 / 5.0;
const BETA: f64 = 0.4 / 5.0;

fn rms_scaled(err: &Matrix, y0: &Matrix, y1: &Matrix, rtol: f64, atol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .as_slice()
        .iter()
        .zip(y0.as_slice().iter().zip(y1.as_slice()))
        .map(|(e, (a, b))| {
            let sc = atol + rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step(field: &dyn VectorField, t0: f64, z0: &Matrix, f0: &Matrix, dir: f64, span: f64, cfg: &SolverConfig) -> Result<f64> {
    let scale = z0.map(|v| cfg.atol + cfg.rtol * v.abs());
    let norm = |m: &Matrix| {
        let n = m.len().max(1) as f64;
        (m.zip_map(&scale, |a, s| (a / s).powi(2)).sum() / n).sqrt()
    };
    let d0 = norm(z0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let mut z1 = z0.clone();
    z1.axpy(dir * h0, f0);
    let f1 = field.eval(t0 + dir * h0, &z1)?;
    let d2 = norm(&f1.sub(f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Dormand–Prince 5(4) with PI step-size control. Integrates in either
/// direction; exceeding `max_steps` returns [`Error::MaxSteps`] carrying the
/// partial trajectory.
pub fn integrate_dopri5(field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
    let (t0, t1) = span;
    let mut traj = Trajectory::start(t0, z0.clone());
    let total = (t1 - t0).abs();
    if total == 0.0 {
        return Ok(traj);
    }
    if !(cfg.rtol > 0.0 && cfg.atol > 0.0) {
        return Err(Error::invalid("dopri5 needs rtol > 0 and atol > 0"));
    }
    let dir = (t1 - t0).signum();
    let mut t = t0;
    let mut z = z0.clone();
    let mut k0 = field.eval(t, &z)?;
    let mut evals = 1;
    let mut h = initial_step(field, t, &z, &k0, dir, total, cfg)?;
    evals += 1;
    let mut err_prev: f64 = 1e-4;
    let mut attempts = 0usize;
    let mut rejected_last = false;

    while (t1 - t) * dir > 0.0 {
        if attempts >= cfg.max_steps {
            traj.n_field_evals = evals;
            return Err(Error::MaxSteps {
                max_steps: cfg.max_steps,
                target: t1,
                partial: Box::new(traj),
            });
        }
        attempts += 1;
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        let hs = if last { remaining } else { h };
        let step = dir * hs;

        let mut k: Vec<Matrix> = Vec::with_capacity(7);
        k.push(k0.clone());
        for i in 1..7 {
            let mut u = z.clone();
            for (j, kj) in k.iter().enumerate().take(i) {
                if A[i][j] != 0.0 {
                    u.axpy(step * A[i][j], kj);
                }
            }
            k.push(field.eval(t + C[i] * step, &u)?);
            evals += 1;
        }
        let mut z_new = z.clone();
        for (i, ki) in k.iter().enumerate() {
            if B[i] != 0.0 {
                z_new.axpy(step * B[i], ki);
            }
        }
        let mut err = Matrix::zeros(z.rows(), z.cols());
        for (i, ki) in k.iter().enumerate() {
            if E[i] != 0.0 {
                err.axpy(step * E[i], ki);
            }
        }
        let en = rms_scaled(&err, &z, &z_new, cfg.rtol, cfg.atol);
        if !en.is_finite() {
            ensure_finite(&z_new, "dopri5", traj.n_steps())?;
            return Err(Error::NonFinite {
                context: "dopri5 error estimate",
                step: traj.n_steps(),
            });
        }

        if en <= 1.0 {
            t = if last { t1 } else { t + step };
            z = z_new;
            ensure_finite(&z, "dopri5", traj.n_steps())?;
            k0 = k.pop().expect("seven stages");
            traj.push(t, z.clone());
            let en_c = en.max(1e-10);
            let mut fac = SAFETY * en_c.powf(-ALPHA) * err_prev.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = hs * fac;
            err_prev = en_c;
            rejected_last = false;
        } else {
            let fac = (SAFETY * en.powf(-ALPHA)).max(FAC_MIN);
            h = hs * fac;
            rejected_last = true;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::invalid(format!("dopri5 step size underflow at t={t}")));
        }
    }
    traj.n_field_evals = evals;
    Ok(traj)
}

pub struct Dopri5;

impl OdeSolver for Dopri5 {
    fn name(&self) -> &'static str {
        "dopri5"
    }

    fn integrate(&self, field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
        integrate_dopri5(field, z0, span, cfg)
    }
}
