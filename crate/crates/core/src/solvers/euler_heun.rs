use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::fixed::step_count;
use crate::solvers::{ensure_finite, BrownianPath, SolverConfig, Trajectory, VectorField};

/// Output of a Stratonovich solve: step endpoints plus the Brownian
/// increment used on each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdeTrajectory {
    pub traj: Trajectory,
    pub increments: Vec<Matrix>,
    pub n_diffusion_evals: usize,
    pub rejected: usize,
}

impl SdeTrajectory {
    fn extend(&mut self, other: SdeTrajectory) {
        self.traj.extend(other.traj);
        self.increments.extend(other.increments);
        self.n_diffusion_evals += other.n_diffusion_evals;
        self.rejected += other.rejected;
    }
}

/// One Euler–Heun step for `dZ = f dt + g ∘ dW` with diagonal noise.
pub(crate) fn heun_step(
    drift: &dyn VectorField,
    diffusion: &dyn VectorField,
    t: f64,
    z: &Matrix,
    h: f64,
    dw: &Matrix,
) -> Result<Matrix> {
    let f0 = drift.eval(t, z)?;
    let g0 = diffusion.eval(t, z)?;
    let mut zbar = z.clone();
    zbar.axpy(h, &f0);
    zbar.add_assign(&g0.hadamard(dw));
    let g1 = diffusion.eval(t + h, &zbar)?;
    let mut out = z.clone();
    out.axpy(h, &f0);
    out.add_assign(&g0.add(&g1).hadamard(dw).scale(0.5));
    Ok(out)
}

fn scaled_rms(diff: &Matrix, reference: &Matrix, rtol: f64, atol: f64) -> f64 {
    let n = diff.len().max(1) as f64;
    let s: f64 = diff
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(d, r)| (d / (atol + rtol * r.abs())).powi(2))
        .sum();
    (s / n).sqrt()
}

/// Stratonovich Euler–Heun over `span` (forward only). With
/// `cfg.adaptive` the step is controlled by step doubling: a full step is
/// compared with two half steps on the same path, the half steps are kept
/// on acceptance, and `h` is halved or doubled within `[h_min, h_max]`.
pub fn integrate_euler_heun(
    drift: &dyn VectorField,
    diffusion: &dyn VectorField,
    z0: &Matrix,
    span: (f64, f64),
    path: &mut BrownianPath,
    cfg: &SolverConfig,
) -> Result<SdeTrajectory> {
    let (t0, t1) = span;
    if t1 < t0 {
        return Err(Error::invalid("Euler–Heun integrates forward in time only"));
    }
    if !(cfg.h > 0.0) {
        return Err(Error::invalid(format!("step {} must be positive", cfg.h)));
    }
    let mut out = SdeTrajectory {
        traj: Trajectory::start(t0, z0.clone()),
        ..Default::default()
    };
    let mut z = z0.clone();
    if !cfg.adaptive {
        let n = step_count(t0, t1, cfg.h);
        for i in 0..n {
            let t = t0 + cfg.h * i as f64;
            let t_next = if i + 1 == n { t1 } else { t0 + cfg.h * (i + 1) as f64 };
            let dw = path.increment(t, t_next)?;
            z = heun_step(drift, diffusion, t, &z, t_next - t, &dw)?;
            ensure_finite(&z, "euler_heun", i)?;
            out.traj.push(t_next, z.clone());
            out.increments.push(dw);
        }
        out.traj.n_field_evals = n;
        out.n_diffusion_evals = 2 * n;
        return Ok(out);
    }

    cfg.validate()?;
    let mut t = t0;
    let mut h = cfg.h.clamp(cfg.h_min, cfg.h_max);
    let mut attempts = 0usize;
    while t < t1 {
        if attempts >= cfg.max_steps {
            return Err(Error::MaxSteps {
                max_steps: cfg.max_steps,
                target: t1,
                partial: Box::new(out.traj),
            });
        }
        attempts += 1;
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        let hs = if last { remaining } else { h };
        let t_end = if last { t1 } else { t + hs };
        let t_mid = t + 0.5 * hs;
        let dw_a = path.increment(t, t_mid)?;
        let dw_b = path.increment(t_mid, t_end)?;
        let dw_full = path.increment(t, t_end)?;
        let full = heun_step(drift, diffusion, t, &z, hs, &dw_full)?;
        let half1 = heun_step(drift, diffusion, t, &z, 0.5 * hs, &dw_a)?;
        let half2 = heun_step(drift, diffusion, t_mid, &half1, 0.5 * hs, &dw_b)?;
        out.traj.n_field_evals += 3;
        out.n_diffusion_evals += 6;
        let err = scaled_rms(&full.sub(&half2), &half2, cfg.rtol, cfg.atol);
        if !err.is_finite() {
            return Err(Error::NonFinite {
                context: "euler_heun error estimate",
                step: out.traj.n_steps(),
            });
        }
        if err <= 1.0 || hs <= cfg.h_min {
            ensure_finite(&half2, "euler_heun", out.traj.n_steps())?;
            out.traj.push(t_mid, half1);
            out.traj.push(t_end, half2.clone());
            out.increments.push(dw_a);
            out.increments.push(dw_b);
            z = half2;
            t = t_end;
            if err < 0.25 {
                h = (2.0 * hs).min(cfg.h_max);
            } else if !last {
                h = hs;
            }
        } else {
            out.rejected += 1;
            h = (0.5 * hs).max(cfg.h_min);
        }
    }
    Ok(out)
}

/// Solves through each time in `t_eval` (the first is the start); returns
/// the merged trajectory and the index of each requested time in it.
pub fn integrate_euler_heun_at(
    drift: &dyn VectorField,
    diffusion: &dyn VectorField,
    z0: &Matrix,
    t_eval: &[f64],
    path: &mut BrownianPath,
    cfg: &SolverConfig,
) -> Result<(SdeTrajectory, Vec<usize>)> {
    let t0 = *t_eval.first().ok_or_else(|| Error::invalid("empty t_eval"))?;
    let mut out = SdeTrajectory {
        traj: Trajectory::start(t0, z0.clone()),
        ..Default::default()
    };
    let mut idx = vec![0];
    for (i, w) in t_eval.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotone { index: i + 1 });
        }
        let seg = integrate_euler_heun(drift, diffusion, out.traj.last_state(), (w[0], w[1]), path, cfg)?;
        out.extend(seg);
        idx.push(out.traj.times.len() - 1);
    }
    Ok((out, idx))
}
