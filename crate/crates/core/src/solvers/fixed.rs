use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::solvers::{ensure_finite, OdeSolver, SolverConfig, SolverKind, Trajectory, VectorField};

/// Number of steps covering `|t1 − t0|` with step `h`; a remainder below
/// `1e-9·h` does not add a step.
pub(crate) fn step_count(t0: f64, t1: f64, h: f64) -> usize {
    let ratio = (t1 - t0).abs() / h;
    (ratio - 1e-9).ceil().max(0.0) as usize
}

/// One explicit step of `kind` from `(t, z)` with signed step `h`.
pub fn fixed_step(kind: SolverKind, field: &dyn VectorField, t: f64, z: &Matrix, h: f64) -> Result<Matrix> {
    match kind {
        SolverKind::Euler => {
            let mut out = z.clone();
            out.axpy(h, &field.eval(t, z)?);
            Ok(out)
        }
        SolverKind::Rk4 => {
            let k1 = field.eval(t, z)?;
            let mut u = z.clone();
            u.axpy(0.5 * h, &k1);
            let k2 = field.eval(t + 0.5 * h, &u)?;
            let mut u = z.clone();
            u.axpy(0.5 * h, &k2);
            let k3 = field.eval(t + 0.5 * h, &u)?;
            let mut u = z.clone();
            u.axpy(h, &k3);
            let k4 = field.eval(t + h, &u)?;
            let mut out = z.clone();
            out.axpy(h / 6.0, &k1);
            out.axpy(h / 3.0, &k2);
            out.axpy(h / 3.0, &k3);
            out.axpy(h / 6.0, &k4);
            Ok(out)
        }
        other => Err(Error::invalid(format!("{other} is not a fixed-step method"))),
    }
}

pub(crate) fn evals_per_step(kind: SolverKind) -> usize {
    match kind {
        SolverKind::Euler => 1,
        SolverKind::Rk4 => 4,
        _ => 0,
    }
}

/// Explicit Euler or classical RK4 with constant step; the final step is
/// shortened to land on `span.1`.
pub fn integrate_fixed(field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
    let kind = cfg.method;
    if !matches!(kind, SolverKind::Euler | SolverKind::Rk4) {
        return Err(Error::invalid(format!("integrate_fixed called with {kind}")));
    }
    if !(cfg.h > 0.0) {
        return Err(Error::invalid(format!("step {} must be positive", cfg.h)));
    }
    let (t0, t1) = span;
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let n = step_count(t0, t1, cfg.h);
    let mut traj = Trajectory::start(t0, z0.clone());
    let mut z = z0.clone();
    for i in 0..n {
        let t = t0 + dir * cfg.h * i as f64;
        let t_next = if i + 1 == n { t1 } else { t0 + dir * cfg.h * (i + 1) as f64 };
        z = fixed_step(kind, field, t, &z, t_next - t)?;
        ensure_finite(&z, kind.name(), i)?;
        traj.push(t_next, z.clone());
    }
    traj.n_field_evals = n * evals_per_step(kind);
    Ok(traj)
}

pub struct Euler;

impl OdeSolver for Euler {
    fn name(&self) -> &'static str {
        "euler"
    }

    fn integrate(&self, field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
        let cfg = SolverConfig {
            method: SolverKind::Euler,
            ..cfg.clone()
        };
        integrate_fixed(field, z0, span, &cfg)
    }
}

pub struct Rk4;

impl OdeSolver for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn integrate(&self, field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
        let cfg = SolverConfig {
            method: SolverKind::Rk4,
            ..cfg.clone()
        };
        integrate_fixed(field, z0, span, &cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::FnField;

    fn decay() -> FnField<impl Fn(f64, &Matrix) -> Matrix> {
        FnField(|_t: f64, z: &Matrix| z.scale(-1.0))
    }

    #[test]
    fn zero_field_is_constant() {
        let f = FnField(|_t: f64, z: &Matrix| Matrix::zeros(z.rows(), z.cols()));
        let z0 = Matrix::from_rows(&[[1.0, -2.0]]);
        let tr = integrate_fixed(&f, &z0, (0.0, 1.0), &SolverConfig::fixed(SolverKind::Rk4, 0.1)).unwrap();
        assert!(tr.states.iter().all(|s| *s == z0));
    }

    #[test]
    fn euler_closed_form_product() {
        let tr = integrate_fixed(&decay(), &Matrix::from_rows(&[[1.0]]), (0.0, 1.0), &SolverConfig::fixed(SolverKind::Euler, 0.1)).unwrap();
        assert!((tr.last_state()[(0, 0)] - 0.9f64.powi(10)).abs() < 1e-12);
        assert!((tr.last_state()[(0, 0)] - 0.3486784).abs() < 1e-7);
        assert_eq!(tr.n_field_evals, 10);
    }

    #[test]
    fn rk4_matches_exponential() {
        let tr = integrate_fixed(&decay(), &Matrix::from_rows(&[[1.0]]), (0.0, 1.0), &SolverConfig::fixed(SolverKind::Rk4, 0.1)).unwrap();
        assert!((tr.last_state()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(tr.n_field_evals, 40);
        assert_eq!(tr.last_time(), 1.0);
    }

    #[test]
    fn short_last_step_and_backward_direction() {
        let cfg = SolverConfig::fixed(SolverKind::Rk4, 0.3);
        let tr = integrate_fixed(&decay(), &Matrix::from_rows(&[[1.0]]), (0.0, 1.0), &cfg).unwrap();
        assert_eq!(tr.n_steps(), 4);
        assert_eq!(tr.last_time(), 1.0);
        let back = integrate_fixed(&decay(), tr.last_state(), (1.0, 0.0), &cfg).unwrap();
        assert!((back.last_state()[(0, 0)] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_reports_step() {
        let f = FnField(|_t: f64, z: &Matrix| z.map(|v| v * v * 1e200));
        let err = integrate_fixed(&f, &Matrix::from_rows(&[[10.0]]), (0.0, 1.0), &SolverConfig::fixed(SolverKind::Euler, 0.1)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
