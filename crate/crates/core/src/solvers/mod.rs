//! ODE and Stratonovich SDE integrators over matrix-valued states.
//!
//! Deterministic methods implement [`OdeSolver`] and are looked up by name
//! through a [`SolverRegistry`]; the SDE integrator is a free function since
//! it also needs a diffusion field and a Brownian path.

mod backprop;
mod brownian;
mod dopri5;
mod euler_heun;
mod fixed;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

pub use backprop::{backprop_euler_heun, backprop_fixed};
pub use brownian::{brownian_increment, BrownianPath};
pub use dopri5::{integrate_dopri5, Dopri5};
pub use euler_heun::{integrate_euler_heun, integrate_euler_heun_at, SdeTrajectory};
pub use fixed::{fixed_step, integrate_fixed, Euler, Rk4};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Right-hand side `f(t, Z)`.
pub trait VectorField {
    fn eval(&self, t: f64, z: &Matrix) -> Result<Matrix>;
}

/// Vector field with a reverse-mode product.
pub trait DiffField: VectorField {
    fn n_params(&self) -> usize;

    /// Returns `(∂f/∂Z)ᵀλ`; adds `(∂f/∂θ)ᵀλ` into `dtheta`.
    fn vjp(&self, t: f64, z: &Matrix, lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix>;
}

/// Closure-backed field, handy for tests and simple dynamics.
pub struct FnField<F>(pub F);

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &Matrix) -> Matrix,
{
    fn eval(&self, t: f64, z: &Matrix) -> Result<Matrix> {
        Ok((self.0)(t, z))
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn eval(&self, t: f64, z: &Matrix) -> Result<Matrix> {
        (**self).eval(t, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Euler,
    Rk4,
    Dopri5,
    EulerHeun,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Rk4 => "rk4",
            SolverKind::Dopri5 => "dopri5",
            SolverKind::EulerHeun => "euler_heun",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "euler" => Ok(SolverKind::Euler),
            "rk4" => Ok(SolverKind::Rk4),
            "dopri5" => Ok(SolverKind::Dopri5),
            "euler_heun" => Ok(SolverKind::EulerHeun),
            other => Err(Error::UnknownStrategy {
                kind: "solver",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverKind,
    /// Fixed step, or the initial step for adaptive Euler–Heun.
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Step bounds for adaptive Euler–Heun.
    pub h_min: f64,
    pub h_max: f64,
    /// Euler–Heun only: step-doubling control when true, fixed `h` otherwise.
    pub adaptive: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverKind::Dopri5,
            h: 0.01,
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
            h_min: 1e-6,
            h_max: 1.0,
            adaptive: false,
        }
    }
}

impl SolverConfig {
    pub fn fixed(method: SolverKind, h: f64) -> Self {
        Self {
            method,
            h,
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            method: SolverKind::Dopri5,
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn euler_heun_adaptive(h0: f64, rtol: f64, atol: f64) -> Self {
        Self {
            method: SolverKind::EulerHeun,
            h: h0,
            rtol,
            atol,
            adaptive: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.rtol > 0.0) || !(self.atol > 0.0) || self.max_steps == 0 {
            return Err(Error::invalid(format!(
                "solver config needs h, rtol, atol > 0 and max_steps ≥ 1 (got h={}, rtol={}, atol={}, max_steps={})",
                self.h, self.rtol, self.atol, self.max_steps
            )));
        }
        if self.adaptive && !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return Err(Error::invalid("adaptive steps need 0 < h_min ≤ h_max"));
        }
        Ok(())
    }
}

/// States at step endpoints of one solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Matrix>,
    pub n_field_evals: usize,
}

impl Trajectory {
    pub fn start(t0: f64, z0: Matrix) -> Self {
        Self {
            times: vec![t0],
            states: vec![z0],
            n_field_evals: 0,
        }
    }

    pub fn push(&mut self, t: f64, z: Matrix) {
        self.times.push(t);
        self.states.push(z);
    }

    pub fn last_state(&self) -> &Matrix {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    pub fn n_steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    /// Appends `other`, whose first point must coincide with our last.
    pub fn extend(&mut self, other: Trajectory) {
        self.n_field_evals += other.n_field_evals;
        self.times.extend(other.times.into_iter().skip(1));
        self.states.extend(other.states.into_iter().skip(1));
    }
}

/// A deterministic integrator selectable by name.
pub trait OdeSolver: Send + Sync {
    fn name(&self) -> &'static str;

    fn integrate(&self, field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory>;
}

pub struct SolverRegistry {
    solvers: BTreeMap<&'static str, Box<dyn OdeSolver>>,
}

impl SolverRegistry {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, solver: Box<dyn OdeSolver>) {
        self.solvers.insert(solver.name(), solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn OdeSolver> {
        self.solvers
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "ode solver",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.solvers.keys().copied()
    }

    /// Registry with `euler`, `rk4` and `dopri5`.
    pub fn global() -> &'static SolverRegistry {
        static REGISTRY: OnceLock<SolverRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            let mut r = SolverRegistry::empty();
            r.register(Box::new(Euler));
            r.register(Box::new(Rk4));
            r.register(Box::new(Dopri5));
            r
        })
    }
}

/// Solves over `span` with the method named in `cfg`.
pub fn solve(field: &dyn VectorField, z0: &Matrix, span: (f64, f64), cfg: &SolverConfig) -> Result<Trajectory> {
    SolverRegistry::global().get(cfg.method.name())?.integrate(field, z0, span, cfg)
}

/// Solves through every time in `t_eval` (first entry is the start) and
/// returns the merged trajectory plus the index of each requested time in it.
pub fn solve_at(field: &dyn VectorField, z0: &Matrix, t_eval: &[f64], cfg: &SolverConfig) -> Result<(Trajectory, Vec<usize>)> {
    let t0 = *t_eval.first().ok_or_else(|| Error::invalid("empty t_eval"))?;
    let mut traj = Trajectory::start(t0, z0.clone());
    let mut idx = vec![0];
    for w in t_eval.windows(2) {
        let seg = solve(field, traj.last_state(), (w[0], w[1]), cfg)?;
        traj.extend(seg);
        idx.push(traj.times.len() - 1);
    }
    Ok((traj, idx))
}

pub(crate) fn ensure_finite(z: &Matrix, context: &'static str, step: usize) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { context, step })
    }
}
