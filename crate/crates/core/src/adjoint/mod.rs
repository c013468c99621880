//! Gradient engines: the continuous adjoint for terminal and multi-time
//! losses, the sequential adjoint through hybrid arcs with jumps, and a
//! central finite-difference oracle.

mod hybrid;

pub use hybrid::{hybrid_adjoint_grad, hybrid_backprop_grad, TimestampedLoss};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::GraphContext;
use crate::layers::{FieldSpec, GraphField, ParamStore};
use crate::numerics::Matrix;
use crate::solvers::{backprop_fixed, solve, solve_at, DiffField, SolverConfig, SolverKind, Trajectory, VectorField};

/// How the backward pass recovers `Z(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Integrate `Z` backward alongside `λ` from the terminal state.
    #[default]
    Reintegrate,
    /// Restart `Z` from the stored forward state at every forward step.
    Checkpointed,
}

impl fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplayMode::Reintegrate => "reintegrate",
            ReplayMode::Checkpointed => "checkpointed",
        })
    }
}

impl FromStr for ReplayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "reintegrate" => Ok(ReplayMode::Reintegrate),
            "checkpointed" => Ok(ReplayMode::Checkpointed),
            other => Err(Error::UnknownStrategy {
                kind: "replay mode",
                name: other.to_string(),
            }),
        }
    }
}

/// Gradient route through a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMethod {
    /// Continuous adjoint.
    Adjoint(ReplayMode),
    /// Exact reverse pass through the stored Euler/RK4 steps.
    Backprop,
}

impl Default for GradMethod {
    fn default() -> Self {
        GradMethod::Adjoint(ReplayMode::Reintegrate)
    }
}

/// Backward state of one adjoint solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub lambda: Matrix,
    pub theta_grad: Vec<f64>,
    pub z_replay: Matrix,
}

impl AdjointState {
    fn pack(&self) -> Matrix {
        let mut data = Vec::with_capacity(2 * self.lambda.len() + self.theta_grad.len());
        data.extend_from_slice(self.z_replay.as_slice());
        data.extend_from_slice(self.lambda.as_slice());
        data.extend_from_slice(&self.theta_grad);
        let len = data.len();
        Matrix::from_vec(1, len, data).expect("length matches")
    }

    fn unpack(packed: &Matrix, rows: usize, cols: usize) -> Result<Self> {
        let m = rows * cols;
        let d = packed.as_slice();
        Ok(Self {
            z_replay: Matrix::from_vec(rows, cols, d[..m].to_vec())?,
            lambda: Matrix::from_vec(rows, cols, d[m..2 * m].to_vec())?,
            theta_grad: d[2 * m..].to_vec(),
        })
    }
}

/// `d/dt [Z, λ, g] = [f, −(∂f/∂Z)ᵀλ, −(∂f/∂θ)ᵀλ]`, integrated backward.
struct AugmentedField<'a> {
    field: &'a dyn DiffField,
    rows: usize,
    cols: usize,
}

impl VectorField for AugmentedField<'_> {
    fn eval(&self, t: f64, packed: &Matrix) -> Result<Matrix> {
        let m = self.rows * self.cols;
        let d = packed.as_slice();
        let z = Matrix::from_vec(self.rows, self.cols, d[..m].to_vec())?;
        let lam = Matrix::from_vec(self.rows, self.cols, d[m..2 * m].to_vec())?;
        let f = self.field.eval(t, &z)?;
        let mut dtheta = vec![0.0; self.field.n_params()];
        let a = self.field.vjp(t, &z, &lam, &mut dtheta)?;
        let mut out = Vec::with_capacity(packed.len());
        out.extend_from_slice(f.as_slice());
        out.extend(a.as_slice().iter().map(|v| -v));
        out.extend(dtheta.iter().map(|v| -v));
        Matrix::from_vec(1, packed.len(), out)
    }
}

fn backward_segment(field: &dyn DiffField, state: &AdjointState, span: (f64, f64), cfg: &SolverConfig) -> Result<AdjointState> {
    let (rows, cols) = state.lambda.shape();
    let aug = AugmentedField { field, rows, cols };
    let traj = solve(&aug, &state.pack(), span, cfg)?;
    AdjointState::unpack(traj.last_state(), rows, cols)
}

/// Integrates the adjoint from `span.1` back to `span.0`, starting from
/// `λ(span.1) = lambda_end` and the forward end state `z_end`; the returned
/// state holds `λ(span.0)` and the accumulated `∂L/∂θ`.
///
/// With [`ReplayMode::Checkpointed`] the forward trajectory over the span
/// must be supplied; `Z` is reset to its stored value at each forward step.
pub fn adjoint_backward(
    field: &dyn DiffField,
    z_end: &Matrix,
    lambda_end: &Matrix,
    span: (f64, f64),
    cfg: &SolverConfig,
    mode: ReplayMode,
    forward: Option<&Trajectory>,
) -> Result<AdjointState> {
    if z_end.shape() != lambda_end.shape() {
        return Err(Error::Shape {
            op: "adjoint terminal condition",
            lhs: lambda_end.shape(),
            rhs: z_end.shape(),
        });
    }
    let mut state = AdjointState {
        lambda: lambda_end.clone(),
        theta_grad: vec![0.0; field.n_params()],
        z_replay: z_end.clone(),
    };
    match mode {
        ReplayMode::Reintegrate => backward_segment(field, &state, (span.1, span.0), cfg),
        ReplayMode::Checkpointed => {
            let fwd = forward.ok_or_else(|| Error::invalid("checkpointed replay needs the forward trajectory"))?;
            let n = fwd.times.len();
            if n == 0 || (fwd.times[0] - span.0).abs() > 1e-12 || (fwd.times[n - 1] - span.1).abs() > 1e-12 {
                return Err(Error::invalid("forward trajectory does not cover the adjoint span"));
            }
            for i in (0..n - 1).rev() {
                state.z_replay = fwd.states[i + 1].clone();
                state = backward_segment(field, &state, (fwd.times[i + 1], fwd.times[i]), cfg)?;
            }
            state.z_replay = fwd.states[0].clone();
            Ok(state)
        }
    }
}

/// Gradients of a loss depending only on `Z(T)`: returns
/// `(∂L/∂θ, ∂L/∂Z0)` for a field bound to any parameters.
pub fn terminal_adjoint(
    field: &dyn DiffField,
    z0: &Matrix,
    span: (f64, f64),
    dl_dzt: &Matrix,
    cfg: &SolverConfig,
    mode: ReplayMode,
) -> Result<(Vec<f64>, Matrix)> {
    let fwd = solve(field, z0, span, cfg)?;
    let st = adjoint_backward(field, fwd.last_state(), dl_dzt, span, cfg, mode, Some(&fwd))?;
    Ok((st.theta_grad, st.lambda))
}

/// [`terminal_adjoint`] for a graph field built from `spec`.
pub fn terminal_adjoint_grad(
    spec: &FieldSpec,
    params: &ParamStore,
    ctx: &GraphContext,
    z0: &Matrix,
    span: (f64, f64),
    dl_dzt: &Matrix,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Matrix)> {
    let field = GraphField::new(spec, params, ctx);
    terminal_adjoint(&field, z0, span, dl_dzt, cfg, ReplayMode::Reintegrate)
}

/// Gradients of a loss on the states at every time in `t_eval` (first entry
/// is the start). `cotangents[i]` is `∂L/∂Z(t_eval[i])`.
pub fn multi_time_grad(
    field: &dyn DiffField,
    z0: &Matrix,
    t_eval: &[f64],
    cotangents: &[Matrix],
    cfg: &SolverConfig,
    method: GradMethod,
) -> Result<(Vec<f64>, Matrix)> {
    if cotangents.len() != t_eval.len() {
        return Err(Error::invalid(format!(
            "{} cotangents for {} evaluation times",
            cotangents.len(),
            t_eval.len()
        )));
    }
    let (traj, idx) = solve_at(field, z0, t_eval, cfg)?;
    pullback_multi_time(field, &traj, &idx, cotangents, cfg, method)
}

/// Reverse pass for a recorded [`solve_at`] result.
pub fn pullback_multi_time(
    field: &dyn DiffField,
    traj: &Trajectory,
    idx: &[usize],
    cotangents: &[Matrix],
    cfg: &SolverConfig,
    method: GradMethod,
) -> Result<(Vec<f64>, Matrix)> {
    let mut dtheta = vec![0.0; field.n_params()];
    match method {
        GradMethod::Backprop => {
            if !matches!(cfg.method, SolverKind::Euler | SolverKind::Rk4) {
                return Err(Error::invalid(format!("backprop needs a fixed-step solver, got {}", cfg.method)));
            }
            let cots: Vec<(usize, Matrix)> = idx.iter().copied().zip(cotangents.iter().cloned()).collect();
            let dz0 = backprop_fixed(cfg.method, field, traj, &cots, &mut dtheta)?;
            Ok((dtheta, dz0))
        }
        GradMethod::Adjoint(mode) => {
            let last = idx.len() - 1;
            let mut lam = cotangents[last].clone();
            for s in (0..last).rev() {
                let (a, b) = (idx[s], idx[s + 1]);
                let seg = Trajectory {
                    times: traj.times[a..=b].to_vec(),
                    states: traj.states[a..=b].to_vec(),
                    n_field_evals: 0,
                };
                let st = adjoint_backward(
                    field,
                    &traj.states[b],
                    &lam,
                    (traj.times[a], traj.times[b]),
                    cfg,
                    mode,
                    Some(&seg),
                )?;
                for (d, g) in dtheta.iter_mut().zip(&st.theta_grad) {
                    *d += g;
                }
                lam = st.lambda;
                lam.add_assign(&cotangents[s]);
            }
            Ok((dtheta, lam))
        }
    }
}

/// Central differences `(L(θ+εe_i) − L(θ−εe_i)) / 2ε` for every coordinate.
pub fn finite_difference_grad<F>(mut loss_fn: F, theta: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {epsilon} must be positive")));
    }
    let mut work = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        work[i] = theta[i] + epsilon;
        let up = loss_fn(&work)?;
        work[i] = theta[i] - epsilon;
        let down = loss_fn(&work)?;
        work[i] = theta[i];
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖b‖, 1e-300)`, with `b` the reference.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}
