use crate::adjoint::{adjoint_backward, ReplayMode};
use crate::error::{Error, Result};
use crate::graph::{DynamicGraphStream, GraphContext};
use crate::layers::{GraphField, ParamStore};
use crate::models::{HybridGDEModel, HybridOutput};
use crate::numerics::Matrix;
use crate::solvers::{backprop_fixed, SolverKind, Trajectory};

/// Per-timestamp costs `c_k` and their gradients with respect to the
/// emitted prediction `Ŷ_k`; timestamps without a cost hold `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimestampedLoss {
    pub values: Vec<f64>,
    pub output_grads: Vec<Option<Matrix>>,
}

impl TimestampedLoss {
    pub fn new(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            output_grads: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.output_grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output_grads.is_empty()
    }

    pub fn set(&mut self, k: usize, value: f64, grad: Matrix) {
        self.values[k] = value;
        self.output_grads[k] = Some(grad);
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Shared reverse traversal of the hybrid time domain. `interval` pulls
/// `λ(t_k)` back to `λ(t_{k−1})` over one flow segment.
fn hybrid_pullback<F>(
    model: &HybridGDEModel,
    params: &ParamStore,
    stream: &DynamicGraphStream,
    out: &HybridOutput,
    loss: &TimestampedLoss,
    mut interval: F,
) -> Result<(Vec<f64>, Matrix)>
where
    F: FnMut(&GraphField<'_>, &Trajectory, &Matrix, &mut [f64]) -> Result<Matrix>,
{
    let k_len = stream.len();
    if out.arc.jumps.len() != k_len || out.arc.segments.len() + 1 != k_len || loss.len() != k_len {
        return Err(Error::invalid(format!(
            "stream has {k_len} entries but arc has {} jumps / {} segments and loss has {} terms",
            out.arc.jumps.len(),
            out.arc.segments.len(),
            loss.len()
        )));
    }
    let ctxs: Vec<GraphContext> = HybridGDEModel::contexts(stream);
    let xs = stream.features();
    let mut dtheta = vec![0.0; params.len()];
    let last = &out.arc.jumps[k_len - 1].post;
    let mut lam = Matrix::zeros(last.rows(), last.cols());
    for k in (0..k_len).rev() {
        let jump = &out.arc.jumps[k];
        if let Some(g) = &loss.output_grads[k] {
            lam.add_assign(&model.output_map.vjp(&jump.post, params, g, &mut dtheta)?);
        }
        lam = model.jump_vjp(&ctxs[k], &jump.pre, &xs[k], params, &lam, &mut dtheta)?;
        if k > 0 {
            if let Some(spec) = &model.field {
                let field = GraphField::new(spec, params, &ctxs[k]);
                lam = interval(&field, &out.arc.segments[k - 1], &lam, &mut dtheta)?;
            }
        }
    }
    Ok((dtheta, lam))
}

/// Sequential adjoint through a recorded hybrid arc: between timestamps
/// the continuous adjoint runs backward on that interval's graph; at each
/// timestamp the output cotangent is injected and then pulled through the
/// jump map. Returns `(∂L/∂θ, ∂L/∂Z_init)`.
pub fn hybrid_adjoint_grad(
    model: &HybridGDEModel,
    params: &ParamStore,
    stream: &DynamicGraphStream,
    out: &HybridOutput,
    loss: &TimestampedLoss,
    mode: ReplayMode,
) -> Result<(Vec<f64>, Matrix)> {
    let cfg = model.solver.clone();
    hybrid_pullback(model, params, stream, out, loss, |field, seg, lam, dtheta| {
        let span = (seg.times[0], seg.last_time());
        let st = adjoint_backward(field, seg.last_state(), lam, span, &cfg, mode, Some(seg))?;
        for (d, g) in dtheta.iter_mut().zip(&st.theta_grad) {
            *d += g;
        }
        Ok(st.lambda)
    })
}

/// Same traversal, but each flow segment is differentiated exactly through
/// its stored Euler/RK4 steps.
pub fn hybrid_backprop_grad(
    model: &HybridGDEModel,
    params: &ParamStore,
    stream: &DynamicGraphStream,
    out: &HybridOutput,
    loss: &TimestampedLoss,
) -> Result<(Vec<f64>, Matrix)> {
    let kind = model.solver.method;
    if !matches!(kind, SolverKind::Euler | SolverKind::Rk4) {
        return Err(Error::invalid(format!("backprop needs a fixed-step solver, got {kind}")));
    }
    hybrid_pullback(model, params, stream, out, loss, |field, seg, lam, dtheta| {
        backprop_fixed(kind, field, seg, &[(seg.states.len() - 1, lam.clone())], dtheta)
    })
}
