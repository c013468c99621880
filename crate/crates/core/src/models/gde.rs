use crate::adjoint::{pullback_multi_time, GradMethod};
use crate::error::{Error, Result};
use crate::graph::GraphContext;
use crate::layers::{AffineStack, FieldSpec, GraphField, ParamStore};
use crate::numerics::{Matrix, RngStream};
use crate::solvers::{solve_at, SolverConfig, Trajectory};

/// `Z0 = ℓx(X)`, `Ż = f_G(t, Z)`, `Ŷ_t = ℓy(Z_t)`.
///
/// For a second-order field the state is `[P | V]`: `ℓx` produces `P`,
/// `V` starts at zero, and `ℓy` reads `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralGDEModel {
    pub input_map: AffineStack,
    pub field: FieldSpec,
    pub output_map: AffineStack,
    pub span: (f64, f64),
}

/// Predictions at each requested time plus the solve they came from.
#[derive(Debug, Clone)]
pub struct GdeOutput {
    pub predictions: Vec<Matrix>,
    pub trajectory: Trajectory,
    /// Index into `trajectory` of each prediction.
    pub indices: Vec<usize>,
    /// Index of every solver restart point (start, evaluation times and
    /// parameter breakpoints).
    pub stops: Vec<usize>,
}

impl NeuralGDEModel {
    pub fn new(input_map: AffineStack, field: FieldSpec, output_map: AffineStack) -> Self {
        Self {
            input_map,
            field,
            output_map,
            span: (0.0, 1.0),
        }
    }

    pub fn with_span(mut self, start: f64, end: f64) -> Self {
        self.span = (start, end);
        self
    }

    /// Width of the block `ℓx` writes and `ℓy` reads.
    pub fn position_dim(&self) -> usize {
        let d = self.field.state_dim();
        if self.field.second_order {
            d / 2
        } else {
            d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        let p = self.position_dim();
        if let Some(o) = self.input_map.out_dim() {
            if o != p {
                return Err(Error::invalid(format!("input map emits {o} features, field expects {p}")));
            }
        }
        if let Some(i) = self.output_map.in_dim() {
            if i != p {
                return Err(Error::invalid(format!("output map reads {i} features, field state has {p}")));
            }
        }
        if !(self.span.1 > self.span.0) {
            return Err(Error::invalid("depth span must be increasing"));
        }
        Ok(())
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.validate()?;
        self.input_map.register(params, rng)?;
        self.field.register(params, rng)?;
        self.output_map.register(params, rng)
    }

    pub fn initial_state(&self, x: &Matrix, params: &ParamStore) -> Result<Matrix> {
        let p = self.input_map.apply(x, params)?;
        if p.cols() != self.position_dim() {
            return Err(Error::Shape {
                op: "initial state",
                lhs: p.shape(),
                rhs: (p.rows(), self.position_dim()),
            });
        }
        if self.field.second_order {
            p.hcat(&Matrix::zeros(p.rows(), p.cols()))
        } else {
            Ok(p)
        }
    }

    fn position(&self, z: &Matrix) -> Matrix {
        if self.field.second_order {
            z.cols_range(0, self.position_dim())
        } else {
            z.clone()
        }
    }

    pub fn readout(&self, z: &Matrix, params: &ParamStore) -> Result<Matrix> {
        self.output_map.apply(&self.position(z), params)
    }

    fn solve_times(&self, t_eval: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let (s0, s1) = self.span;
        let tol = 1e-12 * (s1 - s0).abs().max(1.0);
        let mut prev = s0;
        for &t in t_eval {
            if t < s0 - tol || t > s1 + tol {
                return Err(Error::OutsideSpan { t, start: s0, end: s1 });
            }
            if t < prev {
                return Err(Error::invalid("evaluation times must be nondecreasing"));
            }
            prev = t;
        }
        let mut times = vec![s0];
        let mut pending = self.field.breakpoints().into_iter().filter(|&b| b > s0).peekable();
        let mut which = Vec::with_capacity(t_eval.len());
        for &t in t_eval {
            while let Some(&b) = pending.peek() {
                if b >= t {
                    break;
                }
                if b > *times.last().expect("nonempty") {
                    times.push(b);
                }
                pending.next();
            }
            if t > *times.last().expect("nonempty") {
                times.push(t);
            }
            which.push(times.len() - 1);
        }
        Ok((times, which))
    }

    pub fn forward(&self, params: &ParamStore, ctx: &GraphContext, x: &Matrix, t_eval: &[f64], cfg: &SolverConfig) -> Result<GdeOutput> {
        let z0 = self.initial_state(x, params)?;
        let (times, which) = self.solve_times(t_eval)?;
        let field = GraphField::new(&self.field, params, ctx);
        let (traj, idx) = solve_at(&field, &z0, &times, cfg)?;
        let indices: Vec<usize> = which.iter().map(|&w| idx[w]).collect();
        let predictions = indices
            .iter()
            .map(|&i| self.readout(&traj.states[i], params))
            .collect::<Result<Vec<_>>>()?;
        Ok(GdeOutput {
            predictions,
            trajectory: traj,
            indices,
            stops: idx,
        })
    }

    /// `(∂L/∂θ, ∂L/∂X)` given `∂L/∂Ŷ` at each prediction of `out`.
    #[allow(clippy::too_many_arguments)]
    pub fn gradient(
        &self,
        params: &ParamStore,
        ctx: &GraphContext,
        x: &Matrix,
        out: &GdeOutput,
        dl_dy: &[Matrix],
        cfg: &SolverConfig,
        method: GradMethod,
    ) -> Result<(Vec<f64>, Matrix)> {
        if dl_dy.len() != out.predictions.len() {
            return Err(Error::invalid(format!(
                "{} output cotangents for {} predictions",
                dl_dy.len(),
                out.predictions.len()
            )));
        }
        let mut dtheta = vec![0.0; params.len()];
        let traj = &out.trajectory;
        let z_shape = traj.states[0].shape();
        let mut cots: Vec<Matrix> = vec![Matrix::zeros(z_shape.0, z_shape.1); out.stops.len()];
        for (&i, g) in out.indices.iter().zip(dl_dy) {
            let z = &traj.states[i];
            let dp = self.output_map.vjp(&self.position(z), params, g, &mut dtheta)?;
            let dz = if self.field.second_order {
                dp.hcat(&Matrix::zeros(dp.rows(), dp.cols()))?
            } else {
                dp
            };
            let slot = out
                .stops
                .iter()
                .position(|&s| s == i)
                .ok_or_else(|| Error::invalid("prediction index is not a solver stop"))?;
            cots[slot].add_assign(&dz);
        }
        let field = GraphField::new(&self.field, params, ctx);
        let (g_field, dz0) = pullback_multi_time(&field, traj, &out.stops, &cots, cfg, method)?;
        for (d, g) in dtheta.iter_mut().zip(&g_field) {
            *d += g;
        }
        let dp0 = self.position(&dz0);
        let dx = self.input_map.vjp(x, params, &dp0, &mut dtheta)?;
        Ok((dtheta, dx))
    }
}

/// Predictions `Ŷ_t = ℓy(Φ_t(ℓx(X)))` at each `t` in `t_eval`.
pub fn gde_forward(
    m: &NeuralGDEModel,
    params: &ParamStore,
    x: &Matrix,
    ctx: &GraphContext,
    t_eval: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Matrix>> {
    Ok(m.forward(params, ctx, x, t_eval, cfg)?.predictions)
}

/// [`gde_forward`] for a model whose field is second order.
pub fn gde2_forward(
    m: &NeuralGDEModel,
    params: &ParamStore,
    x: &Matrix,
    ctx: &GraphContext,
    t_eval: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Matrix>> {
    if !m.field.second_order {
        return Err(Error::invalid("gde2_forward needs a second-order field"));
    }
    gde_forward(m, params, x, ctx, t_eval, cfg)
}
