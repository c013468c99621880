//! One-step particle predictors and their training loop.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::adjoint::GradMethod;
use crate::datagen::{interaction_graph, ParticleParams, ParticleRollout};
use crate::error::{Error, Result};
use crate::graph::GraphContext;
use crate::layers::{AffineStack, FieldSpec, GcnLayerSpec, LayerSpec, ParamStore};
use crate::models::baselines::{flatten, mlp_field, single_node_context, static_mlp, unflatten};
use crate::models::NeuralGDEModel;
use crate::numerics::{ActivationKind, Matrix, RngStream};
use crate::solvers::{SolverConfig, SolverKind};
use crate::training::metrics::{extrapolation_eval, Extrapolation};
use crate::training::{lr_schedule, AdamState, EpochRecord, ScheduleSpec};

/// Maps the state at `t` to a prediction of the state at `t + dt`.
pub trait StepModel: Send + Sync {
    fn name(&self) -> &str;

    fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()>;

    fn predict(&self, params: &ParamStore, x: &Matrix, ctx: &GraphContext, dt: f64) -> Result<Matrix>;

    /// Prediction and `∂L/∂θ` for `L = ⟨dl_dy, prediction⟩`, where
    /// `dl_dy` is computed from the prediction by `cotangent`.
    fn predict_and_grad(
        &self,
        params: &ParamStore,
        x: &Matrix,
        ctx: &GraphContext,
        dt: f64,
        cotangent: &mut dyn FnMut(&Matrix) -> Matrix,
    ) -> Result<(Matrix, Vec<f64>)>;

    /// Whether the model reads the interaction graph.
    fn uses_graph(&self) -> bool {
        false
    }
}

/// Sizes shared by every particle model.
#[derive(Debug, Clone, PartialEq)]
pub struct StepModelSpec {
    pub n_nodes: usize,
    pub n_features: usize,
    pub hidden: usize,
    pub solver: SolverConfig,
    pub grad: GradMethod,
}

impl Default for StepModelSpec {
    fn default() -> Self {
        Self {
            n_nodes: 10,
            n_features: 4,
            hidden: 32,
            solver: SolverConfig::fixed(SolverKind::Rk4, 1.0),
            grad: GradMethod::Backprop,
        }
    }
}

struct StaticStep {
    mlp: AffineStack,
    rows: usize,
    cols: usize,
}

impl StepModel for StaticStep {
    fn name(&self) -> &str {
        "static"
    }

    fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.mlp.register(params, rng)
    }

    fn predict(&self, params: &ParamStore, x: &Matrix, _ctx: &GraphContext, _dt: f64) -> Result<Matrix> {
        unflatten(&self.mlp.apply(&flatten(x), params)?, self.rows, self.cols)
    }

    fn predict_and_grad(
        &self,
        params: &ParamStore,
        x: &Matrix,
        _ctx: &GraphContext,
        _dt: f64,
        cotangent: &mut dyn FnMut(&Matrix) -> Matrix,
    ) -> Result<(Matrix, Vec<f64>)> {
        let (y, caches) = self.mlp.forward(&flatten(x), params)?;
        let y = unflatten(&y, self.rows, self.cols)?;
        let g = flatten(&cotangent(&y));
        let mut dtheta = vec![0.0; params.len()];
        self.mlp.backward(params, &caches, &g, &mut dtheta)?;
        Ok((y, dtheta))
    }
}

/// Neural GDE over `[0, dt]`; with `flat` the state of all particles is one
/// node (a plain neural ODE).
struct GdeStep {
    name: &'static str,
    model: NeuralGDEModel,
    flat: bool,
    rows: usize,
    cols: usize,
    solver: SolverConfig,
    grad: GradMethod,
}

impl GdeStep {
    fn solver_for(&self, dt: f64) -> SolverConfig {
        let mut cfg = self.solver.clone();
        if matches!(cfg.method, SolverKind::Euler | SolverKind::Rk4) {
            cfg.h = cfg.h.min(dt);
        }
        cfg
    }

    fn model_for(&self, dt: f64) -> NeuralGDEModel {
        self.model.clone().with_span(0.0, dt)
    }

    fn input(&self, x: &Matrix) -> Matrix {
        if self.flat {
            flatten(x)
        } else {
            x.clone()
        }
    }

    fn output(&self, y: &Matrix) -> Result<Matrix> {
        if self.flat {
            unflatten(y, self.rows, self.cols)
        } else {
            Ok(y.clone())
        }
    }
}

impl StepModel for GdeStep {
    fn name(&self) -> &str {
        self.name
    }

    fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.model.register(params, rng)
    }

    fn predict(&self, params: &ParamStore, x: &Matrix, ctx: &GraphContext, dt: f64) -> Result<Matrix> {
        let single;
        let ctx = if self.flat {
            single = single_node_context();
            &single
        } else {
            ctx
        };
        let out = self
            .model_for(dt)
            .forward(params, ctx, &self.input(x), &[dt], &self.solver_for(dt))?;
        self.output(&out.predictions[0])
    }

    fn predict_and_grad(
        &self,
        params: &ParamStore,
        x: &Matrix,
        ctx: &GraphContext,
        dt: f64,
        cotangent: &mut dyn FnMut(&Matrix) -> Matrix,
    ) -> Result<(Matrix, Vec<f64>)> {
        let single;
        let ctx = if self.flat {
            single = single_node_context();
            &single
        } else {
            ctx
        };
        let model = self.model_for(dt);
        let cfg = self.solver_for(dt);
        let xin = self.input(x);
        let out = model.forward(params, ctx, &xin, &[dt], &cfg)?;
        let y = self.output(&out.predictions[0])?;
        let g = self.input(&cotangent(&y));
        let (dtheta, _) = model.gradient(params, ctx, &xin, &out, &[g], &cfg, self.grad)?;
        Ok((y, dtheta))
    }

    fn uses_graph(&self) -> bool {
        !self.flat
    }
}

fn gcn_stack(prefix: &str, dims: &[usize]) -> Vec<LayerSpec> {
    let n = dims.len() - 1;
    (0..n)
        .map(|i| {
            let act = if i + 1 == n { ActivationKind::Identity } else { ActivationKind::Tanh };
            LayerSpec::Gcn(GcnLayerSpec::new(&format!("{prefix}.{i}"), dims[i], dims[i + 1], act))
        })
        .collect()
}

type StepCtor = fn(&StepModelSpec) -> Box<dyn StepModel>;

fn make_static(s: &StepModelSpec) -> Box<dyn StepModel> {
    let dim = s.n_nodes * s.n_features;
    Box::new(StaticStep {
        mlp: static_mlp("static", dim, s.hidden),
        rows: s.n_nodes,
        cols: s.n_features,
    })
}

fn make_node(s: &StepModelSpec) -> Box<dyn StepModel> {
    let dim = s.n_nodes * s.n_features;
    Box::new(GdeStep {
        name: "node",
        model: NeuralGDEModel::new(AffineStack::identity(), mlp_field("node", dim, s.hidden), AffineStack::identity()),
        flat: true,
        rows: s.n_nodes,
        cols: s.n_features,
        solver: s.solver.clone(),
        grad: s.grad,
    })
}

fn make_gcde(s: &StepModelSpec) -> Box<dyn StepModel> {
    let d = s.n_features;
    let field = FieldSpec::new(gcn_stack("gcde", &[d, s.hidden, s.hidden, d]));
    Box::new(GdeStep {
        name: "gcde",
        model: NeuralGDEModel::new(AffineStack::identity(), field, AffineStack::identity()),
        flat: false,
        rows: s.n_nodes,
        cols: d,
        solver: s.solver.clone(),
        grad: s.grad,
    })
}

fn make_gcde2(s: &StepModelSpec) -> Box<dyn StepModel> {
    let d = s.n_features;
    let field = FieldSpec::new(gcn_stack("gcde2", &[2 * d, s.hidden, s.hidden, d])).second_order();
    Box::new(GdeStep {
        name: "gcde2",
        model: NeuralGDEModel::new(AffineStack::identity(), field, AffineStack::identity()),
        flat: false,
        rows: s.n_nodes,
        cols: d,
        solver: s.solver.clone(),
        grad: s.grad,
    })
}

/// Name → constructor table for particle models.
pub struct StepModelRegistry {
    ctors: BTreeMap<&'static str, StepCtor>,
}

impl StepModelRegistry {
    pub fn empty() -> Self {
        Self { ctors: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, ctor: StepCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn build(&self, name: &str, spec: &StepModelSpec) -> Result<Box<dyn StepModel>> {
        let ctor = self.ctors.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "particle model",
            name: name.to_string(),
        })?;
        Ok(ctor(spec))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    /// `static`, `node`, `gcde` and `gcde2`.
    pub fn global() -> &'static StepModelRegistry {
        static REG: OnceLock<StepModelRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let mut r = StepModelRegistry::empty();
            r.register("static", make_static);
            r.register("node", make_node);
            r.register("gcde", make_gcde);
            r.register("gcde2", make_gcde2);
            r
        })
    }
}

/// Subsampled rollout split in halves: one-step pairs from the first half
/// for training, the second half as the nominal test trajectory.
#[derive(Debug, Clone)]
pub struct ParticleDataset {
    pub physics: ParticleParams,
    pub dt: f64,
    pub train_states: Vec<Matrix>,
    pub train_contexts: Vec<GraphContext>,
    pub test_states: Vec<Matrix>,
    pub test_contexts: Vec<GraphContext>,
}

impl ParticleDataset {
    pub fn from_rollout(physics: ParticleParams, rollout: &ParticleRollout, stride: usize) -> Result<Self> {
        let stream = rollout.to_stream(stride)?;
        if stream.len() < 4 {
            return Err(Error::invalid("rollout too short to split"));
        }
        let dt = stream.timestamps()[1] - stream.timestamps()[0];
        let half = stream.len() / 2;
        let ctxs: Vec<GraphContext> = stream.graphs().iter().map(|g| GraphContext::new(g.clone())).collect();
        Ok(Self {
            physics,
            dt,
            train_states: stream.features()[..half].to_vec(),
            train_contexts: ctxs[..half].to_vec(),
            test_states: stream.features()[half..].to_vec(),
            test_contexts: ctxs[half..].to_vec(),
        })
    }

    pub fn n_train_pairs(&self) -> usize {
        self.train_states.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTrainConfig {
    pub epochs: usize,
    pub schedule: ScheduleSpec,
    /// Pairs per optimizer step; 0 uses the full training set.
    pub batch_size: usize,
}

impl Default for StepTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            schedule: ScheduleSpec::Constant(0.01),
            batch_size: 0,
        }
    }
}

/// Mean squared one-step error over the given pairs and its gradient.
pub fn one_step_loss(
    model: &dyn StepModel,
    params: &ParamStore,
    states: &[Matrix],
    contexts: &[GraphContext],
    pairs: &[usize],
    dt: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let count = (pairs.len() * states[0].len()) as f64;
    for &k in pairs {
        let target = &states[k + 1];
        let mut cot = |y: &Matrix| y.sub(target).scale(2.0 / count);
        let (y, g) = model.predict_and_grad(params, &states[k], &contexts[k], dt, &mut cot)?;
        loss += y.sub(target).as_slice().iter().map(|e| e * e).sum::<f64>() / count;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Mean squared one-step error over every pair of a state sequence.
pub fn one_step_mse(
    model: &dyn StepModel,
    params: &ParamStore,
    states: &[Matrix],
    contexts: &[GraphContext],
    dt: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for k in 0..states.len() - 1 {
        let y = model.predict(params, &states[k], &contexts[k], dt)?;
        acc += y.sub(&states[k + 1]).as_slice().iter().map(|e| e * e).sum::<f64>();
        count += y.len();
    }
    Ok(acc / count as f64)
}

/// Adam on the one-step MSE. Minibatches are drawn by shuffling with `rng`.
/// Returns one training record per epoch (epoch 1 is after the first pass).
pub fn train_step_model(
    model: &dyn StepModel,
    params: &mut ParamStore,
    data: &ParticleDataset,
    cfg: &StepTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<EpochRecord>> {
    cfg.schedule.validate()?;
    let n_pairs = data.n_train_pairs();
    let batch = if cfg.batch_size == 0 { n_pairs } else { cfg.batch_size.min(n_pairs) };
    let mut adam = AdamState::new(params.len());
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_pairs).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(&cfg.schedule, epoch);
        if batch < n_pairs {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.below(i + 1));
            }
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = one_step_loss(model, params, &data.train_states, &data.train_contexts, chunk, data.dt)?;
            adam.step(params.theta_mut(), &grad, lr)?;
            total += loss * chunk.len() as f64;
        }
        records.push(EpochRecord::train(epoch + 1, total / n_pairs as f64, lr));
    }
    Ok(records)
}

/// Extrapolation over the test half with resynchronization every `k`
/// steps. Self-fed states get the interaction graph of their predicted
/// positions.
pub fn particle_extrapolation(
    model: &dyn StepModel,
    params: &ParamStore,
    data: &ParticleDataset,
    k: usize,
) -> Result<Extrapolation> {
    extrapolation_eval(&data.test_states, k, |s, j, x| {
        let ctx = if j == 0 || !model.uses_graph() {
            data.test_contexts[s].clone()
        } else {
            GraphContext::from_graph(interaction_graph(&data.physics, x)?)
        };
        model.predict(params, x, &ctx, data.dt)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{finite_difference_grad, relative_error};
    use crate::datagen::{initial_particles, simulate_multi_particle};

    fn dataset() -> ParticleDataset {
        let p = ParticleParams {
            n: 4,
            ..ParticleParams::default()
        };
        let z0 = initial_particles(&p, &mut RngStream::new(1, 0));
        let roll = simulate_multi_particle(&p, 0.5, 0.01, &z0).unwrap();
        ParticleDataset::from_rollout(p, &roll, 5).unwrap()
    }

    #[test]
    fn registry_lists_models() {
        assert_eq!(StepModelRegistry::global().names(), vec!["gcde", "gcde2", "node", "static"]);
        assert!(StepModelRegistry::global().build("lstm", &StepModelSpec::default()).is_err());
    }

    #[test]
    fn one_step_gradients_match_finite_differences() {
        let data = dataset();
        let spec = StepModelSpec {
            n_nodes: 4,
            hidden: 5,
            ..StepModelSpec::default()
        };
        for name in StepModelRegistry::global().names() {
            let model = StepModelRegistry::global().build(name, &spec).unwrap();
            let mut params = ParamStore::new();
            model.register(&mut params, &mut RngStream::new(2, 0)).unwrap();
            let pairs = [0, 2];
            let (_, g) =
                one_step_loss(model.as_ref(), &params, &data.train_states, &data.train_contexts, &pairs, data.dt).unwrap();
            let theta = params.theta().to_vec();
            let fd = finite_difference_grad(
                |th| {
                    let mut p = params.clone();
                    p.set_theta(th)?;
                    Ok(one_step_loss(model.as_ref(), &p, &data.train_states, &data.train_contexts, &pairs, data.dt)?.0)
                },
                &theta,
                1e-6,
            )
            .unwrap();
            assert!(relative_error(&g, &fd) < 1e-5, "{name}: {}", relative_error(&g, &fd));
        }
    }

    #[test]
    fn training_reduces_loss() {
        let data = dataset();
        let spec = StepModelSpec {
            n_nodes: 4,
            hidden: 8,
            ..StepModelSpec::default()
        };
        let model = StepModelRegistry::global().build("gcde", &spec).unwrap();
        let mut params = ParamStore::new();
        model.register(&mut params, &mut RngStream::new(3, 0)).unwrap();
        let cfg = StepTrainConfig {
            epochs: 30,
            ..StepTrainConfig::default()
        };
        let rec = train_step_model(model.as_ref(), &mut params, &data, &cfg, &mut RngStream::new(3, 1)).unwrap();
        assert!(rec.last().unwrap().loss < rec[0].loss);
    }
}
