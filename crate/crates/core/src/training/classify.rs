//! Node classification with a GCDE over a fixed graph, used to compare
//! short and long integration spans.

use crate::adjoint::GradMethod;
use crate::datagen::CommunityData;
use crate::error::{Error, Result};
use crate::graph::GraphContext;
use crate::layers::{AffineStack, FieldSpec, GcnLayerSpec, LayerSpec, ParamStore};
use crate::models::NeuralGDEModel;
use crate::numerics::{softmax_rows, ActivationKind, Matrix, RngStream};
use crate::solvers::{SolverConfig, SolverKind};
use crate::training::{lr_schedule, AdamState, EpochRecord, ScheduleSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub n_classes: usize,
    /// Integration span `S`.
    pub span: f64,
    /// RK4 step.
    pub step: f64,
    pub epochs: usize,
    pub schedule: ScheduleSpec,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            n_classes: 2,
            span: 1.0,
            step: 0.1,
            epochs: 100,
            schedule: ScheduleSpec::Constant(0.01),
        }
    }
}

/// `ℓx` affine, GCN tanh field, affine logits read at `t = S`.
pub fn gcde_classifier(n_features: usize, cfg: &ClassifierConfig) -> NeuralGDEModel {
    let h = cfg.hidden;
    let field = FieldSpec::new(vec![LayerSpec::Gcn(GcnLayerSpec::new("cls.f", h, h, ActivationKind::Tanh))]);
    NeuralGDEModel::new(
        AffineStack::mlp("cls.in", &[n_features, h], ActivationKind::Identity, ActivationKind::Identity),
        field,
        AffineStack::mlp("cls.out", &[h, cfg.n_classes], ActivationKind::Identity, ActivationKind::Identity),
    )
    .with_span(0.0, cfg.span)
}

/// Mean cross-entropy over `nodes` and its gradient with respect to the
/// logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() || nodes.is_empty() {
        return Err(Error::invalid("labels must cover every node and the node set must be nonempty"));
    }
    let probs = softmax_rows(logits);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    let m = nodes.len() as f64;
    for &v in nodes {
        let y = labels[v];
        if y >= logits.cols() {
            return Err(Error::invalid(format!("label {y} outside {} classes", logits.cols())));
        }
        loss -= probs[(v, y)].max(1e-300).ln() / m;
        for c in 0..logits.cols() {
            grad[(v, c)] = (probs[(v, c)] - if c == y { 1.0 } else { 0.0 }) / m;
        }
    }
    Ok((loss, grad))
}

pub fn accuracy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    let hits = nodes
        .iter()
        .filter(|&&v| {
            let row = logits.row(v);
            let arg = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            arg == labels[v]
        })
        .count();
    hits as f64 / nodes.len().max(1) as f64
}

/// Full-batch training on the training nodes. Returns the per-epoch
/// records and the final test accuracy.
pub fn train_classifier(
    data: &CommunityData,
    cfg: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<(Vec<EpochRecord>, f64)> {
    let model = gcde_classifier(data.features.cols(), cfg);
    let mut params = ParamStore::new();
    model.register(&mut params, rng)?;
    let ctx = GraphContext::from_graph(data.graph.clone());
    let solver = SolverConfig::fixed(SolverKind::Rk4, cfg.step);
    let mut adam = AdamState::new(params.len());
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(&cfg.schedule, epoch);
        let out = model.forward(&params, &ctx, &data.features, &[cfg.span], &solver)?;
        let (loss, g) = cross_entropy(&out.predictions[0], &data.labels, &data.train)?;
        let (grad, _) = model.gradient(&params, &ctx, &data.features, &out, &[g], &solver, GradMethod::Backprop)?;
        adam.step(params.theta_mut(), &grad, lr)?;
        records.push(EpochRecord::train(epoch + 1, loss, lr));
    }
    let out = model.forward(&params, &ctx, &data.features, &[cfg.span], &solver)?;
    Ok((records, accuracy(&out.predictions[0], &data.labels, &data.test)))
}
