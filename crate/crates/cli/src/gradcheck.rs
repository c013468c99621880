//! Reverse-mode gradients against central finite differences on small
//! instances of every model family.

use std::sync::Arc;

use gde_core::adjoint::{
    finite_difference_grad, hybrid_adjoint_grad, hybrid_backprop_grad, relative_error, GradMethod, ReplayMode,
    TimestampedLoss,
};
use gde_core::graph::{DynamicGraphStream, Graph, GraphContext};
use gde_core::layers::{AffineSpec, AffineStack, FieldSpec, GcgruParams, GcnLayerSpec, LayerSpec, ParamStore};
use gde_core::models::{elbo_loss, HybridGDEModel, JumpMap, LatentGDEModel, NeuralGDEModel};
use gde_core::numerics::{ActivationKind, Matrix, RngStream};
use gde_core::solvers::{SolverConfig, SolverKind};
use gde_core::Result;

pub const TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub rel_err: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err < TOL
    }
}

fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &edges).expect("path edges are valid")
}

fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0))
}

fn tight() -> SolverConfig {
    SolverConfig::dopri5(1e-10, 1e-12)
}

fn gcn(name: &str, i: usize, o: usize, act: ActivationKind) -> LayerSpec {
    LayerSpec::Gcn(GcnLayerSpec::new(name, i, o, act))
}

fn affine(name: &str, i: usize, o: usize) -> AffineStack {
    AffineStack::new(vec![AffineSpec::new(name, i, o, ActivationKind::Identity)])
}

/// `L = Σ_k ⟨w_k, ŷ(t_k)⟩` through the continuous adjoint.
fn check_gde(model: &NeuralGDEModel, ctx: &GraphContext, nx: usize, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, 1);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng)?;
    let x = random_matrix(&mut rng, ctx.n(), nx);
    let t_eval = [0.4, 1.0];
    let cfg = tight();
    let out = model.forward(&params, ctx, &x, &t_eval, &cfg)?;
    let ws: Vec<Matrix> = out
        .predictions
        .iter()
        .map(|p| random_matrix(&mut rng, p.rows(), p.cols()))
        .collect();
    let (g, _) = model.gradient(&params, ctx, &x, &out, &ws, &cfg, GradMethod::Adjoint(ReplayMode::Reintegrate))?;
    let fd = finite_difference_grad(
        |th| {
            let mut p = params.clone();
            p.set_theta(th)?;
            let o = model.forward(&p, ctx, &x, &t_eval, &cfg)?;
            Ok(o.predictions.iter().zip(&ws).map(|(y, w)| y.dot(w)).sum())
        },
        params.theta(),
        1e-5,
    )?;
    Ok(relative_error(&g, &fd))
}

fn gcde_static() -> Result<f64> {
    let ctx = GraphContext::from_graph(path_graph(3));
    let field = FieldSpec::new(vec![
        gcn("f.0", 2, 3, ActivationKind::Tanh),
        gcn("f.1", 3, 2, ActivationKind::Identity),
    ]);
    check_gde(&NeuralGDEModel::new(affine("in", 2, 2), field, affine("out", 2, 1)), &ctx, 2, 11)
}

fn gcde_second_order() -> Result<f64> {
    let ctx = GraphContext::from_graph(path_graph(4));
    let field = FieldSpec::new(vec![
        gcn("f.0", 4, 3, ActivationKind::Tanh),
        gcn("f.1", 3, 2, ActivationKind::Identity),
    ])
    .second_order();
    check_gde(&NeuralGDEModel::new(affine("in", 3, 2), field, affine("out", 2, 2)), &ctx, 3, 15)
}

/// GCDE-GRU on three observations (two jumps after the first), with a
/// loss on the last two outputs.
struct HybridCase {
    model: HybridGDEModel,
    params: ParamStore,
    stream: DynamicGraphStream,
    z_init: Matrix,
    ws: Vec<Option<Matrix>>,
}

impl HybridCase {
    fn new(solver: SolverConfig, seed: u64) -> Result<Self> {
        let (n, nx, nz) = (3, 2, 2);
        let model = HybridGDEModel {
            field: Some(FieldSpec::new(vec![
                gcn("flow.0", nz, 3, ActivationKind::Tanh),
                gcn("flow.1", 3, nz, ActivationKind::Identity),
            ])),
            jump: JumpMap::Gcgru(GcgruParams::new("jump", nx, nz)),
            output_map: affine("out", nz, 1),
            solver,
        };
        let mut rng = RngStream::new(seed, 2);
        let mut params = ParamStore::new();
        model.register(&mut params, &mut rng)?;
        let g1 = Arc::new(path_graph(n));
        let g2 = Arc::new(Graph::complete(n));
        let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, n, nx)).collect();
        let stream = DynamicGraphStream::new(vec![0.0, 0.7, 1.5], xs, vec![g1.clone(), g2, g1])?;
        let z_init = random_matrix(&mut rng, n, nz);
        let ws = vec![None, Some(random_matrix(&mut rng, n, 1)), Some(random_matrix(&mut rng, n, 1))];
        Ok(Self {
            model,
            params,
            stream,
            z_init,
            ws,
        })
    }

    fn loss_at(&self, params: &ParamStore) -> Result<f64> {
        let out = self.model.forward(params, &self.stream, &self.z_init)?;
        Ok(out
            .predictions
            .iter()
            .zip(&self.ws)
            .filter_map(|(p, w)| w.as_ref().map(|w| p.dot(w)))
            .sum())
    }

    fn timestamped(&self) -> Result<(gde_core::models::HybridOutput, TimestampedLoss)> {
        let out = self.model.forward(&self.params, &self.stream, &self.z_init)?;
        let mut loss = TimestampedLoss::new(self.ws.len());
        for (k, w) in self.ws.iter().enumerate() {
            if let Some(w) = w {
                loss.set(k, out.predictions[k].dot(w), w.clone());
            }
        }
        Ok((out, loss))
    }
}

fn gcde_gru() -> Result<f64> {
    let case = HybridCase::new(tight(), 21)?;
    let (out, loss) = case.timestamped()?;
    let (g, _) = hybrid_adjoint_grad(&case.model, &case.params, &case.stream, &out, &loss, ReplayMode::Reintegrate)?;
    let fd = finite_difference_grad(
        |th| {
            let mut p = case.params.clone();
            p.set_theta(th)?;
            case.loss_at(&p)
        },
        case.params.theta(),
        1e-5,
    )?;
    Ok(relative_error(&g, &fd))
}

fn gsde_unrolled() -> Result<f64> {
    let g = Graph::from_edges(4, &[(0, 2), (0, 3), (1, 2), (1, 3)])?;
    let model = LatentGDEModel::new(g, 2, 3, SolverConfig::fixed(SolverKind::EulerHeun, 0.05))?;
    let mut rng = RngStream::new(8, 0);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng)?;
    let history = random_matrix(&mut rng, 6, 2);
    let eps = model.draw_eps(&mut rng);
    let t_eval = [0.0, 0.3, 0.6];
    let targets: Vec<Matrix> = t_eval.iter().map(|_| random_matrix(&mut rng, 2, 1)).collect();
    let path_rng = RngStream::new(8, 77);
    let run_loss = |p: &ParamStore| -> Result<f64> {
        let mut path = model.new_path(path_rng.clone(), (0.0, 0.6))?;
        let pass = model.run(p, &history, &eps, &t_eval, &mut path)?;
        elbo_loss(&pass.predictions, &targets, &pass.posterior, model.sigma_obs)
    };
    let mut path = model.new_path(path_rng.clone(), (0.0, 0.6))?;
    let pass = model.run(&params, &history, &eps, &t_eval, &mut path)?;
    let (_, grad) = model.loss_and_grad(&params, &pass, &targets)?;
    let fd = finite_difference_grad(
        |th| {
            let mut p = params.clone();
            p.set_theta(th)?;
            run_loss(&p)
        },
        params.theta(),
        1e-6,
    )?;
    Ok(relative_error(&grad, &fd))
}

/// Adjoint gradient of GCDE-GRU against exact backpropagation through
/// fine RK4 steps.
pub fn hybrid_equivalence() -> Result<GradCheck> {
    let fixed = HybridCase::new(SolverConfig::fixed(SolverKind::Rk4, 1e-3), 22)?;
    let (out, loss) = fixed.timestamped()?;
    let (g_bp, _) = hybrid_backprop_grad(&fixed.model, &fixed.params, &fixed.stream, &out, &loss)?;
    let mut model = fixed.model.clone();
    model.solver = tight();
    let out = model.forward(&fixed.params, &fixed.stream, &fixed.z_init)?;
    let (g_adj, _) = hybrid_adjoint_grad(&model, &fixed.params, &fixed.stream, &out, &loss, ReplayMode::Reintegrate)?;
    Ok(GradCheck {
        name: "hybrid adjoint vs backprop",
        rel_err: relative_error(&g_adj, &g_bp),
    })
}

/// Finite-difference checks of the four gradient paths.
pub fn gradient_suite() -> Result<Vec<GradCheck>> {
    type Case = (&'static str, fn() -> Result<f64>);
    let cases: [Case; 4] = [
        ("gcde static", gcde_static),
        ("gcde second order", gcde_second_order),
        ("gcde-gru hybrid", gcde_gru),
        ("gsde unrolled", gsde_unrolled),
    ];
    cases
        .iter()
        .map(|(name, f)| Ok(GradCheck { name, rel_err: f()? }))
        .collect()
}

pub fn run_all() -> Result<Vec<GradCheck>> {
    let mut out = gradient_suite()?;
    out.push(hybrid_equivalence()?);
    Ok(out)
}
