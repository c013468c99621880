use std::sync::Arc;

use gde_core::adjoint::{
    finite_difference_grad, hybrid_adjoint_grad, hybrid_backprop_grad, relative_error, terminal_adjoint,
    terminal_adjoint_grad, GradMethod, ReplayMode, TimestampedLoss,
};
use gde_core::graph::{DynamicGraphStream, Graph, GraphContext};
use gde_core::layers::{
    AffineSpec, AffineStack, FieldSpec, GatLayerSpec, GcgruParams, GcnLayerSpec, GmdeSpec, GraphField, LayerSpec,
    ParamStore,
};
use gde_core::models::{HybridGDEModel, JumpMap, LatentGDEModel, NeuralGDEModel};
use gde_core::numerics::{ActivationKind, Matrix, RngStream};
use gde_core::solvers::{solve, SolverConfig, SolverKind};

const TOL: f64 = 1e-4;

fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &edges).unwrap()
}

fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0))
}

fn tight() -> SolverConfig {
    SolverConfig::dopri5(1e-10, 1e-12)
}

fn weighted_sum(ys: &[Matrix], ws: &[Matrix]) -> f64 {
    ys.iter().zip(ws).map(|(y, w)| y.dot(w)).sum()
}

fn check_gde(model: NeuralGDEModel, ctx: &GraphContext, seed: u64) {
    let mut rng = RngStream::new(seed, 1);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng).unwrap();
    let nx = model.input_map.in_dim().unwrap_or(model.position_dim());
    let x = random_matrix(&mut rng, ctx.n(), nx);
    let t_eval = [0.4, 1.0];
    let cfg = tight();
    let out = model.forward(&params, ctx, &x, &t_eval, &cfg).unwrap();
    let ws: Vec<Matrix> = out
        .predictions
        .iter()
        .map(|p| random_matrix(&mut rng, p.rows(), p.cols()))
        .collect();
    for method in [GradMethod::Adjoint(ReplayMode::Reintegrate), GradMethod::Adjoint(ReplayMode::Checkpointed)] {
        let (g, _) = model.gradient(&params, ctx, &x, &out, &ws, &cfg, method).unwrap();
        let fd = finite_difference_grad(
            |th| {
                let mut p = params.clone();
                p.set_theta(th)?;
                let o = model.forward(&p, ctx, &x, &t_eval, &cfg)?;
                Ok(weighted_sum(&o.predictions, &ws))
            },
            params.theta(),
            1e-5,
        )
        .unwrap();
        let err = relative_error(&g, &fd);
        assert!(err < TOL, "{method:?}: relative error {err:e}");
    }
}

#[test]
fn gcde_static_matches_finite_differences() {
    let ctx = GraphContext::from_graph(path_graph(3));
    let field = FieldSpec::new(vec![
        LayerSpec::Gcn(GcnLayerSpec::new("f.0", 2, 3, ActivationKind::Tanh)),
        LayerSpec::Gcn(GcnLayerSpec::new("f.1", 3, 2, ActivationKind::Identity)),
    ]);
    let model = NeuralGDEModel::new(
        AffineStack::new(vec![AffineSpec::new("in", 2, 2, ActivationKind::Identity)]),
        field,
        AffineStack::new(vec![AffineSpec::new("out", 2, 1, ActivationKind::Identity)]),
    );
    check_gde(model, &ctx, 11);
}

#[test]
fn gat_and_gmde_fields_match_finite_differences() {
    let ctx = GraphContext::from_graph(Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap());
    let gat = FieldSpec::new(vec![
        LayerSpec::Gat(GatLayerSpec::new("g", 2, 2, ActivationKind::Tanh)),
        LayerSpec::Affine(AffineSpec::new("a", 2, 2, ActivationKind::Identity)),
    ]);
    check_gde(NeuralGDEModel::new(AffineStack::identity(), gat, AffineStack::identity()), &ctx, 12);
    let gmde = FieldSpec::new(vec![LayerSpec::Gmde(GmdeSpec::new(
        "m",
        2,
        3,
        ActivationKind::Tanh,
        ActivationKind::Tanh,
    ))]);
    check_gde(NeuralGDEModel::new(AffineStack::identity(), gmde, AffineStack::identity()), &ctx, 13);
}

#[test]
fn piecewise_constant_field_matches_finite_differences() {
    let ctx = GraphContext::from_graph(path_graph(3));
    let field = FieldSpec::new(vec![LayerSpec::Gcn(GcnLayerSpec::new("f", 2, 2, ActivationKind::Tanh))]).piecewise(0.0, 1.0, 3);
    check_gde(NeuralGDEModel::new(AffineStack::identity(), field, AffineStack::identity()), &ctx, 14);
}

#[test]
fn second_order_gcde_matches_finite_differences() {
    let ctx = GraphContext::from_graph(path_graph(4));
    let field = FieldSpec::new(vec![
        LayerSpec::Gcn(GcnLayerSpec::new("f.0", 4, 3, ActivationKind::Tanh)),
        LayerSpec::Gcn(GcnLayerSpec::new("f.1", 3, 2, ActivationKind::Identity)),
    ])
    .second_order();
    let model = NeuralGDEModel::new(
        AffineStack::new(vec![AffineSpec::new("in", 3, 2, ActivationKind::Identity)]),
        field,
        AffineStack::new(vec![AffineSpec::new("out", 2, 2, ActivationKind::Identity)]),
    );
    check_gde(model, &ctx, 15);
}

#[test]
fn terminal_adjoint_is_linear_in_cotangent() {
    let ctx = GraphContext::from_graph(path_graph(3));
    let spec = FieldSpec::new(vec![LayerSpec::Gcn(GcnLayerSpec::new("f", 2, 2, ActivationKind::Tanh))]);
    let mut rng = RngStream::new(5, 0);
    let mut params = ParamStore::new();
    spec.register(&mut params, &mut rng).unwrap();
    let z0 = random_matrix(&mut rng, 3, 2);
    let c = random_matrix(&mut rng, 3, 2);
    let cfg = SolverConfig::fixed(SolverKind::Rk4, 0.05);
    let (g1, z1) = terminal_adjoint_grad(&spec, &params, &ctx, &z0, (0.0, 1.0), &c, &cfg).unwrap();
    let (g3, z3) = terminal_adjoint_grad(&spec, &params, &ctx, &z0, (0.0, 1.0), &c.scale(3.0), &cfg).unwrap();
    for (a, b) in g1.iter().zip(&g3) {
        assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert!(z1.scale(3.0).sub(&z3).max_abs() < 1e-12);
}

fn hybrid_setup(flow: bool, h: f64, seed: u64) -> (HybridGDEModel, ParamStore, DynamicGraphStream, Matrix) {
    let n = 3;
    let (nx, nz) = (2, 2);
    let field = flow.then(|| {
        FieldSpec::new(vec![
            LayerSpec::Gcn(GcnLayerSpec::new("flow.0", nz, 3, ActivationKind::Tanh)),
            LayerSpec::Gcn(GcnLayerSpec::new("flow.1", 3, nz, ActivationKind::Identity)),
        ])
    });
    let model = HybridGDEModel {
        field,
        jump: JumpMap::Gcgru(GcgruParams::new("jump", nx, nz)),
        output_map: AffineStack::new(vec![AffineSpec::new("out", nz, 1, ActivationKind::Identity)]),
        solver: if h > 0.0 { SolverConfig::fixed(SolverKind::Rk4, h) } else { tight() },
    };
    let mut rng = RngStream::new(seed, 2);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng).unwrap();
    let g1 = Arc::new(path_graph(n));
    let g2 = Arc::new(Graph::complete(n));
    let ts = vec![0.0, 0.7, 1.5];
    let xs: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, n, nx)).collect();
    let stream = DynamicGraphStream::new(ts, xs, vec![g1.clone(), g2, g1]).unwrap();
    let z_init = random_matrix(&mut rng, n, nz);
    (model, params, stream, z_init)
}

fn hybrid_loss(model: &HybridGDEModel, params: &ParamStore, stream: &DynamicGraphStream, z: &Matrix, ws: &[Option<Matrix>]) -> gde_core::Result<f64> {
    let out = model.forward(params, stream, z)?;
    Ok(out
        .predictions
        .iter()
        .zip(ws)
        .filter_map(|(p, w)| w.as_ref().map(|w| p.dot(w)))
        .sum())
}

#[test]
fn hybrid_adjoint_matches_finite_differences() {
    let (model, params, stream, z_init) = hybrid_setup(true, 0.0, 21);
    let mut rng = RngStream::new(99, 0);
    let ws = vec![None, Some(random_matrix(&mut rng, 3, 1)), Some(random_matrix(&mut rng, 3, 1))];
    let out = model.forward(&params, &stream, &z_init).unwrap();
    let mut loss = TimestampedLoss::new(3);
    for (k, w) in ws.iter().enumerate() {
        if let Some(w) = w {
            loss.set(k, out.predictions[k].dot(w), w.clone());
        }
    }
    let (g, dz) = hybrid_adjoint_grad(&model, &params, &stream, &out, &loss, ReplayMode::Reintegrate).unwrap();
    let fd = finite_difference_grad(
        |th| {
            let mut p = params.clone();
            p.set_theta(th)?;
            hybrid_loss(&model, &p, &stream, &z_init, &ws)
        },
        params.theta(),
        1e-5,
    )
    .unwrap();
    assert!(relative_error(&g, &fd) < TOL, "θ error {:e}", relative_error(&g, &fd));
    let fdz = finite_difference_grad(
        |zs| hybrid_loss(&model, &params, &stream, &Matrix::from_vec(3, 2, zs.to_vec())?, &ws),
        z_init.as_slice(),
        1e-5,
    )
    .unwrap();
    assert!(relative_error(dz.as_slice(), &fdz) < TOL);
}

#[test]
fn hybrid_adjoint_matches_unrolled_backprop() {
    let (mut model, params, stream, z_init) = hybrid_setup(true, 1e-3, 22);
    let mut rng = RngStream::new(7, 0);
    let ws = [None, Some(random_matrix(&mut rng, 3, 1)), Some(random_matrix(&mut rng, 3, 1))];
    let fixed = model.clone();
    let out_fixed = fixed.forward(&params, &stream, &z_init).unwrap();
    let mut loss = TimestampedLoss::new(3);
    for (k, w) in ws.iter().enumerate() {
        if let Some(w) = w {
            loss.set(k, out_fixed.predictions[k].dot(w), w.clone());
        }
    }
    let (g_bp, _) = hybrid_backprop_grad(&fixed, &params, &stream, &out_fixed, &loss).unwrap();
    model.solver = tight();
    let out = model.forward(&params, &stream, &z_init).unwrap();
    let (g_adj, _) = hybrid_adjoint_grad(&model, &params, &stream, &out, &loss, ReplayMode::Reintegrate).unwrap();
    assert!(relative_error(&g_adj, &g_bp) < TOL);
}

#[test]
fn degenerate_hybrid_equals_terminal_adjoint() {
    let n = 3;
    let spec = FieldSpec::new(vec![LayerSpec::Gcn(GcnLayerSpec::new("f", 2, 2, ActivationKind::Tanh))]);
    let model = HybridGDEModel {
        field: Some(spec.clone()),
        jump: JumpMap::Identity,
        output_map: AffineStack::identity(),
        solver: tight(),
    };
    let mut rng = RngStream::new(3, 3);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng).unwrap();
    let g = Arc::new(path_graph(n));
    let xs = vec![Matrix::zeros(n, 1), Matrix::zeros(n, 1)];
    let stream = DynamicGraphStream::with_constant_graph(vec![0.0, 1.0], xs, g.clone()).unwrap();
    let z0 = random_matrix(&mut rng, n, 2);
    let c = random_matrix(&mut rng, n, 2);
    let out = model.forward(&params, &stream, &z0).unwrap();
    let mut loss = TimestampedLoss::new(2);
    loss.set(1, out.predictions[1].dot(&c), c.clone());
    let (gh, zh) = hybrid_adjoint_grad(&model, &params, &stream, &out, &loss, ReplayMode::Reintegrate).unwrap();
    let ctx = GraphContext::new(g);
    let field = GraphField::new(&spec, &params, &ctx);
    let (gt, zt) = terminal_adjoint(&field, &z0, (0.0, 1.0), &c, &tight(), ReplayMode::Reintegrate).unwrap();
    for (a, b) in gh.iter().zip(&gt) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    assert!(zh.sub(&zt).max_abs() <= 1e-10);

    let zero = TimestampedLoss::new(2);
    let (g0, z0g) = hybrid_adjoint_grad(&model, &params, &stream, &out, &zero, ReplayMode::Reintegrate).unwrap();
    assert!(g0.iter().all(|v| *v == 0.0));
    assert_eq!(z0g.max_abs(), 0.0);
    // the flow itself is unaffected by the jump choice when the jump is identity
    let direct = solve(&field, &z0, (0.0, 1.0), &tight()).unwrap();
    assert!(direct.last_state().sub(&out.predictions[1]).max_abs() < 1e-12);
}

#[test]
fn gsde_unrolled_gradient_matches_finite_differences() {
    let g = Graph::from_edges(4, &[(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
    let model = LatentGDEModel::new(g, 2, 3, SolverConfig::fixed(SolverKind::EulerHeun, 0.05)).unwrap();
    let mut rng = RngStream::new(8, 0);
    let mut params = ParamStore::new();
    model.register(&mut params, &mut rng).unwrap();
    let history = random_matrix(&mut rng, 6, 2);
    let eps = model.draw_eps(&mut rng);
    let t_eval = [0.0, 0.3, 0.6];
    let targets: Vec<Matrix> = t_eval.iter().map(|_| random_matrix(&mut rng, 2, 1)).collect();
    let path_rng = RngStream::new(8, 77);
    let run_loss = |p: &ParamStore| -> gde_core::Result<f64> {
        let mut path = model.new_path(path_rng.clone(), (0.0, 0.6))?;
        let pass = model.run(p, &history, &eps, &t_eval, &mut path)?;
        gde_core::models::elbo_loss(&pass.predictions, &targets, &pass.posterior, model.sigma_obs)
    };
    let mut path = model.new_path(path_rng.clone(), (0.0, 0.6)).unwrap();
    let pass = model.run(&params, &history, &eps, &t_eval, &mut path).unwrap();
    let (terms, grad) = model.loss_and_grad(&params, &pass, &targets).unwrap();
    assert!((terms.loss() - run_loss(&params).unwrap()).abs() < 1e-12);
    let fd = finite_difference_grad(
        |th| {
            let mut p = params.clone();
            p.set_theta(th)?;
            run_loss(&p)
        },
        params.theta(),
        1e-6,
    )
    .unwrap();
    let err = relative_error(&grad, &fd);
    assert!(err < TOL, "relative error {err:e}");
}
