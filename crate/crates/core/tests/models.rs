use std::sync::Arc;

use gde_core::graph::{DynamicGraphStream, Graph, GraphContext};
use gde_core::layers::{
    gcgru_jump, AffineSpec, AffineStack, FieldSpec, GatLayerSpec, GcgruParams, GcnLayerSpec, GraphField, LayerSpec,
    ParamStore,
};
use gde_core::models::{
    gcde_gru_forward, gde2_forward, gde_forward, gsde_decode, latent_encode, repressilator_graph, HybridGDEModel,
    JumpMap, LatentGDEModel, NeuralGDEModel, PosteriorParams,
};
use gde_core::numerics::{sigmoid, ActivationKind, Matrix, RngStream};
use gde_core::solvers::{solve, FnField, SolverConfig, SolverKind};

const ID: ActivationKind = ActivationKind::Identity;
const TANH: ActivationKind = ActivationKind::Tanh;

fn random_matrix(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform_range(-1.0, 1.0))
}

fn tight() -> SolverConfig {
    SolverConfig::dopri5(1e-10, 1e-12)
}

fn series_exp(a: &Matrix, t: f64) -> Matrix {
    let n = a.rows();
    let mut out = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..80 {
        term = term.matmul(a).unwrap().scale(t / k as f64);
        out.add_assign(&term);
    }
    out
}

fn one_gcn(name: &str, d_in: usize, d_out: usize, act: ActivationKind) -> FieldSpec {
    FieldSpec::new(vec![LayerSpec::Gcn(GcnLayerSpec::new(name, d_in, d_out, act))])
}

fn registered(f: impl FnOnce(&mut ParamStore, &mut RngStream), seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    f(&mut p, &mut RngStream::new(seed, 0));
    p
}

#[test]
fn zero_field_with_identity_maps_returns_input() {
    let model = NeuralGDEModel::new(AffineStack::identity(), one_gcn("f", 3, 3, TANH), AffineStack::identity());
    let mut params = registered(|p, r| model.register(p, r).unwrap(), 1);
    params.set("f.w", &Matrix::zeros(3, 3)).unwrap();
    let ctx = GraphContext::from_graph(Graph::complete(4));
    let x = random_matrix(&mut RngStream::new(2, 0), 4, 3);
    for y in gde_forward(&model, &params, &x, &ctx, &[0.3, 1.0], &tight()).unwrap() {
        assert_eq!(y, x);
    }
}

#[test]
fn single_node_graph_is_a_plain_neural_ode() {
    let model = NeuralGDEModel::new(AffineStack::identity(), one_gcn("f", 3, 3, TANH), AffineStack::identity());
    let params = registered(|p, r| model.register(p, r).unwrap(), 3);
    let ctx = GraphContext::from_graph(Graph::empty(1));
    let x = random_matrix(&mut RngStream::new(4, 0), 1, 3);
    let cfg = SolverConfig::fixed(SolverKind::Rk4, 0.05);
    let got = gde_forward(&model, &params, &x, &ctx, &[1.0], &cfg).unwrap();
    let w = params.get("f.w").unwrap();
    let plain = FnField(move |_t: f64, z: &Matrix| z.matmul(&w).unwrap().map(f64::tanh));
    let want = solve(&plain, &x, (0.0, 1.0), &cfg).unwrap();
    assert!(got[0].sub(want.last_state()).max_abs() < 1e-14);
}

#[test]
fn linear_field_matches_series_exponential() {
    // Ż = L Z W, so vec(Z) evolves under Wᵀ ⊗ L.
    let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let ctx = GraphContext::from_graph(g);
    let w = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
    let model = NeuralGDEModel::new(AffineStack::identity(), one_gcn("f", 2, 2, ID), AffineStack::identity())
        .with_span(0.0, std::f64::consts::FRAC_PI_2);
    let mut params = registered(|p, r| model.register(p, r).unwrap(), 5);
    params.set("f.w", &w).unwrap();
    let x = random_matrix(&mut RngStream::new(6, 0), 3, 2);
    let t = std::f64::consts::FRAC_PI_2;
    let got = gde_forward(&model, &params, &x, &ctx, &[t], &SolverConfig::dopri5(1e-8, 1e-8)).unwrap();

    let (n, d) = (3, 2);
    let l = &ctx.laplacian;
    let k = Matrix::from_fn(n * d, n * d, |r, c| w[(c / n, r / n)] * l[(r % n, c % n)]);
    let vec_x = Matrix::from_fn(n * d, 1, |r, _| x[(r % n, r / n)]);
    let vec_z = series_exp(&k, t).matmul(&vec_x).unwrap();
    let oracle = Matrix::from_fn(n, d, |i, j| vec_z[(j * n + i, 0)]);
    assert!(got[0].sub(&oracle).max_abs() < 1e-6);
}

fn second_order_field(n_pos: usize) -> FieldSpec {
    one_gcn("f", 2 * n_pos, n_pos, ID).second_order()
}

#[test]
fn second_order_free_motion_is_linear_in_time() {
    let spec = second_order_field(2);
    let mut params = registered(|p, r| spec.register(p, r).unwrap(), 7);
    params.set("f.w", &Matrix::zeros(4, 2)).unwrap();
    let ctx = GraphContext::from_graph(Graph::complete(3));
    let mut rng = RngStream::new(8, 0);
    let (p0, v0) = (random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 3, 2));
    let field = GraphField::new(&spec, &params, &ctx);
    let z = solve(&field, &p0.hcat(&v0).unwrap(), (0.0, 1.7), &tight()).unwrap();
    let mut want = p0.clone();
    want.axpy(1.7, &v0);
    assert!(z.last_state().cols_range(0, 2).sub(&want).max_abs() < 1e-12);
    assert!(z.last_state().cols_range(2, 4).sub(&v0).max_abs() < 1e-12);
}

#[test]
fn second_order_model_with_zero_field_is_constant() {
    let model = NeuralGDEModel::new(
        AffineStack::mlp("in", &[3, 2], ID, ID),
        second_order_field(2),
        AffineStack::mlp("out", &[2, 1], ID, ID),
    );
    let mut params = registered(|p, r| model.register(p, r).unwrap(), 9);
    params.set("f.w", &Matrix::zeros(4, 2)).unwrap();
    let ctx = GraphContext::from_graph(Graph::from_edges(3, &[(0, 2)]).unwrap());
    let x = random_matrix(&mut RngStream::new(10, 0), 3, 3);
    let ys = gde2_forward(&model, &params, &x, &ctx, &[0.2, 0.5, 1.0], &tight()).unwrap();
    let y0 = model.readout(&model.initial_state(&x, &params).unwrap(), &params).unwrap();
    for y in ys {
        assert!(y.sub(&y0).max_abs() < 1e-14);
    }
}

#[test]
fn second_order_harmonic_oscillator() {
    let spec = second_order_field(1);
    let mut params = registered(|p, r| spec.register(p, r).unwrap(), 11);
    params.set("f.w", &Matrix::from_rows(&[[-1.0], [0.0]])).unwrap();
    let ctx = GraphContext::from_graph(Graph::empty(1));
    let field = GraphField::new(&spec, &params, &ctx);
    let p0 = 0.8;
    let cfg = SolverConfig::dopri5(1e-8, 1e-10);
    for t in [0.5, 2.0, 5.0] {
        let z = solve(&field, &Matrix::from_rows(&[[p0, 0.0]]), (0.0, t), &cfg).unwrap();
        assert!((z.last_state()[(0, 0)] - p0 * t.cos()).abs() < 1e-6, "t={t}");
    }
}

fn attention_model() -> NeuralGDEModel {
    NeuralGDEModel::new(
        AffineStack::mlp("in", &[2, 3], ID, ID),
        FieldSpec::new(vec![
            LayerSpec::Gcn(GcnLayerSpec::new("f.gcn", 3, 3, TANH)),
            LayerSpec::Gat(GatLayerSpec::new("f.gat", 3, 3, TANH)),
        ]),
        AffineStack::mlp("out", &[3, 1], ID, ID),
    )
}

#[test]
fn forward_is_permutation_equivariant() {
    let model = attention_model();
    let params = registered(|p, r| model.register(p, r).unwrap(), 12);
    let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let x = random_matrix(&mut RngStream::new(13, 0), 5, 2);
    let px = Matrix::from_fn(5, 2, |i, j| x[(perm.iter().position(|&p| p == i).unwrap(), j)]);
    let cfg = tight();
    let y = gde_forward(&model, &params, &x, &GraphContext::from_graph(g.clone()), &[1.0], &cfg).unwrap();
    let py = gde_forward(&model, &params, &px, &GraphContext::from_graph(g.permuted(&perm)), &[1.0], &cfg).unwrap();
    for i in 0..5 {
        assert!((y[0][(i, 0)] - py[0][(perm[i], 0)]).abs() < 1e-8);
    }
}

#[test]
fn predictions_are_continuous_in_depth() {
    let model = attention_model();
    let params = registered(|p, r| model.register(p, r).unwrap(), 14);
    let ctx = GraphContext::from_graph(Graph::complete(4));
    let x = random_matrix(&mut RngStream::new(15, 0), 4, 2);
    let t = 0.6;
    let gaps: Vec<f64> = [1e-2, 1e-3]
        .iter()
        .map(|&d| {
            let ys = gde_forward(&model, &params, &x, &ctx, &[t, t + d], &tight()).unwrap();
            ys[1].sub(&ys[0]).norm()
        })
        .collect();
    assert!(gaps[1] < gaps[0] && gaps[1] < 1e-2, "{gaps:?}");
}

fn gcgru_hybrid(field: Option<FieldSpec>, nx: usize, nz: usize, solver: SolverConfig) -> HybridGDEModel {
    HybridGDEModel {
        field,
        jump: JumpMap::Gcgru(GcgruParams::new("jump", nx, nz)),
        output_map: AffineStack::new(vec![AffineSpec::new("out", nz, 1, ID)]),
        solver,
    }
}

fn random_stream(rng: &mut RngStream, n: usize, nx: usize, ts: Vec<f64>) -> DynamicGraphStream {
    let g1 = Arc::new(Graph::from_edges(n, &[(0, 1), (1, 2)]).unwrap());
    let g2 = Arc::new(Graph::complete(n));
    let graphs: Vec<_> = (0..ts.len()).map(|k| if k % 2 == 0 { g1.clone() } else { g2.clone() }).collect();
    let xs = (0..ts.len()).map(|_| random_matrix(rng, n, nx)).collect();
    DynamicGraphStream::new(ts, xs, graphs).unwrap()
}

#[test]
fn zero_flow_reduces_to_gcgru_recurrence() {
    let (n, nx, nz) = (3, 2, 2);
    let model = gcgru_hybrid(Some(one_gcn("flow", nz, nz, TANH)), nx, nz, tight());
    let mut params = registered(|p, r| model.register(p, r).unwrap(), 16);
    params.set("flow.w", &Matrix::zeros(nz, nz)).unwrap();
    let mut rng = RngStream::new(17, 0);
    let stream = random_stream(&mut rng, n, nx, vec![0.0, 0.4, 1.1, 1.5]);
    let z_init = random_matrix(&mut rng, n, nz);
    let (_, preds) = gcde_gru_forward(&model, &params, &stream, &z_init).unwrap();

    let JumpMap::Gcgru(cell) = &model.jump else { unreachable!() };
    let mut z = z_init;
    for (k, g) in stream.graphs().iter().enumerate() {
        let l = GraphContext::new(g.clone()).laplacian;
        z = gcgru_jump(&l, &z, &stream.features()[k], cell, &params).unwrap();
        let y = model.output_map.apply(&z, &params).unwrap();
        assert!(preds[k].sub(&y).max_abs() < 1e-12, "step {k}");
    }
}

#[test]
fn hand_unrolled_scalar_hybrid() {
    let (w_flow, [xz, hz, xr, hr, xh, hh], w_out, b_out) = (0.7, [0.3, -0.2, 0.5, 0.1, -0.4, 0.6], 1.3, -0.1);
    let model = gcgru_hybrid(Some(one_gcn("flow", 1, 1, ID)), 1, 1, SolverConfig::fixed(SolverKind::Rk4, 1e-3));
    let mut params = registered(|p, r| model.register(p, r).unwrap(), 18);
    let s = |v: f64| Matrix::filled(1, 1, v);
    params.set("flow.w", &s(w_flow)).unwrap();
    for (name, v) in ["w_xz", "w_hz", "w_xr", "w_hr", "w_xh", "w_hh"].iter().zip([xz, hz, xr, hr, xh, hh]) {
        params.set(&format!("jump.{name}"), &s(v)).unwrap();
    }
    params.set("out.w", &s(w_out)).unwrap();
    params.set("out.b", &s(b_out)).unwrap();

    let g = Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap());
    let ts = vec![0.0, 0.5, 1.25];
    let xs = vec![
        Matrix::column(&[0.2, -0.3]),
        Matrix::column(&[1.0, 0.4]),
        Matrix::column(&[-0.5, 0.9]),
    ];
    let stream = DynamicGraphStream::with_constant_graph(ts.clone(), xs.clone(), g).unwrap();
    let z_init = Matrix::column(&[0.1, -0.6]);
    let (_, preds) = gcde_gru_forward(&model, &params, &stream, &z_init).unwrap();

    // Two connected nodes: L = ½[[1,1],[1,1]] is a projector, so
    // exp(aL) = I + (eᵃ − 1)L.
    let avg = |v: [f64; 2]| 0.5 * (v[0] + v[1]);
    let flow = |z: [f64; 2], dt: f64| {
        let m = avg(z) * ((w_flow * dt).exp() - 1.0);
        [z[0] + m, z[1] + m]
    };
    let jump = |z: [f64; 2], x: [f64; 2]| {
        let (lx, lz) = (avg(x), avg(z));
        let h = sigmoid(lx * xz + lz * hz);
        let r = sigmoid(lx * xr + lz * hr);
        let lrz = avg([r * z[0], r * z[1]]);
        let c = (lx * xh + lrz * hh).tanh();
        [h * z[0] + (1.0 - h) * c, h * z[1] + (1.0 - h) * c]
    };
    let mut z = [z_init[(0, 0)], z_init[(1, 0)]];
    for k in 0..3 {
        if k > 0 {
            z = flow(z, ts[k] - ts[k - 1]);
        }
        z = jump(z, [xs[k][(0, 0)], xs[k][(1, 0)]]);
        for i in 0..2 {
            assert!((preds[k][(i, 0)] - (w_out * z[i] + b_out)).abs() < 1e-8, "step {k} node {i}");
        }
    }
}

#[test]
fn time_rescaled_stream_gives_identical_predictions() {
    let (n, nx, nz) = (3, 2, 2);
    let field = FieldSpec::new(vec![
        LayerSpec::Gcn(GcnLayerSpec::new("flow.0", nz, 3, TANH)),
        LayerSpec::Gcn(GcnLayerSpec::new("flow.1", 3, nz, ID)),
    ]);
    let model = gcgru_hybrid(Some(field), nx, nz, tight());
    let params = registered(|p, r| model.register(p, r).unwrap(), 19);
    let mut slow = params.clone();
    slow.set("flow.1.w", &params.get("flow.1.w").unwrap().scale(0.5)).unwrap();
    let mut rng = RngStream::new(20, 0);
    let ts = vec![0.0, 0.3, 0.9, 1.4];
    let stream = random_stream(&mut rng, n, nx, ts.clone());
    let stretched = DynamicGraphStream::new(
        ts.iter().map(|t| 2.0 * t).collect(),
        stream.features().to_vec(),
        stream.graphs().to_vec(),
    )
    .unwrap();
    let z_init = random_matrix(&mut rng, n, nz);
    let (_, a) = gcde_gru_forward(&model, &params, &stream, &z_init).unwrap();
    let (_, b) = gcde_gru_forward(&model, &slow, &stretched, &z_init).unwrap();
    for (p, q) in a.iter().zip(&b) {
        assert!(p.sub(q).max_abs() < 1e-8);
    }
}

#[test]
fn collapsed_posterior_sample_is_the_mean() {
    let mut rng = RngStream::new(21, 0);
    let post = PosteriorParams {
        mean: random_matrix(&mut rng, 4, 1),
        logvar: Matrix::filled(4, 1, -40.0),
    };
    let eps = Matrix::from_fn(4, 1, |_, _| rng.normal());
    assert!(post.sample_with(&eps).sub(&post.mean).max_abs() < 1e-8);
}

#[test]
fn reparametrized_samples_follow_standard_normal() {
    let post = PosteriorParams {
        mean: Matrix::zeros(2, 1),
        logvar: Matrix::zeros(2, 1),
    };
    let mut rng = RngStream::new(22, 0);
    let n = 10_000;
    let samples: Vec<Matrix> = (0..n)
        .map(|_| post.sample_with(&Matrix::from_fn(2, 1, |_, _| rng.normal())))
        .collect();
    for i in 0..2 {
        let xs: Vec<f64> = samples.iter().map(|s| s[(i, 0)]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}

fn latent_model(solver: SolverConfig) -> (LatentGDEModel, ParamStore) {
    let m = LatentGDEModel::new(repressilator_graph(), 6, 4, solver).unwrap();
    let p = registered(|p, r| m.register(p, r).unwrap(), 23);
    (m, p)
}

fn history_stream(n_out: usize, len: usize) -> DynamicGraphStream {
    let mut rng = RngStream::new(24, 0);
    let g = Arc::new(Graph::empty(n_out));
    DynamicGraphStream::with_constant_graph(
        (0..len).map(|t| t as f64).collect(),
        (0..len).map(|_| random_matrix(&mut rng, n_out, 1)).collect(),
        g,
    )
    .unwrap()
}

#[test]
fn encoding_is_deterministic_per_seed() {
    let (m, p) = latent_model(SolverConfig::fixed(SolverKind::EulerHeun, 0.05));
    let hist = history_stream(6, 8);
    let a = latent_encode(&m, &p, &hist, &mut RngStream::new(25, 1)).unwrap();
    let b = latent_encode(&m, &p, &hist, &mut RngStream::new(25, 1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.shape(), (m.n_nodes(), 1));
}

#[test]
fn switched_off_diffusion_decodes_deterministically() {
    let (m, mut p) = latent_model(SolverConfig::fixed(SolverKind::EulerHeun, 0.01));
    p.set("diff.out.b", &Matrix::filled(1, 1, -40.0)).unwrap();
    let z0 = random_matrix(&mut RngStream::new(26, 0), m.n_nodes(), 1);
    let t_eval = [0.0, 0.5, 1.0];
    let mut path = m.new_path(RngStream::new(27, 0), (0.0, 1.0)).unwrap();
    let noisy = gsde_decode(&m, &p, &z0, &t_eval, &mut path).unwrap();
    let drift = GraphField::new(&m.drift, &p, &m.ctx);
    let ode = solve(&drift, &z0, (0.0, 1.0), &SolverConfig::fixed(SolverKind::Euler, 0.01)).unwrap();
    assert!(noisy[2].sub(&ode.last_state().rows_range(0, 6)).max_abs() < 1e-9);

    let mut again = m.new_path(RngStream::new(27, 0), (0.0, 1.0)).unwrap();
    assert_eq!(noisy, gsde_decode(&m, &p, &z0, &t_eval, &mut again).unwrap());
}

#[test]
fn ensemble_spread_grows_with_diffusion_scale() {
    let (mut m, p) = latent_model(SolverConfig::fixed(SolverKind::EulerHeun, 0.05));
    let z0 = random_matrix(&mut RngStream::new(28, 0), m.n_nodes(), 1);
    let t_eval = [0.0, 2.0];
    let mut spreads = Vec::new();
    for scale in [0.1, 0.5, 1.0] {
        m.diffusion_scale = scale;
        let ends: Vec<Matrix> = (0..100)
            .map(|k| {
                let mut path = m.new_path(RngStream::new(29, k), (0.0, 2.0)).unwrap();
                gsde_decode(&m, &p, &z0, &t_eval, &mut path).unwrap().pop().unwrap()
            })
            .collect();
        let mean_std: f64 = (0..6)
            .map(|i| {
                let xs: Vec<f64> = ends.iter().map(|e| e[(i, 0)]).collect();
                let mu = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
            })
            .sum::<f64>()
            / 6.0;
        spreads.push(mean_std);
    }
    assert!(spreads[0] < spreads[1] && spreads[1] < spreads[2], "{spreads:?}");
}
