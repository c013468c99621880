use gde_core::graph::{distance_threshold_adjacency, hybrid_time_domain, normalized_laplacian, Graph, ThresholdMode};
use gde_core::layers::{gat_forward, gcgru_jump, gmde_field, GatLayerSpec, GcgruParams, GmdeSpec, ParamStore};
use gde_core::models::{kl_standard_normal, PosteriorParams};
use gde_core::numerics::{activation, ActivationKind, Matrix, RngStream};
use gde_core::training::{forecast_metrics, lr_schedule, ScheduleSpec};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// Random undirected graph on `2..=max_n` nodes.
fn graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if bits[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            Graph::from_edges(n, &edges).unwrap()
        })
    })
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = RngStream::new(seed, 0);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.below(i + 1));
    }
    p
}

/// Positive definiteness by attempting a Cholesky factorization.
fn is_positive_definite(a: &Matrix) -> bool {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d <= 0.0 {
            return false;
        }
        l[(j, j)] = d.sqrt();
        for i in j + 1..n {
            l[(i, j)] = (a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>()) / l[(j, j)];
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn activation_derivatives_match_central_differences(x in -4.0f64..4.0) {
        prop_assume!(x.abs() > 1e-3);
        for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Relu, ActivationKind::LeakyRelu(0.2), ActivationKind::Identity] {
            let (_, d) = activation(kind, &Matrix::filled(1, 1, x));
            let h = 1e-6;
            let f = |v: f64| kind.apply(&Matrix::filled(1, 1, v))[(0, 0)];
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            prop_assert!((d[(0, 0)] - fd).abs() < 1e-7, "{kind} at {x}: {} vs {fd}", d[(0, 0)]);
        }
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.sub(&right).max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric_with_spectrum_in_unit_interval(g in graph(12)) {
        let l = normalized_laplacian(&g);
        prop_assert!(l.sub(&l.transpose()).max_abs() < 1e-15);
        let n = g.n();
        let shift = Matrix::identity(n).scale(1.0 + 1e-9);
        prop_assert!(is_positive_definite(&shift.sub(&l)));
        prop_assert!(is_positive_definite(&shift.add(&l)));
    }

    #[test]
    fn threshold_graphs_are_symmetric(
        pts in prop::collection::vec(prop::array::uniform2(-3.0f64..3.0), 2..15),
        r in 0.1f64..4.0,
        q in 5.0f64..95.0,
    ) {
        let g = distance_threshold_adjacency(&pts, ThresholdMode::Radius(r)).unwrap();
        prop_assert!(g.is_symmetric());
        if let Ok(g) = distance_threshold_adjacency(&pts, ThresholdMode::Percentile(q)) {
            prop_assert!(g.is_symmetric());
        }
        for i in 0..g.n() {
            prop_assert_eq!(g.adjacency()[(i, i)], 0.0);
        }
    }

    #[test]
    fn attention_rows_are_stochastic(g in graph(8), seed in 0u64..1000) {
        let spec = GatLayerSpec::new("gat", 3, 2, ActivationKind::Tanh);
        let mut params = ParamStore::new();
        let mut rng = RngStream::new(seed, 0);
        spec.register(&mut params, &mut rng, None).unwrap();
        let z = Matrix::from_fn(g.n(), 3, |_, _| rng.uniform_range(-3.0, 3.0));
        let (_, alpha) = gat_forward(&g, &z, &spec, &params).unwrap();
        for i in 0..g.n() {
            prop_assert!((alpha.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..g.n() {
                if i != j && !g.neighbors(i).contains(&j) {
                    prop_assert_eq!(alpha[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn gcgru_keeps_unit_box(g in graph(6), seed in 0u64..1000) {
        let cell = GcgruParams::new("cell", 2, 3);
        let mut params = ParamStore::new();
        let mut rng = RngStream::new(seed, 0);
        cell.register(&mut params, &mut rng).unwrap();
        let n = g.n();
        let z = Matrix::from_fn(n, 3, |_, _| rng.uniform_range(-1.0, 1.0));
        let x = Matrix::from_fn(n, 2, |_, _| rng.uniform_range(-10.0, 10.0));
        let out = gcgru_jump(&normalized_laplacian(&g), &z, &x, &cell, &params).unwrap();
        prop_assert!(out.max_abs() <= 1.0);
    }

    #[test]
    fn gmde_is_permutation_equivariant(g in graph(7), seed in 0u64..1000) {
        let spec = GmdeSpec::new("m", 2, 4, ActivationKind::Tanh, ActivationKind::Tanh);
        let mut params = ParamStore::new();
        let mut rng = RngStream::new(seed, 0);
        spec.register(&mut params, &mut rng, None).unwrap();
        let n = g.n();
        let z = Matrix::from_fn(n, 2, |_, _| rng.uniform_range(-1.0, 1.0));
        let perm = permutation(n, seed);
        let mut pz = Matrix::zeros(n, 2);
        for (i, &pi) in perm.iter().enumerate() {
            pz.row_mut(pi).copy_from_slice(z.row(i));
        }
        let out = gmde_field(&g, &z, &spec, &params).unwrap();
        let pout = gmde_field(&g.permuted(&perm), &pz, &spec, &params).unwrap();
        for i in 0..n {
            for j in 0..2 {
                prop_assert!((out[(i, j)] - pout[(perm[i], j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_ignore_sensor_order(
        y in prop::collection::vec(0.5f64..3.0, 12),
        e in prop::collection::vec(-0.4f64..0.4, 12),
        seed in 0u64..1000,
    ) {
        let (t, p) = (3, 4);
        let target = Matrix::from_vec(t, p, y).unwrap();
        let pred = target.add(&Matrix::from_vec(t, p, e).unwrap());
        let perm = permutation(p, seed);
        let shuffle = |m: &Matrix| Matrix::from_fn(t, p, |i, j| m[(i, perm[j])]);
        let a = forecast_metrics(&target, &pred).unwrap();
        let b = forecast_metrics(&shuffle(&target), &shuffle(&pred)).unwrap();
        prop_assert!((a.mape - b.mape).abs() < 1e-10);
        prop_assert!((a.rmse - b.rmse).abs() < 1e-12);
        prop_assert!((a.mape_signed_sum - b.mape_signed_sum).abs() < 1e-10);
    }

    #[test]
    fn cosine_schedule_is_periodic(t0 in 1usize..50, epoch in 0usize..500, lo in 0.0f64..0.01, span in 0.0f64..0.1) {
        let spec = ScheduleSpec::CosineAnnealing { t0, lr_max: lo + span, lr_min: lo };
        let a = lr_schedule(&spec, epoch);
        prop_assert!((a - lr_schedule(&spec, epoch + t0)).abs() < 1e-15);
        prop_assert!(a >= lo - 1e-15 && a <= lo + span + 1e-15);
    }

    #[test]
    fn hybrid_domain_tiles_its_span(gaps in prop::collection::vec(1e-3f64..2.0, 1..20), start in -5.0f64..5.0) {
        let mut ts = vec![start];
        for g in &gaps {
            let last = *ts.last().unwrap();
            ts.push(last + g);
        }
        let dom = hybrid_time_domain(&ts).unwrap();
        prop_assert_eq!(dom.span(), (ts[0], *ts.last().unwrap()));
        prop_assert_eq!(dom.intervals.len(), gaps.len());
        for (k, w) in dom.intervals.windows(2).enumerate() {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert_eq!(w[0].k, k + 1);
        }
    }

    #[test]
    fn kl_is_nonnegative(mean in matrix(3, 2), logvar in matrix(3, 2)) {
        let kl = kl_standard_normal(&PosteriorParams { mean, logvar });
        prop_assert!(kl >= 0.0);
    }
}
