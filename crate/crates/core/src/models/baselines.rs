//! Graph-free reference models.
//!
//! All three reuse the graph machinery on a single node whose features are
//! the flattened state of every agent, so `L = [[1]]` and no information
//! about the topology is available.

use crate::graph::{Graph, GraphContext};
use crate::layers::{AffineSpec, AffineStack, FieldSpec, GcgruParams, LayerSpec};
use crate::models::{HybridGDEModel, JumpMap};
use crate::numerics::{ActivationKind, Matrix};
use crate::solvers::SolverConfig;

/// Context of the one-node graph.
pub fn single_node_context() -> GraphContext {
    GraphContext::from_graph(Graph::empty(1))
}

/// Row-major flattening of an `n × d` state into `1 × n·d`.
pub fn flatten(z: &Matrix) -> Matrix {
    Matrix::from_vec(1, z.len(), z.as_slice().to_vec()).expect("length matches")
}

pub fn unflatten(z: &Matrix, rows: usize, cols: usize) -> crate::Result<Matrix> {
    Matrix::from_vec(rows, cols, z.as_slice().to_vec())
}

/// Direct next-state map `dim → hidden → hidden → dim`.
pub fn static_mlp(prefix: &str, dim: usize, hidden: usize) -> AffineStack {
    AffineStack::mlp(prefix, &[dim, hidden, hidden, dim], ActivationKind::Tanh, ActivationKind::Identity)
}

/// The same MLP used as a vector field on the flattened state.
pub fn mlp_field(prefix: &str, dim: usize, hidden: usize) -> FieldSpec {
    let dims = [dim, hidden, hidden, dim];
    let layers = (0..3)
        .map(|i| {
            let act = if i == 2 { ActivationKind::Identity } else { ActivationKind::Tanh };
            LayerSpec::Affine(AffineSpec::new(&format!("{prefix}.{i}"), dims[i], dims[i + 1], act))
        })
        .collect();
    FieldSpec::new(layers)
}

/// Plain GRU recurrence over flattened station features.
pub fn gru_baseline(prefix: &str, nx: usize, nz: usize, output_map: AffineStack) -> HybridGDEModel {
    HybridGDEModel {
        field: None,
        jump: JumpMap::Gcgru(GcgruParams::new(prefix, nx, nz)),
        output_map,
        solver: SolverConfig::default(),
    }
}
