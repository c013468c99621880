//! Two-block stochastic block model with noisy class-dependent features.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommunityConfig {
    pub n: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_features: usize,
    /// Class-mean offset relative to unit feature noise.
    pub signal: f64,
    pub train_fraction: f64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        Self {
            n: 60,
            p_in: 0.2,
            p_out: 0.02,
            n_features: 4,
            signal: 0.5,
            train_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommunityData {
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn two_block_community(cfg: &CommunityConfig, rng: &mut RngStream) -> Result<CommunityData> {
    if cfg.n < 4 || cfg.n_features == 0 || !(0.0..1.0).contains(&cfg.train_fraction) {
        return Err(Error::invalid(format!("invalid community configuration {cfg:?}")));
    }
    let labels: Vec<usize> = (0..cfg.n).map(|i| usize::from(i >= cfg.n / 2)).collect();
    let mut edges = Vec::new();
    for i in 0..cfg.n {
        for j in (i + 1)..cfg.n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(cfg.n, &edges)?;
    let features = Matrix::from_fn(cfg.n, cfg.n_features, |i, _| {
        let sign = if labels[i] == 0 { -1.0 } else { 1.0 };
        sign * cfg.signal + rng.normal()
    });
    let mut order: Vec<usize> = (0..cfg.n).collect();
    for i in (1..order.len()).rev() {
        let j = rng.below(i + 1);
        order.swap(i, j);
    }
    let n_train = ((cfg.n as f64 * cfg.train_fraction).round() as usize).max(2);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(CommunityData {
        graph,
        features,
        labels,
        train,
        test,
    })
}
