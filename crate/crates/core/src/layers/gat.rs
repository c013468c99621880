use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{slab_name, ParamStore};
use crate::numerics::{softmax_in_place, ActivationKind, Matrix, RngStream};

/// Single-head graph attention.
///
/// `e_vu = leaky(aᵀ[W z_v ‖ W z_u])` over `u ∈ N(v) ∪ {v}`, row softmax to
/// `α`, then `σ(Σ_u α_vu W z_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
    pub weight: String,
    /// `2·out_dim × 1`; first half scores the receiving node.
    pub attention: String,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct GatCache {
    input: Matrix,
    h: Matrix,
    /// Pre-leaky logits, dense `n × n`, meaningful only on `N(v) ∪ {v}`.
    logits: Matrix,
    alpha: Matrix,
    mixed: Matrix,
    out: Matrix,
}

impl GatCache {
    pub fn alpha(&self) -> &Matrix {
        &self.alpha
    }
}

/// Iterates `N(v) ∪ {v}`.
fn closed_neighborhood(g: &Graph, v: usize) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(v).chain(g.neighbors(v).iter().copied())
}

impl GatLayerSpec {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, activation: ActivationKind) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weight: format!("{name}.w"),
            attention: format!("{name}.a"),
            slope: 0.2,
        }
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream, slab: Option<usize>) -> Result<()> {
        params.add_glorot(slab_name(&self.weight, slab), self.in_dim, self.out_dim, rng)?;
        params.add_glorot(slab_name(&self.attention, slab), 2 * self.out_dim, 1, rng)?;
        Ok(())
    }

    #[inline]
    fn leaky(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    pub fn forward(&self, g: &Graph, z: &Matrix, params: &ParamStore, slab: Option<usize>) -> Result<(Matrix, GatCache)> {
        let n = g.n();
        if z.cols() != self.in_dim || z.rows() != n {
            return Err(Error::Shape {
                op: "gat",
                lhs: z.shape(),
                rhs: (n, self.in_dim),
            });
        }
        let d = self.out_dim;
        let w = params.get(&slab_name(&self.weight, slab))?;
        let a = params.slice(&slab_name(&self.attention, slab))?;
        let h = z.matmul(&w)?;
        let score = |v: usize, half: &[f64]| -> f64 { h.row(v).iter().zip(half).map(|(x, y)| x * y).sum() };
        let src: Vec<f64> = (0..n).map(|v| score(v, &a[..d])).collect();
        let dst: Vec<f64> = (0..n).map(|u| score(u, &a[d..])).collect();

        let mut logits = Matrix::zeros(n, n);
        let mut alpha = Matrix::zeros(n, n);
        let mut buf = Vec::new();
        for v in 0..n {
            buf.clear();
            for u in closed_neighborhood(g, v) {
                let pre = src[v] + dst[u];
                logits[(v, u)] = pre;
                buf.push(self.leaky(pre));
            }
            softmax_in_place(&mut buf);
            for (u, &p) in closed_neighborhood(g, v).zip(&buf) {
                alpha[(v, u)] = p;
            }
        }
        let mixed = alpha.matmul(&h)?;
        let out = self.activation.apply(&mixed);
        Ok((
            out.clone(),
            GatCache {
                input: z.clone(),
                h,
                logits,
                alpha,
                mixed,
                out,
            },
        ))
    }

    pub fn backward(
        &self,
        g: &Graph,
        params: &ParamStore,
        slab: Option<usize>,
        cache: &GatCache,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let n = g.n();
        let d = self.out_dim;
        let w_name = slab_name(&self.weight, slab);
        let a_name = slab_name(&self.attention, slab);
        let w = params.get(&w_name)?;
        let a = params.slice(&a_name)?;

        let delta = self.activation.vjp(&cache.mixed, &cache.out, lambda);
        // mixed = α H
        let d_alpha = delta.matmul_t(&cache.h)?;
        let mut dh = cache.alpha.t_matmul(&delta)?;

        let mut d_src = vec![0.0; n];
        let mut d_dst = vec![0.0; n];
        for v in 0..n {
            let inner: f64 = closed_neighborhood(g, v)
                .map(|u| cache.alpha[(v, u)] * d_alpha[(v, u)])
                .sum();
            for u in closed_neighborhood(g, v) {
                let de = cache.alpha[(v, u)] * (d_alpha[(v, u)] - inner);
                let slope = if cache.logits[(v, u)] > 0.0 { 1.0 } else { self.slope };
                let dpre = de * slope;
                d_src[v] += dpre;
                d_dst[u] += dpre;
            }
        }
        let mut da = vec![0.0; 2 * d];
        for v in 0..n {
            let hv = cache.h.row(v);
            for k in 0..d {
                da[k] += hv[k] * d_src[v];
                da[d + k] += hv[k] * d_dst[v];
            }
            let row = dh.row_mut(v);
            for k in 0..d {
                row[k] += d_src[v] * a[k] + d_dst[v] * a[d + k];
            }
        }
        params.accumulate_slice(dtheta, &a_name, &da)?;
        params.accumulate(dtheta, &w_name, &cache.input.t_matmul(&dh)?)?;
        dh.matmul_t(&w)
    }
}

/// Returns the layer output and the dense `n × n` attention matrix.
pub fn gat_forward(g: &Graph, z: &Matrix, spec: &GatLayerSpec, params: &ParamStore) -> Result<(Matrix, Matrix)> {
    let (y, cache) = spec.forward(g, z, params, None)?;
    Ok((y, cache.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64, a: (f64, f64)) -> (ParamStore, GatLayerSpec) {
        let spec = GatLayerSpec::new("gat", 1, 1, ActivationKind::Identity);
        let mut p = ParamStore::new();
        p.add(&spec.weight, 1, 1).unwrap();
        p.add(&spec.attention, 2, 1).unwrap();
        p.set(&spec.weight, &Matrix::from_rows(&[[w]])).unwrap();
        p.set(&spec.attention, &Matrix::from_rows(&[[a.0], [a.1]])).unwrap();
        (p, spec)
    }

    #[test]
    fn single_node_attends_to_itself() {
        let (p, spec) = scalar_store(3.0, (0.7, -1.3));
        let (_, alpha) = gat_forward(&Graph::empty(1), &Matrix::from_rows(&[[2.0]]), &spec, &p).unwrap();
        assert_eq!(alpha, Matrix::from_rows(&[[1.0]]));
    }

    #[test]
    fn zero_attention_is_uniform() {
        let (p, spec) = scalar_store(1.0, (0.0, 0.0));
        let z = Matrix::from_rows(&[[1.0], [2.0]]);
        let (_, alpha) = gat_forward(&Graph::complete(2), &z, &spec, &p).unwrap();
        assert_eq!(alpha, Matrix::filled(2, 2, 0.5));
    }

    #[test]
    fn concatenated_scoring_rule() {
        let (p, spec) = scalar_store(1.0, (1.0, 0.0));
        let z = Matrix::from_rows(&[[1.0], [2.0]]);
        let (y, alpha) = gat_forward(&Graph::complete(2), &z, &spec, &p).unwrap();
        assert_eq!(alpha.row(0), &[0.5, 0.5]);
        assert!((y[(0, 0)] - 1.5).abs() < 1e-15);
    }
}
