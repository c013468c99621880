use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{AffineCache, AffineSpec, ParamStore};
use crate::numerics::{ActivationKind, Matrix, RngStream};

/// Message-passing field `ż_v = g(Σ_{u∈N(v)} m(z_v, z_u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmdeSpec {
    /// Acts on the concatenation `[z_v ‖ z_u]`.
    pub message: AffineSpec,
    pub update: AffineSpec,
}

#[derive(Debug, Clone)]
pub struct GmdeCache {
    /// `(v, u)` per message row.
    pairs: Vec<(usize, usize)>,
    message: AffineCache,
    update: AffineCache,
}

impl GmdeSpec {
    pub fn new(name: &str, nz: usize, hidden: usize, message_act: ActivationKind, update_act: ActivationKind) -> Self {
        Self {
            message: AffineSpec::new(&format!("{name}.msg"), 2 * nz, hidden, message_act),
            update: AffineSpec::new(&format!("{name}.upd"), hidden, nz, update_act),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.update.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let nz = self.update.out_dim;
        if self.message.in_dim != 2 * nz || self.update.in_dim != self.message.out_dim {
            return Err(Error::invalid(format!(
                "gmde dims do not chain: message {}→{}, update {}→{}",
                self.message.in_dim, self.message.out_dim, self.update.in_dim, self.update.out_dim
            )));
        }
        Ok(())
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream, slab: Option<usize>) -> Result<()> {
        self.message.register(params, rng, slab)?;
        self.update.register(params, rng, slab)
    }

    pub fn forward(&self, g: &Graph, z: &Matrix, params: &ParamStore, slab: Option<usize>) -> Result<(Matrix, GmdeCache)> {
        let n = g.n();
        let nz = self.state_dim();
        if z.shape() != (n, nz) {
            return Err(Error::Shape {
                op: "gmde",
                lhs: z.shape(),
                rhs: (n, nz),
            });
        }
        let mut pairs = Vec::new();
        let mut edge_in = Vec::new();
        for v in 0..n {
            for &u in g.neighbors(v) {
                pairs.push((v, u));
                edge_in.extend_from_slice(z.row(v));
                edge_in.extend_from_slice(z.row(u));
            }
        }
        let edge_in = Matrix::from_vec(pairs.len(), 2 * nz, edge_in)?;
        let (messages, mcache) = self.message.forward(&edge_in, params, slab)?;
        let mut agg = Matrix::zeros(n, self.message.out_dim);
        for (row, &(v, _)) in pairs.iter().enumerate() {
            for (a, m) in agg.row_mut(v).iter_mut().zip(messages.row(row)) {
                *a += m;
            }
        }
        let (out, ucache) = self.update.forward(&agg, params, slab)?;
        Ok((
            out,
            GmdeCache {
                pairs,
                message: mcache,
                update: ucache,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        slab: Option<usize>,
        cache: &GmdeCache,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let nz = self.state_dim();
        let d_agg = self.update.backward(params, slab, &cache.update, lambda, dtheta)?;
        let mut d_msg = Matrix::zeros(cache.pairs.len(), self.message.out_dim);
        for (row, &(v, _)) in cache.pairs.iter().enumerate() {
            d_msg.row_mut(row).copy_from_slice(d_agg.row(v));
        }
        let d_edge = self.message.backward(params, slab, &cache.message, &d_msg, dtheta)?;
        let mut dz = Matrix::zeros(lambda.rows(), nz);
        for (row, &(v, u)) in cache.pairs.iter().enumerate() {
            let e = d_edge.row(row);
            for k in 0..nz {
                dz[(v, k)] += e[k];
                dz[(u, k)] += e[nz + k];
            }
        }
        Ok(dz)
    }
}

pub fn gmde_field(g: &Graph, z: &Matrix, spec: &GmdeSpec, params: &ParamStore) -> Result<Matrix> {
    spec.forward(g, z, params, None).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copy_spec() -> (GmdeSpec, ParamStore) {
        // m(z_v, z_u) = z_u, g = identity
        let spec = GmdeSpec::new("mp", 1, 1, ActivationKind::Identity, ActivationKind::Identity);
        let mut p = ParamStore::new();
        spec.register(&mut p, &mut RngStream::new(0, 0), None).unwrap();
        p.set(&spec.message.weight, &Matrix::from_rows(&[[0.0], [1.0]])).unwrap();
        p.set(&spec.update.weight, &Matrix::from_rows(&[[1.0]])).unwrap();
        (spec, p)
    }

    #[test]
    fn zero_update_weights() {
        let spec = GmdeSpec::new("mp", 2, 3, ActivationKind::Tanh, ActivationKind::Identity);
        let mut p = ParamStore::new();
        spec.register(&mut p, &mut RngStream::new(1, 0), None).unwrap();
        p.set(&spec.update.weight, &Matrix::zeros(3, 2)).unwrap();
        let g = Graph::complete(3);
        let z = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(gmde_field(&g, &z, &spec, &p).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn isolated_node_gets_bias() {
        let (spec, mut p) = copy_spec();
        p.set(spec.update.bias.as_ref().unwrap(), &Matrix::from_rows(&[[0.25]])).unwrap();
        let y = gmde_field(&Graph::empty(1), &Matrix::from_rows(&[[5.0]]), &spec, &p).unwrap();
        assert_eq!(y[(0, 0)], 0.25);
    }

    #[test]
    fn neighbour_sum() {
        let (spec, p) = copy_spec();
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let z = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let y = gmde_field(&g, &z, &spec, &p).unwrap();
        assert_eq!(y[(0, 0)], 3.0);
    }
}
