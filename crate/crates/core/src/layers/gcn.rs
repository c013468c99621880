use crate::error::{Error, Result};
use crate::layers::{slab_name, ParamStore};
use crate::numerics::{ActivationKind, Matrix, RngStream};

/// Graph convolution `σ(L Z W)`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
    pub weight: String,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    lz: Matrix,
    pre: Matrix,
    out: Matrix,
}

impl GcnLayerSpec {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, activation: ActivationKind) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weight: format!("{name}.w"),
        }
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream, slab: Option<usize>) -> Result<()> {
        params.add_glorot(slab_name(&self.weight, slab), self.in_dim, self.out_dim, rng)?;
        Ok(())
    }

    pub fn forward(
        &self,
        laplacian: &Matrix,
        z: &Matrix,
        params: &ParamStore,
        slab: Option<usize>,
    ) -> Result<(Matrix, GcnCache)> {
        if z.cols() != self.in_dim || laplacian.cols() != z.rows() {
            return Err(Error::Shape {
                op: "gcn",
                lhs: laplacian.shape(),
                rhs: z.shape(),
            });
        }
        let w = params.get(&slab_name(&self.weight, slab))?;
        let lz = laplacian.matmul(z)?;
        let pre = lz.matmul(&w)?;
        let out = self.activation.apply(&pre);
        Ok((out.clone(), GcnCache { lz, pre, out }))
    }

    pub fn backward(
        &self,
        laplacian: &Matrix,
        params: &ParamStore,
        slab: Option<usize>,
        cache: &GcnCache,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let w_name = slab_name(&self.weight, slab);
        let w = params.get(&w_name)?;
        let delta = self.activation.vjp(&cache.pre, &cache.out, lambda);
        params.accumulate(dtheta, &w_name, &cache.lz.t_matmul(&delta)?)?;
        laplacian.t_matmul(&delta.matmul_t(&w)?)
    }
}

pub fn gcn_forward(laplacian: &Matrix, z: &Matrix, spec: &GcnLayerSpec, params: &ParamStore) -> Result<Matrix> {
    spec.forward(laplacian, z, params, None).map(|(y, _)| y)
}
