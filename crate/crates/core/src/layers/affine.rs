use crate::error::{Error, Result};
use crate::layers::{slab_name, ParamStore};
use crate::numerics::{ActivationKind, Matrix, RngStream};

/// Node-wise affine map `σ(Z W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: ActivationKind,
    pub weight: String,
    pub bias: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AffineCache {
    input: Matrix,
    pre: Matrix,
    out: Matrix,
}

impl AffineCache {
    pub fn output(&self) -> &Matrix {
        &self.out
    }
}

impl AffineSpec {
    /// Weight `{prefix}.w`, bias `{prefix}.b`.
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, activation: ActivationKind) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weight: format!("{prefix}.w"),
            bias: Some(format!("{prefix}.b")),
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream, slab: Option<usize>) -> Result<()> {
        params.add_glorot(slab_name(&self.weight, slab), self.in_dim, self.out_dim, rng)?;
        if let Some(b) = &self.bias {
            params.add(slab_name(b, slab), 1, self.out_dim)?;
        }
        Ok(())
    }

    pub fn forward(&self, z: &Matrix, params: &ParamStore, slab: Option<usize>) -> Result<(Matrix, AffineCache)> {
        if z.cols() != self.in_dim {
            return Err(Error::Shape {
                op: "affine",
                lhs: z.shape(),
                rhs: (z.rows(), self.in_dim),
            });
        }
        let w = params.get(&slab_name(&self.weight, slab))?;
        let mut pre = z.matmul(&w)?;
        if let Some(b) = &self.bias {
            pre = pre.add_row(params.slice(&slab_name(b, slab))?);
        }
        let out = self.activation.apply(&pre);
        Ok((
            out.clone(),
            AffineCache {
                input: z.clone(),
                pre,
                out,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        slab: Option<usize>,
        cache: &AffineCache,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let w_name = slab_name(&self.weight, slab);
        let w = params.get(&w_name)?;
        let delta = self.activation.vjp(&cache.pre, &cache.out, lambda);
        params.accumulate(dtheta, &w_name, &cache.input.t_matmul(&delta)?)?;
        if let Some(b) = &self.bias {
            params.accumulate_slice(dtheta, &slab_name(b, slab), &delta.col_sums())?;
        }
        delta.matmul_t(&w)
    }
}

pub fn affine_forward(z: &Matrix, spec: &AffineSpec, params: &ParamStore) -> Result<Matrix> {
    spec.forward(z, params, None).map(|(y, _)| y)
}

/// Sequence of node-wise affine maps; empty means identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineStack {
    pub layers: Vec<AffineSpec>,
}

impl AffineStack {
    pub fn new(layers: Vec<AffineSpec>) -> Self {
        Self { layers }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Affine layers `dims[0] → dims[1] → …`, `hidden` activation between
    /// layers and `last` on the output.
    pub fn mlp(prefix: &str, dims: &[usize], hidden: ActivationKind, last: ActivationKind) -> Self {
        let n = dims.len().saturating_sub(1);
        Self {
            layers: (0..n)
                .map(|i| {
                    let act = if i + 1 == n { last } else { hidden };
                    AffineSpec::new(&format!("{prefix}.{i}"), dims[i], dims[i + 1], act)
                })
                .collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_dim)
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::invalid(format!(
                    "affine {} outputs {} but {} expects {}",
                    w[0].weight, w[0].out_dim, w[1].weight, w[1].in_dim
                )));
            }
        }
        for l in &self.layers {
            l.register(params, rng, None)?;
        }
        Ok(())
    }

    pub fn forward(&self, z: &Matrix, params: &ParamStore) -> Result<(Matrix, Vec<AffineCache>)> {
        let mut h = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = l.forward(&h, params, None)?;
            h = y;
            caches.push(c);
        }
        Ok((h, caches))
    }

    pub fn apply(&self, z: &Matrix, params: &ParamStore) -> Result<Matrix> {
        self.forward(z, params).map(|(y, _)| y)
    }

    pub fn backward(&self, params: &ParamStore, caches: &[AffineCache], lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
        let mut g = lambda.clone();
        for (l, c) in self.layers.iter().zip(caches).rev() {
            g = l.backward(params, None, c, &g, dtheta)?;
        }
        Ok(g)
    }

    /// Pullback at `z`, recomputing the forward pass.
    pub fn vjp(&self, z: &Matrix, params: &ParamStore, lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
        let (_, caches) = self.forward(z, params)?;
        self.backward(params, &caches, lambda, dtheta)
    }
}
