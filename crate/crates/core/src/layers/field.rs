use crate::error::{Error, Result};
use crate::graph::GraphContext;
use crate::layers::{
    AffineCache, AffineSpec, GatCache, GatLayerSpec, GcnCache, GcnLayerSpec, GmdeCache, GmdeSpec, ParamStore,
};
use crate::numerics::{Matrix, RngStream};
use crate::solvers::{DiffField, VectorField};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Gcn(GcnLayerSpec),
    Gat(GatLayerSpec),
    Gmde(GmdeSpec),
    Affine(AffineSpec),
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match self {
            LayerSpec::Gcn(s) => s.in_dim,
            LayerSpec::Gat(s) => s.in_dim,
            LayerSpec::Gmde(s) => s.state_dim(),
            LayerSpec::Affine(s) => s.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerSpec::Gcn(s) => s.out_dim,
            LayerSpec::Gat(s) => s.out_dim,
            LayerSpec::Gmde(s) => s.state_dim(),
            LayerSpec::Affine(s) => s.out_dim,
        }
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream, slab: Option<usize>) -> Result<()> {
        match self {
            LayerSpec::Gcn(s) => s.register(params, rng, slab),
            LayerSpec::Gat(s) => s.register(params, rng, slab),
            LayerSpec::Gmde(s) => {
                s.validate()?;
                s.register(params, rng, slab)
            }
            LayerSpec::Affine(s) => s.register(params, rng, slab),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Gcn(_) => "gcn",
            LayerSpec::Gat(_) => "gat",
            LayerSpec::Gmde(_) => "gmde",
            LayerSpec::Affine(_) => "affine",
        }
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Gcn(GcnCache),
    Gat(GatCache),
    Gmde(GmdeCache),
    Affine(AffineCache),
}

/// How parameters vary with depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDependence {
    Autonomous,
    /// One parameter slab per cell of a uniform grid over `[start, end]`.
    PiecewiseConstant { start: f64, end: f64, cells: usize },
}

/// Where the field's graph comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphBinding {
    Static,
    /// Graph of the current hybrid interval of a stream.
    PerInterval,
}

/// Stack of graph layers defining `f_G(t, Z, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub layers: Vec<LayerSpec>,
    pub time: TimeDependence,
    pub binding: GraphBinding,
    /// State is `[P | V]`; the stack maps `[P | V]` to `V̇` and `Ṗ = V`.
    pub second_order: bool,
}

impl FieldSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self {
            layers,
            time: TimeDependence::Autonomous,
            binding: GraphBinding::Static,
            second_order: false,
        }
    }

    pub fn second_order(mut self) -> Self {
        self.second_order = true;
        self
    }

    pub fn piecewise(mut self, start: f64, end: f64, cells: usize) -> Self {
        self.time = TimeDependence::PiecewiseConstant { start, end, cells };
        self
    }

    pub fn per_interval(mut self) -> Self {
        self.binding = GraphBinding::PerInterval;
        self
    }

    /// Width of the state the field acts on.
    pub fn state_dim(&self) -> usize {
        let out = self.layers.last().map_or(0, |l| l.out_dim());
        if self.second_order {
            2 * out
        } else {
            out
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| Error::invalid("field has no layers"))?;
        for w in self.layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::invalid(format!(
                    "{} output dim {} does not chain into {} input dim {}",
                    w[0].kind(),
                    w[0].out_dim(),
                    w[1].kind(),
                    w[1].in_dim()
                )));
            }
        }
        if first.in_dim() != self.state_dim() {
            return Err(Error::invalid(format!(
                "field input dim {} must equal state dim {}",
                first.in_dim(),
                self.state_dim()
            )));
        }
        if let TimeDependence::PiecewiseConstant { start, end, cells } = self.time {
            if cells == 0 || !(end > start) {
                return Err(Error::invalid("piecewise depth grid needs cells ≥ 1 and end > start"));
            }
        }
        Ok(())
    }

    fn slabs(&self) -> Vec<Option<usize>> {
        match self.time {
            TimeDependence::Autonomous => vec![None],
            TimeDependence::PiecewiseConstant { cells, .. } => (0..cells).map(Some).collect(),
        }
    }

    /// Adds every view the field needs, Glorot-initialized.
    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.validate()?;
        for slab in self.slabs() {
            for layer in &self.layers {
                layer.register(params, rng, slab)?;
            }
        }
        Ok(())
    }

    /// Interior cell boundaries of a piecewise-constant field; solves
    /// should stop there so no step straddles a parameter switch.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.time {
            TimeDependence::Autonomous => Vec::new(),
            TimeDependence::PiecewiseConstant { start, end, cells } => (1..cells)
                .map(|c| start + (end - start) * c as f64 / cells as f64)
                .collect(),
        }
    }

    fn slab_at(&self, t: f64) -> Result<Option<usize>> {
        match self.time {
            TimeDependence::Autonomous => Ok(None),
            TimeDependence::PiecewiseConstant { start, end, cells } => {
                let tol = 1e-12 * (end - start).abs().max(1.0);
                if t < start - tol || t > end + tol {
                    return Err(Error::OutsideSpan { t, start, end });
                }
                let frac = ((t - start) / (end - start)).clamp(0.0, 1.0);
                Ok(Some(((frac * cells as f64) as usize).min(cells - 1)))
            }
        }
    }

    fn check_state(&self, z: &Matrix, ctx: &GraphContext) -> Result<()> {
        if z.shape() != (ctx.n(), self.state_dim()) {
            return Err(Error::Shape {
                op: "field state",
                lhs: z.shape(),
                rhs: (ctx.n(), self.state_dim()),
            });
        }
        Ok(())
    }

    fn stack_forward(
        &self,
        ctx: &GraphContext,
        z: &Matrix,
        params: &ParamStore,
        slab: Option<usize>,
    ) -> Result<(Matrix, Vec<LayerCache>)> {
        let mut h = z.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match layer {
                LayerSpec::Gcn(s) => {
                    let (y, c) = s.forward(&ctx.laplacian, &h, params, slab)?;
                    (y, LayerCache::Gcn(c))
                }
                LayerSpec::Gat(s) => {
                    let (y, c) = s.forward(&ctx.graph, &h, params, slab)?;
                    (y, LayerCache::Gat(c))
                }
                LayerSpec::Gmde(s) => {
                    let (y, c) = s.forward(&ctx.graph, &h, params, slab)?;
                    (y, LayerCache::Gmde(c))
                }
                LayerSpec::Affine(s) => {
                    let (y, c) = s.forward(&h, params, slab)?;
                    (y, LayerCache::Affine(c))
                }
            };
            h = next;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    fn stack_backward(
        &self,
        ctx: &GraphContext,
        params: &ParamStore,
        slab: Option<usize>,
        caches: &[LayerCache],
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        let mut g = lambda.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            g = match (layer, cache) {
                (LayerSpec::Gcn(s), LayerCache::Gcn(c)) => s.backward(&ctx.laplacian, params, slab, c, &g, dtheta)?,
                (LayerSpec::Gat(s), LayerCache::Gat(c)) => s.backward(&ctx.graph, params, slab, c, &g, dtheta)?,
                (LayerSpec::Gmde(s), LayerCache::Gmde(c)) => s.backward(params, slab, c, &g, dtheta)?,
                (LayerSpec::Affine(s), LayerCache::Affine(c)) => s.backward(params, slab, c, &g, dtheta)?,
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
        Ok(g)
    }

    /// Attention matrices of every GAT layer at `(t, Z)`.
    pub fn attention(&self, t: f64, z: &Matrix, params: &ParamStore, ctx: &GraphContext) -> Result<Vec<Matrix>> {
        self.check_state(z, ctx)?;
        let slab = self.slab_at(t)?;
        let (_, caches) = self.stack_forward(ctx, z, params, slab)?;
        Ok(caches
            .into_iter()
            .filter_map(|c| match c {
                LayerCache::Gat(g) => Some(g.alpha().clone()),
                _ => None,
            })
            .collect())
    }
}

/// `f(t, Z)` for the stack, including the second-order split.
pub fn stacked_field_eval(spec: &FieldSpec, t: f64, z: &Matrix, params: &ParamStore, ctx: &GraphContext) -> Result<Matrix> {
    spec.check_state(z, ctx)?;
    let slab = spec.slab_at(t)?;
    let (inner, _) = spec.stack_forward(ctx, z, params, slab)?;
    if spec.second_order {
        let d = z.cols() / 2;
        z.cols_range(d, 2 * d).hcat(&inner)
    } else {
        Ok(inner)
    }
}

/// Reverse-mode product of the field: returns `(∂f/∂Z)ᵀλ` and adds
/// `(∂f/∂θ)ᵀλ` into `dtheta` (length = `params.len()`).
pub fn field_vjp_into(
    spec: &FieldSpec,
    t: f64,
    z: &Matrix,
    lambda: &Matrix,
    params: &ParamStore,
    ctx: &GraphContext,
    dtheta: &mut [f64],
) -> Result<Matrix> {
    spec.check_state(z, ctx)?;
    if lambda.shape() != z.shape() {
        return Err(Error::Shape {
            op: "field_vjp",
            lhs: lambda.shape(),
            rhs: z.shape(),
        });
    }
    let slab = spec.slab_at(t)?;
    let (_, caches) = spec.stack_forward(ctx, z, params, slab)?;
    if spec.second_order {
        let d = z.cols() / 2;
        let lam_p = lambda.cols_range(0, d);
        let lam_v = lambda.cols_range(d, 2 * d);
        let mut dz = spec.stack_backward(ctx, params, slab, &caches, &lam_v, dtheta)?;
        // Ṗ = V routes λ_P onto the velocity block
        for i in 0..dz.rows() {
            for j in 0..d {
                dz[(i, d + j)] += lam_p[(i, j)];
            }
        }
        Ok(dz)
    } else {
        spec.stack_backward(ctx, params, slab, &caches, lambda, dtheta)
    }
}

/// Allocating variant returning `(dZ, dθ)`.
pub fn field_vjp(
    spec: &FieldSpec,
    t: f64,
    z: &Matrix,
    lambda: &Matrix,
    params: &ParamStore,
    ctx: &GraphContext,
) -> Result<(Matrix, Vec<f64>)> {
    let mut dtheta = vec![0.0; params.len()];
    let dz = field_vjp_into(spec, t, z, lambda, params, ctx, &mut dtheta)?;
    Ok((dz, dtheta))
}

/// A [`FieldSpec`] bound to parameters and a graph, usable by the solvers.
#[derive(Clone, Copy)]
pub struct GraphField<'a> {
    pub spec: &'a FieldSpec,
    pub params: &'a ParamStore,
    pub ctx: &'a GraphContext,
}

impl<'a> GraphField<'a> {
    pub fn new(spec: &'a FieldSpec, params: &'a ParamStore, ctx: &'a GraphContext) -> Self {
        Self { spec, params, ctx }
    }
}

impl VectorField for GraphField<'_> {
    fn eval(&self, t: f64, z: &Matrix) -> Result<Matrix> {
        stacked_field_eval(self.spec, t, z, self.params, self.ctx)
    }
}

impl DiffField for GraphField<'_> {
    fn n_params(&self) -> usize {
        self.params.len()
    }

    fn vjp(&self, t: f64, z: &Matrix, lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
        field_vjp_into(self.spec, t, z, lambda, self.params, self.ctx, dtheta)
    }
}
