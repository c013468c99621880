use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{DynamicGraphStream, GraphContext, HybridArc, Jump};
use crate::layers::{AffineStack, FieldSpec, GcgruParams, GraphField, ParamStore};
use crate::numerics::{Matrix, RngStream};
use crate::solvers::{solve, SolverConfig, Trajectory};

/// Map applied to the state at every timestamp.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpMap {
    Identity,
    Gcgru(GcgruParams),
}

/// Flow between timestamps, jump at each timestamp, readout after the jump.
///
/// Over `[t_{k−1}, t_k]` the state follows the field on the graph of
/// `t_k`; at `t_k` it jumps through the map with input `X_{t_k}`, and
/// `Ŷ_k = ℓy(Z⁺_k)`. Without a field the state is held constant between
/// timestamps, which makes the model a discrete recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridGDEModel {
    pub field: Option<FieldSpec>,
    pub jump: JumpMap,
    pub output_map: AffineStack,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct HybridOutput {
    pub arc: HybridArc,
    pub predictions: Vec<Matrix>,
}

impl HybridGDEModel {
    pub fn state_dim(&self) -> Option<usize> {
        match (&self.field, &self.jump) {
            (Some(f), _) => Some(f.state_dim()),
            (None, JumpMap::Gcgru(p)) => Some(p.nz),
            (None, JumpMap::Identity) => self.output_map.in_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.field {
            f.validate()?;
            if f.second_order {
                return Err(Error::invalid("hybrid flow must be first order"));
            }
        }
        let nz = self.state_dim();
        if let (JumpMap::Gcgru(p), Some(nz)) = (&self.jump, nz) {
            if p.nz != nz {
                return Err(Error::invalid(format!("jump hidden size {} differs from flow state {nz}", p.nz)));
            }
        }
        if let (Some(i), Some(nz)) = (self.output_map.in_dim(), nz) {
            if i != nz {
                return Err(Error::invalid(format!("output map reads {i} features, state has {nz}")));
            }
        }
        Ok(())
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.validate()?;
        if let Some(f) = &self.field {
            f.register(params, rng)?;
        }
        if let JumpMap::Gcgru(p) = &self.jump {
            p.register(params, rng)?;
        }
        self.output_map.register(params, rng)
    }

    /// One context per stream entry; entries sharing a graph share the
    /// Laplacian computation.
    pub fn contexts(stream: &DynamicGraphStream) -> Vec<GraphContext> {
        let mut out: Vec<GraphContext> = Vec::with_capacity(stream.len());
        for g in stream.graphs() {
            match out.last() {
                Some(prev) if Arc::ptr_eq(&prev.graph, g) => {
                    let c = prev.clone();
                    out.push(c);
                }
                _ => out.push(GraphContext::new(g.clone())),
            }
        }
        out
    }

    pub(crate) fn apply_jump(&self, ctx: &GraphContext, z: &Matrix, x: &Matrix, params: &ParamStore) -> Result<Matrix> {
        match &self.jump {
            JumpMap::Identity => Ok(z.clone()),
            JumpMap::Gcgru(p) => p.forward(&ctx.laplacian, z, x, params).map(|(y, _)| y),
        }
    }

    pub(crate) fn jump_vjp(
        &self,
        ctx: &GraphContext,
        z: &Matrix,
        x: &Matrix,
        params: &ParamStore,
        lambda: &Matrix,
        dtheta: &mut [f64],
    ) -> Result<Matrix> {
        match &self.jump {
            JumpMap::Identity => Ok(lambda.clone()),
            JumpMap::Gcgru(p) => {
                let (_, cache) = p.forward(&ctx.laplacian, z, x, params)?;
                p.backward(&ctx.laplacian, params, &cache, lambda, dtheta)
            }
        }
    }

    pub fn forward_with(
        &self,
        params: &ParamStore,
        stream: &DynamicGraphStream,
        contexts: &[GraphContext],
        z_init: &Matrix,
    ) -> Result<HybridOutput> {
        if stream.is_empty() {
            return Err(Error::invalid("hybrid forward needs a nonempty stream"));
        }
        if contexts.len() != stream.len() {
            return Err(Error::invalid("one graph context per stream entry required"));
        }
        let ts = stream.timestamps();
        let xs = stream.features();
        let mut arc = HybridArc::default();
        let mut predictions = Vec::with_capacity(stream.len());
        let mut z = z_init.clone();
        for k in 0..stream.len() {
            if k > 0 {
                let seg = match &self.field {
                    Some(spec) => {
                        let field = GraphField::new(spec, params, &contexts[k]);
                        solve(&field, &z, (ts[k - 1], ts[k]), &self.solver)?
                    }
                    None => {
                        let mut tr = Trajectory::start(ts[k - 1], z.clone());
                        tr.push(ts[k], z.clone());
                        tr
                    }
                };
                z = seg.last_state().clone();
                arc.segments.push(seg);
            }
            let post = self.apply_jump(&contexts[k], &z, &xs[k], params)?;
            predictions.push(self.output_map.apply(&post, params)?);
            arc.jumps.push(Jump {
                t: ts[k],
                pre: z,
                post: post.clone(),
            });
            z = post;
        }
        Ok(HybridOutput { arc, predictions })
    }

    pub fn forward(&self, params: &ParamStore, stream: &DynamicGraphStream, z_init: &Matrix) -> Result<HybridOutput> {
        let ctxs = Self::contexts(stream);
        self.forward_with(params, stream, &ctxs, z_init)
    }
}

/// Runs the hybrid model over `stream` from `z_init`; returns the recorded
/// arc and `Ŷ_k` after each jump.
pub fn gcde_gru_forward(
    m: &HybridGDEModel,
    params: &ParamStore,
    stream: &DynamicGraphStream,
    z_init: &Matrix,
) -> Result<(HybridArc, Vec<Matrix>)> {
    if stream.len() < 2 {
        return Err(Error::invalid("hybrid stream needs at least two entries"));
    }
    let out = m.forward(params, stream, z_init)?;
    Ok((out.arc, out.predictions))
}
