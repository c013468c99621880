use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{DynamicGraphStream, Graph, GraphContext};
use crate::layers::{
    AffineSpec, FieldSpec, GatLayerSpec, GcnLayerSpec, GraphField, LayerSpec, ParamStore, TemporalConvCache,
    TemporalConvSpec,
};
use crate::numerics::{ActivationKind, Matrix, RngStream};
use crate::solvers::{
    backprop_euler_heun, integrate_euler_heun_at, BrownianPath, DiffField, SdeTrajectory, SolverConfig, VectorField,
};

/// Diagonal Gaussian `q(Z0 | E)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mean: Matrix,
    pub logvar: Matrix,
}

impl PosteriorParams {
    pub fn std(&self) -> Matrix {
        self.logvar.map(|v| (0.5 * v).exp())
    }

    /// `mean + std ⊙ ε`.
    pub fn sample_with(&self, eps: &Matrix) -> Matrix {
        self.mean.add(&self.std().hadamard(eps))
    }
}

/// The two ELBO pieces; the training loss is `kl − log_lik`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub log_lik: f64,
    pub kl: f64,
}

impl ElboTerms {
    pub fn loss(&self) -> f64 {
        self.kl - self.log_lik
    }
}

/// `½ Σ (μ² + σ² − log σ² − 1)`.
pub fn kl_standard_normal(post: &PosteriorParams) -> f64 {
    post.mean
        .as_slice()
        .iter()
        .zip(post.logvar.as_slice())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// Gaussian log-likelihood of `targets` under `N(prediction, σ²I)`.
pub fn gaussian_log_likelihood(predictions: &[Matrix], targets: &[Matrix], sigma_obs: f64) -> Result<f64> {
    if !(sigma_obs > 0.0) {
        return Err(Error::invalid(format!("sigma_obs {sigma_obs} must be positive")));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma_obs.ln();
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(targets) {
        if p.shape() != y.shape() {
            return Err(Error::Shape {
                op: "log likelihood",
                lhs: p.shape(),
                rhs: y.shape(),
            });
        }
        for (a, b) in p.as_slice().iter().zip(y.as_slice()) {
            let r = (a - b) / sigma_obs;
            total += norm - 0.5 * r * r;
        }
    }
    Ok(total)
}

pub fn elbo_terms(predictions: &[Matrix], targets: &[Matrix], post: &PosteriorParams, sigma_obs: f64) -> Result<ElboTerms> {
    Ok(ElboTerms {
        log_lik: gaussian_log_likelihood(predictions, targets, sigma_obs)?,
        kl: kl_standard_normal(post),
    })
}

/// Negative ELBO.
pub fn elbo_loss(predictions: &[Matrix], targets: &[Matrix], post: &PosteriorParams, sigma_obs: f64) -> Result<f64> {
    Ok(elbo_terms(predictions, targets, post, sigma_obs)?.loss())
}

/// Diffusion scaled by a constant, used to dial noise up or down.
struct Scaled<'a> {
    inner: &'a dyn DiffField,
    scale: f64,
}

impl VectorField for Scaled<'_> {
    fn eval(&self, t: f64, z: &Matrix) -> Result<Matrix> {
        Ok(self.inner.eval(t, z)?.scale(self.scale))
    }
}

impl DiffField for Scaled<'_> {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn vjp(&self, t: f64, z: &Matrix, lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
        self.inner.vjp(t, z, &lambda.scale(self.scale), dtheta)
    }
}

/// Augmented repressilator graph: 6 species (proteins 0–2, mRNAs 3–5)
/// followed by 12 reaction nodes — transcription 6–8, translation 9–11,
/// mRNA degradation 12–14, protein degradation 15–17. Species never touch
/// each other directly. Transcription of gene `i` is also linked to its
/// repressor, protein `i−1`.
pub fn repressilator_graph() -> Graph {
    let mut edges = Vec::new();
    for i in 0..3 {
        let (p, m) = (i, 3 + i);
        let repressor = (i + 2) % 3;
        edges.push((6 + i, m));
        edges.push((6 + i, repressor));
        edges.push((9 + i, m));
        edges.push((9 + i, p));
        edges.push((12 + i, m));
        edges.push((15 + i, p));
    }
    Graph::from_edges(18, &edges).expect("static edge list is valid")
}

/// Encoder → posterior on every node of an augmented graph → GSDE decoder
/// whose first `n_output` node rows are the predictions.
#[derive(Debug, Clone)]
pub struct LatentGDEModel {
    pub encoder: Vec<TemporalConvSpec>,
    pub output_head: AffineSpec,
    pub latent_head: AffineSpec,
    pub ctx: GraphContext,
    pub n_output: usize,
    pub nz: usize,
    pub drift: FieldSpec,
    pub diffusion: FieldSpec,
    pub sigma_obs: f64,
    pub solver: SolverConfig,
    pub diffusion_scale: f64,
}

/// Everything the reverse pass needs from one encode–decode.
#[derive(Debug, Clone)]
pub struct LatentPass {
    pub posterior: PosteriorParams,
    pub eps: Matrix,
    pub z0: Matrix,
    pub sde: SdeTrajectory,
    pub indices: Vec<usize>,
    pub predictions: Vec<Matrix>,
    enc_caches: Vec<Vec<TemporalConvCache>>,
    embeddings: Matrix,
    history_len: usize,
}

impl LatentGDEModel {
    /// Drift `GCN 1→3 tanh, GAT 3→3 tanh, GCN 3→1`; diffusion the same
    /// with a final scalar affine + sigmoid.
    pub fn new(graph: Graph, n_output: usize, hidden: usize, solver: SolverConfig) -> Result<Self> {
        if n_output == 0 || n_output > graph.n() {
            return Err(Error::invalid(format!("{n_output} output nodes on a {}-node graph", graph.n())));
        }
        let nz = 1;
        let tanh = ActivationKind::Tanh;
        let id = ActivationKind::Identity;
        let drift = FieldSpec::new(vec![
            LayerSpec::Gcn(GcnLayerSpec::new("drift.gcn0", nz, 3, tanh)),
            LayerSpec::Gat(GatLayerSpec::new("drift.gat", 3, 3, tanh)),
            LayerSpec::Gcn(GcnLayerSpec::new("drift.gcn1", 3, nz, id)),
        ]);
        let diffusion = FieldSpec::new(vec![
            LayerSpec::Gcn(GcnLayerSpec::new("diff.gcn0", nz, 3, tanh)),
            LayerSpec::Gat(GatLayerSpec::new("diff.gat", 3, 3, tanh)),
            LayerSpec::Gcn(GcnLayerSpec::new("diff.gcn1", 3, nz, id)),
            LayerSpec::Affine(AffineSpec::new("diff.out", nz, nz, ActivationKind::Sigmoid)),
        ]);
        let relu = ActivationKind::Relu;
        let encoder = vec![
            TemporalConvSpec::new("enc.conv0", 1, hidden, 3, relu),
            TemporalConvSpec::new("enc.conv1", hidden, hidden, 3, id),
        ];
        let e = 2 * hidden + 1;
        Ok(Self {
            encoder,
            output_head: AffineSpec::new("enc.head_y", e, 2 * nz, id),
            latent_head: AffineSpec::new("enc.head_l", e, 2 * nz, id),
            ctx: GraphContext::new(Arc::new(graph)),
            n_output,
            nz,
            drift,
            diffusion,
            sigma_obs: 0.1,
            solver,
            diffusion_scale: 1.0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.ctx.n()
    }

    fn hidden(&self) -> usize {
        self.encoder.last().map_or(0, |c| c.out_ch)
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        for c in &self.encoder {
            c.register(params, rng)?;
        }
        self.output_head.register(params, rng, None)?;
        self.latent_head.register(params, rng, None)?;
        self.drift.register(params, rng)?;
        self.diffusion.register(params, rng)
    }

    /// Output-node neighbors of each latent node.
    fn sources(&self, v: usize) -> Vec<usize> {
        self.ctx.graph.neighbors(v).iter().copied().filter(|&u| u < self.n_output).collect()
    }

    /// Per-node embeddings from a `T × n_output` history: for each output
    /// node, `[last conv output | time-mean of conv output | last value]`;
    /// latent nodes average their output-node neighbors.
    fn embed(&self, params: &ParamStore, history: &Matrix) -> Result<(Matrix, Vec<Vec<TemporalConvCache>>)> {
        if history.cols() != self.n_output || history.rows() == 0 {
            return Err(Error::Shape {
                op: "encoder history",
                lhs: history.shape(),
                rhs: (history.rows().max(1), self.n_output),
            });
        }
        let h = self.hidden();
        let t_len = history.rows();
        let e_dim = 2 * h + 1;
        let mut emb = Matrix::zeros(self.n_nodes(), e_dim);
        let mut caches = Vec::with_capacity(self.n_output);
        for i in 0..self.n_output {
            let mut x = Matrix::from_fn(t_len, 1, |t, _| history[(t, i)]);
            let mut cs = Vec::with_capacity(self.encoder.len());
            for c in &self.encoder {
                let (y, cache) = c.forward(&x, params)?;
                x = y;
                cs.push(cache);
            }
            let row = emb.row_mut(i);
            row[..h].copy_from_slice(x.row(t_len - 1));
            for (j, s) in x.col_sums().iter().enumerate() {
                row[h + j] = s / t_len as f64;
            }
            row[2 * h] = history[(t_len - 1, i)];
            caches.push(cs);
        }
        for v in self.n_output..self.n_nodes() {
            let src = self.sources(v);
            if src.is_empty() {
                continue;
            }
            let w = 1.0 / src.len() as f64;
            for u in src {
                let eu = emb.row(u).to_vec();
                for (d, s) in emb.row_mut(v).iter_mut().zip(eu) {
                    *d += w * s;
                }
            }
        }
        Ok((emb, caches))
    }

    fn heads(&self, params: &ParamStore, emb: &Matrix) -> Result<PosteriorParams> {
        let n = self.n_nodes();
        let nz = self.nz;
        let (out_y, _) = self.output_head.forward(&emb.rows_range(0, self.n_output), params, None)?;
        let (out_l, _) = self.latent_head.forward(&emb.rows_range(self.n_output, n), params, None)?;
        let both = out_y.vcat(&out_l)?;
        Ok(PosteriorParams {
            mean: both.cols_range(0, nz),
            logvar: both.cols_range(nz, 2 * nz),
        })
    }

    /// Posterior from a `T × n_output` history.
    pub fn posterior(&self, params: &ParamStore, history: &Matrix) -> Result<PosteriorParams> {
        let (emb, _) = self.embed(params, history)?;
        self.heads(params, &emb)
    }

    pub fn draw_eps(&self, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(self.n_nodes(), self.nz, |_, _| rng.normal())
    }

    pub fn new_path(&self, rng: RngStream, span: (f64, f64)) -> Result<BrownianPath> {
        BrownianPath::new(rng, self.n_nodes(), self.nz, span)
    }

    /// Output-node rows at each time in `t_eval` (first entry is the start).
    pub fn decode(&self, params: &ParamStore, z0: &Matrix, t_eval: &[f64], path: &mut BrownianPath) -> Result<(SdeTrajectory, Vec<usize>, Vec<Matrix>)> {
        let drift = GraphField::new(&self.drift, params, &self.ctx);
        let diff = GraphField::new(&self.diffusion, params, &self.ctx);
        let scaled = Scaled {
            inner: &diff,
            scale: self.diffusion_scale,
        };
        let (sde, idx) = integrate_euler_heun_at(&drift, &scaled, z0, t_eval, path, &self.solver)?;
        let preds = idx
            .iter()
            .map(|&i| sde.traj.states[i].rows_range(0, self.n_output))
            .collect();
        Ok((sde, idx, preds))
    }

    /// Encode, sample with `eps`, decode. `history` is `T × n_output`.
    pub fn run(&self, params: &ParamStore, history: &Matrix, eps: &Matrix, t_eval: &[f64], path: &mut BrownianPath) -> Result<LatentPass> {
        let (emb, enc_caches) = self.embed(params, history)?;
        let posterior = self.heads(params, &emb)?;
        let z0 = posterior.sample_with(eps);
        let (sde, indices, predictions) = self.decode(params, &z0, t_eval, path)?;
        Ok(LatentPass {
            posterior,
            eps: eps.clone(),
            z0,
            sde,
            indices,
            predictions,
            enc_caches,
            embeddings: emb,
            history_len: history.rows(),
        })
    }

    /// Negative ELBO of a pass against `targets` (one `n_output × nz`
    /// matrix per decode time) and its gradient with respect to `θ`.
    pub fn loss_and_grad(&self, params: &ParamStore, pass: &LatentPass, targets: &[Matrix]) -> Result<(ElboTerms, Vec<f64>)> {
        let terms = elbo_terms(&pass.predictions, targets, &pass.posterior, self.sigma_obs)?;
        let n = self.n_nodes();
        let inv_var = 1.0 / (self.sigma_obs * self.sigma_obs);
        let mut cots = Vec::with_capacity(targets.len());
        for ((&i, p), y) in pass.indices.iter().zip(&pass.predictions).zip(targets) {
            let mut g = Matrix::zeros(n, self.nz);
            for r in 0..self.n_output {
                for c in 0..self.nz {
                    g[(r, c)] = (p[(r, c)] - y[(r, c)]) * inv_var;
                }
            }
            cots.push((i, g));
        }
        let drift = GraphField::new(&self.drift, params, &self.ctx);
        let diff = GraphField::new(&self.diffusion, params, &self.ctx);
        let scaled = Scaled {
            inner: &diff,
            scale: self.diffusion_scale,
        };
        let mut g_drift = vec![0.0; params.len()];
        let mut grad = vec![0.0; params.len()];
        let dz0 = backprop_euler_heun(&drift, &scaled, &pass.sde, &cots, &mut g_drift, &mut grad)?;
        for (g, d) in grad.iter_mut().zip(&g_drift) {
            *g += d;
        }

        // reparametrization and KL
        let post = &pass.posterior;
        let std = post.std();
        let d_mean = dz0.add(&post.mean);
        let d_logvar = Matrix::from_fn(n, self.nz, |i, j| {
            0.5 * dz0[(i, j)] * pass.eps[(i, j)] * std[(i, j)] + 0.5 * (post.logvar[(i, j)].exp() - 1.0)
        });
        let d_heads = d_mean.hcat(&d_logvar)?;

        let emb = &pass.embeddings;
        let (_, cy) = self.output_head.forward(&emb.rows_range(0, self.n_output), params, None)?;
        let (_, cl) = self.latent_head.forward(&emb.rows_range(self.n_output, n), params, None)?;
        let de_y = self
            .output_head
            .backward(params, None, &cy, &d_heads.rows_range(0, self.n_output), &mut grad)?;
        let de_l = self
            .latent_head
            .backward(params, None, &cl, &d_heads.rows_range(self.n_output, n), &mut grad)?;
        let mut d_emb = de_y.vcat(&de_l)?;
        for v in self.n_output..n {
            let src = self.sources(v);
            if src.is_empty() {
                continue;
            }
            let w = 1.0 / src.len() as f64;
            let dv = d_emb.row(v).to_vec();
            for u in src {
                for (d, s) in d_emb.row_mut(u).iter_mut().zip(&dv) {
                    *d += w * s;
                }
            }
        }

        let h = self.hidden();
        let t_len = pass.history_len;
        for i in 0..self.n_output {
            let mut g = Matrix::zeros(t_len, h);
            for t in 0..t_len {
                for j in 0..h {
                    g[(t, j)] = d_emb[(i, h + j)] / t_len as f64;
                }
            }
            for j in 0..h {
                g[(t_len - 1, j)] += d_emb[(i, j)];
            }
            for (c, cache) in self.encoder.iter().zip(&pass.enc_caches[i]).rev() {
                g = c.backward(params, cache, &g, &mut grad)?;
            }
        }
        Ok((terms, grad))
    }
}

/// Posterior and reparametrized sample from a history stream whose entries
/// are `n_output × 1` feature matrices.
pub fn latent_encode(
    m: &LatentGDEModel,
    params: &ParamStore,
    history: &DynamicGraphStream,
    rng: &mut RngStream,
) -> Result<(PosteriorParams, Matrix)> {
    if history.is_empty() {
        return Err(Error::invalid("empty encoder history"));
    }
    let seq = Matrix::from_fn(history.len(), m.n_output, |t, i| history.features()[t][(i, 0)]);
    let post = m.posterior(params, &seq)?;
    let eps = m.draw_eps(rng);
    let z0 = post.sample_with(&eps);
    Ok((post, z0))
}

/// Output-node trajectory of the GSDE decoder at each time in `t_eval`.
pub fn gsde_decode(
    m: &LatentGDEModel,
    params: &ParamStore,
    z0: &Matrix,
    t_eval: &[f64],
    path: &mut BrownianPath,
) -> Result<Vec<Matrix>> {
    Ok(m.decode(params, z0, t_eval, path)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_forms() {
        let zero = PosteriorParams {
            mean: Matrix::zeros(3, 1),
            logvar: Matrix::zeros(3, 1),
        };
        assert_eq!(kl_standard_normal(&zero), 0.0);
        let one = PosteriorParams {
            mean: Matrix::from_rows(&[[1.0]]),
            logvar: Matrix::zeros(1, 1),
        };
        assert!((kl_standard_normal(&one) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_log_likelihood() {
        let y = vec![Matrix::filled(2, 3, 0.7); 2];
        let ll = gaussian_log_likelihood(&y, &y, 1.0).unwrap();
        assert!((ll + 6.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!(gaussian_log_likelihood(&y, &y, 0.0).is_err());
    }

    #[test]
    fn repressilator_graph_shape() {
        let g = repressilator_graph();
        assert_eq!(g.n(), 18);
        for s in 0..6 {
            assert_eq!(g.neighbors(s).len(), 3, "species {s}");
            assert!(g.neighbors(s).iter().all(|&u| u >= 6));
        }
        assert!(g.is_symmetric());
    }
}
