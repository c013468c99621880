//! Latent GSDE fit on stochastic repressilator trajectories.

use rand::RngCore;

use crate::datagen::{tau_leap_repressilator, TauLeapConfig, N_SPECIES};
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::{repressilator_graph, LatentGDEModel, LatentPass};
use crate::numerics::{Matrix, RngStream};
use crate::solvers::{SdeTrajectory, SolverConfig};
use crate::training::{lr_schedule, AdamState, EpochRecord, ScheduleSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentConfig {
    pub tau: TauLeapConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Seconds of each trajectory fed to the encoder.
    pub condition_time: f64,
    /// Seconds simulated past the training horizon for test trajectories.
    pub extrapolation: f64,
    /// Model time per second.
    pub time_scale: f64,
    /// Every `target_stride`-th sample after the conditioning window is a
    /// decode target.
    pub target_stride: usize,
    pub hidden: usize,
    pub solver: SolverConfig,
    pub epochs: usize,
    pub schedule: ScheduleSpec,
    /// Decoder samples per test trajectory.
    pub n_samples: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            tau: TauLeapConfig::default(),
            n_train: 10,
            n_test: 10,
            condition_time: 150.0,
            extrapolation: 50.0,
            time_scale: 0.1,
            target_stride: 10,
            hidden: 16,
            solver: SolverConfig::euler_heun_adaptive(0.1, 1e-3, 1e-3),
            epochs: 1000,
            schedule: ScheduleSpec::OneCycle {
                lr_max: 1e-2,
                peak: 300,
                lr_min: 4e-4,
                total: 1000,
            },
            n_samples: 8,
        }
    }
}

/// Min–max normalized trajectories, `T × 6` each, sampled on `times`.
#[derive(Debug, Clone)]
pub struct RepressilatorData {
    pub times: Vec<f64>,
    pub train: Vec<Matrix>,
    /// Test trajectories run `extrapolation` seconds longer.
    pub test: Vec<Matrix>,
    pub test_times: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RepressilatorData {
    pub fn denormalize(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| self.min[c] + x[(r, c)] * (self.max[c] - self.min[c]))
    }
}

fn stack(traj: &crate::solvers::Trajectory) -> Matrix {
    let rows: Vec<&[f64]> = traj.states.iter().map(|s| s.as_slice()).collect();
    Matrix::from_rows(&rows)
}

/// `n_train` and `n_test` τ-leap runs from the default initial state.
/// Normalization bounds come from the training runs.
pub fn repressilator_dataset(cfg: &LatentConfig, rng: &mut RngStream) -> Result<RepressilatorData> {
    if cfg.n_train == 0 {
        return Err(Error::invalid("need at least one training trajectory"));
    }
    let mut train_raw = Vec::with_capacity(cfg.n_train);
    let mut times = Vec::new();
    for _ in 0..cfg.n_train {
        let tr = tau_leap_repressilator(&cfg.tau, rng)?;
        times = tr.times.clone();
        train_raw.push(stack(&tr));
    }
    let test_cfg = TauLeapConfig {
        horizon: cfg.tau.horizon + cfg.extrapolation,
        ..cfg.tau
    };
    let mut test_raw = Vec::with_capacity(cfg.n_test);
    let mut test_times = Vec::new();
    for _ in 0..cfg.n_test {
        let tr = tau_leap_repressilator(&test_cfg, rng)?;
        test_times = tr.times.clone();
        test_raw.push(stack(&tr));
    }
    let mut min = vec![f64::INFINITY; N_SPECIES];
    let mut max = vec![f64::NEG_INFINITY; N_SPECIES];
    for m in &train_raw {
        for r in 0..m.rows() {
            for c in 0..N_SPECIES {
                min[c] = min[c].min(m[(r, c)]);
                max[c] = max[c].max(m[(r, c)]);
            }
        }
    }
    for c in 0..N_SPECIES {
        if max[c] - min[c] < 1e-12 {
            max[c] = min[c] + 1.0;
        }
    }
    let norm = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |r, c| (m[(r, c)] - min[c]) / (max[c] - min[c]));
    Ok(RepressilatorData {
        train: train_raw.iter().map(norm).collect(),
        test: test_raw.iter().map(norm).collect(),
        times,
        test_times,
        min,
        max,
    })
}

/// Encoder history, decode times (model units) and targets for one
/// trajectory.
#[derive(Debug, Clone)]
pub struct LatentSample {
    pub history: Matrix,
    pub t_eval: Vec<f64>,
    /// Sample index of each decode time.
    pub rows: Vec<usize>,
    pub targets: Vec<Matrix>,
}

pub fn latent_sample(traj: &Matrix, times: &[f64], cfg: &LatentConfig) -> Result<LatentSample> {
    let split = times.iter().position(|&t| t >= cfg.condition_time - 1e-9).ok_or_else(|| {
        Error::invalid(format!("trajectory ends before the {} s conditioning window", cfg.condition_time))
    })?;
    if split == 0 || split + 1 >= times.len() {
        return Err(Error::invalid("conditioning window leaves nothing to encode or decode"));
    }
    let stride = cfg.target_stride.max(1);
    let rows: Vec<usize> = (split..times.len()).step_by(stride).collect();
    Ok(LatentSample {
        history: traj.rows_range(0, split),
        t_eval: rows.iter().map(|&r| times[r] * cfg.time_scale).collect(),
        targets: rows
            .iter()
            .map(|&r| Matrix::from_fn(N_SPECIES, 1, |i, _| traj[(r, i)]))
            .collect(),
        rows,
    })
}

pub fn repressilator_model(cfg: &LatentConfig) -> Result<LatentGDEModel> {
    LatentGDEModel::new(repressilator_graph(), N_SPECIES, cfg.hidden, cfg.solver.clone())
}

/// One encode–decode with fresh posterior and Brownian noise.
pub fn latent_pass(model: &LatentGDEModel, params: &ParamStore, s: &LatentSample, rng: &mut RngStream) -> Result<LatentPass> {
    let eps = model.draw_eps(rng);
    let span = (s.t_eval[0], *s.t_eval.last().expect("nonempty"));
    let id = rng.next_u64();
    let mut path = model.new_path(rng.split(id), span)?;
    model.run(params, &s.history, &eps, &s.t_eval, &mut path)
}

/// Adam step per trajectory on the negative ELBO; `loss` is the epoch mean.
pub fn train_latent(
    model: &LatentGDEModel,
    params: &mut ParamStore,
    samples: &[LatentSample],
    epochs: usize,
    schedule: &ScheduleSpec,
    rng: &mut RngStream,
) -> Result<Vec<EpochRecord>> {
    schedule.validate()?;
    let mut adam = AdamState::new(params.len());
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = lr_schedule(schedule, epoch);
        let mut total = 0.0;
        for s in samples {
            let pass = latent_pass(model, params, s, rng)?;
            let (terms, grad) = model.loss_and_grad(params, &pass, &s.targets)?;
            total += terms.loss();
            adam.step(params.theta_mut(), &grad, lr)?;
        }
        records.push(EpochRecord::train(epoch + 1, total / samples.len() as f64, lr));
    }
    Ok(records)
}

/// Decoder samples summarized per decode time; all matrices are
/// `decode times × 6` in normalized units.
#[derive(Debug, Clone)]
pub struct SampleBand {
    /// Seconds.
    pub times: Vec<f64>,
    pub mean: Matrix,
    pub lo: Matrix,
    pub hi: Matrix,
    pub target: Matrix,
}

impl SampleBand {
    pub fn mse(&self) -> f64 {
        let e = self.mean.sub(&self.target);
        e.dot(&e) / e.len() as f64
    }

    /// Fraction of targets inside the min–max band.
    pub fn coverage(&self) -> f64 {
        let inside = (0..self.target.len())
            .filter(|&i| {
                let (l, h, y) = (self.lo.as_slice()[i], self.hi.as_slice()[i], self.target.as_slice()[i]);
                l <= y && y <= h
            })
            .count();
        inside as f64 / self.target.len() as f64
    }
}

/// `n_samples` decodes of one test trajectory. Also returns the first
/// sample's pass for attention inspection.
pub fn sample_band(
    model: &LatentGDEModel,
    params: &ParamStore,
    s: &LatentSample,
    times: &[f64],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<(SampleBand, LatentPass)> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one decoder sample"));
    }
    let k = s.t_eval.len();
    let mut sum = Matrix::zeros(k, N_SPECIES);
    let mut lo = Matrix::filled(k, N_SPECIES, f64::INFINITY);
    let mut hi = Matrix::filled(k, N_SPECIES, f64::NEG_INFINITY);
    let mut first = None;
    for _ in 0..n_samples {
        let pass = latent_pass(model, params, s, rng)?;
        for (t, p) in pass.predictions.iter().enumerate() {
            for c in 0..N_SPECIES {
                let v = p[(c, 0)];
                sum[(t, c)] += v / n_samples as f64;
                lo[(t, c)] = lo[(t, c)].min(v);
                hi[(t, c)] = hi[(t, c)].max(v);
            }
        }
        first.get_or_insert(pass);
    }
    let target = Matrix::from_fn(k, N_SPECIES, |t, c| s.targets[t][(c, 0)]);
    let band = SampleBand {
        times: s.rows.iter().map(|&r| times[r]).collect(),
        mean: sum,
        lo,
        hi,
        target,
    };
    Ok((band, first.expect("n_samples ≥ 1")))
}

/// One attention coefficient over the decode.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub node: usize,
    pub neighbor: usize,
    /// `true` for `α[node, neighbor]`, `false` for `α[neighbor, node]`.
    pub incoming: bool,
    pub values: Vec<f64>,
}

/// Drift GAT coefficients on every edge incident to an output node, at
/// each step of a decoded trajectory. Times are returned in seconds.
pub fn attention_traces(
    model: &LatentGDEModel,
    params: &ParamStore,
    sde: &SdeTrajectory,
    time_scale: f64,
) -> Result<(Vec<f64>, Vec<AttentionTrace>)> {
    let g = &model.ctx.graph;
    let mut traces = Vec::new();
    for v in 0..model.n_output {
        for &u in g.neighbors(v) {
            for incoming in [true, false] {
                traces.push(AttentionTrace {
                    node: v,
                    neighbor: u,
                    incoming,
                    values: Vec::with_capacity(sde.traj.times.len()),
                });
            }
        }
    }
    for (&t, z) in sde.traj.times.iter().zip(&sde.traj.states) {
        let alphas = model.drift.attention(t, z, params, &model.ctx)?;
        let a = alphas.first().ok_or_else(|| Error::invalid("drift has no attention layer"))?;
        for tr in &mut traces {
            let (r, c) = if tr.incoming { (tr.node, tr.neighbor) } else { (tr.neighbor, tr.node) };
            tr.values.push(a[(r, c)]);
        }
    }
    let times = sde.traj.times.iter().map(|t| t / time_scale).collect();
    Ok((times, traces))
}
