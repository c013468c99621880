//! Irregular-timestamp traffic forecasting with hybrid models.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use crate::adjoint::{hybrid_adjoint_grad, hybrid_backprop_grad, ReplayMode, TimestampedLoss};
use crate::datagen::{add_time_features, bernoulli_undersample, synth_traffic, TrafficConfig};
use crate::error::{Error, Result};
use crate::graph::{DynamicGraphStream, Graph, GraphContext};
use crate::layers::{AffineStack, FieldSpec, GcgruParams, GcnLayerSpec, LayerSpec, ParamStore};
use crate::models::baselines::gru_baseline;
use crate::models::{HybridGDEModel, JumpMap};
use crate::numerics::{ActivationKind, Matrix, RngStream};
use crate::solvers::{SolverConfig, SolverKind};
use crate::training::metrics::{forecast_metrics, stack_rows, MetricsReport};
use crate::training::{lr_schedule, AdamState, EpochRecord, ScheduleSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub traffic: TrafficConfig,
    pub keep_prob: f64,
    /// Observed graphs per window; the query follows them.
    pub window: usize,
    pub train_fraction: f64,
    /// Independently undersampled copies of the test segment.
    pub test_repeats: usize,
    /// Multiplier turning the gap feature from grid steps into an input.
    pub gap_scale: f64,
    /// Flow time per grid step.
    pub time_scale: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            traffic: TrafficConfig {
                days: 12.0,
                phase_spread: 0.0,
                ..TrafficConfig::default()
            },
            keep_prob: 0.3,
            window: 5,
            train_fraction: 0.7,
            test_repeats: 5,
            gap_scale: 0.25,
            time_scale: 0.1,
        }
    }
}

/// Observed entries plus a query entry whose speed is masked; timestamps
/// are in grid steps.
#[derive(Debug, Clone)]
pub struct ForecastWindow {
    pub stream: DynamicGraphStream,
    pub contexts: Vec<GraphContext>,
    /// Normalized speed at the query, `n × 1`.
    pub target: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForecastData {
    pub n_stations: usize,
    pub mean: f64,
    pub std: f64,
    pub train: Vec<ForecastWindow>,
    pub test: Vec<Vec<ForecastWindow>>,
}

impl ForecastData {
    pub fn denormalize(&self, z: &Matrix) -> Matrix {
        z.map(|v| v * self.std + self.mean)
    }
}

fn windows_of(stream: &DynamicGraphStream, cfg: &ForecastConfig, base_dt: f64, mean: f64, std: f64) -> Result<Vec<ForecastWindow>> {
    let feat = add_time_features(stream, 1.0)?;
    let ts: Vec<f64> = feat.timestamps().iter().map(|t| t / base_dt * cfg.time_scale).collect();
    let xs: Vec<Matrix> = feat
        .features()
        .iter()
        .map(|x| {
            Matrix::from_fn(x.rows(), 3, |i, c| match c {
                0 => (x[(i, 0)] - mean) / std,
                1 => x[(i, 1)] / base_dt * cfg.gap_scale,
                _ => x[(i, 2)],
            })
        })
        .collect();
    let full = DynamicGraphStream::new(ts, xs, feat.graphs().to_vec())?;
    let span = cfg.window + 1;
    let mut out = Vec::new();
    for s in 0..full.len().saturating_sub(span - 1) {
        let w = full.window(s, s + span);
        let target = w.features()[span - 1].cols_range(0, 1);
        let masked = w.map_features(|k, x| {
            if k == span - 1 {
                Matrix::from_fn(x.rows(), x.cols(), |i, c| if c == 0 { 0.0 } else { x[(i, c)] })
            } else {
                x.clone()
            }
        })?;
        let contexts = HybridGDEModel::contexts(&masked);
        out.push(ForecastWindow {
            stream: masked,
            contexts,
            target,
        });
    }
    Ok(out)
}

/// Surrogate series split by time, each part undersampled independently;
/// speeds are z-scored with training statistics.
pub fn prepare_forecast_data(cfg: &ForecastConfig, rng: &mut RngStream) -> Result<ForecastData> {
    if cfg.window == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.test_repeats == 0 {
        return Err(Error::invalid(format!("invalid forecast configuration {cfg:?}")));
    }
    let data = synth_traffic(&cfg.traffic, rng)?;
    let stream = &data.stream;
    let split = (stream.len() as f64 * cfg.train_fraction) as usize;
    let base_dt = stream.timestamps()[1] - stream.timestamps()[0];
    let train_reg = stream.window(0, split);
    let test_reg = stream.window(split, stream.len());
    let speeds: Vec<f64> = train_reg.features().iter().flat_map(|x| x.as_slice().to_vec()).collect();
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let var = speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / speeds.len() as f64;
    let std = var.sqrt().max(1e-9);
    let (_, train_irr) = bernoulli_undersample(&train_reg, cfg.keep_prob, rng)?;
    let train = windows_of(&train_irr, cfg, base_dt, mean, std)?;
    let mut test = Vec::with_capacity(cfg.test_repeats);
    for _ in 0..cfg.test_repeats {
        let (_, irr) = bernoulli_undersample(&test_reg, cfg.keep_prob, rng)?;
        test.push(windows_of(&irr, cfg, base_dt, mean, std)?);
    }
    if train.is_empty() || test.iter().any(|t| t.is_empty()) {
        return Err(Error::invalid("series too short for one forecast window"));
    }
    Ok(ForecastData {
        n_stations: cfg.traffic.n_stations,
        mean,
        std,
        train,
        test,
    })
}

/// Hybrid model fed a window and read at its query.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()>;

    /// Normalized speed prediction at the query, `n × 1`.
    fn predict(&self, params: &ParamStore, w: &ForecastWindow) -> Result<Matrix>;

    /// Query MSE and its gradient.
    fn loss_grad(&self, params: &ParamStore, w: &ForecastWindow) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterSpec {
    pub n_stations: usize,
    pub nx: usize,
    /// Hidden size of the graph models.
    pub hidden: usize,
    /// Hidden size of the graph-free recurrence.
    pub gru_hidden: usize,
    pub solver: SolverConfig,
    pub replay: ReplayMode,
    /// Start the flow's last layer at zero so the hybrid model begins as
    /// its jump-only counterpart.
    pub zero_flow_init: bool,
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        Self {
            n_stations: 12,
            nx: 3,
            hidden: 16,
            gru_hidden: 32,
            solver: SolverConfig::dopri5(1e-3, 1e-4),
            replay: ReplayMode::Checkpointed,
            zero_flow_init: true,
        }
    }
}

struct HybridForecaster {
    name: &'static str,
    model: HybridGDEModel,
    nz: usize,
    /// Whole network as one node with `n + 2` features.
    flat: bool,
    replay: ReplayMode,
    zeroed: Vec<String>,
}

impl HybridForecaster {
    fn flat_window(&self, w: &ForecastWindow) -> Result<(DynamicGraphStream, Vec<GraphContext>)> {
        let g = Arc::new(Graph::empty(1));
        let xs = w
            .stream
            .features()
            .iter()
            .map(|x| {
                let n = x.rows();
                Matrix::from_fn(1, n + 2, |_, c| if c < n { x[(c, 0)] } else { x[(0, c - n + 1)] })
            })
            .collect();
        let s = DynamicGraphStream::with_constant_graph(w.stream.timestamps().to_vec(), xs, g)?;
        let c = HybridGDEModel::contexts(&s);
        Ok((s, c))
    }

    fn run(&self, params: &ParamStore, w: &ForecastWindow) -> Result<(DynamicGraphStream, crate::models::HybridOutput, Matrix)> {
        let (stream, ctxs) = if self.flat {
            self.flat_window(w)?
        } else {
            (w.stream.clone(), w.contexts.clone())
        };
        let rows = if self.flat { 1 } else { w.stream.n_nodes() };
        let out = self.model.forward_with(params, &stream, &ctxs, &Matrix::zeros(rows, self.nz))?;
        let last = out.predictions.last().expect("nonempty window");
        let y = if self.flat { last.transpose() } else { last.clone() };
        Ok((stream, out, y))
    }
}

impl Forecaster for HybridForecaster {
    fn name(&self) -> &str {
        self.name
    }

    fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        self.model.register(params, rng)?;
        for name in &self.zeroed {
            let v = params.view(name)?;
            params.set(name, &Matrix::zeros(v.rows, v.cols))?;
        }
        Ok(())
    }

    fn predict(&self, params: &ParamStore, w: &ForecastWindow) -> Result<Matrix> {
        Ok(self.run(params, w)?.2)
    }

    fn loss_grad(&self, params: &ParamStore, w: &ForecastWindow) -> Result<(f64, Vec<f64>)> {
        let (stream, out, y) = self.run(params, w)?;
        let err = y.sub(&w.target);
        let n = err.len() as f64;
        let mse = err.dot(&err) / n;
        let mut g = err.scale(2.0 / n);
        if self.flat {
            g = g.transpose();
        }
        let mut loss = TimestampedLoss::new(stream.len());
        loss.set(stream.len() - 1, mse, g);
        let (grad, _) = match self.model.solver.method {
            SolverKind::Euler | SolverKind::Rk4 => hybrid_backprop_grad(&self.model, params, &stream, &out, &loss)?,
            _ => hybrid_adjoint_grad(&self.model, params, &stream, &out, &loss, self.replay)?,
        };
        Ok((mse, grad))
    }
}

fn head(prefix: &str, nz: usize, out: usize) -> AffineStack {
    AffineStack::mlp(prefix, &[nz, nz, out], ActivationKind::Relu, ActivationKind::Identity)
}

fn make_gcgru(s: &ForecasterSpec) -> Box<dyn Forecaster> {
    Box::new(HybridForecaster {
        name: "gcgru",
        model: HybridGDEModel {
            field: None,
            jump: JumpMap::Gcgru(GcgruParams::new("gcgru", s.nx, s.hidden)),
            output_map: head("gcgru.head", s.hidden, 1),
            solver: SolverConfig::fixed(SolverKind::Rk4, 1.0),
        },
        nz: s.hidden,
        flat: false,
        replay: s.replay,
        zeroed: Vec::new(),
    })
}

fn make_gcde_gru(s: &ForecasterSpec) -> Box<dyn Forecaster> {
    let h = s.hidden;
    let field = FieldSpec::new(vec![
        LayerSpec::Gcn(GcnLayerSpec::new("gcde_gru.f.0", h, h, ActivationKind::Tanh)),
        LayerSpec::Gcn(GcnLayerSpec::new("gcde_gru.f.1", h, h, ActivationKind::Identity)),
    ])
    .per_interval();
    Box::new(HybridForecaster {
        name: "gcde_gru",
        model: HybridGDEModel {
            field: Some(field),
            jump: JumpMap::Gcgru(GcgruParams::new("gcde_gru", s.nx, h)),
            output_map: head("gcde_gru.head", h, 1),
            solver: s.solver.clone(),
        },
        nz: h,
        flat: false,
        replay: s.replay,
        zeroed: if s.zero_flow_init { vec!["gcde_gru.f.1.w".into()] } else { Vec::new() },
    })
}

fn make_gru(s: &ForecasterSpec) -> Box<dyn Forecaster> {
    let nx = s.n_stations + s.nx - 1;
    Box::new(HybridForecaster {
        name: "gru",
        model: gru_baseline("gru", nx, s.gru_hidden, head("gru.head", s.gru_hidden, s.n_stations)),
        nz: s.gru_hidden,
        flat: true,
        replay: s.replay,
        zeroed: Vec::new(),
    })
}

type ForecasterCtor = fn(&ForecasterSpec) -> Box<dyn Forecaster>;

/// Name → constructor table for forecasting models.
pub struct ForecasterRegistry {
    ctors: BTreeMap<&'static str, ForecasterCtor>,
}

impl ForecasterRegistry {
    pub fn empty() -> Self {
        Self { ctors: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, ctor: ForecasterCtor) {
        self.ctors.insert(name, ctor);
    }

    pub fn build(&self, name: &str, spec: &ForecasterSpec) -> Result<Box<dyn Forecaster>> {
        let ctor = self.ctors.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "forecast model",
            name: name.to_string(),
        })?;
        Ok(ctor(spec))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.ctors.keys().copied().collect()
    }

    /// `gcde_gru`, `gcgru` and `gru`.
    pub fn global() -> &'static ForecasterRegistry {
        static REG: OnceLock<ForecasterRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let mut r = ForecasterRegistry::empty();
            r.register("gcde_gru", make_gcde_gru);
            r.register("gcgru", make_gcgru);
            r.register("gru", make_gru);
            r
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTrainConfig {
    pub epochs: usize,
    pub schedule: ScheduleSpec,
    /// Windows per optimizer step.
    pub batch_size: usize,
}

impl Default for ForecastTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            schedule: ScheduleSpec::CosineAnnealing {
                t0: 10,
                lr_max: 1e-2,
                lr_min: 0.0,
            },
            batch_size: 8,
        }
    }
}

pub fn train_forecaster(
    model: &dyn Forecaster,
    params: &mut ParamStore,
    data: &ForecastData,
    cfg: &ForecastTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<EpochRecord>> {
    cfg.schedule.validate()?;
    let mut adam = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(&cfg.schedule, epoch);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; params.len()];
            for &w in chunk {
                let (l, g) = model.loss_grad(params, &data.train[w])?;
                total += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / chunk.len() as f64;
                }
            }
            adam.step(params.theta_mut(), &grad, lr)?;
        }
        records.push(EpochRecord::train(epoch + 1, total / order.len() as f64, lr));
    }
    Ok(records)
}

/// Test metrics in original units, averaged over the undersampled copies.
pub fn evaluate_forecaster(model: &dyn Forecaster, params: &ParamStore, data: &ForecastData) -> Result<MetricsReport> {
    let mut acc = MetricsReport {
        mape: 0.0,
        mape_signed_sum: 0.0,
        rmse: 0.0,
        mse: 0.0,
    };
    for windows in &data.test {
        let mut preds = Vec::with_capacity(windows.len());
        let mut targets = Vec::with_capacity(windows.len());
        for w in windows {
            preds.push(data.denormalize(&model.predict(params, w)?).transpose());
            targets.push(data.denormalize(&w.target).transpose());
        }
        let r = forecast_metrics(&stack_rows(&targets)?, &stack_rows(&preds)?)?;
        acc.mape += r.mape;
        acc.mape_signed_sum += r.mape_signed_sum;
        acc.rmse += r.rmse;
        acc.mse += r.mse;
    }
    let k = data.test.len() as f64;
    Ok(MetricsReport {
        mape: acc.mape / k,
        mape_signed_sum: acc.mape_signed_sum / k,
        rmse: acc.rmse / k,
        mse: acc.mse / k,
    })
}
