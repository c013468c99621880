//! Synthetic traffic-speed network: stations in the unit square with a
//! daily speed cycle, graph-diffusive AR(1) fluctuations and a
//! percentile-thresholded distance graph.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{distance_threshold_adjacency, DynamicGraphStream, Graph, ThresholdMode};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficConfig {
    pub n_stations: usize,
    pub days: f64,
    pub steps_per_day: usize,
    pub base_speed: f64,
    pub amplitude: f64,
    /// Scale of the position-dependent offset of the daily cycle; 0 gives
    /// every station the same phase.
    pub phase_spread: f64,
    /// AR(1) persistence of the fluctuation.
    pub ar: f64,
    /// Weight of the pull toward the neighbor mean.
    pub coupling: f64,
    pub noise: f64,
    pub percentile: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            n_stations: 12,
            days: 4.0,
            steps_per_day: 48,
            base_speed: 60.0,
            amplitude: 15.0,
            phase_spread: 1.0,
            ar: 0.9,
            coupling: 0.6,
            noise: 3.0,
            percentile: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrafficData {
    /// Timestamps in days; one speed column per station.
    pub stream: DynamicGraphStream,
    pub positions: Vec<[f64; 2]>,
    pub graph: Arc<Graph>,
}

pub fn station_phase(pos: [f64; 2], spread: f64) -> f64 {
    spread * std::f64::consts::PI * (pos[0] + pos[1])
}

pub fn synth_traffic(cfg: &TrafficConfig, rng: &mut RngStream) -> Result<TrafficData> {
    if cfg.n_stations < 2 || cfg.steps_per_day == 0 || !(cfg.days > 0.0) {
        return Err(Error::invalid(format!("invalid traffic configuration {cfg:?}")));
    }
    let n = cfg.n_stations;
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.uniform(), rng.uniform()]).collect();
    let graph = Arc::new(distance_threshold_adjacency(&positions, ThresholdMode::Percentile(cfg.percentile))?);
    let steps = (cfg.days * cfg.steps_per_day as f64).round() as usize;
    let dt = 1.0 / cfg.steps_per_day as f64;
    let mut u = vec![0.0; n];
    let mut timestamps = Vec::with_capacity(steps);
    let mut features = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = dt * k as f64;
        let x = Matrix::from_fn(n, 1, |i, _| {
            cfg.base_speed + cfg.amplitude * (2.0 * std::f64::consts::PI * t + station_phase(positions[i], cfg.phase_spread)).sin() + u[i]
        });
        timestamps.push(t);
        features.push(x);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let nb = graph.neighbors(i);
                let pull = if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|&j| u[j]).sum::<f64>() / nb.len() as f64 - u[i]
                };
                cfg.ar * u[i] + cfg.coupling * pull + cfg.noise * rng.normal()
            })
            .collect();
        u = next;
    }
    let stream = DynamicGraphStream::with_constant_graph(timestamps, features, graph.clone())?;
    Ok(TrafficData {
        stream,
        positions,
        graph,
    })
}
