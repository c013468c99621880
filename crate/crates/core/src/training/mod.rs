//! Optimizers, schedules, metrics and the experiment training loops.

pub mod classify;
pub mod forecast;
pub mod latent;
pub mod metrics;
pub mod optim;
pub mod particles;
pub mod schedule;

pub use metrics::{extrapolation_eval, forecast_metrics, mape, stack_rows, Extrapolation, MetricsReport};
pub use optim::{adam_step, AdamState};
pub use schedule::{lr_schedule, ScheduleSpec};

/// One row of a metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub mape: Option<f64>,
    pub rmse: Option<f64>,
    pub lr: f64,
    pub seconds: Option<f64>,
}

impl EpochRecord {
    pub fn train(epoch: usize, loss: f64, lr: f64) -> Self {
        Self {
            epoch,
            split: "train".into(),
            loss,
            mape: None,
            rmse: None,
            lr,
            seconds: None,
        }
    }

    pub fn with_split(mut self, split: &str) -> Self {
        self.split = split.into();
        self
    }

    pub fn with_metrics(mut self, mape: f64, rmse: f64) -> Self {
        self.mape = Some(mape);
        self.rmse = Some(rmse);
        self
    }

    pub fn with_seconds(mut self, seconds: f64) -> Self {
        self.seconds = Some(seconds);
        self
    }
}
