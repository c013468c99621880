use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant(f64),
    /// Warm restarts every `t0` epochs.
    CosineAnnealing { t0: usize, lr_max: f64, lr_min: f64 },
    /// Linear ramp `lr_min → lr_max` up to `peak`, cosine decay back to
    /// `lr_min` at `total`, constant afterwards.
    OneCycle {
        lr_max: f64,
        peak: usize,
        lr_min: f64,
        total: usize,
    },
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScheduleSpec::Constant(lr) => lr > 0.0,
            ScheduleSpec::CosineAnnealing { t0, lr_max, lr_min } => t0 > 0 && lr_min <= lr_max && lr_min >= 0.0,
            ScheduleSpec::OneCycle {
                lr_max,
                peak,
                lr_min,
                total,
            } => peak < total && lr_min <= lr_max && lr_min >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid schedule {self}")))
        }
    }
}

pub fn lr_schedule(spec: &ScheduleSpec, epoch: usize) -> f64 {
    match *spec {
        ScheduleSpec::Constant(lr) => lr,
        ScheduleSpec::CosineAnnealing { t0, lr_max, lr_min } => {
            let phase = (epoch % t0) as f64 / t0 as f64;
            lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * phase).cos())
        }
        ScheduleSpec::OneCycle {
            lr_max,
            peak,
            lr_min,
            total,
        } => {
            if epoch <= peak {
                if peak == 0 {
                    return lr_max;
                }
                lr_min + (lr_max - lr_min) * epoch as f64 / peak as f64
            } else if epoch >= total {
                lr_min
            } else {
                let phase = (epoch - peak) as f64 / (total - peak) as f64;
                lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * phase).cos())
            }
        }
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScheduleSpec::Constant(lr) => write!(f, "constant:{lr}"),
            ScheduleSpec::CosineAnnealing { t0, lr_max, lr_min } => write!(f, "cosine:{t0}:{lr_max}:{lr_min}"),
            ScheduleSpec::OneCycle {
                lr_max,
                peak,
                lr_min,
                total,
            } => write!(f, "one_cycle:{lr_max}:{peak}:{lr_min}:{total}"),
        }
    }
}

/// Parses `constant:LR`, `cosine:T0:LR_MAX:LR_MIN` or
/// `one_cycle:LR_MAX:PEAK:LR_MIN:TOTAL`.
impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::invalid(format!("cannot parse schedule `{s}`"));
        let f = |i: usize| parts.get(i).ok_or_else(bad)?.trim().parse::<f64>().map_err(|_| bad());
        let u = |i: usize| parts.get(i).ok_or_else(bad)?.trim().parse::<usize>().map_err(|_| bad());
        let spec = match (parts[0], parts.len()) {
            ("constant", 2) => ScheduleSpec::Constant(f(1)?),
            ("cosine", 4) => ScheduleSpec::CosineAnnealing {
                t0: u(1)?,
                lr_max: f(2)?,
                lr_min: f(3)?,
            },
            ("one_cycle", 5) => ScheduleSpec::OneCycle {
                lr_max: f(1)?,
                peak: u(2)?,
                lr_min: f(3)?,
                total: u(4)?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}
