//! Irregular sampling by independent Bernoulli trials.

use crate::error::{Error, Result};
use crate::graph::DynamicGraphStream;
use crate::numerics::{Matrix, RngStream};

/// Kept subset of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IrregularSeries {
    pub base_dt: f64,
    pub kept: Vec<usize>,
    pub timestamps: Vec<f64>,
}

impl IrregularSeries {
    /// Gaps between consecutive kept points in grid units.
    pub fn deltas(&self) -> Vec<usize> {
        self.kept.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Indices kept by independent Bernoulli(p) trials; index 0 is always kept.
pub fn bernoulli_mask(len: usize, p: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("keep probability {p} outside (0, 1]")));
    }
    let mut kept = Vec::with_capacity((len as f64 * p) as usize + 1);
    for i in 0..len {
        let keep = rng.bernoulli(p);
        if i == 0 || keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

pub fn bernoulli_undersample(
    stream: &DynamicGraphStream,
    p: f64,
    rng: &mut RngStream,
) -> Result<(IrregularSeries, DynamicGraphStream)> {
    let ts = stream.timestamps();
    let base_dt = if ts.len() > 1 { ts[1] - ts[0] } else { 0.0 };
    let kept = bernoulli_mask(stream.len(), p, rng)?;
    let sub = stream.select(&kept)?;
    let series = IrregularSeries {
        base_dt,
        timestamps: sub.timestamps().to_vec(),
        kept,
    };
    Ok((series, sub))
}

/// Appends two columns to every node: the gap to the previous timestamp
/// (zero for the first entry) and `sin(2πt/period)`.
pub fn add_time_features(stream: &DynamicGraphStream, period: f64) -> Result<DynamicGraphStream> {
    let ts = stream.timestamps().to_vec();
    stream.map_features(|k, x| {
        let dt = if k == 0 { 0.0 } else { ts[k] - ts[k - 1] };
        let enc = (2.0 * std::f64::consts::PI * ts[k] / period).sin();
        let extra = Matrix::from_fn(x.rows(), 2, |_, c| if c == 0 { dt } else { enc });
        x.hcat(&extra).expect("row counts match")
    })
}
