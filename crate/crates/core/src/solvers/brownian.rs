use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{hash3, Matrix, RngStream};

const DEPTH: u32 = 40;
const TAG_END: u64 = 1;
const TAG_MID: u64 = 2;
const TAG_OFF_GRID: u64 = 3;

/// A Brownian motion on `[t0, t1]` that can be queried at any time in any
/// order. Values on the dyadic grid of depth 40 are fixed by bridge descent
/// from `W(t0) = 0`; off-grid times draw a bridge sample inside their finest
/// cell, keyed on the bits of the time, so the same query always returns the
/// same value.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    rng: RngStream,
    rows: usize,
    cols: usize,
    t0: f64,
    t1: f64,
    cache: HashMap<u64, Matrix>,
}

impl BrownianPath {
    pub fn new(rng: RngStream, rows: usize, cols: usize, span: (f64, f64)) -> Result<Self> {
        if !(span.1 > span.0) {
            return Err(Error::invalid(format!("Brownian span [{}, {}] is empty", span.0, span.1)));
        }
        Ok(Self {
            rng,
            rows,
            cols,
            t0: span.0,
            t1: span.1,
            cache: HashMap::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    fn noise(&self, tag: u64, key: u64) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.rng.normal_at(hash3(tag, key, (i * self.cols + j) as u64))
        })
    }

    fn grid_value(&mut self, k: u64) -> Matrix {
        let full = 1u64 << DEPTH;
        if k == 0 {
            return Matrix::zeros(self.rows, self.cols);
        }
        let w_end = match self.cache.get(&full) {
            Some(w) => w.clone(),
            None => {
                let w = self.noise(TAG_END, 0).scale((self.t1 - self.t0).sqrt());
                self.cache.insert(full, w.clone());
                w
            }
        };
        if k == full {
            return w_end;
        }
        let dt_unit = (self.t1 - self.t0) / full as f64;
        let (mut lo, mut hi) = (0u64, full);
        let mut w_lo = Matrix::zeros(self.rows, self.cols);
        let mut w_hi = w_end;
        loop {
            let mid = lo + (hi - lo) / 2;
            let w_mid = match self.cache.get(&mid) {
                Some(w) => w.clone(),
                None => {
                    let std = (0.25 * (hi - lo) as f64 * dt_unit).sqrt();
                    let mut w = w_lo.add(&w_hi).scale(0.5);
                    w.axpy(std, &self.noise(TAG_MID, mid));
                    self.cache.insert(mid, w.clone());
                    w
                }
            };
            if k == mid {
                return w_mid;
            }
            if k < mid {
                hi = mid;
                w_hi = w_mid;
            } else {
                lo = mid;
                w_lo = w_mid;
            }
        }
    }

    /// `W(t) − W(t0)`.
    pub fn value(&mut self, t: f64) -> Result<Matrix> {
        if !(t >= self.t0 && t <= self.t1) {
            return Err(Error::OutsideSpan {
                t,
                start: self.t0,
                end: self.t1,
            });
        }
        let full = (1u64 << DEPTH) as f64;
        let pos = (t - self.t0) / (self.t1 - self.t0) * full;
        let lo = pos.floor();
        if pos == lo {
            return Ok(self.grid_value(lo as u64));
        }
        let k = lo as u64;
        let w_lo = self.grid_value(k);
        let w_hi = self.grid_value(k + 1);
        let frac = pos - lo;
        let cell = (self.t1 - self.t0) / full;
        let std = (frac * (1.0 - frac) * cell).sqrt();
        let mut w = w_lo.scale(1.0 - frac);
        w.axpy(frac, &w_hi);
        w.axpy(std, &self.noise(TAG_OFF_GRID, t.to_bits()));
        Ok(w)
    }

    /// `W(t) − W(s)`; negative when `t < s`.
    pub fn increment(&mut self, s: f64, t: f64) -> Result<Matrix> {
        let ws = self.value(s)?;
        Ok(self.value(t)?.sub(&ws))
    }

    pub fn cached_points(&self) -> usize {
        self.cache.len()
    }
}

/// Convenience wrapper for a one-off increment.
pub fn brownian_increment(path: &mut BrownianPath, s: f64, t: f64) -> Result<Matrix> {
    path.increment(s, t)
}
