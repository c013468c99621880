use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::numerics::{ActivationKind, Matrix, RngStream};

/// Causal 1-D convolution over a `T × channels` sequence:
/// `y_t = σ(Σ_k x_{t−k} W_k + b)` with `x_{t<0} = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub activation: ActivationKind,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct TemporalConvCache {
    input: Matrix,
    pre: Matrix,
    out: Matrix,
}

/// Rows shifted down by `k` with zero fill.
fn shift_down(x: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in k..x.rows() {
        out.row_mut(t).copy_from_slice(x.row(t - k));
    }
    out
}

fn shift_up(x: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for t in k..x.rows() {
        out.row_mut(t - k).copy_from_slice(x.row(t));
    }
    out
}

impl TemporalConvSpec {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, activation: ActivationKind) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            activation,
            name: name.to_string(),
        }
    }

    fn tap(&self, k: usize) -> String {
        format!("{}.w{k}", self.name)
    }

    fn bias(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register(&self, params: &mut ParamStore, rng: &mut RngStream) -> Result<()> {
        let bound = (6.0 / (self.in_ch * self.kernel + self.out_ch) as f64).sqrt();
        for k in 0..self.kernel {
            let view = params.add(self.tap(k), self.in_ch, self.out_ch)?;
            for v in &mut params.theta_mut()[view.range()] {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        params.add(self.bias(), 1, self.out_ch)?;
        Ok(())
    }

    pub fn forward(&self, x: &Matrix, params: &ParamStore) -> Result<(Matrix, TemporalConvCache)> {
        if x.cols() != self.in_ch {
            return Err(Error::Shape {
                op: "temporal conv",
                lhs: x.shape(),
                rhs: (x.rows(), self.in_ch),
            });
        }
        let mut pre = Matrix::zeros(x.rows(), self.out_ch);
        for k in 0..self.kernel {
            let w = params.get(&self.tap(k))?;
            pre.add_assign(&shift_down(x, k).matmul(&w)?);
        }
        let pre = pre.add_row(params.slice(&self.bias())?);
        let out = self.activation.apply(&pre);
        Ok((
            out.clone(),
            TemporalConvCache {
                input: x.clone(),
                pre,
                out,
            },
        ))
    }

    pub fn backward(&self, params: &ParamStore, cache: &TemporalConvCache, lambda: &Matrix, dtheta: &mut [f64]) -> Result<Matrix> {
        let delta = self.activation.vjp(&cache.pre, &cache.out, lambda);
        params.accumulate_slice(dtheta, &self.bias(), &delta.col_sums())?;
        let mut dx = Matrix::zeros(cache.input.rows(), self.in_ch);
        for k in 0..self.kernel {
            let w = params.get(&self.tap(k))?;
            params.accumulate(dtheta, &self.tap(k), &shift_down(&cache.input, k).t_matmul(&delta)?)?;
            dx.add_assign(&shift_up(&delta.matmul_t(&w)?, k));
        }
        Ok(dx)
    }
}
