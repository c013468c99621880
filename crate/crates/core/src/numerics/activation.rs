use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Elementwise (or row-wise, for softmax) nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
    /// Slope for negative inputs, in `(0, 1)`.
    LeakyRelu(f64),
    SoftmaxRows,
}

impl ActivationKind {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} outside (0, 1)")));
        }
        Ok(ActivationKind::LeakyRelu(slope))
    }

    #[inline]
    fn scalar(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            ActivationKind::SoftmaxRows => unreachable!("softmax is row-wise"),
        }
    }

    /// Derivative expressed through the input `x` and the output `y = σ(x)`.
    #[inline]
    fn scalar_derivative(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Tanh => 1.0 - y * y,
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            ActivationKind::SoftmaxRows => y * (1.0 - y),
        }
    }

    pub fn apply(self, x: &Matrix) -> Matrix {
        match self {
            ActivationKind::Identity => x.clone(),
            ActivationKind::SoftmaxRows => softmax_rows(x),
            _ => x.map(|v| self.scalar(v)),
        }
    }

    /// Reverse-mode product: given pre-activation `x`, output `y = σ(x)` and
    /// cotangent `lambda` on `y`, returns the cotangent on `x`.
    pub fn vjp(self, x: &Matrix, y: &Matrix, lambda: &Matrix) -> Matrix {
        match self {
            ActivationKind::Identity => lambda.clone(),
            ActivationKind::SoftmaxRows => softmax_rows_vjp(y, lambda),
            _ => {
                let mut out = lambda.clone();
                for ((o, &xv), &yv) in out.as_mut_slice().iter_mut().zip(x.as_slice()).zip(y.as_slice()) {
                    *o *= self.scalar_derivative(xv, yv);
                }
                out
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Identity => write!(f, "identity"),
            ActivationKind::Tanh => write!(f, "tanh"),
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            ActivationKind::SoftmaxRows => write!(f, "softmax_rows"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" | "none" => Ok(ActivationKind::Identity),
            "tanh" => Ok(ActivationKind::Tanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "relu" => Ok(ActivationKind::Relu),
            "softmax_rows" => Ok(ActivationKind::SoftmaxRows),
            _ => {
                if let Some(arg) = s.strip_prefix("leaky_relu(").and_then(|r| r.strip_suffix(')')) {
                    let slope: f64 = arg
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad leaky_relu slope `{arg}`")))?;
                    ActivationKind::leaky_relu(slope)
                } else {
                    Err(Error::UnknownStrategy {
                        kind: "activation",
                        name: s.to_string(),
                    })
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise softmax VJP: `dx_i = y_i ⊙ (λ_i − ⟨λ_i, y_i⟩)`.
pub fn softmax_rows_vjp(y: &Matrix, lambda: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let lr = lambda.row(i);
        let inner: f64 = yr.iter().zip(lr).map(|(a, b)| a * b).sum();
        for (o, (&yv, &lv)) in out.row_mut(i).iter_mut().zip(yr.iter().zip(lr)) {
            *o = yv * (lv - inner);
        }
    }
    out
}

/// Evaluates `σ(x)` and its elementwise derivative.
///
/// For [`ActivationKind::SoftmaxRows`] the derivative slot carries only the
/// diagonal terms `y ⊙ (1 − y)`; use [`softmax_rows_vjp`] for the full
/// Jacobian action.
pub fn activation(kind: ActivationKind, x: &Matrix) -> (Matrix, Matrix) {
    let value = kind.apply(x);
    let derivative = x.zip_map(&value, |xv, yv| kind.scalar_derivative(xv, yv));
    (value, derivative)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Matrix {
        Matrix::from_rows(&[[x]])
    }

    #[test]
    fn tanh_at_zero() {
        let (v, d) = activation(ActivationKind::Tanh, &one(0.0));
        assert_eq!(v[(0, 0)], 0.0);
        assert_eq!(d[(0, 0)], 1.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let (v, d) = activation(ActivationKind::Sigmoid, &one(0.0));
        assert_eq!(v[(0, 0)], 0.5);
        assert_eq!(d[(0, 0)], 0.25);
    }

    #[test]
    fn leaky_relu_negative() {
        let (v, d) = activation(ActivationKind::LeakyRelu(0.01), &one(-1.0));
        assert_eq!(v[(0, 0)], -0.01);
        assert_eq!(d[(0, 0)], 0.01);
    }

    #[test]
    fn leaky_slope_validated() {
        assert!(ActivationKind::leaky_relu(0.0).is_err());
        assert!(ActivationKind::leaky_relu(1.0).is_err());
        assert!("leaky_relu(0.2)".parse::<ActivationKind>().is_ok());
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-5.0, 0.0, 700.0]]);
        let y = softmax_rows(&x);
        for s in y.row_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn display_roundtrip() {
        for k in [
            ActivationKind::Identity,
            ActivationKind::Tanh,
            ActivationKind::Sigmoid,
            ActivationKind::Relu,
            ActivationKind::LeakyRelu(0.2),
            ActivationKind::SoftmaxRows,
        ] {
            assert_eq!(k.to_string().parse::<ActivationKind>().unwrap(), k);
        }
    }
}
