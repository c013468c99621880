use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Forecast errors over `T` time points and `p` sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Mean absolute percentage error, percent.
    pub mape: f64,
    /// `100/(pT)·‖Σ_t (y_t − ŷ_t) ⊘ y_t‖₁`: signed errors summed over
    /// time before the absolute value.
    pub mape_signed_sum: f64,
    /// Per-sensor RMSE averaged over sensors.
    pub rmse: f64,
    pub mse: f64,
}

const MAPE_FLOOR: f64 = 1e-9;

fn check(targets: &Matrix, predictions: &Matrix) -> Result<()> {
    if targets.shape() != predictions.shape() {
        return Err(Error::Shape {
            op: "forecast_metrics",
            lhs: targets.shape(),
            rhs: predictions.shape(),
        });
    }
    if targets.is_empty() {
        return Err(Error::invalid("no forecast points"));
    }
    Ok(())
}

/// Conventional MAPE in percent; errors on targets with `|y| < 1e−9`.
pub fn mape(targets: &Matrix, predictions: &Matrix) -> Result<f64> {
    check(targets, predictions)?;
    let mut acc = 0.0;
    for (y, p) in targets.as_slice().iter().zip(predictions.as_slice()) {
        if y.abs() < MAPE_FLOOR {
            return Err(Error::invalid(format!("MAPE target {y:e} is too close to zero")));
        }
        acc += ((y - p) / y).abs();
    }
    Ok(100.0 * acc / targets.len() as f64)
}

/// `targets` and `predictions` are `T × p`.
pub fn forecast_metrics(targets: &Matrix, predictions: &Matrix) -> Result<MetricsReport> {
    let mape_conv = mape(targets, predictions)?;
    let (t, p) = targets.shape();
    let mut signed = vec![0.0; p];
    let mut sq = vec![0.0; p];
    for i in 0..t {
        for j in 0..p {
            let (y, yh) = (targets[(i, j)], predictions[(i, j)]);
            signed[j] += (y - yh) / y;
            sq[j] += (y - yh) * (y - yh);
        }
    }
    let n = (t * p) as f64;
    Ok(MetricsReport {
        mape: mape_conv,
        mape_signed_sum: 100.0 * signed.iter().map(|s| s.abs()).sum::<f64>() / n,
        rmse: sq.iter().map(|s| (s / t as f64).sqrt()).sum::<f64>() / p as f64,
        mse: sq.iter().sum::<f64>() / n,
    })
}

/// Row-stacks a sequence of equally shaped matrices into `T × (rows·cols)`.
pub fn stack_rows(seq: &[Matrix]) -> Result<Matrix> {
    let first = seq.first().ok_or_else(|| Error::invalid("empty sequence"))?;
    let width = first.len();
    let mut data = Vec::with_capacity(width * seq.len());
    for m in seq {
        if m.len() != width {
            return Err(Error::invalid("sequence entries differ in size"));
        }
        data.extend_from_slice(m.as_slice());
    }
    Matrix::from_vec(seq.len(), width, data)
}

/// Predictions and targets of an extrapolation run, with the number of
/// self-fed steps behind each prediction (1 = fed the nominal state).
#[derive(Debug, Clone, Default)]
pub struct Extrapolation {
    pub predictions: Vec<Matrix>,
    pub targets: Vec<Matrix>,
    pub horizon: Vec<usize>,
}

impl Extrapolation {
    pub fn mape(&self) -> Result<f64> {
        mape(&stack_rows(&self.targets)?, &stack_rows(&self.predictions)?)
    }

    /// Absolute percentage error of every scalar prediction, in order.
    pub fn percentage_errors(&self) -> Vec<f64> {
        self.targets
            .iter()
            .zip(&self.predictions)
            .flat_map(|(y, p)| {
                y.as_slice()
                    .iter()
                    .zip(p.as_slice())
                    .map(|(y, p)| 100.0 * ((y - p) / y).abs())
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// From every `k`-th nominal state, rolls `step` forward `k` times on its
/// own outputs and compares each output with the nominal state it stands
/// for; then resynchronizes. `step` receives the resync index and the
/// number of steps already taken.
pub fn extrapolation_eval<F>(nominal: &[Matrix], k: usize, mut step: F) -> Result<Extrapolation>
where
    F: FnMut(usize, usize, &Matrix) -> Result<Matrix>,
{
    if k == 0 {
        return Err(Error::invalid("extrapolation needs at least one step"));
    }
    let mut out = Extrapolation::default();
    let mut s = 0;
    while s + 1 < nominal.len() {
        let mut x = nominal[s].clone();
        for j in 1..=k {
            if s + j >= nominal.len() {
                break;
            }
            x = step(s, j - 1, &x)?;
            out.predictions.push(x.clone());
            out.targets.push(nominal[s + j].clone());
            out.horizon.push(j);
        }
        s += k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_zero() {
        let y = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let r = forecast_metrics(&y, &y).unwrap();
        assert_eq!((r.mape, r.mape_signed_sum, r.rmse, r.mse), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_term() {
        let r = forecast_metrics(&Matrix::from_rows(&[[100.0]]), &Matrix::from_rows(&[[90.0]])).unwrap();
        assert!((r.mape - 10.0).abs() < 1e-12);
        assert!((r.mape_signed_sum - 10.0).abs() < 1e-12);
        assert!((r.rmse - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_is_per_sensor_then_averaged() {
        let y = Matrix::from_rows(&[[1.0, 1.0]]);
        let p = Matrix::from_rows(&[[-2.0, -3.0]]);
        assert!((forecast_metrics(&y, &p).unwrap().rmse - 3.5).abs() < 1e-12);
    }

    #[test]
    fn signed_sum_cancels_opposite_errors() {
        let y = Matrix::from_rows(&[[10.0], [10.0]]);
        let p = Matrix::from_rows(&[[11.0], [9.0]]);
        let r = forecast_metrics(&y, &p).unwrap();
        assert!((r.mape - 10.0).abs() < 1e-12);
        assert!(r.mape_signed_sum.abs() < 1e-12);
    }

    #[test]
    fn near_zero_target_is_rejected() {
        assert!(mape(&Matrix::from_rows(&[[0.0]]), &Matrix::from_rows(&[[1.0]])).is_err());
    }

    #[test]
    fn identity_model_resync() {
        let nominal: Vec<Matrix> = (1..=5).map(|v| Matrix::from_rows(&[[v as f64]])).collect();
        let ex = extrapolation_eval(&nominal, 2, |_, _, x| Ok(x.clone())).unwrap();
        let preds: Vec<f64> = ex.predictions.iter().map(|m| m[(0, 0)]).collect();
        assert_eq!(preds, vec![1.0, 1.0, 3.0, 3.0]);
        let ape = ex.percentage_errors();
        let expect = [50.0, 200.0 / 3.0, 25.0, 40.0];
        for (a, e) in ape.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(ex.horizon, vec![1, 2, 1, 2]);
    }
}
