//! Diagonal Kalman filter over network parameters.
//!
//! Every parameter is filtered independently. The model is the SGD state
//! model with identity transition and observation and no process noise, so
//! prediction is the identity and the update is, per coordinate,
//!
//! ```text
//! K  = P / (P + R)
//! x' = x + K (z - x)
//! P' = max((1 - K) P, floor)
//! ```
//!
//! where `z` is the SGD-trained model for the current batch and `R` is the
//! transformed gradient of that model on the same batch.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::nn::{loss_and_grad, GradientVector, ParamVector};
use crate::{Error, Result};

/// Default floor for covariance and measurement noise.
pub const DEFAULT_FLOOR: f64 = 1e-12;

/// Maps a signed gradient to a nonnegative variance proxy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTransform {
    #[default]
    Square,
    Abs,
}

impl NoiseTransform {
    pub fn apply(self, g: f64) -> f64 {
        match self {
            NoiseTransform::Square => g * g,
            NoiseTransform::Abs => g.abs(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseTransform::Square => "square",
            NoiseTransform::Abs => "abs",
        }
    }
}

impl std::str::FromStr for NoiseTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "square" => Ok(NoiseTransform::Square),
            "abs" => Ok(NoiseTransform::Abs),
            other => Err(format!("unknown noise transform `{other}` (expected square or abs)")),
        }
    }
}

/// Per-parameter measurement noise `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseVector(Array1<f64>);

impl NoiseVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite {
                context: "NoiseVector",
                index,
            });
        }
        Ok(NoiseVector(values))
    }

    pub fn filled(len: usize, value: f64) -> Result<Self> {
        NoiseVector::new(Array1::from_elem(len, value))
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Estimate `x̂` and diagonal error covariance `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub estimate: ParamVector,
    covariance: Array1<f64>,
}

impl KalmanState {
    pub fn new(estimate: ParamVector, covariance: Array1<f64>) -> Result<Self> {
        if covariance.len() != estimate.len() {
            return Err(Error::ShapeMismatch {
                context: "KalmanState covariance",
                expected: estimate.len(),
                actual: covariance.len(),
            });
        }
        if let Some(index) = covariance.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite {
                context: "KalmanState covariance",
                index,
            });
        }
        Ok(KalmanState { estimate, covariance })
    }

    pub fn covariance(&self) -> ArrayView1<'_, f64> {
        self.covariance.view()
    }

    /// Replaces each covariance entry below `floor` with `floor`.
    pub fn floor_covariance(&mut self, floor: f64) {
        self.covariance.mapv_inplace(|p| p.max(floor));
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidFloor(floor));
    }
    Ok(())
}

/// Elementwise `max(transform(g), floor)`.
pub fn gradient_variance(grad: &GradientVector, floor: f64, transform: NoiseTransform) -> Result<Array1<f64>> {
    check_floor(floor)?;
    if let Some(index) = grad.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient",
            index,
        });
    }
    Ok(grad.values().mapv(|g| transform.apply(g).max(floor)))
}

/// Initial state: the pre-trained model with `P₀` from its full-data gradient.
pub fn init_kalman(
    pretrained: &ParamVector,
    pretrain_grad: &GradientVector,
    floor: f64,
    transform: NoiseTransform,
) -> Result<KalmanState> {
    if pretrain_grad.len() != pretrained.len() {
        return Err(Error::ShapeMismatch {
            context: "init_kalman",
            expected: pretrained.len(),
            actual: pretrain_grad.len(),
        });
    }
    let covariance = gradient_variance(pretrain_grad, floor, transform)?;
    KalmanState::new(pretrained.clone(), covariance)
}

/// `R` for the post-SGD model on the batch it was trained on.
pub fn measurement_noise(
    params_k: &ParamVector,
    batch: &Batch,
    floor: f64,
    transform: NoiseTransform,
) -> Result<NoiseVector> {
    let (_, grad) = loss_and_grad(params_k, batch)?;
    NoiseVector::new(gradient_variance(&grad, floor, transform)?)
}

/// Identity prediction: the parameters are assumed stable between batches.
pub fn kalman_predict(state: KalmanState) -> KalmanState {
    state
}

/// `K = P / (P + R)` elementwise.
pub fn kalman_gain(prior_covariance: ArrayView1<'_, f64>, noise: &NoiseVector) -> Result<Array1<f64>> {
    if prior_covariance.len() != noise.len() {
        return Err(Error::ShapeMismatch {
            context: "kalman_gain",
            expected: prior_covariance.len(),
            actual: noise.len(),
        });
    }
    let mut gain = Array1::zeros(noise.len());
    for (i, ((k, &p), &r)) in gain
        .iter_mut()
        .zip(prior_covariance.iter())
        .zip(noise.values().iter())
        .enumerate()
    {
        let denom = p + r;
        if denom == 0.0 {
            return Err(Error::ZeroDenominator(i));
        }
        *k = p / denom;
    }
    Ok(gain)
}

/// Fuses the measurement `z_k` (the SGD-trained model) into the state.
///
/// Each updated coordinate is clamped to the interval spanned by the prior
/// estimate and the measurement, and the covariance is floored at `floor`.
pub fn kalman_update(
    state: &KalmanState,
    measurement: &ParamVector,
    noise: &NoiseVector,
    floor: f64,
) -> Result<KalmanState> {
    check_floor(floor)?;
    if measurement.len() != state.estimate.len() {
        return Err(Error::ShapeMismatch {
            context: "kalman_update",
            expected: state.estimate.len(),
            actual: measurement.len(),
        });
    }
    let gain = kalman_gain(state.covariance.view(), noise)?;
    let mut estimate = Array1::zeros(gain.len());
    let mut covariance = Array1::zeros(gain.len());
    Zip::from(&mut estimate)
        .and(&mut covariance)
        .and(&gain)
        .and(state.estimate.values())
        .and(measurement.values())
        .and(&state.covariance)
        .for_each(|x_new, p_new, &k, &x, &z, &p| {
            let lo = x.min(z);
            let hi = x.max(z);
            *x_new = (x + k * (z - x)).clamp(lo, hi);
            *p_new = ((1.0 - k) * p).max(floor);
        });
    if let Some(index) = estimate.iter().position(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "kalman_update estimate",
            index,
        });
    }
    Ok(KalmanState {
        estimate: state.estimate.with_values(estimate),
        covariance,
    })
}
