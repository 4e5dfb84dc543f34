//! Small property suite that runs in a few seconds without any data files.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{permute_pixels, Batch, Dataset, Permutation};
use crate::kalman::{kalman_gain, kalman_update, measurement_noise, KalmanState, NoiseTransform, NoiseVector};
use crate::nn::{init_params, loss_and_grad, Architecture, GradientVector, ParamVector};
use crate::trainer::{conventional_step, kalman_step};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_MIN_GRAD: f64 = 1e-8;
/// Per-coordinate tolerance for the two gain limits.
pub const LIMIT_TOL: f64 = 1e-9;
/// Covariance (and covariance floor) that pins the gain at one.
pub const HUGE: f64 = 1e30;

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        PropertyResult { name, passed, detail }
    }
}

/// Relative difference normalized by the larger magnitude.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central finite-difference gradient of the batch loss.
pub fn finite_difference_grad(params: &ParamVector, batch: &Batch, h: f64) -> Result<Array1<f64>> {
    let arch = params.architecture().clone();
    let base = params.values().to_owned();
    let mut out = Array1::zeros(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let (lp, _) = loss_and_grad(&ParamVector::from_values(arch.clone(), plus)?, batch)?;
        let (lm, _) = loss_and_grad(&ParamVector::from_values(arch.clone(), minus)?, batch)?;
        out[i] = (lp - lm) / (2.0 * h);
    }
    Ok(out)
}

/// Random `6-8-4` network and batch of 1..=8 samples.
pub fn random_case(rng: &mut ChaCha8Rng) -> Result<(ParamVector, Batch)> {
    let arch = Architecture::new(vec![6, 8, 4])?;
    let mut params = init_params(&arch, rng.random())?;
    // non-zero biases exercise the bias gradient
    let values = params.values().mapv(|v| if v == 0.0 { rng.random_range(-0.3..0.3) } else { v });
    params = ParamVector::from_values(params.architecture().clone(), values)?;
    let n = rng.random_range(1..=8);
    let images = Array2::from_shape_fn((n, 6), |_| rng.random_range(0.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..4)).collect();
    Ok((params, Batch::new(images, labels)?))
}

/// Compares `grad_fn` against central differences on `trials` random cases.
pub fn gradient_check_with<F>(grad_fn: F, trials: usize, seed: u64) -> Result<PropertyResult>
where
    F: Fn(&ParamVector, &Batch) -> Result<GradientVector>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let (params, batch) = random_case(&mut rng)?;
        let analytic = grad_fn(&params, &batch)?;
        let numeric = finite_difference_grad(&params, &batch, FD_STEP)?;
        for (&a, &n) in analytic.values().iter().zip(numeric.iter()) {
            if a.abs() > FD_MIN_GRAD {
                worst = worst.max(relative_error(a, n));
                checked += 1;
            }
        }
    }
    Ok(PropertyResult::new(
        "gradient-check",
        worst < FD_REL_TOL,
        format!("{trials} nets, {checked} coordinates, max relative error {worst:.3e}"),
    ))
}

/// One scalar filter step written out longhand: returns `(gain, estimate, covariance)`.
pub fn scalar_kalman_step(x: f64, p: f64, z: f64, r: f64, floor: f64) -> (f64, f64, f64) {
    let k = p / (p + r);
    let innovation = z - x;
    let mut x_new = x + k * innovation;
    if x_new < x.min(z) {
        x_new = x.min(z);
    }
    if x_new > x.max(z) {
        x_new = x.max(z);
    }
    let mut p_new = (1.0 - k) * p;
    if p_new < floor {
        p_new = floor;
    }
    (k, x_new, p_new)
}

/// Distance in units in the last place.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |v: f64| {
        let bits = v.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Parameter vector of exactly `n >= 2` entries (an `(n-1)-1` network).
pub fn flat_params(values: Array1<f64>) -> Result<ParamVector> {
    let arch = Arc::new(Architecture::new(vec![values.len() - 1, 1])?);
    ParamVector::from_values(arch, values)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

/// Vectorized update against `scalar_kalman_step` on `n` random tuples.
pub fn scalar_oracle(n: usize, seed: u64) -> Result<PropertyResult> {
    let floor = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Array1::from_shape_fn(n, |_| log_uniform(&mut rng, -12.0, 4.0));
    let r = Array1::from_shape_fn(n, |_| log_uniform(&mut rng, -12.0, 4.0));
    let x = Array1::from_shape_fn(n, |_| rng.random_range(-10.0..10.0));
    let z = Array1::from_shape_fn(n, |_| rng.random_range(-10.0..10.0));

    let state = KalmanState::new(flat_params(x.clone())?, p.clone())?;
    let noise = NoiseVector::new(r.clone())?;
    let gain = kalman_gain(p.view(), &noise)?;
    let updated = kalman_update(&state, &flat_params(z.clone())?, &noise, floor)?;

    let mut worst_ulp = 0;
    let mut failures = 0;
    for i in 0..n {
        let (k, xs, ps) = scalar_kalman_step(x[i], p[i], z[i], r[i], floor);
        let xv = updated.estimate.values()[i];
        let pv = updated.covariance()[i];
        worst_ulp = worst_ulp
            .max(ulp_distance(k, gain[i]))
            .max(ulp_distance(xs, xv))
            .max(ulp_distance(ps, pv));
        let within = xv >= x[i].min(z[i]) && xv <= x[i].max(z[i]);
        if !(0.0..=1.0).contains(&gain[i]) || !within {
            failures += 1;
        }
    }
    Ok(PropertyResult::new(
        "kalman-scalar-oracle",
        worst_ulp <= 1 && failures == 0,
        format!("{n} tuples, max {worst_ulp} ulp, {failures} bound violations"),
    ))
}

/// Gains stay in `[0, 1]` across extreme magnitudes and one-sided zeros.
pub fn gain_fuzz(n: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (log_uniform(&mut rng, -300.0, 300.0), log_uniform(&mut rng, -300.0, 300.0));
        match i % 4 {
            0 => p.push(0.0),
            _ => p.push(a),
        }
        r.push(if i % 4 == 1 { 0.0 } else { b });
    }
    let gain = kalman_gain(Array1::from(p).view(), &NoiseVector::new(Array1::from(r))?)?;
    let bad = gain.iter().filter(|k| !(0.0..=1.0).contains(*k)).count();
    Ok(PropertyResult::new(
        "gain-bounds-fuzz",
        bad == 0,
        format!("{n} draws, {bad} gains outside [0, 1]"),
    ))
}

/// Seeded 784-pixel permutations are bijections and invert exactly.
pub fn permutation_bijection(seeds: usize) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let images = Array2::from_shape_fn((3, 784), |_| rng.random_range(0.0f32..=1.0));
    let dataset = Dataset::new(images, vec![0, 5, 9])?;
    let mut failures = 0;
    for seed in 0..seeds as u64 {
        let perm = Permutation::from_seed(784, seed);
        let mut sorted = perm.as_slice().to_vec();
        sorted.sort_unstable();
        let bijective = sorted.iter().copied().eq(0..784);
        let round_trip = permute_pixels(&permute_pixels(&dataset, &perm)?, &perm.inverse())? == dataset;
        if !(bijective && round_trip) {
            failures += 1;
        }
    }
    Ok(PropertyResult::new(
        "permutation-bijection",
        failures == 0,
        format!("{seeds} seeds, {failures} failures"),
    ))
}

/// Which end of the gain range to pin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainLimit {
    /// `P` held at `HUGE`: the filter should track plain SGD.
    One,
    /// `R` stubbed to `HUGE`: the estimate should not move.
    Zero,
}

/// Steps the Kalman learner and plain SGD side by side for `steps` random
/// batches on a `12-16-10` network and reports the largest per-coordinate
/// gap against the expected trajectory.
pub fn gain_limit(limit: GainLimit, steps: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::new(vec![12, 16, 10])?;
    let start = init_params(&arch, rng.random())?;
    let lr = 0.1;
    let (covariance, floor) = match limit {
        GainLimit::One => (HUGE, HUGE),
        GainLimit::Zero => (1e-3, 1e-12),
    };
    let mut state = KalmanState::new(start.clone(), Array1::from_elem(start.len(), covariance))?;
    let mut sgd = start.clone();
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let images = Array2::from_shape_fn((8, 12), |_| rng.random_range(0.0..1.0));
        let labels = (0..8).map(|_| rng.random_range(0..10)).collect();
        let batch = Batch::new(images, labels)?;
        state = match limit {
            GainLimit::One => {
                kalman_step(state, &batch, lr, floor, |m, b| measurement_noise(m, b, 1e-12, NoiseTransform::Square))?.1
            }
            GainLimit::Zero => kalman_step(state, &batch, lr, floor, |m, _| NoiseVector::filled(m.len(), HUGE))?.1,
        };
        sgd = conventional_step(&sgd, &batch, lr)?.1;
        let target = match limit {
            GainLimit::One => &sgd,
            GainLimit::Zero => &start,
        };
        let gap = (state.estimate.values().to_owned() - target.values())
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        worst = worst.max(gap);
    }
    let name = match limit {
        GainLimit::One => "gain-one-limit",
        GainLimit::Zero => "gain-zero-limit",
    };
    Ok(PropertyResult::new(
        name,
        worst <= LIMIT_TOL,
        format!("{steps} steps, max per-coordinate gap {worst:.3e}"),
    ))
}

type Check = Box<dyn Fn() -> Result<PropertyResult>>;

/// Runs every property.
pub fn run_all() -> Vec<PropertyResult> {
    let checks: Vec<(&'static str, Check)> = vec![
        (
            "gradient-check",
            Box::new(|| gradient_check_with(|p, b| loss_and_grad(p, b).map(|(_, g)| g), 20, 1)),
        ),
        ("kalman-scalar-oracle", Box::new(|| scalar_oracle(1000, 2))),
        ("permutation-bijection", Box::new(|| permutation_bijection(16))),
        ("gain-bounds-fuzz", Box::new(|| gain_fuzz(10_000, 3))),
        ("gain-one-limit", Box::new(|| gain_limit(GainLimit::One, 100, 4))),
        ("gain-zero-limit", Box::new(|| gain_limit(GainLimit::Zero, 100, 5))),
    ];
    checks
        .into_iter()
        .map(|(name, check)| {
            check().unwrap_or_else(|e| PropertyResult::new(name, false, format!("error: {e}")))
        })
        .collect()
}
