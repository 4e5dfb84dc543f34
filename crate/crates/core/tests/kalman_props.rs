use std::sync::Arc;

use kalman_drift::data::Batch;
use kalman_drift::kalman::{kalman_gain, kalman_update, measurement_noise, KalmanState, NoiseTransform, NoiseVector};
use kalman_drift::nn::{Architecture, ParamVector};
use ndarray::{array, Array1};
use proptest::prelude::*;

fn flat(values: Vec<f64>) -> ParamVector {
    let arch = Arc::new(Architecture::new(vec![values.len() - 1, 1]).unwrap());
    ParamVector::from_values(arch, Array1::from(values)).unwrap()
}

/// Independent scalar filter step.
fn scalar_step(x: f64, p: f64, z: f64, r: f64, floor: f64) -> (f64, f64) {
    let k = p / (p + r);
    let x_new = (x + k * (z - x)).clamp(x.min(z), x.max(z));
    ((x_new), ((1.0 - k) * p).max(floor))
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64).abs_diff(b.to_bits() as i64)
}

const FLOOR: f64 = 1e-12;

fn tuple() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-12.0f64..3.0, -12.0f64..3.0, -5.0f64..5.0, -5.0f64..5.0)
        .prop_map(|(lp, lr, x, z)| (10f64.powf(lp), 10f64.powf(lr), x, z))
}

proptest! {
    #[test]
    fn vectorized_update_equals_scalar_updates(tuples in prop::collection::vec(tuple(), 2..100)) {
        let x: Vec<f64> = tuples.iter().map(|t| t.2).collect();
        let z: Vec<f64> = tuples.iter().map(|t| t.3).collect();
        let p = Array1::from_iter(tuples.iter().map(|t| t.0));
        let r = Array1::from_iter(tuples.iter().map(|t| t.1));
        let state = KalmanState::new(flat(x.clone()), p.clone()).unwrap();
        let noise = NoiseVector::new(r.clone()).unwrap();
        let gain = kalman_gain(p.view(), &noise).unwrap();
        let out = kalman_update(&state, &flat(z.clone()), &noise, FLOOR).unwrap();
        for i in 0..x.len() {
            let (xs, ps) = scalar_step(x[i], p[i], z[i], r[i], FLOOR);
            prop_assert!(ulps(xs, out.estimate.values()[i]) <= 1);
            prop_assert!(ulps(ps, out.covariance()[i]) <= 1);
            // gain bounds
            prop_assert!((0.0..=1.0).contains(&gain[i]));
            // convex combination
            let e = out.estimate.values()[i];
            prop_assert!(e >= x[i].min(z[i]) && e <= x[i].max(z[i]));
            // contraction, then floor
            prop_assert!(out.covariance()[i] <= p[i].max(FLOOR));
            prop_assert!(out.covariance()[i] >= FLOOR);
        }
    }

    #[test]
    fn measurement_equal_to_estimate_is_fixed(tuples in prop::collection::vec(tuple(), 2..50)) {
        let x: Vec<f64> = tuples.iter().map(|t| t.2).collect();
        let state = KalmanState::new(flat(x.clone()), Array1::from_iter(tuples.iter().map(|t| t.0))).unwrap();
        let noise = NoiseVector::new(Array1::from_iter(tuples.iter().map(|t| t.1))).unwrap();
        let out = kalman_update(&state, &flat(x.clone()), &noise, FLOOR).unwrap();
        prop_assert_eq!(out.estimate.values().to_vec(), x);
    }

    #[test]
    fn covariance_never_increases_across_steps(
        tuples in prop::collection::vec(tuple(), 2..20),
        steps in 1usize..10,
    ) {
        let mut state = KalmanState::new(
            flat(tuples.iter().map(|t| t.2).collect()),
            Array1::from_iter(tuples.iter().map(|t| t.0.max(FLOOR))),
        ).unwrap();
        let noise = NoiseVector::new(Array1::from_iter(tuples.iter().map(|t| t.1))).unwrap();
        let z = flat(tuples.iter().map(|t| t.3).collect());
        for _ in 0..steps {
            let next = kalman_update(&state, &z, &noise, FLOOR).unwrap();
            for (a, b) in next.covariance().iter().zip(state.covariance().iter()) {
                prop_assert!(a <= b);
            }
            state = next;
        }
    }
}

/// On a 2-2-2 net that classifies input [1, 0] as class 0 with a wide
/// margin, the batch labelled 0 is fit and the batch labelled 1 is not.
#[test]
fn well_fit_batch_has_smaller_noise() {
    let arch = Arc::new(Architecture::new(vec![2, 2, 2]).unwrap());
    // W1 = 5 I, b1 = 0, W2 = 5 I, b2 = 0
    let params = ParamVector::from_values(arch, array![5.0, 0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 0.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
    let fit = Batch::new(array![[1.0, 0.0], [1.0, 0.0]], vec![0, 0]).unwrap();
    let poor = Batch::new(array![[1.0, 0.0], [1.0, 0.0]], vec![1, 1]).unwrap();
    for transform in [NoiseTransform::Square, NoiseTransform::Abs] {
        let r_fit = measurement_noise(&params, &fit, FLOOR, transform).unwrap();
        let r_poor = measurement_noise(&params, &poor, FLOOR, transform).unwrap();
        assert!(r_fit.values().iter().zip(r_poor.values().iter()).all(|(a, b)| a <= b));
        assert!(r_fit.values().iter().zip(r_poor.values().iter()).any(|(a, b)| a < b));
    }
}
