use crate::error::NeuralError;

use super::mlp::{MlpGrads, MlpParams};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// One bias-corrected Adam descent step. Rejects non-finite gradients
/// before touching any state.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NeuralError> {
    if let Some(bad) = grads.values().find(|g| !g.is_finite()) {
        return Err(NeuralError::NonFinite(bad));
    }
    if params.shape() != grads.shape() {
        return Err(NeuralError::Shape {
            expected: params.num_params(),
            got: grads.num_params(),
        });
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);

    let tensors = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::MlpShape;
    use crate::rng::SimRng;
    use rand::{Rng, SeedableRng};

    fn net(seed: u64) -> MlpParams {
        MlpParams::init(
            MlpShape::new(3, [4, 4], 2),
            &mut SimRng::seed_from_u64(seed),
        )
    }

    fn random_grads(like: &MlpParams, rng: &mut SimRng) -> MlpParams {
        let mut g = like.zeros_like();
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
        }
        g
    }

    #[test]
    fn zero_grads_on_fresh_state_leave_params() {
        let mut p = net(1);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let zeros = p.zeros_like();
        adam_step(&mut p, &zeros, &mut s, 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate_against_sign() {
        let mut p = net(2);
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        for (i, t) in g.tensors_mut().enumerate() {
            t.iter_mut()
                .enumerate()
                .for_each(|(j, x)| *x = if (i + j) % 2 == 0 { 0.3 } else { -1.7 });
        }
        let lr = 1e-3;
        for _ in 0..200 {
            let before = p.clone();
            adam_step(&mut p, &g, &mut s, lr).unwrap();
            for ((a, b), gi) in before.values().zip(p.values()).zip(g.values()) {
                let delta = b - a;
                // with a constant gradient m_hat = g and v_hat = g^2 exactly,
                // so each step is lr * |g| / (|g| + eps) against the sign
                assert!(delta.abs() <= lr * (1.0 + 1e-12));
                assert!(delta.abs() >= lr * (1.0 - 1e-6));
                assert_eq!(delta.signum(), -gi.signum());
            }
        }
        assert!(s.second_moment.values().all(|v| v >= 0.0));
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let mut rng = SimRng::seed_from_u64(9);
        let mut p = net(3);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..20 {
            let g = random_grads(&p, &mut rng);
            adam_step(&mut p, &g, &mut s, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn identical_runs_have_identical_trajectories() {
        let run = || {
            let mut rng = SimRng::seed_from_u64(11);
            let mut p = net(4);
            let mut s = AdamState::new(&p);
            for _ in 0..30 {
                let g = random_grads(&p, &mut rng);
                adam_step(&mut p, &g, &mut s, 1e-2).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradients_are_rejected_without_side_effects() {
        let mut p = net(5);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.tensors_mut().next().unwrap()[0] = f64::NAN;
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, 1e-3),
            Err(NeuralError::NonFinite(_))
        ));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
