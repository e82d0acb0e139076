use crate::linalg::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment buffers for a list of tensors sharing one step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for tensors of the given element counts.
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
///
/// # Panics
/// If the tensor lists or any tensor lengths disagree.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) {
    assert_eq!(params.len(), state.m.len(), "tensor count");
    assert_eq!(grads.len(), state.m.len(), "gradient count");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::of(1.0 - state.beta1.powi(t));
    let corr2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.len(), g.len(), "parameter/gradient length");
        assert_eq!(p.len(), m.len(), "parameter/moment length");
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
            let mhat = *mi / corr1;
            let vhat = *vi / corr2;
            *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = AdamState::<f64>::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam_step(&mut s, &mut [&mut p], &[&[0.0; 3]], 1e-3);
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = AdamState::<f64>::new(&[4]);
        let mut p = vec![0.0; 4];
        let g = [3.0, -0.2, 1e-3, -50.0];
        adam_step(&mut s, &mut [&mut p], &[&g], 1e-3);
        for (pi, gi) in p.iter().zip(&g) {
            // |g| / (|g| + eps) is 1 up to eps / |g|
            assert!((pi + 1e-3 * gi.signum()).abs() < 1e-3 * 1e-5, "{pi}");
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::<f32>::new(&[2, 1]);
            let mut a = vec![0.3f32, 0.1];
            let mut b = vec![2.0f32];
            for k in 0..5 {
                let g1 = [k as f32 * 0.1, -0.4];
                let g2 = [0.7];
                adam_step(&mut s, &mut [&mut a, &mut b], &[&g1, &g2], 1e-2);
            }
            (a, b, s)
        };
        assert_eq!(run(), run());
    }
}
