use serde::{Deserialize, Serialize};

use super::{FlatParams, GradBuffer, Scalar};
use crate::{Error, Result};

/// Rescales `grad` so its Euclidean norm is at most `max_norm` and returns
/// the factor applied (1 when no clipping happened).
pub fn clip_global_norm<T: Scalar>(grad: &mut GradBuffer<T>, max_norm: Option<T>) -> T {
    let Some(max_norm) = max_norm else {
        return T::one();
    };
    let norm = grad.norm();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.scale(s);
        s
    } else {
        T::one()
    }
}

/// `params += rate * clip(grad)`. Returns the clip factor.
pub fn apply_ascent<T: Scalar, P: FlatParams<T>>(
    params: &mut P,
    grad: &GradBuffer<T>,
    rate: T,
    clip: Option<T>,
) -> Result<T> {
    grad.check_congruent(params.layout())?;
    if !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient for {} parameters",
            params.layout().name()
        )));
    }
    let mut g = grad.clone();
    let scale = clip_global_norm(&mut g, clip);
    for (p, &d) in params.values_mut().iter_mut().zip(g.values()) {
        *p += rate * d;
    }
    Ok(scale)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Adaptive-moment ascent state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize) -> Self {
        Adam {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Sgd,
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(len)),
        }
    }

    /// One ascent step on `params`. The gradient is norm-clipped first;
    /// returns the clip factor.
    pub fn step<P: FlatParams<T>>(
        &mut self,
        params: &mut P,
        grad: &GradBuffer<T>,
        rate: T,
        clip: Option<T>,
    ) -> Result<T> {
        match self {
            Optimizer::Sgd => apply_ascent(params, grad, rate, clip),
            Optimizer::Adam(state) => {
                grad.check_congruent(params.layout())?;
                if !grad.is_finite() {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
                let mut g = grad.clone();
                let scale = clip_global_norm(&mut g, clip);
                state.t += 1;
                let bc1 = T::one() - state.beta1.powi(state.t);
                let bc2 = T::one() - state.beta2.powi(state.t);
                let values = params.values_mut();
                for (i, &d) in g.values().iter().enumerate() {
                    state.m[i] = state.beta1 * state.m[i] + (T::one() - state.beta1) * d;
                    state.v[i] = state.beta2 * state.v[i] + (T::one() - state.beta2) * d * d;
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    values[i] += rate * m_hat / (v_hat.sqrt() + state.eps);
                }
                Ok(scale)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Activation, MlpParams};

    fn params() -> MlpParams<f64> {
        let mut p = MlpParams::zeros(&[2, 3], Activation::Tanh).unwrap();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.5 - 1.0;
        }
        p
    }

    #[test]
    fn zero_rate_leaves_params_unchanged() {
        let mut p = params();
        let before = p.values().to_vec();
        let mut g = GradBuffer::zeros(p.layout());
        g.values_mut().iter_mut().for_each(|v| *v = 3.0);
        apply_ascent(&mut p, &g, 0.0, None).unwrap();
        assert_eq!(p.values(), &before[..]);
    }

    #[test]
    fn unit_vector_moves_one_entry() {
        let mut p = params();
        let before = p.values().to_vec();
        let mut g = GradBuffer::zeros(p.layout());
        g.values_mut()[4] = 1.0;
        apply_ascent(&mut p, &g, 0.25, Some(5.0)).unwrap();
        for (i, (a, b)) in p.values().iter().zip(&before).enumerate() {
            if i == 4 {
                assert_eq!(*a, b + 0.25);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut p = params();
        let before = p.values().to_vec();
        let mut g = GradBuffer::zeros(p.layout());
        // norm 10
        g.values_mut()[0] = 6.0;
        g.values_mut()[1] = 8.0;
        let scale = apply_ascent(&mut p, &g, 0.1, Some(1.0)).unwrap();
        assert!((scale - 0.1).abs() < 1e-15);
        let step: f64 = p
            .values()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(step <= 0.1 * 1.0 + 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = params();
        let mut g = GradBuffer::zeros(p.layout());
        g.values_mut()[2] = f64::INFINITY;
        assert!(matches!(
            apply_ascent(&mut p, &g, 0.1, None),
            Err(Error::Numeric(_))
        ));
        let mut opt = Optimizer::new(OptimizerKind::Adam, p.values().len());
        assert!(opt.step(&mut p, &g, 0.1, None).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_rate_in_sign_direction() {
        let mut p = params();
        let before = p.values().to_vec();
        let mut g = GradBuffer::zeros(p.layout());
        g.values_mut()[0] = 4.0;
        g.values_mut()[1] = -0.001;
        let mut opt = Optimizer::new(OptimizerKind::Adam, p.values().len());
        opt.step(&mut p, &g, 0.01, None).unwrap();
        assert!((p.values()[0] - before[0] - 0.01).abs() < 1e-8);
        assert!((p.values()[1] - before[1] + 0.01).abs() < 1e-6);
        assert_eq!(p.values()[2], before[2]);
    }
}
