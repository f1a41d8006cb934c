use super::params::next_generation;
use super::{check_finite, dot, Activation, FlatParams, GradBuffer, Layout, Scalar};
use crate::{Error, Result};

/// Softmax policy network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layout: Layout,
    dims: Vec<usize>,
    hidden: Activation,
    values: Vec<T>,
    generation: u64,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        let layout = Layout::Mlp {
            dims: dims.to_vec(),
            hidden,
        };
        layout.validate()?;
        Ok(MlpParams {
            values: vec![T::zero(); layout.len()],
            dims: dims.to_vec(),
            hidden,
            layout,
            generation: next_generation(),
        })
    }

    pub fn from_values(layout: &Layout, values: Vec<T>) -> Result<Self> {
        let (dims, hidden) = match layout {
            Layout::Mlp { dims, hidden } => (dims.clone(), *hidden),
            other => {
                return Err(Error::Layout(format!(
                    "expected mlp layout, got {}",
                    other.name()
                )))
            }
        };
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(Error::Shape {
                context: "mlp parameters",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(MlpParams {
            layout: layout.clone(),
            dims,
            hidden,
            values,
            generation: next_generation(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weights offset, bias offset) of layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[1] * w[0] + w[1];
        }
        (off, off + self.dims[l + 1] * self.dims[l])
    }

    /// Adds `c` to every bias of the final layer.
    pub fn shift_output_bias(&mut self, c: T) {
        let l = self.num_layers() - 1;
        let (_, b) = self.layer_offsets(l);
        let out = self.output_dim();
        for v in &mut self.values_mut()[b..b + out] {
            *v += c;
        }
    }
}

impl<T: Scalar> FlatParams<T> for MlpParams<T> {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn values(&self) -> &[T] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [T] {
        self.generation = next_generation();
        &mut self.values
    }

    fn generation(&self) -> u64 {
        self.generation
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    generation: u64,
    /// Input followed by each hidden layer's activated output.
    activations: Vec<Vec<T>>,
    pub probs: Vec<T>,
    pub log_probs: Vec<T>,
}

pub fn mlp_forward<T: Scalar>(params: &MlpParams<T>, input: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
    if input.len() != params.input_dim() {
        return Err(Error::Shape {
            context: "mlp input",
            expected: params.input_dim(),
            got: input.len(),
        });
    }
    check_finite(input, "mlp input")?;
    let n_layers = params.num_layers();
    let mut activations = Vec::with_capacity(n_layers);
    let mut current = input.to_vec();
    let mut logits = Vec::new();
    for l in 0..n_layers {
        let (w_off, b_off) = params.layer_offsets(l);
        let fan_in = params.dims[l];
        let fan_out = params.dims[l + 1];
        let w = &params.values[w_off..w_off + fan_in * fan_out];
        let b = &params.values[b_off..b_off + fan_out];
        let mut out = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            out.push(b[j] + dot(row, &current));
        }
        if l + 1 < n_layers {
            out.iter_mut().for_each(|z| *z = params.hidden.apply(*z));
            activations.push(std::mem::replace(&mut current, out));
        } else {
            activations.push(std::mem::take(&mut current));
            logits = out;
        }
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    let log_probs: Vec<T> = logits.iter().map(|&z| z - lse).collect();
    let probs: Vec<T> = log_probs.iter().map(|&lp| lp.exp()).collect();
    check_finite(&probs, "mlp output")?;
    let cache = MlpCache {
        generation: params.generation,
        activations,
        probs: probs.clone(),
        log_probs,
    };
    Ok((probs, cache))
}

/// Accumulates `scale * grad_theta log pi(action | input)` into `grad`.
pub fn mlp_grad_logprob_into<T: Scalar>(
    params: &MlpParams<T>,
    cache: &MlpCache<T>,
    action: usize,
    scale: T,
    grad: &mut GradBuffer<T>,
) -> Result<()> {
    if cache.generation != params.generation {
        return Err(Error::Protocol(
            "mlp cache was produced under different parameters".into(),
        ));
    }
    if action >= params.output_dim() {
        return Err(Error::Bounds {
            index: action,
            len: params.output_dim(),
        });
    }
    grad.check_congruent(&params.layout)?;
    // softmax + log: d log p_a / d z = onehot(a) - p
    let mut delta: Vec<T> = cache
        .probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == action { T::one() - p } else { -p })
        .collect();
    let g = grad.values_mut();
    for l in (0..params.num_layers()).rev() {
        let (w_off, b_off) = params.layer_offsets(l);
        let fan_in = params.dims[l];
        let fan_out = params.dims[l + 1];
        let x = &cache.activations[l];
        for j in 0..fan_out {
            let d = delta[j] * scale;
            g[b_off + j] += d;
            let row = &mut g[w_off + j * fan_in..w_off + (j + 1) * fan_in];
            for (gw, &xv) in row.iter_mut().zip(x) {
                *gw += d * xv;
            }
        }
        if l > 0 {
            let w = &params.values[w_off..w_off + fan_in * fan_out];
            let mut prev = vec![T::zero(); fan_in];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for (p, &wv) in prev.iter_mut().zip(row) {
                    *p += wv * delta[j];
                }
            }
            for (p, &y) in prev.iter_mut().zip(x) {
                *p *= params.hidden.derivative_from_output(y);
            }
            delta = prev;
        }
    }
    Ok(())
}

pub fn mlp_grad_logprob<T: Scalar>(
    params: &MlpParams<T>,
    cache: &MlpCache<T>,
    action: usize,
) -> Result<GradBuffer<T>> {
    let mut grad = GradBuffer::zeros(&params.layout);
    mlp_grad_logprob_into(params, cache, action, T::one(), &mut grad)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{central_difference, init_mlp, max_relative_error};

    fn small_net(seed: u64) -> MlpParams<f64> {
        let mut p = init_mlp::<f64>(&[5, 7, 6, 6], Activation::Tanh, seed).unwrap();
        // init leaves biases at zero; perturb them so their gradients are exercised
        let len = p.values().len();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v += 0.05 * ((i as f64 * 0.37).sin()) * (i % 3) as f64 / len as f64 * 10.0;
        }
        p
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let p = MlpParams::<f64>::zeros(&[4, 64, 64, 6], Activation::Tanh).unwrap();
        let (probs, _) = mlp_forward(&p, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        for q in probs {
            assert!((q - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_params_local_gradient_is_onehot_minus_uniform() {
        let p = MlpParams::<f64>::zeros(&[3, 4, 6], Activation::Tanh).unwrap();
        let (_, cache) = mlp_forward(&p, &[0.3, 0.1, -0.2]).unwrap();
        let g = mlp_grad_logprob(&p, &cache, 2).unwrap();
        let (_, b_off) = p.layer_offsets(1);
        for j in 0..6 {
            let expected = if j == 2 { 1.0 - 1.0 / 6.0 } else { -1.0 / 6.0 };
            assert!((g.values()[b_off + j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_shift_is_invariant() {
        let mut p = small_net(3);
        let x = [0.1, 0.2, -0.3, 0.7, 1.0];
        let (a, _) = mlp_forward(&p, &x).unwrap();
        p.shift_output_bias(13.5);
        let (b, _) = mlp_forward(&p, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let mut p = MlpParams::<f64>::zeros(&[1, 6], Activation::Tanh).unwrap();
        let (_, b_off) = p.layer_offsets(0);
        p.values_mut()[b_off] = 700.0;
        p.values_mut()[b_off + 1] = -700.0;
        let (probs, cache) = mlp_forward(&p, &[0.0]).unwrap();
        assert!(probs.iter().all(|q| q.is_finite()));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((cache.log_probs[1] + 1400.0).abs() < 1e-9);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = small_net(1);
        let (_, cache) = mlp_forward(&p, &[0.0; 5]).unwrap();
        p.values_mut()[0] += 1.0;
        assert!(matches!(
            mlp_grad_logprob(&p, &cache, 0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn shape_and_finite_errors() {
        let p = small_net(1);
        assert!(matches!(
            mlp_forward(&p, &[0.0; 4]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            mlp_forward(&p, &[0.0, 0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
        let (_, cache) = mlp_forward(&p, &[0.0; 5]).unwrap();
        assert!(matches!(
            mlp_grad_logprob(&p, &cache, 6),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..5 {
            let p = small_net(seed);
            let x = [0.4, -0.1, 0.9, 0.0, -0.6];
            for action in 0..6 {
                let (_, cache) = mlp_forward(&p, &x).unwrap();
                let analytic = mlp_grad_logprob(&p, &cache, action).unwrap();
                let numeric = central_difference(p.values(), 1e-6, |v| {
                    let q = MlpParams::from_values(p.layout(), v.to_vec()).unwrap();
                    mlp_forward(&q, &x).unwrap().1.log_probs[action]
                });
                let err = max_relative_error(analytic.values(), &numeric);
                assert!(err < 1e-5, "seed {seed} action {action}: {err}");
            }
        }
    }

    #[test]
    fn expected_score_is_zero() {
        let p = small_net(9);
        let (probs, cache) = mlp_forward(&p, &[1.0, 0.0, 0.0, 1.0, 0.5]).unwrap();
        let mut total = GradBuffer::zeros(p.layout());
        for (a, &pa) in probs.iter().enumerate() {
            mlp_grad_logprob_into(&p, &cache, a, pa, &mut total).unwrap();
        }
        assert!(total.values().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn works_at_single_precision() {
        let p = init_mlp::<f32>(&[3, 4, 6], Activation::Tanh, 2).unwrap();
        let (probs, cache) = mlp_forward(&p, &[0.5f32, -0.5, 1.0]).unwrap();
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(mlp_grad_logprob(&p, &cache, 1).unwrap().is_finite());
    }
}
