use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, FlatParams, LstmParams, MlpParams, Scalar};
use crate::Result;

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform<T: Scalar>(dst: &mut [T], bound: f64, rng: &mut ChaCha8Rng) {
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in dst {
        *v = T::lit(dist.sample(rng));
    }
}

/// Weights uniform within the Xavier bound of their layer, biases zero.
pub fn init_mlp<T: Scalar>(dims: &[usize], hidden: Activation, seed: u64) -> Result<MlpParams<T>> {
    let mut params = MlpParams::zeros(dims, hidden)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..params.num_layers() {
        let (w_off, b_off) = params.layer_offsets(l);
        let bound = xavier_bound(dims[l], dims[l + 1]);
        fill_uniform(&mut params.values_mut()[w_off..b_off], bound, &mut rng);
    }
    Ok(params)
}

/// Gate weights use fan_in = input + hidden and fan_out = hidden per gate;
/// the head uses fan_in = hidden, fan_out = 1. Biases are zero except the
/// forget gate, which starts at `forget_bias`.
pub fn init_lstm<T: Scalar>(
    input: usize,
    hidden: usize,
    head: Activation,
    forget_bias: f64,
    seed: u64,
) -> Result<LstmParams<T>> {
    let mut params = LstmParams::zeros(input, hidden, head)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gate_len = 4 * hidden * (input + hidden);
    let head_w = gate_len + 4 * hidden;
    let forget = params.forget_bias_range();
    let values = params.values_mut();
    fill_uniform(
        &mut values[..gate_len],
        xavier_bound(input + hidden, hidden),
        &mut rng,
    );
    fill_uniform(
        &mut values[head_w..head_w + hidden],
        xavier_bound(hidden, 1),
        &mut rng,
    );
    for v in &mut values[forget] {
        *v = T::lit(forget_bias);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let a = init_mlp::<f64>(&[35, 64, 64, 6], Activation::Tanh, 11).unwrap();
        let b = init_mlp::<f64>(&[35, 64, 64, 6], Activation::Tanh, 11).unwrap();
        let c = init_mlp::<f64>(&[35, 64, 64, 6], Activation::Tanh, 12).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        let x = init_lstm::<f64>(41, 128, Activation::Identity, 1.0, 5).unwrap();
        let y = init_lstm::<f64>(41, 128, Activation::Identity, 1.0, 5).unwrap();
        assert_eq!(x.values(), y.values());
    }

    #[test]
    fn weights_within_bound_and_biases_as_declared() {
        let dims = [35, 64, 64, 6];
        let p = init_mlp::<f64>(&dims, Activation::Tanh, 3).unwrap();
        for l in 0..3 {
            let (w, b) = p.layer_offsets(l);
            let bound = xavier_bound(dims[l], dims[l + 1]);
            assert!(p.values()[w..b].iter().all(|v| v.abs() <= bound));
            assert!(p.values()[b..b + dims[l + 1]].iter().all(|&v| v == 0.0));
        }

        let q = init_lstm::<f64>(41, 128, Activation::Identity, 1.0, 3).unwrap();
        let gate_len = 4 * 128 * (41 + 128);
        let bound = xavier_bound(169, 128);
        assert!(q.values()[..gate_len].iter().all(|v| v.abs() <= bound));
        for (i, &v) in q.values()[gate_len..gate_len + 512].iter().enumerate() {
            if (128..256).contains(&i) {
                assert_eq!(v, 1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
        let head = &q.values()[gate_len + 512..gate_len + 640];
        assert!(head.iter().all(|v| v.abs() <= xavier_bound(128, 1)));
        assert_eq!(*q.values().last().unwrap(), 0.0);
    }
}
