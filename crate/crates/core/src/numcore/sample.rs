use rand::Rng;

use super::Scalar;

/// Inverse-CDF draw from a normalized probability vector. Falls back to the
/// last index with positive mass when rounding leaves the cumulative sum
/// short of the uniform draw.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::lit(rng.gen::<f64>());
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs
        .iter()
        .rposition(|&p| p > T::zero())
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frequencies_follow_probabilities() {
        let probs = [0.1, 0.2, 0.0, 0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.01);
        }
    }
}
