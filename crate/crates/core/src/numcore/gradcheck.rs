//! Finite-difference reference gradients.

use super::Scalar;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn central_difference<T, F>(x: &[T], h: T, mut f: F) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps entries that are zero
/// up to rounding from dominating the comparison.
pub fn relative_error<T: Scalar>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise relative error, with a floor of 1e-3.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let floor = T::lit(1e-3);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = central_difference(&[1.0, -2.0, 3.0], 1e-4, |x| x.iter().map(|v| v * v).sum());
        assert!(max_relative_error(&[2.0, -4.0, 6.0], &g) < 1e-9);
    }
}
