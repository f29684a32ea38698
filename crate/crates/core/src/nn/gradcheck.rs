//! Central finite differences for verifying analytic gradients.

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1e-6)`; the floor keeps near-zero gradients from
/// dividing round-off by round-off.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error across two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[1.5, -1.0], 1e-5);
        assert!(relative_error(g[0], 3.0 * 1.5 * 1.5) < 1e-8);
        assert!(relative_error(g[1], 2.0) < 1e-8);
    }
}
