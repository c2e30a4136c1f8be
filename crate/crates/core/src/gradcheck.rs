//! Finite-difference helpers for verifying gradients.

/// Central differences of `f` at `x` along the listed coordinates.
/// The step is scaled by `max(1, |x_c|)`.
pub fn central_differences(
    f: &impl Fn(&[f64]) -> f64,
    x: &[f64],
    coords: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&c| {
            let h = step * x[c].abs().max(1.0);
            probe[c] = x[c] + h;
            let up = f(&probe);
            probe[c] = x[c] - h;
            let down = f(&probe);
            probe[c] = x[c];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Per-coordinate relative error `|a - b| / max(|a|, |b|, floor)`, where the
/// floor is `1e-3` times the largest magnitude in either vector so that
/// near-zero entries are measured against the gradient's overall scale.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .collect()
}
