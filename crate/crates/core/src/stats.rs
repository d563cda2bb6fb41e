//! Small descriptive-statistics helpers shared by the panel and evaluation code.

/// Arithmetic mean. `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Population standard deviation (divides by `n`).
pub fn population_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    Some(var.sqrt())
}

/// Mean and population SD in one call.
pub fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    Some((mean(xs)?, population_sd(xs)?))
}

/// Pearson correlation of two equal-length samples.
///
/// Returns `None` when fewer than two points are given or when either
/// sample has zero variance. The result is clamped into `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "pearson: length mismatch");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Exact-constant inputs give exactly zero here; near-constant inputs are
    // caught relative to the magnitude of the data.
    let scale_x = xs.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
    let scale_y = ys.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1e-300);
    let tol = 1e-24 * n as f64;
    if sxx <= tol * scale_x * scale_x || syy <= tol * scale_y * scale_y {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return None;
    }
    Some(r.clamp(-1.0, 1.0))
}
