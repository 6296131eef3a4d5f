/// Smooth surrogate of the satisfaction indicator `1(x ≤ 0)`:
/// `1̃_ε(x) = 1 / (1 + e^{x/ε})`.
///
/// Values near 1 mean the constraint holds with margin, values near 0 mean it
/// is violated.
pub fn logistic(x: f64, eps: f64) -> f64 {
    let z = x / eps;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `d/dx 1̃_ε(x) = −1̃(1 − 1̃)/ε`, evaluated without cancellation.
pub fn logistic_grad(x: f64, eps: f64) -> f64 {
    let e = (-(x / eps).abs()).exp();
    let d = 1.0 + e;
    -e / (d * d) / eps
}
