use crate::tensor::sigmoid;

/// Probability clamp keeping `log` finite.
pub const PROB_EPS: f64 = 1e-12;

/// `−y·ln p − (1−y)·ln(1−p)` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// Loss of a raw score and its derivative with respect to the score.
/// Inside the clamp the derivative is `σ(ψ) − y`; in the clamped tails it is 0.
pub fn bce_with_logit(psi: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(psi);
    let loss = bce_loss(p, y);
    let grad = if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        p - y
    } else {
        0.0
    };
    (loss, grad)
}
