//! Binary focal loss with its analytic derivative.

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const FOCAL_CLAMP_EPS: f64 = 1e-7;

/// Binary focal loss of a predicted probability `yhat` against label `y`.
///
/// For `y = 1` the loss is `-beta * (1 - p)^gamma * ln(p)`, for `y = 0`
/// it is `-(1 - beta) * p^gamma * ln(1 - p)`, with `p` the clamped
/// prediction. Returns `(loss, d loss / d p)`.
pub fn focal_loss(yhat: f64, y: bool, beta: f64, gamma: f64) -> (f64, f64) {
    let p = yhat.clamp(FOCAL_CLAMP_EPS, 1.0 - FOCAL_CLAMP_EPS);
    if y {
        let q = 1.0 - p;
        let qg = q.powf(gamma);
        let loss = -beta * qg * p.ln();
        let dp = if gamma == 0.0 {
            -beta / p
        } else {
            beta * gamma * q.powf(gamma - 1.0) * p.ln() - beta * qg / p
        };
        (loss, dp)
    } else {
        let pg = p.powf(gamma);
        let loss = -(1.0 - beta) * pg * (1.0 - p).ln();
        let dp = if gamma == 0.0 {
            (1.0 - beta) / (1.0 - p)
        } else {
            (1.0 - beta) * (pg / (1.0 - p) - gamma * p.powf(gamma - 1.0) * (1.0 - p).ln())
        };
        (loss, dp)
    }
}
