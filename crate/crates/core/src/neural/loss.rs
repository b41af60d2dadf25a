use nalgebra::DMatrix;

/// Huber loss summed over outputs and averaged over the batch, with its
/// gradient w.r.t. the predictions.
///
/// `L(r) = r^2 / 2` for `|r| <= delta`, `delta (|r| - delta / 2)` otherwise.
pub fn huber(predicted: &DMatrix<f64>, target: &DMatrix<f64>, delta: f64) -> (f64, DMatrix<f64>) {
    let batch = predicted.ncols().max(1) as f64;
    let residual = predicted - target;
    let loss = residual
        .iter()
        .map(|&r| {
            if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * (r.abs() - 0.5 * delta)
            }
        })
        .sum::<f64>()
        / batch;
    let grad = residual.map(|r| r.clamp(-delta, delta) / batch);
    (loss, grad)
}
