use crate::autodiff::GradientMap;
use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `params`.
///
/// `f` receives the full parameter list with exactly one coordinate
/// perturbed. It must be deterministic: any randomness it uses has to be
/// re-seeded identically on every call.
pub fn finite_diff_gradient<F>(mut f: F, params: &[(String, Tensor)], epsilon: f64) -> Result<GradientMap>
where
    F: FnMut(&[(String, Tensor)]) -> Result<f64>,
{
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut out = GradientMap::default();
    for p in 0..work.len() {
        let mut grad = Tensor::zeros(work[p].1.shape());
        for i in 0..work[p].1.len() {
            let orig = work[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + epsilon;
            let plus = f(&work)?;
            work[p].1.data_mut()[i] = orig - epsilon;
            let minus = f(&work)?;
            work[p].1.data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
        }
        out.insert(work[p].0.clone(), grad);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)`, or zero when `|a - b| <= floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    let scale = a.abs().max(b.abs());
    if diff <= floor {
        0.0
    } else {
        diff / scale.max(floor)
    }
}
