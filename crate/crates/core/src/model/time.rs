use super::ModelError;

/// Sinusoidal encoding of a timestamp value:
/// `p[2k] = sin(t / 10000^(2k/ξ))`, `p[2k+1] = cos(t / 10000^(2k/ξ))`.
pub fn encode_time(t: f64, width: usize) -> Result<Vec<f64>, ModelError> {
    if !width.is_multiple_of(2) {
        return Err(ModelError::Config(format!("time encoding width {width} must be even")));
    }
    if !t.is_finite() {
        return Err(ModelError::Config(format!("timestamp {t} is not finite")));
    }
    let mut out = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let arg = t / 10000f64.powf(2.0 * k as f64 / width as f64);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}
