use super::NumericsError;

/// Least-squares line through `(x, y)`, returned as `(slope, intercept)`.
///
/// Works on centered sums, so large abscissae such as calendar years do not
/// cost precision.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64), NumericsError> {
    if x.len() != y.len() {
        return Err(NumericsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(NumericsError::TooFewPoints { needed: 2, found: x.len() });
    }
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        sxx += dx * dx;
        sxy += dx * (yi - y_mean);
    }
    if sxx == 0.0 {
        return Err(NumericsError::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    Ok((slope, y_mean - slope * x_mean))
}
