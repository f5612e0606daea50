//! Least-squares line fits, used for log-log decay and growth exponents.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the residuals `y - (slope·x + intercept)`.
    pub rms_residual: f64,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares through the points `(x_i, y_i)`.
pub fn line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "line fit needs at least two paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("line fit with identical abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    Ok(LineFit { slope, intercept, rms_residual: (ss / n).sqrt() })
}

/// Fit of `ln y` against `ln x`. Nonpositive data is rejected.
pub fn log_log(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit of nonpositive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.7)).collect();
        let f = log_log(&x, &y).unwrap();
        assert!((f.slope + 1.7).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.rms_residual < 1e-12);
    }

    #[test]
    fn residual_of_known_scatter() {
        // best line through (0,0),(1,1),(2,0) is y = 1/3, residuals -1/3, 2/3, -1/3
        let f = line(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!(f.slope.abs() < 1e-15);
        assert!((f.intercept - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.rms_residual - (2.0f64 / 9.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(line(&[1.0], &[1.0]).is_err());
        assert!(line(&[1.0, 1.0], &[0.0, 2.0]).is_err());
        assert!(log_log(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }
}
