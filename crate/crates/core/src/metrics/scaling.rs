use serde::{Deserialize, Serialize};

use super::MetricError;

/// `error ≈ exp(log_a) * C^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub log_a: f64,
    pub r2: f64,
}

impl FitResult {
    pub fn predict(&self, compute: f64) -> f64 {
        (self.log_a - self.alpha * compute.ln()).exp()
    }
}

/// Ordinary least squares on `(ln C, ln error)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<FitResult, MetricError> {
    if points.len() < 2 {
        return Err(MetricError::Empty(format!("{} points, need at least 2", points.len())));
    }
    if let Some(&(c, e)) =
        points.iter().find(|&&(c, e)| !(c > 0.0 && e > 0.0 && c.is_finite() && e.is_finite()))
    {
        return Err(MetricError::Domain(format!("point ({c}, {e}) is not positive")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricError::Domain("all compute values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Ok(FitResult { alpha: -slope, log_a: intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fits() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let c = 10f64.powi(i);
                (c, 2.0 * c.powf(-0.102))
            })
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.alpha - 0.102).abs() < 1e-9);
        assert!((fit.log_a - 2f64.ln()).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let two = fit_power_law(&[(1.0, 1.0), (100.0, 0.1)]).unwrap();
        assert!((two.alpha - 0.5).abs() < 1e-15);
        assert_eq!(two.r2, 1.0);
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (0.0, 1.0)]).is_err());
    }
}
