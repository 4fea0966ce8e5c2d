//! Small summary statistics used by the benchmark harness.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn rmse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::dims("rmse operands", truth.len(), estimate.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(((estimate - truth).norm_squared() / truth.len() as f64).sqrt())
}

/// Median of a non-empty sample; even lengths average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("log-log fit needs at least two paired points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log fit needs strictly positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("log-log fit needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}

/// Column mean and unbiased covariance of the samples stored as columns.
pub fn sample_moments(samples: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.ncols();
    if n < 2 {
        return Err(Error::invalid("sample moments need at least two samples"));
    }
    let mean = samples.column_mean();
    let mut centred = samples.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centred * centred.transpose() / (n as f64 - 1.0);
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let z = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        assert_eq!(rmse(&z, &z).unwrap(), 0.0);
        let one = DVector::from_element(3, 1.0);
        assert_eq!(rmse(&one, &z).unwrap(), 1.0);
        let v = DVector::from_vec(vec![0.0, 3.0, 4.0]);
        assert!((rmse(&v, &z).unwrap() - (25.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(rmse(&v, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3e-9 * x.powi(3)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 3.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(loglog_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn moments_of_two_columns() {
        let s = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let (m, c) = sample_moments(&s).unwrap();
        assert_eq!(m[0], 2.0);
        assert_eq!(c[(0, 0)], 2.0);
    }
}
