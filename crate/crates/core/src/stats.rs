//! Summary statistics for episode scores.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 when `n == 1`.
    pub std: f64,
    /// Half-width of the 95% Student-t interval, `t_{n−1} · σ / √n`.
    pub ci95: Option<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided 97.5% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile(dof: usize) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(t.inverse_cdf(0.975))
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(invalid("cannot summarize zero scores"));
    }
    let n = xs.len();
    let std = sample_std(xs);
    let ci95 = if n >= 2 {
        Some(t_quantile(n - 1)? * std / (n as f64).sqrt())
    } else {
        None
    };
    Ok(Summary {
        n,
        mean: mean(xs),
        std,
        ci95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_value_interval() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 1.5811).abs() < 1e-4);
        assert!((t_quantile(4).unwrap() - 2.7764).abs() < 1e-4);
        assert!((s.ci95.unwrap() - 1.963).abs() < 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(summarize(&[]).is_err());
        let one = summarize(&[7.0]).unwrap();
        assert_eq!((one.mean, one.std, one.ci95), (7.0, 0.0, None));
    }
}
