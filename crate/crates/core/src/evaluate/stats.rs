//! Student-t tail probabilities and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Two-sided tail probability `P(|T| ≥ |t|)` for Student's t with `df`
/// degrees of freedom, via `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `n − 1`).
    pub sd: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
}

/// One-sample t-test of `H0: mean(d) = 0`, which is the paired test when
/// `d` holds per-pair differences.
pub fn paired_t_test(differences: &[f64]) -> Result<TTest> {
    let n = differences.len();
    if n < 2 {
        return Err(Error::Precondition(format!("t-test needs n ≥ 2, got {n}")));
    }
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Validation("non-finite difference".into()));
    }
    let nf = n as f64;
    let mean = differences.iter().sum::<f64>() / nf;
    let ss: f64 = differences.iter().map(|d| (d - mean) * (d - mean)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t_stat = mean / (sd / nf.sqrt());
    let df = nf - 1.0;
    Ok(TTest {
        n,
        mean,
        sd,
        t_stat,
        df,
        p_value: student_t_two_sided(t_stat, df),
    })
}
