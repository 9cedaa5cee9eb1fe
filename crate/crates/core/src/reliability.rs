//! Probability that at least one of `k` independently sourced components
//! is honest: `1 - p_error^k`.

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReliabilityError {
    #[error("p_error must lie in [0, 1], got {0}")]
    Probability(String),
    #[error("k must be at least 1")]
    ZeroK,
}

pub fn k_tolerance(p_error: f64, k: u32) -> Result<f64, ReliabilityError> {
    if !(0.0..=1.0).contains(&p_error) {
        return Err(ReliabilityError::Probability(p_error.to_string()));
    }
    if k == 0 {
        return Err(ReliabilityError::ZeroK);
    }
    Ok(1.0 - p_error.powi(k as i32))
}

/// Exact decimal evaluation: `p_error` is a decimal string such as
/// `"0.1"`, and the result is the exact decimal expansion.
pub fn k_tolerance_decimal(p_error: &str, k: u32) -> Result<String, ReliabilityError> {
    if k == 0 {
        return Err(ReliabilityError::ZeroK);
    }
    let bad = || ReliabilityError::Probability(p_error.to_string());
    let (int, frac) = p_error.split_once('.').unwrap_or((p_error, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = frac.len() as u32;
    let num: BigUint = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let den = BigUint::from(10u32).pow(digits);
    if num > den {
        return Err(bad());
    }
    // 1 - num^k / den^k, written with digits*k decimal places
    let scale = den.pow(k);
    let rest = &scale - num.pow(k);
    let places = (digits * k) as usize;
    if places == 0 {
        return Ok(rest.to_string());
    }
    let s = format!("{:0>width$}", rest.to_string(), width = places + 1);
    let (i, f) = s.split_at(s.len() - places);
    let f = f.trim_end_matches('0');
    Ok(if f.is_empty() { i.to_string() } else { format!("{i}.{f}") })
}
