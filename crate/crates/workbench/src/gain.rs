//! Relative improvement of a hybrid run over its pure task-based baseline,
//! and reader load distribution.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GainError {
    #[error("original execution time is zero")]
    DivisionByZero,
}

/// `(original - hybrid) / original`. Negative when the hybrid run is slower.
pub fn gain(time_original_ms: f64, time_hybrid_ms: f64) -> Result<f64, GainError> {
    if time_original_ms == 0.0 {
        return Err(GainError::DivisionByZero);
    }
    Ok((time_original_ms - time_hybrid_ms) / time_original_ms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainReport {
    pub time_original_ms: f64,
    pub time_hybrid_ms: f64,
    pub gain: f64,
}

impl GainReport {
    pub fn new(time_original_ms: f64, time_hybrid_ms: f64) -> Result<Self, GainError> {
        Ok(GainReport {
            time_original_ms,
            time_hybrid_ms,
            gain: gain(time_original_ms, time_hybrid_ms)?,
        })
    }
}

/// Elements processed per reader, in reader order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
}

impl BalanceReport {
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let fractions = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        BalanceReport { counts, fractions }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn max_share(&self) -> f64 {
        self.fractions.iter().copied().fold(0.0, f64::max)
    }

    /// Largest over smallest share; infinite if some reader got nothing.
    pub fn max_min_ratio(&self) -> f64 {
        let min = self.fractions.iter().copied().fold(f64::INFINITY, f64::min);
        self.max_share() / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(gain(100.0, 77.0), Ok(0.23));
        assert_eq!(gain(42.0, 42.0), Ok(0.0));
        assert_eq!(gain(100.0, 150.0), Ok(-0.5));
        assert_eq!(gain(0.0, 1.0), Err(GainError::DivisionByZero));
    }

    #[test]
    fn balance_fractions() {
        let b = BalanceReport::from_counts(vec![75, 25]);
        assert_eq!(b.fractions, vec![0.75, 0.25]);
        assert_eq!(b.max_min_ratio(), 3.0);
        assert_eq!(BalanceReport::from_counts(vec![100]).max_share(), 1.0);
    }
}
