use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binomial standard error √(p(1−p)/n).
pub fn proportion_se(p: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("proportion {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::invalid("standard error needs n >= 1"));
    }
    Ok((p * (1.0 - p) / n as f64).sqrt())
}

/// A proportion over `n` trials with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub n: usize,
    pub p: f64,
    pub se: f64,
}

impl Proportion {
    /// `successes` may be fractional (ties count one half). An empty sample
    /// yields p = 0, se = 0.
    pub fn from_count(successes: f64, n: usize) -> Self {
        if n == 0 {
            return Proportion { n, p: 0.0, se: 0.0 };
        }
        let p = (successes / n as f64).clamp(0.0, 1.0);
        Proportion {
            n,
            p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    /// "pp.p ± e.e" in percentage points.
    pub fn percent_cell(&self) -> String {
        format!("{:.1} ± {:.1}", self.p * 100.0, self.se * 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_hand_values() {
        assert!((proportion_se(0.5, 100).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(proportion_se(0.0, 1350).unwrap(), 0.0);
        assert!((proportion_se(0.385, 1350).unwrap() - 0.01324).abs() < 1e-5);
    }

    #[test]
    fn se_rejects_bad_inputs() {
        assert!(proportion_se(1.1, 10).is_err());
        assert!(proportion_se(-0.1, 10).is_err());
        assert!(proportion_se(0.5, 0).is_err());
    }

    #[test]
    fn percent_cell_format() {
        let p = Proportion::from_count(0.385 * 1350.0, 1350);
        assert_eq!(p.percent_cell(), "38.5 ± 1.3");
        assert_eq!(Proportion::from_count(0.0, 0).percent_cell(), "0.0 ± 0.0");
    }
}
