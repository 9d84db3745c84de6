//! Projected dual ascent on the token penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treats `lambda_tok` as a Lagrange multiplier for the constraint
/// `mean tokens <= target_budget`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetController {
    pub lambda_tok: f64,
    pub target_budget: f64,
    pub step: f64,
    pub enabled: bool,
}

impl BudgetController {
    pub fn new(lambda_tok: f64, target_budget: f64, step: f64, enabled: bool) -> Result<Self> {
        let c = Self { lambda_tok, target_budget, step, enabled };
        c.validate()?;
        Ok(c)
    }

    pub fn disabled(lambda_tok: f64) -> Self {
        Self { lambda_tok, target_budget: 1.0, step: 0.0, enabled: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tok.is_finite() && self.lambda_tok >= 0.0) {
            return Err(Error::invalid(format!("lambda_tok must be >= 0, got {}", self.lambda_tok)));
        }
        if self.enabled {
            if !(self.target_budget.is_finite() && self.target_budget > 0.0) {
                return Err(Error::invalid(format!(
                    "target budget must be > 0, got {}",
                    self.target_budget
                )));
            }
            if !(self.step.is_finite() && self.step > 0.0) {
                return Err(Error::invalid(format!("budget step must be > 0, got {}", self.step)));
            }
        }
        Ok(())
    }

    /// `lambda_tok <- max(0, lambda_tok + step * (mean_tokens - target_budget))`.
    pub fn update(&mut self, mean_tokens: f64) -> Result<f64> {
        if !self.enabled {
            return Err(Error::invalid("budget controller is disabled"));
        }
        if !(mean_tokens.is_finite() && mean_tokens >= 0.0) {
            return Err(Error::invalid(format!("mean token count must be >= 0, got {mean_tokens}")));
        }
        self.lambda_tok = (self.lambda_tok + self.step * (mean_tokens - self.target_budget)).max(0.0);
        Ok(self.lambda_tok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_examples() {
        let mut c = BudgetController::new(0.1, 10.0, 0.01, true).unwrap();
        assert!((c.update(15.0).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!((c.target_budget, c.step, c.enabled), (10.0, 0.01, true));

        let mut c = BudgetController::new(0.0, 10.0, 0.01, true).unwrap();
        assert_eq!(c.update(5.0).unwrap(), 0.0);

        let mut c = BudgetController::new(0.42, 10.0, 0.01, true).unwrap();
        assert_eq!(c.update(10.0).unwrap(), 0.42);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = BudgetController::new(0.1, 10.0, 0.01, true).unwrap();
        assert!(c.update(-1.0).is_err());
        assert!(BudgetController::disabled(0.1).update(3.0).is_err());
        assert!(BudgetController::new(-0.1, 1.0, 0.1, true).is_err());
        assert!(BudgetController::new(0.1, 0.0, 0.1, true).is_err());
        assert!(BudgetController::new(0.1, 1.0, 0.0, true).is_err());
    }

    proptest! {
        #[test]
        fn projection_and_direction(
            lambda in 0.0f64..2.0, b in 0.5f64..20.0, eta in 1e-4f64..0.5, mean in 0.0f64..40.0,
        ) {
            let mut c = BudgetController::new(lambda, b, eta, true).unwrap();
            let next = c.update(mean).unwrap();
            prop_assert!(next >= 0.0);
            if mean > b {
                prop_assert!(next > lambda);
            } else if mean < b {
                prop_assert!(next <= lambda);
                if lambda > 0.0 {
                    prop_assert!(next < lambda);
                }
            } else {
                prop_assert_eq!(next, lambda);
            }
        }
    }
}
