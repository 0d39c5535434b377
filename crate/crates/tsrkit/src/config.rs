//! Shared hyperparameters for target generation and the loss stack.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Loss and target-generation hyperparameters.
///
/// The defaults reproduce the reference training recipe; the geometry of the
/// output grid is controlled by `downscale` (full-resolution pixels per
/// output-grid pixel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the center-to-corners regression term.
    pub lambda_u: f64,
    /// Weight of the corners-to-center regression term.
    pub lambda_v: f64,
    /// Weight of the penalty on invalid corner-to-center slots.
    pub lambda_e: f64,
    /// Focal-loss exponent on the prediction at positive pixels.
    pub focal_alpha: f64,
    /// Focal-loss penalty-reduction exponent on the ground truth at
    /// negative pixels.
    pub focal_beta: f64,
    /// Saturation point of the span re-weighting curve.
    pub span_cap: f64,
    /// Full-resolution pixels per output-grid pixel.
    pub downscale: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_u: 1.0,
            lambda_v: 0.5,
            lambda_e: 0.2,
            focal_alpha: 2.0,
            focal_beta: 4.0,
            span_cap: 0.2,
            downscale: 4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("lambda_u", self.lambda_u),
            ("lambda_v", self.lambda_v),
            ("lambda_e", self.lambda_e),
            ("focal_alpha", self.focal_alpha),
            ("focal_beta", self.focal_beta),
            ("span_cap", self.span_cap),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Format(format!("{name} must be positive, got {v}")));
            }
        }
        if self.downscale < 1 {
            return Err(Error::Format("downscale must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert!(LossConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_downscale_is_rejected() {
        let cfg = LossConfig { downscale: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
