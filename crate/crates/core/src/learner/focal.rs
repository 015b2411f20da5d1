//! Focal loss and its derivative with respect to the logit.
//!
//! `FL(p_t) = -alpha_t (1 - p_t)^gamma ln(p_t)` with `p_t = p` for positives
//! and `1 - p` otherwise. With `gamma = 0` and `alpha_t = 1` this is plain
//! binary cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp used when the loss is evaluated on a probability.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    /// Weight applied to this example's term.
    pub alpha_t: f64,
    /// Focusing exponent.
    pub gamma: f64,
}

impl FocalLossParams {
    pub fn new(alpha_t: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha_t, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn cross_entropy() -> Self {
        Self {
            alpha_t: 1.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_t) {
            return Err(Error::InvalidArgument(format!("alpha_t {} outside [0, 1]", self.alpha_t)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::InvalidArgument(format!("gamma {} must be ≥ 0", self.gamma)));
        }
        Ok(())
    }
}

/// Class-balanced focal settings: `alpha` weights positives, `1 - alpha`
/// weights negatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalSchedule {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalSchedule {
    pub fn for_label(&self, y: u8) -> FocalLossParams {
        FocalLossParams {
            alpha_t: if y == 1 { self.alpha } else { 1.0 - self.alpha },
            gamma: self.gamma,
        }
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(logistic(z))` without cancellation.
#[inline]
pub fn log_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Focal loss of a predicted probability `p` for label `y` (0 or 1).
pub fn focal_loss(p: f64, y: u8, params: &FocalLossParams) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pt = if y == 1 { p } else { 1.0 - p };
    let w = if params.gamma == 0.0 {
        1.0
    } else {
        (1.0 - pt).powf(params.gamma)
    };
    -params.alpha_t * w * pt.ln()
}

/// Focal loss as a function of the logit, exact for any finite `z`.
pub fn focal_loss_logit(z: f64, y: u8, params: &FocalLossParams) -> f64 {
    let s = if y == 1 { z } else { -z };
    let log_pt = log_logistic(s);
    let one_minus_pt = logistic(-s);
    let w = if params.gamma == 0.0 {
        1.0
    } else {
        one_minus_pt.powf(params.gamma)
    };
    -params.alpha_t * w * log_pt
}

/// d(focal_loss(logistic(z), y)) / dz.
pub fn focal_loss_grad(z: f64, y: u8, params: &FocalLossParams) -> f64 {
    // with s = ±1 for y = 1 / 0 and p_t = logistic(s z):
    //   dL/dz = s alpha_t (1 - p_t)^gamma [gamma p_t ln p_t - (1 - p_t)]
    let sign = if y == 1 { 1.0 } else { -1.0 };
    let sz = sign * z;
    // one exponential serves p_t, 1 - p_t and ln p_t
    let e = (-sz.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    let (pt, one_minus_pt, log_pt) = if sz >= 0.0 {
        (inv, e * inv, -e.ln_1p())
    } else {
        (e * inv, inv, sz - e.ln_1p())
    };
    let w = if params.gamma == 0.0 {
        1.0
    } else if params.gamma == 2.0 {
        one_minus_pt * one_minus_pt
    } else {
        one_minus_pt.powf(params.gamma)
    };
    sign * params.alpha_t * w * (params.gamma * pt * log_pt - one_minus_pt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fl(alpha_t: f64, gamma: f64) -> FocalLossParams {
        FocalLossParams { alpha_t, gamma }
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let v = focal_loss(0.5, 1, &fl(1.0, 0.0));
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gamma_two_at_half() {
        // (1 - 0.5)^2 * ln 2
        let v = focal_loss(0.5, 1, &fl(1.0, 2.0));
        assert!((v - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn pt_symmetry() {
        for (a, g) in [(0.25, 2.0), (1.0, 0.0), (0.7, 5.0)] {
            let p = fl(a, g);
            let (a, b) = (focal_loss(0.9, 0, &p), focal_loss(0.1, 1, &p));
            assert!((a - b).abs() <= 1e-14 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn extremes_are_finite() {
        let p = fl(1.0, 2.0);
        assert!(focal_loss(0.0, 1, &p).is_finite());
        assert!(focal_loss(1.0, 0, &p).is_finite());
        assert!(focal_loss_grad(800.0, 0, &p).is_finite());
        assert!(focal_loss_grad(-800.0, 1, &p).is_finite());
    }

    #[test]
    fn grad_is_cross_entropy_gradient_at_gamma_zero() {
        for &z in &[-3.0, -0.2, 0.0, 1.7, 6.0] {
            let p = logistic(z);
            assert!((focal_loss_grad(z, 1, &fl(1.0, 0.0)) - (p - 1.0)).abs() < 1e-15);
            assert!((focal_loss_grad(z, 0, &fl(1.0, 0.0)) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn well_classified_positive_has_vanishing_gradient() {
        let g = focal_loss_grad(30.0, 1, &fl(0.25, 2.0));
        assert!(g.abs() < 1e-30);
    }

    #[test]
    fn logit_form_agrees_with_probability_form() {
        for &z in &[-8.0, -1.0, 0.3, 4.0] {
            for y in [0, 1] {
                let p = fl(0.4, 1.5);
                let a = focal_loss(logistic(z), y, &p);
                let b = focal_loss_logit(z, y, &p);
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(FocalLossParams::new(1.2, 0.0).is_err());
        assert!(FocalLossParams::new(0.5, -1.0).is_err());
        assert!(FocalLossParams::new(0.5, 2.0).is_ok());
    }
}
