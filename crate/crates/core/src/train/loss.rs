//! Weighted sum of binary cross-entropy and soft Dice on logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
    /// Added to numerator and denominator of the Dice ratio.
    pub smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bce_weight: 5.0,
            dice_weight: 2.0,
            smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.bce_weight) || !ok(self.dice_weight) {
            return Err(Error::Config(format!(
                "loss weights must be positive, got bce {} dice {}",
                self.bce_weight, self.dice_weight
            )));
        }
        if !(self.smooth.is_finite() && self.smooth >= 0.0) {
            return Err(Error::Config(format!("dice smoothing must be non-negative, got {}", self.smooth)));
        }
        Ok(())
    }
}

/// Scalar nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub bce: Var,
    pub dice: Var,
}

/// `masks` must hold only 0 and 1 and match `logits` in shape.
pub fn composite_loss<T: Scalar>(g: &mut Graph<'_, T>, logits: Var, masks: Var, cfg: &LossConfig) -> Result<LossParts> {
    if g.shape(logits) != g.shape(masks) {
        return Err(shape_err(
            "composite_loss",
            format!("logits {:?} vs masks {:?}", g.shape(logits), g.shape(masks)),
        ));
    }
    if let Some(v) = g.value(masks).data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(invalid("composite_loss", format!("mask value {v} is not binary")));
    }
    // softplus(z) - y z == -[y log σ(z) + (1-y) log(1-σ(z))]
    let sp = g.softplus(logits);
    let yz = g.mul(masks, logits)?;
    let pix = g.sub(sp, yz)?;
    let bce = g.mean_all(pix);

    let p = g.sigmoid(logits);
    let py = g.mul(p, masks)?;
    let inter = g.sum_all(py);
    let sum_p = g.sum_all(p);
    let sum_y = g.value(masks).sum_f64();
    let num = g.mul_scalar(inter, 2.0);
    let num = g.add_scalar(num, cfg.smooth);
    let den = g.add_scalar(sum_p, sum_y + cfg.smooth);
    let ratio = g.div(num, den)?;
    let neg = g.neg(ratio);
    let dice = g.add_scalar(neg, 1.0);

    let wb = g.mul_scalar(bce, cfg.bce_weight);
    let wd = g.mul_scalar(dice, cfg.dice_weight);
    let total = g.add(wb, wd)?;
    Ok(LossParts { total, bce, dice })
}
