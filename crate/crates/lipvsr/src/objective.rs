//! The combined training objective.
//!
//! total = lambda * (gamma * inter + (1 - gamma) * ctc)
//!         + (1 - lambda) * attn
//!
//! where `inter` is the mean of the K intermediate CTC losses, `ctc` the
//! output-layer CTC loss, and `attn` the bi-decoder loss. With K = 0 the
//! intermediate term is defined as zero and gamma is forced to zero, so
//! an encoder without intermediate modules needs no special casing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    /// Weight of the whole CTC branch.
    pub lambda: f64,
    /// Share of the CTC branch given to the intermediate losses.
    pub gamma: f64,
    /// Weight of the right (reversed) decoder inside the attention loss.
    pub alpha: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.1,
            gamma: 0.3,
            alpha: 0.3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Every component of one training step, as taped scalars.
pub struct LossBreakdown {
    pub ctc: Tensor,
    pub inter_each: Vec<Tensor>,
    pub inter_mean: Tensor,
    pub left: Tensor,
    pub right: Tensor,
    pub attn: Tensor,
    pub total: Tensor,
}

/// Plain values for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub ctc: f64,
    pub inter: f64,
    pub left: f64,
    pub right: f64,
    pub attn: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn values(&self) -> LossValues {
        LossValues {
            ctc: self.ctc.item(),
            inter: self.inter_mean.item(),
            left: self.left.item(),
            right: self.right.item(),
            attn: self.attn.item(),
            total: self.total.item(),
        }
    }
}

/// Mean of the intermediate losses; zero for K = 0.
pub fn total_intermediate_loss(inter_each: &[Tensor]) -> Result<Tensor> {
    if inter_each.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let mut acc = inter_each[0].clone();
    for t in &inter_each[1..] {
        acc = acc.add(t)?;
    }
    acc.scale(1.0 / inter_each.len() as f64)
}

/// Assembles the total objective from its components. Non-finite
/// components are reported by name.
pub fn total_loss(
    ctc: Tensor,
    inter_each: Vec<Tensor>,
    left: Tensor,
    right: Tensor,
    hp: &HyperParams,
) -> Result<LossBreakdown> {
    hp.validate()?;
    for (name, t) in [("ctc", &ctc), ("left", &left), ("right", &right)] {
        if !t.item().is_finite() {
            return Err(Error::TrainingLoss {
                component: match name {
                    "ctc" => "ctc",
                    "left" => "left",
                    _ => "right",
                },
            });
        }
    }
    let inter_mean = total_intermediate_loss(&inter_each)?;
    if !inter_mean.item().is_finite() {
        return Err(Error::TrainingLoss { component: "inter" });
    }
    let attn = crate::decoder::attention_loss(&left, &right, hp.alpha)?;
    let gamma = if inter_each.is_empty() { 0.0 } else { hp.gamma };
    let ctc_branch = inter_mean
        .scale(gamma)?
        .add(&ctc.scale(1.0 - gamma)?)?;
    let total = ctc_branch
        .scale(hp.lambda)?
        .add(&attn.scale(1.0 - hp.lambda)?)?;
    Ok(LossBreakdown {
        ctc,
        inter_each,
        inter_mean,
        left,
        right,
        attn,
        total,
    })
}
