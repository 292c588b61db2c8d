//! Deep-supervised BCE + IoU objective with a two-phase schedule:
//! BCE only for the first fraction of training, then BCE + IoU.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// IoU smoothing epsilon. Any positive value works; 1.0 is the common
/// soft-IoU choice and is recorded in checkpointed configs.
pub const IOU_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPhase {
    BceOnly,
    BcePlusIou,
}

impl LossPhase {
    /// Phase for a 1-based epoch index: the first floor(fraction * total)
    /// epochs are BCE-only.
    pub fn for_epoch(epoch: usize, total_epochs: usize, fraction: f64) -> Self {
        let bce_epochs = (fraction * total_epochs as f64).floor() as usize;
        if epoch <= bce_epochs {
            LossPhase::BceOnly
        } else {
            LossPhase::BcePlusIou
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossPhase::BceOnly => "bce_only",
            LossPhase::BcePlusIou => "bce_plus_iou",
        }
    }
}

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "loss operands differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Elementwise sigmoid built from primitives with defined backward passes
/// for every dtype.
pub fn sigmoid_t(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Mean binary cross entropy from logits, numerically stable:
/// max(x, 0) - x*g + ln(1 + exp(-|x|)).
pub fn bce_with_logits(logits: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_shapes(logits, gt)?;
    let pos = logits.relu()?;
    let prod = (logits * gt)?;
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((pos - prod)? + softplus)?.mean_all()?)
}

/// Mean binary cross entropy from probabilities in (0, 1).
pub fn bce_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_shapes(pred, gt)?;
    let term_pos = (gt * pred.log()?)?;
    let ones_minus_p = (pred.neg()? + 1.0)?;
    let ones_minus_g = (gt.neg()? + 1.0)?;
    let term_neg = (ones_minus_g * ones_minus_p.log()?)?;
    Ok((term_pos + term_neg)?.neg()?.mean_all()?)
}

/// Soft IoU loss: 1 - (sum(p*g) + eps) / (sum(p + g - p*g) + eps).
pub fn iou_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_shapes(pred, gt)?;
    let inter = (pred * gt)?.sum_all()?;
    let union = ((pred + gt)? - (pred * gt)?)?.sum_all()?;
    let ratio = ((inter + IOU_EPS)? / (union + IOU_EPS)?)?;
    Ok(ratio.neg()?.affine(1.0, 1.0)?)
}

/// One named loss term.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub head: String,
    pub kind: &'static str,
    pub value: f64,
}

/// Scalar breakdown of one total-loss evaluation.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub per_term: Vec<LossTerm>,
    pub phase: LossPhase,
}

/// Deep-supervised total: BCE (+ IoU in the second phase) over the five
/// side-output logit maps and, when present, the semantic mask logits.
/// All predictions must already be at ground-truth resolution.
///
/// Returns the differentiable total together with its scalar breakdown.
pub fn total_loss(
    side_logits: &[Tensor],
    mask_logits: Option<&Tensor>,
    gt: &Tensor,
    phase: LossPhase,
) -> Result<(Tensor, LossReport)> {
    let mut heads: Vec<(String, &Tensor)> = side_logits
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("d{}", i + 1), t))
        .collect();
    if let Some(m) = mask_logits {
        heads.push(("m_r".to_string(), m));
    }
    let mut total: Option<Tensor> = None;
    let mut per_term = Vec::new();
    for (name, logits) in heads {
        let bce = bce_with_logits(logits, gt)?;
        per_term.push(LossTerm {
            head: name.clone(),
            kind: "bce",
            value: bce.to_scalar::<f32>()? as f64,
        });
        total = Some(match total {
            Some(t) => (t + &bce)?,
            None => bce,
        });
        if phase == LossPhase::BcePlusIou {
            let probs = sigmoid_t(logits)?;
            let iou = iou_loss(&probs, gt)?;
            per_term.push(LossTerm {
                head: name,
                kind: "iou",
                value: iou.to_scalar::<f32>()? as f64,
            });
            total = Some((total.unwrap() + &iou)?);
        }
    }
    let total = total.ok_or_else(|| Error::Shape("no loss heads supplied".into()))?;
    let report = LossReport {
        total: total.to_scalar::<f32>()? as f64,
        per_term,
        phase,
    };
    Ok((total, report))
}
