//! Value-level multitask loss, mirroring what the tape records.

use super::tape::log_sum_exp;
use crate::artic::POSTERIOR_EPSILON;
use crate::{Error, Result, Scalar};

/// Mean per-step phone cross-entropy plus mean per-step indicator binary
/// cross-entropy (summed over dimensions). Either part may be empty.
/// Indicator probabilities are clamped before logs.
pub fn mtl_loss<S: Scalar>(
    phone_logits: &[Vec<S>],
    phone_targets: &[usize],
    indicator_probs: &[Vec<S>],
    indicator_targets: &[Vec<S>],
) -> Result<S> {
    if phone_logits.len() != phone_targets.len() || indicator_probs.len() != indicator_targets.len() {
        return Err(Error::shape(format!(
            "phones {}/{} steps, indicators {}/{} steps",
            phone_logits.len(),
            phone_targets.len(),
            indicator_probs.len(),
            indicator_targets.len()
        )));
    }
    let mut total = S::zero();
    if !phone_logits.is_empty() {
        let mut ce = S::zero();
        for (z, &y) in phone_logits.iter().zip(phone_targets) {
            let zy = *z
                .get(y)
                .ok_or_else(|| Error::shape(format!("target {y} outside {} logits", z.len())))?;
            ce += log_sum_exp(z) - zy;
        }
        total += ce / S::of(phone_logits.len() as f64);
    }
    if !indicator_probs.is_empty() {
        let eps = S::of(POSTERIOR_EPSILON);
        let mut bce = S::zero();
        for (p, t) in indicator_probs.iter().zip(indicator_targets) {
            if p.len() != t.len() {
                return Err(Error::shape(format!("{} probabilities for {} targets", p.len(), t.len())));
            }
            for (&p, &t) in p.iter().zip(t) {
                let p = p.max(eps).min(S::one() - eps);
                bce -= t * p.ln() + (S::one() - t) * (S::one() - p).ln();
            }
        }
        total += bce / S::of(indicator_probs.len() as f64);
    }
    Ok(total)
}
