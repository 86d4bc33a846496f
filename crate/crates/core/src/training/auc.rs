//! Area under the ROC curve by pair counting.

use std::cmp::Ordering;

use crate::error::{bail, Result};

/// Probability that a random positive (fake) outranks a random negative
/// (real) under `score`, ties counting one half.
///
/// Sorts once and counts in half-units, so the result is the exact ratio
/// `(2 * wins + ties) / (2 * n_pos * n_neg)` rounded once.
pub fn evaluate_auc(scores: &[(f64, bool)]) -> Result<f64> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        bail!(Domain, "NaN score");
    }
    let n_pos = scores.iter().filter(|(_, p)| *p).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        bail!(Domain, "AUC needs at least one positive and one negative");
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // walk groups of equal score, tracking negatives strictly below
    let mut half_units = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_units += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(half_units as f64 / (2 * n_pos * n_neg) as f64)
}
