use super::TrainError;

/// Probability that a random positive scores above a random negative, with
/// ties credited one half.
///
/// Sorts once and counts, per group of equal scores, the negatives strictly
/// below it plus half of the negatives inside it. The pair count is summed
/// in halves, which `f64` represents exactly, so the result equals the
/// exhaustive pairwise ratio bit for bit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Metric("NaN score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(TrainError::Metric("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::Metric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut wins = 0.0;
    let mut negatives_below = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0.0, 0.0);
        // -0.0 and 0.0 compare equal as scores.
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1.0;
            } else {
                neg += 1.0;
            }
            j += 1;
        }
        wins += pos * negatives_below + 0.5 * pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(wins / (positives as f64 * negatives as f64))
}
