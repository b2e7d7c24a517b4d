use crate::error::{Error, Result};

/// Average precision (area under the step-interpolated precision-recall
/// curve). Items with equal scores share one threshold, so every positive
/// in a tie group is credited with the precision of the whole group.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut group_pos = 0usize;
        while i < order.len() && scores[order[i]] == threshold {
            group_pos += (labels[order[i]] == 1) as usize;
            seen += 1;
            i += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            area += group_pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(area / positives as f64)
}
