/// Area under the ROC curve via the rank-sum statistic, with mid-ranks for
/// tied scores. `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y >= 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] >= 0.5 {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Some((pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Mean logistic loss of margins against 0/1 labels.
pub fn log_loss(margins: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        // log(1 + e^m) - y m, written to avoid overflow
        .map(|(&m, &y)| m.max(0.0) + (-m.abs()).exp().ln_1p() - y * m)
        .sum();
    total / margins.len().max(1) as f64
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
    fn auc_pairs(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1.0 && yj == 0.0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.4, 0.9, 0.05];
        let labels = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let got = roc_auc(&scores, &labels).unwrap();
        assert!((got - auc_pairs(&scores, &labels)).abs() < 1e-15);
        assert_eq!(roc_auc(&[0.1, 0.9], &[0.0, 1.0]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &[1.0, 0.0]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[1.0, 0.0]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.5], &[1.0, 1.0]), None);
    }

    #[test]
    fn log_loss_is_stable() {
        assert!((log_loss(&[0.0], &[1.0]) - 2f64.ln()).abs() < 1e-15);
        assert!(log_loss(&[800.0], &[1.0]).abs() < 1e-300);
        assert!((log_loss(&[-800.0], &[1.0]) - 800.0).abs() < 1e-9);
        assert!((sigmoid(-0.4) - 0.40131).abs() < 1e-5);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }
}
