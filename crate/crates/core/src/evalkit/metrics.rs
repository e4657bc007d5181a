use std::cmp::Ordering;

use super::EvalError;

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices by descending score; equal scores keep input order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Step-wise average precision: the mean of the precision at the rank of
/// every positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// Best precision among ranking prefixes reaching recall `r`.
pub fn precision_at_recall(scores: &[f64], labels: &[bool], r: f64) -> Result<f64, EvalError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(EvalError::InvalidArgument(format!(
            "recall level {r} outside (0, 1]"
        )));
    }
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut tp = 0usize;
    let mut best: f64 = 0.0;
    for (k, &i) in ranking(scores).iter().enumerate() {
        tp += usize::from(labels[i]);
        if tp as f64 >= r * pos as f64 - 1e-9 {
            best = best.max(tp as f64 / (k + 1) as f64);
        }
    }
    Ok(best)
}

/// Mann-Whitney estimate of `P(pos > neg) + P(pos = neg) / 2`, via
/// tie-averaged ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::OneClassOnly);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&t| labels[t]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        let s = [0.9, 0.8, 0.7];
        let l = [true, false, true];
        assert!((average_precision(&s, &l).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(precision_at_recall(&s, &l, 0.5).unwrap(), 1.0);
        assert!((precision_at_recall(&s, &l, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap(),
            0.5
        );
        assert_eq!(
            average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(),
            1.0
        );
    }

    #[test]
    fn ties_follow_input_order() {
        // Negatives first among equal scores: positives land at ranks 3 and 4.
        let ap = average_precision(&[0.5; 4], &[false, false, true, true]).unwrap();
        assert!((ap - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn error_cases() {
        assert!(matches!(
            average_precision(&[0.1], &[false]),
            Err(EvalError::NoPositives)
        ));
        assert!(matches!(
            precision_at_recall(&[0.1], &[false], 0.5),
            Err(EvalError::NoPositives)
        ));
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::OneClassOnly)
        ));
        assert!(precision_at_recall(&[0.1], &[true], 0.0).is_err());
        assert!(average_precision(&[f64::NAN], &[true]).is_err());
    }
}
