//! Average precision, precision at recall and ROC-AUC on a small ranking.

use protofeed::evalkit::{average_precision, precision_at_recall, roc_auc};

fn main() {
    let scores = [0.95, 0.9, 0.8, 0.8, 0.6, 0.4, 0.3, 0.1];
    let labels = [true, false, true, true, false, true, false, false];
    println!(
        "AP      {:.4}",
        average_precision(&scores, &labels).unwrap()
    );
    for r in [0.5, 0.75, 1.0] {
        println!(
            "P@{:<3}   {:.4}",
            (r * 100.0) as u32,
            precision_at_recall(&scores, &labels, r).unwrap()
        );
    }
    println!("ROC-AUC {:.4}", roc_auc(&scores, &labels).unwrap());
    println!(
        "no positives: {}",
        average_precision(&scores, &[false; 8]).unwrap_err()
    );
}
