//! AUC-ROC with ties, and the undefined single-class case.
//!
//! Run with `cargo run --example auc`.

use xinv::eval::{auc_roc, ScoredSet};

fn main() -> xinv::Result<()> {
    let cases: [(&[f64], &[u8]); 4] = [
        (&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]),
        (&[0.5, 0.5], &[1, 0]),
        (&[0.4, 0.6, 0.4, 0.7], &[1, 1, 0, 0]),
        (&[0.1, 0.2], &[1, 1]),
    ];
    for (scores, labels) in cases {
        let set = ScoredSet::from_u8(scores.to_vec(), labels)?;
        match auc_roc(&set) {
            Ok(a) => println!("{scores:?} {labels:?} -> {a}"),
            Err(e) => println!("{scores:?} {labels:?} -> {e}"),
        }
    }
    Ok(())
}
