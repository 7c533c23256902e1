//! Balanced resampling over two sources of sizes 4 and 2.
//!
//! Run with `cargo run --example balanced_stream`.

use xinv::datapipe::BalancedStream;

fn main() -> xinv::Result<()> {
    // items 0..4 come from source A, items 4..6 from source B
    let source_of = [0, 0, 0, 0, 1, 1];
    let mut stream = BalancedStream::new(&source_of, 2, 3, 7)?;
    println!("epoch length {} ({} per source)", stream.epoch_len(), stream.per_source());
    for epoch in 0..2 {
        let batches: Vec<Vec<usize>> = stream.next_epoch().collect();
        println!("epoch {epoch}: {batches:?}");
    }
    Ok(())
}
