//! Writes the synthetic multi-source dataset and summarizes it.
//!
//! Run with `cargo run --release --example synth -- [out_dir] [key=value ...]`.

use std::path::PathBuf;

use xinv::datapipe::synth::generate_items;
use xinv::datapipe::{write_synth, SynthSpec};
use xinv::Error;

fn main() -> xinv::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_data".into()));
    let mut spec = SynthSpec::default();
    for kv in args {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {kv}")))?;
        spec.set(k, v).map_err(Error::Config)?;
    }
    let written = write_synth(&spec, &out)?;
    println!("{spec}");
    for s in 0..spec.sources {
        let items: Vec<_> = generate_items(&spec)?.into_iter().filter(|it| it.source == s).collect();
        let rate = |label: u8| {
            let group: Vec<_> = items.iter().filter(|it| it.label == label).collect();
            group.iter().filter(|it| it.scene.watermark).count() as f64 / group.len() as f64
        };
        println!("{}: watermark rate {:.2} on positives, {:.2} on negatives", SynthSpec::source_name(s), rate(1), rate(0));
    }
    println!("wrote {} and {}", written.train_manifest.display(), written.test_manifest.display());
    Ok(())
}
