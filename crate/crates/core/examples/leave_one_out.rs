//! Baseline vs gradient reversal with one source held out, as a report table.
//!
//! Run with `cargo run --release --example leave_one_out -- [seed] [out_dir]`.
//! The default settings take a few minutes on one core.

use xinv::datapipe::{generate, SynthSpec};
use xinv::training::{run_leave_one_out, TrainConfig};

fn main() -> xinv::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XINV_LOG", "info")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(Ok(7), |s| s.parse()).map_err(|e| xinv::Error::Config(format!("seed: {e}")))?;
    let data = generate(&SynthSpec { seed, ..SynthSpec::default() })?;
    let cfg = TrainConfig { seed, held_out_source: Some("src3".into()), ..TrainConfig::default() };
    let mut outcome = run_leave_one_out(&cfg, &data, 1)?;
    print!("{}", outcome.report.table());
    if let Some(dir) = args.next() {
        outcome.write(&dir)?;
        println!("wrote {dir}");
    }
    Ok(())
}
