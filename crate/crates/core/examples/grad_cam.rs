//! Grad-CAM for a baseline and an adversarial model on one positive image
//! carrying both the causal blob and the watermark.
//!
//! Run with `cargo run --release --example grad_cam -- [out_dir] [epochs]`.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xinv::attribution::grad_cam;
use xinv::datapipe::synth::{causal_region, render, watermark_region, Scene};
use xinv::datapipe::{generate, SynthSpec};
use xinv::training::{restrict, train, Mode, TrainConfig};

fn main() -> xinv::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "grad_cam_out".into()));
    let epochs = args.next().map_or(Ok(10), |e| e.parse()).map_err(|e| xinv::Error::Config(format!("epochs: {e}")))?;
    let spec = SynthSpec { n: 400, ..SynthSpec::default() };
    let data = generate(&spec)?;
    let train_set = restrict(&data.train, &[0, 1, 2]);

    let image = render(&spec, Scene { source: 0, severity: 0.6, watermark: true }, &mut ChaCha8Rng::seed_from_u64(1));
    std::fs::create_dir_all(&out).map_err(|e| xinv::Error::io(&out, e))?;
    let blob = causal_region(spec.size);
    let mark = watermark_region(spec.size, spec.corner_of(0));
    for mode in [Mode::Baseline, Mode::GradReversal] {
        let cfg = TrainConfig { mode, epochs, ..TrainConfig::default() };
        let (params, _) = train(&cfg, &train_set, 3)?;
        let hm = grad_cam(&params, &image.to_tensor())?;
        let path = out.join(format!("{}.pgm", mode.name()));
        hm.write_all(&path, &image)?;
        println!(
            "{:<14} heat in blob {:.2}, in watermark {:.2}, peak at {:?} -> {}",
            mode.name(),
            hm.mass_fraction(blob),
            hm.mass_fraction(mark),
            hm.argmax(),
            path.display()
        );
    }
    Ok(())
}
